/**
 * Copyright (C) The tonebridge authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#ifndef TONEBRIDGE_EVAL_METRICS_HPP
#define TONEBRIDGE_EVAL_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "tonebridge/error.hpp"
#include "tonebridge/eval/types.hpp"

namespace tonebridge {

inline constexpr double kKlSmoothing = 1e-10;

/// KL(p ‖ q) in nats after adding kKlSmoothing to every entry and
/// renormalizing. p is the reference, q the generated audio.
inline double kl_divergence(const LabelDistribution& p, const LabelDistribution& q) {
  if (p.labels != q.labels) fail(ErrorCode::label_mismatch, "label sets differ in content or order");
  if (p.probs.size() != q.probs.size() || p.probs.size() != p.labels.size())
    fail(ErrorCode::label_mismatch, "distribution length does not match labels");
  if (p.probs.empty()) fail(ErrorCode::label_mismatch, "empty distributions");
  for (const auto* d : {&p, &q})
    if (auto problem = distribution_problem(*d); !problem.empty()) fail(ErrorCode::invalid_argument, problem);

  auto smooth = [](const std::vector<double>& v) {
    std::vector<double> s(v.size());
    std::transform(v.begin(), v.end(), s.begin(), [](double x) { return x + kKlSmoothing; });
    double total = std::accumulate(s.begin(), s.end(), 0.0);
    for (double& x : s) x /= total;
    return s;
  };
  auto ps = smooth(p.probs);
  auto qs = smooth(q.probs);
  double kl = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) kl += ps[i] * std::log(ps[i] / qs[i]);
  return std::max(0.0, kl);
}

inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim())
    fail(ErrorCode::dimension_mismatch, "vector dims differ: " + std::to_string(a.dim()) + " vs " +
                                            std::to_string(b.dim()));
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na == 0.0 || nb == 0.0) fail(ErrorCode::zero_vector, "cosine similarity of a zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

/// Similarity of each system's output to the visual input, for one item.
using ItemSimilarities = std::map<std::string, double>;

/// 1-based ranks by descending value; ties share the mean of their ranks.
inline std::vector<double> average_ranks_descending(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    double shared = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = shared;
    i = j + 1;
  }
  return ranks;
}

/// Per item, score = (K − rank)/(K − 1); result is the mean over items.
inline std::map<std::string, double> ib_rank(const std::vector<ItemSimilarities>& items,
                                             const std::vector<std::string>& systems) {
  const std::size_t k = systems.size();
  require(k >= 2, "IB Rank needs at least two systems");
  require(!items.empty(), "IB Rank needs at least one item");
  std::map<std::string, double> totals;
  for (const auto& s : systems) totals[s] = 0.0;
  require(totals.size() == k, "system names must be unique");

  for (std::size_t item = 0; item < items.size(); ++item) {
    std::vector<double> sims;
    for (const auto& s : systems) {
      auto it = items[item].find(s);
      if (it == items[item].end())
        fail(ErrorCode::missing_similarity, "item " + std::to_string(item) + " has no similarity for " + s);
      sims.push_back(it->second);
    }
    auto ranks = average_ranks_descending(sims);
    for (std::size_t i = 0; i < k; ++i)
      totals[systems[i]] += (static_cast<double>(k) - ranks[i]) / static_cast<double>(k - 1);
  }
  for (auto& [_, v] : totals) v /= static_cast<double>(items.size());
  return totals;
}

}  // namespace tonebridge

#endif  // TONEBRIDGE_EVAL_METRICS_HPP
