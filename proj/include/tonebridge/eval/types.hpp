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
#ifndef TONEBRIDGE_EVAL_TYPES_HPP
#define TONEBRIDGE_EVAL_TYPES_HPP

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "tonebridge/error.hpp"

namespace tonebridge {

struct EmbeddingVector {
  std::vector<double> values;

  EmbeddingVector() = default;
  explicit EmbeddingVector(std::vector<double> v) : values(std::move(v)) {
    require(!values.empty(), "embedding must have positive dimension");
    for (double x : values) require(std::isfinite(x), "embedding values must be finite");
  }

  std::size_t dim() const { return values.size(); }
  bool operator==(const EmbeddingVector&) const = default;
};

inline constexpr double kDistributionTolerance = 1e-6;

struct LabelDistribution {
  std::vector<double> probs;
  std::vector<std::string> labels;

  bool operator==(const LabelDistribution&) const = default;
};

/// Empty string when valid, otherwise the reason.
inline std::string distribution_problem(const LabelDistribution& d) {
  if (d.probs.empty()) return "distribution is empty";
  if (d.probs.size() != d.labels.size())
    return "labels/distribution length mismatch (" + std::to_string(d.labels.size()) + " vs " +
           std::to_string(d.probs.size()) + ")";
  for (double p : d.probs)
    if (!std::isfinite(p) || p < 0.0) return "distribution has a negative or non-finite entry";
  double sum = std::accumulate(d.probs.begin(), d.probs.end(), 0.0);
  if (std::abs(sum - 1.0) > kDistributionTolerance)
    return "distribution sums to " + std::to_string(sum) + ", not 1";
  return {};
}

}  // namespace tonebridge

#endif  // TONEBRIDGE_EVAL_TYPES_HPP
