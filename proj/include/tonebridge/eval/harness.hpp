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
#ifndef TONEBRIDGE_EVAL_HARNESS_HPP
#define TONEBRIDGE_EVAL_HARNESS_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tonebridge/backends.hpp"
#include "tonebridge/captioning.hpp"
#include "tonebridge/eval/gaussian.hpp"
#include "tonebridge/eval/manifest.hpp"
#include "tonebridge/eval/metrics.hpp"
#include "tonebridge/eval/report.hpp"

namespace tonebridge {

struct EvalOptions {
  /// Optional directory with reference.emb, visual.emb and <system>.emb.
  /// Files present there replace live embedder calls for that set.
  std::optional<std::filesystem::path> embeddings_dir;
};

namespace detail {

inline Bytes read_bytes(const std::filesystem::path& p) {
  auto s = read_text_file(p);
  return Bytes(s.begin(), s.end());
}

/// Raw bytes for the visual embedding; a frame directory contributes all of
/// its frames in order.
inline Bytes visual_payload(const ManifestItem& item) {
  if (std::filesystem::is_directory(item.media_path)) {
    DirectoryFrameSource source(item.media_path);
    Bytes all;
    for (std::size_t i = 0; i < source.total_frames(); ++i) {
      auto f = source.read(i);
      all.insert(all.end(), f.image.begin(), f.image.end());
    }
    return all;
  }
  return read_bytes(item.media_path);
}

template <typename Fn>
auto for_item(const ManifestItem& item, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), "item " + item.id + ": " + e.detail(), e.stage());
  }
}

class EmbeddingSets {
 public:
  EmbeddingSets(const EvalManifest& manifest, const EvalOptions& options, const Embedder* embedder)
      : manifest_(manifest), options_(options), embedder_(embedder) {}

  const std::vector<EmbeddingVector>& get(const std::string& set_name) {
    auto it = cache_.find(set_name);
    if (it != cache_.end()) return it->second;
    return cache_[set_name] = load(set_name);
  }

  std::string source_id() const { return embedder_ ? embedder_->id() : "precomputed"; }

 private:
  std::vector<EmbeddingVector> load(const std::string& set_name) {
    if (options_.embeddings_dir) {
      auto file = *options_.embeddings_dir / (set_name + ".emb");
      if (std::filesystem::exists(file)) {
        auto vectors = parse_embedding_file(read_text_file(file));
        if (vectors.size() != manifest_.items.size())
          fail(ErrorCode::invalid_manifest, file.string() + " has " + std::to_string(vectors.size()) +
                                                " vectors for " + std::to_string(manifest_.items.size()) + " items");
        return vectors;
      }
    }
    if (!embedder_) fail(ErrorCode::config_error, "no embedder backend and no precomputed " + set_name + ".emb");
    std::vector<EmbeddingVector> out;
    for (const auto& item : manifest_.items) {
      out.push_back(for_item(item, [&] {
        if (set_name == "visual") {
          auto modality = item.media_type == "video" ? EmbedModality::video : EmbedModality::image;
          return embedder_->embed(modality, visual_payload(item));
        }
        const auto& path = set_name == "reference" ? item.reference_audio_path
                                                   : item.generated_audio_paths.at(set_name);
        return embedder_->embed(EmbedModality::audio, read_bytes(path));
      }));
    }
    return out;
  }

  const EvalManifest& manifest_;
  const EvalOptions& options_;
  const Embedder* embedder_;
  std::map<std::string, std::vector<EmbeddingVector>> cache_;
};

}  // namespace detail

/// Systems are the union over items; every item must name every system.
inline std::vector<std::string> manifest_systems(const EvalManifest& manifest) {
  std::set<std::string> all;
  for (const auto& item : manifest.items)
    for (const auto& [s, _] : item.generated_audio_paths) all.insert(s);
  for (const auto& item : manifest.items)
    for (const auto& s : all)
      if (!item.generated_audio_paths.count(s))
        fail(ErrorCode::invalid_manifest, "item " + item.id + ": missing generated audio for system " + s);
  return {all.begin(), all.end()};
}

inline EvalReport run_eval(const EvalManifest& manifest, const std::set<Metric>& metrics, const BackendSet& backends,
                           const EvalOptions& options = {}) {
  require(!metrics.empty(), "at least one metric must be requested");
  require(!manifest.items.empty(), "manifest has no items");
  auto systems = manifest_systems(manifest);
  for (const auto& s : systems)
    if (s == "reference" || s == "visual")
      fail(ErrorCode::invalid_manifest, "system name '" + s + "' is reserved");

  EvalReport report;
  report.metrics = metrics;
  report.item_count = manifest.items.size();
  for (const auto& s : systems) report.systems[s];

  detail::EmbeddingSets embeddings(manifest, options, backends.embedder.get());

  if (metrics.count(Metric::fad)) {
    auto reference = fit_gaussian(embeddings.get("reference"));
    for (const auto& s : systems) report.systems[s].fad = frechet_distance(reference, fit_gaussian(embeddings.get(s)));
  }

  if (metrics.count(Metric::kl)) {
    if (!backends.classifier) fail(ErrorCode::config_error, "KL requires a classifier backend");
    std::map<std::string, double> sums;
    for (const auto& item : manifest.items) {
      detail::for_item(item, [&] {
        auto ref = backends.classifier->classify(detail::read_bytes(item.reference_audio_path));
        for (const auto& s : systems)
          sums[s] += kl_divergence(ref, backends.classifier->classify(detail::read_bytes(item.generated_audio_paths.at(s))));
      });
    }
    for (const auto& s : systems) report.systems[s].kl = sums[s] / static_cast<double>(manifest.items.size());
  }

  if (metrics.count(Metric::ib_rank)) {
    const auto& visual = embeddings.get("visual");
    std::vector<ItemSimilarities> sims(manifest.items.size());
    for (const auto& s : systems) {
      const auto& generated = embeddings.get(s);
      for (std::size_t i = 0; i < manifest.items.size(); ++i)
        sims[i][s] = detail::for_item(manifest.items[i], [&] { return cosine_similarity(visual[i], generated[i]); });
    }
    for (const auto& [s, v] : ib_rank(sims, systems)) report.systems[s].ib_rank = v;
  }

  json config = {{"manifest", manifest.digest},
                 {"embeddings", embeddings.source_id()},
                 {"classifier", backends.classifier ? backends.classifier->id() : ""},
                 {"report", report.to_json().at("conventions")}};
  if (options.embeddings_dir) config["embeddings_dir"] = true;
  report.config_digest = sha256_hex(canonical_dump(config));
  return report;
}

}  // namespace tonebridge

#endif  // TONEBRIDGE_EVAL_HARNESS_HPP
