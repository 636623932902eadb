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
#ifndef TONEBRIDGE_EVAL_MANIFEST_HPP
#define TONEBRIDGE_EVAL_MANIFEST_HPP

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tonebridge/digest.hpp"
#include "tonebridge/error.hpp"
#include "tonebridge/eval/types.hpp"

namespace tonebridge {

struct ManifestItem {
  std::string id;
  std::filesystem::path media_path;
  std::string media_type;
  std::filesystem::path reference_audio_path;
  std::map<std::string, std::filesystem::path> generated_audio_paths;
};

struct EvalManifest {
  std::vector<ManifestItem> items;
  /// Hex SHA-256 of the manifest bytes.
  std::string digest;
};

/// JSONL, one item per line; blank lines are skipped. Relative paths resolve
/// against the manifest's directory. All problems are reported together.
inline EvalManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir) {
  namespace fs = std::filesystem;
  EvalManifest manifest;
  manifest.digest = sha256_hex(text);
  std::vector<std::string> problems;
  std::set<std::string> seen;
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };

  std::istringstream in{std::string(text)};
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto where = "line " + std::to_string(lineno);
    try {
      auto j = nlohmann::json::parse(line);
      ManifestItem item;
      item.id = j.at("id").get<std::string>();
      where += " (id " + item.id + ")";
      item.media_path = resolve(j.at("media_path").get<std::string>());
      item.media_type = j.at("media_type").get<std::string>();
      item.reference_audio_path = resolve(j.at("reference_audio_path").get<std::string>());
      for (const auto& [system, path] : j.at("generated_audio_paths").items())
        item.generated_audio_paths[system] = resolve(path.get<std::string>());

      std::vector<std::string> errs;
      if (item.id.empty()) errs.push_back("empty id");
      if (!seen.insert(item.id).second) errs.push_back("duplicate id '" + item.id + "'");
      if (item.media_type != "image" && item.media_type != "video")
        errs.push_back("media_type must be image or video");
      if (item.generated_audio_paths.empty()) errs.push_back("no generated_audio_paths");
      auto check = [&](const fs::path& p, const std::string& what) {
        if (!fs::exists(p)) errs.push_back(what + " does not exist: " + p.string());
      };
      check(item.media_path, "media_path");
      check(item.reference_audio_path, "reference_audio_path");
      for (const auto& [system, p] : item.generated_audio_paths) check(p, "generated audio for " + system);
      for (const auto& e : errs) problems.push_back(where + ": " + e);
      manifest.items.push_back(std::move(item));
    } catch (const nlohmann::json::exception& e) {
      problems.push_back(where + ": " + e.what());
    }
  }
  if (manifest.items.empty() && problems.empty()) problems.push_back("manifest has no items");
  if (!problems.empty()) {
    std::string msg = "invalid manifest";
    for (const auto& p : problems) msg += "\n  " + p;
    fail(ErrorCode::invalid_manifest, msg);
  }
  return manifest;
}

inline EvalManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::invalid_manifest, "cannot read manifest " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path());
}

// ---------------------------------------------------------------------------
// Precomputed embeddings: "dim=<d>" then one whitespace-separated vector per
// line, aligned with manifest order.

inline std::vector<EmbeddingVector> parse_embedding_file(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line.rfind("dim=", 0) != 0)
    fail(ErrorCode::invalid_manifest, "embedding file must start with dim=<d>");
  std::size_t dim = 0;
  try {
    std::size_t used = 0;
    dim = std::stoul(line.substr(4), &used);
    if (used != line.size() - 4 && line.find_first_not_of(" \r", 4 + used) != std::string::npos)
      throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    fail(ErrorCode::invalid_manifest, "bad embedding header '" + line + "'");
  }
  if (dim == 0) fail(ErrorCode::invalid_manifest, "embedding dim must be positive");

  std::vector<EmbeddingVector> out;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream row(line);
    std::vector<double> v;
    std::string tok;
    while (row >> tok) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        fail(ErrorCode::invalid_manifest, "embedding line " + std::to_string(lineno) + ": bad number '" + tok + "'");
      }
    }
    if (v.size() != dim)
      fail(ErrorCode::invalid_manifest, "embedding line " + std::to_string(lineno) + " has " +
                                            std::to_string(v.size()) + " values, expected " + std::to_string(dim));
    for (double x : v)
      if (!std::isfinite(x))
        fail(ErrorCode::invalid_manifest, "embedding line " + std::to_string(lineno) + " has a non-finite value");
    out.emplace_back(std::move(v));
  }
  return out;
}

inline std::string format_embedding_file(const std::vector<EmbeddingVector>& vectors) {
  require(!vectors.empty(), "no vectors to write");
  std::ostringstream out;
  out.precision(17);
  out << "dim=" << vectors.front().dim() << "\n";
  for (const auto& v : vectors) {
    require(v.dim() == vectors.front().dim(), "vectors must share one dimension");
    for (std::size_t i = 0; i < v.dim(); ++i) out << (i ? " " : "") << v.values[i];
    out << "\n";
  }
  return out.str();
}

}  // namespace tonebridge

#endif  // TONEBRIDGE_EVAL_MANIFEST_HPP
