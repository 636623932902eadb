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
#ifndef TONEBRIDGE_EVAL_REPORT_HPP
#define TONEBRIDGE_EVAL_REPORT_HPP

#include <json.hpp>

#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "tonebridge/error.hpp"

namespace tonebridge {

enum class Metric { fad, kl, ib_rank };

inline std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::fad: return "fad";
    case Metric::kl: return "kl";
    case Metric::ib_rank: return "ib_rank";
  }
  return "fad";
}

/// Accepts "fad", "kl", "ibrank" / "ib_rank".
inline std::optional<Metric> parse_metric(std::string_view s) {
  if (s == "fad") return Metric::fad;
  if (s == "kl") return Metric::kl;
  if (s == "ibrank" || s == "ib_rank" || s == "ib-rank") return Metric::ib_rank;
  return std::nullopt;
}

inline constexpr const char* kKlConvention = "KL(reference || generated), natural log, eps=1e-10 smoothing";
inline constexpr const char* kIbRankFormula = "ib-rank/1: mean over items of (K - rank)/(K - 1), average rank on ties";
inline constexpr const char* kFadConvention = "pooled Gaussians: reference set vs each system's generated set";

struct SystemScores {
  std::optional<double> fad;
  std::optional<double> kl;
  std::optional<double> ib_rank;

  std::optional<double> get(Metric m) const {
    switch (m) {
      case Metric::fad: return fad;
      case Metric::kl: return kl;
      case Metric::ib_rank: return ib_rank;
    }
    return std::nullopt;
  }
};

struct EvalReport {
  std::set<Metric> metrics;
  std::map<std::string, SystemScores> systems;
  std::size_t item_count = 0;
  std::string config_digest;

  nlohmann::json to_json() const {
    nlohmann::json sys = nlohmann::json::object();
    for (const auto& [name, s] : systems) {
      nlohmann::json row = nlohmann::json::object();
      for (auto m : metrics)
        if (auto v = s.get(m)) row[std::string(to_string(m))] = *v;
      sys[name] = row;
    }
    nlohmann::json metric_names = nlohmann::json::array();
    for (auto m : metrics) metric_names.push_back(std::string(to_string(m)));
    nlohmann::json meta = nlohmann::json::object();
    if (metrics.count(Metric::fad)) meta["fad"] = kFadConvention;
    if (metrics.count(Metric::kl)) meta["kl"] = kKlConvention;
    if (metrics.count(Metric::ib_rank)) meta["ib_rank"] = kIbRankFormula;
    return {{"format", "tonebridge-eval/1"},
            {"metrics", metric_names},
            {"systems", sys},
            {"item_count", item_count},
            {"config_digest", config_digest},
            {"conventions", meta}};
  }
};

enum class ReportFormat { json, markdown };

namespace detail {

inline std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace detail

/// JSON is the canonical record. Markdown mirrors the usual results table:
/// Model | FAD↓ | KL↓ | IB Rank↑, with the best value of each column bold.
inline std::string emit_report(const EvalReport& report, ReportFormat format) {
  if (format == ReportFormat::json) return report.to_json().dump(2) + "\n";

  struct Column {
    Metric metric;
    const char* header;
    bool lower_is_better;
  };
  std::vector<Column> columns;
  for (Column c : {Column{Metric::fad, "FAD↓", true}, Column{Metric::kl, "KL↓", true},
                   Column{Metric::ib_rank, "IB Rank↑", false}})
    if (report.metrics.count(c.metric)) columns.push_back(c);

  std::map<Metric, double> best;
  for (const auto& c : columns)
    for (const auto& [_, s] : report.systems)
      if (auto v = s.get(c.metric)) {
        auto it = best.find(c.metric);
        if (it == best.end() || (c.lower_is_better ? *v < it->second : *v > it->second)) best[c.metric] = *v;
      }

  std::string out = "| Model |";
  std::string rule = "|---|";
  for (const auto& c : columns) {
    out += std::string(" ") + c.header + " |";
    rule += "---|";
  }
  out += "\n" + rule + "\n";
  for (const auto& [name, s] : report.systems) {
    out += "| " + name + " |";
    for (const auto& c : columns) {
      auto v = s.get(c.metric);
      std::string cell = v ? detail::fixed3(*v) : "-";
      if (v && *v == best[c.metric]) cell = "**" + cell + "**";
      out += " " + cell + " |";
    }
    out += "\n";
  }
  return out;
}

}  // namespace tonebridge

#endif  // TONEBRIDGE_EVAL_REPORT_HPP
