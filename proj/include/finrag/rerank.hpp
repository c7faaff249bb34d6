#pragma once

#include <algorithm>
#include <array>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "finrag/error.hpp"
#include "finrag/evalkit.hpp"
#include "finrag/providers.hpp"
#include "finrag/text.hpp"
#include "finrag/vector_index.hpp"

namespace finrag {

struct RerankConfig {
  std::size_t k_initial = 10;
  std::size_t k_final = 5;

  void validate() const {
    if (k_final < 1 || k_final > k_initial) {
      fail(ErrorCode::ConfigError, "rerank config needs 1 <= k_final <= k_initial, got " + label());
    }
  }

  std::string label() const { return "(" + std::to_string(k_initial) + ", " + std::to_string(k_final) + ")"; }

  friend bool operator==(const RerankConfig&, const RerankConfig&) = default;
};

/// Parses "kI,kF".
inline RerankConfig parse_rerank_config(std::string_view s) {
  const auto comma = s.find(',');
  RerankConfig cfg;
  try {
    if (comma == std::string_view::npos) throw std::invalid_argument("missing comma");
    std::size_t used = 0;
    const std::string a(text::trim(s.substr(0, comma)));
    const std::string b(text::trim(s.substr(comma + 1)));
    cfg.k_initial = std::stoul(a, &used);
    if (used != a.size()) throw std::invalid_argument(a);
    cfg.k_final = std::stoul(b, &used);
    if (used != b.size()) throw std::invalid_argument(b);
  } catch (const std::exception&) {
    fail(ErrorCode::ConfigError, "rerank config must look like kI,kF, got '" + std::string(s) + "'");
  }
  cfg.validate();
  return cfg;
}

/// The ten settings of the reference parameter grid, in its row order.
inline std::vector<RerankConfig> default_rerank_grid() {
  return {{100, 20}, {100, 30}, {75, 25}, {75, 15}, {50, 10}, {10, 5}, {50, 5}, {20, 10}, {20, 5}, {10, 10}};
}

struct RerankResult {
  std::vector<ScoredHit> hits;
  double latency_s = 0.0;
  int scorer_calls = 0;
  bool fell_back = false;
  std::string error;
};

/// Scores every candidate and keeps the best k_final: score descending, then
/// prior rank, then chunk_id. Scores all pairs in one call when the backend
/// batches, otherwise one call per candidate.
inline RerankResult rerank(const std::vector<ScoredHit>& candidates, std::string_view question,
                           const RerankConfig& cfg, const RerankClient& scorer) {
  cfg.validate();
  if (candidates.size() > cfg.k_initial) {
    fail(ErrorCode::PreconditionViolated, std::to_string(candidates.size()) + " candidates exceed k_initial " +
                                              std::to_string(cfg.k_initial));
  }
  RerankResult out;
  if (candidates.empty()) return out;

  std::vector<Passage> passages;
  passages.reserve(candidates.size());
  for (const auto& c : candidates) passages.push_back({c.text, c.chunk.doc_id, c.chunk.page_start, c.chunk.page_end});

  std::vector<double> scores;
  try {
    if (scorer.supports_batch()) {
      auto r = scorer.score_pairs(question, passages);
      scores = std::move(r.scores);
      out.latency_s += r.latency_s;
      ++out.scorer_calls;
    } else {
      for (const auto& p : passages) {
        auto r = scorer.score_pairs(question, std::span<const Passage>(&p, 1));
        scores.push_back(r.scores.front());
        out.latency_s += r.latency_s;
        ++out.scorer_calls;
      }
    }
  } catch (const Error& e) {
    fail(ErrorCode::StageError, std::string("rerank scorer failed: ") + e.what());
  }

  std::vector<std::size_t> order(candidates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (candidates[a].rank != candidates[b].rank) return candidates[a].rank < candidates[b].rank;
    return candidates[a].chunk.chunk_id < candidates[b].chunk.chunk_id;
  });
  const std::size_t keep = std::min(cfg.k_final, candidates.size());
  for (std::size_t i = 0; i < keep; ++i) {
    ScoredHit h = candidates[order[i]];
    h.score = scores[order[i]];
    h.stage = Stage::Reranked;
    h.rank = i + 1;
    out.hits.push_back(std::move(h));
  }
  return out;
}

/// As `rerank`, but a scorer failure degrades to the first k_final
/// candidates in their incoming order and flags the result.
inline RerankResult rerank_or_fallback(const std::vector<ScoredHit>& candidates, std::string_view question,
                                       const RerankConfig& cfg, const RerankClient& scorer) {
  try {
    return rerank(candidates, question, cfg, scorer);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::StageError) throw;
    RerankResult out;
    out.fell_back = true;
    out.error = e.what();
    std::vector<ScoredHit> sorted = candidates;
    std::sort(sorted.begin(), sorted.end(), [](const ScoredHit& a, const ScoredHit& b) { return a.rank < b.rank; });
    for (std::size_t i = 0; i < sorted.size() && i < cfg.k_final; ++i) out.hits.push_back(sorted[i]);
    return out;
  }
}

// ---------------------------------------------------------------------------
// Parameter sweep
// ---------------------------------------------------------------------------

struct Retrieval {
  std::vector<ScoredHit> hits;
  double latency_s = 0.0;
};

/// What a sweep needs from a retrieval pipeline: first-stage candidates to a
/// given depth, and the gold chunk ids used for Recall@5.
struct SweepPipeline {
  std::function<Retrieval(const BenchmarkQuestion&, std::size_t depth)> retrieve;
  std::function<std::set<std::string>(const BenchmarkQuestion&)> gold_chunks;
};

struct SweepRow {
  std::string label;
  std::optional<RerankConfig> config;  // empty for the baseline row
  double mrr_at_5 = 0.0;
  double recall_at_5 = 0.0;
  double avg_latency_s = 0.0;
  std::size_t questions = 0;
  std::size_t failed_questions = 0;
  std::size_t fallbacks = 0;
  bool failed = false;
  std::string error;
};

struct SweepTable {
  std::vector<SweepRow> rows;
};

inline constexpr std::string_view kBaselineLabel = "Baseline (No Reranking)";
inline constexpr std::array<std::string_view, 4> kSweepColumns = {"(k_initial, k_final)", "MRR@5", "Recall@5",
                                                                   "Avg Latency (s)"};

namespace detail {

// Baseline: the first five first-stage hits. Config rows: k_initial
// candidates reranked to k_final, scored on the top five. Latency counts
// retrieval plus reranking, never answer generation.
inline SweepRow sweep_row(std::optional<RerankConfig> cfg, const std::vector<BenchmarkQuestion>& bench,
                          const SweepPipeline& pipeline, const RerankClient* scorer) {
  SweepRow row;
  row.config = cfg;
  row.label = cfg ? cfg->label() : std::string(kBaselineLabel);
  std::vector<std::optional<std::size_t>> ranks;
  double recall_sum = 0.0, latency_sum = 0.0;
  try {
    if (cfg) cfg->validate();
    for (const auto& q : bench) {
      try {
        const std::size_t depth = cfg ? cfg->k_initial : 5;
        auto first = pipeline.retrieve(q, depth);
        double latency = first.latency_s;
        std::vector<ScoredHit> hits = std::move(first.hits);
        if (hits.size() > depth) hits.resize(depth);
        if (cfg) {
          auto r = rerank_or_fallback(hits, q.question, *cfg, *scorer);
          latency += r.latency_s;
          if (r.fell_back) ++row.fallbacks;
          hits = std::move(r.hits);
        }
        const double recall = recall_at_k(chunk_ids(hits), pipeline.gold_chunks(q), 5);
        ranks.push_back(first_relevant_rank(hits, q, 5));
        recall_sum += recall;
        latency_sum += latency;
      } catch (const Error&) {
        ++row.failed_questions;
      }
    }
    row.questions = ranks.size();
    if (ranks.empty()) fail(ErrorCode::StageError, "every question failed");
    row.mrr_at_5 = mrr(ranks);
    row.recall_at_5 = recall_sum / static_cast<double>(ranks.size());
    row.avg_latency_s = latency_sum / static_cast<double>(ranks.size());
    row.failed = row.failed_questions > 0;
    if (row.failed) row.error = std::to_string(row.failed_questions) + " question(s) failed";
  } catch (const Error& e) {
    row.failed = true;
    row.error = e.what();
  }
  return row;
}

}  // namespace detail

/// One baseline row followed by one row per config. Failed rows are
/// flagged and the sweep continues.
inline SweepTable sweep(const std::vector<RerankConfig>& configs, const std::vector<BenchmarkQuestion>& bench,
                        const SweepPipeline& pipeline, const RerankClient& scorer) {
  if (configs.empty()) fail(ErrorCode::ConfigError, "sweep needs at least one rerank config");
  if (bench.empty()) fail(ErrorCode::EmptyBenchmark, "sweep needs at least one benchmark question");
  SweepTable table;
  table.rows.push_back(detail::sweep_row(std::nullopt, bench, pipeline, nullptr));
  for (const auto& cfg : configs) table.rows.push_back(detail::sweep_row(cfg, bench, pipeline, &scorer));
  return table;
}

inline nlohmann::ordered_json to_json(const SweepTable& t) {
  nlohmann::ordered_json j;
  j["columns"] = kSweepColumns;
  auto& rows = j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : t.rows) {
    nlohmann::ordered_json row;
    row[std::string(kSweepColumns[0])] = r.label;
    row[std::string(kSweepColumns[1])] = r.mrr_at_5;
    row[std::string(kSweepColumns[2])] = r.recall_at_5;
    row[std::string(kSweepColumns[3])] = r.avg_latency_s;
    row["questions"] = r.questions;
    row["failed_questions"] = r.failed_questions;
    row["fallbacks"] = r.fallbacks;
    row["failed"] = r.failed;
    if (!r.error.empty()) row["error"] = r.error;
    rows.push_back(row);
  }
  j["notes"] = {"Avg Latency (s) covers first-stage retrieval plus reranking and excludes answer generation."};
  return j;
}

/// Fixed-width text table with the four sweep columns.
inline std::string render_table(const SweepTable& t) {
  std::vector<std::array<std::string, 4>> cells;
  cells.push_back({std::string(kSweepColumns[0]), std::string(kSweepColumns[1]), std::string(kSweepColumns[2]),
                   std::string(kSweepColumns[3])});
  for (const auto& r : t.rows) {
    cells.push_back({r.label + (r.failed ? " *" : ""), text::format_double(r.mrr_at_5, 3),
                     text::format_double(r.recall_at_5, 2), text::format_double(r.avg_latency_s, 2)});
  }
  std::array<std::size_t, 4> width{};
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < 4; ++c) width[c] = std::max(width[c], row[c].size());
  }
  auto line = [&](const std::array<std::string, 4>& row) {
    std::string s;
    for (std::size_t c = 0; c < 4; ++c) {
      if (c) s += " | ";
      s += row[c] + std::string(width[c] - row[c].size(), ' ');
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s + "\n";
  };
  std::string out = line(cells[0]);
  std::string rule;
  for (std::size_t c = 0; c < 4; ++c) rule += (c ? "-+-" : "") + std::string(width[c], '-');
  out += rule + "\n";
  for (std::size_t i = 1; i < cells.size(); ++i) out += line(cells[i]);
  bool any_failed = false;
  for (const auto& r : t.rows) any_failed = any_failed || r.failed;
  if (any_failed) out += "* row had failures; see JSON for details\n";
  out += "Latency covers retrieval and reranking only (no answer generation).\n";
  return out;
}

}  // namespace finrag
