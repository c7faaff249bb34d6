#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "finrag/corpus.hpp"
#include "finrag/error.hpp"
#include "finrag/prompts.hpp"
#include "finrag/providers.hpp"
#include "finrag/text.hpp"
#include "finrag/vector_index.hpp"

namespace finrag {

// ---------------------------------------------------------------------------
// Benchmark questions
// ---------------------------------------------------------------------------

enum class Category { MultiHop, SingleHop, Summary };

constexpr std::string_view to_string(Category c) noexcept {
  switch (c) {
    case Category::MultiHop: return "multi-hop";
    case Category::SingleHop: return "single-hop";
    case Category::Summary: return "summary";
  }
  return "?";
}

inline std::optional<Category> parse_category(std::string_view s) noexcept {
  if (s == "multi-hop") return Category::MultiHop;
  if (s == "single-hop") return Category::SingleHop;
  if (s == "summary") return Category::Summary;
  return std::nullopt;
}

struct BenchmarkQuestion {
  std::string id;
  std::string question;
  Category category = Category::SingleHop;
  std::string doc_id;
  std::set<int> gold_pages;
  std::string gold_answer;
};

inline nlohmann::ordered_json to_json(const BenchmarkQuestion& q) {
  return {{"id", q.id},
          {"question", q.question},
          {"category", to_string(q.category)},
          {"doc_id", q.doc_id},
          {"gold_pages", q.gold_pages},
          {"gold_answer", q.gold_answer}};
}

inline BenchmarkQuestion question_from_json(const nlohmann::json& j) {
  static const std::set<std::string> kKnown = {"id", "question", "category", "doc_id", "gold_pages", "gold_answer"};
  if (!j.is_object()) fail(ErrorCode::MalformedBenchmark, "question must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!kKnown.count(key)) fail(ErrorCode::MalformedBenchmark, "unknown question field '" + key + "'");
  }
  BenchmarkQuestion q;
  try {
    q.id = j.at("id").get<std::string>();
    q.question = j.at("question").get<std::string>();
    const auto cat = j.at("category").get<std::string>();
    auto parsed = parse_category(cat);
    if (!parsed) fail(ErrorCode::MalformedBenchmark, "unknown category '" + cat + "'");
    q.category = *parsed;
    q.doc_id = j.at("doc_id").get<std::string>();
    for (const auto& p : j.at("gold_pages")) {
      const int page = p.get<int>();
      if (page < 1) fail(ErrorCode::MalformedBenchmark, "gold page numbers are 1-based");
      q.gold_pages.insert(page);
    }
    q.gold_answer = j.value("gold_answer", std::string());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedBenchmark, e.what());
  }
  if (q.gold_pages.empty()) fail(ErrorCode::MalformedBenchmark, "question " + q.id + " has no gold pages");
  return q;
}

/// JSON Lines, one question per line; blank lines are skipped.
inline std::vector<BenchmarkQuestion> parse_benchmark(std::string_view jsonl) {
  std::vector<BenchmarkQuestion> out;
  std::set<std::string> ids;
  std::size_t line_no = 0;
  for (auto line : text::split_lines(jsonl)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      auto q = question_from_json(nlohmann::json::parse(line));
      if (!ids.insert(q.id).second) fail(ErrorCode::MalformedBenchmark, "duplicate question id " + q.id);
      out.push_back(std::move(q));
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::MalformedBenchmark, "line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      fail(ErrorCode::MalformedBenchmark, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<BenchmarkQuestion> load_benchmark(const std::filesystem::path& path) {
  return parse_benchmark(read_file(path));
}

// ---------------------------------------------------------------------------
// Retrieval metrics
// ---------------------------------------------------------------------------

/// Closed-interval intersection of [page_start, page_end] with the gold pages.
inline bool relevance(int page_start, int page_end, const std::set<int>& gold_pages) {
  auto it = gold_pages.lower_bound(page_start);
  return it != gold_pages.end() && *it <= page_end;
}

inline bool relevance(const ChunkRef& chunk, const BenchmarkQuestion& q) {
  return chunk.doc_id == q.doc_id &&
         relevance(static_cast<int>(chunk.page_start), static_cast<int>(chunk.page_end), q.gold_pages);
}

/// 1-based rank of the first relevant hit within `depth`, if any.
inline std::optional<std::size_t> first_relevant_rank(const std::vector<ScoredHit>& hits, const BenchmarkQuestion& q,
                                                      std::size_t depth = 5) {
  for (std::size_t i = 0; i < hits.size() && i < depth; ++i) {
    if (relevance(hits[i].chunk, q)) return i + 1;
  }
  return std::nullopt;
}

/// Mean of 1/rank, with absent ranks contributing 0.
inline double mrr(const std::vector<std::optional<std::size_t>>& ranks) {
  if (ranks.empty()) fail(ErrorCode::EmptyQuerySet, "mrr needs at least one query");
  double total = 0.0;
  for (const auto& r : ranks) {
    if (!r) continue;
    require(*r >= 1, ErrorCode::PreconditionViolated, "ranks are 1-based");
    total += 1.0 / static_cast<double>(*r);
  }
  return total / static_cast<double>(ranks.size());
}

/// |gold ∩ retrieved[0..k)| / |gold|.
inline double recall_at_k(const std::vector<std::string>& retrieved, const std::set<std::string>& gold,
                          std::size_t k = 5) {
  require(k >= 1, ErrorCode::PreconditionViolated, "k must be at least 1");
  if (gold.empty()) fail(ErrorCode::EmptyGoldSet, "recall needs a non-empty gold set");
  std::set<std::string> top;
  for (std::size_t i = 0; i < retrieved.size() && i < k; ++i) top.insert(retrieved[i]);
  std::size_t hit = 0;
  for (const auto& g : gold) hit += top.count(g);
  return static_cast<double>(hit) / static_cast<double>(gold.size());
}

/// Gold chunk ids of a question: chunks of its document whose page span
/// meets a gold page.
inline std::set<std::string> gold_chunk_ids(const VectorIndex& index, const BenchmarkQuestion& q) {
  std::set<std::string> out;
  for (const auto& c : index.chunks()) {
    if (relevance(c.chunk.ref(), q)) out.insert(c.chunk.chunk_id);
  }
  return out;
}

inline std::vector<std::string> chunk_ids(const std::vector<ScoredHit>& hits) {
  std::vector<std::string> out;
  out.reserve(hits.size());
  for (const auto& h : hits) out.push_back(h.chunk.chunk_id);
  return out;
}

// ---------------------------------------------------------------------------
// Latency
// ---------------------------------------------------------------------------

struct LatencyStats {
  std::size_t count = 0;
  double mean = 0.0;
  double p50 = 0.0;
  double p95 = 0.0;
};

/// Percentile by linear interpolation between closest ranks.
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline LatencyStats latency_stats(const std::vector<double>& durations) {
  LatencyStats s;
  s.count = durations.size();
  if (durations.empty()) return s;
  double sum = 0;
  for (double d : durations) sum += d;
  s.mean = sum / static_cast<double>(durations.size());
  s.p50 = percentile(durations, 0.50);
  s.p95 = percentile(durations, 0.95);
  return s;
}

inline nlohmann::ordered_json to_json(const LatencyStats& s) {
  return {{"count", s.count}, {"mean_s", s.mean}, {"p50_s", s.p50}, {"p95_s", s.p95}};
}

// ---------------------------------------------------------------------------
// Cost
// ---------------------------------------------------------------------------

struct CostLine {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  double cost = 0.0;
};

struct CostReport {
  // phase -> provider -> totals
  std::map<std::string, std::map<std::string, CostLine>> lines;

  double phase_total(Phase p) const {
    auto it = lines.find(std::string(to_string(p)));
    if (it == lines.end()) return 0.0;
    double t = 0;
    for (const auto& [_, l] : it->second) t += l.cost;
    return t;
  }
  double total() const { return phase_total(Phase::Preprocessing) + phase_total(Phase::Runtime); }
};

/// Σ input·p_in + output·p_out per (phase, provider). Tokens are summed
/// first so the result does not depend on transcript order.
inline CostReport cost(const std::vector<TranscriptEntry>& transcripts, const PriceTable& prices) {
  CostReport r;
  for (const auto& e : transcripts) {
    auto& line = r.lines[std::string(to_string(e.phase))][e.provider_id];
    line.input_tokens += e.input_tokens;
    line.output_tokens += e.output_tokens;
  }
  for (auto& [_, providers] : r.lines) {
    for (auto& [id, line] : providers) {
      const TokenPrice* p = prices.find(id);
      if (!p) fail(ErrorCode::MissingPrice, "no price entry for provider '" + id + "'");
      line.cost = static_cast<double>(line.input_tokens) * p->input_per_token +
                  static_cast<double>(line.output_tokens) * p->output_per_token;
    }
  }
  return r;
}

inline nlohmann::ordered_json to_json(const CostReport& r, std::string_view currency = "USD") {
  nlohmann::ordered_json j;
  j["currency"] = currency;
  for (Phase ph : {Phase::Preprocessing, Phase::Runtime}) {
    const std::string name(to_string(ph));
    nlohmann::ordered_json phase;
    phase["total"] = r.phase_total(ph);
    auto& providers = phase["providers"] = nlohmann::ordered_json::object();
    if (auto it = r.lines.find(name); it != r.lines.end()) {
      for (const auto& [id, l] : it->second) {
        providers[id] = {{"input_tokens", l.input_tokens}, {"output_tokens", l.output_tokens}, {"cost", l.cost}};
      }
    }
    j[name] = phase;
  }
  j["total"] = r.total();
  return j;
}

// ---------------------------------------------------------------------------
// Pairwise judge
// ---------------------------------------------------------------------------

enum class Preference { A, B, Tie };

constexpr std::string_view to_string(Preference p) noexcept {
  return p == Preference::A ? "A" : (p == Preference::B ? "B" : "tie");
}

inline std::optional<Preference> parse_preference(std::string_view s) {
  const auto l = text::to_lower(text::trim(s));
  if (l == "a") return Preference::A;
  if (l == "b") return Preference::B;
  if (l == "tie") return Preference::Tie;
  return std::nullopt;
}

inline constexpr std::array<std::string_view, 6> kCriteria = {"accuracy",    "completeness", "clarity",
                                                              "conciseness", "relevance",    "style"};

struct JudgeVerdict {
  std::map<std::string, Preference> criteria;  // always the six criteria
  Preference overall = Preference::Tie;
  bool order_swapped = false;
  bool parse_failed = false;
  std::vector<std::string> raw_replies;
};

inline JudgeVerdict tie_verdict() {
  JudgeVerdict v;
  for (auto c : kCriteria) v.criteria[std::string(c)] = Preference::Tie;
  return v;
}

inline std::optional<JudgeVerdict> parse_verdict(std::string_view reply) {
  const auto open = reply.find('{');
  const auto close = reply.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) return std::nullopt;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(reply.substr(open, close - open + 1));
  } catch (const nlohmann::json::parse_error&) {
    return std::nullopt;
  }
  if (!j.is_object()) return std::nullopt;
  JudgeVerdict v;
  auto read = [&](std::string_view key) -> std::optional<Preference> {
    auto it = j.find(std::string(key));
    if (it == j.end() || !it->is_string()) return std::nullopt;
    return parse_preference(it->get<std::string>());
  };
  for (auto c : kCriteria) {
    auto p = read(c);
    if (!p) return std::nullopt;
    v.criteria[std::string(c)] = *p;
  }
  auto overall = read("overall");
  if (!overall) return std::nullopt;
  v.overall = *overall;
  return v;
}

namespace detail {

inline JudgeVerdict judge_once(std::string_view question, const std::string& a, const std::string& b,
                               const LlmClient& judge, bool swapped) {
  std::map<std::string, std::string> slots = {
      {"question", std::string(question)}, {"answer_a", a}, {"answer_b", b}};
  std::vector<std::string> raw;
  auto first = judge.complete(prompts::render(prompts::purpose::kJudge, prompts::kJudge, slots, 256));
  raw.push_back(first.text);
  auto v = parse_verdict(first.text);
  if (!v) {
    auto second = judge.complete(prompts::render(prompts::purpose::kJudgeRepair, prompts::kJudgeRepair, slots, 256));
    raw.push_back(second.text);
    v = parse_verdict(second.text);
  }
  if (!v) {
    v = tie_verdict();
    v->parse_failed = true;
  }
  v->order_swapped = swapped;
  v->raw_replies = std::move(raw);
  return *v;
}

}  // namespace detail

/// Judges (a, b) in presented order and again swapped. Verdicts keep the
/// judge's own A/B labels; use `preference_for_first` to read them from the
/// caller's perspective.
inline std::pair<JudgeVerdict, JudgeVerdict> judge_pair(std::string_view question, const std::string& answer_a,
                                                        const std::string& answer_b, const LlmClient& judge) {
  require(!text::trim(answer_a).empty() && !text::trim(answer_b).empty(), ErrorCode::PreconditionViolated,
          "judge_pair needs two non-empty answers");
  return {detail::judge_once(question, answer_a, answer_b, judge, false),
          detail::judge_once(question, answer_b, answer_a, judge, true)};
}

/// Maps a judge label to the perspective of the caller's first answer.
inline Preference preference_for_first(Preference p, bool order_swapped) {
  if (!order_swapped || p == Preference::Tie) return p;
  return p == Preference::A ? Preference::B : Preference::A;
}

struct WinCounts {
  std::size_t wins = 0;
  std::size_t losses = 0;
  std::size_t ties = 0;

  std::size_t total() const noexcept { return wins + losses + ties; }
  WinCounts mirrored() const noexcept { return {losses, wins, ties}; }
  void add(Preference for_first) {
    if (for_first == Preference::A) {
      ++wins;
    } else if (for_first == Preference::B) {
      ++losses;
    } else {
      ++ties;
    }
  }
};

struct WinRate {
  double raw = 0.0;        // wins / total
  double tie_split = 0.0;  // (wins + ties / 2) / total
  double tie_rate = 0.0;
};

inline WinRate win_rate(const WinCounts& c) {
  if (c.total() == 0) fail(ErrorCode::EmptyVerdictSet, "win_rate needs at least one comparison");
  const double n = static_cast<double>(c.total());
  return {static_cast<double>(c.wins) / n, (static_cast<double>(c.wins) + 0.5 * static_cast<double>(c.ties)) / n,
          static_cast<double>(c.ties) / n};
}

/// Overall and per-criterion counts for the first system over a set of
/// verdicts (both orders of every pair).
struct JudgeTally {
  WinCounts overall;
  std::map<std::string, WinCounts> criteria;
  std::size_t parse_failures = 0;

  void add(const JudgeVerdict& v) {
    overall.add(preference_for_first(v.overall, v.order_swapped));
    for (const auto& [c, p] : v.criteria) criteria[c].add(preference_for_first(p, v.order_swapped));
    if (v.parse_failed) ++parse_failures;
  }
};

inline nlohmann::ordered_json to_json(const JudgeVerdict& v) {
  nlohmann::ordered_json j;
  for (auto c : kCriteria) j[std::string(c)] = to_string(v.criteria.at(std::string(c)));
  j["overall"] = to_string(v.overall);
  j["order_swapped"] = v.order_swapped;
  j["parse_failed"] = v.parse_failed;
  j["raw_replies"] = v.raw_replies;
  return j;
}

inline nlohmann::ordered_json to_json(const WinCounts& c) {
  nlohmann::ordered_json j = {{"wins", c.wins}, {"losses", c.losses}, {"ties", c.ties}};
  if (c.total() > 0) {
    const auto r = win_rate(c);
    j["win_rate"] = r.tie_split;
    j["raw_win_rate"] = r.raw;
    j["tie_rate"] = r.tie_rate;
  }
  return j;
}

inline nlohmann::ordered_json to_json(const JudgeTally& t) {
  nlohmann::ordered_json j;
  j["overall"] = to_json(t.overall);
  auto& per = j["criteria"] = nlohmann::ordered_json::object();
  for (auto c : kCriteria) {
    auto it = t.criteria.find(std::string(c));
    per[std::string(c)] = to_json(it == t.criteria.end() ? WinCounts{} : it->second);
  }
  j["parse_failures"] = t.parse_failures;
  return j;
}

}  // namespace finrag
