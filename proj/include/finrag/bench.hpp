#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "finrag/agent.hpp"
#include "finrag/corpus.hpp"
#include "finrag/error.hpp"
#include "finrag/evalkit.hpp"
#include "finrag/expansion.hpp"
#include "finrag/indexing.hpp"
#include "finrag/node_tree.hpp"
#include "finrag/providers.hpp"
#include "finrag/text.hpp"
#include "finrag/vector_index.hpp"

namespace finrag {

inline constexpr int kReportVersion = 1;

struct SystemSpec {
  std::string name;
  AgentConfig agent;
};

struct Comparison {
  std::string first;
  std::string second;
};

/// vector, vector_rerank, vector_expand and tree, sharing `base` for the
/// corrective-loop settings.
inline std::vector<SystemSpec> default_systems(const AgentConfig& base = {}) {
  std::vector<SystemSpec> out;
  auto with = [&](std::string name, std::vector<PipelineStage> stages) {
    AgentConfig c = base;
    c.stages = std::move(stages);
    out.push_back({std::move(name), c});
  };
  with("vector", {PipelineStage::Hybrid});
  with("vector_rerank", {PipelineStage::Hybrid, PipelineStage::Rerank});
  with("vector_expand", {PipelineStage::Hybrid, PipelineStage::Expand});
  with("tree", {PipelineStage::TreeTraverse});
  return out;
}

inline std::vector<Comparison> default_comparisons() {
  return {{"tree", "vector"}, {"vector_expand", "vector"}, {"vector_rerank", "vector"}};
}

inline nlohmann::ordered_json to_json(const AgentConfig& c) {
  nlohmann::ordered_json j;
  auto& stages = j["stages"] = nlohmann::ordered_json::array();
  for (auto s : c.stages) stages.push_back(to_string(s));
  j["max_corrective_rounds"] = c.max_corrective_rounds;
  j["relevance_threshold"] = c.relevance_threshold;
  j["retrieval_k"] = c.retrieval_k;
  if (c.has(PipelineStage::Rerank)) j["rerank"] = {{"k_initial", c.rerank.k_initial}, {"k_final", c.rerank.k_final}};
  if (c.has(PipelineStage::Expand)) {
    j["expansion"] = {{"window", c.expansion.window},
                      {"fetch_mode", to_string(c.expansion.fetch_mode)},
                      {"max_parallel", c.expansion.max_parallel},
                      {"simulated_fetch_latency_s", c.simulated_fetch_latency_s}};
  }
  if (c.is_tree()) j["tree_corrective"] = c.tree_corrective;
  return j;
}

/// Backends are wrapped in fresh clients per phase and per system so each
/// gets its own transcript.
struct BenchBackends {
  std::shared_ptr<LlmBackend> llm;
  std::shared_ptr<EmbeddingBackend> embedder;
  std::shared_ptr<RerankBackend> reranker;
  std::shared_ptr<LlmBackend> judge;
  ClientOptions options;
};

struct BenchOptions {
  std::vector<SystemSpec> systems = default_systems();
  std::vector<Comparison> comparisons = default_comparisons();
  ChunkingConfig chunking;
  bool with_summaries = true;
  bool deterministic_trees = false;
  // Stage timestamps from simulated provider latency instead of the wall
  // clock; required for byte-identical reports.
  bool virtual_clock = true;
  std::uint64_t seed = 0;
  std::optional<PriceTable> prices;
  // Prebuilt artifacts; built from the corpus when absent.
  const VectorIndex* index = nullptr;
  const std::map<std::string, NodeTree>* trees = nullptr;
  // Recorded verbatim under "config".
  nlohmann::ordered_json effective_config = nlohmann::ordered_json::object();
};

struct BenchResult {
  nlohmann::ordered_json report;
  std::size_t failed_questions = 0;  // question x system runs that raised
  std::vector<std::string> errors;
};

// ---------------------------------------------------------------------------
// Tree-family retrieval metrics
// ---------------------------------------------------------------------------

/// 1-based position of the first selected section in the gold document that
/// contains a gold page, within the first `depth` selections.
inline std::optional<std::size_t> tree_first_relevant_rank(const std::vector<SelectedRange>& selected,
                                                           const BenchmarkQuestion& q, std::size_t depth = 5) {
  for (std::size_t i = 0; i < selected.size() && i < depth; ++i) {
    const auto& s = selected[i];
    if (s.doc_id == q.doc_id && relevance(s.page_start, s.page_end, q.gold_pages)) return i + 1;
  }
  return std::nullopt;
}

/// Fraction of gold pages inside the first `depth` selected sections.
inline double tree_page_recall(const std::vector<SelectedRange>& selected, const BenchmarkQuestion& q,
                               std::size_t depth = 5) {
  if (q.gold_pages.empty()) fail(ErrorCode::EmptyGoldSet, "recall needs a non-empty gold set");
  std::size_t covered = 0;
  for (int page : q.gold_pages) {
    for (std::size_t i = 0; i < selected.size() && i < depth; ++i) {
      const auto& s = selected[i];
      if (s.doc_id == q.doc_id && page >= s.page_start && page <= s.page_end) {
        ++covered;
        break;
      }
    }
  }
  return static_cast<double>(covered) / static_cast<double>(q.gold_pages.size());
}

namespace detail {

struct QuestionRun {
  std::optional<Answer> answer;
  std::string error;
  std::optional<std::size_t> rank;
  std::optional<double> recall;
};

inline nlohmann::ordered_json citations_json(const Answer& a) {
  auto j = nlohmann::ordered_json::array();
  for (const auto& c : a.citations) {
    nlohmann::ordered_json cj = {{"doc_id", c.doc_id}};
    if (c.chunk_id) cj["chunk_id"] = *c.chunk_id;
    cj["pages"] = {c.page_start, c.page_end};
    j.push_back(cj);
  }
  return j;
}

inline nlohmann::ordered_json cost_json(const std::vector<TranscriptEntry>& entries,
                                        const std::optional<PriceTable>& prices) {
  nlohmann::ordered_json j;
  std::int64_t in = 0, out = 0;
  for (const auto& e : entries) {
    in += e.input_tokens;
    out += e.output_tokens;
  }
  j["provider_calls"] = entries.size();
  j["input_tokens"] = in;
  j["output_tokens"] = out;
  if (prices) {
    try {
      j["cost"] = to_json(cost(entries, *prices), prices->currency());
    } catch (const Error& e) {
      j["cost_error"] = e.what();
    }
  }
  return j;
}

inline std::string fingerprint(const nlohmann::ordered_json& config, const std::vector<BenchmarkQuestion>& bench,
                               const std::vector<Document>& docs) {
  std::string blob = config.dump();
  for (const auto& q : bench) blob += to_json(q).dump();
  for (const auto& d : docs) {
    blob += metadata_to_json(d.metadata).dump();
    for (const auto& p : d.pages) blob += text::hex64(text::fnv1a64(p));
  }
  return text::hex64(text::fnv1a64(blob));
}

}  // namespace detail

/// Runs every benchmark question through every system, judges the
/// configured pairs in both orders and assembles the RunReport. Per-question
/// failures are recorded and the run continues; artifact-build failures
/// propagate.
inline BenchResult run_bench(const std::vector<BenchmarkQuestion>& bench, const std::vector<Document>& docs,
                             const BenchBackends& backends, const BenchOptions& opts) {
  if (bench.empty()) fail(ErrorCode::EmptyBenchmark, "benchmark has no questions");
  require(!opts.systems.empty(), ErrorCode::ConfigError, "bench needs at least one system");
  require(backends.llm != nullptr, ErrorCode::ConfigError, "bench needs an LLM backend");
  std::set<std::string> names;
  bool need_vector = false, need_tree = false, need_rerank = false;
  for (const auto& s : opts.systems) {
    require(names.insert(s.name).second, ErrorCode::ConfigError, "duplicate system name '" + s.name + "'");
    s.agent.validate();
    (s.agent.is_tree() ? need_tree : need_vector) = true;
    need_rerank = need_rerank || s.agent.has(PipelineStage::Rerank);
  }
  for (const auto& c : opts.comparisons) {
    require(names.count(c.first) && names.count(c.second) && c.first != c.second, ErrorCode::ConfigError,
            "comparison " + c.first + " vs " + c.second + " names unknown systems");
  }
  if (!opts.comparisons.empty()) require(backends.judge != nullptr, ErrorCode::ConfigError, "comparisons need a judge");
  if (need_vector) require(backends.embedder != nullptr, ErrorCode::ConfigError, "vector systems need an embedder");
  if (need_rerank) require(backends.reranker != nullptr, ErrorCode::ConfigError, "rerank systems need a reranker");

  BenchResult result;
  auto& report = result.report;
  report["report_version"] = kReportVersion;
  report["seed"] = opts.seed;
  nlohmann::ordered_json config = opts.effective_config;
  config["systems"] = nlohmann::ordered_json::object();
  for (const auto& s : opts.systems) config["systems"][s.name] = to_json(s.agent);
  config["comparisons"] = nlohmann::ordered_json::array();
  for (const auto& c : opts.comparisons) config["comparisons"].push_back({c.first, c.second});
  config["chunking"] = {{"chunk_size", opts.chunking.chunk_size},
                        {"overlap", opts.chunking.overlap},
                        {"tokenizer_id", opts.chunking.tokenizer_id}};
  config["trees"] = {{"with_summaries", opts.with_summaries}, {"deterministic", opts.deterministic_trees}};
  config["clock"] = opts.virtual_clock ? "virtual" : "wall";
  config["providers"] = {{"llm", backends.llm->id()},
                         {"embedder", backends.embedder ? backends.embedder->id() : ""},
                         {"reranker", backends.reranker ? backends.reranker->id() : ""},
                         {"judge", backends.judge ? backends.judge->id() : ""}};
  report["config"] = config;
  report["config_fingerprint"] = detail::fingerprint(config, bench, docs);

  std::map<std::string, std::size_t> categories;
  for (auto c : {Category::MultiHop, Category::SingleHop, Category::Summary}) categories[std::string(to_string(c))] = 0;
  for (const auto& q : bench) ++categories[std::string(to_string(q.category))];
  report["benchmark"] = {{"questions", bench.size()}, {"categories", categories}};

  // Preprocessing: artifacts shared by every system of a family.
  auto& pre = report["preprocessing"] = nlohmann::ordered_json::object();
  VectorIndex built_index;
  const VectorIndex* index = opts.index;
  std::map<std::string, NodeTree> built_trees;
  const std::map<std::string, NodeTree>* trees = opts.trees;
  if (need_vector) {
    if (!index) {
      auto log = std::make_shared<TranscriptLog>();
      EmbeddingClient embedder(backends.embedder, log, backends.options);
      auto [idx, r] = index_documents(docs, opts.chunking, embedder);
      built_index = std::move(idx);
      index = &built_index;
      auto j = detail::cost_json(log->snapshot(), opts.prices);
      j["chunks"] = r.chunks;
      pre["vector_index"] = j;
    } else {
      pre["vector_index"] = {{"prebuilt", true}, {"chunks", index->size()}};
    }
  }
  if (need_tree) {
    if (!trees) {
      auto log = std::make_shared<TranscriptLog>();
      LlmClient llm(backends.llm, log, backends.options);
      auto tb = build_trees(docs, &llm, opts.with_summaries, opts.deterministic_trees,
                            opts.prices ? &*opts.prices : nullptr);
      built_trees = std::move(tb.trees);
      trees = &built_trees;
      auto j = detail::cost_json(log->snapshot(), opts.prices);
      j["with_summaries"] = opts.with_summaries && !opts.deterministic_trees;
      auto& per = j["documents"] = nlohmann::ordered_json::object();
      for (const auto& [id, r] : tb.reports) per[id] = to_json(r);
      pre["trees"] = j;
    } else {
      pre["trees"] = {{"prebuilt", true}, {"documents", trees->size()}};
    }
  }

  KnowledgeBase kb;
  InMemoryChunkStore store;
  for (const auto& d : docs) {
    kb.catalog.push_back(d.metadata);
    kb.documents[d.doc_id()] = &d;
  }
  if (index) {
    store = InMemoryChunkStore::from_index(*index);
    kb.index = index;
    kb.store = &store;
  }
  if (trees) kb.trees = *trees;

  // Runtime, one system at a time, questions in benchmark order.
  std::map<std::string, std::vector<detail::QuestionRun>> runs;
  auto& systems_json = report["systems"] = nlohmann::ordered_json::object();
  for (const auto& sys : opts.systems) {
    auto log = std::make_shared<TranscriptLog>();
    LlmClient llm(backends.llm, log, backends.options);
    std::optional<EmbeddingClient> embedder;
    std::optional<RerankClient> reranker;
    if (!sys.agent.is_tree()) embedder.emplace(backends.embedder, log, backends.options);
    if (sys.agent.has(PipelineStage::Rerank)) reranker.emplace(backends.reranker, log, backends.options);
    AgentProviders providers{&llm, embedder ? &*embedder : nullptr, reranker ? &*reranker : nullptr};

    auto& qruns = runs[sys.name];
    std::vector<std::optional<std::size_t>> ranks;
    double recall_sum = 0;
    std::size_t recall_n = 0, abstentions = 0, failures = 0, fell_open = 0, exhausted = 0;
    std::vector<double> e2e;
    std::map<std::string, std::vector<double>> per_stage;
    for (const auto& q : bench) {
      detail::QuestionRun run;
      VirtualClock vclock;
      SteadyClock wall;
      Clock& clock = opts.virtual_clock ? static_cast<Clock&>(vclock) : static_cast<Clock&>(wall);
      try {
        run.answer = answer_question(q.question, sys.agent, kb, providers, clock);
        const Answer& a = *run.answer;
        if (sys.agent.is_tree()) {
          run.rank = tree_first_relevant_rank(a.selected, q);
          run.recall = tree_page_recall(a.selected, q);
        } else {
          run.rank = first_relevant_rank(a.ranked, q);
          auto gold = gold_chunk_ids(*index, q);
          if (!gold.empty()) run.recall = recall_at_k(chunk_ids(a.ranked), gold, 5);
        }
        ranks.push_back(run.rank);
        if (run.recall) {
          recall_sum += *run.recall;
          ++recall_n;
        }
        abstentions += a.abstained;
        fell_open += a.trace.grader_failed_open;
        exhausted += a.trace.exhausted;
        e2e.push_back(a.trace.end_to_end_s());
        std::map<std::string, double> stage_sum;
        for (const auto& r : a.trace.records) stage_sum[r.stage] += r.duration_s();
        for (const auto& [st, d] : stage_sum) per_stage[st].push_back(d);
      } catch (const Error& e) {
        run.error = e.what();
        ++failures;
        ++result.failed_questions;
        result.errors.push_back(sys.name + " " + q.id + ": " + e.what());
      }
      qruns.push_back(std::move(run));
    }

    nlohmann::ordered_json sj;
    sj["family"] = sys.agent.is_tree() ? "tree" : "vector";
    auto& metrics = sj["retrieval"];
    metrics["scored_questions"] = ranks.size();
    if (!ranks.empty()) metrics["mrr_at_5"] = mrr(ranks);
    if (recall_n) metrics["recall_at_5"] = recall_sum / static_cast<double>(recall_n);
    metrics["recall_questions"] = recall_n;
    metrics["recall_unit"] = sys.agent.is_tree() ? "gold pages" : "gold chunks";
    auto& lat = sj["latency_s"];
    lat["end_to_end"] = to_json(latency_stats(e2e));
    auto& stages = lat["stages"] = nlohmann::ordered_json::object();
    for (const auto& [st, ds] : per_stage) stages[st] = to_json(latency_stats(ds));
    sj["runtime"] = detail::cost_json(log->snapshot(), opts.prices);
    sj["abstentions"] = abstentions;
    sj["failures"] = failures;
    sj["grader_failed_open"] = fell_open;
    sj["corrective_exhausted"] = exhausted;
    systems_json[sys.name] = sj;
  }

  // Pairwise judging.
  auto judge_log = std::make_shared<TranscriptLog>();
  std::optional<LlmClient> judge;
  if (backends.judge) judge.emplace(backends.judge, judge_log, backends.options);
  std::map<std::size_t, nlohmann::ordered_json> per_question_judgments;
  auto& comps = report["comparisons"] = nlohmann::ordered_json::array();
  for (const auto& cmp : opts.comparisons) {
    JudgeTally tally;
    std::map<std::string, WinCounts> by_category;
    std::size_t skipped = 0;
    for (std::size_t i = 0; i < bench.size(); ++i) {
      const auto& a = runs[cmp.first][i];
      const auto& b = runs[cmp.second][i];
      if (!a.answer || !b.answer) {
        ++skipped;
        continue;
      }
      try {
        auto [v1, v2] = judge_pair(bench[i].question, a.answer->text, b.answer->text, *judge);
        tally.add(v1);
        tally.add(v2);
        auto& cat = by_category[std::string(to_string(bench[i].category))];
        cat.add(preference_for_first(v1.overall, v1.order_swapped));
        cat.add(preference_for_first(v2.overall, v2.order_swapped));
        per_question_judgments[i].push_back(
            {{"first", cmp.first}, {"second", cmp.second}, {"verdicts", {to_json(v1), to_json(v2)}}});
      } catch (const Error& e) {
        ++skipped;
        result.errors.push_back("judge " + cmp.first + " vs " + cmp.second + " " + bench[i].id + ": " + e.what());
      }
    }
    nlohmann::ordered_json cj;
    cj["first"] = cmp.first;
    cj["second"] = cmp.second;
    cj["judged_questions"] = bench.size() - skipped;
    cj["skipped_questions"] = skipped;
    auto tj = to_json(tally);
    cj["overall"] = tj["overall"];
    cj["criteria"] = tj["criteria"];
    cj["parse_failures"] = tj["parse_failures"];
    auto& cats = cj["categories"] = nlohmann::ordered_json::object();
    for (const auto& [name, counts] : by_category) cats[name] = to_json(counts);
    comps.push_back(cj);
  }
  if (judge) report["judge"] = detail::cost_json(judge_log->snapshot(), opts.prices);

  auto& qs = report["questions"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < bench.size(); ++i) {
    const auto& q = bench[i];
    nlohmann::ordered_json qj = {{"id", q.id},
                                 {"category", to_string(q.category)},
                                 {"doc_id", q.doc_id},
                                 {"gold_pages", q.gold_pages}};
    auto& per = qj["systems"] = nlohmann::ordered_json::object();
    for (const auto& sys : opts.systems) {
      const auto& run = runs[sys.name][i];
      nlohmann::ordered_json rj;
      if (!run.answer) {
        rj["error"] = run.error;
      } else {
        const auto& a = *run.answer;
        rj["answer"] = a.text;
        rj["abstained"] = a.abstained;
        rj["citations"] = detail::citations_json(a);
        rj["first_relevant_rank"] = run.rank ? nlohmann::ordered_json(*run.rank) : nlohmann::ordered_json();
        rj["recall_at_5"] = run.recall ? nlohmann::ordered_json(*run.recall) : nlohmann::ordered_json();
        rj["rounds"] = a.trace.rounds;
        rj["end_to_end_s"] = a.trace.end_to_end_s();
        auto& st = rj["stages"] = nlohmann::ordered_json::array();
        for (const auto& r : a.trace.records) st.push_back(to_json(r));
        if (!a.trace.notes.empty()) rj["notes"] = a.trace.notes;
      }
      per[sys.name] = rj;
    }
    if (auto it = per_question_judgments.find(i); it != per_question_judgments.end()) qj["judgments"] = it->second;
    qs.push_back(qj);
  }
  report["failures"] = {{"count", result.failed_questions}, {"errors", result.errors}};
  return result;
}

}  // namespace finrag
