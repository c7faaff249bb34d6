#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "finrag/corpus.hpp"
#include "finrag/error.hpp"
#include "finrag/expansion.hpp"
#include "finrag/node_tree.hpp"
#include "finrag/prompts.hpp"
#include "finrag/providers.hpp"
#include "finrag/rerank.hpp"
#include "finrag/text.hpp"
#include "finrag/vector_index.hpp"

namespace finrag {

enum class PipelineStage { Hybrid, Rerank, Expand, TreeTraverse };

constexpr std::string_view to_string(PipelineStage s) noexcept {
  switch (s) {
    case PipelineStage::Hybrid: return "hybrid";
    case PipelineStage::Rerank: return "rerank";
    case PipelineStage::Expand: return "expand";
    case PipelineStage::TreeTraverse: return "tree_traverse";
  }
  return "?";
}

inline PipelineStage parse_pipeline_stage(std::string_view s) {
  if (s == "hybrid") return PipelineStage::Hybrid;
  if (s == "rerank") return PipelineStage::Rerank;
  if (s == "expand") return PipelineStage::Expand;
  if (s == "tree_traverse") return PipelineStage::TreeTraverse;
  fail(ErrorCode::ConfigError, "unknown pipeline stage '" + std::string(s) + "'");
}

struct AgentConfig {
  int max_corrective_rounds = 2;
  double relevance_threshold = 0.5;
  std::size_t retrieval_k = 5;
  std::vector<PipelineStage> stages = {PipelineStage::Hybrid};
  RerankConfig rerank;
  ExpansionConfig expansion;
  // Tree family only: grade traversals and re-traverse with a rewritten
  // question, like the vector family's corrective loop.
  bool tree_corrective = false;
  // Virtual-clock charge per neighbor fetch.
  double simulated_fetch_latency_s = 0.05;

  bool is_tree() const {
    return std::find(stages.begin(), stages.end(), PipelineStage::TreeTraverse) != stages.end();
  }
  bool has(PipelineStage s) const { return std::find(stages.begin(), stages.end(), s) != stages.end(); }

  void validate() const {
    require(max_corrective_rounds >= 0, ErrorCode::ConfigError, "max_corrective_rounds must be >= 0");
    require(relevance_threshold >= 0.0 && relevance_threshold <= 1.0, ErrorCode::ConfigError,
            "relevance_threshold must be in [0,1]");
    require(retrieval_k >= 1, ErrorCode::ConfigError, "retrieval_k must be >= 1");
    require(!stages.empty(), ErrorCode::ConfigError, "pipeline needs at least one stage");
    if (is_tree()) {
      require(stages.size() == 1, ErrorCode::ConfigError, "tree_traverse cannot be combined with other stages");
    } else {
      require(stages.front() == PipelineStage::Hybrid, ErrorCode::ConfigError, "vector pipelines start with hybrid");
      std::set<PipelineStage> seen;
      for (auto s : stages) require(seen.insert(s).second, ErrorCode::ConfigError, "pipeline stage repeated");
    }
    if (has(PipelineStage::Rerank)) rerank.validate();
    if (has(PipelineStage::Expand)) expansion.validate();
  }
};

// ---------------------------------------------------------------------------
// Trace and answer
// ---------------------------------------------------------------------------

struct StageRecord {
  std::string stage;  // formulate, hybrid, rerank, grade, rewrite, expand, tree_traverse, generate
  int round = 0;
  double started_s = 0.0;
  double ended_s = 0.0;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  int provider_calls = 0;
  std::string note;

  double duration_s() const noexcept { return ended_s - started_s; }
};

struct Trace {
  std::vector<StageRecord> records;
  std::vector<std::string> notes;
  int rounds = 0;
  int best_round = 0;
  bool exhausted = false;
  bool grader_failed_open = false;
  bool rerank_fell_back = false;
  std::vector<std::string> queries;  // query_text per round
  std::string generator_prompt;

  double started_s() const { return records.empty() ? 0.0 : records.front().started_s; }
  double ended_s() const { return records.empty() ? 0.0 : records.back().ended_s; }
  double end_to_end_s() const { return ended_s() - started_s(); }
};

struct Citation {
  std::string doc_id;
  std::optional<std::string> chunk_id;
  std::uint32_t page_start = 0;
  std::uint32_t page_end = 0;

  friend bool operator==(const Citation&, const Citation&) = default;
};

/// A passage handed to the generator.
struct ContextItem {
  std::string doc_id;
  std::optional<std::string> chunk_id;
  std::uint32_t page_start = 0;
  std::uint32_t page_end = 0;
  std::string text;
  bool is_target = true;
};

/// A tree section chosen during traversal, in selection order.
struct SelectedRange {
  std::string doc_id;
  std::string node_id;
  int page_start = 0;
  int page_end = 0;
};

struct Answer {
  std::string text;
  std::vector<Citation> citations;
  bool abstained = false;
  std::vector<ContextItem> context;
  std::vector<ScoredHit> ranked;              // vector family: final ranked hits
  std::vector<SelectedRange> selected;        // tree family
  Trace trace;
};

inline constexpr std::string_view kAbstentionText =
    "Not found: the available filings do not contain information that answers this question.";

inline nlohmann::ordered_json to_json(const StageRecord& r) {
  nlohmann::ordered_json j = {{"stage", r.stage},
                              {"round", r.round},
                              {"started_s", r.started_s},
                              {"ended_s", r.ended_s},
                              {"duration_s", r.duration_s()},
                              {"input_tokens", r.input_tokens},
                              {"output_tokens", r.output_tokens},
                              {"provider_calls", r.provider_calls}};
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

inline nlohmann::ordered_json to_json(const Answer& a) {
  nlohmann::ordered_json j;
  j["text"] = a.text;
  j["abstained"] = a.abstained;
  auto& cites = j["citations"] = nlohmann::ordered_json::array();
  for (const auto& c : a.citations) {
    nlohmann::ordered_json cj = {{"doc_id", c.doc_id}};
    if (c.chunk_id) cj["chunk_id"] = *c.chunk_id;
    cj["page_start"] = c.page_start;
    cj["page_end"] = c.page_end;
    cites.push_back(cj);
  }
  auto& ctx = j["context"] = nlohmann::ordered_json::array();
  for (const auto& c : a.context) {
    nlohmann::ordered_json cj = {{"doc_id", c.doc_id}};
    if (c.chunk_id) cj["chunk_id"] = *c.chunk_id;
    cj["page_start"] = c.page_start;
    cj["page_end"] = c.page_end;
    cj["role"] = c.is_target ? "target" : "neighbor";
    ctx.push_back(cj);
  }
  auto& trace = j["trace"];
  trace["rounds"] = a.trace.rounds;
  trace["best_round"] = a.trace.best_round;
  trace["exhausted"] = a.trace.exhausted;
  trace["grader_failed_open"] = a.trace.grader_failed_open;
  trace["rerank_fell_back"] = a.trace.rerank_fell_back;
  trace["queries"] = a.trace.queries;
  trace["end_to_end_s"] = a.trace.end_to_end_s();
  auto& stages = trace["stages"] = nlohmann::ordered_json::array();
  for (const auto& r : a.trace.records) stages.push_back(to_json(r));
  trace["notes"] = a.trace.notes;
  return j;
}

// ---------------------------------------------------------------------------
// Resources
// ---------------------------------------------------------------------------

/// What the agent can search. The vector family needs `index` (and `store`
/// when expanding); the tree family needs `trees` and `documents`.
struct KnowledgeBase {
  std::vector<FilingMetadata> catalog;
  const VectorIndex* index = nullptr;
  const ChunkStore* store = nullptr;
  std::map<std::string, NodeTree> trees;
  std::map<std::string, const Document*> documents;
};

inline std::string render_catalog(const std::vector<FilingMetadata>& catalog) {
  std::set<std::string> lines;
  for (const auto& m : catalog) {
    lines.insert(m.company + " | " + std::string(to_string(m.form_type)) + " | " + m.fiscal_period + " | " +
                 m.filing_date);
  }
  return text::join(lines, "\n");
}

// ---------------------------------------------------------------------------
// Corrective pieces
// ---------------------------------------------------------------------------

struct GradeResult {
  double fraction = 0.0;
  std::vector<bool> relevant;
  bool failed_open = false;
  std::string error;
  Usage usage;
  double latency_s = 0.0;
};

/// One binary grade per passage; the fraction graded relevant. Provider
/// failures and unparseable replies pass the round (fraction 1) and are
/// flagged.
inline GradeResult grade_retrieval(std::string_view question, const std::vector<std::string>& passages,
                                   const LlmClient& llm) {
  require(!passages.empty(), ErrorCode::PreconditionViolated, "grade_retrieval needs a non-empty context");
  std::map<std::string, std::string> slots = {{"question", std::string(question)}};
  std::string rendered;
  for (std::size_t i = 0; i < passages.size(); ++i) {
    slots["passage_" + std::to_string(i)] = passages[i];
    rendered += "[" + std::to_string(i + 1) + "] " + passages[i] + "\n\n";
  }
  slots["passages"] = rendered;
  GradeResult g;
  auto open = [&](std::string why) {
    g.failed_open = true;
    g.error = std::move(why);
    g.fraction = 1.0;
    g.relevant.assign(passages.size(), true);
    return g;
  };
  Completion reply;
  try {
    reply = llm.complete(prompts::render(prompts::purpose::kGrade, prompts::kGrade, slots, 128));
  } catch (const Error& e) {
    return open(e.what());
  }
  g.usage = reply.usage;
  g.latency_s = reply.latency_s;
  try {
    const auto lb = reply.text.find('{');
    const auto rb = reply.text.rfind('}');
    if (lb == std::string::npos || rb == std::string::npos || rb < lb) return open("grader reply has no JSON object");
    auto j = nlohmann::json::parse(reply.text.substr(lb, rb - lb + 1));
    const auto& arr = j.at("relevant");
    if (!arr.is_array() || arr.size() != passages.size()) return open("grader returned the wrong number of grades");
    std::size_t yes = 0;
    for (const auto& v : arr) {
      const bool r = v.is_boolean() ? v.get<bool>() : (v.is_number() && v.get<double>() >= 0.5);
      g.relevant.push_back(r);
      yes += r ? 1 : 0;
    }
    g.fraction = static_cast<double>(yes) / static_cast<double>(passages.size());
  } catch (const nlohmann::json::exception& e) {
    return open(std::string("grader reply unparseable: ") + e.what());
  }
  return g;
}

struct RewriteResult {
  std::string query;
  bool fallback_used = false;
  Usage usage;
  double latency_s = 0.0;
};

/// Form-type term named in the question, if any.
inline std::optional<std::string> form_term_in(std::string_view question) {
  const auto lower = text::to_lower(question);
  for (std::string_view f : {"10-K", "10-Q", "8-K"}) {
    if (lower.find(text::to_lower(f)) != std::string::npos) return std::string(f);
  }
  return std::nullopt;
}

/// Deterministic fallback when the rewriter echoes its input: append the
/// form-type term (from the question, else `form_hint`, else "10-K").
inline std::string fallback_rewrite(std::string_view question, const std::string& failed_query,
                                    const std::optional<std::string>& form_hint = std::nullopt) {
  const std::string term = form_term_in(question).value_or(form_hint.value_or("10-K"));
  return failed_query + " " + term;
}

inline bool same_query(std::string_view a, std::string_view b) {
  return text::to_lower(text::trim(a)) == text::to_lower(text::trim(b));
}

inline RewriteResult rewrite_query(std::string_view question, const std::string& failed_query, const LlmClient& llm,
                                   const std::optional<std::string>& form_hint = std::nullopt) {
  auto reply = llm.complete(prompts::render(prompts::purpose::kRewrite, prompts::kRewrite,
                                            {{"question", std::string(question)}, {"failed_query", failed_query}},
                                            128));
  RewriteResult r;
  r.usage = reply.usage;
  r.latency_s = reply.latency_s;
  std::string q(text::trim(reply.text));
  if (q.size() >= 2 && q.front() == '"' && q.back() == '"') q = q.substr(1, q.size() - 2);
  if (q.empty() || same_query(q, failed_query)) {
    r.fallback_used = true;
    q = fallback_rewrite(question, failed_query, form_hint);
  }
  r.query = std::move(q);
  return r;
}

struct ToolCall {
  std::string query_text;
  MetadataFilter filter;
  std::size_t k = 5;
  bool parsed = true;
  std::string error;
};

/// Reads the {query_text, filter, k} call. Anything unusable falls back to
/// the raw question, no filter and the configured k.
inline ToolCall parse_tool_call(std::string_view reply, std::string_view question, std::size_t default_k) {
  ToolCall call{std::string(question), {}, default_k, true, {}};
  try {
    const auto lb = reply.find('{');
    const auto rb = reply.rfind('}');
    if (lb == std::string_view::npos || rb == std::string_view::npos || rb < lb) throw std::runtime_error("no JSON");
    auto j = nlohmann::json::parse(reply.substr(lb, rb - lb + 1));
    if (auto it = j.find("query_text"); it != j.end() && it->is_string() && !text::trim(it->get<std::string>()).empty()) {
      call.query_text = it->get<std::string>();
    }
    if (auto it = j.find("k"); it != j.end() && it->is_number_integer() && it->get<long long>() >= 1) {
      call.k = static_cast<std::size_t>(it->get<long long>());
    }
    if (auto it = j.find("filter"); it != j.end()) {
      try {
        call.filter = MetadataFilter::from_json(*it);
      } catch (const Error& e) {
        call.error = std::string("filter dropped: ") + e.what();
      }
    }
  } catch (const std::exception& e) {
    call.parsed = false;
    call.error = std::string("tool call unparseable: ") + e.what();
  }
  return call;
}

/// [n] markers in order of first appearance, restricted to 1..count.
inline std::vector<std::size_t> cited_indices(std::string_view answer, std::size_t count) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < answer.size(); ++i) {
    if (answer[i] != '[') continue;
    std::size_t j = i + 1, n = 0;
    while (j < answer.size() && answer[j] >= '0' && answer[j] <= '9' && j - i <= 4) n = n * 10 + static_cast<std::size_t>(answer[j++] - '0');
    if (j > i + 1 && j < answer.size() && answer[j] == ']' && n >= 1 && n <= count &&
        std::find(out.begin(), out.end(), n) == out.end()) {
      out.push_back(n);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

namespace detail {

class StageTimer {
 public:
  StageTimer(Trace& trace, Clock& clock, std::string stage, int round) : trace_(trace), clock_(clock) {
    rec_.stage = std::move(stage);
    rec_.round = round;
    rec_.started_s = clock_.now();
  }

  void account(const Usage& u, double latency) {
    rec_.input_tokens += u.input_tokens;
    rec_.output_tokens += u.output_tokens;
    ++rec_.provider_calls;
    clock_.charge(latency);
  }
  void note(std::string n) { rec_.note = std::move(n); }
  void finish() {
    if (done_) return;
    done_ = true;
    rec_.ended_s = std::max(clock_.now(), rec_.started_s);
    trace_.records.push_back(rec_);
  }
  ~StageTimer() { finish(); }

 private:
  Trace& trace_;
  Clock& clock_;
  StageRecord rec_;
  bool done_ = false;
};

inline std::string render_context(const std::vector<ContextItem>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& c = items[i];
    out += "[" + std::to_string(i + 1) + "] (" + c.doc_id + ", pages " + std::to_string(c.page_start) + "-" +
           std::to_string(c.page_end) + ")\n" + c.text + "\n\n";
  }
  return out;
}

struct RoundResult {
  std::vector<ScoredHit> hits;          // vector family
  std::vector<ContextItem> items;       // tree family
  std::vector<SelectedRange> selected;  // tree family
  double grade = -1.0;
};

inline std::vector<ContextItem> items_from_hits(const std::vector<ScoredHit>& hits) {
  std::vector<ContextItem> items;
  for (const auto& h : hits) {
    items.push_back({h.chunk.doc_id, h.chunk.chunk_id, h.chunk.page_start, h.chunk.page_end, h.text, true});
  }
  return items;
}

}  // namespace detail

struct AgentProviders {
  const LlmClient* llm = nullptr;
  const EmbeddingClient* embedder = nullptr;  // vector family
  const RerankClient* reranker = nullptr;     // when reranking
};

/// Runs one question through the configured pipeline. `clock` stamps the
/// trace; provider latencies are charged to it. A non-empty `pinned` filter
/// is ANDed onto whatever filter the formulated tool call carries.
inline Answer answer_question(std::string_view question, const AgentConfig& cfg, const KnowledgeBase& kb,
                              const AgentProviders& providers, Clock& clock, const MetadataFilter& pinned = {}) {
  cfg.validate();
  require(providers.llm != nullptr, ErrorCode::ConfigError, "agent needs an LLM");
  const LlmClient& llm = *providers.llm;
  if (cfg.is_tree()) {
    require(!kb.trees.empty(), ErrorCode::ConfigError, "tree pipeline needs node trees");
  } else {
    require(kb.index != nullptr && providers.embedder != nullptr, ErrorCode::ConfigError,
            "vector pipeline needs an index and an embedder");
    if (cfg.has(PipelineStage::Rerank)) {
      require(providers.reranker != nullptr, ErrorCode::ConfigError, "rerank stage needs a reranker");
    }
    if (cfg.has(PipelineStage::Expand)) {
      require(kb.store != nullptr, ErrorCode::ConfigError, "expand stage needs a chunk store");
    }
  }

  Answer answer;
  Trace& trace = answer.trace;

  // Query formulation: one structured tool call.
  ToolCall call;
  {
    detail::StageTimer t(trace, clock, "formulate", 0);
    auto reply = llm.complete(prompts::render(prompts::purpose::kFormulate, prompts::kFormulate,
                                              {{"catalog", render_catalog(kb.catalog)},
                                               {"k", std::to_string(cfg.retrieval_k)},
                                               {"question", std::string(question)}},
                                              256));
    t.account(reply.usage, reply.latency_s);
    call = parse_tool_call(reply.text, question, cfg.retrieval_k);
    if (!call.error.empty()) {
      t.note(call.error);
      trace.notes.push_back(call.error);
    }
  }
  if (!pinned.empty()) {
    call.filter = call.filter & pinned;
    trace.notes.push_back("pinned filter " + pinned.to_json().dump());
  }
  std::optional<std::string> form_hint;
  for (const auto& p : call.filter.predicates()) {
    if (const auto* eq = std::get_if<EqualsPredicate>(&p); eq && eq->field == MetadataField::FormType) {
      form_hint = eq->value;
    }
  }

  const bool corrective = !cfg.is_tree() || cfg.tree_corrective;
  const int max_rounds = corrective ? cfg.max_corrective_rounds + 1 : 1;
  std::vector<detail::RoundResult> rounds;
  std::string query = call.query_text;

  for (int round = 0; round < max_rounds; ++round) {
    trace.queries.push_back(query);
    detail::RoundResult rr;

    if (!cfg.is_tree()) {
      const std::size_t depth = cfg.has(PipelineStage::Rerank) ? cfg.rerank.k_initial : call.k;
      {
        detail::StageTimer t(trace, clock, "hybrid", round);
        auto emb = providers.embedder->embed(std::span<const std::string>(&query, 1), "embed_query");
        t.account(emb.usage, emb.latency_s);
        rr.hits = kb.index->hybrid_search(query, emb.vectors.front(), depth, call.filter);
        t.note(std::to_string(rr.hits.size()) + " hit(s)");
      }
      if (cfg.has(PipelineStage::Rerank) && !rr.hits.empty()) {
        detail::StageTimer t(trace, clock, "rerank", round);
        auto r = rerank_or_fallback(rr.hits, question, cfg.rerank, *providers.reranker);
        if (r.scorer_calls > 0 || r.fell_back) {
          t.account({}, r.latency_s);
        }
        if (r.fell_back) {
          trace.rerank_fell_back = true;
          t.note(r.error);
          trace.notes.push_back("rerank fell back to first-stage order: " + r.error);
        }
        rr.hits = std::move(r.hits);
      }
      rr.items = detail::items_from_hits(rr.hits);
    } else {
      detail::StageTimer t(trace, clock, "tree_traverse", round);
      std::vector<std::string> notes;
      for (const auto& meta : kb.catalog) {
        if (!call.filter.matches(meta)) continue;
        auto tree = kb.trees.find(meta.doc_id);
        auto doc = kb.documents.find(meta.doc_id);
        if (tree == kb.trees.end() || doc == kb.documents.end() || !doc->second) continue;
        try {
          auto tr = traverse_retrieve(tree->second, query, llm, *doc->second);
          t.account(tr.usage, tr.latency_s);
          for (const auto& id : tr.node_ids) {
            const Node* n = find_node(tree->second, id);
            const auto pages = section_pages(*n);
            rr.selected.push_back({meta.doc_id, id, pages.front(), pages.back()});
          }
          // Contiguous page runs become context items, in page order.
          for (std::size_t i = 0; i < tr.pages.size();) {
            std::size_t j = i;
            while (j + 1 < tr.pages.size() && tr.pages[j + 1] == tr.pages[j] + 1) ++j;
            std::vector<std::string> texts(tr.page_texts.begin() + static_cast<std::ptrdiff_t>(i),
                                           tr.page_texts.begin() + static_cast<std::ptrdiff_t>(j) + 1);
            rr.items.push_back({meta.doc_id, std::nullopt, static_cast<std::uint32_t>(tr.pages[i]),
                                static_cast<std::uint32_t>(tr.pages[j]), text::join(texts, "\n\n"), true});
            i = j + 1;
          }
        } catch (const Error& e) {
          notes.push_back(meta.doc_id + ": " + e.what());
        }
      }
      if (!notes.empty()) {
        t.note(text::join(notes, "; "));
        for (auto& n : notes) trace.notes.push_back("traversal failed for " + n);
      }
    }

    trace.rounds = round + 1;
    if (rr.items.empty()) {
      rr.grade = 0.0;
    } else if (corrective) {
      detail::StageTimer t(trace, clock, "grade", round);
      std::vector<std::string> passages;
      for (const auto& it : rr.items) passages.push_back(it.text);
      auto g = grade_retrieval(question, passages, llm);
      t.account(g.usage, g.latency_s);
      rr.grade = g.fraction;
      t.note("relevant fraction " + text::format_double(g.fraction, 3));
      if (g.failed_open) {
        trace.grader_failed_open = true;
        t.note("grader failed open: " + g.error);
        trace.notes.push_back("grader failed open in round " + std::to_string(round) + ": " + g.error);
      }
    } else {
      rr.grade = 1.0;
    }
    rounds.push_back(std::move(rr));

    if (rounds.back().grade >= cfg.relevance_threshold && !rounds.back().items.empty()) break;
    if (round + 1 < max_rounds) {
      detail::StageTimer t(trace, clock, "rewrite", round);
      auto rw = rewrite_query(question, query, llm, form_hint);
      t.account(rw.usage, rw.latency_s);
      if (rw.fallback_used) t.note("rewriter echoed its input; used fallback");
      query = rw.query;
    } else if (corrective) {
      trace.exhausted = true;
    }
  }

  // Best-graded round; earliest wins ties.
  std::size_t best = 0;
  for (std::size_t i = 1; i < rounds.size(); ++i) {
    if (rounds[i].grade > rounds[best].grade) best = i;
  }
  trace.best_round = static_cast<int>(best);
  if (trace.exhausted) {
    trace.notes.push_back("corrective rounds exhausted; generating from round " + std::to_string(best));
  }
  auto& chosen = rounds[best];
  answer.ranked = chosen.hits;
  answer.selected = chosen.selected;

  if (chosen.items.empty()) {
    answer.abstained = true;
    answer.text = std::string(kAbstentionText);
    trace.notes.push_back("retrieval empty after all rounds; abstained");
    return answer;
  }

  std::vector<ContextItem> context = chosen.items;
  if (!cfg.is_tree() && cfg.has(PipelineStage::Expand)) {
    detail::StageTimer t(trace, clock, "expand", static_cast<int>(best));
    auto ex = expand(chosen.hits, cfg.expansion, *kb.store);
    const double per = cfg.simulated_fetch_latency_s;
    const double n = static_cast<double>(ex.neighbor_fetches);
    const double waves = cfg.expansion.fetch_mode == FetchMode::Async
                             ? std::ceil(n / static_cast<double>(cfg.expansion.max_parallel))
                             : n;
    clock.charge(per * waves);
    t.note("window " + std::to_string(cfg.expansion.window) + ", " + std::to_string(ex.neighbor_fetches) +
           " neighbor fetch(es), " + std::string(to_string(cfg.expansion.fetch_mode)));
    context.clear();
    for (auto& c : ex.chunks) {
      context.push_back({c.chunk.doc_id, c.chunk.chunk_id, c.chunk.page_start, c.chunk.page_end, std::move(c.text),
                         c.is_target});
    }
  }

  {
    detail::StageTimer t(trace, clock, "generate", static_cast<int>(best));
    std::map<std::string, std::string> slots = {{"context", detail::render_context(context)},
                                                {"question", std::string(question)}};
    for (std::size_t i = 0; i < context.size(); ++i) slots["context_" + std::to_string(i)] = context[i].text;
    auto request = prompts::render(prompts::purpose::kGenerate, prompts::kGenerate, slots, 1024);
    trace.generator_prompt = request.prompt;
    auto reply = llm.complete(request);
    t.account(reply.usage, reply.latency_s);
    answer.text = reply.text;
  }
  answer.context = std::move(context);
  for (std::size_t n : cited_indices(answer.text, answer.context.size())) {
    const auto& c = answer.context[n - 1];
    answer.citations.push_back({c.doc_id, c.chunk_id, c.page_start, c.page_end});
  }
  return answer;
}

}  // namespace finrag
