#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "finrag/corpus.hpp"
#include "finrag/error.hpp"
#include "finrag/node_tree.hpp"
#include "finrag/prompts.hpp"
#include "finrag/providers.hpp"
#include "finrag/text.hpp"
#include "finrag/tokenizer.hpp"

// Offline providers. Every mock is a pure function of (seed, input) and
// reports simulated latencies so reports built on a VirtualClock are
// reproducible.
namespace finrag::mock {

// Simulated latency model, in seconds.
inline double llm_latency(const Usage& u) {
  return 0.25 + 2e-5 * static_cast<double>(u.input_tokens) + 0.012 * static_cast<double>(u.output_tokens);
}
inline double embed_latency(const Usage& u) { return 0.04 + 2e-6 * static_cast<double>(u.input_tokens); }
inline double rerank_latency(std::size_t pairs) { return 0.08 + 0.004 * static_cast<double>(pairs); }

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

/// Each lexical term t adds ±1 to one of `dimension` coordinates:
///   h = splitmix64(fnv1a64(t) ^ seed); coordinate = h % dimension;
///   sign = +1 if bit 8 of h is clear, else -1.
/// The sum is L2-normalized. A text without terms maps to e0.
class HashEmbedder final : public EmbeddingBackend {
 public:
  explicit HashEmbedder(std::uint64_t seed = 0, std::size_t dimension = 256) : seed_(seed), dim_(dimension) {
    require(dimension > 0, ErrorCode::InvalidConfig, "embedding dimension must be positive");
  }

  std::string id() const override { return "mock-hash-embedder"; }
  std::size_t dimension() const override { return dim_; }

  std::vector<double> vector_of(std::string_view text) const {
    std::vector<double> v(dim_, 0.0);
    for (const auto& term : text::word_terms(text)) {
      const std::uint64_t h = text::splitmix64(text::fnv1a64(term) ^ seed_);
      v[h % dim_] += ((h >> 8) & 1) ? -1.0 : 1.0;
    }
    double n = 0;
    for (double x : v) n += x * x;
    if (n == 0) {
      v[0] = 1.0;
      return v;
    }
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    return v;
  }

  EmbeddingResult embed(std::span<const std::string> texts) override {
    EmbeddingResult r;
    for (const auto& t : texts) {
      r.vectors.push_back(vector_of(t));
      r.usage.input_tokens += static_cast<std::int64_t>(count_tokens(t));
    }
    r.latency_s = embed_latency(r.usage);
    return r;
  }

 private:
  std::uint64_t seed_;
  std::size_t dim_;
};

// ---------------------------------------------------------------------------
// Relevance scorers
// ---------------------------------------------------------------------------

/// score = |Q ∩ T| / |Q| over the distinct lexical terms of question Q and
/// passage T; 0 when the question has no terms.
class LexicalOverlapScorer final : public RerankBackend {
 public:
  std::string id() const override { return "mock-lexical-scorer"; }

  static double overlap(std::string_view question, std::string_view passage) {
    const auto q = text::word_terms(question);
    const std::set<std::string> qs(q.begin(), q.end());
    if (qs.empty()) return 0.0;
    const auto t = text::word_terms(passage);
    const std::set<std::string> ts(t.begin(), t.end());
    std::size_t hit = 0;
    for (const auto& term : qs) hit += ts.count(term);
    return static_cast<double>(hit) / static_cast<double>(qs.size());
  }

  ScoreResult score_pairs(std::string_view question, std::span<const Passage> passages) override {
    ScoreResult r;
    for (const auto& p : passages) {
      r.scores.push_back(overlap(question, p.text));
      r.usage.input_tokens += static_cast<std::int64_t>(count_tokens(question) + count_tokens(p.text));
    }
    r.latency_s = rerank_latency(passages.size());
    return r;
  }
};

struct GoldLabel {
  std::string doc_id;  // empty matches any document
  std::set<int> pages;
};

/// Gold-aware scorer: 1 when the passage's page span intersects the gold
/// pages of its question (and the document matches), else 0.
class OracleScorer : public RerankBackend {
 public:
  explicit OracleScorer(std::map<std::string, GoldLabel> gold) : gold_(std::move(gold)) {}

  std::string id() const override { return "mock-oracle-scorer"; }

  double oracle(std::string_view question, const Passage& p) const {
    auto it = gold_.find(std::string(question));
    if (it == gold_.end()) return 0.0;
    const auto& g = it->second;
    if (!g.doc_id.empty() && g.doc_id != p.doc_id) return 0.0;
    auto lo = g.pages.lower_bound(static_cast<int>(p.page_start));
    return lo != g.pages.end() && *lo <= static_cast<int>(p.page_end) ? 1.0 : 0.0;
  }

  ScoreResult score_pairs(std::string_view question, std::span<const Passage> passages) override {
    ScoreResult r;
    for (const auto& p : passages) {
      r.scores.push_back(score_one(question, p));
      r.usage.input_tokens += static_cast<std::int64_t>(count_tokens(question) + count_tokens(p.text));
    }
    r.latency_s = rerank_latency(passages.size());
    return r;
  }

 protected:
  virtual double score_one(std::string_view question, const Passage& p) const { return oracle(question, p); }

 private:
  std::map<std::string, GoldLabel> gold_;
};

/// Oracle score plus Gaussian noise: score = oracle + sigma * z, where z is a
/// standard normal drawn by Box-Muller from two uniforms
///   u1 = (splitmix64(k) >> 11 + 1) / 2^53, u2 = (splitmix64(k + 1) >> 11) / 2^53,
///   k = seed ^ fnv1a64(question) ^ splitmix64(fnv1a64(passage text)).
class NoisyScorer final : public OracleScorer {
 public:
  NoisyScorer(std::map<std::string, GoldLabel> gold, double sigma, std::uint64_t seed)
      : OracleScorer(std::move(gold)), sigma_(sigma), seed_(seed) {}

  std::string id() const override { return "mock-noisy-scorer"; }

  static double gaussian(std::uint64_t key) {
    constexpr double kScale = 1.0 / 9007199254740992.0;  // 2^-53
    const double u1 = static_cast<double>((text::splitmix64(key) >> 11) + 1) * kScale;
    const double u2 = static_cast<double>(text::splitmix64(key + 1) >> 11) * kScale;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 protected:
  double score_one(std::string_view question, const Passage& p) const override {
    const std::uint64_t key = seed_ ^ text::fnv1a64(question) ^ text::splitmix64(text::fnv1a64(p.text));
    return oracle(question, p) + sigma_ * gaussian(key);
  }

 private:
  double sigma_;
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Deterministic LLM simulator
// ---------------------------------------------------------------------------

namespace detail {

inline const std::set<std::string>& stopwords() {
  static const std::set<std::string> kWords = {
      "a",    "about", "an",   "and",  "are",  "as",    "at",   "by",    "did",  "do",    "does", "for",
      "from", "how",   "in",   "is",   "it",   "its",   "of",   "on",    "or",   "the",   "their", "this",
      "to",   "was",   "were", "what", "when", "which", "who",  "with",  "that", "report", "reported", "s"};
  return kWords;
}

inline std::vector<std::string> content_terms(std::string_view s) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (auto& t : text::word_terms(s)) {
    if (!stopwords().count(t) && seen.insert(t).second) out.push_back(std::move(t));
  }
  return out;
}

inline double coverage(const std::vector<std::string>& query_terms, std::string_view passage) {
  if (query_terms.empty()) return 0.0;
  const auto t = text::word_terms(passage);
  const std::set<std::string> ts(t.begin(), t.end());
  std::size_t hit = 0;
  for (const auto& q : query_terms) hit += ts.count(q);
  return static_cast<double>(hit) / static_cast<double>(query_terms.size());
}

inline std::string slot(const CompletionRequest& r, const std::string& name) {
  auto it = r.slots.find(name);
  return it == r.slots.end() ? std::string() : it->second;
}

inline std::vector<std::string> indexed_slots(const CompletionRequest& r, const std::string& prefix) {
  std::vector<std::string> out;
  for (std::size_t i = 0;; ++i) {
    auto it = r.slots.find(prefix + std::to_string(i));
    if (it == r.slots.end()) break;
    out.push_back(it->second);
  }
  return out;
}

inline std::vector<std::string> split_sentences(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    cur.push_back(c == '\n' || c == '\f' ? ' ' : c);
    const bool boundary = (c == '.' || c == '?' || c == '!') && (i + 1 == s.size() || text::is_space(s[i + 1]));
    if (boundary || c == '\n') {
      auto t = text::trim(cur);
      if (!t.empty()) out.emplace_back(t);
      cur.clear();
    }
  }
  auto t = text::trim(cur);
  if (!t.empty()) out.emplace_back(t);
  return out;
}

}  // namespace detail

/// Answers every prompt family deterministically from the request slots:
/// lexical coverage drives grading, node selection and sentence choice;
/// trees come from the heading scanner.
class MockLlm final : public LlmBackend {
 public:
  explicit MockLlm(std::string id = "mock-llm") : id_(std::move(id)) {}

  std::string id() const override { return id_; }

  Completion complete(const CompletionRequest& request) override {
    Completion c;
    c.text = respond(request);
    c.usage.input_tokens = static_cast<std::int64_t>(count_tokens(request.prompt));
    c.usage.output_tokens = static_cast<std::int64_t>(count_tokens(c.text));
    c.latency_s = llm_latency(c.usage);
    return c;
  }

  std::string respond(const CompletionRequest& r) const {
    namespace p = prompts::purpose;
    const std::string_view purpose = r.purpose;
    if (purpose == p::kFormulate) return formulate(r);
    if (purpose == p::kRewrite) return rewrite(r);
    if (purpose == p::kGrade) return grade(r);
    if (purpose == p::kGenerate) return generate(r);
    if (purpose == p::kTreeGeneration || purpose == p::kTreeRepair) return tree(r);
    if (purpose == p::kNodeSelection || purpose == p::kNodeSelectionRepair) return select_nodes(r);
    if (purpose == p::kJudge || purpose == p::kJudgeRepair) return judge(r);
    return "OK";
  }

 private:
  static std::string formulate(const CompletionRequest& r) {
    const std::string question = detail::slot(r, "question");
    const std::string lower = text::to_lower(question);
    const auto qterms = text::word_terms(question);
    const std::set<std::string> qset(qterms.begin(), qterms.end());
    struct Row {
      std::string company, form, period;
    };
    std::vector<Row> rows;
    const std::string catalog = detail::slot(r, "catalog");
    for (auto line : text::split_lines(catalog)) {
      std::vector<std::string> cells;
      std::size_t start = 0;
      std::string l(line);
      for (std::size_t pos; (pos = l.find(" | ", start)) != std::string::npos; start = pos + 3) {
        cells.push_back(l.substr(start, pos - start));
      }
      cells.push_back(l.substr(start));
      if (cells.size() >= 3) rows.push_back({cells[0], cells[1], cells[2]});
    }
    std::optional<std::string> company, form, period;
    for (const auto& row : rows) {
      const auto cterms = text::word_terms(row.company);
      if (!company && !cterms.empty() && qset.count(cterms.front())) company = row.company;
      if (!form && lower.find(text::to_lower(row.form)) != std::string::npos) form = row.form;
      if (!period && lower.find(text::to_lower(row.period)) != std::string::npos) period = row.period;
    }
    auto satisfiable = [&] {
      return std::any_of(rows.begin(), rows.end(), [&](const Row& row) {
        return (!company || row.company == *company) && (!form || row.form == *form) &&
               (!period || row.period == *period);
      });
    };
    if (!satisfiable()) period.reset();
    if (!satisfiable()) form.reset();
    nlohmann::ordered_json call;
    call["query_text"] = question;
    auto& filter = call["filter"] = nlohmann::ordered_json::object();
    if (company) filter["company"] = *company;
    if (form) filter["form_type"] = *form;
    if (period) filter["fiscal_period"] = *period;
    const auto k = detail::slot(r, "k");
    call["k"] = k.empty() ? 5 : std::stoi(k);
    return call.dump();
  }

  static std::string rewrite(const CompletionRequest& r) {
    const auto failed = detail::slot(r, "failed_query");
    auto terms = detail::content_terms(detail::slot(r, "question"));
    std::string q = text::join(terms, " ");
    if (q.empty() || q == failed) q = failed + " financial statements";
    return q;
  }

  static std::string grade(const CompletionRequest& r) {
    const auto terms = detail::content_terms(detail::slot(r, "question"));
    nlohmann::json verdicts = nlohmann::json::array();
    for (const auto& passage : detail::indexed_slots(r, "passage_")) {
      verdicts.push_back(detail::coverage(terms, passage) >= 0.34);
    }
    return nlohmann::json{{"relevant", verdicts}}.dump();
  }

  static std::string generate(const CompletionRequest& r) {
    const auto passages = detail::indexed_slots(r, "context_");
    if (passages.empty()) return "The filings provided do not contain the answer.";
    const auto terms = detail::content_terms(detail::slot(r, "question"));
    double best = -1;
    std::size_t best_i = 0;
    std::string best_sentence;
    for (std::size_t i = 0; i < passages.size(); ++i) {
      for (const auto& s : detail::split_sentences(passages[i])) {
        if (heading_of(s)) continue;
        const double c = detail::coverage(terms, s);
        if (c > best) {
          best = c;
          best_i = i;
          best_sentence = s;
        }
      }
    }
    if (best <= 0) return "The filings provided do not contain the answer.";
    return best_sentence + " [" + std::to_string(best_i + 1) + "]";
  }

  static std::string tree(const CompletionRequest& r) {
    Document doc;
    doc.metadata.doc_id = detail::slot(r, "doc_name");
    doc.pages = split_pages(detail::slot(r, "raw_pages"));
    if (doc.pages.empty()) doc.pages.push_back("");
    auto tree = generate_tree_deterministic(doc);
    if (detail::slot(r, "with_summaries") == "true") {
      std::function<void(std::vector<Node>&)> annotate = [&](std::vector<Node>& nodes) {
        for (auto& n : nodes) {
          std::string body;
          for (int p = n.start_index; p <= n.end_index; ++p) body += doc.page(static_cast<std::size_t>(p)) + "\n";
          auto sentences = detail::split_sentences(body);
          std::string summary;
          for (const auto& s : sentences) {
            if (heading_of(s)) continue;
            summary += (summary.empty() ? "" : " ") + std::string(s);
            if (count_tokens(summary) >= kSummaryTokenCap) break;
          }
          n.summary = truncate_tokens(summary.empty() ? n.title : summary, kSummaryTokenCap);
          annotate(n.nodes);
        }
      };
      annotate(tree.structure);
    }
    return serialize_tree(tree);
  }

  static std::string select_nodes(const CompletionRequest& r) {
    const auto terms = detail::content_terms(detail::slot(r, "question"));
    double best = -1;
    std::string best_id;
    const std::string outline = detail::slot(r, "outline");
    for (auto line : text::split_lines(outline)) {
      auto trimmed = text::trim(line);
      const auto bar = trimmed.find(" | ");
      if (bar == std::string_view::npos) continue;
      const std::string id(trimmed.substr(0, bar));
      const double c = detail::coverage(terms, trimmed.substr(bar));
      if (c > best) {
        best = c;
        best_id = id;
      }
    }
    return nlohmann::json{{"node_ids", best_id.empty() ? nlohmann::json::array() : nlohmann::json::array({best_id})}}
        .dump();
  }

  // Prefers the answer covering more question terms, then the one citing
  // more figures; equal answers tie on every criterion.
  static std::string judge(const CompletionRequest& r) {
    const auto terms = detail::content_terms(detail::slot(r, "question"));
    auto score = [&](const std::string& answer) {
      double digits = 0;
      for (const auto& t : text::word_terms(answer)) {
        if (std::any_of(t.begin(), t.end(), [](char c) { return c >= '0' && c <= '9'; })) digits += 1;
      }
      return detail::coverage(terms, answer) * 100.0 + digits;
    };
    const double a = score(detail::slot(r, "answer_a"));
    const double b = score(detail::slot(r, "answer_b"));
    const char* v = a > b ? "A" : (b > a ? "B" : "tie");
    nlohmann::ordered_json j;
    for (const char* c : {"accuracy", "completeness", "clarity", "conciseness", "relevance", "style", "overall"}) {
      j[c] = v;
    }
    return j.dump();
  }

  std::string id_;
};

// ---------------------------------------------------------------------------
// Scripted LLM
// ---------------------------------------------------------------------------

struct ScriptedReply {
  std::string text;
  std::optional<Usage> usage;  // counted from prompt and text when absent
  std::optional<double> latency_s;

  ScriptedReply() = default;
  ScriptedReply(std::string t, std::optional<Usage> u = std::nullopt, std::optional<double> l = std::nullopt)
      : text(std::move(t)), usage(u), latency_s(l) {}
};

/// Replays registered replies. Lookup order: exact prompt fingerprint
/// (fnv1a64 of the prompt), then the FIFO queue for the request's purpose,
/// then a purpose handler, then the fallback backend. In strict mode an
/// unmatched prompt raises UnscriptedPrompt.
class ScriptedLlm final : public LlmBackend {
 public:
  using Handler = std::function<std::string(const CompletionRequest&)>;

  explicit ScriptedLlm(std::string id = "scripted-llm", bool strict = true) : id_(std::move(id)), strict_(strict) {}

  std::string id() const override { return id_; }

  static std::uint64_t fingerprint(std::string_view prompt) { return text::fnv1a64(prompt); }

  ScriptedLlm& on_prompt(std::string_view prompt, ScriptedReply reply) {
    std::lock_guard lock(mutex_);
    by_fingerprint_[fingerprint(prompt)] = std::move(reply);
    return *this;
  }

  ScriptedLlm& on_fingerprint(std::uint64_t fp, ScriptedReply reply) {
    std::lock_guard lock(mutex_);
    by_fingerprint_[fp] = std::move(reply);
    return *this;
  }

  ScriptedLlm& enqueue(std::string_view purpose, ScriptedReply reply) {
    std::lock_guard lock(mutex_);
    queues_[std::string(purpose)].push_back(std::move(reply));
    return *this;
  }

  ScriptedLlm& handle(std::string_view purpose, Handler handler) {
    std::lock_guard lock(mutex_);
    handlers_[std::string(purpose)] = std::move(handler);
    return *this;
  }

  ScriptedLlm& fallback(std::shared_ptr<LlmBackend> backend) {
    std::lock_guard lock(mutex_);
    fallback_ = std::move(backend);
    return *this;
  }

  /// Prompts seen so far, in call order.
  std::vector<CompletionRequest> requests() const {
    std::lock_guard lock(mutex_);
    return seen_;
  }

  /// Transcript file: [{"prompt"|"fingerprint", "reply", "input_tokens"?, "output_tokens"?, "latency_s"?}].
  /// Entries with only a "purpose" key are queued for that purpose.
  static std::shared_ptr<ScriptedLlm> from_json(const nlohmann::json& j, std::string id = "scripted-llm",
                                                bool strict = true) {
    auto llm = std::make_shared<ScriptedLlm>(std::move(id), strict);
    try {
      for (const auto& e : j.at("entries")) {
        ScriptedReply reply{e.at("reply").get<std::string>(), std::nullopt, std::nullopt};
        if (e.contains("input_tokens") || e.contains("output_tokens")) {
          reply.usage = Usage{e.value("input_tokens", std::int64_t{0}), e.value("output_tokens", std::int64_t{0})};
        }
        if (e.contains("latency_s")) reply.latency_s = e.at("latency_s").get<double>();
        if (e.contains("prompt")) {
          llm->on_prompt(e.at("prompt").get<std::string>(), std::move(reply));
        } else if (e.contains("fingerprint")) {
          llm->on_fingerprint(std::stoull(e.at("fingerprint").get<std::string>(), nullptr, 16), std::move(reply));
        } else {
          llm->enqueue(e.at("purpose").get<std::string>(), std::move(reply));
        }
      }
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorCode::InvalidConfig, std::string("scripted transcript: ") + ex.what());
    }
    return llm;
  }

  Completion complete(const CompletionRequest& request) override {
    std::optional<ScriptedReply> reply;
    Handler handler;
    std::shared_ptr<LlmBackend> fallback;
    {
      std::lock_guard lock(mutex_);
      seen_.push_back(request);
      if (auto it = by_fingerprint_.find(fingerprint(request.prompt)); it != by_fingerprint_.end()) {
        reply = it->second;
      } else if (auto q = queues_.find(request.purpose); q != queues_.end() && !q->second.empty()) {
        reply = std::move(q->second.front());
        q->second.pop_front();
      } else if (auto h = handlers_.find(request.purpose); h != handlers_.end()) {
        handler = h->second;
      } else {
        fallback = fallback_;
      }
    }
    if (!reply && handler) reply = ScriptedReply{handler(request), std::nullopt, std::nullopt};
    if (!reply) {
      if (fallback && !strict_) return fallback->complete(request);
      fail(ErrorCode::UnscriptedPrompt, "no scripted reply for " + request.purpose + " prompt " +
                                            text::hex64(fingerprint(request.prompt)));
    }
    Completion c;
    c.text = reply->text;
    c.usage = reply->usage.value_or(Usage{static_cast<std::int64_t>(count_tokens(request.prompt)),
                                          static_cast<std::int64_t>(count_tokens(reply->text))});
    c.latency_s = reply->latency_s.value_or(llm_latency(c.usage));
    return c;
  }

 private:
  std::string id_;
  bool strict_;
  mutable std::mutex mutex_;
  std::map<std::uint64_t, ScriptedReply> by_fingerprint_;
  std::map<std::string, std::deque<ScriptedReply>> queues_;
  std::map<std::string, Handler> handlers_;
  std::shared_ptr<LlmBackend> fallback_;
  std::vector<CompletionRequest> seen_;
};

// ---------------------------------------------------------------------------
// Failure injection
// ---------------------------------------------------------------------------

/// Throws `failures` transient errors before delegating.
class FlakyLlm final : public LlmBackend {
 public:
  FlakyLlm(std::shared_ptr<LlmBackend> inner, int failures, bool transient = true)
      : inner_(std::move(inner)), remaining_(failures), transient_(transient) {}

  std::string id() const override { return inner_->id(); }
  int calls() const { return calls_; }

  Completion complete(const CompletionRequest& request) override {
    ++calls_;
    if (remaining_.fetch_sub(1) > 0) throw ProviderError("simulated outage", transient_);
    return inner_->complete(request);
  }

 private:
  std::shared_ptr<LlmBackend> inner_;
  std::atomic<int> remaining_;
  std::atomic<int> calls_{0};
  bool transient_;
};

class FlakyEmbedder final : public EmbeddingBackend {
 public:
  FlakyEmbedder(std::shared_ptr<EmbeddingBackend> inner, int failures, bool transient = true)
      : inner_(std::move(inner)), remaining_(failures), transient_(transient) {}

  std::string id() const override { return inner_->id(); }
  std::size_t dimension() const override { return inner_->dimension(); }

  EmbeddingResult embed(std::span<const std::string> texts) override {
    if (remaining_.fetch_sub(1) > 0) throw ProviderError("simulated outage", transient_);
    return inner_->embed(texts);
  }

 private:
  std::shared_ptr<EmbeddingBackend> inner_;
  std::atomic<int> remaining_;
  bool transient_;
};

class FailingScorer final : public RerankBackend {
 public:
  std::string id() const override { return "mock-failing-scorer"; }
  ScoreResult score_pairs(std::string_view, std::span<const Passage>) override {
    throw ProviderError("scorer unavailable", true);
  }
};

}  // namespace finrag::mock
