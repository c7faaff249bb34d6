#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "finrag/corpus.hpp"
#include "finrag/error.hpp"
#include "finrag/tokenizer.hpp"

namespace finrag {

// ---------------------------------------------------------------------------
// Metadata filters
// ---------------------------------------------------------------------------

enum class MetadataField { Company, FormType, FiscalPeriod, FilingDate };

constexpr std::string_view to_string(MetadataField f) noexcept {
  switch (f) {
    case MetadataField::Company: return "company";
    case MetadataField::FormType: return "form_type";
    case MetadataField::FiscalPeriod: return "fiscal_period";
    case MetadataField::FilingDate: return "filing_date";
  }
  return "?";
}

inline std::optional<MetadataField> parse_metadata_field(std::string_view s) noexcept {
  if (s == "company") return MetadataField::Company;
  if (s == "form_type") return MetadataField::FormType;
  if (s == "fiscal_period") return MetadataField::FiscalPeriod;
  if (s == "filing_date") return MetadataField::FilingDate;
  return std::nullopt;
}

inline std::string field_value(const FilingMetadata& m, MetadataField f) {
  switch (f) {
    case MetadataField::Company: return m.company;
    case MetadataField::FormType: return std::string(to_string(m.form_type));
    case MetadataField::FiscalPeriod: return m.fiscal_period;
    case MetadataField::FilingDate: return m.filing_date;
  }
  return {};
}

struct EqualsPredicate {
  MetadataField field;
  std::string value;

  friend bool operator==(const EqualsPredicate&, const EqualsPredicate&) = default;
};

/// Inclusive range over filing_date. ISO dates order lexicographically.
struct DateRangePredicate {
  std::optional<std::string> from;
  std::optional<std::string> to;

  friend bool operator==(const DateRangePredicate&, const DateRangePredicate&) = default;
};

using Predicate = std::variant<EqualsPredicate, DateRangePredicate>;

/// Conjunction of predicates; the empty filter accepts everything.
class MetadataFilter {
 public:
  MetadataFilter() = default;

  MetadataFilter& equals(MetadataField field, std::string value) {
    predicates_.push_back(EqualsPredicate{field, std::move(value)});
    return *this;
  }

  MetadataFilter& date_range(std::optional<std::string> from, std::optional<std::string> to) {
    for (const auto* d : {&from, &to}) {
      if (*d && !is_iso_date(**d)) fail(ErrorCode::InvalidConfig, "filter date is not ISO-8601: " + **d);
    }
    predicates_.push_back(DateRangePredicate{std::move(from), std::move(to)});
    return *this;
  }

  bool empty() const noexcept { return predicates_.empty(); }
  const std::vector<Predicate>& predicates() const noexcept { return predicates_; }

  bool matches(const FilingMetadata& m) const {
    for (const auto& p : predicates_) {
      if (const auto* eq = std::get_if<EqualsPredicate>(&p)) {
        if (field_value(m, eq->field) != eq->value) return false;
      } else {
        const auto& range = std::get<DateRangePredicate>(p);
        if (range.from && m.filing_date < *range.from) return false;
        if (range.to && m.filing_date > *range.to) return false;
      }
    }
    return true;
  }

  /// {"company": "...", "form_type": "10-K", "filing_date": {"from": ..., "to": ...}}
  /// A plain string for filing_date means equality.
  static MetadataFilter from_json(const nlohmann::json& j) {
    MetadataFilter filter;
    if (j.is_null()) return filter;
    if (!j.is_object()) fail(ErrorCode::InvalidConfig, "filter must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      auto field = parse_metadata_field(key);
      if (!field) fail(ErrorCode::UnknownFilterField, "'" + key + "' is not a metadata field");
      if (*field == MetadataField::FilingDate && value.is_object()) {
        std::optional<std::string> from, to;
        for (const auto& [bound, v] : value.items()) {
          if (!v.is_string() || (bound != "from" && bound != "to")) {
            fail(ErrorCode::InvalidConfig, "filing_date range takes string 'from'/'to' bounds");
          }
          (bound == "from" ? from : to) = v.get<std::string>();
        }
        filter.date_range(std::move(from), std::move(to));
      } else if (value.is_string()) {
        filter.equals(*field, value.get<std::string>());
      } else {
        fail(ErrorCode::InvalidConfig, "filter value for '" + key + "' must be a string");
      }
    }
    return filter;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& p : predicates_) {
      if (const auto* eq = std::get_if<EqualsPredicate>(&p)) {
        j[std::string(to_string(eq->field))] = eq->value;
      } else {
        const auto& r = std::get<DateRangePredicate>(p);
        nlohmann::ordered_json range = nlohmann::ordered_json::object();
        if (r.from) range["from"] = *r.from;
        if (r.to) range["to"] = *r.to;
        j["filing_date"] = range;
      }
    }
    return j;
  }

  /// Conjunction of both filters.
  MetadataFilter operator&(const MetadataFilter& other) const {
    MetadataFilter out = *this;
    out.predicates_.insert(out.predicates_.end(), other.predicates_.begin(), other.predicates_.end());
    return out;
  }

 private:
  std::vector<Predicate> predicates_;
};

// ---------------------------------------------------------------------------
// Hits
// ---------------------------------------------------------------------------

enum class Stage { Dense, Lexical, Fused, Reranked };

constexpr std::string_view to_string(Stage s) noexcept {
  switch (s) {
    case Stage::Dense: return "dense";
    case Stage::Lexical: return "lexical";
    case Stage::Fused: return "fused";
    case Stage::Reranked: return "reranked";
  }
  return "?";
}

struct ScoredHit {
  ChunkRef chunk;
  std::string text;
  double score = 0.0;
  Stage stage = Stage::Dense;
  std::size_t rank = 0;  // 1-based

  friend bool operator==(const ScoredHit&, const ScoredHit&) = default;
};

/// Sorts by score descending then chunk_id ascending and assigns ranks 1..n.
inline void rank_hits(std::vector<ScoredHit>& hits, std::size_t k) {
  auto order = [](const ScoredHit& a, const ScoredHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.chunk.chunk_id < b.chunk.chunk_id;
  };
  if (hits.size() > k) {
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), order);
    hits.resize(k);
  } else {
    std::sort(hits.begin(), hits.end(), order);
  }
  for (std::size_t i = 0; i < hits.size(); ++i) hits[i].rank = i + 1;
}

// ---------------------------------------------------------------------------
// Index
// ---------------------------------------------------------------------------

struct EmbeddedChunk {
  Chunk chunk;
  std::vector<double> vector;
  FilingMetadata metadata;
};

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

struct HybridParams {
  double rrf_constant = 60.0;
  std::size_t min_candidate_depth = 50;
};

inline std::vector<std::string> lexical_terms(std::string_view text, std::string_view tokenizer_id) {
  std::vector<std::string> terms;
  for (const auto& span : tokenize_spans(text, tokenizer_id)) {
    const auto token = text.substr(span.begin, span.end - span.begin);
    if (std::any_of(token.begin(), token.end(), [](char c) { return text::is_alnum(static_cast<unsigned char>(c)); })) {
      terms.push_back(text::to_lower(token));
    }
  }
  return terms;
}

inline constexpr std::string_view kIndexFormat = "finrag-vector-index";
inline constexpr int kIndexVersion = 1;

/// Exact in-process hybrid index. Immutable after `build`; every query method
/// is const and safe to call concurrently.
class VectorIndex {
 public:
  VectorIndex() = default;

  static VectorIndex build(std::vector<EmbeddedChunk> chunks,
                           std::string tokenizer_id = std::string(kDefaultTokenizer),
                           Bm25Params bm25 = {}) {
    VectorIndex index;
    index.tokenizer_id_ = std::move(tokenizer_id);
    index.bm25_ = bm25;
    if (!TokenizerRegistry::instance().contains(index.tokenizer_id_)) {
      fail(ErrorCode::UnknownTokenizer, "tokenizer '" + index.tokenizer_id_ + "' is not registered");
    }
    if (!chunks.empty()) index.dimension_ = chunks.front().vector.size();
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      const auto& c = chunks[i];
      if (c.vector.size() != index.dimension_ || index.dimension_ == 0) {
        fail(ErrorCode::DimensionMismatch, "chunk '" + c.chunk.chunk_id + "' has dimension " +
                                               std::to_string(c.vector.size()) + ", expected " +
                                               std::to_string(index.dimension_));
      }
      double norm = 0;
      for (double v : c.vector) norm += v * v;
      if (std::abs(std::sqrt(norm) - 1.0) > 1e-6) {
        fail(ErrorCode::PreconditionViolated, "chunk '" + c.chunk.chunk_id + "' vector is not unit-norm");
      }
      if (!index.by_id_.emplace(c.chunk.chunk_id, i).second) {
        fail(ErrorCode::DuplicateChunk, "duplicate chunk_ref '" + c.chunk.chunk_id + "'");
      }
    }
    index.chunks_ = std::move(chunks);
    index.build_lexical();
    return index;
  }

  std::size_t size() const noexcept { return chunks_.size(); }
  bool empty() const noexcept { return chunks_.empty(); }
  std::size_t dimension() const noexcept { return dimension_; }
  const std::string& tokenizer_id() const noexcept { return tokenizer_id_; }
  const Bm25Params& bm25_params() const noexcept { return bm25_; }
  const std::vector<EmbeddedChunk>& chunks() const noexcept { return chunks_; }

  const EmbeddedChunk* find(std::string_view chunk_id) const {
    auto it = by_id_.find(std::string(chunk_id));
    return it == by_id_.end() ? nullptr : &chunks_[it->second];
  }

  /// Cosine similarity against every chunk passing `filter`.
  std::vector<ScoredHit> dense_search(std::span<const double> query, std::size_t k,
                                      const MetadataFilter& filter = {}) const {
    if (chunks_.empty() || k == 0) return {};
    if (query.size() != dimension_) {
      fail(ErrorCode::DimensionMismatch, "query has dimension " + std::to_string(query.size()) +
                                             ", index has " + std::to_string(dimension_));
    }
    double qnorm = 0;
    for (double v : query) qnorm += v * v;
    qnorm = std::sqrt(qnorm);
    std::vector<ScoredHit> hits;
    for (const auto& c : chunks_) {
      if (!filter.matches(c.metadata)) continue;
      double dot = 0;
      for (std::size_t d = 0; d < dimension_; ++d) dot += c.vector[d] * query[d];
      hits.push_back(make_hit(c, qnorm > 0 ? dot / qnorm : 0.0, Stage::Dense));
    }
    rank_hits(hits, k);
    return hits;
  }

  /// Okapi BM25 over distinct query terms with idf = ln(1 + (N - df + 0.5) / (df + 0.5)).
  /// Collection statistics span the whole index; the filter only restricts
  /// which chunks are returned. Chunks scoring zero are never returned.
  std::vector<ScoredHit> lexical_search(std::string_view query, std::size_t k,
                                        const MetadataFilter& filter = {}) const {
    if (chunks_.empty() || k == 0) return {};
    auto terms = lexical_terms(query, tokenizer_id_);
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
    const double n = static_cast<double>(chunks_.size());
    std::vector<double> scores(chunks_.size(), 0.0);
    std::vector<bool> touched(chunks_.size(), false);
    for (const auto& term : terms) {
      auto it = postings_.find(term);
      if (it == postings_.end()) continue;
      const double df = static_cast<double>(it->second.size());
      const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
      for (const auto& [doc, tf_count] : it->second) {
        const double tf = static_cast<double>(tf_count);
        const double dl = static_cast<double>(doc_lengths_[doc]);
        scores[doc] += idf * tf * (bm25_.k1 + 1.0) / (tf + bm25_.k1 * (1.0 - bm25_.b + bm25_.b * dl / avg_doc_length_));
        touched[doc] = true;
      }
    }
    std::vector<ScoredHit> hits;
    for (std::size_t i = 0; i < chunks_.size(); ++i) {
      if (touched[i] && scores[i] > 0.0 && filter.matches(chunks_[i].metadata)) {
        hits.push_back(make_hit(chunks_[i], scores[i], Stage::Lexical));
      }
    }
    rank_hits(hits, k);
    return hits;
  }

  /// Reciprocal-rank fusion of dense and lexical lists, each retrieved to
  /// depth max(k, min_candidate_depth): score(c) = sum over lists of 1 / (C + rank).
  std::vector<ScoredHit> hybrid_search(std::string_view query_text, std::span<const double> query_vector,
                                       std::size_t k, const MetadataFilter& filter = {},
                                       const HybridParams& params = {}) const {
    const std::size_t depth = std::max(k, params.min_candidate_depth);
    auto dense = dense_search(query_vector, depth, filter);
    auto lexical = lexical_search(query_text, depth, filter);
    return fuse({dense, lexical}, k, params.rrf_constant);
  }

  static std::vector<ScoredHit> fuse(std::initializer_list<std::reference_wrapper<const std::vector<ScoredHit>>> lists,
                                     std::size_t k, double rrf_constant = 60.0) {
    std::unordered_map<std::string, ScoredHit> fused;
    for (const auto& list : lists) {
      for (const auto& hit : list.get()) {
        auto [it, inserted] = fused.try_emplace(hit.chunk.chunk_id, hit);
        if (inserted) it->second.score = 0.0;
        it->second.score += 1.0 / (rrf_constant + static_cast<double>(hit.rank));
        it->second.stage = Stage::Fused;
      }
    }
    std::vector<ScoredHit> hits;
    hits.reserve(fused.size());
    for (auto& [_, hit] : fused) hits.push_back(std::move(hit));
    rank_hits(hits, k);
    return hits;
  }

  // -- persistence ----------------------------------------------------------

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["format"] = kIndexFormat;
    j["version"] = kIndexVersion;
    j["dimension"] = dimension_;
    j["tokenizer_id"] = tokenizer_id_;
    j["chunk_count"] = chunks_.size();
    j["bm25"] = {{"k1", bm25_.k1}, {"b", bm25_.b}};
    auto& arr = j["chunks"] = nlohmann::ordered_json::array();
    for (const auto& c : chunks_) {
      nlohmann::ordered_json e;
      e["chunk_id"] = c.chunk.chunk_id;
      e["doc_id"] = c.chunk.doc_id;
      e["index"] = c.chunk.index;
      e["token_start"] = c.chunk.token_start;
      e["token_end"] = c.chunk.token_end;
      e["page_start"] = c.chunk.page_start;
      e["page_end"] = c.chunk.page_end;
      e["text"] = c.chunk.text;
      e["metadata"] = metadata_to_json(c.metadata);
      e["vector"] = c.vector;
      arr.push_back(std::move(e));
    }
    return j;
  }

  static VectorIndex from_json(const nlohmann::json& j) {
    try {
      if (j.at("format") != kIndexFormat) fail(ErrorCode::MalformedIndex, "not a finrag index file");
      if (j.at("version").get<int>() != kIndexVersion) {
        fail(ErrorCode::MalformedIndex, "unsupported index version " + j.at("version").dump());
      }
      std::vector<EmbeddedChunk> chunks;
      for (const auto& e : j.at("chunks")) {
        EmbeddedChunk c;
        c.chunk.chunk_id = e.at("chunk_id").get<std::string>();
        c.chunk.doc_id = e.at("doc_id").get<std::string>();
        c.chunk.index = e.at("index").get<std::size_t>();
        c.chunk.token_start = e.at("token_start").get<std::size_t>();
        c.chunk.token_end = e.at("token_end").get<std::size_t>();
        c.chunk.page_start = e.at("page_start").get<std::uint32_t>();
        c.chunk.page_end = e.at("page_end").get<std::uint32_t>();
        c.chunk.text = e.at("text").get<std::string>();
        c.metadata = metadata_from_json(e.at("metadata"));
        c.vector = e.at("vector").get<std::vector<double>>();
        chunks.push_back(std::move(c));
      }
      if (chunks.size() != j.at("chunk_count").get<std::size_t>()) {
        fail(ErrorCode::MalformedIndex, "chunk_count header does not match payload");
      }
      auto index = build(std::move(chunks), j.at("tokenizer_id").get<std::string>(),
                         {j.at("bm25").at("k1").get<double>(), j.at("bm25").at("b").get<double>()});
      if (!index.empty() && index.dimension() != j.at("dimension").get<std::size_t>()) {
        fail(ErrorCode::MalformedIndex, "dimension header does not match payload");
      }
      return index;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::MalformedIndex, e.what());
    }
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::MissingFile, "cannot write " + path.string());
    out << to_json().dump() << '\n';
  }

  static VectorIndex load(const std::filesystem::path& path) {
    try {
      return from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::MalformedIndex, path.string() + ": " + e.what());
    }
  }

 private:
  static ScoredHit make_hit(const EmbeddedChunk& c, double score, Stage stage) {
    return ScoredHit{c.chunk.ref(), c.chunk.text, score, stage, 0};
  }

  void build_lexical() {
    doc_lengths_.assign(chunks_.size(), 0);
    double total = 0;
    for (std::size_t i = 0; i < chunks_.size(); ++i) {
      std::unordered_map<std::string, std::size_t> tf;
      auto terms = lexical_terms(chunks_[i].chunk.text, tokenizer_id_);
      for (auto& t : terms) ++tf[std::move(t)];
      doc_lengths_[i] = terms.size();
      total += static_cast<double>(terms.size());
      for (auto& [term, count] : tf) postings_[term].emplace_back(i, count);
    }
    avg_doc_length_ = chunks_.empty() ? 0.0 : total / static_cast<double>(chunks_.size());
    if (avg_doc_length_ == 0.0) avg_doc_length_ = 1.0;
  }

  std::vector<EmbeddedChunk> chunks_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::size_t dimension_ = 0;
  std::string tokenizer_id_ = std::string(kDefaultTokenizer);
  Bm25Params bm25_;
  std::unordered_map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> postings_;
  std::vector<std::size_t> doc_lengths_;
  double avg_doc_length_ = 1.0;
};

}  // namespace finrag
