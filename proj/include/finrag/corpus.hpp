#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "finrag/error.hpp"
#include "finrag/tokenizer.hpp"

namespace finrag {

enum class FormType { Form10K, Form10Q, Form8K };

constexpr std::string_view to_string(FormType f) noexcept {
  switch (f) {
    case FormType::Form10K: return "10-K";
    case FormType::Form10Q: return "10-Q";
    case FormType::Form8K: return "8-K";
  }
  return "?";
}

inline std::optional<FormType> parse_form_type(std::string_view s) noexcept {
  if (s == "10-K") return FormType::Form10K;
  if (s == "10-Q") return FormType::Form10Q;
  if (s == "8-K") return FormType::Form8K;
  return std::nullopt;
}

/// Strict YYYY-MM-DD check (calendar months, days 1..31 bounded per month).
inline bool is_iso_date(std::string_view s) noexcept {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u}) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  const int year = (s[0] - '0') * 1000 + (s[1] - '0') * 100 + (s[2] - '0') * 10 + (s[3] - '0');
  const int month = (s[5] - '0') * 10 + (s[6] - '0');
  const int day = (s[8] - '0') * 10 + (s[9] - '0');
  if (month < 1 || month > 12 || day < 1) return false;
  static constexpr int kDays[] = {31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (day > kDays[month - 1]) return false;
  const bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
  return !(month == 2 && day == 29 && !leap);
}

struct FilingMetadata {
  std::string doc_id;
  std::string company;
  FormType form_type = FormType::Form10K;
  std::string fiscal_period;
  std::string filing_date;  // ISO-8601
  // Optional token count declared by the fixture author; ingest reports the
  // measured count next to it.
  std::optional<std::size_t> declared_tokens;

  friend bool operator==(const FilingMetadata&, const FilingMetadata&) = default;
};

inline nlohmann::ordered_json metadata_to_json(const FilingMetadata& m) {
  nlohmann::ordered_json j;
  j["doc_id"] = m.doc_id;
  j["company"] = m.company;
  j["form_type"] = std::string(to_string(m.form_type));
  j["fiscal_period"] = m.fiscal_period;
  j["filing_date"] = m.filing_date;
  if (m.declared_tokens) j["declared_tokens"] = *m.declared_tokens;
  return j;
}

/// Parses a metadata sidecar. All five filing fields are required strings;
/// `declared_tokens` is the only optional key and anything else is rejected.
inline FilingMetadata metadata_from_json(const nlohmann::json& j) {
  auto bad = [](const std::string& why) { fail(ErrorCode::MalformedMetadata, why); };
  if (!j.is_object()) bad("sidecar must be a JSON object");
  static const std::set<std::string> kKnown = {"doc_id",        "company",     "form_type",
                                               "fiscal_period", "filing_date", "declared_tokens"};
  for (const auto& [key, _] : j.items()) {
    if (!kKnown.count(key)) bad("unknown sidecar field '" + key + "'");
  }
  auto str = [&](const char* key) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) bad(std::string("missing string field '") + key + "'");
    std::string v = it->get<std::string>();
    if (v.empty()) bad(std::string("empty field '") + key + "'");
    return v;
  };
  FilingMetadata m;
  m.doc_id = str("doc_id");
  m.company = str("company");
  const auto form = str("form_type");
  auto parsed = parse_form_type(form);
  if (!parsed) bad("form_type must be one of 10-K, 10-Q, 8-K (got '" + form + "')");
  m.form_type = *parsed;
  m.fiscal_period = str("fiscal_period");
  m.filing_date = str("filing_date");
  if (!is_iso_date(m.filing_date)) bad("filing_date is not an ISO-8601 date: " + m.filing_date);
  if (auto it = j.find("declared_tokens"); it != j.end()) {
    if (!it->is_number_unsigned()) bad("declared_tokens must be a non-negative integer");
    m.declared_tokens = it->get<std::size_t>();
  }
  return m;
}

struct Document {
  FilingMetadata metadata;
  std::vector<std::string> pages;  // pages[0] is page 1

  const std::string& doc_id() const noexcept { return metadata.doc_id; }
  std::size_t page_count() const noexcept { return pages.size(); }
  const std::string& page(std::size_t number) const { return pages.at(number - 1); }
};

inline constexpr char kPageDelimiter = '\f';

/// Splits extracted text on form feeds. A single trailing delimiter (as
/// written by most extractors after the last page) does not open a page.
inline std::vector<std::string> split_pages(std::string_view text) {
  if (!text.empty() && text.back() == kPageDelimiter) text.remove_suffix(1);
  std::vector<std::string> pages;
  std::size_t start = 0;
  while (true) {
    auto pos = text.find(kPageDelimiter, start);
    if (pos == std::string_view::npos) {
      pages.emplace_back(text.substr(start));
      break;
    }
    pages.emplace_back(text.substr(start, pos - start));
    start = pos + 1;
  }
  return pages;
}

inline Document make_document(FilingMetadata metadata, std::string_view text) {
  if (text::trim(text).empty()) fail(ErrorCode::EmptyDocument, "document '" + metadata.doc_id + "' has no text");
  return Document{std::move(metadata), split_pages(text)};
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::MissingFile, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& text_path) {
  auto p = text_path;
  p.replace_extension(".json");
  return p;
}

inline FilingMetadata load_metadata(const std::filesystem::path& sidecar) {
  if (!std::filesystem::exists(sidecar)) fail(ErrorCode::MissingFile, "missing metadata sidecar " + sidecar.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(sidecar));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::MalformedMetadata, sidecar.string() + ": " + e.what());
  }
  return metadata_from_json(j);
}

inline Document ingest_document(const std::filesystem::path& path, FilingMetadata metadata) {
  if (!std::filesystem::is_regular_file(path)) fail(ErrorCode::MissingFile, "no such file " + path.string());
  return make_document(std::move(metadata), read_file(path));
}

/// Reads `<name>.txt` and its `<name>.json` sidecar.
inline Document ingest_document(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) fail(ErrorCode::MissingFile, "no such file " + path.string());
  return ingest_document(path, load_metadata(sidecar_path(path)));
}

struct IngestFailure {
  std::filesystem::path path;
  std::string message;
};

struct Corpus {
  std::vector<Document> documents;  // sorted by doc_id
  std::vector<IngestFailure> failures;

  const Document* find(std::string_view doc_id) const {
    for (const auto& d : documents) {
      if (d.doc_id() == doc_id) return &d;
    }
    return nullptr;
  }
};

/// Ingests every `*.txt` in a directory. Per-file errors are collected rather
/// than thrown; duplicate doc_ids are reported as failures of the later file.
inline Corpus load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorCode::MissingFile, "corpus directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  Corpus corpus;
  std::set<std::string> seen;
  for (const auto& f : files) {
    try {
      auto doc = ingest_document(f);
      if (!seen.insert(doc.doc_id()).second) {
        fail(ErrorCode::MalformedMetadata, "duplicate doc_id '" + doc.doc_id() + "'");
      }
      corpus.documents.push_back(std::move(doc));
    } catch (const Error& e) {
      corpus.failures.push_back({f, e.what()});
    }
  }
  std::sort(corpus.documents.begin(), corpus.documents.end(),
            [](const Document& a, const Document& b) { return a.doc_id() < b.doc_id(); });
  return corpus;
}

// ---------------------------------------------------------------------------
// Tokens and chunking
// ---------------------------------------------------------------------------

/// Token spans of a whole document, each tagged with its 1-based page. Page
/// boundaries always split tokens.
struct DocumentTokens {
  std::vector<TokenSpan> spans;      // offsets within their page
  std::vector<std::uint32_t> pages;  // page number per token

  std::size_t size() const noexcept { return spans.size(); }
};

inline DocumentTokens tokenize_document(const Document& doc,
                                        std::string_view tokenizer_id = kDefaultTokenizer) {
  auto fn = TokenizerRegistry::instance().get(tokenizer_id);
  DocumentTokens out;
  for (std::size_t p = 0; p < doc.pages.size(); ++p) {
    auto spans = fn(doc.pages[p]);
    out.spans.insert(out.spans.end(), spans.begin(), spans.end());
    out.pages.insert(out.pages.end(), spans.size(), static_cast<std::uint32_t>(p + 1));
  }
  return out;
}

struct ChunkingConfig {
  std::size_t chunk_size = 512;
  std::size_t overlap = 50;
  std::string tokenizer_id = std::string(kDefaultTokenizer);

  std::size_t stride() const noexcept { return chunk_size - overlap; }

  void validate() const {
    require(chunk_size > 0, ErrorCode::InvalidConfig, "chunk_size must be positive");
    require(overlap < chunk_size, ErrorCode::InvalidConfig, "overlap must be smaller than chunk_size");
    require(TokenizerRegistry::instance().contains(tokenizer_id), ErrorCode::UnknownTokenizer,
            "tokenizer '" + tokenizer_id + "' is not registered");
  }
};

/// Half-open token interval [token_start, token_end).
struct ChunkWindow {
  std::size_t token_start = 0;
  std::size_t token_end = 0;

  friend bool operator==(const ChunkWindow&, const ChunkWindow&) = default;
};

/// 1 if N <= size, else ceil((N - size) / stride) + 1; 0 for an empty input.
inline std::size_t expected_chunk_count(std::size_t total_tokens, const ChunkingConfig& cfg) {
  if (total_tokens == 0) return 0;
  if (total_tokens <= cfg.chunk_size) return 1;
  const std::size_t stride = cfg.stride();
  return (total_tokens - cfg.chunk_size + stride - 1) / stride + 1;
}

/// Sliding windows of `chunk_size` tokens advancing by `stride`. The final
/// window is kept even when shorter than `chunk_size`.
inline std::vector<ChunkWindow> plan_windows(std::size_t total_tokens, const ChunkingConfig& cfg) {
  std::vector<ChunkWindow> windows;
  if (total_tokens == 0) return windows;
  windows.reserve(expected_chunk_count(total_tokens, cfg));
  for (std::size_t start = 0;; start += cfg.stride()) {
    const std::size_t end = std::min(start + cfg.chunk_size, total_tokens);
    windows.push_back({start, end});
    if (end == total_tokens) break;
  }
  return windows;
}

/// Stable identity of a chunk, shared by every retrieval stage.
struct ChunkRef {
  std::string chunk_id;
  std::string doc_id;
  std::size_t index = 0;
  std::uint32_t page_start = 0;
  std::uint32_t page_end = 0;

  friend bool operator==(const ChunkRef&, const ChunkRef&) = default;
};

inline std::string make_chunk_id(std::string_view doc_id, std::size_t index) {
  return std::string(doc_id) + ":" + std::to_string(index);
}

struct Chunk {
  std::string chunk_id;
  std::string doc_id;
  std::size_t index = 0;
  std::size_t token_start = 0;
  std::size_t token_end = 0;
  std::string text;
  std::uint32_t page_start = 0;
  std::uint32_t page_end = 0;

  ChunkRef ref() const { return {chunk_id, doc_id, index, page_start, page_end}; }

  friend bool operator==(const Chunk&, const Chunk&) = default;
};

/// Chunk text is the original page text from the window's first token to its
/// last token; pieces from different pages are joined with '\n'.
inline std::vector<Chunk> chunk_document(const Document& doc, const DocumentTokens& tokens,
                                         const ChunkingConfig& cfg) {
  cfg.validate();
  if (tokens.size() == 0) fail(ErrorCode::EmptyDocument, "document '" + doc.doc_id() + "' has no tokens");
  const auto windows = plan_windows(tokens.size(), cfg);
  std::vector<Chunk> chunks;
  chunks.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto [start, end] = windows[i];
    Chunk c;
    c.chunk_id = make_chunk_id(doc.doc_id(), i);
    c.doc_id = doc.doc_id();
    c.index = i;
    c.token_start = start;
    c.token_end = end;
    c.page_start = tokens.pages[start];
    c.page_end = tokens.pages[end - 1];
    std::size_t t = start;
    while (t < end) {
      const auto page = tokens.pages[t];
      std::size_t last = t;
      while (last + 1 < end && tokens.pages[last + 1] == page) ++last;
      const auto& page_text = doc.pages[page - 1];
      if (t != start) c.text.push_back('\n');
      c.text.append(page_text, tokens.spans[t].begin, tokens.spans[last].end - tokens.spans[t].begin);
      t = last + 1;
    }
    chunks.push_back(std::move(c));
  }
  return chunks;
}

inline std::vector<Chunk> chunk_document(const Document& doc, const ChunkingConfig& cfg = {}) {
  cfg.validate();
  return chunk_document(doc, tokenize_document(doc, cfg.tokenizer_id), cfg);
}

}  // namespace finrag
