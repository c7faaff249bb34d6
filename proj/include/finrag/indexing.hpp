#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "finrag/corpus.hpp"
#include "finrag/error.hpp"
#include "finrag/node_tree.hpp"
#include "finrag/providers.hpp"
#include "finrag/vector_index.hpp"

namespace finrag {

struct IndexBuildReport {
  std::size_t documents = 0;
  std::size_t chunks = 0;
  std::size_t embed_calls = 0;
  Usage usage;
};

/// Chunks every document and embeds the chunks in batches. Any provider
/// failure aborts the build; nothing partial is returned.
inline std::pair<VectorIndex, IndexBuildReport> index_documents(const std::vector<Document>& docs,
                                                                const ChunkingConfig& chunking,
                                                                const EmbeddingClient& embedder,
                                                                std::size_t batch = 64) {
  require(batch >= 1, ErrorCode::InvalidConfig, "embedding batch must be >= 1");
  std::vector<EmbeddedChunk> all;
  IndexBuildReport report;
  for (const auto& doc : docs) {
    for (auto& c : chunk_document(doc, chunking)) all.push_back({std::move(c), {}, doc.metadata});
    ++report.documents;
  }
  for (std::size_t i = 0; i < all.size(); i += batch) {
    const std::size_t end = std::min(all.size(), i + batch);
    std::vector<std::string> texts;
    for (std::size_t j = i; j < end; ++j) texts.push_back(all[j].chunk.text);
    auto r = embedder.embed(texts, "embed_corpus");
    require(r.vectors.size() == texts.size(), ErrorCode::DimensionMismatch, "embedder returned the wrong count");
    for (std::size_t j = i; j < end; ++j) all[j].vector = std::move(r.vectors[j - i]);
    report.usage += r.usage;
    ++report.embed_calls;
  }
  report.chunks = all.size();
  return {VectorIndex::build(std::move(all), chunking.tokenizer_id), report};
}

struct TreeBuild {
  std::map<std::string, NodeTree> trees;
  std::map<std::string, TreeGenReport> reports;

  std::int64_t input_tokens() const {
    std::int64_t t = 0;
    for (const auto& [_, r] : reports) t += r.input_tokens;
    return t;
  }
  std::int64_t output_tokens() const {
    std::int64_t t = 0;
    for (const auto& [_, r] : reports) t += r.output_tokens;
    return t;
  }
};

/// One tree per document, through the provider or the deterministic
/// heading scanner. A failure on any document aborts the build.
inline TreeBuild build_trees(const std::vector<Document>& docs, const LlmClient* llm, bool with_summaries,
                             bool deterministic, const PriceTable* prices = nullptr) {
  require(deterministic || llm != nullptr, ErrorCode::ConfigError, "tree generation needs an LLM or --deterministic");
  TreeBuild out;
  for (const auto& doc : docs) {
    if (deterministic) {
      TreeGenReport r;
      r.with_summaries = false;
      r.deterministic_fallback = true;
      out.trees[doc.doc_id()] = generate_tree_deterministic(doc);
      out.reports[doc.doc_id()] = r;
    } else {
      auto [tree, report] = generate_tree(doc, *llm, with_summaries, prices);
      out.trees[doc.doc_id()] = std::move(tree);
      out.reports[doc.doc_id()] = report;
    }
  }
  return out;
}

}  // namespace finrag
