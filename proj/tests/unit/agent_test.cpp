#include <gtest/gtest.h>

#include "finrag/agent.hpp"
#include "finrag/indexing.hpp"
#include "finrag/mock_providers.hpp"
#include "support/trees.hpp"

using namespace finrag;

namespace {

Document acme() {
  FilingMetadata m{"acme-10k-2023", "Acme Corporation", FormType::Form10K, "FY2023", "2024-02-15", std::nullopt};
  return make_document(m,
                       "ITEM 1. BUSINESS\nAcme Corporation designs industrial robots for warehouses.\f"
                       "ITEM 7. MANAGEMENT DISCUSSION\nTotal revenue in fiscal 2023 was $4.2 billion, up 8 percent.\f"
                       "Gross margin improved to 41 percent on lower component costs.\f"
                       "ITEM 8. FINANCIAL STATEMENTS\nNet income was $310 million for fiscal 2023.\f"
                       "ITEM 1A. RISK FACTORS\nSupply chain disruption could delay robot deliveries.");
}

Document globex() {
  FilingMetadata m{"globex-10q-2024q1", "Globex Inc", FormType::Form10Q, "Q1 2024", "2024-05-01", std::nullopt};
  return make_document(m,
                       "PART I. FINANCIAL INFORMATION\nGlobex quarterly revenue was $900 million.\f"
                       "Globex opened two new data centers during the quarter.");
}

ClientOptions fast() {
  ClientOptions o;
  o.retry = RetryPolicy::immediate();
  return o;
}

struct World {
  std::vector<Document> docs = {acme(), globex()};
  std::shared_ptr<TranscriptLog> log = std::make_shared<TranscriptLog>();
  EmbeddingClient embedder{std::make_shared<mock::HashEmbedder>(), log, fast()};
  VectorIndex index;
  InMemoryChunkStore store;
  KnowledgeBase kb;
  VirtualClock clock;

  World() {
    ChunkingConfig chunking;
    chunking.chunk_size = 16;
    chunking.overlap = 2;
    index = index_documents(docs, chunking, embedder).first;
    store = InMemoryChunkStore::from_index(index);
    for (const auto& d : docs) {
      kb.catalog.push_back(d.metadata);
      kb.documents[d.doc_id()] = &d;
    }
    kb.index = &index;
    kb.store = &store;
  }

  AgentProviders providers(const LlmClient& llm, const RerankClient* reranker = nullptr) const {
    return {&llm, &embedder, reranker};
  }
};

std::size_t count_stage(const Trace& t, std::string_view stage) {
  std::size_t n = 0;
  for (const auto& r : t.records) n += r.stage == stage;
  return n;
}

std::size_t purpose_calls(const mock::ScriptedLlm& llm, std::string_view purpose) {
  std::size_t n = 0;
  for (const auto& r : llm.requests()) n += r.purpose == purpose;
  return n;
}

std::string all_false(const CompletionRequest& r) {
  std::string s = "{\"relevant\": [";
  for (std::size_t i = 0; r.slots.count("passage_" + std::to_string(i)); ++i) s += i ? ", false" : "false";
  return s + "]}";
}

}  // namespace

TEST(AgentConfig, Validation) {
  AgentConfig c;
  EXPECT_NO_THROW(c.validate());
  c.stages = {PipelineStage::Rerank};
  EXPECT_THROW(c.validate(), Error);
  c.stages = {PipelineStage::Hybrid, PipelineStage::TreeTraverse};
  EXPECT_THROW(c.validate(), Error);
  c.stages = {PipelineStage::Hybrid, PipelineStage::Rerank};
  c.rerank = {5, 10};
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.relevance_threshold = 1.5;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_EQ(parse_pipeline_stage("expand"), PipelineStage::Expand);
  EXPECT_THROW(parse_pipeline_stage("bogus"), Error);
}

TEST(ToolCall, ParsesAndFallsBack) {
  auto c = parse_tool_call(R"({"query_text":"revenue","filter":{"company":"Acme Corporation"},"k":3})", "q", 5);
  EXPECT_EQ(c.query_text, "revenue");
  EXPECT_EQ(c.k, 3u);
  EXPECT_FALSE(c.filter.empty());
  auto bad = parse_tool_call("search please", "the question", 5);
  EXPECT_FALSE(bad.parsed);
  EXPECT_EQ(bad.query_text, "the question");
  auto unknown = parse_tool_call(R"({"query_text":"x","filter":{"ticker":"ACME"}})", "q", 5);
  EXPECT_TRUE(unknown.filter.empty());
  EXPECT_NE(unknown.error.find("ticker"), std::string::npos);
}

TEST(Citations, IndicesInRange) {
  EXPECT_EQ(cited_indices("A [2] and [1], again [2]; bad [9] [0] [x]", 3), (std::vector<std::size_t>{2, 1}));
  EXPECT_TRUE(cited_indices("none", 3).empty());
}

TEST(Rewrite, EchoUsesFallback) {
  auto scripted = std::make_shared<mock::ScriptedLlm>();
  scripted->enqueue("rewrite", {"Acme revenue"});
  LlmClient llm(scripted, std::make_shared<TranscriptLog>());
  auto r = rewrite_query("What was Acme's 10-Q revenue?", "acme revenue", llm);
  EXPECT_TRUE(r.fallback_used);
  EXPECT_EQ(r.query, "acme revenue 10-Q");
}

TEST(Grade, FractionAndFailOpen) {
  auto scripted = std::make_shared<mock::ScriptedLlm>();
  scripted->enqueue("grade", {R"({"relevant":[true,false,false,true]})"});
  scripted->enqueue("grade", {"looks good to me"});
  LlmClient llm(scripted, std::make_shared<TranscriptLog>());
  auto g = grade_retrieval("q", {"a", "b", "c", "d"}, llm);
  EXPECT_DOUBLE_EQ(g.fraction, 0.5);
  EXPECT_FALSE(g.failed_open);
  auto open = grade_retrieval("q", {"a"}, llm);
  EXPECT_TRUE(open.failed_open);
  EXPECT_DOUBLE_EQ(open.fraction, 1.0);
  EXPECT_THROW(grade_retrieval("q", {}, llm), Error);
}

TEST(Agent, VectorHappyPath) {
  World w;
  LlmClient llm(std::make_shared<mock::MockLlm>(), w.log, fast());
  AgentConfig cfg;
  cfg.retrieval_k = 2;
  auto a = answer_question("What was Acme Corporation total revenue in fiscal 2023?", cfg, w.kb, w.providers(llm),
                           w.clock);
  EXPECT_FALSE(a.abstained);
  EXPECT_NE(a.text.find("4.2 billion"), std::string::npos) << a.text;
  ASSERT_FALSE(a.citations.empty());
  EXPECT_EQ(a.citations.front().doc_id, "acme-10k-2023");
  EXPECT_EQ(a.citations.front().page_start, 2u);
  EXPECT_EQ(a.trace.rounds, 1);
  for (const auto& h : a.ranked) EXPECT_EQ(h.chunk.doc_id, "acme-10k-2023");
  EXPECT_EQ(count_stage(a.trace, "formulate"), 1u);
  EXPECT_EQ(count_stage(a.trace, "generate"), 1u);
  EXPECT_GT(a.trace.end_to_end_s(), 0.0);
  // Stage stamps are ordered and non-overlapping.
  for (std::size_t i = 1; i < a.trace.records.size(); ++i) {
    EXPECT_GE(a.trace.records[i].started_s, a.trace.records[i - 1].ended_s);
  }
  EXPECT_NE(a.trace.generator_prompt.find("[1] (acme-10k-2023, pages"), std::string::npos);
}

TEST(Agent, CorrectiveLoopExhaustsAndUsesBestRound) {
  World w;
  auto scripted = std::make_shared<mock::ScriptedLlm>("scripted-llm", false);
  scripted->fallback(std::make_shared<mock::MockLlm>());
  scripted->handle("grade", all_false);
  scripted->handle("rewrite", [](const CompletionRequest& r) { return r.slots.at("failed_query"); });
  LlmClient llm(scripted, w.log, fast());
  AgentConfig cfg;
  cfg.max_corrective_rounds = 2;
  auto a = answer_question("What was Acme Corporation net income?", cfg, w.kb, w.providers(llm), w.clock);
  EXPECT_EQ(a.trace.rounds, 3);
  EXPECT_TRUE(a.trace.exhausted);
  EXPECT_EQ(a.trace.best_round, 0);
  EXPECT_EQ(purpose_calls(*scripted, "grade"), 3u);
  EXPECT_EQ(purpose_calls(*scripted, "rewrite"), 2u);
  ASSERT_EQ(a.trace.queries.size(), 3u);
  EXPECT_NE(a.trace.queries[0], a.trace.queries[1]);
  EXPECT_NE(a.trace.queries[1], a.trace.queries[2]);
  EXPECT_FALSE(a.abstained);
  EXPECT_EQ(purpose_calls(*scripted, "generate"), 1u);
}

TEST(Agent, StopsWhenGradeClearsThreshold) {
  World w;
  auto scripted = std::make_shared<mock::ScriptedLlm>("scripted-llm", false);
  scripted->fallback(std::make_shared<mock::MockLlm>());
  scripted->enqueue("grade", {R"({"relevant":[false,false,false,false,false]})"});
  scripted->handle("grade", [](const CompletionRequest& r) {
    std::string s = "{\"relevant\": [";
    for (std::size_t i = 0; r.slots.count("passage_" + std::to_string(i)); ++i) s += i ? ", true" : "true";
    return s + "]}";
  });
  LlmClient llm(scripted, w.log, fast());
  AgentConfig cfg;
  auto a = answer_question("What was Acme Corporation gross margin?", cfg, w.kb, w.providers(llm), w.clock);
  EXPECT_EQ(a.trace.rounds, 2);
  EXPECT_FALSE(a.trace.exhausted);
  EXPECT_EQ(a.trace.best_round, 1);
}

TEST(Agent, GraderFailureFailsOpen) {
  World w;
  auto scripted = std::make_shared<mock::ScriptedLlm>("scripted-llm", false);
  scripted->fallback(std::make_shared<mock::MockLlm>());
  scripted->handle("grade", [](const CompletionRequest&) { return std::string("not json"); });
  LlmClient llm(scripted, w.log, fast());
  auto a = answer_question("What was Acme Corporation revenue?", {}, w.kb, w.providers(llm), w.clock);
  EXPECT_TRUE(a.trace.grader_failed_open);
  EXPECT_EQ(a.trace.rounds, 1);
  EXPECT_FALSE(a.abstained);
}

TEST(Agent, EmptyRetrievalAbstainsWithoutGenerating) {
  World w;
  auto scripted = std::make_shared<mock::ScriptedLlm>("scripted-llm", false);
  scripted->fallback(std::make_shared<mock::MockLlm>());
  scripted->handle("formulate", [](const CompletionRequest&) {
    return std::string(R"({"query_text":"revenue","filter":{"company":"Initech"},"k":5})");
  });
  LlmClient llm(scripted, w.log, fast());
  auto a = answer_question("What was Initech revenue?", {}, w.kb, w.providers(llm), w.clock);
  EXPECT_TRUE(a.abstained);
  EXPECT_EQ(a.text, kAbstentionText);
  EXPECT_TRUE(a.citations.empty());
  EXPECT_EQ(purpose_calls(*scripted, "generate"), 0u);
  EXPECT_EQ(purpose_calls(*scripted, "grade"), 0u);
  EXPECT_EQ(a.trace.rounds, 3);
}

TEST(Agent, PinnedFilterNarrowsRetrieval) {
  World w;
  LlmClient llm(std::make_shared<mock::MockLlm>(), w.log, fast());
  AgentConfig cfg;
  cfg.retrieval_k = 2;
  MetadataFilter globex_only;
  globex_only.equals(MetadataField::Company, "Globex Inc");
  auto a = answer_question("What was quarterly revenue?", cfg, w.kb, w.providers(llm), w.clock, globex_only);
  ASSERT_FALSE(a.ranked.empty());
  for (const auto& h : a.ranked) EXPECT_EQ(h.chunk.doc_id, "globex-10q-2024q1");

  MetadataFilter unknown;
  unknown.equals(MetadataField::Company, "Initech");
  auto b = answer_question("What was quarterly revenue?", cfg, w.kb, w.providers(llm), w.clock, unknown);
  EXPECT_TRUE(b.abstained);
  EXPECT_TRUE(b.citations.empty());
}

TEST(Agent, RerankStageAndFallback) {
  World w;
  LlmClient llm(std::make_shared<mock::MockLlm>(), w.log, fast());
  AgentConfig cfg;
  cfg.stages = {PipelineStage::Hybrid, PipelineStage::Rerank};
  cfg.rerank = {10, 3};
  cfg.relevance_threshold = 0.0;
  const std::string question = "What was Acme Corporation net income for fiscal 2023?";
  RerankClient oracle(std::make_shared<mock::OracleScorer>(
                          std::map<std::string, mock::GoldLabel>{{question, {"acme-10k-2023", {4}}}}),
                      w.log, fast());
  auto a = answer_question(question, cfg, w.kb, w.providers(llm, &oracle), w.clock);
  ASSERT_EQ(a.ranked.size(), 3u);
  EXPECT_EQ(a.ranked.front().stage, Stage::Reranked);
  EXPECT_LE(a.ranked.front().chunk.page_start, 4u);
  EXPECT_GE(a.ranked.front().chunk.page_end, 4u);
  EXPECT_EQ(count_stage(a.trace, "rerank"), 1u);

  RerankClient failing(std::make_shared<mock::FailingScorer>(), w.log, fast());
  auto b = answer_question(question, cfg, w.kb, w.providers(llm, &failing), w.clock);
  EXPECT_TRUE(b.trace.rerank_fell_back);
  EXPECT_EQ(b.ranked.size(), 3u);
  EXPECT_FALSE(b.abstained);
}

TEST(Agent, ExpandStageAddsNeighborsAndChargesFetches) {
  const std::string question = "What was Acme Corporation total revenue in fiscal 2023?";
  double elapsed[2];
  std::size_t sizes[2];
  for (int mode = 0; mode < 2; ++mode) {
    World w;
    LlmClient llm(std::make_shared<mock::MockLlm>(), w.log, fast());
    AgentConfig cfg;
    cfg.retrieval_k = 1;
    cfg.stages = {PipelineStage::Hybrid, PipelineStage::Expand};
    cfg.expansion = {2, mode ? FetchMode::Async : FetchMode::Sync, 8};
    auto a = answer_question(question, cfg, w.kb, w.providers(llm), w.clock);
    ASSERT_EQ(a.ranked.size(), 1u);
    std::size_t targets = 0;
    for (const auto& c : a.context) targets += c.is_target;
    EXPECT_EQ(targets, 1u);
    EXPECT_GT(a.context.size(), 1u);
    sizes[mode] = a.context.size();
    for (const auto& r : a.trace.records) {
      if (r.stage == "expand") elapsed[mode] = r.duration_s();
    }
  }
  EXPECT_EQ(sizes[0], sizes[1]);
  EXPECT_NEAR(elapsed[0], 0.05 * static_cast<double>(sizes[0] - 1), 1e-9);
  EXPECT_NEAR(elapsed[1], 0.05, 1e-9);
}

namespace {

struct TreeWorld {
  Document doc = synth::paged_document(28);
  NodeTree tree = parse_tree(synth::reference_tree_json(), 28);
  KnowledgeBase kb;
  VirtualClock clock;

  TreeWorld() {
    kb.catalog.push_back(doc.metadata);
    kb.trees[doc.doc_id()] = tree;
    kb.documents[doc.doc_id()] = &doc;
  }
};

}  // namespace

TEST(Agent, TreeTraversalCitesSelectedPages) {
  TreeWorld w;
  auto scripted = std::make_shared<mock::ScriptedLlm>("scripted-llm", false);
  scripted->fallback(std::make_shared<mock::MockLlm>());
  scripted->handle("node_selection", [](const CompletionRequest&) { return std::string(R"({"node_ids":["0004"]})"); });
  scripted->handle("generate", [](const CompletionRequest&) { return std::string("Monetary policy is described in [1]."); });
  LlmClient llm(scripted, std::make_shared<TranscriptLog>(), fast());
  AgentConfig cfg;
  cfg.stages = {PipelineStage::TreeTraverse};
  auto a = answer_question("How did the Federal Reserve System conduct monetary policy?", cfg, w.kb,
                           {&llm, nullptr, nullptr}, w.clock);
  ASSERT_EQ(a.citations.size(), 1u);
  EXPECT_EQ(a.citations[0].page_start, 9u);
  EXPECT_EQ(a.citations[0].page_end, 14u);
  ASSERT_EQ(a.selected.size(), 1u);
  EXPECT_EQ(a.selected[0].node_id, "0004");
  ASSERT_EQ(a.context.size(), 1u);
  EXPECT_NE(a.context[0].text.find("Body of page 9."), std::string::npos);
  EXPECT_NE(a.context[0].text.find("Body of page 14."), std::string::npos);
  EXPECT_EQ(a.context[0].text.find("Body of page 15."), std::string::npos);
  EXPECT_EQ(purpose_calls(*scripted, "grade"), 0u);
  EXPECT_EQ(a.trace.rounds, 1);
}

TEST(Agent, TreeTraversalFailureAbstains) {
  TreeWorld w;
  auto scripted = std::make_shared<mock::ScriptedLlm>("scripted-llm", false);
  scripted->fallback(std::make_shared<mock::MockLlm>());
  scripted->handle("node_selection", [](const CompletionRequest&) { return std::string("9999"); });
  scripted->handle("node_selection_repair", [](const CompletionRequest&) { return std::string("9999"); });
  LlmClient llm(scripted, std::make_shared<TranscriptLog>(), fast());
  AgentConfig cfg;
  cfg.stages = {PipelineStage::TreeTraverse};
  auto a = answer_question("Anything?", cfg, w.kb, {&llm, nullptr, nullptr}, w.clock);
  EXPECT_TRUE(a.abstained);
  EXPECT_FALSE(a.trace.notes.empty());
  EXPECT_EQ(purpose_calls(*scripted, "generate"), 0u);
}

TEST(Agent, MissingResourcesAreConfigErrors) {
  World w;
  LlmClient llm(std::make_shared<mock::MockLlm>(), w.log, fast());
  AgentConfig cfg;
  cfg.stages = {PipelineStage::Hybrid, PipelineStage::Rerank};
  try {
    answer_question("q", cfg, w.kb, w.providers(llm), w.clock);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
  }
  cfg.stages = {PipelineStage::TreeTraverse};
  EXPECT_THROW(answer_question("q", cfg, w.kb, w.providers(llm), w.clock), Error);
}

TEST(Agent, AnswerJsonShape) {
  World w;
  LlmClient llm(std::make_shared<mock::MockLlm>(), w.log, fast());
  auto a = answer_question("What was Acme Corporation total revenue?", {}, w.kb, w.providers(llm), w.clock);
  auto j = to_json(a);
  EXPECT_TRUE(j.contains("citations"));
  EXPECT_TRUE(j["trace"]["stages"].is_array());
  EXPECT_EQ(j["trace"]["stages"][0]["stage"], "formulate");
}
