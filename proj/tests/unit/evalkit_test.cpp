#include <gtest/gtest.h>

#include <random>

#include "finrag/evalkit.hpp"
#include "finrag/mock_providers.hpp"
#include "support/oracles.hpp"

using namespace finrag;

namespace {

BenchmarkQuestion q_with_pages(std::set<int> pages, std::string doc = "d") {
  BenchmarkQuestion q;
  q.id = "q";
  q.question = "?";
  q.doc_id = std::move(doc);
  q.gold_pages = std::move(pages);
  return q;
}

ScoredHit hit(std::string doc, std::size_t idx, std::uint32_t ps, std::uint32_t pe) {
  ScoredHit h;
  h.chunk = {make_chunk_id(doc, idx), doc, idx, ps, pe};
  return h;
}

}  // namespace

TEST(Relevance, PageIntersection) {
  EXPECT_TRUE(relevance(9, 14, {10}));
  EXPECT_FALSE(relevance(2, 3, {10}));
  EXPECT_FALSE(relevance(9, 20, {21}));
  EXPECT_TRUE(relevance(9, 20, {20}));
  EXPECT_TRUE(relevance(9, 9, {9}));
}

TEST(Relevance, ChunkMustBeInGoldDocument) {
  auto q = q_with_pages({10}, "a");
  EXPECT_TRUE(relevance(hit("a", 0, 9, 14).chunk, q));
  EXPECT_FALSE(relevance(hit("b", 0, 9, 14).chunk, q));
}

TEST(FirstRelevantRank, RespectsDepth) {
  auto q = q_with_pages({50});
  std::vector<ScoredHit> hits;
  for (std::size_t i = 0; i < 7; ++i) hits.push_back(hit("d", i, 1, 2));
  hits[5] = hit("d", 5, 50, 50);
  EXPECT_FALSE(first_relevant_rank(hits, q, 5).has_value());
  EXPECT_EQ(first_relevant_rank(hits, q, 10), 6u);
}

TEST(Mrr, Examples) {
  EXPECT_DOUBLE_EQ(mrr({1, 1, 1}), 1.0);
  EXPECT_NEAR(mrr({1, 2, 4}), 7.0 / 12.0, 1e-15);
  EXPECT_DOUBLE_EQ(mrr({std::nullopt, std::nullopt}), 0.0);
  EXPECT_NEAR(mrr({1, std::nullopt}), 0.5, 1e-15);
}

TEST(Mrr, EmptyIsAnError) {
  try {
    mrr({});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyQuerySet);
  }
}

TEST(Recall, Examples) {
  EXPECT_DOUBLE_EQ(recall_at_k({"a", "b", "c"}, {"a", "b"}, 5), 1.0);
  EXPECT_DOUBLE_EQ(recall_at_k({"a", "x", "y"}, {"a", "b"}, 5), 0.5);
  EXPECT_DOUBLE_EQ(recall_at_k({"x", "y"}, {"a", "b"}, 5), 0.0);
  EXPECT_DOUBLE_EQ(recall_at_k({"x", "y", "z", "w", "v", "a"}, {"a"}, 5), 0.0);
  try {
    recall_at_k({"a"}, {}, 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyGoldSet);
  }
}

TEST(Metrics, MatchBruteForceOnRandomInstances) {
  std::mt19937_64 rng(20240501);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t nq = 1 + rng() % 40;
    std::vector<std::optional<std::size_t>> ranks;
    for (std::size_t i = 0; i < nq; ++i) {
      if (rng() % 4 == 0) {
        ranks.push_back(std::nullopt);
      } else {
        ranks.push_back(1 + rng() % 10);
      }
    }
    ASSERT_NEAR(mrr(ranks), oracle::mrr(ranks), 1e-12);

    std::vector<std::string> retrieved;
    const std::size_t n = rng() % 12;
    for (std::size_t i = 0; i < n; ++i) retrieved.push_back("c" + std::to_string(rng() % 15));
    std::set<std::string> gold;
    const std::size_t g = 1 + rng() % 6;
    while (gold.size() < g) gold.insert("c" + std::to_string(rng() % 15));
    const std::size_t k = 1 + rng() % 8;
    ASSERT_NEAR(recall_at_k(retrieved, gold, k), oracle::recall_at_k(retrieved, gold, k), 1e-12);
  }
}

TEST(WinRate, Examples) {
  EXPECT_DOUBLE_EQ(win_rate({68, 32, 0}).tie_split, 0.68);
  EXPECT_DOUBLE_EQ(win_rate({68, 32, 0}).raw, 0.68);
  EXPECT_DOUBLE_EQ(win_rate({13, 7, 0}).tie_split, 0.65);
  EXPECT_DOUBLE_EQ(win_rate({0, 0, 9}).tie_split, 0.5);
  EXPECT_DOUBLE_EQ(win_rate({0, 0, 9}).raw, 0.0);
  EXPECT_DOUBLE_EQ(win_rate({0, 0, 9}).tie_rate, 1.0);
  try {
    win_rate({});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyVerdictSet);
  }
}

TEST(WinRate, ComplementaryOverRandomSets) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100; ++i) {
    WinCounts c{rng() % 50, rng() % 50, rng() % 50};
    if (c.total() == 0) c.ties = 1;
    EXPECT_NEAR(win_rate(c).tie_split + win_rate(c.mirrored()).tie_split, 1.0, 1e-12);
  }
}

TEST(Judge, IdenticalAnswersTieBothOrders) {
  auto log = std::make_shared<TranscriptLog>();
  LlmClient judge(std::make_shared<mock::MockLlm>("judge"), log, {});
  auto [v1, v2] = judge_pair("What was revenue?", "Revenue was $5 million.", "Revenue was $5 million.", judge);
  EXPECT_EQ(v1.overall, Preference::Tie);
  EXPECT_EQ(v2.overall, Preference::Tie);
  EXPECT_EQ(v1.criteria.size(), 6u);
  EXPECT_FALSE(v1.order_swapped);
  EXPECT_TRUE(v2.order_swapped);
}

TEST(Judge, PreferredAnswerWinsBothOrders) {
  auto log = std::make_shared<TranscriptLog>();
  LlmClient judge(std::make_shared<mock::MockLlm>("judge"), log, {});
  auto [v1, v2] = judge_pair("What was total revenue in fiscal 2023?", "Total revenue in fiscal 2023 was $4.2 billion.",
                             "The company sells products.", judge);
  JudgeTally t;
  t.add(v1);
  t.add(v2);
  EXPECT_EQ(t.overall.wins, 2u);
  EXPECT_EQ(t.overall.losses, 0u);
  for (auto c : kCriteria) EXPECT_EQ(t.criteria.at(std::string(c)).wins, 2u);
}

TEST(Judge, FreeTextTwiceBecomesFlaggedTie) {
  auto scripted = std::make_shared<mock::ScriptedLlm>("judge");
  for (int i = 0; i < 2; ++i) {
    scripted->enqueue("judge", {"I think the first one is nicer."});
    scripted->enqueue("judge_repair", {"Honestly both are fine."});
  }
  auto log = std::make_shared<TranscriptLog>();
  LlmClient judge(scripted, log, {});
  auto [v1, v2] = judge_pair("q", "a", "b", judge);
  for (const auto* v : {&v1, &v2}) {
    EXPECT_TRUE(v->parse_failed);
    EXPECT_EQ(v->overall, Preference::Tie);
    EXPECT_EQ(v->raw_replies.size(), 2u);
    EXPECT_EQ(v->criteria.size(), 6u);
  }
  JudgeTally t;
  t.add(v1);
  t.add(v2);
  EXPECT_EQ(t.parse_failures, 2u);
}

TEST(Judge, RepairRoundRecovers) {
  auto scripted = std::make_shared<mock::ScriptedLlm>("judge");
  const std::string ok =
      R"({"accuracy":"B","completeness":"B","clarity":"tie","conciseness":"A","relevance":"B","style":"tie","overall":"B"})";
  scripted->enqueue("judge", {"no idea"});
  scripted->enqueue("judge_repair", {ok});
  scripted->enqueue("judge", {ok});
  auto log = std::make_shared<TranscriptLog>();
  LlmClient judge(scripted, log, {});
  auto [v1, v2] = judge_pair("q", "a", "b", judge);
  EXPECT_FALSE(v1.parse_failed);
  EXPECT_EQ(v1.overall, Preference::B);
  EXPECT_EQ(preference_for_first(v2.overall, v2.order_swapped), Preference::A);
}

TEST(Judge, EmptyAnswerRejected) {
  auto log = std::make_shared<TranscriptLog>();
  LlmClient judge(std::make_shared<mock::MockLlm>("judge"), log, {});
  EXPECT_THROW(judge_pair("q", "", "b", judge), Error);
}

TEST(Judge, ParseVerdictNeedsAllCriteria) {
  EXPECT_FALSE(parse_verdict(R"({"overall":"A"})").has_value());
  auto v = parse_verdict(
      R"(Verdict: {"accuracy":"a","completeness":"A","clarity":"A","conciseness":"A","relevance":"A","style":"Tie","overall":"A"})");
  ASSERT_TRUE(v.has_value());
  EXPECT_EQ(v->criteria.at("style"), Preference::Tie);
}

namespace {

TranscriptEntry entry(std::string provider, Phase phase, std::int64_t in, std::int64_t out) {
  TranscriptEntry e;
  e.provider_id = std::move(provider);
  e.phase = phase;
  e.input_tokens = in;
  e.output_tokens = out;
  return e;
}

}  // namespace

TEST(Cost, TreeGenerationTokenCounts) {
  PriceTable prices;
  prices.set("gpt-4o", {2.5e-6, 1.0e-5});
  auto r = cost({entry("gpt-4o", Phase::Preprocessing, 117115, 9299)}, prices);
  const double expected = 117115 * 2.5e-6 + 9299 * 1.0e-5;
  EXPECT_NEAR(r.total(), expected, 1e-12);
  EXPECT_NEAR(r.total(), 0.3857775, 1e-12);
  EXPECT_NEAR(r.phase_total(Phase::Preprocessing), expected, 1e-12);
  EXPECT_DOUBLE_EQ(r.phase_total(Phase::Runtime), 0.0);
}

TEST(Cost, ZeroTranscripts) {
  PriceTable prices;
  EXPECT_DOUBLE_EQ(cost({}, prices).total(), 0.0);
}

TEST(Cost, MissingPrice) {
  PriceTable prices;
  try {
    cost({entry("unknown", Phase::Runtime, 1, 1)}, prices);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingPrice);
  }
}

TEST(Cost, AdditiveAndHomogeneous) {
  PriceTable prices;
  prices.set("a", {1e-6, 4e-6}).set("b", {3e-7, 1.5e-6});
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<TranscriptEntry> t1, t2;
    for (int i = 0; i < 20; ++i) {
      auto e = entry(rng() % 2 ? "a" : "b", rng() % 2 ? Phase::Runtime : Phase::Preprocessing,
                     static_cast<std::int64_t>(rng() % 100000), static_cast<std::int64_t>(rng() % 10000));
      (i % 2 ? t1 : t2).push_back(e);
    }
    auto both = t1;
    both.insert(both.end(), t2.begin(), t2.end());
    const double sum = cost(t1, prices).total() + cost(t2, prices).total();
    EXPECT_NEAR(cost(both, prices).total(), sum, 1e-9);
    EXPECT_NEAR(cost(both, prices.scaled(3.5)).total(), 3.5 * cost(both, prices).total(), 1e-9);
  }
}

TEST(Latency, Stats) {
  auto s = latency_stats({1, 2, 3, 4, 100});
  EXPECT_DOUBLE_EQ(s.mean, 22.0);
  EXPECT_DOUBLE_EQ(s.p50, 3.0);
  auto c = latency_stats({1, 1, 1, 1});
  EXPECT_DOUBLE_EQ(c.p50, 1.0);
  EXPECT_DOUBLE_EQ(c.p95, 1.0);
  EXPECT_DOUBLE_EQ(latency_stats({5.2}).mean, 5.2);
}

TEST(Benchmark, ParsesJsonLines) {
  const std::string jsonl =
      R"({"id":"q1","question":"Revenue?","category":"single-hop","doc_id":"acme","gold_pages":[10],"gold_answer":"$5"})"
      "\n\n"
      R"({"id":"q2","question":"Summarize.","category":"summary","doc_id":"acme","gold_pages":[1,2]})"
      "\n";
  auto qs = parse_benchmark(jsonl);
  ASSERT_EQ(qs.size(), 2u);
  EXPECT_EQ(qs[1].category, Category::Summary);
  EXPECT_EQ(qs[1].gold_pages, (std::set<int>{1, 2}));
}

TEST(Benchmark, RejectsBadLines) {
  const std::string base = R"({"id":"q1","question":"x","category":"single-hop","doc_id":"a","gold_pages":[1]})";
  EXPECT_THROW(parse_benchmark(base + "\n" + base), Error);
  EXPECT_THROW(parse_benchmark(R"({"id":"q1","question":"x","category":"other","doc_id":"a","gold_pages":[1]})"),
               Error);
  EXPECT_THROW(parse_benchmark(R"({"id":"q1","question":"x","category":"summary","doc_id":"a","gold_pages":[]})"),
               Error);
  EXPECT_THROW(parse_benchmark(R"({"id":"q1","question":"x","category":"summary","doc_id":"a","gold_pages":[1],"extra":1})"),
               Error);
  try {
    parse_benchmark(base + "\nnot json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedBenchmark);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}
