#include <gtest/gtest.h>

#include <random>

#include "finrag/mock_providers.hpp"
#include "finrag/rerank.hpp"

using namespace finrag;

namespace {

ClientOptions fast() {
  ClientOptions o;
  o.retry = RetryPolicy::immediate();
  return o;
}

// Candidates c0..c{n-1} over pages 1..n of doc "d", ranked in order.
std::vector<ScoredHit> candidates(std::size_t n) {
  std::vector<ScoredHit> out;
  for (std::size_t i = 0; i < n; ++i) {
    ScoredHit h;
    const auto p = static_cast<std::uint32_t>(i + 1);
    h.chunk = {make_chunk_id("d", i), "d", i, p, p};
    h.text = "passage about topic " + std::to_string(i);
    h.score = 1.0 / static_cast<double>(i + 1);
    h.stage = Stage::Fused;
    h.rank = i + 1;
    out.push_back(h);
  }
  return out;
}

RerankClient oracle_client(const std::string& question, std::set<int> pages) {
  std::map<std::string, mock::GoldLabel> gold = {{question, {"d", std::move(pages)}}};
  return RerankClient(std::make_shared<mock::OracleScorer>(gold), std::make_shared<TranscriptLog>(), fast());
}

}  // namespace

TEST(RerankConfig, Validation) {
  EXPECT_NO_THROW((RerankConfig{10, 5}.validate()));
  EXPECT_NO_THROW((RerankConfig{10, 10}.validate()));
  for (auto bad : {RerankConfig{5, 10}, RerankConfig{5, 0}}) {
    try {
      bad.validate();
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::ConfigError);
    }
  }
  EXPECT_EQ(parse_rerank_config("100,20"), (RerankConfig{100, 20}));
  EXPECT_EQ(parse_rerank_config(" 75 , 25 "), (RerankConfig{75, 25}));
  EXPECT_THROW(parse_rerank_config("10"), Error);
  EXPECT_THROW(parse_rerank_config("10,x"), Error);
  EXPECT_THROW(parse_rerank_config("5,10"), Error);
}

TEST(RerankConfig, DefaultGrid) {
  auto grid = default_rerank_grid();
  ASSERT_EQ(grid.size(), 10u);
  EXPECT_EQ(grid.front(), (RerankConfig{100, 20}));
  EXPECT_EQ(grid.back(), (RerankConfig{10, 10}));
  for (const auto& g : grid) EXPECT_NO_THROW(g.validate());
}

TEST(Rerank, KeepsKFinal) {
  auto scorer = oracle_client("q", {3});
  auto r = rerank(candidates(10), "q", {10, 5}, scorer);
  ASSERT_EQ(r.hits.size(), 5u);
  for (std::size_t i = 0; i < r.hits.size(); ++i) {
    EXPECT_EQ(r.hits[i].rank, i + 1);
    EXPECT_EQ(r.hits[i].stage, Stage::Reranked);
  }
}

TEST(Rerank, OraclePutsGoldFirst) {
  auto scorer = oracle_client("q", {8});
  auto r = rerank(candidates(10), "q", {10, 5}, scorer);
  EXPECT_EQ(r.hits.front().chunk.chunk_id, "d:7");
  EXPECT_DOUBLE_EQ(r.hits.front().score, 1.0);
  // Ties keep prior order.
  EXPECT_EQ(r.hits[1].chunk.chunk_id, "d:0");
  EXPECT_EQ(r.hits[2].chunk.chunk_id, "d:1");
}

TEST(Rerank, TooManyCandidates) {
  auto scorer = oracle_client("q", {1});
  try {
    rerank(candidates(11), "q", {10, 5}, scorer);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PreconditionViolated);
  }
}

TEST(Rerank, EmptyCandidates) {
  auto scorer = oracle_client("q", {1});
  EXPECT_TRUE(rerank({}, "q", {10, 5}, scorer).hits.empty());
}

TEST(Rerank, FewerCandidatesThanKFinal) {
  auto scorer = oracle_client("q", {2});
  auto r = rerank(candidates(3), "q", {10, 5}, scorer);
  EXPECT_EQ(r.hits.size(), 3u);
}

TEST(Rerank, SubsetSizeAndStability) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t ki = 1 + rng() % 30;
    const std::size_t kf = 1 + rng() % ki;
    const std::size_t n = rng() % (ki + 1);
    std::set<int> gold;
    for (int i = 0; i < 3; ++i) gold.insert(1 + static_cast<int>(rng() % 40));
    auto scorer = oracle_client("q", gold);
    auto cands = candidates(n);
    auto r = rerank(cands, "q", {ki, kf}, scorer);
    ASSERT_EQ(r.hits.size(), std::min(kf, n));
    std::set<std::string> ids;
    for (const auto& c : cands) ids.insert(c.chunk.chunk_id);
    for (const auto& h : r.hits) EXPECT_TRUE(ids.count(h.chunk.chunk_id));

    // Reordering the input does not change the output, since ties break on
    // the prior rank carried by each hit.
    auto shuffled = cands;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto r2 = rerank(shuffled, "q", {ki, kf}, scorer);
    ASSERT_EQ(chunk_ids(r.hits), chunk_ids(r2.hits));

    // With an oracle scorer, recall of the gold chunks never drops below the
    // first-stage top-k_final.
    std::set<std::string> gold_ids;
    for (const auto& c : cands) {
      if (gold.count(static_cast<int>(c.chunk.page_start))) gold_ids.insert(c.chunk.chunk_id);
    }
    if (!gold_ids.empty()) {
      std::vector<std::string> base;
      for (std::size_t i = 0; i < std::min(kf, n); ++i) base.push_back(cands[i].chunk.chunk_id);
      EXPECT_GE(recall_at_k(chunk_ids(r.hits), gold_ids, kf), recall_at_k(base, gold_ids, kf));
    }
  }
}

TEST(Rerank, PerPassageScoringWhenNotBatched) {
  struct Single final : RerankBackend {
    std::string id() const override { return "single"; }
    bool supports_batch() const override { return false; }
    ScoreResult score_pairs(std::string_view, std::span<const Passage> p) override {
      return {{static_cast<double>(p.front().page_start)}, {}, 0.01};
    }
  };
  RerankClient client(std::make_shared<Single>(), std::make_shared<TranscriptLog>(), fast());
  auto r = rerank(candidates(6), "q", {6, 3}, client);
  EXPECT_EQ(r.scorer_calls, 6);
  EXPECT_EQ(chunk_ids(r.hits), (std::vector<std::string>{"d:5", "d:4", "d:3"}));
}

TEST(Rerank, FallbackOnScorerFailure) {
  RerankClient client(std::make_shared<mock::FailingScorer>(), std::make_shared<TranscriptLog>(), fast());
  EXPECT_THROW(rerank(candidates(8), "q", {10, 5}, client), Error);
  auto r = rerank_or_fallback(candidates(8), "q", {10, 5}, client);
  EXPECT_TRUE(r.fell_back);
  EXPECT_FALSE(r.error.empty());
  EXPECT_EQ(chunk_ids(r.hits), (std::vector<std::string>{"d:0", "d:1", "d:2", "d:3", "d:4"}));
}

namespace {

// Each question's gold chunk sits at a seeded position in the top 10 of the
// first-stage list.
struct Synthetic {
  std::vector<BenchmarkQuestion> bench;
  std::map<std::string, std::size_t> gold_pos;

  explicit Synthetic(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
      BenchmarkQuestion q;
      q.id = "s" + std::to_string(i);
      q.question = "synthetic question " + std::to_string(i);
      q.doc_id = "doc" + std::to_string(i);
      q.gold_pages = {1000};
      bench.push_back(q);
      gold_pos[q.question] = rng() % 10;
    }
  }

  SweepPipeline pipeline() const {
    SweepPipeline p;
    p.retrieve = [this](const BenchmarkQuestion& q, std::size_t depth) {
      Retrieval r;
      const auto g = gold_pos.at(q.question);
      for (std::size_t i = 0; i < depth; ++i) {
        ScoredHit h;
        const std::uint32_t page = i == g ? 1000 : static_cast<std::uint32_t>(i + 1);
        h.chunk = {make_chunk_id(q.doc_id, i), q.doc_id, i, page, page};
        h.text = "text";
        h.rank = i + 1;
        r.hits.push_back(h);
      }
      r.latency_s = 0.1;
      return r;
    };
    p.gold_chunks = [this](const BenchmarkQuestion& q) {
      return std::set<std::string>{make_chunk_id(q.doc_id, gold_pos.at(q.question))};
    };
    return p;
  }

  std::map<std::string, mock::GoldLabel> labels() const {
    std::map<std::string, mock::GoldLabel> out;
    for (const auto& q : bench) out[q.question] = {q.doc_id, q.gold_pages};
    return out;
  }
};

}  // namespace

TEST(Sweep, OracleScorerIsPerfect) {
  Synthetic s(50, 11);
  RerankClient scorer(std::make_shared<mock::OracleScorer>(s.labels()), std::make_shared<TranscriptLog>(), fast());
  auto table = sweep(default_rerank_grid(), s.bench, s.pipeline(), scorer);
  ASSERT_EQ(table.rows.size(), 11u);
  EXPECT_EQ(table.rows[0].label, kBaselineLabel);
  EXPECT_EQ(table.rows[1].label, "(100, 20)");
  for (std::size_t i = 1; i < table.rows.size(); ++i) {
    EXPECT_DOUBLE_EQ(table.rows[i].mrr_at_5, 1.0) << table.rows[i].label;
    EXPECT_DOUBLE_EQ(table.rows[i].recall_at_5, 1.0) << table.rows[i].label;
    EXPECT_FALSE(table.rows[i].failed);
  }
  EXPECT_LT(table.rows[0].mrr_at_5, 1.0);
  auto j = to_json(table);
  EXPECT_EQ(j["columns"].size(), 4u);
  EXPECT_EQ(j["rows"].size(), 11u);
  const auto text = render_table(table);
  EXPECT_EQ(text.rfind("(k_initial, k_final)", 0), 0u);
  EXPECT_NE(text.find(" | MRR@5 | Recall@5 | Avg Latency (s)\n"), std::string::npos);
  EXPECT_NE(text.find("Baseline (No Reranking) | "), std::string::npos);
}

TEST(Sweep, NoisyScorerDoesNotHurtMrr) {
  Synthetic s(50, 12);
  RerankClient scorer(std::make_shared<mock::NoisyScorer>(s.labels(), 0.3, 42), std::make_shared<TranscriptLog>(),
                      fast());
  auto table = sweep({{10, 5}, {20, 10}}, s.bench, s.pipeline(), scorer);
  for (std::size_t i = 1; i < table.rows.size(); ++i) EXPECT_GE(table.rows[i].mrr_at_5, table.rows[0].mrr_at_5);
}

TEST(Sweep, Errors) {
  Synthetic s(3, 1);
  RerankClient scorer(std::make_shared<mock::OracleScorer>(s.labels()), std::make_shared<TranscriptLog>(), fast());
  try {
    sweep({{10, 5}}, {}, s.pipeline(), scorer);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyBenchmark);
  }
  EXPECT_THROW(sweep({}, s.bench, s.pipeline(), scorer), Error);
  // A bad config row is flagged, the sweep continues.
  auto t = sweep({{5, 10}, {10, 5}}, s.bench, s.pipeline(), scorer);
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_TRUE(t.rows[1].failed);
  EXPECT_FALSE(t.rows[2].failed);
  EXPECT_NE(render_table(t).find(" *"), std::string::npos);
}

TEST(Sweep, FailingScorerFallsBack) {
  Synthetic s(5, 2);
  RerankClient scorer(std::make_shared<mock::FailingScorer>(), std::make_shared<TranscriptLog>(), fast());
  auto t = sweep({{10, 5}}, s.bench, s.pipeline(), scorer);
  EXPECT_EQ(t.rows[1].fallbacks, 5u);
  EXPECT_DOUBLE_EQ(t.rows[1].mrr_at_5, t.rows[0].mrr_at_5);
}
