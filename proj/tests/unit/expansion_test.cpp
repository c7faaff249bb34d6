#include <gtest/gtest.h>

#include <chrono>
#include <random>

#include "finrag/expansion.hpp"

using namespace finrag;

namespace {

std::vector<Chunk> doc_chunks(const std::string& doc, std::size_t n) {
  std::vector<Chunk> out;
  for (std::size_t i = 0; i < n; ++i) {
    Chunk c;
    c.doc_id = doc;
    c.index = i;
    c.chunk_id = make_chunk_id(doc, i);
    c.text = doc + " chunk " + std::to_string(i);
    c.page_start = c.page_end = static_cast<std::uint32_t>(i + 1);
    out.push_back(c);
  }
  return out;
}

InMemoryChunkStore store_of(std::vector<std::pair<std::string, std::size_t>> docs) {
  InMemoryChunkStore s;
  for (const auto& [d, n] : docs) {
    for (auto& c : doc_chunks(d, n)) s.add(c);
  }
  return s;
}

ScoredHit target(const ChunkStore& s, const std::string& doc, std::size_t idx, std::size_t rank = 1) {
  auto c = s.fetch(doc, idx);
  ScoredHit h;
  h.chunk = c.ref();
  h.text = c.text;
  h.rank = rank;
  return h;
}

std::vector<std::size_t> indices(const Expansion& e) {
  std::vector<std::size_t> out;
  for (const auto& c : e.chunks) out.push_back(c.chunk.index);
  return out;
}

}  // namespace

TEST(Expand, WindowTwoAroundFive) {
  auto s = store_of({{"d", 10}});
  auto e = expand({target(s, "d", 5)}, {2}, s);
  EXPECT_EQ(indices(e), (std::vector<std::size_t>{3, 4, 5, 6, 7}));
  EXPECT_EQ(e.neighbor_fetches, 4u);
  for (const auto& c : e.chunks) EXPECT_EQ(c.is_target, c.chunk.index == 5);
  EXPECT_EQ(e.context(), "d chunk 3\n\nd chunk 4\n\nd chunk 5\n\nd chunk 6\n\nd chunk 7");
}

TEST(Expand, ClampsAtDocumentEdges) {
  auto s = store_of({{"d", 10}});
  EXPECT_EQ(indices(expand({target(s, "d", 0)}, {1}, s)), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(indices(expand({target(s, "d", 9)}, {3}, s)), (std::vector<std::size_t>{6, 7, 8, 9}));
}

TEST(Expand, OverlappingWindowsDeduplicate) {
  auto s = store_of({{"d", 10}});
  auto e = expand({target(s, "d", 4, 1), target(s, "d", 6, 2)}, {1}, s);
  EXPECT_EQ(indices(e), (std::vector<std::size_t>{3, 4, 5, 6, 7}));
  EXPECT_EQ(e.neighbor_fetches, 3u);
  EXPECT_EQ(e.chunks[1].target_rank, 1u);
  EXPECT_EQ(e.chunks[3].target_rank, 2u);
}

TEST(Expand, WindowZeroIsIdentity) {
  auto s = store_of({{"d", 10}});
  auto e = expand({target(s, "d", 2), target(s, "d", 7)}, {0}, s);
  EXPECT_EQ(indices(e), (std::vector<std::size_t>{2, 7}));
  EXPECT_EQ(e.neighbor_fetches, 0u);
}

TEST(Expand, NeverCrossesDocuments) {
  auto s = store_of({{"a", 3}, {"b", 3}});
  auto e = expand({target(s, "a", 2)}, {2}, s);
  for (const auto& c : e.chunks) EXPECT_EQ(c.chunk.doc_id, "a");
  EXPECT_EQ(e.chunks.size(), 3u);
}

TEST(Expand, UnknownTargetIsAStoreError) {
  auto s = store_of({{"d", 3}});
  ScoredHit h;
  h.chunk = {"x:0", "x", 0, 1, 1};
  try {
    expand({h}, {1}, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::StoreError);
  }
}

TEST(Expand, FailingFetchFailsExpansion) {
  auto inner = store_of({{"d", 10}});
  DelayedChunkStore s(inner, std::chrono::milliseconds(0), {"d:6"});
  for (auto mode : {FetchMode::Sync, FetchMode::Async}) {
    try {
      expand({target(inner, "d", 5)}, {1, mode}, s);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::StoreError);
    }
  }
}

TEST(Expand, InvalidConfig) {
  auto s = store_of({{"d", 3}});
  EXPECT_THROW(expand({}, {-1}, s), Error);
  EXPECT_THROW(parse_fetch_mode("parallel"), Error);
  EXPECT_EQ(parse_fetch_mode("async"), FetchMode::Async);
}

TEST(Expand, SyncAndAsyncAgreeOnRandomTargets) {
  auto s = store_of({{"a", 40}, {"b", 25}, {"c", 5}});
  std::mt19937_64 rng(3);
  const std::vector<std::pair<std::string, std::size_t>> docs = {{"a", 40}, {"b", 25}, {"c", 5}};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ScoredHit> targets;
    const std::size_t n = 1 + rng() % 8;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& [d, count] = docs[rng() % docs.size()];
      targets.push_back(target(s, d, rng() % count, i + 1));
    }
    const int w = static_cast<int>(rng() % 4);
    auto sync = expand(targets, {w, FetchMode::Sync}, s);
    auto async = expand(targets, {w, FetchMode::Async, 1 + rng() % 8}, s);
    ASSERT_EQ(sync.context(), async.context());
    ASSERT_EQ(sync.chunks, async.chunks);

    // Size bound and per-target contiguity.
    std::set<std::string> distinct;
    for (const auto& t : targets) distinct.insert(t.chunk.chunk_id);
    EXPECT_LE(sync.chunks.size(), distinct.size() * static_cast<std::size_t>(2 * w + 1));
    std::set<std::string> got;
    for (const auto& c : sync.chunks) got.insert(c.chunk.chunk_id);
    for (const auto& t : targets) {
      const auto count = *s.chunk_count(t.chunk.doc_id);
      const std::size_t lo = t.chunk.index >= static_cast<std::size_t>(w) ? t.chunk.index - w : 0;
      const std::size_t hi = std::min(t.chunk.index + w, count - 1);
      for (std::size_t i = lo; i <= hi; ++i) EXPECT_TRUE(got.count(make_chunk_id(t.chunk.doc_id, i)));
    }
  }
}

TEST(Expand, AsyncOverlapsSlowFetches) {
  auto inner = store_of({{"d", 10}});
  DelayedChunkStore s(inner, std::chrono::milliseconds(50));
  auto t0 = std::chrono::steady_clock::now();
  auto sync = expand({target(inner, "d", 5)}, {2, FetchMode::Sync}, s);
  const double sync_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  t0 = std::chrono::steady_clock::now();
  auto async = expand({target(inner, "d", 5)}, {2, FetchMode::Async}, s);
  const double async_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_EQ(s.fetches(), 8u);
  EXPECT_EQ(sync.context(), async.context());
  EXPECT_GE(sync_s, 0.2);
  EXPECT_LT(async_s, 0.12);
  EXPECT_LT(async_s, 0.6 * sync_s);
}
