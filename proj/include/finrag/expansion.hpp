#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "finrag/corpus.hpp"
#include "finrag/error.hpp"
#include "finrag/vector_index.hpp"

namespace finrag {

enum class FetchMode { Sync, Async };

constexpr std::string_view to_string(FetchMode m) noexcept { return m == FetchMode::Sync ? "sync" : "async"; }

inline FetchMode parse_fetch_mode(std::string_view s) {
  if (s == "sync") return FetchMode::Sync;
  if (s == "async") return FetchMode::Async;
  fail(ErrorCode::ConfigError, "fetch mode must be sync or async, got '" + std::string(s) + "'");
}

struct ExpansionConfig {
  int window = 1;  // neighbors per side; 0 is the identity expansion
  FetchMode fetch_mode = FetchMode::Sync;
  std::size_t max_parallel = 8;

  void validate() const {
    require(window >= 0, ErrorCode::ConfigError, "expansion window must be >= 0");
    require(max_parallel >= 1, ErrorCode::ConfigError, "expansion parallelism must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Chunk stores
// ---------------------------------------------------------------------------

/// Positional access to chunks. `chunk_count` and `contains` are metadata
/// lookups; `fetch` is the (possibly slow) content read.
class ChunkStore {
 public:
  virtual ~ChunkStore() = default;
  virtual std::optional<std::size_t> chunk_count(std::string_view doc_id) const = 0;
  virtual bool contains(std::string_view chunk_id) const = 0;
  virtual Chunk fetch(std::string_view doc_id, std::size_t index) const = 0;
};

class InMemoryChunkStore final : public ChunkStore {
 public:
  InMemoryChunkStore() = default;
  explicit InMemoryChunkStore(std::vector<Chunk> chunks) {
    for (auto& c : chunks) add(std::move(c));
  }

  static InMemoryChunkStore from_index(const VectorIndex& index) {
    InMemoryChunkStore s;
    for (const auto& c : index.chunks()) s.add(c.chunk);
    return s;
  }

  void add(Chunk c) {
    auto& slots = docs_[c.doc_id];
    if (slots.size() <= c.index) slots.resize(c.index + 1);
    ids_.insert(c.chunk_id);
    slots[c.index] = std::move(c);
  }

  std::optional<std::size_t> chunk_count(std::string_view doc_id) const override {
    auto it = docs_.find(std::string(doc_id));
    if (it == docs_.end()) return std::nullopt;
    return it->second.size();
  }

  bool contains(std::string_view chunk_id) const override { return ids_.count(std::string(chunk_id)) > 0; }

  Chunk fetch(std::string_view doc_id, std::size_t index) const override {
    auto it = docs_.find(std::string(doc_id));
    if (it == docs_.end() || index >= it->second.size() || !it->second[index]) {
      fail(ErrorCode::StoreError, "no chunk " + make_chunk_id(doc_id, index) + " in store");
    }
    return *it->second[index];
  }

 private:
  std::unordered_map<std::string, std::vector<std::optional<Chunk>>> docs_;
  std::set<std::string> ids_;
};

/// Adds a fixed delay to every fetch and can fail chosen chunk ids, to model
/// a remote store.
class DelayedChunkStore final : public ChunkStore {
 public:
  DelayedChunkStore(const ChunkStore& inner, std::chrono::milliseconds delay, std::set<std::string> failing = {})
      : inner_(inner), delay_(delay), failing_(std::move(failing)) {}

  std::optional<std::size_t> chunk_count(std::string_view doc_id) const override { return inner_.chunk_count(doc_id); }
  bool contains(std::string_view chunk_id) const override { return inner_.contains(chunk_id); }

  Chunk fetch(std::string_view doc_id, std::size_t index) const override {
    std::this_thread::sleep_for(delay_);
    fetches_.fetch_add(1);
    const auto id = make_chunk_id(doc_id, index);
    if (failing_.count(id)) fail(ErrorCode::StoreError, "fetch of " + id + " failed");
    return inner_.fetch(doc_id, index);
  }

  std::size_t fetches() const { return fetches_.load(); }

 private:
  const ChunkStore& inner_;
  std::chrono::milliseconds delay_;
  std::set<std::string> failing_;
  mutable std::atomic<std::size_t> fetches_{0};
};

// ---------------------------------------------------------------------------
// Expansion
// ---------------------------------------------------------------------------

struct ExpandedChunk {
  ChunkRef chunk;
  std::string text;
  bool is_target = false;
  std::optional<std::size_t> target_rank;  // retrieval rank when a target

  friend bool operator==(const ExpandedChunk&, const ExpandedChunk&) = default;
};

struct Expansion {
  std::vector<ExpandedChunk> chunks;  // ordered by (doc_id, index)
  std::size_t neighbor_fetches = 0;
  double wall_s = 0.0;
  int window = 0;

  /// Chunk texts in order, separated by blank lines.
  std::string context() const {
    std::string out;
    for (const auto& c : chunks) {
      if (!out.empty()) out += "\n\n";
      out += c.text;
    }
    return out;
  }
};

namespace detail {

struct FetchRequest {
  std::string doc_id;
  std::size_t index;
};

inline std::vector<Chunk> fetch_sync(const std::vector<FetchRequest>& reqs, const ChunkStore& store) {
  std::vector<Chunk> out;
  out.reserve(reqs.size());
  for (const auto& r : reqs) out.push_back(store.fetch(r.doc_id, r.index));
  return out;
}

}  // namespace detail

/// Fetches all requests concurrently with at most `parallel` in flight.
/// Results are positional, so the order never depends on completion time.
/// Any failure fails the whole batch.
inline std::vector<Chunk> fetch_neighbors_async(const std::vector<detail::FetchRequest>& reqs, const ChunkStore& store,
                                                std::size_t parallel) {
  std::vector<std::optional<Chunk>> slots(reqs.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= reqs.size() || failed.load()) return;
      try {
        slots[i] = store.fetch(reqs[i].doc_id, reqs[i].index);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  const std::size_t n = std::min(std::max<std::size_t>(parallel, 1), reqs.size());
  std::vector<std::thread> threads;
  threads.reserve(n);
  for (std::size_t t = 0; t < n; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (error) {
    try {
      std::rethrow_exception(error);
    } catch (const Error& e) {
      fail(ErrorCode::StoreError, std::string("neighbor fetch failed: ") + e.what());
    }
  }
  std::vector<Chunk> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

/// Small-to-big expansion: every target brings the chunks within `window`
/// positions of it in its own document. Target texts come from the hits;
/// only neighbors are fetched.
inline Expansion expand(const std::vector<ScoredHit>& targets, const ExpansionConfig& cfg, const ChunkStore& store) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  std::map<std::pair<std::string, std::size_t>, ExpandedChunk> picked;
  std::map<std::string, std::size_t> counts;
  for (const auto& t : targets) {
    if (!store.contains(t.chunk.chunk_id)) fail(ErrorCode::StoreError, "unknown chunk_ref " + t.chunk.chunk_id);
    auto count = store.chunk_count(t.chunk.doc_id);
    if (!count || t.chunk.index >= *count) fail(ErrorCode::StoreError, "unknown chunk_ref " + t.chunk.chunk_id);
    counts[t.chunk.doc_id] = *count;
    auto& slot = picked[{t.chunk.doc_id, t.chunk.index}];
    if (!slot.is_target || (t.rank && (!slot.target_rank || t.rank < *slot.target_rank))) {
      slot = ExpandedChunk{t.chunk, t.text, true, t.rank ? std::optional<std::size_t>(t.rank) : std::nullopt};
    }
  }

  std::vector<detail::FetchRequest> reqs;
  std::set<std::pair<std::string, std::size_t>> wanted;
  const auto w = static_cast<std::size_t>(cfg.window);
  for (const auto& [key, _] : picked) {
    const auto& [doc, idx] = key;
    const std::size_t lo = idx >= w ? idx - w : 0;
    const std::size_t hi = std::min(idx + w, counts[doc] - 1);
    for (std::size_t i = lo; i <= hi; ++i) {
      if (!picked.count({doc, i})) wanted.insert({doc, i});
    }
  }
  for (const auto& [doc, idx] : wanted) reqs.push_back({doc, idx});

  auto fetched = cfg.fetch_mode == FetchMode::Async ? fetch_neighbors_async(reqs, store, cfg.max_parallel)
                                                    : detail::fetch_sync(reqs, store);
  for (auto& c : fetched) {
    picked[{c.doc_id, c.index}] = ExpandedChunk{c.ref(), std::move(c.text), false, std::nullopt};
  }

  Expansion out;
  out.window = cfg.window;
  out.neighbor_fetches = reqs.size();
  out.chunks.reserve(picked.size());
  for (auto& [_, c] : picked) out.chunks.push_back(std::move(c));
  out.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

}  // namespace finrag
