#pragma once

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "finrag/corpus.hpp"
#include "finrag/error.hpp"

namespace finrag {

// ---------------------------------------------------------------------------
// Clocks
// ---------------------------------------------------------------------------

/// Time source for stage traces. Provider responses carry their own latency;
/// `charge` lets a virtual clock account for it so offline runs produce
/// reproducible timings, while the real clock ignores it (the time has
/// already passed).
class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now() const = 0;
  virtual void charge(double seconds) = 0;
};

class SteadyClock final : public Clock {
 public:
  SteadyClock() : origin_(std::chrono::steady_clock::now()) {}
  double now() const override {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - origin_).count();
  }
  void charge(double) override {}

 private:
  std::chrono::steady_clock::time_point origin_;
};

class VirtualClock final : public Clock {
 public:
  double now() const override { return now_; }
  void charge(double seconds) override { now_ += seconds; }

 private:
  double now_ = 0.0;
};

// ---------------------------------------------------------------------------
// Requests and responses
// ---------------------------------------------------------------------------

struct Usage {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;

  std::int64_t total() const noexcept { return input_tokens + output_tokens; }
  Usage& operator+=(const Usage& o) noexcept {
    input_tokens += o.input_tokens;
    output_tokens += o.output_tokens;
    return *this;
  }
};

struct CompletionRequest {
  std::string purpose;  // recorded as the transcript operation
  std::string prompt;
  // Template inputs the prompt was rendered from. Remote backends ignore
  // them; offline simulators read them instead of re-parsing the prompt.
  std::map<std::string, std::string> slots;
  int max_output_tokens = 1024;
};

struct Completion {
  std::string text;
  Usage usage;
  double latency_s = 0.0;
};

struct EmbeddingResult {
  std::vector<std::vector<double>> vectors;
  Usage usage;
  double latency_s = 0.0;
};

/// A passage offered to a relevance scorer. Remote cross-encoders only see
/// `text`; the page span lets offline oracle scorers judge relevance.
struct Passage {
  std::string text;
  std::string doc_id;
  std::uint32_t page_start = 0;
  std::uint32_t page_end = 0;
};

struct ScoreResult {
  std::vector<double> scores;
  Usage usage;
  double latency_s = 0.0;
};

class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  virtual std::string id() const = 0;
  virtual Completion complete(const CompletionRequest& request) = 0;
};

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual std::string id() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual EmbeddingResult embed(std::span<const std::string> texts) = 0;
};

class RerankBackend {
 public:
  virtual ~RerankBackend() = default;
  virtual std::string id() const = 0;
  virtual bool supports_batch() const { return true; }
  virtual ScoreResult score_pairs(std::string_view question, std::span<const Passage> passages) = 0;
};

// ---------------------------------------------------------------------------
// Transcripts
// ---------------------------------------------------------------------------

enum class Phase { Preprocessing, Runtime };

constexpr std::string_view to_string(Phase p) noexcept {
  return p == Phase::Preprocessing ? "preprocessing" : "runtime";
}

/// Operations that build offline artifacts are preprocessing; everything a
/// question triggers is runtime.
inline Phase phase_of(std::string_view operation) noexcept {
  if (operation == "tree_generation" || operation == "tree_repair" || operation == "embed_corpus") {
    return Phase::Preprocessing;
  }
  return Phase::Runtime;
}

enum class Outcome { Ok, Retried, Failed };

constexpr std::string_view to_string(Outcome o) noexcept {
  switch (o) {
    case Outcome::Ok: return "ok";
    case Outcome::Retried: return "retried";
    case Outcome::Failed: return "failed";
  }
  return "?";
}

struct TranscriptEntry {
  std::string provider_id;
  std::string operation;
  Phase phase = Phase::Runtime;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  double latency_s = 0.0;
  Outcome outcome = Outcome::Ok;
  int attempts = 1;
};

inline nlohmann::ordered_json to_json(const TranscriptEntry& e) {
  return {{"provider_id", e.provider_id},
          {"operation", e.operation},
          {"phase", to_string(e.phase)},
          {"input_tokens", e.input_tokens},
          {"output_tokens", e.output_tokens},
          {"latency_s", e.latency_s},
          {"outcome", to_string(e.outcome)},
          {"attempts", e.attempts}};
}

class TranscriptLog {
 public:
  void append(TranscriptEntry entry) {
    std::lock_guard lock(mutex_);
    entries_.push_back(std::move(entry));
  }

  std::vector<TranscriptEntry> snapshot() const {
    std::lock_guard lock(mutex_);
    return entries_;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

  void clear() {
    std::lock_guard lock(mutex_);
    entries_.clear();
  }

 private:
  mutable std::mutex mutex_;
  std::vector<TranscriptEntry> entries_;
};

// ---------------------------------------------------------------------------
// Concurrency bound and retries
// ---------------------------------------------------------------------------

/// Counting semaphore that admits waiters strictly in arrival order.
class FairSemaphore {
 public:
  explicit FairSemaphore(std::size_t permits) : permits_(permits == 0 ? 1 : permits) {}

  void acquire() {
    std::unique_lock lock(mutex_);
    const std::uint64_t ticket = next_ticket_++;
    cv_.wait(lock, [&] { return ticket == serving_ && permits_ > 0; });
    --permits_;
    ++serving_;
    cv_.notify_all();
  }

  void release() {
    {
      std::lock_guard lock(mutex_);
      ++permits_;
    }
    cv_.notify_all();
  }

  class Guard {
   public:
    explicit Guard(FairSemaphore& s) : s_(s) { s_.acquire(); }
    ~Guard() { s_.release(); }
    Guard(const Guard&) = delete;
    Guard& operator=(const Guard&) = delete;

   private:
    FairSemaphore& s_;
  };

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::size_t permits_;
  std::uint64_t next_ticket_ = 0;
  std::uint64_t serving_ = 0;
};

struct RetryPolicy {
  int max_attempts = 3;
  double base_backoff_s = 0.5;
  double multiplier = 2.0;
  std::function<void(double)> sleep = [](double s) {
    if (s > 0) std::this_thread::sleep_for(std::chrono::duration<double>(s));
  };

  double backoff(int failed_attempts) const {
    return base_backoff_s * std::pow(multiplier, failed_attempts - 1);
  }

  static RetryPolicy immediate() {
    RetryPolicy p;
    p.base_backoff_s = 0.0;
    return p;
  }
};

struct ClientOptions {
  RetryPolicy retry;
  std::size_t max_concurrency = 4;
};

namespace detail {

// Runs `call` under the concurrency bound with bounded retries on transient
// ProviderErrors and appends exactly one transcript entry.
template <typename Result, typename Call>
Result invoke_with_retry(const std::string& provider_id, std::string_view operation, FairSemaphore& gate,
                         const RetryPolicy& policy, TranscriptLog& log, Call&& call) {
  FairSemaphore::Guard guard(gate);
  TranscriptEntry entry;
  entry.provider_id = provider_id;
  entry.operation = std::string(operation);
  entry.phase = phase_of(operation);
  const int max_attempts = policy.max_attempts < 1 ? 1 : (policy.max_attempts > 3 ? 3 : policy.max_attempts);
  double elapsed = 0.0;
  for (int attempt = 1;; ++attempt) {
    const auto started = std::chrono::steady_clock::now();
    try {
      Result result = call();
      entry.input_tokens = result.usage.input_tokens;
      entry.output_tokens = result.usage.output_tokens;
      entry.latency_s = elapsed + result.latency_s;
      entry.attempts = attempt;
      entry.outcome = attempt == 1 ? Outcome::Ok : Outcome::Retried;
      log.append(entry);
      return result;
    } catch (const ProviderError& e) {
      elapsed += std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      if (!e.transient() || attempt >= max_attempts) {
        entry.attempts = attempt;
        entry.latency_s = elapsed;
        entry.outcome = Outcome::Failed;
        log.append(entry);
        throw ProviderError(provider_id + " " + std::string(operation) + " failed after " +
                                std::to_string(attempt) + " attempt(s): " + e.what(),
                            false);
      }
      const double wait = policy.backoff(attempt);
      policy.sleep(wait);
      elapsed += wait;
    } catch (const Error&) {
      entry.attempts = attempt;
      entry.outcome = Outcome::Failed;
      log.append(entry);
      throw;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Clients: what the pipeline modules talk to
// ---------------------------------------------------------------------------

class LlmClient {
 public:
  LlmClient(std::shared_ptr<LlmBackend> backend, std::shared_ptr<TranscriptLog> log, ClientOptions options = {})
      : backend_(std::move(backend)),
        log_(std::move(log)),
        options_(std::move(options)),
        gate_(std::make_unique<FairSemaphore>(options_.max_concurrency)) {}

  std::string id() const { return backend_->id(); }
  TranscriptLog& transcript() const { return *log_; }

  Completion complete(const CompletionRequest& request) const {
    return detail::invoke_with_retry<Completion>(backend_->id(), request.purpose, *gate_, options_.retry, *log_,
                                                 [&] { return backend_->complete(request); });
  }

 private:
  std::shared_ptr<LlmBackend> backend_;
  std::shared_ptr<TranscriptLog> log_;
  ClientOptions options_;
  std::unique_ptr<FairSemaphore> gate_;
};

class EmbeddingClient {
 public:
  EmbeddingClient(std::shared_ptr<EmbeddingBackend> backend, std::shared_ptr<TranscriptLog> log,
                  ClientOptions options = {})
      : backend_(std::move(backend)),
        log_(std::move(log)),
        options_(std::move(options)),
        gate_(std::make_unique<FairSemaphore>(options_.max_concurrency)) {}

  std::string id() const { return backend_->id(); }
  std::size_t dimension() const { return backend_->dimension(); }
  TranscriptLog& transcript() const { return *log_; }

  /// One unit-norm vector per text. `operation` is "embed_corpus" when
  /// building an index and "embed_query" at question time.
  EmbeddingResult embed(std::span<const std::string> texts, std::string_view operation = "embed_query") const {
    require(!texts.empty(), ErrorCode::PreconditionViolated, "embed needs at least one text");
    auto result = detail::invoke_with_retry<EmbeddingResult>(backend_->id(), operation, *gate_, options_.retry,
                                                             *log_, [&] { return backend_->embed(texts); });
    if (result.vectors.size() != texts.size()) {
      fail(ErrorCode::ProviderFailure, backend_->id() + " returned " + std::to_string(result.vectors.size()) +
                                           " vectors for " + std::to_string(texts.size()) + " texts");
    }
    for (auto& v : result.vectors) {
      double n = 0;
      for (double x : v) n += x * x;
      n = std::sqrt(n);
      if (n > 0) {
        for (double& x : v) x /= n;
      }
    }
    return result;
  }

  std::vector<double> embed_one(const std::string& text, std::string_view operation = "embed_query") const {
    return embed(std::span<const std::string>(&text, 1), operation).vectors.front();
  }

 private:
  std::shared_ptr<EmbeddingBackend> backend_;
  std::shared_ptr<TranscriptLog> log_;
  ClientOptions options_;
  std::unique_ptr<FairSemaphore> gate_;
};

class RerankClient {
 public:
  RerankClient(std::shared_ptr<RerankBackend> backend, std::shared_ptr<TranscriptLog> log, ClientOptions options = {})
      : backend_(std::move(backend)),
        log_(std::move(log)),
        options_(std::move(options)),
        gate_(std::make_unique<FairSemaphore>(options_.max_concurrency)) {}

  std::string id() const { return backend_->id(); }
  bool supports_batch() const { return backend_->supports_batch(); }

  ScoreResult score_pairs(std::string_view question, std::span<const Passage> passages) const {
    require(!passages.empty(), ErrorCode::PreconditionViolated, "score_pairs needs at least one passage");
    auto result = detail::invoke_with_retry<ScoreResult>(backend_->id(), "rerank", *gate_, options_.retry, *log_,
                                                         [&] { return backend_->score_pairs(question, passages); });
    if (result.scores.size() != passages.size()) {
      fail(ErrorCode::ProviderFailure, backend_->id() + " returned the wrong number of scores");
    }
    for (double s : result.scores) {
      if (!std::isfinite(s)) fail(ErrorCode::ProviderFailure, backend_->id() + " returned a non-finite score");
    }
    return result;
  }

 private:
  std::shared_ptr<RerankBackend> backend_;
  std::shared_ptr<TranscriptLog> log_;
  ClientOptions options_;
  std::unique_ptr<FairSemaphore> gate_;
};

/// Everything a pipeline needs, sharing one transcript log.
struct Providers {
  std::shared_ptr<TranscriptLog> transcript;
  std::shared_ptr<LlmClient> llm;
  std::shared_ptr<EmbeddingClient> embedder;
  std::shared_ptr<RerankClient> reranker;  // optional
};

// ---------------------------------------------------------------------------
// Prices
// ---------------------------------------------------------------------------

struct TokenPrice {
  double input_per_token = 0.0;
  double output_per_token = 0.0;
};

/// Per-provider token prices. File form:
///   {"currency": "USD", "providers": {"<provider_id>": {"input_per_token": x, "output_per_token": y}}}
class PriceTable {
 public:
  PriceTable() = default;

  PriceTable& set(std::string provider_id, TokenPrice price) {
    require(price.input_per_token >= 0 && price.output_per_token >= 0, ErrorCode::InvalidConfig,
            "prices must be non-negative");
    prices_[std::move(provider_id)] = price;
    return *this;
  }

  const TokenPrice* find(std::string_view provider_id) const {
    auto it = prices_.find(std::string(provider_id));
    return it == prices_.end() ? nullptr : &it->second;
  }

  const std::string& currency() const noexcept { return currency_; }
  const std::map<std::string, TokenPrice>& entries() const noexcept { return prices_; }

  PriceTable scaled(double factor) const {
    PriceTable out = *this;
    for (auto& [_, p] : out.prices_) {
      p.input_per_token *= factor;
      p.output_per_token *= factor;
    }
    return out;
  }

  static PriceTable from_json(const nlohmann::json& j) {
    PriceTable table;
    try {
      if (j.contains("currency")) table.currency_ = j.at("currency").get<std::string>();
      for (const auto& [id, p] : j.at("providers").items()) {
        table.set(id, {p.at("input_per_token").get<double>(), p.at("output_per_token").get<double>()});
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::InvalidConfig, std::string("price table: ") + e.what());
    }
    return table;
  }

  static PriceTable load(const std::filesystem::path& path) {
    try {
      return from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
    }
  }

 private:
  std::string currency_ = "USD";
  std::map<std::string, TokenPrice> prices_;
};

}  // namespace finrag
