#pragma once

#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "finrag/error.hpp"
#include "finrag/providers.hpp"

// Remote backends. Request and response shapes follow each vendor's public
// HTTP API; the wire itself sits behind `Transport` so tests can fake it.
//
// API keys (read by the CLI, or passed in directly):
//   OPENAI_API_KEY     chat completions and embeddings
//   ANTHROPIC_API_KEY  messages (judge by default)
//   COHERE_API_KEY     rerank

namespace finrag::http {

struct Request {
  std::string base_url;  // scheme + host, e.g. https://api.openai.com
  std::string path;
  std::map<std::string, std::string> headers;
  std::string body;
};

struct Response {
  int status = 0;
  std::string body;
};

class Transport {
 public:
  virtual ~Transport() = default;
  /// Throws ProviderError(transient) when the request never completes.
  virtual Response post(const Request& request) = 0;
};

namespace detail {

inline bool transient_status(int status) { return status == 408 || status == 429 || status >= 500; }

// Sends the request and parses a JSON body; maps HTTP failures onto
// ProviderError with the retryable statuses marked transient.
inline nlohmann::json call(Transport& t, const Request& req, double& latency_s) {
  const auto start = std::chrono::steady_clock::now();
  Response r = t.post(req);
  latency_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (r.status < 200 || r.status >= 300) {
    std::string snippet = r.body.substr(0, 300);
    throw ProviderError("HTTP " + std::to_string(r.status) + " from " + req.base_url + req.path + ": " + snippet,
                        transient_status(r.status));
  }
  try {
    return nlohmann::json::parse(r.body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProviderError(std::string("unparseable response body: ") + e.what(), false);
  }
}

template <typename F>
auto field(const char* what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError(std::string("unexpected ") + what + " response shape: " + e.what(), false);
  }
}

inline void require_key(const std::string& key, const std::string& who) {
  require(!key.empty(), ErrorCode::ConfigError, who + " needs an API key");
}

}  // namespace detail

class OpenAiChat final : public LlmBackend {
 public:
  OpenAiChat(std::shared_ptr<Transport> t, std::string model, std::string api_key,
             std::string base_url = "https://api.openai.com")
      : t_(std::move(t)), model_(std::move(model)), key_(std::move(api_key)), base_(std::move(base_url)) {
    detail::require_key(key_, "openai chat");
  }

  std::string id() const override { return model_; }

  Completion complete(const CompletionRequest& request) override {
    nlohmann::json body{{"model", model_},
                        {"messages", {{{"role", "user"}, {"content", request.prompt}}}},
                        {"max_tokens", request.max_output_tokens},
                        {"temperature", 0}};
    Request req{base_, "/v1/chat/completions",
                {{"Authorization", "Bearer " + key_}, {"Content-Type", "application/json"}},
                body.dump()};
    Completion c;
    auto j = detail::call(*t_, req, c.latency_s);
    detail::field("chat", [&] {
      c.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
      c.usage.input_tokens = j.at("usage").at("prompt_tokens").get<std::int64_t>();
      c.usage.output_tokens = j.at("usage").at("completion_tokens").get<std::int64_t>();
      return 0;
    });
    return c;
  }

 private:
  std::shared_ptr<Transport> t_;
  std::string model_, key_, base_;
};

class AnthropicMessages final : public LlmBackend {
 public:
  AnthropicMessages(std::shared_ptr<Transport> t, std::string model, std::string api_key,
                    std::string base_url = "https://api.anthropic.com")
      : t_(std::move(t)), model_(std::move(model)), key_(std::move(api_key)), base_(std::move(base_url)) {
    detail::require_key(key_, "anthropic messages");
  }

  std::string id() const override { return model_; }

  Completion complete(const CompletionRequest& request) override {
    nlohmann::json body{{"model", model_},
                        {"max_tokens", request.max_output_tokens},
                        {"messages", {{{"role", "user"}, {"content", request.prompt}}}}};
    Request req{base_, "/v1/messages",
                {{"x-api-key", key_}, {"anthropic-version", "2023-06-01"}, {"Content-Type", "application/json"}},
                body.dump()};
    Completion c;
    auto j = detail::call(*t_, req, c.latency_s);
    detail::field("messages", [&] {
      for (const auto& block : j.at("content")) {
        if (block.value("type", "") == "text") c.text += block.at("text").get<std::string>();
      }
      c.usage.input_tokens = j.at("usage").at("input_tokens").get<std::int64_t>();
      c.usage.output_tokens = j.at("usage").at("output_tokens").get<std::int64_t>();
      return 0;
    });
    return c;
  }

 private:
  std::shared_ptr<Transport> t_;
  std::string model_, key_, base_;
};

/// Vectors are re-normalized on arrival; the index requires unit norm.
class OpenAiEmbeddings final : public EmbeddingBackend {
 public:
  OpenAiEmbeddings(std::shared_ptr<Transport> t, std::string model, std::string api_key, std::size_t dimension,
                   std::string base_url = "https://api.openai.com")
      : t_(std::move(t)),
        model_(std::move(model)),
        key_(std::move(api_key)),
        dim_(dimension),
        base_(std::move(base_url)) {
    detail::require_key(key_, "openai embeddings");
    require(dim_ > 0, ErrorCode::ConfigError, "embedding dimension must be set");
  }

  std::string id() const override { return model_; }
  std::size_t dimension() const override { return dim_; }

  EmbeddingResult embed(std::span<const std::string> texts) override {
    require(!texts.empty(), ErrorCode::PreconditionViolated, "embed needs at least one text");
    nlohmann::json body{{"model", model_}, {"input", std::vector<std::string>(texts.begin(), texts.end())}};
    Request req{base_, "/v1/embeddings",
                {{"Authorization", "Bearer " + key_}, {"Content-Type", "application/json"}},
                body.dump()};
    EmbeddingResult r;
    auto j = detail::call(*t_, req, r.latency_s);
    detail::field("embeddings", [&] {
      const auto& data = j.at("data");
      r.vectors.resize(texts.size());
      std::size_t seen = 0;
      for (const auto& item : data) {
        const auto idx = item.at("index").get<std::size_t>();
        if (idx >= texts.size()) throw ProviderError("embedding index out of range", false);
        r.vectors[idx] = item.at("embedding").get<std::vector<double>>();
        ++seen;
      }
      if (seen != texts.size()) throw ProviderError("embedding count mismatch", false);
      r.usage.input_tokens = j.at("usage").at("prompt_tokens").get<std::int64_t>();
      return 0;
    });
    for (auto& v : r.vectors) {
      if (v.size() != dim_) throw ProviderError("embedding dimension " + std::to_string(v.size()) + " != " +
                                                    std::to_string(dim_), false);
      double n = 0;
      for (double x : v) n += x * x;
      n = std::sqrt(n);
      if (n == 0) throw ProviderError("zero embedding vector", false);
      for (double& x : v) x /= n;
    }
    return r;
  }

 private:
  std::shared_ptr<Transport> t_;
  std::string model_, key_;
  std::size_t dim_;
  std::string base_;
};

/// Cohere bills rerank in search units; each unit is recorded as one input
/// token so a per-unit price can go in the price table.
class CohereRerank final : public RerankBackend {
 public:
  CohereRerank(std::shared_ptr<Transport> t, std::string model, std::string api_key,
               std::string base_url = "https://api.cohere.com")
      : t_(std::move(t)), model_(std::move(model)), key_(std::move(api_key)), base_(std::move(base_url)) {
    detail::require_key(key_, "cohere rerank");
  }

  std::string id() const override { return model_; }

  ScoreResult score_pairs(std::string_view question, std::span<const Passage> passages) override {
    require(!passages.empty(), ErrorCode::PreconditionViolated, "score_pairs needs at least one passage");
    std::vector<std::string> docs;
    for (const auto& p : passages) docs.push_back(p.text);
    nlohmann::json body{{"model", model_}, {"query", std::string(question)}, {"documents", docs},
                        {"top_n", docs.size()}};
    Request req{base_, "/v2/rerank",
                {{"Authorization", "Bearer " + key_}, {"Content-Type", "application/json"}},
                body.dump()};
    ScoreResult r;
    auto j = detail::call(*t_, req, r.latency_s);
    detail::field("rerank", [&] {
      r.scores.assign(passages.size(), std::nan(""));
      for (const auto& item : j.at("results")) {
        const auto idx = item.at("index").get<std::size_t>();
        if (idx >= passages.size()) throw ProviderError("rerank index out of range", false);
        r.scores[idx] = item.at("relevance_score").get<double>();
      }
      for (double s : r.scores) {
        if (!std::isfinite(s)) throw ProviderError("rerank response missed a passage", false);
      }
      if (j.contains("meta") && j["meta"].contains("billed_units")) {
        r.usage.input_tokens = j["meta"]["billed_units"].value("search_units", std::int64_t{0});
      }
      return 0;
    });
    return r;
  }

 private:
  std::shared_ptr<Transport> t_;
  std::string model_, key_, base_;
};

}  // namespace finrag::http
