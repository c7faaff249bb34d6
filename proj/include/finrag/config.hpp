#pragma once

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "finrag/agent.hpp"
#include "finrag/bench.hpp"
#include "finrag/corpus.hpp"
#include "finrag/error.hpp"
#include "finrag/expansion.hpp"
#include "finrag/rerank.hpp"

namespace finrag {

/// One provider slot. `kind` picks the backend; "mock" kinds run offline.
struct ProviderRef {
  ProviderRef() = default;
  ProviderRef(std::string k, std::string m) : kind(std::move(k)), model(std::move(m)) {}

  std::string kind = "mock";
  std::string model;
  std::string api_key;  // already interpolated; empty for mocks
  std::string base_url;
  std::size_t dimension = 0;  // embedders only
  double noise = 0.3;         // noisy scorer only
};

struct ProviderRefs {
  ProviderRef llm{"mock", "mock-llm"};
  ProviderRef embedder{"mock", "mock-hash-embedder"};
  ProviderRef reranker{"lexical", "mock-lexical-scorer"};
  ProviderRef judge{"mock", "mock-judge"};
  std::size_t max_concurrency = 4;
};

struct EngineConfig {
  std::filesystem::path corpus;
  std::optional<std::filesystem::path> benchmark;
  ChunkingConfig chunking;
  std::string architecture = "vector";  // vector | tree
  std::optional<RerankConfig> rerank;
  std::optional<ExpansionConfig> expansion;
  AgentConfig agent;
  ProviderRefs providers;
  std::optional<std::filesystem::path> prices;
  std::filesystem::path out = "out";
  std::uint64_t seed = 0;
  bool with_summaries = false;
  bool deterministic_trees = false;

  /// The agent pipeline implied by architecture + optional stages.
  AgentConfig effective_agent() const {
    AgentConfig a = agent;
    if (architecture == "tree") {
      a.stages = {PipelineStage::TreeTraverse};
    } else {
      a.stages = {PipelineStage::Hybrid};
      if (rerank) {
        a.stages.push_back(PipelineStage::Rerank);
        a.rerank = *rerank;
      }
      if (expansion) {
        a.stages.push_back(PipelineStage::Expand);
        a.expansion = *expansion;
      }
    }
    return a;
  }

  void validate() const {
    require(architecture == "vector" || architecture == "tree", ErrorCode::ConfigError,
            "architecture must be vector or tree, got '" + architecture + "'");
    chunking.validate();
    if (rerank) rerank->validate();
    if (expansion) expansion->validate();
    effective_agent().validate();
    require(providers.max_concurrency >= 1, ErrorCode::ConfigError, "max_concurrency must be >= 1");
  }
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline std::optional<std::string> process_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (!v) return std::nullopt;
  return std::string(v);
}

/// Replaces every ${NAME} with the variable's value. An unset variable is
/// a configuration error; "$$" escapes a literal dollar sign.
inline std::string interpolate_env(std::string_view s, const EnvLookup& env = process_env) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '$') {
      out += s[i];
      continue;
    }
    if (i + 1 < s.size() && s[i + 1] == '$') {
      out += '$';
      ++i;
      continue;
    }
    if (i + 1 < s.size() && s[i + 1] == '{') {
      const auto close = s.find('}', i + 2);
      require(close != std::string_view::npos, ErrorCode::ConfigError, "unterminated ${ in '" + std::string(s) + "'");
      const std::string name(s.substr(i + 2, close - i - 2));
      require(!name.empty(), ErrorCode::ConfigError, "empty ${} reference");
      auto v = env(name);
      require(v.has_value(), ErrorCode::ConfigError, "environment variable " + name + " is not set");
      out += *v;
      i = close;
      continue;
    }
    out += '$';
  }
  return out;
}

inline void interpolate_json(nlohmann::json& j, const EnvLookup& env) {
  if (j.is_string()) {
    j = interpolate_env(j.get<std::string>(), env);
  } else if (j.is_structured()) {
    for (auto& v : j) interpolate_json(v, env);
  }
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                                std::string_view where) {
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == k;
    require(ok, ErrorCode::ConfigError, "unknown key '" + k + "' in " + std::string(where));
  }
}

inline ProviderRef provider_ref_from_json(const nlohmann::json& j, ProviderRef base, std::string_view where) {
  reject_unknown_keys(j, {"kind", "model", "api_key", "base_url", "dimension", "noise"}, where);
  base.kind = j.value("kind", base.kind);
  base.model = j.value("model", base.model);
  base.api_key = j.value("api_key", base.api_key);
  base.base_url = j.value("base_url", base.base_url);
  base.dimension = j.value("dimension", base.dimension);
  base.noise = j.value("noise", base.noise);
  return base;
}

inline nlohmann::ordered_json provider_ref_to_json(const ProviderRef& p) {
  nlohmann::ordered_json j{{"kind", p.kind}, {"model", p.model}};
  if (!p.base_url.empty()) j["base_url"] = p.base_url;
  if (p.dimension) j["dimension"] = p.dimension;
  if (p.kind == "noisy") j["noise"] = p.noise;
  // Secrets are never echoed back.
  if (!p.api_key.empty()) j["api_key"] = "<set>";
  return j;
}

}  // namespace detail

/// Parses a config document. Relative paths resolve against `base_dir`;
/// every referenced input path must exist.
inline EngineConfig config_from_json(nlohmann::json j, const std::filesystem::path& base_dir,
                                     const EnvLookup& env = process_env) {
  namespace fs = std::filesystem;
  require(j.is_object(), ErrorCode::ConfigError, "config must be a JSON object");
  interpolate_json(j, env);
  detail::reject_unknown_keys(j,
                              {"corpus", "benchmark", "chunking", "architecture", "rerank", "expansion", "agent",
                               "providers", "prices", "out", "seed", "trees"},
                              "config");
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };
  auto existing = [&](const char* key) {
    fs::path p = resolve(j.at(key).get<std::string>());
    require(fs::exists(p), ErrorCode::ConfigError, std::string(key) + " path does not exist: " + p.string());
    return p;
  };

  EngineConfig c;
  try {
    require(j.contains("corpus"), ErrorCode::ConfigError, "config needs a corpus path");
    c.corpus = existing("corpus");
    if (j.contains("benchmark")) c.benchmark = existing("benchmark");
    if (j.contains("prices")) c.prices = existing("prices");
    if (j.contains("out")) c.out = resolve(j.at("out").get<std::string>());
    c.seed = j.value("seed", std::uint64_t{0});
    c.architecture = j.value("architecture", c.architecture);
    if (j.contains("chunking")) {
      const auto& cj = j.at("chunking");
      detail::reject_unknown_keys(cj, {"chunk_size", "overlap", "tokenizer"}, "chunking");
      c.chunking.chunk_size = cj.value("chunk_size", c.chunking.chunk_size);
      c.chunking.overlap = cj.value("overlap", c.chunking.overlap);
      c.chunking.tokenizer_id = cj.value("tokenizer", c.chunking.tokenizer_id);
    }
    if (j.contains("rerank") && !j.at("rerank").is_null()) {
      const auto& rj = j.at("rerank");
      detail::reject_unknown_keys(rj, {"k_initial", "k_final"}, "rerank");
      c.rerank = RerankConfig{rj.at("k_initial").get<std::size_t>(), rj.at("k_final").get<std::size_t>()};
    }
    if (j.contains("expansion") && !j.at("expansion").is_null()) {
      const auto& ej = j.at("expansion");
      detail::reject_unknown_keys(ej, {"window", "fetch_mode", "max_parallel"}, "expansion");
      ExpansionConfig e;
      e.window = ej.value("window", e.window);
      if (ej.contains("fetch_mode")) e.fetch_mode = parse_fetch_mode(ej.at("fetch_mode").get<std::string>());
      e.max_parallel = ej.value("max_parallel", e.max_parallel);
      c.expansion = e;
    }
    if (j.contains("agent")) {
      const auto& aj = j.at("agent");
      detail::reject_unknown_keys(aj,
                                  {"max_corrective_rounds", "relevance_threshold", "retrieval_k", "tree_corrective",
                                   "simulated_fetch_latency_s"},
                                  "agent");
      c.agent.max_corrective_rounds = aj.value("max_corrective_rounds", c.agent.max_corrective_rounds);
      c.agent.relevance_threshold = aj.value("relevance_threshold", c.agent.relevance_threshold);
      c.agent.retrieval_k = aj.value("retrieval_k", c.agent.retrieval_k);
      c.agent.tree_corrective = aj.value("tree_corrective", c.agent.tree_corrective);
      c.agent.simulated_fetch_latency_s = aj.value("simulated_fetch_latency_s", c.agent.simulated_fetch_latency_s);
    }
    if (j.contains("trees")) {
      const auto& tj = j.at("trees");
      detail::reject_unknown_keys(tj, {"with_summaries", "deterministic"}, "trees");
      c.with_summaries = tj.value("with_summaries", c.with_summaries);
      c.deterministic_trees = tj.value("deterministic", c.deterministic_trees);
    }
    if (j.contains("providers")) {
      const auto& pj = j.at("providers");
      detail::reject_unknown_keys(pj, {"llm", "embedder", "reranker", "judge", "max_concurrency"}, "providers");
      auto& p = c.providers;
      if (pj.contains("llm")) p.llm = detail::provider_ref_from_json(pj.at("llm"), p.llm, "providers.llm");
      if (pj.contains("embedder"))
        p.embedder = detail::provider_ref_from_json(pj.at("embedder"), p.embedder, "providers.embedder");
      if (pj.contains("reranker"))
        p.reranker = detail::provider_ref_from_json(pj.at("reranker"), p.reranker, "providers.reranker");
      if (pj.contains("judge")) p.judge = detail::provider_ref_from_json(pj.at("judge"), p.judge, "providers.judge");
      p.max_concurrency = pj.value("max_concurrency", p.max_concurrency);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ConfigError, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline EngineConfig load_config(const std::filesystem::path& path, const EnvLookup& env = process_env) {
  require(std::filesystem::exists(path), ErrorCode::ConfigError, "config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
  return config_from_json(std::move(j), path.parent_path(), env);
}

/// The full effective configuration, suitable for embedding in outputs.
inline nlohmann::ordered_json to_json(const EngineConfig& c) {
  nlohmann::ordered_json j;
  j["corpus"] = c.corpus.string();
  if (c.benchmark) j["benchmark"] = c.benchmark->string();
  j["chunking"] = {{"chunk_size", c.chunking.chunk_size},
                   {"overlap", c.chunking.overlap},
                   {"tokenizer", c.chunking.tokenizer_id}};
  j["architecture"] = c.architecture;
  j["rerank"] = c.rerank ? nlohmann::ordered_json{{"k_initial", c.rerank->k_initial}, {"k_final", c.rerank->k_final}}
                         : nlohmann::ordered_json(nullptr);
  j["expansion"] = c.expansion ? nlohmann::ordered_json{{"window", c.expansion->window},
                                                        {"fetch_mode", to_string(c.expansion->fetch_mode)},
                                                        {"max_parallel", c.expansion->max_parallel}}
                               : nlohmann::ordered_json(nullptr);
  j["agent"] = to_json(c.effective_agent());
  j["trees"] = {{"with_summaries", c.with_summaries}, {"deterministic", c.deterministic_trees}};
  j["providers"] = {{"llm", detail::provider_ref_to_json(c.providers.llm)},
                    {"embedder", detail::provider_ref_to_json(c.providers.embedder)},
                    {"reranker", detail::provider_ref_to_json(c.providers.reranker)},
                    {"judge", detail::provider_ref_to_json(c.providers.judge)},
                    {"max_concurrency", c.providers.max_concurrency}};
  j["prices"] = c.prices ? nlohmann::ordered_json(c.prices->string()) : nlohmann::ordered_json(nullptr);
  j["out"] = c.out.string();
  j["seed"] = c.seed;
  return j;
}

}  // namespace finrag
