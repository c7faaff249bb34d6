#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "finrag/config.hpp"

using namespace finrag;
namespace fs = std::filesystem;

namespace {

EnvLookup fake_env(std::map<std::string, std::string> vars) {
  return [vars](const std::string& name) -> std::optional<std::string> {
    auto it = vars.find(name);
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

nlohmann::json minimal() { return {{"corpus", "corpus"}}; }

fs::path fixtures() { return FINRAG_FIXTURES_DIR; }

}  // namespace

TEST(Interpolate, ReplacesVariables) {
  auto env = fake_env({{"KEY", "sk-123"}, {"HOST", "example.com"}});
  EXPECT_EQ(interpolate_env("Bearer ${KEY}", env), "Bearer sk-123");
  EXPECT_EQ(interpolate_env("https://${HOST}/${KEY}", env), "https://example.com/sk-123");
  EXPECT_EQ(interpolate_env("cost $$5 and $x", env), "cost $5 and $x");
  EXPECT_EQ(interpolate_env("plain", env), "plain");
}

TEST(Interpolate, MissingOrMalformedIsConfigError) {
  auto env = fake_env({});
  try {
    interpolate_env("${NOPE}", env);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
    EXPECT_NE(std::string(e.what()).find("NOPE"), std::string::npos);
  }
  EXPECT_THROW(interpolate_env("${UNTERMINATED", env), Error);
  EXPECT_THROW(interpolate_env("${}", env), Error);
}

TEST(Config, DefaultsFromMinimalDocument) {
  auto c = config_from_json(minimal(), fixtures(), fake_env({}));
  EXPECT_EQ(c.corpus, fixtures() / "corpus");
  EXPECT_EQ(c.architecture, "vector");
  EXPECT_EQ(c.chunking.chunk_size, 512u);
  EXPECT_EQ(c.chunking.overlap, 50u);
  EXPECT_FALSE(c.rerank.has_value());
  EXPECT_EQ(c.providers.llm.kind, "mock");
  EXPECT_EQ(c.effective_agent().stages, std::vector<PipelineStage>{PipelineStage::Hybrid});
}

TEST(Config, FixtureConfigLoads) {
  auto c = load_config(fixtures() / "config.json", fake_env({}));
  EXPECT_EQ(c.seed, 42u);
  ASSERT_TRUE(c.benchmark.has_value());
  EXPECT_TRUE(fs::exists(*c.benchmark));
  ASSERT_TRUE(c.prices.has_value());
  auto prices = PriceTable::load(*c.prices);
  ASSERT_NE(prices.find("gpt-4o"), nullptr);
  EXPECT_DOUBLE_EQ(prices.find("gpt-4o")->input_per_token, 2.5e-6);
  EXPECT_DOUBLE_EQ(prices.find("gpt-4o")->output_per_token, 1e-5);
  for (const char* id : {"gemini-2.5-flash", "gpt-4.1-mini", "mock-llm", "mock-hash-embedder"}) {
    EXPECT_NE(prices.find(id), nullptr) << id;
  }
}

TEST(Config, LiveConfigNeedsItsSecrets) {
  EXPECT_THROW(load_config(fixtures() / "config.live.json", fake_env({})), Error);
  auto c = load_config(fixtures() / "config.live.json",
                       fake_env({{"OPENAI_API_KEY", "o"}, {"ANTHROPIC_API_KEY", "a"}, {"COHERE_API_KEY", "c"}}));
  EXPECT_EQ(c.providers.llm.api_key, "o");
  EXPECT_EQ(c.providers.judge.api_key, "a");
  EXPECT_EQ(c.providers.reranker.kind, "cohere");
  // Secrets never appear in the effective config.
  EXPECT_EQ(to_json(c).dump().find("\"o\""), std::string::npos);
  EXPECT_EQ(to_json(c)["providers"]["llm"]["api_key"].get<std::string>(), "<set>");
}

TEST(Config, StagesFollowArchitecture) {
  auto j = minimal();
  j["rerank"] = {{"k_initial", 50}, {"k_final", 5}};
  j["expansion"] = {{"window", 2}, {"fetch_mode", "async"}};
  auto c = config_from_json(j, fixtures(), fake_env({}));
  EXPECT_EQ(c.effective_agent().stages,
            (std::vector<PipelineStage>{PipelineStage::Hybrid, PipelineStage::Rerank, PipelineStage::Expand}));
  EXPECT_EQ(c.effective_agent().rerank, (RerankConfig{50, 5}));
  EXPECT_EQ(c.effective_agent().expansion.fetch_mode, FetchMode::Async);
  j["architecture"] = "tree";
  auto t = config_from_json(j, fixtures(), fake_env({}));
  EXPECT_EQ(t.effective_agent().stages, std::vector<PipelineStage>{PipelineStage::TreeTraverse});
}

TEST(Config, Rejections) {
  auto env = fake_env({});
  auto expect_config_error = [&](nlohmann::json j) {
    try {
      config_from_json(j, fixtures(), env);
      ADD_FAILURE() << j.dump();
    } catch (const Error& e) {
      EXPECT_TRUE(e.code() == ErrorCode::ConfigError || e.code() == ErrorCode::InvalidConfig) << e.what();
    }
  };
  expect_config_error(nlohmann::json::object());
  expect_config_error({{"corpus", "does-not-exist"}});
  auto j = minimal();
  j["prices"] = "missing-prices.json";
  expect_config_error(j);
  j = minimal();
  j["architecture"] = "graph";
  expect_config_error(j);
  j = minimal();
  j["rerank"] = {{"k_initial", 5}, {"k_final", 10}};
  expect_config_error(j);
  j = minimal();
  j["chunking"] = {{"chunk_size", 10}, {"overlap", 10}};
  expect_config_error(j);
  j = minimal();
  j["surprise"] = 1;
  expect_config_error(j);
  j = minimal();
  j["agent"] = {{"retrieval_k", "five"}};
  expect_config_error(j);
  expect_config_error(nlohmann::json::array());
}

TEST(Config, EffectiveConfigRecordsSeed) {
  auto j = minimal();
  j["seed"] = 7;
  auto c = config_from_json(j, fixtures(), fake_env({}));
  auto out = to_json(c);
  EXPECT_EQ(out["seed"].get<int>(), 7);
  EXPECT_EQ(out["agent"]["stages"].dump(), R"(["hybrid"])");
}
