// finrag command-line tool: ingest, index, ask, bench, sweep-rerank.
//
// Exit codes: 0 success, 1 partial failure, 2 configuration or usage error.

#include <CLI11.hpp>

#include <climits>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "finrag/finrag.hpp"
#include "finrag/http_transport.hpp"

namespace fs = std::filesystem;
using namespace finrag;

namespace {

constexpr int kOk = 0;
constexpr int kPartial = 1;
constexpr int kConfig = 2;

struct Flags {
  std::string config = "finrag.json";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> arch;
  std::optional<std::string> rerank;
  std::optional<int> expand_window;
  std::optional<std::string> fetch_mode;
  bool with_summaries = false;
  bool no_summaries = false;
  bool deterministic = false;
  std::optional<std::string> prices;
  std::optional<std::string> out;
  bool live = false;
};

bool is_config_error(ErrorCode c) {
  switch (c) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidConfig:
    case ErrorCode::UnknownTokenizer:
    case ErrorCode::MissingFile:
    case ErrorCode::MalformedBenchmark:
    case ErrorCode::EmptyBenchmark:
    case ErrorCode::MissingPrice:
    case ErrorCode::UnknownFilterField:
      return true;
    default:
      return false;
  }
}

EngineConfig resolve_config(const Flags& f) {
  EngineConfig c = load_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.arch) c.architecture = *f.arch;
  if (f.rerank) c.rerank = parse_rerank_config(*f.rerank);
  if (f.expand_window || f.fetch_mode) {
    ExpansionConfig e = c.expansion.value_or(ExpansionConfig{});
    if (f.expand_window) e.window = *f.expand_window;
    if (f.fetch_mode) e.fetch_mode = parse_fetch_mode(*f.fetch_mode);
    c.expansion = e;
  }
  if (f.with_summaries) c.with_summaries = true;
  if (f.no_summaries) c.with_summaries = false;
  if (f.deterministic) c.deterministic_trees = true;
  if (f.prices) {
    require(fs::exists(*f.prices), ErrorCode::ConfigError, "prices path does not exist: " + *f.prices);
    c.prices = *f.prices;
  }
  if (f.out) c.out = *f.out;
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

void write_atomic(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::ConfigError, "cannot write " + tmp.string());
    out << content;
    require(static_cast<bool>(out), ErrorCode::ConfigError, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string checksum(const fs::path& path) { return text::hex64(text::fnv1a64(read_file(path))); }

// Records checksums of the given files (paths relative to the out dir),
// merging with entries already present.
void update_checksums(const fs::path& out, const std::vector<fs::path>& files) {
  const fs::path sums = out / "checksums.json";
  nlohmann::ordered_json j{{"algorithm", "fnv1a64"}, {"files", nlohmann::ordered_json::object()}};
  if (fs::exists(sums)) {
    try {
      j = nlohmann::ordered_json::parse(read_file(sums));
    } catch (const nlohmann::json::exception&) {
    }
  }
  for (const auto& f : files) j["files"][f.generic_string()] = checksum(out / f);
  write_atomic(sums, j.dump(2) + "\n");
}

void verify_checksum(const fs::path& out, const fs::path& rel) {
  const fs::path sums = out / "checksums.json";
  require(fs::exists(sums), ErrorCode::ConfigError, "missing " + sums.string() + "; run `finrag index` first");
  auto j = nlohmann::json::parse(read_file(sums));
  const auto key = rel.generic_string();
  require(j["files"].contains(key), ErrorCode::ConfigError, "no checksum recorded for " + key);
  require(j["files"][key].get<std::string>() == checksum(out / rel), ErrorCode::MalformedIndex,
          key + " does not match its recorded checksum");
}

// ---------------------------------------------------------------------------
// Providers
// ---------------------------------------------------------------------------

struct Backends {
  std::shared_ptr<LlmBackend> llm;
  std::shared_ptr<LlmBackend> judge;
  std::shared_ptr<EmbeddingBackend> embedder;
  std::shared_ptr<RerankBackend> reranker;
};

std::string key_for(const ProviderRef& p, const char* env_name) {
  if (!p.api_key.empty()) return p.api_key;
  return process_env(env_name).value_or("");
}

std::shared_ptr<LlmBackend> make_llm(const ProviderRef& p, bool live, const char* mock_id,
                                     const std::shared_ptr<http::Transport>& t) {
  // "outage" simulates a provider that never answers.
  if (p.kind == "outage") return std::make_shared<mock::FlakyLlm>(std::make_shared<mock::MockLlm>(mock_id), INT_MAX);
  if (!live || p.kind == "mock") return std::make_shared<mock::MockLlm>(mock_id);
  if (p.kind == "openai") {
    return p.base_url.empty() ? std::make_shared<http::OpenAiChat>(t, p.model, key_for(p, "OPENAI_API_KEY"))
                              : std::make_shared<http::OpenAiChat>(t, p.model, key_for(p, "OPENAI_API_KEY"), p.base_url);
  }
  if (p.kind == "anthropic") {
    return p.base_url.empty()
               ? std::make_shared<http::AnthropicMessages>(t, p.model, key_for(p, "ANTHROPIC_API_KEY"))
               : std::make_shared<http::AnthropicMessages>(t, p.model, key_for(p, "ANTHROPIC_API_KEY"), p.base_url);
  }
  fail(ErrorCode::ConfigError, "unknown llm provider kind '" + p.kind + "'");
}

// Oracle and noisy scorers need gold labels, so they only make sense under
// bench and sweep; elsewhere they degrade to the lexical scorer.
Backends make_backends(const EngineConfig& c, bool live, const std::map<std::string, mock::GoldLabel>* gold) {
  auto t = std::make_shared<http::HttplibTransport>();
  Backends b;
  b.llm = make_llm(c.providers.llm, live, "mock-llm", t);
  b.judge = make_llm(c.providers.judge, live, "mock-judge", t);
  const auto& e = c.providers.embedder;
  if (e.kind == "outage") {
    b.embedder = std::make_shared<mock::FlakyEmbedder>(std::make_shared<mock::HashEmbedder>(c.seed), INT_MAX);
  } else if (!live || e.kind == "mock") {
    b.embedder = std::make_shared<mock::HashEmbedder>(c.seed, e.kind == "mock" && e.dimension ? e.dimension : 256);
  } else if (e.kind == "openai") {
    const auto key = key_for(e, "OPENAI_API_KEY");
    b.embedder = e.base_url.empty() ? std::make_shared<http::OpenAiEmbeddings>(t, e.model, key, e.dimension)
                                    : std::make_shared<http::OpenAiEmbeddings>(t, e.model, key, e.dimension, e.base_url);
  } else {
    fail(ErrorCode::ConfigError, "unknown embedder kind '" + e.kind + "'");
  }
  const auto& r = c.providers.reranker;
  if (r.kind == "outage") {
    b.reranker = std::make_shared<mock::FailingScorer>();
  } else if (r.kind == "oracle" && gold) {
    b.reranker = std::make_shared<mock::OracleScorer>(*gold);
  } else if (r.kind == "noisy" && gold) {
    b.reranker = std::make_shared<mock::NoisyScorer>(*gold, r.noise, c.seed);
  } else if (live && r.kind == "cohere") {
    const auto key = key_for(r, "COHERE_API_KEY");
    b.reranker = r.base_url.empty() ? std::make_shared<http::CohereRerank>(t, r.model, key)
                                    : std::make_shared<http::CohereRerank>(t, r.model, key, r.base_url);
  } else if (r.kind == "lexical" || r.kind == "oracle" || r.kind == "noisy" || r.kind == "cohere") {
    b.reranker = std::make_shared<mock::LexicalOverlapScorer>();
  } else {
    fail(ErrorCode::ConfigError, "unknown reranker kind '" + r.kind + "'");
  }
  return b;
}

ClientOptions client_options(const EngineConfig& c, bool live) {
  ClientOptions o;
  o.max_concurrency = c.providers.max_concurrency;
  if (!live) o.retry = RetryPolicy::immediate();
  return o;
}

std::optional<PriceTable> load_prices(const EngineConfig& c) {
  if (!c.prices) return std::nullopt;
  return PriceTable::load(*c.prices);
}

std::map<std::string, mock::GoldLabel> gold_labels(const std::vector<BenchmarkQuestion>& bench) {
  std::map<std::string, mock::GoldLabel> g;
  for (const auto& q : bench) g[q.question] = {q.doc_id, q.gold_pages};
  return g;
}

Corpus load_reporting(const EngineConfig& c) {
  Corpus corpus = load_corpus(c.corpus);
  for (const auto& f : corpus.failures) std::cerr << "ingest error: " << f.path.string() << ": " << f.message << "\n";
  return corpus;
}

nlohmann::ordered_json effective(const EngineConfig& c, bool live) {
  auto j = to_json(c);
  j["live_providers"] = live;
  return j;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_ingest(const EngineConfig& c, bool live) {
  Corpus corpus = load_reporting(c);
  nlohmann::ordered_json m;
  m["seed"] = c.seed;
  m["config"] = effective(c, live);
  auto& docs = m["documents"] = nlohmann::ordered_json::array();
  std::vector<std::string> mismatched;
  for (const auto& d : corpus.documents) {
    auto j = metadata_to_json(d.metadata);
    j["pages"] = d.page_count();
    const auto tokens = tokenize_document(d, c.chunking.tokenizer_id).spans.size();
    j["tokens"] = tokens;
    if (d.metadata.declared_tokens) {
      j["tokens_match_declared"] = tokens == *d.metadata.declared_tokens;
      if (tokens != *d.metadata.declared_tokens) {
        mismatched.push_back(d.doc_id() + ": declared " + std::to_string(*d.metadata.declared_tokens) + " tokens, measured " +
                             std::to_string(tokens));
      }
    }
    docs.push_back(j);
  }
  auto& errs = m["errors"] = nlohmann::ordered_json::array();
  for (const auto& f : corpus.failures) errs.push_back({{"path", f.path.string()}, {"error", f.message}});
  for (const auto& msg : mismatched) {
    errs.push_back({{"path", c.corpus.string()}, {"error", msg}});
    std::cerr << "token count mismatch: " << msg << "\n";
  }
  write_atomic(c.out / "manifest.json", m.dump(2) + "\n");
  update_checksums(c.out, {"manifest.json"});
  std::cout << "ingested " << corpus.documents.size() << " document(s), " << errs.size()
            << " error(s); manifest at " << (c.out / "manifest.json").string() << "\n";
  return errs.empty() ? kOk : kPartial;
}

int cmd_index(const EngineConfig& c, bool live, const std::string& target) {
  require(target == "vector" || target == "tree" || target == "all", ErrorCode::ConfigError,
          "--target must be vector, tree or all");
  require(fs::exists(c.out / "manifest.json"), ErrorCode::ConfigError,
          "no manifest in " + c.out.string() + "; run `finrag ingest` first");
  Corpus corpus = load_reporting(c);
  auto backends = make_backends(c, live, nullptr);
  auto prices = load_prices(c);
  auto log = std::make_shared<TranscriptLog>();
  const auto opts = client_options(c, live);

  // Everything is built in memory first so an outage persists nothing.
  std::optional<std::pair<VectorIndex, IndexBuildReport>> vector;
  std::optional<TreeBuild> trees;
  if (target != "tree") {
    EmbeddingClient embedder(backends.embedder, log, opts);
    vector.emplace(index_documents(corpus.documents, c.chunking, embedder));
  }
  if (target != "vector") {
    LlmClient llm(backends.llm, log, opts);
    trees.emplace(build_trees(corpus.documents, &llm, c.with_summaries, c.deterministic_trees,
                              prices ? &*prices : nullptr));
  }

  std::vector<fs::path> written;
  nlohmann::ordered_json summary;
  summary["seed"] = c.seed;
  summary["config"] = effective(c, live);
  if (vector) {
    fs::create_directories(c.out);
    const fs::path tmp = c.out / "index.bin.tmp";
    vector->first.save(tmp);
    fs::rename(tmp, c.out / "index.bin");
    nlohmann::ordered_json meta{{"embedder", backends.embedder->id()},
                                {"seed", c.seed},
                                {"chunks", vector->second.chunks},
                                {"documents", vector->second.documents},
                                {"embed_calls", vector->second.embed_calls},
                                {"input_tokens", vector->second.usage.input_tokens}};
    write_atomic(c.out / "index.meta.json", meta.dump(2) + "\n");
    written.insert(written.end(), {"index.bin", "index.meta.json"});
    summary["vector_index"] = meta;
    std::cout << "vector index: " << vector->second.chunks << " chunks from " << vector->second.documents
              << " document(s)\n";
  }
  if (trees) {
    auto& reports = summary["trees"] = nlohmann::ordered_json::object();
    for (const auto& [id, tree] : trees->trees) {
      const fs::path rel = fs::path("trees") / (id + ".json");
      write_atomic(c.out / rel, serialize_tree(tree) + "\n");
      written.push_back(rel);
      reports[id] = to_json(trees->reports.at(id));
      std::cout << "tree " << id << ": " << node_count(tree) << " nodes, " << trees->reports.at(id).input_tokens
                << " in / " << trees->reports.at(id).output_tokens << " out tokens\n";
    }
    write_atomic(c.out / "tree_reports.json", reports.dump(2) + "\n");
    written.push_back("tree_reports.json");
  }
  if (prices) summary["cost"] = finrag::detail::cost_json(log->snapshot(), prices);
  write_atomic(c.out / "index_summary.json", summary.dump(2) + "\n");
  written.push_back("index_summary.json");
  update_checksums(c.out, written);
  return corpus.failures.empty() ? kOk : kPartial;
}

int cmd_ask(const EngineConfig& c, bool live, const std::string& question, const std::string& filter_json) {
  MetadataFilter pinned;
  if (!filter_json.empty()) {
    try {
      pinned = MetadataFilter::from_json(nlohmann::json::parse(filter_json));
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::ConfigError, std::string("--filter is not JSON: ") + e.what());
    }
  }
  Corpus corpus = load_reporting(c);
  const AgentConfig agent = c.effective_agent();
  KnowledgeBase kb;
  for (const auto& d : corpus.documents) {
    kb.catalog.push_back(d.metadata);
    kb.documents[d.doc_id()] = &d;
  }
  VectorIndex index;
  InMemoryChunkStore store;
  if (!agent.is_tree()) {
    require(fs::exists(c.out / "index.bin"), ErrorCode::ConfigError,
            "no vector index in " + c.out.string() + "; run `finrag index` first");
    verify_checksum(c.out, "index.bin");
    index = VectorIndex::load(c.out / "index.bin");
    store = InMemoryChunkStore::from_index(index);
    kb.index = &index;
    kb.store = &store;
  } else {
    for (const auto& d : corpus.documents) {
      const fs::path rel = fs::path("trees") / (d.doc_id() + ".json");
      require(fs::exists(c.out / rel), ErrorCode::ConfigError,
              "no tree for " + d.doc_id() + "; run `finrag index --target tree` first");
      verify_checksum(c.out, rel);
      kb.trees[d.doc_id()] = load_tree(c.out / rel, static_cast<int>(d.page_count()));
    }
  }

  auto backends = make_backends(c, live, nullptr);
  auto log = std::make_shared<TranscriptLog>();
  const auto opts = client_options(c, live);
  LlmClient llm(backends.llm, log, opts);
  std::optional<EmbeddingClient> embedder;
  std::optional<RerankClient> reranker;
  if (!agent.is_tree()) embedder.emplace(backends.embedder, log, opts);
  if (agent.has(PipelineStage::Rerank)) reranker.emplace(backends.reranker, log, opts);
  AgentProviders providers{&llm, embedder ? &*embedder : nullptr, reranker ? &*reranker : nullptr};

  VirtualClock vclock;
  SteadyClock wall;
  Clock& clock = live ? static_cast<Clock&>(wall) : static_cast<Clock&>(vclock);
  nlohmann::ordered_json trace;
  trace["seed"] = c.seed;
  trace["config"] = effective(c, live);
  trace["question"] = question;
  const fs::path trace_path = c.out / "traces" / ("ask-" + c.architecture + "-" + text::hex64(text::fnv1a64(question)) + ".json");
  try {
    Answer a = answer_question(question, agent, kb, providers, clock, pinned);
    trace["answer"] = to_json(a);
    std::vector<nlohmann::ordered_json> calls;
    for (const auto& e : log->snapshot()) calls.push_back(to_json(e));
    trace["transcript"] = calls;
    write_atomic(trace_path, trace.dump(2) + "\n");
    if (a.abstained) {
      std::cout << "ABSTAINED: " << a.text << "\n";
    } else {
      std::cout << a.text << "\n\nCitations:\n";
      for (const auto& ci : a.citations) {
        std::cout << "  " << ci.doc_id << " pages " << ci.page_start << "-" << ci.page_end
                  << (ci.chunk_id ? " (" + *ci.chunk_id + ")" : std::string()) << "\n";
      }
    }
    std::cout << "\nStage latency (s):\n";
    for (const auto& r : a.trace.records) {
      std::cout << "  " << r.stage << (r.round ? " r" + std::to_string(r.round) : std::string()) << "  "
                << text::format_double(r.duration_s(), 3) << "\n";
    }
    std::cout << "  end-to-end  " << text::format_double(a.trace.end_to_end_s(), 3) << "\ntrace: "
              << trace_path.string() << "\n";
    return kOk;
  } catch (const Error& e) {
    trace["error"] = e.what();
    write_atomic(trace_path, trace.dump(2) + "\n");
    std::cout << "FAILED: " << e.what() << "\n";
    return is_config_error(e.code()) ? kConfig : kPartial;
  }
}

std::vector<BenchmarkQuestion> load_bench_for(const EngineConfig& c, const std::string& path) {
  fs::path p = path.empty() ? c.benchmark.value_or(fs::path()) : fs::path(path);
  require(!p.empty(), ErrorCode::ConfigError, "no benchmark file given and none in the config");
  require(fs::exists(p), ErrorCode::ConfigError, "benchmark file not found: " + p.string());
  return load_benchmark(p);
}

int cmd_bench(const EngineConfig& c, bool live, const std::string& bench_path) {
  auto bench = load_bench_for(c, bench_path);
  Corpus corpus = load_reporting(c);
  const auto gold = gold_labels(bench);
  auto b = make_backends(c, live, &gold);
  BenchBackends backends{b.llm, b.embedder, b.reranker, b.judge, client_options(c, live)};
  BenchOptions opts;
  AgentConfig base = c.agent;
  base.rerank = c.rerank.value_or(RerankConfig{});
  base.expansion = c.expansion.value_or(ExpansionConfig{});
  opts.systems = default_systems(base);
  opts.chunking = c.chunking;
  opts.with_summaries = c.with_summaries;
  opts.deterministic_trees = c.deterministic_trees;
  opts.virtual_clock = !live;
  opts.seed = c.seed;
  opts.prices = load_prices(c);
  opts.effective_config = effective(c, live);
  auto result = run_bench(bench, corpus.documents, backends, opts);
  result.report["config"]["ingest_errors"] = corpus.failures.size();
  write_atomic(c.out / "report.json", result.report.dump(2) + "\n");
  update_checksums(c.out, {"report.json"});

  const auto& sys = result.report["systems"];
  std::cout << "system          MRR@5  Recall@5  p50 e2e (s)\n";
  for (const auto& [name, s] : sys.items()) {
    std::string pad(std::max<std::size_t>(16, name.size() + 1) - name.size(), ' ');
    std::cout << name << pad << text::format_double(s["retrieval"]["mrr_at_5"].get<double>(), 3) << "  "
              << text::format_double(s["retrieval"]["recall_at_5"].get<double>(), 3) << "     "
              << text::format_double(s["latency_s"]["end_to_end"].value("p50_s", 0.0), 3) << "\n";
  }
  for (const auto& cmp : result.report["comparisons"]) {
    std::cout << cmp["first"].get<std::string>() << " vs " << cmp["second"].get<std::string>()
              << ": win rate " << text::format_double(cmp["overall"]["win_rate"].get<double>(), 3) << "\n";
  }
  std::cout << "report: " << (c.out / "report.json").string() << "\n";
  if (result.failed_questions) std::cout << result.failed_questions << " question(s) failed\n";
  return result.failed_questions == 0 && corpus.failures.empty() ? kOk : kPartial;
}

std::vector<RerankConfig> parse_grid(const std::string& s) {
  std::vector<RerankConfig> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find(';', start);
    if (end == std::string::npos) end = s.size();
    const auto item = text::trim(std::string_view(s).substr(start, end - start));
    if (!item.empty()) out.push_back(parse_rerank_config(item));
    start = end + 1;
  }
  return out;
}

int cmd_sweep(const EngineConfig& c, bool live, const std::string& bench_path, const std::optional<std::string>& grid,
              bool single) {
  std::vector<RerankConfig> configs;
  if (grid) {
    configs = parse_grid(*grid);
  } else if (single && c.rerank) {
    configs = {*c.rerank};
  } else {
    configs = default_rerank_grid();
  }
  require(!configs.empty(), ErrorCode::ConfigError, "sweep grid is empty");
  auto bench = load_bench_for(c, bench_path);
  Corpus corpus = load_reporting(c);
  const auto gold = gold_labels(bench);
  auto b = make_backends(c, live, &gold);
  auto log = std::make_shared<TranscriptLog>();
  const auto opts = client_options(c, live);
  EmbeddingClient embedder(b.embedder, log, opts);
  RerankClient scorer(b.reranker, log, opts);
  auto [index, _] = index_documents(corpus.documents, c.chunking, embedder);

  // Query embeddings are computed once; every row is charged their latency.
  std::map<std::string, std::pair<std::vector<double>, double>> qvec;
  SweepPipeline pipeline;
  pipeline.retrieve = [&](const BenchmarkQuestion& q, std::size_t depth) {
    Retrieval r;
    auto it = qvec.find(q.question);
    if (it == qvec.end()) {
      auto e = embedder.embed(std::vector<std::string>{q.question});
      it = qvec.emplace(q.question, std::make_pair(e.vectors.at(0), e.latency_s)).first;
    }
    r.hits = index.hybrid_search(q.question, it->second.first, depth);
    r.latency_s = it->second.second;
    return r;
  };
  pipeline.gold_chunks = [&](const BenchmarkQuestion& q) { return gold_chunk_ids(index, q); };
  auto table = sweep(configs, bench, pipeline, scorer);

  auto j = to_json(table);
  j["seed"] = c.seed;
  j["config"] = effective(c, live);
  j["scorer"] = b.reranker->id();
  write_atomic(c.out / "sweep.json", j.dump(2) + "\n");
  const std::string rendered = render_table(table);
  write_atomic(c.out / "sweep.txt", rendered);
  update_checksums(c.out, {"sweep.json", "sweep.txt"});
  std::cout << rendered;
  bool failed = false;
  for (const auto& r : table.rows) failed = failed || r.failed;
  return failed ? kPartial : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"finrag: retrieval pipelines over financial filings"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config, "JSON config file")->capture_default_str();
  app.add_option("--seed", f.seed, "Random seed (recorded in every output)");
  app.add_option("--arch", f.arch, "Architecture")->check(CLI::IsMember({"vector", "tree"}));
  app.add_option("--rerank", f.rerank, "Rerank depths as kI,kF");
  app.add_option("--expand-window", f.expand_window, "Neighbors per side for chunk expansion");
  app.add_option("--fetch-mode", f.fetch_mode, "Neighbor fetch mode")->check(CLI::IsMember({"sync", "async"}));
  app.add_flag("--with-summaries", f.with_summaries, "Generate node summaries when building trees");
  app.add_flag("--no-summaries", f.no_summaries, "Skip node summaries");
  app.add_flag("--deterministic", f.deterministic, "Build trees from headings without an LLM");
  app.add_option("--prices", f.prices, "Price table JSON");
  app.add_option("--out", f.out, "Output directory");
  app.add_flag("--live", f.live, "Use the real providers named in the config instead of offline mocks");

  auto* ingest = app.add_subcommand("ingest", "Load the corpus and write a manifest");
  std::string target = "all";
  auto* index = app.add_subcommand("index", "Build the vector index and/or node trees");
  index->add_option("--target", target, "vector, tree or all")->capture_default_str();
  std::string question;
  auto* ask = app.add_subcommand("ask", "Answer one question");
  ask->add_option("question", question, "Question text")->required();
  std::string filter_json;
  ask->add_option("--filter", filter_json, R"(Metadata filter JSON, e.g. {"company": "Acme Corporation"})");
  std::string bench_path;
  auto* bench = app.add_subcommand("bench", "Run the benchmark over every system");
  bench->add_option("benchmark", bench_path, "Benchmark JSONL (defaults to the config's)");
  std::optional<std::string> grid;
  auto* sweep_cmd = app.add_subcommand("sweep-rerank", "Sweep rerank depths");
  sweep_cmd->add_option("benchmark", bench_path, "Benchmark JSONL (defaults to the config's)");
  sweep_cmd->add_option("--grid", grid, "Semicolon-separated kI,kF list; default is the ten-row grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  if (f.with_summaries && f.no_summaries) {
    std::cerr << "--with-summaries and --no-summaries are exclusive\n";
    return kConfig;
  }

  try {
    const EngineConfig c = resolve_config(f);
    if (*ingest) return cmd_ingest(c, f.live);
    if (*index) return cmd_index(c, f.live, target);
    if (*ask) return cmd_ask(c, f.live, question, filter_json);
    if (*bench) return cmd_bench(c, f.live, bench_path);
    if (*sweep_cmd) return cmd_sweep(c, f.live, bench_path, grid, f.rerank.has_value());
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_config_error(e.code()) ? kConfig : kPartial;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kPartial;
  }
  return kConfig;
}
