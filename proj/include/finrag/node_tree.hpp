#pragma once

#include <algorithm>
#include <climits>
#include <cstdio>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "finrag/corpus.hpp"
#include "finrag/error.hpp"
#include "finrag/prompts.hpp"
#include "finrag/providers.hpp"
#include "finrag/text.hpp"
#include "finrag/tokenizer.hpp"

namespace finrag {

/// One table-of-contents section. Page numbers are 1-based and inclusive.
struct Node {
  std::string title;
  int start_index = 1;
  int end_index = 1;
  std::string node_id;
  std::optional<std::string> summary;
  std::vector<Node> nodes;

  friend bool operator==(const Node&, const Node&) = default;
};

struct NodeTree {
  std::string doc_name;
  std::vector<Node> structure;

  friend bool operator==(const NodeTree&, const NodeTree&) = default;
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_node_id(std::string_view id) {
  return id.size() >= 4 && std::all_of(id.begin(), id.end(), [](char c) { return c >= '0' && c <= '9'; });
}

inline std::string range_str(int s, int e) { return "[" + std::to_string(s) + "," + std::to_string(e) + "]"; }

// A node's section runs from its start to the start of its next sibling
// (siblings may share that boundary page), or to its parent's section end
// for the last child. Children must lie inside their parent's section, which
// is how a heading-only parent range such as [9,9] can own [15,20].
inline void validate_level(const std::vector<Node>& nodes, int lo, int hi, std::set<std::string>& ids) {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    if (!is_node_id(n.node_id)) {
      fail(ErrorCode::MalformedJson, "node_id '" + n.node_id + "' is not a zero-padded numeric id");
    }
    if (!ids.insert(n.node_id).second) fail(ErrorCode::DuplicateNodeId, "node_id '" + n.node_id + "' repeats");
    if (n.start_index < 1 || n.start_index > n.end_index) {
      fail(ErrorCode::RangeViolation, "node " + n.node_id + " has inverted range " + range_str(n.start_index, n.end_index));
    }
    int section_end = hi;
    if (i + 1 < nodes.size()) {
      const Node& next = nodes[i + 1];
      if (next.start_index < n.start_index) {
        fail(ErrorCode::RangeViolation, "node " + next.node_id + " starts before its preceding sibling " + n.node_id);
      }
      if (n.end_index > next.start_index) {
        fail(ErrorCode::RangeViolation, "node " + n.node_id + " " + range_str(n.start_index, n.end_index) +
                                            " overlaps sibling " + next.node_id + " starting at page " +
                                            std::to_string(next.start_index));
      }
      section_end = std::min(section_end, next.start_index);
    }
    if (n.start_index < lo || n.end_index > section_end) {
      fail(ErrorCode::RangeViolation, "node " + n.node_id + " " + range_str(n.start_index, n.end_index) +
                                          " lies outside its enclosing section " +
                                          range_str(lo, section_end == INT_MAX ? n.end_index : section_end));
    }
    validate_level(n.nodes, n.start_index, section_end, ids);
  }
}

inline Node node_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorCode::MalformedJson, "node must be an object");
  static const std::set<std::string> kKnown = {"title", "start_index", "end_index", "node_id", "nodes", "summary"};
  for (const auto& [key, _] : j.items()) {
    if (!kKnown.count(key)) fail(ErrorCode::UnknownField, "unknown node field '" + key + "'");
  }
  auto need = [&](const char* key) -> const nlohmann::json& {
    auto it = j.find(key);
    if (it == j.end()) fail(ErrorCode::MalformedJson, std::string("node is missing '") + key + "'");
    return *it;
  };
  Node n;
  const auto& title = need("title");
  const auto& start = need("start_index");
  const auto& end = need("end_index");
  const auto& id = need("node_id");
  if (!title.is_string() || !id.is_string() || !start.is_number_integer() || !end.is_number_integer()) {
    fail(ErrorCode::MalformedJson, "node fields have the wrong types");
  }
  n.title = title.get<std::string>();
  n.start_index = start.get<int>();
  n.end_index = end.get<int>();
  n.node_id = id.get<std::string>();
  if (auto it = j.find("summary"); it != j.end()) {
    if (!it->is_string()) fail(ErrorCode::MalformedJson, "summary must be a string");
    n.summary = it->get<std::string>();
  }
  if (auto it = j.find("nodes"); it != j.end()) {
    if (!it->is_array()) fail(ErrorCode::MalformedJson, "nodes must be an array");
    for (const auto& child : *it) n.nodes.push_back(node_from_json(child));
  }
  return n;
}

inline nlohmann::ordered_json node_to_json(const Node& n) {
  nlohmann::ordered_json j;
  j["title"] = n.title;
  j["start_index"] = n.start_index;
  j["end_index"] = n.end_index;
  if (n.summary) j["summary"] = *n.summary;
  if (!n.nodes.empty()) {
    auto& arr = j["nodes"] = nlohmann::ordered_json::array();
    for (const auto& c : n.nodes) arr.push_back(node_to_json(c));
  }
  j["node_id"] = n.node_id;
  return j;
}

}  // namespace detail

/// Checks every structural invariant. `max_page` bounds all ranges when the
/// owning document is known.
inline void validate_tree(const NodeTree& tree, std::optional<int> max_page = std::nullopt) {
  std::set<std::string> ids;
  detail::validate_level(tree.structure, 1, max_page.value_or(INT_MAX), ids);
}

inline NodeTree tree_from_json(const nlohmann::json& j, std::optional<int> max_page = std::nullopt) {
  if (!j.is_object()) fail(ErrorCode::MalformedJson, "tree must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "doc_name" && key != "structure") fail(ErrorCode::UnknownField, "unknown tree field '" + key + "'");
  }
  auto name = j.find("doc_name");
  auto structure = j.find("structure");
  if (name == j.end() || !name->is_string()) fail(ErrorCode::MalformedJson, "tree needs a string 'doc_name'");
  if (structure == j.end() || !structure->is_array()) fail(ErrorCode::MalformedJson, "tree needs a 'structure' array");
  NodeTree tree;
  tree.doc_name = name->get<std::string>();
  for (const auto& n : *structure) tree.structure.push_back(detail::node_from_json(n));
  validate_tree(tree, max_page);
  return tree;
}

inline NodeTree parse_tree(std::string_view json_text, std::optional<int> max_page = std::nullopt) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::MalformedJson, e.what());
  }
  return tree_from_json(j, max_page);
}

inline nlohmann::ordered_json tree_to_json(const NodeTree& tree) {
  nlohmann::ordered_json j;
  j["doc_name"] = tree.doc_name;
  auto& arr = j["structure"] = nlohmann::ordered_json::array();
  for (const auto& n : tree.structure) arr.push_back(detail::node_to_json(n));
  return j;
}

/// Two-space indented JSON with keys in the canonical order
/// (title, start_index, end_index, [summary], [nodes], node_id).
inline std::string serialize_tree(const NodeTree& tree) { return tree_to_json(tree).dump(2); }

inline NodeTree load_tree(const std::filesystem::path& path, std::optional<int> max_page = std::nullopt) {
  return parse_tree(read_file(path), max_page);
}

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

template <typename Fn>
void for_each_node(const std::vector<Node>& nodes, Fn&& fn, int depth = 0) {
  for (const auto& n : nodes) {
    fn(n, depth);
    for_each_node(n.nodes, fn, depth + 1);
  }
}

inline const Node* find_node(const NodeTree& tree, std::string_view node_id) {
  const Node* found = nullptr;
  for_each_node(tree.structure, [&](const Node& n, int) {
    if (!found && n.node_id == node_id) found = &n;
  });
  return found;
}

/// Pages covered by a node and all of its descendants, ascending.
inline std::vector<int> section_pages(const Node& node) {
  std::set<int> pages;
  auto add = [&](const Node& n) {
    for (int p = n.start_index; p <= n.end_index; ++p) pages.insert(p);
  };
  add(node);
  for_each_node(node.nodes, [&](const Node& n, int) { add(n); });
  return {pages.begin(), pages.end()};
}

inline std::vector<const Node*> leaves(const NodeTree& tree) {
  std::vector<const Node*> out;
  for_each_node(tree.structure, [&](const Node& n, int) {
    if (n.nodes.empty()) out.push_back(&n);
  });
  return out;
}

inline std::size_t node_count(const NodeTree& tree) {
  std::size_t count = 0;
  for_each_node(tree.structure, [&](const Node&, int) { ++count; });
  return count;
}

// ---------------------------------------------------------------------------
// Deterministic generation from headings
// ---------------------------------------------------------------------------

struct Heading {
  int page = 1;
  int level = 1;
  std::string title;
  bool opens_page = false;  // first non-blank line of its page
};

/// Markdown headings ("#".."######" + space) take their hash count as level.
/// Lines of 4..100 characters with at least four letters and no lower-case
/// letters are level-1 headings.
inline std::optional<std::pair<int, std::string>> heading_of(std::string_view line) {
  line = text::trim(line);
  if (line.empty()) return std::nullopt;
  if (line[0] == '#') {
    std::size_t hashes = 0;
    while (hashes < line.size() && line[hashes] == '#') ++hashes;
    if (hashes > 6 || hashes >= line.size() || line[hashes] != ' ') return std::nullopt;
    auto title = text::trim(line.substr(hashes));
    if (title.empty()) return std::nullopt;
    return std::pair{static_cast<int>(hashes), std::string(title)};
  }
  if (line.size() < 4 || line.size() > 100) return std::nullopt;
  int letters = 0;
  for (char c : line) {
    if (c >= 'a' && c <= 'z') return std::nullopt;
    if (c >= 'A' && c <= 'Z') ++letters;
  }
  if (letters < 4) return std::nullopt;
  return std::pair{1, std::string(line)};
}

inline std::vector<Heading> scan_headings(const Document& doc) {
  std::vector<Heading> out;
  for (std::size_t p = 0; p < doc.pages.size(); ++p) {
    bool seen_content = false;
    for (auto line : text::split_lines(doc.pages[p])) {
      if (auto h = heading_of(line)) {
        out.push_back({static_cast<int>(p + 1), h->first, std::move(h->second), !seen_content});
      }
      if (!text::trim(line).empty()) seen_content = true;
    }
  }
  return out;
}

inline std::string format_node_id(int n) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", n);
  return buf;
}

/// Builds a tree from heading nesting. A section ends on the page before the
/// next heading of the same or higher level when that heading opens its page,
/// otherwise on that heading's page. Headingless documents become one node.
inline NodeTree generate_tree_deterministic(const Document& doc) {
  const int last_page = static_cast<int>(doc.page_count());
  NodeTree tree;
  tree.doc_name = doc.doc_id();
  const auto headings = scan_headings(doc);
  if (headings.empty()) {
    tree.structure.push_back(Node{"Full document", 1, last_page, "0001", std::nullopt, {}});
    return tree;
  }
  std::vector<int> ends(headings.size(), last_page);
  for (std::size_t i = 0; i < headings.size(); ++i) {
    for (std::size_t j = i + 1; j < headings.size(); ++j) {
      if (headings[j].level <= headings[i].level) {
        ends[i] = headings[j].opens_page ? std::max(headings[i].page, headings[j].page - 1) : headings[j].page;
        break;
      }
    }
  }
  int counter = 0;
  // Stack of (level, pointer to the child list that receives deeper headings).
  std::vector<std::pair<int, std::vector<Node>*>> stack = {{0, &tree.structure}};
  for (std::size_t i = 0; i < headings.size(); ++i) {
    while (stack.back().first >= headings[i].level) stack.pop_back();
    auto* siblings = stack.back().second;
    siblings->push_back(Node{headings[i].title, headings[i].page, ends[i], format_node_id(++counter), std::nullopt, {}});
    stack.emplace_back(headings[i].level, &siblings->back().nodes);
  }
  validate_tree(tree, last_page);
  return tree;
}

// ---------------------------------------------------------------------------
// Provider-driven generation
// ---------------------------------------------------------------------------

inline constexpr std::size_t kSummaryTokenCap = 60;

struct TreeGenReport {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  double latency_s = 0.0;
  bool with_summaries = false;
  std::optional<double> cost;
  int provider_calls = 0;
  bool deterministic_fallback = false;

  std::int64_t total_tokens() const noexcept { return input_tokens + output_tokens; }
};

inline nlohmann::ordered_json to_json(const TreeGenReport& r) {
  nlohmann::ordered_json j;
  j["input_tokens"] = r.input_tokens;
  j["output_tokens"] = r.output_tokens;
  j["total_tokens"] = r.total_tokens();
  j["latency_s"] = r.latency_s;
  j["with_summaries"] = r.with_summaries;
  j["cost"] = r.cost ? nlohmann::ordered_json(*r.cost) : nlohmann::ordered_json(nullptr);
  j["provider_calls"] = r.provider_calls;
  j["deterministic_fallback"] = r.deterministic_fallback;
  return j;
}

/// Page texts as the prompt sees them: "<page n>\n...\n</page n>" blocks.
inline std::string render_pages(const Document& doc) {
  std::string out;
  for (std::size_t p = 0; p < doc.pages.size(); ++p) {
    const auto n = std::to_string(p + 1);
    out += "<page " + n + ">\n" + doc.pages[p] + "\n</page " + n + ">\n";
  }
  return out;
}

inline std::string truncate_tokens(const std::string& s, std::size_t max_tokens) {
  const auto spans = word_tokenize(s);
  if (spans.size() <= max_tokens) return s;
  return s.substr(0, spans[max_tokens - 1].end);
}

namespace detail {

inline void shape_summaries(std::vector<Node>& nodes, bool keep) {
  for (auto& n : nodes) {
    if (!keep) {
      n.summary.reset();
    } else if (n.summary) {
      n.summary = truncate_tokens(*n.summary, kSummaryTokenCap);
    }
    shape_summaries(n.nodes, keep);
  }
}

// Tolerates prose or code fences around the JSON object.
inline std::string_view json_object_span(std::string_view reply) {
  const auto open = reply.find('{');
  const auto close = reply.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) return reply;
  return reply.substr(open, close - open + 1);
}

}  // namespace detail

/// One generation call requesting the full structure, plus at most one repair
/// call when the reply does not parse or validate. Single-page documents use
/// the deterministic builder without calling the provider.
inline std::pair<NodeTree, TreeGenReport> generate_tree(const Document& doc, const LlmClient& llm, bool with_summaries,
                                                        const PriceTable* prices = nullptr) {
  TreeGenReport report;
  report.with_summaries = with_summaries;
  const int pages = static_cast<int>(doc.page_count());
  if (pages <= 1) {
    report.deterministic_fallback = true;
    auto tree = generate_tree_deterministic(doc);
    NodeTree single{tree.doc_name, {Node{tree.structure.front().title, 1, 1, "0001", std::nullopt, {}}}};
    if (prices) report.cost = 0.0;
    return {single, report};
  }

  auto account = [&](const Completion& c) {
    report.input_tokens += c.usage.input_tokens;
    report.output_tokens += c.usage.output_tokens;
    report.latency_s += c.latency_s;
    ++report.provider_calls;
  };

  auto request = prompts::render(prompts::purpose::kTreeGeneration, prompts::kTreeGeneration,
                                 {{"doc_name", doc.doc_id()},
                                  {"page_count", std::to_string(pages)},
                                  {"summary_instruction", with_summaries ? std::string(prompts::kSummaryInstruction) : ""},
                                  {"with_summaries", with_summaries ? "true" : "false"},
                                  {"pages", render_pages(doc)},
                                  {"raw_pages", text::join(doc.pages, "\f")}},
                                 8192);
  auto reply = llm.complete(request);
  account(reply);

  NodeTree tree;
  try {
    tree = parse_tree(detail::json_object_span(reply.text), pages);
  } catch (const Error& first) {
    auto repair = prompts::render(prompts::purpose::kTreeRepair, prompts::kTreeRepair,
                                  {{"error", first.what()},
                                   {"previous", reply.text},
                                   {"doc_name", doc.doc_id()},
                                   {"page_count", std::to_string(pages)},
                                   {"with_summaries", with_summaries ? "true" : "false"},
                                   {"raw_pages", text::join(doc.pages, "\f")}},
                                  8192);
    auto second = llm.complete(repair);
    account(second);
    try {
      tree = parse_tree(detail::json_object_span(second.text), pages);
    } catch (const Error& e) {
      fail(ErrorCode::TreeGenerationFailed,
           "provider output for '" + doc.doc_id() + "' unusable after repair: " + e.what());
    }
  }
  if (tree.doc_name.empty()) tree.doc_name = doc.doc_id();
  detail::shape_summaries(tree.structure, with_summaries);

  if (prices) {
    if (const auto* p = prices->find(llm.id())) {
      report.cost = static_cast<double>(report.input_tokens) * p->input_per_token +
                    static_cast<double>(report.output_tokens) * p->output_per_token;
    }
  }
  return {tree, report};
}

// ---------------------------------------------------------------------------
// Traversal
// ---------------------------------------------------------------------------

struct TraversalResult {
  std::string doc_id;
  std::vector<std::string> node_ids;     // as selected, deduplicated
  std::vector<int> pages;                // ascending
  std::vector<std::string> page_texts;   // parallel to `pages`
  std::vector<std::string> replies;      // raw selector replies, in order
  Usage usage;
  double latency_s = 0.0;
  int provider_calls = 0;

  /// Selected page texts in page order, separated by blank lines.
  std::string context() const { return text::join(page_texts, "\n\n"); }
};

inline std::string render_outline(const NodeTree& tree) {
  std::string out;
  for_each_node(tree.structure, [&](const Node& n, int depth) {
    out += std::string(static_cast<std::size_t>(depth) * 2, ' ') + n.node_id + " | " + n.title + " | " +
           std::to_string(n.start_index) + "-" + std::to_string(n.end_index) + " | " + n.summary.value_or("") + "\n";
  });
  return out;
}

/// Extracts node ids from a selector reply: {"node_ids": [...]}, a bare JSON
/// array, or failing that any 4+ digit runs in the text.
inline std::vector<std::string> parse_node_selection(std::string_view reply) {
  std::vector<std::string> ids;
  auto push = [&](std::string id) {
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(std::move(id));
  };
  try {
    const auto open = reply.find_first_of("[{");
    if (open != std::string_view::npos) {
      const auto close = reply.find_last_of("]}");
      auto j = nlohmann::json::parse(reply.substr(open, close - open + 1));
      const nlohmann::json* arr = j.is_array() ? &j : (j.is_object() && j.contains("node_ids") ? &j["node_ids"] : nullptr);
      if (arr && arr->is_array()) {
        for (const auto& v : *arr) {
          if (v.is_string()) push(v.get<std::string>());
        }
        return ids;
      }
    }
  } catch (const nlohmann::json::exception&) {
  }
  std::size_t i = 0;
  while (i < reply.size()) {
    if (reply[i] >= '0' && reply[i] <= '9') {
      std::size_t j = i;
      while (j < reply.size() && reply[j] >= '0' && reply[j] <= '9') ++j;
      if (j - i >= 4) push(std::string(reply.substr(i, j - i)));
      i = j;
    } else {
      ++i;
    }
  }
  return ids;
}

/// Pages of the selected nodes (each with its descendants), unioned.
inline TraversalResult collect_pages(const NodeTree& tree, const Document& doc, std::vector<std::string> node_ids) {
  TraversalResult r;
  r.doc_id = doc.doc_id();
  std::set<int> pages;
  for (const auto& id : node_ids) {
    const Node* n = find_node(tree, id);
    if (!n) fail(ErrorCode::TraversalFailed, "unknown node_id " + id);
    for (int p : section_pages(*n)) pages.insert(p);
  }
  r.node_ids = std::move(node_ids);
  for (int p : pages) {
    if (p < 1 || p > static_cast<int>(doc.page_count())) {
      fail(ErrorCode::RangeViolation, "page " + std::to_string(p) + " is outside document " + doc.doc_id());
    }
    r.pages.push_back(p);
    r.page_texts.push_back(doc.page(static_cast<std::size_t>(p)));
  }
  return r;
}

/// Asks the provider to pick sections, with one repair round when the reply
/// names no usable node. Returns the exact page texts of the selection.
inline TraversalResult traverse_retrieve(const NodeTree& tree, std::string_view question, const LlmClient& llm,
                                         const Document& doc) {
  const auto outline = render_outline(tree);
  std::map<std::string, std::string> slots = {
      {"doc_name", tree.doc_name}, {"outline", outline}, {"question", std::string(question)}};

  auto check = [&](const std::vector<std::string>& ids) -> std::string {
    if (ids.empty()) return "no node_id found in reply";
    for (const auto& id : ids) {
      if (!find_node(tree, id)) return "unknown node_id " + id;
    }
    return {};
  };

  Usage usage;
  double latency = 0;
  std::vector<std::string> replies;
  auto first = llm.complete(prompts::render(prompts::purpose::kNodeSelection, prompts::kNodeSelection, slots, 256));
  usage += first.usage;
  latency += first.latency_s;
  replies.push_back(first.text);
  auto ids = parse_node_selection(first.text);
  auto problem = check(ids);
  int calls = 1;
  if (!problem.empty()) {
    slots["error"] = problem;
    auto second =
        llm.complete(prompts::render(prompts::purpose::kNodeSelectionRepair, prompts::kNodeSelectionRepair, slots, 256));
    usage += second.usage;
    latency += second.latency_s;
    replies.push_back(second.text);
    ++calls;
    ids = parse_node_selection(second.text);
    problem = check(ids);
    if (!problem.empty()) fail(ErrorCode::TraversalFailed, "selector failed twice on " + tree.doc_name + ": " + problem);
  }
  auto result = collect_pages(tree, doc, std::move(ids));
  result.replies = std::move(replies);
  result.usage = usage;
  result.latency_s = latency;
  result.provider_calls = calls;
  return result;
}

}  // namespace finrag
