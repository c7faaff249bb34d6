#pragma once

#include <map>
#include <string>
#include <string_view>

#include "finrag/providers.hpp"
#include "finrag/text.hpp"

// Prompt templates. Placeholders are written {name} and filled from the
// request slots; bump kPromptVersion whenever any template text changes so
// recorded transcripts keyed by prompt fingerprint are invalidated.
namespace finrag::prompts {

inline constexpr std::string_view kPromptVersion = "finrag-prompts/1";

namespace purpose {
inline constexpr std::string_view kFormulate = "formulate";
inline constexpr std::string_view kRewrite = "rewrite";
inline constexpr std::string_view kGrade = "grade";
inline constexpr std::string_view kGenerate = "generate";
inline constexpr std::string_view kTreeGeneration = "tree_generation";
inline constexpr std::string_view kTreeRepair = "tree_repair";
inline constexpr std::string_view kNodeSelection = "node_selection";
inline constexpr std::string_view kNodeSelectionRepair = "node_selection_repair";
inline constexpr std::string_view kJudge = "judge";
inline constexpr std::string_view kJudgeRepair = "judge_repair";
}  // namespace purpose

inline constexpr std::string_view kFormulate = R"(You are a retrieval agent answering questions about SEC filings.
Available filings (company | form_type | fiscal_period | filing_date):
{catalog}

Call the search tool once. Reply with only a JSON object:
{"query_text": "<search query>", "filter": {"company": "...", "form_type": "...", "fiscal_period": "..."}, "k": {k}}
Omit filter fields you cannot infer from the question.

Question: {question})";

inline constexpr std::string_view kRewrite = R"(A search for the question below returned passages that were graded as not relevant.
Write a different search query that is more likely to find the answer. Reply with the query text only.

Question: {question}
Previous query: {failed_query})";

inline constexpr std::string_view kGrade = R"(Grade each passage for whether it contains information needed to answer the question.
Reply with only a JSON object {"relevant": [true|false, ...]} with one entry per passage, in order.

Question: {question}

Passages:
{passages})";

inline constexpr std::string_view kGenerate = R"(Answer the question using only the numbered context passages below.
Do not use any outside knowledge. Cite every passage you rely on as [n].
If the context does not contain the answer, say that the filings provided do not contain it.

Context:
{context}

Question: {question})";

inline constexpr std::string_view kTreeGeneration = R"(Build a hierarchical table of contents for the document below.
Reply with only JSON of the form
{"doc_name": "{doc_name}", "structure": [{"title": "...", "start_index": <first page>, "end_index": <last page>, "nodes": [...], "node_id": "0001"}]}
Page numbers are 1-based and must lie within 1..{page_count}. node_id values are unique zero-padded 4-digit strings.
{summary_instruction}
Document pages:
{pages})";

inline constexpr std::string_view kSummaryInstruction =
    "Give every node a \"summary\" field (placed after end_index) of at most 60 tokens describing the section.\n";

inline constexpr std::string_view kTreeRepair = R"(Your previous reply could not be used as a table of contents.
Error: {error}
Previous reply:
{previous}

Reply again with only the corrected JSON, following the same schema.)";

inline constexpr std::string_view kNodeSelection = R"(You are navigating the table of contents of {doc_name} to answer a question.
Sections (node_id | title | pages | summary):
{outline}

Reply with only a JSON object {"node_ids": ["...", ...]} naming the sections most likely to contain the answer.

Question: {question})";

inline constexpr std::string_view kNodeSelectionRepair = R"(Your previous selection could not be used.
Error: {error}
Sections (node_id | title | pages | summary):
{outline}

Reply with only a JSON object {"node_ids": ["...", ...]} using node_ids from the list above.

Question: {question})";

inline constexpr std::string_view kJudge = R"(You are comparing two answers to a question about SEC filings.
Judge each criterion independently: accuracy, completeness, clarity, conciseness, relevance, style.
For each criterion pick "A", "B" or "tie", then give an overall preference.
Reply with only JSON:
{"accuracy": "A|B|tie", "completeness": "A|B|tie", "clarity": "A|B|tie", "conciseness": "A|B|tie", "relevance": "A|B|tie", "style": "A|B|tie", "overall": "A|B|tie"}

Question: {question}

Answer A:
{answer_a}

Answer B:
{answer_b})";

inline constexpr std::string_view kJudgeRepair = R"(Your previous verdict could not be parsed. Reply with only the JSON object
{"accuracy": "A|B|tie", "completeness": "A|B|tie", "clarity": "A|B|tie", "conciseness": "A|B|tie", "relevance": "A|B|tie", "style": "A|B|tie", "overall": "A|B|tie"}

Question: {question}

Answer A:
{answer_a}

Answer B:
{answer_b})";

/// Substitutes every {slot} and returns a ready request.
inline CompletionRequest render(std::string_view purpose, std::string_view tmpl,
                                std::map<std::string, std::string> slots, int max_output_tokens = 1024) {
  // Single pass so slot values are never themselves scanned for placeholders.
  std::string prompt;
  prompt.reserve(tmpl.size());
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        auto it = slots.find(std::string(tmpl.substr(i + 1, close - i - 1)));
        if (it != slots.end()) {
          prompt += it->second;
          i = close;
          continue;
        }
      }
    }
    prompt.push_back(tmpl[i]);
  }
  return CompletionRequest{std::string(purpose), std::move(prompt), std::move(slots), max_output_tokens};
}

}  // namespace finrag::prompts
