#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "finrag/error.hpp"
#include "finrag/text.hpp"

namespace finrag {

/// Byte range of one token inside the text it was cut from.
struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

using TokenizeFn = std::function<std::vector<TokenSpan>(std::string_view)>;

inline constexpr std::string_view kDefaultTokenizer = "word";

// The default "word" tokenizer. Rules, applied left to right:
//   1. whitespace (space, \t, \n, \r, \f, \v) separates tokens and is dropped;
//   2. a maximal run of word bytes ([A-Za-z0-9_] or any byte >= 0x80) is one token;
//   3. every other byte is a token of its own.
// Equivalent regex over ASCII input: [A-Za-z0-9_]+|[^\sA-Za-z0-9_]
inline std::vector<TokenSpan> word_tokenize(std::string_view text) {
  std::vector<TokenSpan> spans;
  spans.reserve(text.size() / 5 + 1);
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (text::is_space(c)) {
      ++i;
    } else if (text::is_word_byte(c)) {
      std::size_t j = i + 1;
      while (j < text.size() && text::is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
      spans.push_back({i, j});
      i = j;
    } else {
      spans.push_back({i, i + 1});
      ++i;
    }
  }
  return spans;
}

/// Whitespace-delimited tokens; registered as "whitespace".
inline std::vector<TokenSpan> whitespace_tokenize(std::string_view text) {
  std::vector<TokenSpan> spans;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text::is_space(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !text::is_space(static_cast<unsigned char>(text[j]))) ++j;
    spans.push_back({i, j});
    i = j;
  }
  return spans;
}

/// Process-wide tokenizer lookup. Registration is expected at start-up;
/// lookups are safe from any thread.
class TokenizerRegistry {
 public:
  static TokenizerRegistry& instance() {
    static TokenizerRegistry registry;
    return registry;
  }

  void add(std::string id, TokenizeFn fn) {
    std::unique_lock lock(mutex_);
    tokenizers_[std::move(id)] = std::move(fn);
  }

  bool contains(std::string_view id) const {
    std::shared_lock lock(mutex_);
    return tokenizers_.find(std::string(id)) != tokenizers_.end();
  }

  TokenizeFn get(std::string_view id) const {
    std::shared_lock lock(mutex_);
    auto it = tokenizers_.find(std::string(id));
    if (it == tokenizers_.end()) {
      fail(ErrorCode::UnknownTokenizer, "no tokenizer registered as '" + std::string(id) + "'");
    }
    return it->second;
  }

 private:
  TokenizerRegistry() {
    tokenizers_.emplace(std::string(kDefaultTokenizer), &word_tokenize);
    tokenizers_.emplace("whitespace", &whitespace_tokenize);
  }

  mutable std::shared_mutex mutex_;
  std::map<std::string, TokenizeFn, std::less<>> tokenizers_;
};

inline std::vector<TokenSpan> tokenize_spans(std::string_view text,
                                             std::string_view tokenizer_id = kDefaultTokenizer) {
  return TokenizerRegistry::instance().get(tokenizer_id)(text);
}

inline std::vector<std::string> tokenize(std::string_view text,
                                         std::string_view tokenizer_id = kDefaultTokenizer) {
  std::vector<std::string> tokens;
  for (const auto& span : tokenize_spans(text, tokenizer_id)) {
    tokens.emplace_back(text.substr(span.begin, span.end - span.begin));
  }
  return tokens;
}

inline std::size_t count_tokens(std::string_view text,
                                std::string_view tokenizer_id = kDefaultTokenizer) {
  return tokenize_spans(text, tokenizer_id).size();
}

}  // namespace finrag
