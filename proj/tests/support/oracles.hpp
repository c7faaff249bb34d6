#pragma once

// Independent reference implementations used only by tests. None of these
// call into the code paths they check.

#include <algorithm>
#include <cmath>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

namespace oracle {

// Regex form of the default tokenizer rules (ASCII input).
inline std::vector<std::string> regex_tokenize(const std::string& text) {
  static const std::regex kToken(R"([A-Za-z0-9_]+|[^ \t\n\r\f\vA-Za-z0-9_])");
  std::vector<std::string> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), kToken); it != std::sregex_iterator(); ++it) {
    out.push_back(it->str());
  }
  return out;
}

struct Window {
  std::size_t start;
  std::size_t end;
};

// Window k exists iff k == 0 or window k-1 did not already reach the end.
inline std::vector<Window> enumerate_windows(std::size_t n, std::size_t size, std::size_t overlap) {
  std::vector<Window> out;
  if (n == 0) return out;
  const std::size_t stride = size - overlap;
  for (std::size_t k = 0;; ++k) {
    if (k > 0) {
      const std::size_t prev_start = (k - 1) * stride;
      if (prev_start + size >= n) break;
    }
    const std::size_t start = k * stride;
    out.push_back({start, std::min(n, start + size)});
  }
  return out;
}

inline double mrr(const std::vector<std::optional<std::size_t>>& ranks) {
  double total = 0.0;
  for (const auto& r : ranks) {
    if (r) total += 1.0 / static_cast<double>(*r);
  }
  return total / static_cast<double>(ranks.size());
}

inline double recall_at_k(const std::vector<std::string>& retrieved, const std::set<std::string>& gold,
                          std::size_t k) {
  std::size_t hit = 0;
  for (const auto& g : gold) {
    for (std::size_t i = 0; i < retrieved.size() && i < k; ++i) {
      if (retrieved[i] == g) {
        ++hit;
        break;
      }
    }
  }
  return static_cast<double>(hit) / static_cast<double>(gold.size());
}

// Textbook Okapi BM25 with the non-negative idf log(1 + (N - n + 0.5)/(n + 0.5)),
// evaluated term-by-term from raw counts.
inline double bm25(const std::vector<std::string>& query_terms,
                   const std::vector<std::vector<std::string>>& docs, std::size_t doc,
                   double k1 = 1.2, double b = 0.75) {
  const double n_docs = static_cast<double>(docs.size());
  double total_len = 0;
  for (const auto& d : docs) total_len += static_cast<double>(d.size());
  const double avgdl = total_len / n_docs;
  std::set<std::string> unique(query_terms.begin(), query_terms.end());
  double score = 0.0;
  for (const auto& term : unique) {
    double df = 0;
    for (const auto& d : docs) {
      if (std::find(d.begin(), d.end(), term) != d.end()) df += 1;
    }
    const double tf = static_cast<double>(std::count(docs[doc].begin(), docs[doc].end(), term));
    if (tf == 0) continue;
    const double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
    const double dl = static_cast<double>(docs[doc].size());
    score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
  }
  return score;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

// Mock embedding projection rebuilt from its documented rules: lower-cased
// ASCII word runs with an alphanumeric, FNV-1a 64 of each term xor seed,
// finalized with splitmix64; coordinate h % dim, sign from bit 8.
inline std::vector<double> hash_embedding(const std::string& text, std::uint64_t seed, std::size_t dim = 256) {
  auto fnv = [](const std::string& s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  };
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  static const std::regex kWord(R"([A-Za-z0-9_]+)");
  std::vector<double> v(dim, 0.0);
  for (auto it = std::sregex_iterator(text.begin(), text.end(), kWord); it != std::sregex_iterator(); ++it) {
    std::string term = it->str();
    if (term.find_first_not_of('_') == std::string::npos) continue;
    for (auto& c : term) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    const std::uint64_t h = mix(fnv(term) ^ seed);
    v[h % dim] += (h & 0x100) ? -1.0 : 1.0;
  }
  double n = 0;
  for (double x : v) n += x * x;
  if (n == 0) {
    v[0] = 1;
    return v;
  }
  for (auto& x : v) x /= std::sqrt(n);
  return v;
}

}  // namespace oracle
