#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ehdiscrim/unicode.hpp"
#include "ehdiscrim/vocab.hpp"

namespace ehd {

namespace detail {

inline uint64_t pair_key(int a, int b) {
  return (static_cast<uint64_t>(static_cast<uint32_t>(a)) << 32) |
         static_cast<uint32_t>(b);
}

inline std::string strip_continuation(const std::string& s) {
  return s.size() > 2 && s.compare(0, 2, kContinuation) == 0 ? s.substr(2) : s;
}

}  // namespace detail

// Frequency-driven subword induction. Words start as character sequences
// (interior characters carry the ## prefix); adjacent symbol pairs are merged
// greedily by likelihood gain pair/(left*right), requiring pair frequency
// >= min_count, ties broken lexicographically. The final inventory keeps
// every single character whose initial frequency reaches min_count (the UNK
// bound) plus the highest-frequency merged symbols that fit target_size.
inline Vocab train_wordpiece(
    const std::function<std::optional<std::string>()>& next_document,
    size_t min_count, size_t target_size) {
  if (min_count < 1)
    throw std::invalid_argument("train_wordpiece: min_count must be >= 1");

  // Word-unit frequencies over the whole corpus.
  std::unordered_map<std::string, uint64_t> unit_counts;
  while (auto doc = next_document()) {
    for (const WordUnit& u : pre_tokenize(normalize_text(*doc)))
      ++unit_counts[u.text];
  }
  if (unit_counts.empty())
    throw std::invalid_argument("train_wordpiece: empty corpus");

  // Symbol table; each word type is a sequence of symbol ids.
  std::vector<std::string> sym_text;
  std::unordered_map<std::string, int> sym_id;
  auto intern = [&](const std::string& s) {
    auto it = sym_id.find(s);
    if (it != sym_id.end()) return it->second;
    const int id = static_cast<int>(sym_text.size());
    sym_text.push_back(s);
    sym_id.emplace(s, id);
    return id;
  };

  struct Word {
    std::vector<int> syms;
    uint64_t count;
  };
  std::vector<Word> words;
  words.reserve(unit_counts.size());
  for (const auto& [text, count] : unit_counts) {
    Word w{{}, count};
    const std::vector<uint32_t> cps = decode_utf8(text);
    for (size_t i = 0; i < cps.size(); ++i) {
      std::string s = i == 0 ? "" : kContinuation;
      append_utf8(s, cps[i]);
      w.syms.push_back(intern(s));
    }
    words.push_back(std::move(w));
  }

  std::vector<uint64_t> sym_count(sym_text.size(), 0);
  std::unordered_map<uint64_t, uint64_t> pair_counts;
  std::unordered_map<uint64_t, std::unordered_set<uint32_t>> pair_words;
  for (uint32_t wi = 0; wi < words.size(); ++wi) {
    const Word& w = words[wi];
    for (size_t i = 0; i < w.syms.size(); ++i) {
      sym_count[static_cast<size_t>(w.syms[i])] += w.count;
      if (i + 1 < w.syms.size()) {
        const uint64_t key = detail::pair_key(w.syms[i], w.syms[i + 1]);
        pair_counts[key] += w.count;
        pair_words[key].insert(wi);
      }
    }
  }
  const std::vector<uint64_t> initial_sym_count = sym_count;

  auto merged_string = [&](int a, int b) {
    return sym_text[static_cast<size_t>(a)] +
           detail::strip_continuation(sym_text[static_cast<size_t>(b)]);
  };

  // score(a,b) = pair/(count_a*count_b); compared exactly by
  // cross-multiplication so float rounding cannot perturb the greedy order.
  while (true) {
    bool have = false;
    int best_a = 0, best_b = 0;
    uint64_t best_pc = 0, best_den = 1;
    for (const auto& [key, pc] : pair_counts) {
      if (pc < min_count) continue;
      const int a = static_cast<int>(key >> 32);
      const int b = static_cast<int>(key & 0xFFFFFFFFu);
      const uint64_t den = sym_count[static_cast<size_t>(a)] *
                           sym_count[static_cast<size_t>(b)];
      if (!have) {
        have = true;
        best_a = a;
        best_b = b;
        best_pc = pc;
        best_den = den;
        continue;
      }
      const auto lhs = static_cast<unsigned __int128>(pc) * best_den;
      const auto rhs = static_cast<unsigned __int128>(best_pc) * den;
      bool better = lhs > rhs;
      if (lhs == rhs) {
        const std::string m = merged_string(a, b);
        const std::string bm = merged_string(best_a, best_b);
        better = m < bm || (m == bm &&
                            (sym_text[static_cast<size_t>(a)] <
                             sym_text[static_cast<size_t>(best_a)]));
      }
      if (better) {
        best_a = a;
        best_b = b;
        best_pc = pc;
        best_den = den;
      }
    }
    if (!have) break;

    const int m = intern(merged_string(best_a, best_b));
    if (static_cast<size_t>(m) >= sym_count.size()) sym_count.push_back(0);
    const uint64_t key = detail::pair_key(best_a, best_b);
    const std::unordered_set<uint32_t> affected = pair_words[key];
    for (uint32_t wi : affected) {
      Word& w = words[wi];
      std::vector<int> merged;
      merged.reserve(w.syms.size());
      bool any = false;
      for (size_t i = 0; i < w.syms.size();) {
        if (i + 1 < w.syms.size() && w.syms[i] == best_a &&
            w.syms[i + 1] == best_b) {
          merged.push_back(m);
          i += 2;
          any = true;
        } else {
          merged.push_back(w.syms[i]);
          ++i;
        }
      }
      if (!any) continue;  // stale index entry
      for (size_t i = 0; i < w.syms.size(); ++i) {
        sym_count[static_cast<size_t>(w.syms[i])] -= w.count;
        if (i + 1 < w.syms.size()) {
          auto it = pair_counts.find(detail::pair_key(w.syms[i], w.syms[i + 1]));
          it->second -= w.count;
          if (it->second == 0) pair_counts.erase(it);
        }
      }
      for (size_t i = 0; i < merged.size(); ++i) {
        sym_count[static_cast<size_t>(merged[i])] += w.count;
        if (i + 1 < merged.size()) {
          const uint64_t k2 = detail::pair_key(merged[i], merged[i + 1]);
          pair_counts[k2] += w.count;
          pair_words[k2].insert(wi);
        }
      }
      w.syms = std::move(merged);
    }
    pair_words.erase(key);
  }

  // Fallback characters (by pre-merge frequency) plus surviving merges.
  struct Candidate {
    std::string text;
    uint64_t count;
  };
  std::vector<Candidate> fallback, merges;
  for (size_t s = 0; s < sym_text.size(); ++s) {
    const std::string plain = detail::strip_continuation(sym_text[s]);
    const bool single_char = decode_utf8(plain).size() == 1;
    if (single_char) {
      if (s < initial_sym_count.size() && initial_sym_count[s] >= min_count)
        fallback.push_back({sym_text[s], initial_sym_count[s]});
    } else if (sym_count[s] >= min_count) {
      merges.push_back({sym_text[s], sym_count[s]});
    }
  }
  if (Vocab::kNumSpecials + fallback.size() > target_size)
    throw std::invalid_argument(
        "train_wordpiece: target_size " + std::to_string(target_size) +
        " cannot hold " + std::to_string(fallback.size()) +
        " fallback characters plus specials");

  auto by_count_then_text = [](const Candidate& x, const Candidate& y) {
    if (x.count != y.count) return x.count > y.count;
    return x.text < y.text;
  };
  std::sort(merges.begin(), merges.end(), by_count_then_text);
  const size_t room = target_size - Vocab::kNumSpecials - fallback.size();
  if (merges.size() > room) merges.resize(room);

  std::vector<Candidate> kept = std::move(fallback);
  kept.insert(kept.end(), merges.begin(), merges.end());
  std::sort(kept.begin(), kept.end(), by_count_then_text);

  std::vector<std::string> tokens(Vocab::specials().begin(),
                                  Vocab::specials().end());
  for (auto& c : kept) tokens.push_back(std::move(c.text));
  return Vocab(std::move(tokens));
}

inline Vocab train_wordpiece(const std::vector<std::string>& documents,
                             size_t min_count, size_t target_size) {
  size_t next = 0;
  return train_wordpiece(
      [&]() -> std::optional<std::string> {
        if (next >= documents.size()) return std::nullopt;
        return documents[next++];
      },
      min_count, target_size);
}

}  // namespace ehd
