#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ehdiscrim/unicode.hpp"

namespace ehd {

inline constexpr const char* kContinuation = "##";

enum class UnitKind { CjkChar, LatinRun, DigitRun, Emoji, Punct };

// Smallest unsplittable span of text: one CJK character, one maximal
// Latin/digit run, one emoji, or one punctuation mark.
struct WordUnit {
  std::string text;
  UnitKind kind;
};

// Lowercase, fold fullwidth forms and enclosed alphanumerics to plain ASCII,
// and collapse whitespace runs to single spaces (ends trimmed).
inline std::string normalize_text(const std::string& raw) {
  std::vector<uint32_t> cps = decode_utf8(raw);
  std::vector<uint32_t> folded;
  folded.reserve(cps.size());
  for (uint32_t cp : cps) fold_compat(cp, folded);
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (uint32_t cp : folded) {
    if (is_space(cp)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    append_utf8(out, to_lower(cp));
  }
  return out;
}

inline std::vector<WordUnit> pre_tokenize(const std::string& text) {
  std::vector<uint32_t> cps = decode_utf8(text);
  std::vector<WordUnit> units;
  size_t i = 0;
  while (i < cps.size()) {
    const uint32_t cp = cps[i];
    if (is_space(cp)) {
      ++i;
    } else if (is_cjk(cp)) {
      units.push_back({encode_utf8(cp), UnitKind::CjkChar});
      ++i;
    } else if (is_latin_letter(cp)) {
      std::string run;
      while (i < cps.size() && is_latin_letter(cps[i])) append_utf8(run, cps[i++]);
      units.push_back({std::move(run), UnitKind::LatinRun});
    } else if (is_ascii_digit(cp)) {
      std::string run;
      while (i < cps.size() && is_ascii_digit(cps[i])) append_utf8(run, cps[i++]);
      units.push_back({std::move(run), UnitKind::DigitRun});
    } else if (is_emoji(cp)) {
      units.push_back({encode_utf8(cp), UnitKind::Emoji});
      ++i;
    } else {
      units.push_back({encode_utf8(cp), UnitKind::Punct});
      ++i;
    }
  }
  return units;
}

// Token inventory. Line index = id; ids 0-4 are the fixed specials.
class Vocab {
 public:
  static constexpr int kPad = 0, kUnk = 1, kCls = 2, kSep = 3, kMask = 4;
  static constexpr size_t kNumSpecials = 5;

  static const std::array<std::string, kNumSpecials>& specials() {
    static const std::array<std::string, kNumSpecials> s = {
        "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    return s;
  }

  explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < kNumSpecials)
      throw std::invalid_argument("Vocab: fewer tokens than specials");
    for (size_t i = 0; i < kNumSpecials; ++i)
      if (tokens_[i] != specials()[i])
        throw std::invalid_argument("Vocab: id " + std::to_string(i) +
                                    " must be " + specials()[i] + ", got '" +
                                    tokens_[i] + "'");
    for (size_t i = 0; i < tokens_.size(); ++i) {
      if (tokens_[i].empty())
        throw std::invalid_argument("Vocab: empty token at id " + std::to_string(i));
      if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
        throw std::invalid_argument("Vocab: duplicate token '" + tokens_[i] + "'");
    }
  }

  size_t size() const { return tokens_.size(); }

  // -1 when absent.
  int id_of(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? -1 : it->second;
  }

  const std::string& token(int id) const {
    if (id < 0 || static_cast<size_t>(id) >= tokens_.size())
      throw std::out_of_range("Vocab: id " + std::to_string(id) +
                              " out of range (size " +
                              std::to_string(tokens_.size()) + ")");
    return tokens_[static_cast<size_t>(id)];
  }

  bool is_special(int id) const {
    return id >= 0 && static_cast<size_t>(id) < kNumSpecials;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("Vocab: cannot write " + path);
    for (const auto& t : tokens_) out << t << '\n';
    if (!out) throw std::runtime_error("Vocab: write failed for " + path);
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("Vocab: cannot read " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      tokens.push_back(line);
    }
    return Vocab(std::move(tokens));
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Token ids with parallel word-start flags (true at the first piece of each
// word). Pre-training sequences store only real tokens; [CLS]/[SEP] are added
// at encode time.
struct TokenSequence {
  std::vector<int32_t> ids;
  std::vector<uint8_t> word_start;

  size_t size() const { return ids.size(); }

  bool operator==(const TokenSequence& o) const {
    return ids == o.ids && word_start == o.word_start;
  }
};

// Greedy longest-match of one word unit against the vocab. Empty result means
// no full cover exists and the unit must become a single [UNK].
inline std::vector<int> match_unit(const std::string& unit, const Vocab& vocab) {
  const std::vector<uint32_t> cps = decode_utf8(unit);
  std::vector<int> pieces;
  size_t pos = 0;
  while (pos < cps.size()) {
    int found = -1;
    for (size_t end = cps.size(); end > pos; --end) {
      std::string cand = pos == 0 ? "" : kContinuation;
      for (size_t k = pos; k < end; ++k) append_utf8(cand, cps[k]);
      const int id = vocab.id_of(cand);
      if (id >= 0 && !vocab.is_special(id)) {
        found = id;
        pos = end;
        break;
      }
    }
    if (found < 0) return {};
    pieces.push_back(found);
  }
  return pieces;
}

inline TokenSequence tokenize(const std::string& text, const Vocab& vocab) {
  TokenSequence seq;
  for (const WordUnit& u : pre_tokenize(normalize_text(text))) {
    std::vector<int> pieces = match_unit(u.text, vocab);
    if (pieces.empty()) pieces.push_back(Vocab::kUnk);
    for (size_t i = 0; i < pieces.size(); ++i) {
      seq.ids.push_back(pieces[i]);
      seq.word_start.push_back(i == 0 ? 1 : 0);
    }
  }
  return seq;
}

// Joins pieces, stripping continuation prefixes; a single space separates
// adjacent Latin/digit words, nothing else.
inline std::string detokenize(const TokenSequence& seq, const Vocab& vocab) {
  auto spaced = [](const std::string& piece) {
    if (piece.empty()) return false;
    const uint32_t cp = decode_utf8(piece)[0];
    return is_latin_letter(cp) || is_ascii_digit(cp);
  };
  std::string out;
  bool prev_spaced = false;
  for (size_t i = 0; i < seq.ids.size(); ++i) {
    std::string piece = vocab.token(seq.ids[i]);
    const bool cont = piece.size() > 2 && piece.compare(0, 2, kContinuation) == 0;
    if (cont) piece = piece.substr(2);
    const bool starts_word = i < seq.word_start.size() ? seq.word_start[i] != 0
                                                       : !cont;
    if (starts_word) {
      const bool cur_spaced = spaced(piece);
      if (prev_spaced && cur_spaced && !out.empty()) out.push_back(' ');
      prev_spaced = cur_spaced;
    }
    out += piece;
  }
  return out;
}

}  // namespace ehd
