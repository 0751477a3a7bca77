#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "ehdiscrim/unicode.hpp"
#include "ehdiscrim/io.hpp"
#include "ehdiscrim/vocab.hpp"

namespace ehd {

struct Document {
  std::string id;
  std::string text;
  std::string source;
};

// Exact-duplicate filter keyed on normalized content, plus denoising: texts
// that normalize to nothing or to punctuation alone are dropped.
class Deduper {
 public:
  // True when the document should be kept; duplicates and noise return false.
  bool admit(const std::string& raw) {
    const std::string norm = normalize_text(raw);
    if (norm.empty()) return false;
    bool substantive = false;
    for (const WordUnit& u : pre_tokenize(norm))
      if (u.kind != UnitKind::Punct) {
        substantive = true;
        break;
      }
    if (!substantive) return false;
    return seen_.insert(norm).second;
  }

  size_t kept() const { return seen_.size(); }

 private:
  std::unordered_set<std::string> seen_;
};

inline std::vector<Document> dedup_documents(const std::vector<Document>& docs) {
  Deduper dd;
  std::vector<Document> out;
  for (const Document& d : docs)
    if (dd.admit(d.text)) out.push_back(d);
  return out;
}

// Sentence-final boundaries; the boundary character stays with its sentence.
inline bool is_sentence_boundary(uint32_t cp) {
  return cp == 0x3002 || cp == 0xFF01 || cp == 0xFF1F || cp == 0xFF1B ||
         cp == '!' || cp == '?' || cp == ';' || cp == '\n';
}

inline std::vector<std::string> split_sentences(const std::string& raw) {
  std::vector<std::string> out;
  std::string cur;
  for (uint32_t cp : decode_utf8(raw)) {
    append_utf8(cur, cp);
    if (is_sentence_boundary(cp)) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// Tokenize along sentence boundaries, greedily packing whole sentences up to
// max_len; an oversize single sentence is hard-split at max_len. Chunks
// shorter than min_len are discarded.
inline std::vector<TokenSequence> chunk_document(const Document& doc,
                                                 const Vocab& vocab,
                                                 size_t max_len = 512,
                                                 size_t min_len = 32) {
  if (max_len == 0 || min_len > max_len)
    throw std::invalid_argument("chunk_document: bad length bounds");
  std::vector<TokenSequence> chunks;
  TokenSequence cur;
  auto flush = [&] {
    if (cur.size() >= min_len && cur.size() > 0) {
      cur.word_start[0] = 1;
      chunks.push_back(std::move(cur));
    }
    cur = TokenSequence{};
  };
  auto append = [&](const TokenSequence& s, size_t from, size_t to) {
    cur.ids.insert(cur.ids.end(), s.ids.begin() + from, s.ids.begin() + to);
    cur.word_start.insert(cur.word_start.end(), s.word_start.begin() + from,
                          s.word_start.begin() + to);
  };
  for (const std::string& sent : split_sentences(doc.text)) {
    const TokenSequence s = tokenize(sent, vocab);
    if (s.size() == 0) continue;
    if (cur.size() + s.size() > max_len) flush();
    if (s.size() > max_len) {
      for (size_t off = 0; off < s.size(); off += max_len) {
        append(s, off, std::min(off + max_len, s.size()));
        if (cur.size() == max_len) flush();
      }
    } else {
      append(s, 0, s.size());
      if (cur.size() == max_len) flush();
    }
  }
  flush();
  return chunks;
}

// Forward maximum matching over consecutive single-character CJK pieces;
// Latin/digit words keep their continuation grouping, everything else is its
// own word. Without a lexicon this is the identity (character-per-word).
inline TokenSequence segment_words(TokenSequence seq, const Vocab& vocab,
                                   const std::unordered_set<std::string>& lexicon) {
  if (lexicon.empty()) return seq;
  size_t max_word_cps = 0;
  for (const std::string& w : lexicon)
    max_word_cps = std::max(max_word_cps, decode_utf8(w).size());

  auto cjk_char = [&](size_t i) -> bool {
    if (!seq.word_start[i]) return false;  // continuation piece, not CJK
    const std::string& t = vocab.token(seq.ids[i]);
    const std::vector<uint32_t> cps = decode_utf8(t);
    return cps.size() == 1 && is_cjk(cps[0]);
  };

  for (size_t i = 0; i < seq.size();) {
    if (!cjk_char(i)) {
      ++i;
      continue;
    }
    size_t run_end = i;
    while (run_end < seq.size() && cjk_char(run_end)) ++run_end;
    // FMM inside [i, run_end)
    size_t pos = i;
    while (pos < run_end) {
      size_t best = 1;
      std::string acc;
      for (size_t len = 1; len <= max_word_cps && pos + len <= run_end; ++len) {
        acc += vocab.token(seq.ids[pos + len - 1]);
        if (len >= 2 && lexicon.count(acc)) best = len;
      }
      seq.word_start[pos] = 1;
      for (size_t k = 1; k < best; ++k) seq.word_start[pos + k] = 0;
      pos += best;
    }
    i = run_end;
  }
  return seq;
}

// ---- shard serialization ----
// Little-endian u32 count; per sequence: u32 length, u32 ids, word-start
// bits packed LSB-first with zero padding.



inline void write_shard(const std::string& path,
                        const std::vector<TokenSequence>& seqs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("shard: cannot write " + path);
  detail::put_u32(out, static_cast<uint32_t>(seqs.size()));
  for (const TokenSequence& s : seqs) {
    detail::put_u32(out, static_cast<uint32_t>(s.size()));
    for (int32_t id : s.ids) detail::put_u32(out, static_cast<uint32_t>(id));
    std::vector<uint8_t> bits((s.size() + 7) / 8, 0);
    for (size_t i = 0; i < s.size(); ++i)
      if (s.word_start[i]) bits[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
    out.write(reinterpret_cast<const char*>(bits.data()),
              static_cast<std::streamsize>(bits.size()));
  }
  if (!out) throw std::runtime_error("shard: write failed for " + path);
}

inline std::vector<TokenSequence> read_shard(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("shard: cannot read " + path);
  const uint32_t count = detail::get_u32(in);
  std::vector<TokenSequence> seqs;
  seqs.reserve(count);
  for (uint32_t k = 0; k < count; ++k) {
    const uint32_t n = detail::get_u32(in);
    TokenSequence s;
    s.ids.reserve(n);
    for (uint32_t i = 0; i < n; ++i)
      s.ids.push_back(static_cast<int32_t>(detail::get_u32(in)));
    std::vector<uint8_t> bits((n + 7) / 8);
    in.read(reinterpret_cast<char*>(bits.data()),
            static_cast<std::streamsize>(bits.size()));
    if (!in) throw std::runtime_error("shard: truncated bitmap in " + path);
    s.word_start.resize(n);
    for (uint32_t i = 0; i < n; ++i)
      s.word_start[i] = (bits[i / 8] >> (i % 8)) & 1u;
    seqs.push_back(std::move(s));
  }
  return seqs;
}

// ---- raw document reading ----

// One document per line, or blank-line-separated blocks.
inline std::vector<Document> read_documents(const std::string& path,
                                            bool doc_per_line) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<Document> docs;
  std::string line, block;
  size_t n = 0;
  auto emit = [&](std::string text) {
    if (text.empty()) return;
    docs.push_back({path + ":" + std::to_string(n++), std::move(text), path});
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (doc_per_line) {
      emit(line);
    } else if (line.empty()) {
      emit(std::move(block));
      block.clear();
    } else {
      if (!block.empty()) block += '\n';
      block += line;
    }
  }
  if (!doc_per_line) emit(std::move(block));
  return docs;
}

inline std::vector<std::string> list_text_files(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  if (!fs::exists(dir)) throw std::runtime_error("no such directory: " + dir);
  if (fs::is_regular_file(dir)) {
    files.push_back(dir);
    return files;
  }
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace ehd
