#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ehd {

// Strict UTF-8 decoding: overlong forms, surrogates, and truncated tails all
// reject rather than pass through corrupted text.
inline std::vector<uint32_t> decode_utf8(const std::string& s) {
  std::vector<uint32_t> out;
  out.reserve(s.size());
  size_t i = 0;
  auto fail = [] { throw std::invalid_argument("invalid UTF-8"); };
  while (i < s.size()) {
    const uint8_t b0 = static_cast<uint8_t>(s[i]);
    uint32_t cp;
    size_t len;
    if (b0 < 0x80) {
      cp = b0;
      len = 1;
    } else if ((b0 & 0xE0) == 0xC0) {
      cp = b0 & 0x1F;
      len = 2;
    } else if ((b0 & 0xF0) == 0xE0) {
      cp = b0 & 0x0F;
      len = 3;
    } else if ((b0 & 0xF8) == 0xF0) {
      cp = b0 & 0x07;
      len = 4;
    } else {
      fail();
      return out;
    }
    if (i + len > s.size()) fail();
    for (size_t k = 1; k < len; ++k) {
      const uint8_t b = static_cast<uint8_t>(s[i + k]);
      if ((b & 0xC0) != 0x80) fail();
      cp = (cp << 6) | (b & 0x3F);
    }
    static constexpr uint32_t kMin[5] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF))
      fail();
    out.push_back(cp);
    i += len;
  }
  return out;
}

inline void append_utf8(std::string& out, uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

inline std::string encode_utf8(uint32_t cp) {
  std::string s;
  append_utf8(s, cp);
  return s;
}

inline bool is_cjk(uint32_t cp) {
  return (cp >= 0x4E00 && cp <= 0x9FFF) ||    // unified ideographs
         (cp >= 0x3400 && cp <= 0x4DBF) ||    // extension A
         (cp >= 0xF900 && cp <= 0xFAFF) ||    // compatibility ideographs
         (cp >= 0x20000 && cp <= 0x2FFFF);    // extensions B+
}

inline bool is_ascii_digit(uint32_t cp) { return cp >= '0' && cp <= '9'; }

inline bool is_latin_letter(uint32_t cp) {
  return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z') ||
         (cp >= 0xC0 && cp <= 0xFF && cp != 0xD7 && cp != 0xF7) ||
         (cp >= 0x100 && cp <= 0x17F);  // Latin Extended-A
}

inline bool is_emoji(uint32_t cp) {
  return (cp >= 0x1F000 && cp <= 0x1FAFF) ||  // pictographs, emoticons
         (cp >= 0x2600 && cp <= 0x27BF) ||    // misc symbols, dingbats
         (cp >= 0x2B00 && cp <= 0x2BFF) ||    // misc symbols and arrows
         (cp >= 0xFE00 && cp <= 0xFE0F);      // variation selectors
}

inline bool is_space(uint32_t cp) {
  return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' ||
         cp == '\v' || cp == 0xA0 || cp == 0x3000;
}

inline uint32_t to_lower(uint32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 0x20;  // Latin-1
  return cp;
}

// Compatibility folding for the codepoint classes that matter in clinical
// text: fullwidth ASCII, ideographic space, and enclosed alphanumerics.
// Appends the replacement (possibly several codepoints) to `out`.
inline void fold_compat(uint32_t cp, std::vector<uint32_t>& out) {
  auto push_number = [&out](unsigned n) {
    if (n >= 10) out.push_back('0' + n / 10);
    out.push_back('0' + n % 10);
  };
  if (cp >= 0xFF01 && cp <= 0xFF5E) {  // fullwidth ASCII block
    out.push_back(cp - 0xFEE0);
  } else if (cp == 0x3000) {  // ideographic space
    out.push_back(' ');
  } else if (cp >= 0x2460 && cp <= 0x2473) {  // circled 1-20
    push_number(cp - 0x2460 + 1);
  } else if (cp >= 0x2474 && cp <= 0x2487) {  // parenthesized 1-20
    push_number(cp - 0x2474 + 1);
  } else if (cp >= 0x2488 && cp <= 0x249B) {  // digit full stop 1-20
    push_number(cp - 0x2488 + 1);
  } else if (cp >= 0x249C && cp <= 0x24B5) {  // parenthesized a-z
    out.push_back('a' + (cp - 0x249C));
  } else if (cp >= 0x24B6 && cp <= 0x24CF) {  // circled A-Z
    out.push_back('a' + (cp - 0x24B6));
  } else if (cp >= 0x24D0 && cp <= 0x24E9) {  // circled a-z
    out.push_back('a' + (cp - 0x24D0));
  } else if (cp == 0x24EA) {  // circled 0
    out.push_back('0');
  } else {
    out.push_back(cp);
  }
}

}  // namespace ehd
