#include "abtts/text.hpp"

namespace abtts::text {

std::size_t space_len(std::string_view s, std::size_t i) {
  if (i >= s.size()) return 0;
  const unsigned char c = static_cast<unsigned char>(s[i]);
  if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') return 1;
  if (s.substr(i, 2) == "\xC2\xA0") return 2;
  if (s.substr(i, 3) == "\xE2\x80\xAF" || s.substr(i, 3) == "\xE2\x80\x89") return 3;
  return 0;
}

std::size_t skip_space(std::string_view s, std::size_t i) {
  while (std::size_t n = space_len(s, i)) i += n;
  return i;
}

namespace {

// Length of a whitespace character ending exactly at e, or 0.
std::size_t space_len_before(std::string_view s, std::size_t b, std::size_t e) {
  for (std::size_t n : {1u, 2u, 3u})
    if (e >= b + n && space_len(s, e - n) == n) return n;
  return 0;
}

}  // namespace

std::pair<std::size_t, std::size_t> trim_range(std::string_view s, std::size_t b, std::size_t e) {
  while (b < e) {
    const std::size_t n = space_len(s, b);
    if (n == 0 || b + n > e) break;
    b += n;
  }
  while (e > b) {
    const std::size_t n = space_len_before(s, b, e);
    if (n == 0) break;
    e -= n;
  }
  return {b, e};
}

std::string trim(std::string_view s) {
  const auto [b, e] = trim_range(s, 0, s.size());
  return std::string(s.substr(b, e - b));
}

std::string collapse_space(std::string_view s) {
  std::string out;
  bool pending = false;
  for (std::size_t i = 0; i < s.size();) {
    if (std::size_t n = space_len(s, i)) {
      pending = !out.empty();
      i += n;
      continue;
    }
    if (pending) out += ' ';
    pending = false;
    out += s[i++];
  }
  return out;
}

std::size_t codepoint_count(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

std::size_t visible_count(std::string_view s) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size();) {
    if (std::size_t k = space_len(s, i)) {
      i += k;
      continue;
    }
    n += (static_cast<unsigned char>(s[i]) & 0xC0) != 0x80;
    ++i;
  }
  return n;
}

std::u32string to_u32(std::string_view s) {
  std::u32string out;
  for (std::size_t i = 0; i < s.size();) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    int extra = c < 0x80 ? 0 : c < 0xE0 ? 1 : c < 0xF0 ? 2 : 3;
    char32_t cp = extra == 0 ? c : extra == 1 ? (c & 0x1F) : extra == 2 ? (c & 0x0F) : (c & 0x07);
    if (c >= 0x80 && c < 0xC0) extra = 0, cp = 0xFFFD;  // stray continuation byte
    ++i;
    for (int k = 0; k < extra && i < s.size(); ++k, ++i) cp = (cp << 6) | (static_cast<unsigned char>(s[i]) & 0x3F);
    out.push_back(cp);
  }
  return out;
}

std::string to_utf8(char32_t c) {
  std::string out;
  if (c < 0x80) {
    out += static_cast<char>(c);
  } else if (c < 0x800) {
    out += static_cast<char>(0xC0 | (c >> 6));
    out += static_cast<char>(0x80 | (c & 0x3F));
  } else if (c < 0x10000) {
    out += static_cast<char>(0xE0 | (c >> 12));
    out += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (c & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (c >> 18));
    out += static_cast<char>(0x80 | ((c >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (c & 0x3F));
  }
  return out;
}

std::string to_utf8(std::u32string_view s) {
  std::string out;
  for (char32_t c : s) out += to_utf8(c);
  return out;
}

char32_t lower(char32_t c) {
  if (c >= U'A' && c <= U'Z') return c + 32;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;
  if (c == 0x152) return 0x153;  // Œ
  if (c == 0x178) return 0xFF;   // Ÿ
  return c;
}

std::string to_lower(std::string_view s) {
  std::u32string u = to_u32(s);
  for (auto& c : u) c = lower(c);
  return to_utf8(u);
}

bool is_letter(char32_t c) {
  return (c >= U'a' && c <= U'z') || (c >= U'A' && c <= U'Z') || (c >= 0xC0 && c <= 0xFF && c != 0xD7 && c != 0xF7) ||
         c == 0x152 || c == 0x153 || c == 0x178;
}

bool is_upper(char32_t c) { return is_letter(c) && lower(c) != c; }

bool is_vowel_letter(char32_t c) {
  c = lower(c);
  switch (c) {
    case U'a': case U'e': case U'i': case U'o': case U'u': case U'y':
    case U'à': case U'â': case U'ä': case U'é': case U'è': case U'ê': case U'ë':
    case U'î': case U'ï': case U'ô': case U'ö': case U'ù': case U'û': case U'ü': case U'ÿ':
    case U'œ': case U'æ':
      return true;
    default:
      return false;
  }
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace abtts::text
