#include <algorithm>
#include <array>
#include <map>

#include "abtts/frontend.hpp"
#include "abtts/text.hpp"

namespace abtts::frontend {

namespace {

const std::array<const char*, 17> kUnits = {"zéro", "un",   "deux",     "trois",    "quatre", "cinq",
                                            "six",  "sept", "huit",     "neuf",     "dix",    "onze",
                                            "douze", "treize", "quatorze", "quinze", "seize"};
const std::array<const char*, 7> kTens = {"", "", "vingt", "trente", "quarante", "cinquante", "soixante"};

std::string below100(long n) {
  if (n < 17) return kUnits[n];
  if (n < 20) return std::string("dix-") + kUnits[n - 10];
  const long t = n / 10, u = n % 10;
  if (t <= 6) {
    if (u == 0) return kTens[t];
    if (u == 1) return std::string(kTens[t]) + " et un";
    return std::string(kTens[t]) + "-" + kUnits[u];
  }
  if (t == 7) return u == 1 ? "soixante et onze" : "soixante-" + below100(10 + u);
  if (t == 8) return u == 0 ? "quatre-vingts" : std::string("quatre-vingt-") + kUnits[u];
  return "quatre-vingt-" + below100(10 + u);
}

std::string below1000(long n) {
  const long h = n / 100, r = n % 100;
  if (h == 0) return below100(r);
  std::string s = h == 1 ? "cent" : std::string(kUnits[h]) + " cent";
  if (r) return s + " " + below100(r);
  return h > 1 ? s + "s" : s;
}

// "quatre-vingts" and "deux cents" lose their plural before "mille".
std::string strip_plural(std::string s) {
  for (const std::string suffix : {"vingts", "cents"})
    if (s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0) s.pop_back();
  return s;
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool starts(const std::string& s, std::size_t i, const std::string& tok) { return s.compare(i, tok.size(), tok) == 0; }

bool letter_at(const std::string& s, std::size_t i) {
  if (i >= s.size()) return false;
  const auto u = text::to_u32(s.substr(i, 4));
  return !u.empty() && text::is_letter(u[0]);
}

const std::vector<std::pair<std::string, std::string>>& abbreviations() {
  static const std::vector<std::pair<std::string, std::string>> table = {
      {"MM.", "Messieurs"}, {"M.", "Monsieur"},     {"Mmes", "Mesdames"},     {"Mme", "Madame"},
      {"Mlles", "Mesdemoiselles"}, {"Mlle", "Mademoiselle"}, {"Dr", "Docteur"}, {"Pr", "Professeur"},
      {"Mgr", "Monseigneur"}, {"Ste", "Sainte"},   {"St", "Saint"},         {"etc.", "et cetera"},
      {"cf.", "confer"},    {"av.", "avenue"},      {"bd", "boulevard"},     {"n°", "numéro"},
      {"env.", "environ"},  {"%", "pour cent"},     {"&", "et"},
  };
  return table;
}

std::string expand_abbreviations(const std::string& s) {
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    const bool word_start = i == 0 || text::space_len(s, i - 1) || s[i - 1] == '(' || s[i - 1] == '\'';
    bool matched = false;
    if (word_start || s[i] == '%' || s[i] == '&') {
      for (const auto& [abbr, full] : abbreviations()) {
        if (!starts(s, i, abbr)) continue;
        const std::size_t e = i + abbr.size();
        // An abbreviation ending in a letter must not run into more letters.
        if (abbr.back() != '.' && abbr.back() != '%' && abbr.back() != '&' && letter_at(s, e)) continue;
        if ((abbr == "%" || abbr == "&") && !out.empty() && out.back() != ' ') out += ' ';
        out += full;
        if (letter_at(s, e)) out += ' ';
        i = e;
        matched = true;
        break;
      }
    }
    if (!matched) out += s[i++];
  }
  return out;
}

// Ordinal suffixes after a digit run: (suffix, feminine).
const std::vector<std::pair<std::string, bool>>& ordinal_suffixes() {
  static const std::vector<std::pair<std::string, bool>> table = {
      {"\xE1\xB5\x89\xCA\xB3", false},  // ᵉʳ
      {"ère", true}, {"ème", false}, {"eme", false}, {"er", false}, {"re", true},
      {"e", false},  {"è", false},   {"\xC2\xBA", false} /* º */, {"\xE1\xB5\x89", false} /* ᵉ */,
  };
  return table;
}

std::string spell_digits(const std::string& digits) {
  std::string out;
  for (char c : digits) {
    if (!out.empty()) out += ' ';
    out += kUnits[c - '0'];
  }
  return out;
}

std::string expand_numbers(const std::string& s) {
  std::string out;
  std::size_t i = 0;
  auto glue = [&](const std::string& words, std::size_t next) {
    if (!out.empty() && !text::space_len(out, out.size() - 1) && out.back() != '(' && out.back() != '\'' &&
        !(out.size() >= 2 && out.compare(out.size() - 2, 2, "\xC2\xAB") == 0))
      out += ' ';
    out += words;
    if (letter_at(s, next)) out += ' ';
  };
  while (i < s.size()) {
    if (!is_digit(s[i]) || (i > 0 && (letter_at(s, i - 1)))) {
      out += s[i++];
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && is_digit(s[j])) ++j;
    const std::string digits = s.substr(i, j - i);
    if (digits.size() > 6) {
      out += digits;
      i = j;
      continue;
    }
    const long value = std::stol(digits);
    bool done = false;
    for (const auto& [suffix, fem] : ordinal_suffixes()) {
      if (!starts(s, j, suffix) || letter_at(s, j + suffix.size())) continue;
      if ((suffix == "er" || suffix == "\xE1\xB5\x89\xCA\xB3") && value != 1) continue;
      if ((suffix == "re" || suffix == "ère") && value != 1) continue;
      glue(ordinal_to_words(value, fem), j + suffix.size());
      i = j + suffix.size();
      done = true;
      break;
    }
    if (done) continue;
    // Decimal comma: "3,5" reads "trois virgule cinq".
    if (j + 1 < s.size() && s[j] == ',' && is_digit(s[j + 1])) {
      std::size_t k = j + 1;
      while (k < s.size() && is_digit(s[k])) ++k;
      const std::string frac = s.substr(j + 1, k - j - 1);
      if (frac.size() <= 6) {
        std::size_t zeros = 0;
        while (zeros + 1 < frac.size() && frac[zeros] == '0') ++zeros;
        std::string fw = spell_digits(frac.substr(0, zeros));
        if (!fw.empty()) fw += ' ';
        fw += number_to_words(std::stol(frac.substr(zeros)));
        glue(number_to_words(value) + " virgule " + fw, k);
        i = k;
        continue;
      }
    }
    glue(number_to_words(value), j);
    i = j;
  }
  return out;
}

}  // namespace

std::string number_to_words(long n) {
  if (n < 0 || n > 999999) return std::to_string(n);
  const long th = n / 1000, r = n % 1000;
  if (th == 0) return below1000(r);
  std::string s = th == 1 ? "mille" : strip_plural(below1000(th)) + " mille";
  return r ? s + " " + below1000(r) : s;
}

std::string ordinal_to_words(long n, bool feminine) {
  if (n == 1) return feminine ? "première" : "premier";
  std::string w = number_to_words(n);
  const std::size_t cut = w.find_last_of(" -");
  const std::string head = cut == std::string::npos ? "" : w.substr(0, cut + 1);
  std::string last = cut == std::string::npos ? w : w.substr(cut + 1);
  if (last == "cinq") return head + "cinquième";
  if (last == "neuf") return head + "neuvième";
  if (last == "vingts" || last == "cents") last.pop_back();
  if (!last.empty() && last.back() == 'e') last.pop_back();
  return head + last + "ième";
}

std::string normalize_text(const std::string& raw) { return text::collapse_space(expand_numbers(expand_abbreviations(raw))); }

// ---------------------------------------------------------------------------

std::vector<std::string> split_sentences(const std::string& t) {
  std::vector<std::string> out;
  int depth = 0;
  std::size_t start = 0, i = 0;
  auto emit = [&](std::size_t end) {
    std::string s = text::trim(std::string_view(t).substr(start, end - start));
    if (!s.empty()) out.push_back(std::move(s));
    start = end;
  };
  auto terminal_len = [&](std::size_t k) -> std::size_t {
    if (k >= t.size()) return 0;
    if (t[k] == '.' || t[k] == '!' || t[k] == '?') return 1;
    return starts(t, k, "\xE2\x80\xA6") ? 3 : 0;
  };
  while (i < t.size()) {
    if (starts(t, i, "\xC2\xAB")) {
      ++depth;
      i += 2;
      continue;
    }
    if (starts(t, i, "\xC2\xBB")) {
      depth = std::max(0, depth - 1);
      i += 2;
      continue;
    }
    const std::size_t tl = terminal_len(i);
    if (tl == 0 || depth > 0) {
      ++i;
      continue;
    }
    std::size_t e = i;
    while (std::size_t k = terminal_len(e)) e += k;
    const std::size_t next = text::skip_space(t, e);
    if (next >= t.size()) {
      i = e;
      continue;
    }
    const bool spaced = next > e;
    const auto u = text::to_u32(std::string_view(t).substr(next, 4));
    const bool opener = text::is_upper(u[0]) || starts(t, next, "\xC2\xAB") || starts(t, next, "\xE2\x80\x94") ||
                        starts(t, next, "\xC2\xAC") || t[next] == '"' || is_digit(t[next]);
    if (spaced && opener) emit(e);
    i = e;
  }
  emit(t.size());
  return out;
}

// ---------------------------------------------------------------------------

namespace {

bool elision_prefix(const std::u32string& w) {
  static const std::vector<std::u32string> prefixes = {U"l", U"d", U"j", U"m", U"n", U"s", U"t", U"c",
                                                       U"qu", U"jusqu", U"lorsqu", U"puisqu", U"quoiqu"};
  std::u32string lw;
  for (char32_t c : w) lw += text::lower(c);
  return std::find(prefixes.begin(), prefixes.end(), lw) != prefixes.end();
}

bool punct_char(char32_t c) {
  switch (c) {
    case U'.': case U',': case U';': case U':': case U'!': case U'?': case U'…': case U'«': case U'»':
    case U'—': case U'–': case U'(': case U')': case U'"': case U'¬':
      return true;
    default:
      return false;
  }
}

}  // namespace

std::vector<Token> tokenize(const std::string& sentence) {
  const std::u32string u = text::to_u32(sentence);
  std::vector<Token> out;
  std::u32string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back({text::to_utf8(cur), false});
    cur.clear();
  };
  for (std::size_t i = 0; i < u.size(); ++i) {
    const char32_t c = u[i];
    const bool word_char = text::is_letter(c) || (c >= U'0' && c <= U'9');
    if (word_char) {
      cur += c;
      continue;
    }
    const bool next_letter = i + 1 < u.size() && text::is_letter(u[i + 1]);
    if ((c == U'\'' || c == U'’') && !cur.empty() && next_letter) {
      if (elision_prefix(cur)) {
        cur += U'\'';
        flush();
      } else {
        cur += U'\'';
      }
      continue;
    }
    flush();
    if (punct_char(c)) out.push_back({text::to_utf8(c), true});
  }
  flush();
  return out;
}

std::vector<std::string> word_tokens(const std::string& sentence) {
  std::vector<std::string> out;
  for (auto& t : tokenize(sentence))
    if (!t.punct) out.push_back(std::move(t.text));
  return out;
}

}  // namespace abtts::frontend
