#include <algorithm>
#include <fstream>
#include <sstream>

#include "abtts/error.hpp"
#include "abtts/frontend.hpp"
#include "abtts/text.hpp"

namespace abtts::frontend {

const std::vector<std::string>& pos_tags() {
  static const std::vector<std::string> tags = {"ADJ", "ADP", "ADV",  "AUX",   "CCONJ", "DET", "INTJ", "NOUN", "NUM",
                                                "PART", "PRON", "PROPN", "PUNCT", "SCONJ", "SYM", "VERB", "X"};
  return tags;
}

int pos_index(const std::string& tag) {
  const auto& t = pos_tags();
  auto it = std::find(t.begin(), t.end(), tag);
  return it == t.end() ? -1 : static_cast<int>(it - t.begin());
}

namespace ph {
const std::string E_NASAL = "\xC9\x9B\xCC\x83";  // ɛ̃
const std::string A_NASAL = "\xC9\x91\xCC\x83";  // ɑ̃
const std::string O_NASAL = "\xC9\x94\xCC\x83";  // ɔ̃
const std::string OE_NASAL = "\xC5\x93\xCC\x83"; // œ̃
const std::string SCHWA = "\xC9\x99";            // ə
const std::string OPEN_E = "\xC9\x9B";           // ɛ
const std::string OPEN_O = "\xC9\x94";           // ɔ
const std::string OE = "\xC5\x93";               // œ
const std::string EU = "\xC3\xB8";               // ø
const std::string BACK_A = "\xC9\x91";           // ɑ
const std::string R = "\xCA\x81";                // ʁ
const std::string SH = "\xCA\x83";               // ʃ
const std::string ZH = "\xCA\x92";               // ʒ
const std::string GN = "\xC9\xB2";               // ɲ
const std::string NG = "\xC5\x8B";               // ŋ
const std::string TURNED_H = "\xC9\xA5";         // ɥ
}  // namespace ph

const std::vector<std::string>& french_phones() {
  static const std::vector<std::string> phones = {
      "i", "e", ph::OPEN_E, "a", ph::BACK_A, ph::OPEN_O, "o", "u", "y", ph::EU, ph::OE, ph::SCHWA,
      ph::E_NASAL, ph::A_NASAL, ph::O_NASAL, ph::OE_NASAL, "j", "w", ph::TURNED_H,
      "p", "b", "t", "d", "k", "g", "f", "v", "s", "z", ph::SH, ph::ZH, "m", "n", ph::GN, ph::NG, "l", ph::R};
  return phones;
}

// ---------------------------------------------------------------------------

Lexicon::Lexicon() {
  inventory_.insert(french_phones().begin(), french_phones().end());
  for (const std::string s : {"sil", "sp"}) {
    inventory_.insert(s);
    silence_.insert(s);
  }
}

void Lexicon::declare_phone(const std::string& phone) { inventory_.insert(phone); }

void Lexicon::declare_silence(const std::string& phone) {
  inventory_.insert(phone);
  silence_.insert(phone);
}

void Lexicon::add(const std::string& word, LexEntry entry) {
  for (const auto& p : entry.phones)
    if (!in_inventory(p)) throw DataError("phone '" + p + "' of '" + word + "' is not in the phone inventory");
  if (entry.liaison && *entry.liaison != "n" && *entry.liaison != "t" && *entry.liaison != "z")
    throw DataError("liaison final of '" + word + "' must be n, t or z");
  if (entry.pos && pos_index(*entry.pos) < 0) throw DataError("unknown POS tag '" + *entry.pos + "' for '" + word + "'");
  auto& list = entries_[text::to_lower(word)];
  if (std::find(list.begin(), list.end(), entry) != list.end()) throw DataError("duplicate lexicon entry for '" + word + "'");
  list.push_back(std::move(entry));
}

const std::vector<LexEntry>* Lexicon::find(const std::string& word) const {
  auto it = entries_.find(text::to_lower(word));
  return it == entries_.end() ? nullptr : &it->second;
}

bool Lexicon::is_polyphone(const std::string& word) const {
  const auto* e = find(word);
  if (!e) return false;
  for (std::size_t i = 1; i < e->size(); ++i)
    if ((*e)[i].phones != (*e)[0].phones) return true;
  return false;
}

bool Lexicon::has_liaison(const std::string& word) const {
  const auto* e = find(word);
  if (!e) return false;
  return std::any_of(e->begin(), e->end(), [](const LexEntry& x) { return x.liaison.has_value(); });
}

std::vector<std::string> Lexicon::phone_list() const { return {inventory_.begin(), inventory_.end()}; }

int Lexicon::phone_id(const std::string& phone) const {
  auto it = inventory_.find(phone);
  if (it == inventory_.end()) throw DataError("phone '" + phone + "' is not in the inventory");
  return static_cast<int>(std::distance(inventory_.begin(), it));
}

namespace {

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> f;
  std::string cur;
  std::stringstream ss(line);
  while (std::getline(ss, cur, sep)) f.push_back(cur);
  if (!line.empty() && line.back() == sep) f.emplace_back();
  return f;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

}  // namespace

Lexicon Lexicon::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open lexicon " + path);
  Lexicon lex;
  std::string line;
  int lineno = 0;
  bool silence_declared = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    if (line[0] == '#') {
      const auto f = split_fields(line, '\t');
      if (f[0] == "#phones" && f.size() > 1) {
        for (const auto& p : split_ws(f[1])) lex.declare_phone(p);
      } else if (f[0] == "#silence" && f.size() > 1) {
        const auto list = split_ws(f[1]);
        if (list.empty()) throw DataError(where + ": empty #silence directive");
        if (!silence_declared) {
          for (const std::string s : {"sil", "sp"}) lex.silence_.erase(s);
          silence_declared = true;
        }
        for (const auto& p : list) lex.declare_silence(p);
        lex.edge_ = list[0];
        lex.pause_ = list.size() > 1 ? list[1] : list[0];
      }
      continue;
    }
    const auto f = split_fields(line, '\t');
    if (f.size() < 3 || f.size() > 4) throw DataError(where + ": expected word, pos, phones and optional liaison final");
    LexEntry e;
    e.phones = split_ws(f[2]);
    if (e.phones.empty()) throw DataError(where + ": entry without phones");
    if (!f[1].empty() && f[1] != "_") e.pos = f[1];
    if (f.size() == 4 && !f[3].empty() && f[3] != "_") e.liaison = f[3];
    try {
      lex.add(f[0], std::move(e));
    } catch (const DataError& err) {
      throw DataError(where + ": " + err.what());
    }
  }
  return lex;
}

void Lexicon::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write lexicon " + path);
  out << "#silence\t" << edge_;
  if (pause_ != edge_) out << ' ' << pause_;
  for (const auto& s : silence_)
    if (s != edge_ && s != pause_) out << ' ' << s;
  out << '\n';
  std::vector<std::string> extra;
  const auto& builtin = french_phones();
  for (const auto& p : inventory_)
    if (!silence_.count(p) && std::find(builtin.begin(), builtin.end(), p) == builtin.end()) extra.push_back(p);
  if (!extra.empty()) {
    out << "#phones\t";
    for (std::size_t i = 0; i < extra.size(); ++i) out << (i ? " " : "") << extra[i];
    out << '\n';
  }
  for (const auto& [word, list] : entries_)
    for (const auto& e : list) {
      out << word << '\t' << e.pos.value_or("") << '\t';
      for (std::size_t i = 0; i < e.phones.size(); ++i) out << (i ? " " : "") << e.phones[i];
      out << '\t' << e.liaison.value_or("") << '\n';
    }
}

// ---------------------------------------------------------------------------

namespace {

bool front_vowel(char32_t c) { return c == U'e' || c == U'i' || c == U'y' || c == U'é' || c == U'è' || c == U'ê' || c == U'ë'; }

bool is_vowel(char32_t c) { return text::is_vowel_letter(c); }

}  // namespace

std::vector<std::string> letter_to_sound(const std::string& word) {
  std::u32string w;
  for (char32_t c : text::to_u32(word))
    if (text::is_letter(c)) w += text::lower(c);
  std::vector<std::string> out;
  if (w.empty()) return out;

  // Silent word endings.
  auto ends = [&](const std::u32string& suf) { return w.size() >= suf.size() && w.compare(w.size() - suf.size(), suf.size(), suf) == 0; };
  if (w.size() > 2 && (ends(U"er") || ends(U"ez"))) w.replace(w.size() - 2, 2, U"é");
  if (w.size() > 2 && (w.back() == U's' || w.back() == U'x')) w.pop_back();
  if (w.size() > 2 && (w.back() == U't' || w.back() == U'd' || w.back() == U'p' || w.back() == U'z')) w.pop_back();
  if (w.size() > 2 && w.back() == U'e') w.pop_back();

  const std::size_t n = w.size();
  auto at = [&](std::size_t i, const std::u32string& s) { return i + s.size() <= n && w.compare(i, s.size(), s) == 0; };
  auto ch = [&](std::size_t i) -> char32_t { return i < n ? w[i] : 0; };
  // A nasal vowel needs n/m followed by a consonant or the word end.
  auto nasal_close = [&](std::size_t i) { return i >= n || (!is_vowel(w[i]) && w[i] != U'n' && w[i] != U'm'); };

  std::size_t i = 0;
  while (i < n) {
    const char32_t c = w[i];
    auto emit = [&](std::initializer_list<std::string> ps, std::size_t len) {
      for (const auto& p : ps) out.push_back(p);
      i += len;
    };
    if (at(i, U"eau")) { emit({"o"}, 3); continue; }
    if (at(i, U"oin") && nasal_close(i + 3)) { emit({"w", ph::E_NASAL}, 3); continue; }
    if (at(i, U"ain") && nasal_close(i + 3)) { emit({ph::E_NASAL}, 3); continue; }
    if (at(i, U"ein") && nasal_close(i + 3)) { emit({ph::E_NASAL}, 3); continue; }
    if (at(i, U"œu")) { emit({ph::EU}, 2); continue; }
    if (at(i, U"au")) { emit({"o"}, 2); continue; }
    if (at(i, U"ou") || at(i, U"où") || at(i, U"oû")) { emit({"u"}, 2); continue; }
    if (at(i, U"oi")) { emit({"w", "a"}, 2); continue; }
    if (at(i, U"ai") || at(i, U"ei") || at(i, U"aî")) { emit({ph::OPEN_E}, 2); continue; }
    if (at(i, U"eu")) { emit({ph::EU}, 2); continue; }
    if ((at(i, U"an") || at(i, U"am") || at(i, U"en") || at(i, U"em")) && nasal_close(i + 2)) { emit({ph::A_NASAL}, 2); continue; }
    if ((at(i, U"on") || at(i, U"om")) && nasal_close(i + 2)) { emit({ph::O_NASAL}, 2); continue; }
    if ((at(i, U"in") || at(i, U"im") || at(i, U"yn") || at(i, U"ym")) && nasal_close(i + 2)) { emit({ph::E_NASAL}, 2); continue; }
    if ((at(i, U"un") || at(i, U"um")) && nasal_close(i + 2)) { emit({ph::OE_NASAL}, 2); continue; }
    if (at(i, U"ill") && i > 0 && is_vowel(w[i - 1])) { emit({"j"}, 3); continue; }
    if (at(i, U"ch")) { emit({ph::SH}, 2); continue; }
    if (at(i, U"gn")) { emit({ph::GN}, 2); continue; }
    if (at(i, U"ph")) { emit({"f"}, 2); continue; }
    if (at(i, U"th")) { emit({"t"}, 2); continue; }
    if (at(i, U"qu")) { emit({"k"}, 2); continue; }
    if (at(i, U"gu") && front_vowel(ch(i + 2))) { emit({"g"}, 2); continue; }
    if (!is_vowel(c) && ch(i + 1) == c && c != U'c') { ++i; continue; }  // doubled consonant
    switch (c) {
      case U'c': emit({front_vowel(ch(i + 1)) ? "s" : "k"}, 1); break;
      case U'ç': emit({"s"}, 1); break;
      case U'g': emit({front_vowel(ch(i + 1)) ? ph::ZH : "g"}, 1); break;
      case U's': emit({i > 0 && is_vowel(w[i - 1]) && is_vowel(ch(i + 1)) ? "z" : "s"}, 1); break;
      case U'x': emit({"k", "s"}, 1); break;
      case U'j': emit({ph::ZH}, 1); break;
      case U'r': emit({ph::R}, 1); break;
      case U'h': ++i; break;
      case U'q': case U'k': emit({"k"}, 1); break;
      case U'w': emit({"w"}, 1); break;
      case U'y': case U'i': case U'î': case U'ï': emit({"i"}, 1); break;
      case U'é': emit({"e"}, 1); break;
      case U'è': case U'ê': case U'ë': emit({ph::OPEN_E}, 1); break;
      case U'e': {
        const bool closed = (i + 1 < n && !is_vowel(w[i + 1])) && (i + 2 >= n || !is_vowel(w[i + 2]));
        emit({closed ? ph::OPEN_E : ph::SCHWA}, 1);
        break;
      }
      case U'a': case U'à': case U'â': case U'ä': emit({"a"}, 1); break;
      case U'o': case U'ö': emit({ph::OPEN_O}, 1); break;
      case U'ô': emit({"o"}, 1); break;
      case U'u': case U'û': case U'ù': case U'ü': emit({"y"}, 1); break;
      case U'œ': case U'æ': emit({ph::EU}, 1); break;
      case U'ÿ': emit({"i"}, 1); break;
      case U'b': case U'd': case U'f': case U'l': case U'm': case U'n': case U'p': case U't': case U'v': case U'z': {
        std::string s(1, static_cast<char>(c));
        emit({s}, 1);
        break;
      }
      default: ++i; break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> PhoneSequence::symbols() const {
  std::vector<std::string> out;
  for (const auto& p : phones) out.push_back(p.symbol);
  return out;
}

std::vector<std::string> PhoneSequence::word_phones(int w) const {
  std::vector<std::string> out;
  for (const auto& p : phones)
    if (p.word_index == w && !p.silence) out.push_back(p.symbol);
  return out;
}

namespace {

const LexEntry& choose_entry(const std::vector<LexEntry>& entries, const TokenAnnotation* ann) {
  if (ann && ann->polyphone_class && *ann->polyphone_class >= 0 &&
      static_cast<std::size_t>(*ann->polyphone_class) < entries.size())
    return entries[*ann->polyphone_class];
  if (ann)
    for (const auto& e : entries)
      if (e.pos && *e.pos == ann->pos) return e;
  return entries.front();
}

}  // namespace

PhoneSequence g2p(const std::string& sentence, const Lexicon& lexicon, const std::vector<TokenAnnotation>& annotations) {
  PhoneSequence seq;
  const auto tokens = tokenize(sentence);
  auto push = [&](const std::string& s, int w, bool silence) { seq.phones.push_back({s, w, silence}); };
  push(lexicon.edge_phone(), 0, true);
  int word = -1;
  bool pending_pause = false;
  // Liaison is only voiced when the next token is a word opening on a vowel
  // or a mute h.
  auto vowel_follows = [&](std::size_t k) {
    if (k + 1 >= tokens.size() || tokens[k + 1].punct) return false;
    const auto u = text::to_u32(tokens[k + 1].text);
    return !u.empty() && (text::is_vowel_letter(u[0]) || text::lower(u[0]) == U'h');
  };
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    const auto& tok = tokens[k];
    if (tok.punct) {
      seq.punctuation.emplace_back(static_cast<int>(seq.phones.size()), tok.text);
      if (word >= 0) pending_pause = true;
      continue;
    }
    ++word;
    if (pending_pause && !seq.phones.back().silence) push(lexicon.pause_phone(), word - 1, true);
    pending_pause = false;
    seq.word_boundaries.push_back(static_cast<int>(seq.phones.size()));
    const TokenAnnotation* ann = static_cast<std::size_t>(word) < annotations.size() ? &annotations[word] : nullptr;
    if (const auto* entries = lexicon.find(tok.text)) {
      const LexEntry& e = choose_entry(*entries, ann);
      for (const auto& p : e.phones) push(p, word, lexicon.is_silence(p));
      if (ann && ann->liaison && e.liaison && vowel_follows(k)) push(*e.liaison, word, false);
    } else {
      for (const auto& p : letter_to_sound(tok.text)) push(p, word, false);
    }
  }
  push(lexicon.edge_phone(), std::max(word, 0), true);
  return seq;
}

}  // namespace abtts::frontend
