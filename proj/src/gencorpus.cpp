#include "abtts/gencorpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include <nlohmann/json.hpp>

#include "abtts/dsp.hpp"
#include "abtts/error.hpp"
#include "abtts/text.hpp"

namespace fs = std::filesystem;

namespace abtts::gencorpus {

namespace {

constexpr int kRate = 24000;
constexpr int kHop24 = 300;
constexpr double kRampS = 0.002;

struct Word {
  const char* text;
  const char* pos;
  const char* phones;
};

// Single-pronunciation words without a liaison consonant.
const std::vector<Word>& vocabulary() {
  static const std::vector<Word> words = {
      {"la", "DET", "l a"},
      {"le", "DET", "l ə"},
      {"une", "DET", "y n"},
      {"cette", "DET", "s ɛ t"},
      {"maison", "NOUN", "m e z ɔ̃"},
      {"jardin", "NOUN", "ʒ a ʁ d ɛ̃"},
      {"porte", "NOUN", "p ɔ ʁ t"},
      {"route", "NOUN", "ʁ u t"},
      {"table", "NOUN", "t a b l"},
      {"lune", "NOUN", "l y n"},
      {"rivière", "NOUN", "ʁ i v j ɛ ʁ"},
      {"forêt", "NOUN", "f ɔ ʁ ɛ"},
      {"chat", "NOUN", "ʃ a"},
      {"chien", "NOUN", "ʃ j ɛ̃"},
      {"pain", "NOUN", "p ɛ̃"},
      {"matin", "NOUN", "m a t ɛ̃"},
      {"soir", "NOUN", "s w a ʁ"},
      {"ville", "NOUN", "v i l"},
      {"mer", "NOUN", "m ɛ ʁ"},
      {"fenêtre", "NOUN", "f ə n ɛ t ʁ"},
      {"livre", "NOUN", "l i v ʁ"},
      {"femme", "NOUN", "f a m"},
      {"lumière", "NOUN", "l y m j ɛ ʁ"},
      {"il", "PRON", "i l"},
      {"elle", "PRON", "ɛ l"},
      {"on", "PRON", "ɔ̃"},
      {"je", "PRON", "ʒ ə"},
      {"tu", "PRON", "t y"},
      {"regarde", "VERB", "ʁ ə g a ʁ d"},
      {"marche", "VERB", "m a ʁ ʃ"},
      {"chante", "VERB", "ʃ ɑ̃ t"},
      {"parle", "VERB", "p a ʁ l"},
      {"ouvre", "VERB", "u v ʁ"},
      {"ferme", "VERB", "f ɛ ʁ m"},
      {"aime", "VERB", "ɛ m"},
      {"dort", "VERB", "d ɔ ʁ"},
      {"rentre", "VERB", "ʁ ɑ̃ t ʁ"},
      {"cherche", "VERB", "ʃ ɛ ʁ ʃ"},
      {"petite", "ADJ", "p ə t i t"},
      {"belle", "ADJ", "b ɛ l"},
      {"noire", "ADJ", "n w a ʁ"},
      {"calme", "ADJ", "k a l m"},
      {"douce", "ADJ", "d u s"},
      {"doucement", "ADV", "d u s m ɑ̃"},
      {"toujours", "ADV", "t u ʒ u ʁ"},
      {"encore", "ADV", "ɑ̃ k ɔ ʁ"},
      {"ici", "ADV", "i s i"},
      {"loin", "ADV", "l w ɛ̃"},
      {"et", "CCONJ", "e"},
      {"mais", "CCONJ", "m ɛ"},
      {"dans", "ADP", "d ɑ̃"},
      {"sur", "ADP", "s y ʁ"},
      {"avec", "ADP", "a v ɛ k"},
      {"vers", "ADP", "v ɛ ʁ"},
      {"oui", "INTJ", "w i"},
      {"non", "INTJ", "n ɔ̃"},
      {"bonjour", "INTJ", "b ɔ̃ ʒ u ʁ"},
      {"merci", "INTJ", "m ɛ ʁ s i"},
      {"viens", "VERB", "v j ɛ̃"},
  };
  return words;
}

// Liaison words and homographs for the frontend sets only.
struct ExtraEntry {
  const char* text;
  const char* pos;
  const char* phones;
  const char* liaison;
};
const std::vector<ExtraEntry>& frontend_only_words() {
  static const std::vector<ExtraEntry> words = {
      {"les", "DET", "l e", "z"},     {"deux", "NUM", "d ø", "z"},    {"petit", "ADJ", "p ə t i", "t"},
      {"amis", "NOUN", "a m i", ""},  {"enfants", "NOUN", "ɑ̃ f ɑ̃", ""}, {"arbres", "NOUN", "a ʁ b ʁ", ""},
      {"chats", "NOUN", "ʃ a", ""},   {"livres", "NOUN", "l i v ʁ", ""},
      {"fils", "NOUN", "f i l", ""},  {"fils", "NOUN", "f i s", ""},   {"est", "AUX", "ɛ", "t"},
      {"est", "NOUN", "ɛ s t", ""},
  };
  return words;
}

std::vector<std::string> split_phones(const char* s) {
  std::vector<std::string> out;
  std::string cur;
  for (const char* p = s; *p; ++p) {
    if (*p == ' ') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += *p;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<const Word*> words_of(const std::string& pos) {
  std::vector<const Word*> out;
  for (const auto& w : vocabulary())
    if (pos == w.pos && std::string(w.text).find('-') == std::string::npos) out.push_back(&w);
  return out;
}

template <typename T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

std::string capitalize(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

/// Plain sentence from a few fixed templates, with its final mark.
std::string random_sentence(std::mt19937_64& rng, bool dialogue) {
  static const auto det = words_of("DET"), noun = words_of("NOUN"), pron = words_of("PRON"), verb = words_of("VERB"),
                    adj = words_of("ADJ"), adv = words_of("ADV"), adp = words_of("ADP"), intj = words_of("INTJ");
  std::vector<std::string> w;
  auto add = [&](const std::vector<const Word*>& c) { w.push_back(pick(c, rng)->text); };
  std::string mark = ".";
  const int t = std::uniform_int_distribution<int>(0, dialogue ? 2 : 3)(rng);
  if (dialogue) {
    add(intj);
    w.back() += ",";
    if (t == 0) {
      add(pron);
      add(verb);
      add(adv);
    } else if (t == 1) {
      add(verb);
      add(det);
      add(noun);
    } else {
      add(det);
      add(noun);
      add(adj);
    }
    mark = std::uniform_int_distribution<int>(0, 1)(rng) ? " !" : ".";
  } else if (t == 0) {
    add(pron);
    add(verb);
    add(det);
    add(noun);
  } else if (t == 1) {
    add(det);
    add(noun);
    add(verb);
    add(adv);
  } else if (t == 2) {
    add(pron);
    add(verb);
    w.back() += ",";
    add(adp);
    add(det);
    add(noun);
  } else {
    add(det);
    add(noun);
    add(adj);
    add(verb);
  }
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? " " : "") + w[i];
  return capitalize(s) + mark;
}

bool is_vowel_phone(const std::string& p) {
  const auto& all = frontend::french_phones();
  const auto it = std::find(all.begin(), all.end(), p);
  return it != all.end() && it - all.begin() < 16;
}

bool is_unvoiced(const std::string& p) {
  static const std::set<std::string> u = {"p", "t", "k", "f", "s", "ʃ"};
  return u.count(p) > 0;
}

struct PhoneSound {
  bool silent = false, voiced = true;
  double amplitude = 0.0;
  double formants[3] = {0, 0, 0};
  std::vector<double> partials;  // unvoiced only
};

PhoneSound phone_sound(const std::string& p, const frontend::Lexicon& lex) {
  PhoneSound s;
  if (lex.is_silence(p)) {
    s.silent = true;
    return s;
  }
  const std::uint64_t h = text::fnv1a(p);
  if (is_unvoiced(p)) {
    s.voiced = false;
    s.amplitude = 0.12;
    for (int j = 0; j < 6; ++j) s.partials.push_back(2500.0 + static_cast<double>((h >> (8 * j)) % 5000));
    return s;
  }
  s.amplitude = is_vowel_phone(p) ? 0.5 : 0.25;
  s.formants[0] = 250.0 + static_cast<double>(h % 600);
  s.formants[1] = 900.0 + static_cast<double>((h >> 12) % 1600);
  s.formants[2] = 2500.0 + static_cast<double>((h >> 24) % 1000);
  return s;
}

/// Harmonic amplitudes for one voiced phone at f0, summing to `amplitude`.
std::vector<double> harmonic_weights(const PhoneSound& s, double f0, double scale) {
  static const double gain[3] = {1.0, 0.6, 0.3}, bw[3] = {90.0, 120.0, 160.0};
  std::vector<double> w;
  for (int k = 1; k * f0 < 7600.0; ++k) {
    const double f = k * f0;
    double a = 0.02;
    for (int i = 0; i < 3; ++i) {
      const double z = (f - s.formants[i] * scale) / bw[i];
      a += gain[i] * std::exp(-0.5 * z * z);
    }
    w.push_back(a);
  }
  double sum = 0.0;
  for (double a : w) sum += a;
  for (double& a : w) a *= s.amplitude / sum;
  return w;
}

std::vector<int> natural_durations(const std::vector<std::string>& phones, const frontend::Lexicon& lex,
                                   std::mt19937_64& rng) {
  std::vector<int> d;
  for (std::size_t i = 0; i < phones.size(); ++i) {
    const std::string& p = phones[i];
    int lo = 4, hi = 7;
    if (lex.is_silence(p)) {
      lo = 3;
      hi = 6;
    } else if (is_vowel_phone(p)) {
      lo = 6;
      hi = 10;
    }
    d.push_back(std::uniform_int_distribution<int>(lo, hi)(rng));
  }
  return d;
}

/// Scales positive durations to sum exactly to `total` (largest remainder,
/// each at least 1).
std::vector<int> fit_durations(const std::vector<int>& natural, int total) {
  const int n = static_cast<int>(natural.size());
  if (total < n) throw DataError("utterance too short for its phones");
  double sum = 0.0;
  for (int d : natural) sum += d;
  std::vector<int> out(n);
  std::vector<std::pair<double, int>> rem;
  int used = 0;
  for (int i = 0; i < n; ++i) {
    const double exact = 1.0 + (total - n) * natural[i] / sum;
    out[i] = static_cast<int>(std::floor(exact));
    used += out[i];
    rem.emplace_back(exact - out[i], i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int k = 0; used < total; ++k, ++used) ++out[rem[k % n].second];
  return out;
}

std::vector<std::string> phonemize(const std::string& text, const frontend::Lexicon& lex) {
  const auto seq = frontend::g2p(text, lex, {});
  return seq.symbols();
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << s;
}

std::string conll_pos_sets(std::mt19937_64& rng, int n) {
  std::string out;
  for (int i = 0; i < n; ++i) {
    const std::string s = random_sentence(rng, i % 3 == 0);
    for (const auto& t : frontend::tokenize(s)) {
      if (t.punct) {
        out += t.text + "\tPUNCT\n";
        continue;
      }
      std::string pos = "X";
      for (const auto& w : vocabulary())
        if (text::to_lower(t.text) == w.text) pos = w.pos;
      out += t.text + "\t" + pos + "\n";
    }
    out += "\n";
  }
  return out;
}

std::string conll_liaison() {
  static const char* rows[][2] = {
      {"les amis dorment", "1"}, {"les chats dorment", "0"}, {"deux enfants chantent", "1"},
      {"deux livres tombent", "0"}, {"petit arbres verts", "1"}, {"petit chat noir", "0"},
      {"les arbres tombent", "1"}, {"deux chats chantent", "0"}, {"les enfants parlent", "1"},
      {"les livres tombent", "0"},
  };
  std::string out;
  for (const auto& r : rows) {
    const auto toks = frontend::word_tokens(r[0]);
    for (std::size_t i = 0; i < toks.size(); ++i) out += toks[i] + "\t" + (i == 0 ? r[1] : "_") + "\n";
    out += "\n";
  }
  return out;
}

struct HomographRow {
  const char* sentence;
  const char* word;
  int cls;
};
const std::vector<HomographRow>& homograph_rows() {
  static const std::vector<HomographRow> rows = {
      {"Elle coupe les fils de laine.", "fils", 0},  {"Des fils électriques pendent.", "fils", 0},
      {"Tire sur ces fils rouges.", "fils", 0},      {"Ses fils sont grands.", "fils", 1},
      {"Mes fils dorment encore.", "fils", 1},       {"Il est là.", "est", 0},
      {"Elle est partie hier.", "est", 0},           {"Le vent de l'est souffle.", "est", 1},
      {"Au nord et à l'est du village.", "est", 1},  {"Tout est calme ici.", "est", 0},
  };
  return rows;
}

}  // namespace

Voice speaker_voice(int index) {
  static const double f0[] = {110.0, 190.0, 145.0, 235.0, 95.0, 165.0};
  static const double scale[] = {1.0, 1.15, 0.92, 1.22, 0.88, 1.07};
  const int i = ((index % 6) + 6) % 6;
  return {f0[i] * (1.0 + 0.03 * (index / 6)), scale[i]};
}

corpus::SegmentationConfig GenCorpusConfig::toy_segmentation() {
  corpus::SegmentationConfig c;
  c.min_len = 1.0;
  c.max_len = 2.5;
  return c;
}

frontend::Lexicon corpus_lexicon() {
  frontend::Lexicon lex;
  for (const auto& w : vocabulary()) lex.add(w.text, {split_phones(w.phones), std::string(w.pos), std::nullopt});
  for (const auto& w : frontend_only_words()) {
    frontend::LexEntry e{split_phones(w.phones), std::string(w.pos), std::nullopt};
    if (*w.liaison) e.liaison = std::string(w.liaison);
    lex.add(w.text, std::move(e));
  }
  return lex;
}

std::vector<double> render(const std::vector<std::string>& phones, const std::vector<int>& durations, const Voice& voice,
                           std::mt19937_64& rng) {
  if (phones.size() != durations.size()) throw DataError("render: phones and durations differ in length");
  int total = 0;
  for (int d : durations) total += d;
  if (total < 1) return {};
  const std::size_t n = static_cast<std::size_t>(total - 1) * kHop24;
  std::vector<double> out(n, 0.0);
  const frontend::Lexicon lex = corpus_lexicon();
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  const int N = static_cast<int>(phones.size());
  double phase = 0.0;
  int frame = 0;
  const int ramp = static_cast<int>(kRampS * kRate);
  for (int i = 0; i < N; ++i) {
    const int a = frame, b = frame + durations[i];
    frame = b;
    const long s0 = std::max(0L, std::lround((a - 0.5) * kHop24));
    const long s1 = std::min(static_cast<long>(n), std::lround((b - 0.5) * kHop24));
    const PhoneSound snd = phone_sound(phones[i], lex);
    const double f0 = voice.f0 * (1.08 - 0.16 * i / std::max(1, N - 1)) * (1.0 + 0.04 * jitter(rng));
    if (snd.silent || s1 <= s0) continue;
    const std::vector<double> w = snd.voiced ? harmonic_weights(snd, f0, voice.formant_scale) : std::vector<double>{};
    for (long t = s0; t < s1; ++t) {
      const double env = std::min({1.0, static_cast<double>(t - s0 + 1) / ramp, static_cast<double>(s1 - t) / ramp});
      double v = 0.0;
      if (snd.voiced) {
        phase += 2.0 * std::numbers::pi * f0 / kRate;
        for (std::size_t k = 0; k < w.size(); ++k) v += w[k] * std::sin((k + 1) * phase);
      } else {
        for (double f : snd.partials) v += snd.amplitude / snd.partials.size() * std::sin(2.0 * std::numbers::pi * f * t / kRate);
      }
      out[t] = env * v;
    }
  }
  return out;
}

GenCorpusResult write_corpus(const std::string& out_dir, const GenCorpusConfig& cfg) {
  std::vector<int> per = cfg.per_speaker;
  if (per.empty()) {
    if (cfg.speakers < 1) throw ConfigError("gen-corpus needs at least one speaker");
    if (cfg.utterances < cfg.speakers) throw ConfigError("gen-corpus: fewer utterances than speakers");
    for (int s = 0; s < cfg.speakers; ++s) per.push_back(cfg.utterances / cfg.speakers + (s < cfg.utterances % cfg.speakers));
  }
  for (int c : per)
    if (c < 1) throw ConfigError("gen-corpus: every speaker needs at least one utterance");

  const fs::path root(out_dir);
  for (const char* d : {"chapters", "audio", "frontend", "text"}) fs::create_directories(root / d);
  const frontend::Lexicon lex = corpus_lexicon();
  lex.save((root / "lexicon.tsv").string());

  GenCorpusResult res;
  dsp::Alignment alignment;
  nlohmann::json index = {{"chapters", nlohmann::json::array()}, {"alignments", "alignments.tsv"}};
  constexpr double kHopS = static_cast<double>(kHop24) / kRate;

  for (int spk = 0; spk < static_cast<int>(per.size()); ++spk) {
    const std::string speaker = "spk" + std::to_string(spk);
    const std::string chapter_id = "ch" + std::to_string(spk);
    res.speakers.push_back(speaker);
    std::mt19937_64 rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(spk));

    // Grow the chapter one paragraph at a time until segmentation yields
    // exactly the requested number of utterances.
    corpus::ChapterScript chapter;
    chapter.chapter_id = chapter_id;
    std::vector<int> sentence_frames;
    std::vector<corpus::UtteranceRecord> records;
    int frame = 0;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 50 * per[spk] + 200) throw Error("gen-corpus could not reach the requested utterance count");
      corpus::Paragraph para;
      const int kind = std::uniform_int_distribution<int>(0, 3)(rng);
      std::vector<std::string> sentences;
      if (kind <= 1) {
        sentences.push_back(random_sentence(rng, false));
        if (kind == 1) sentences.push_back(random_sentence(rng, false));
      } else if (kind == 2) {
        sentences.push_back("« " + random_sentence(rng, true) + " »");
      } else {
        sentences.push_back("— " + random_sentence(rng, true));
      }
      for (const auto& s : sentences) {
        const auto ph = phonemize(s, lex);
        int frames = 0;
        for (int d : natural_durations(ph, lex, rng)) frames += d;
        para.spans.push_back({frame * kHopS, (frame + frames) * kHopS, s});
        frame += frames;
        para.text += (para.text.empty() ? "" : " ") + s;
      }
      chapter.paragraphs.push_back(std::move(para));
      records = corpus::segment_chapter(chapter, cfg.segmentation, speaker);
      const int count = static_cast<int>(records.size());
      const bool clean = !records.empty() && !records.back().oversize && !records.back().undersize;
      if (count == per[spk] && clean) break;
      if (count > per[spk]) {
        chapter.paragraphs.clear();
        frame = 0;
      }
    }

    // Phones and frames per utterance, then the audio.
    std::vector<double> audio(static_cast<std::size_t>(frame) * kHop24, 0.0);
    const Voice voice = speaker_voice(spk);
    for (const auto& r : records) {
      const int f0 = static_cast<int>(std::lround(r.start_s / kHopS));
      const int f1 = static_cast<int>(std::lround(r.end_s / kHopS));
      const int mel_frames = f1 - f0 + 1;  // centred framing adds one
      const auto phones = phonemize(r.text, lex);
      const auto dur = fit_durations(natural_durations(phones, lex, rng), mel_frames);
      const auto wave = render(phones, dur, voice, rng);
      std::copy(wave.begin(), wave.end(), audio.begin() + static_cast<std::ptrdiff_t>(f0) * kHop24);
      auto& rows = alignment[r.utt_id];
      int at = 0;
      for (std::size_t i = 0; i < phones.size(); ++i) {
        rows.push_back({phones[i], at, at + dur[i]});
        at += dur[i];
      }
      res.utt_ids.push_back(r.utt_id);
      res.total_frames += mel_frames;
    }
    const std::string script = "chapters/" + chapter_id + ".json", wav = "audio/" + chapter_id + ".wav";
    corpus::write_chapter((root / script).string(), chapter);
    dsp::write_wav((root / wav).string(), audio, kRate);
    index["chapters"].push_back({{"script", script}, {"audio", wav}, {"speaker", speaker}});
  }
  dsp::write_alignment((root / "alignments.tsv").string(), alignment);
  index["segmentation"] = {{"min_len", cfg.segmentation.min_len}, {"max_len", cfg.segmentation.max_len}};
  write_text(root / "corpus.json", index.dump(2) + "\n");

  std::mt19937_64 trng(cfg.seed + 77);
  write_text(root / "frontend" / "pos.conll", conll_pos_sets(trng, 60));
  write_text(root / "frontend" / "liaison.conll", conll_liaison());
  std::string poly, homographs;
  for (const auto& r : homograph_rows()) {
    for (const auto& t : frontend::word_tokens(r.sentence)) poly += t + "\t" + (t == r.word ? std::to_string(r.cls) : "_") + "\n";
    poly += "\n";
    const auto& e = (*lex.find(r.word))[r.cls].phones;
    homographs += nlohmann::json{{"sentence", r.sentence}, {"target_word", r.word}, {"expected_phones", e}}.dump() + "\n";
  }
  write_text(root / "frontend" / "polyphone.conll", poly);
  write_text(root / "frontend" / "homographs.jsonl", homographs);

  std::string input;
  for (int p = 0; p < 3; ++p) {
    input += random_sentence(trng, false) + " ";
    input += p == 1 ? "« " + random_sentence(trng, true) + " »" : random_sentence(trng, false);
    input += "\n\n";
  }
  input += "— " + random_sentence(trng, true) + "\n";
  write_text(root / "text" / "input.txt", input);

  const nlohmann::json config = {
      {"preset", "toy"},
      {"seed", cfg.seed},
      {"paths",
       {{"corpus", "."},
        {"lexicon", "lexicon.tsv"},
        {"features", "work/features"},
        {"checkpoints", "work/checkpoints"},
        {"output", "work/output"},
        {"frontend_data", "frontend"}}},
      {"segmentation", {{"min_len", cfg.segmentation.min_len}, {"max_len", cfg.segmentation.max_len}}},
  };
  write_text(root / "config.json", config.dump(2) + "\n");
  return res;
}

}  // namespace abtts::gencorpus
