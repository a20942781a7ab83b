#include "abtts/corpus.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>

#include "abtts/dsp.hpp"
#include "abtts/error.hpp"
#include "abtts/text.hpp"

namespace abtts::corpus {

using nlohmann::json;

const char* nd_name(NdLabel l) { return l == NdLabel::dialogue ? "dialogue" : "narration"; }

NdLabel parse_nd(const std::string& s) {
  if (s == "dialogue") return NdLabel::dialogue;
  if (s == "narration") return NdLabel::narration;
  throw DataError("unknown narration/dialogue label '" + s + "'");
}

NdLabel UtteranceRecord::dominant_nd() const {
  const auto d = std::count(nd_label.begin(), nd_label.end(), NdLabel::dialogue);
  return d > 0 && 2 * d >= static_cast<long>(nd_label.size()) ? NdLabel::dialogue : NdLabel::narration;
}

// ---------------------------------------------------------------------------

namespace {

const std::string kOpenQuote = "\xC2\xAB";   // «
const std::string kCloseQuote = "\xC2\xBB";  // »
const std::string kNotSign = "\xC2\xAC";     // ¬
const std::string kEmDash = "\xE2\x80\x94";  // —

bool at(const std::string& s, std::size_t i, const std::string& tok) { return s.compare(i, tok.size(), tok) == 0; }

void push_span(std::vector<NdSpan>& spans, std::size_t b, std::size_t e, NdLabel l) {
  if (b >= e) return;
  if (!spans.empty() && spans.back().label == l && spans.back().end == b) {
    spans.back().end = e;
    return;
  }
  spans.push_back({b, e, l});
}

}  // namespace

NdResult classify_nd(const std::string& p, const SegmentationConfig& cfg) {
  NdResult r;
  const std::size_t n = p.size();
  const std::size_t first = text::skip_space(p, 0);
  if (first < n && (at(p, first, kNotSign) || at(p, first, kEmDash))) {
    push_span(r.spans, 0, first, NdLabel::narration);
    push_span(r.spans, first, n, NdLabel::dialogue);
    return r;
  }
  std::size_t cursor = 0;  // start of text not yet assigned
  std::size_t i = 0;
  while (i < n) {
    if (at(p, i, kCloseQuote)) {
      r.warnings.push_back("closing \xC2\xBB without opening mark at byte " + std::to_string(i));
      i += kCloseQuote.size();
      continue;
    }
    if (!at(p, i, kOpenQuote)) {
      ++i;
      continue;
    }
    const std::size_t content = i + kOpenQuote.size();
    std::size_t j = content;
    int depth = 1;
    while (j < n && depth > 0) {
      if (at(p, j, kOpenQuote)) {
        ++depth;
        j += kOpenQuote.size();
      } else if (at(p, j, kCloseQuote)) {
        if (--depth == 0) break;
        j += kCloseQuote.size();
      } else {
        ++j;
      }
    }
    const bool closed = depth == 0;
    if (!closed) r.warnings.push_back("unbalanced \xC2\xAB at byte " + std::to_string(i) + "; dialogue runs to paragraph end");
    const std::size_t inner_end = closed ? j : n;
    const auto [a, b] = text::trim_range(p, content, inner_end);
    if (text::codepoint_count(p.substr(a, b - a)) >= static_cast<std::size_t>(cfg.min_dialogue_chars)) {
      push_span(r.spans, cursor, a, NdLabel::narration);
      push_span(r.spans, a, b, NdLabel::dialogue);
      cursor = b;
    }
    i = closed ? j + kCloseQuote.size() : n;
  }
  push_span(r.spans, cursor, n, NdLabel::narration);
  for (const auto& w : r.warnings) spdlog::warn("classify_nd: {}", w);
  return r;
}

namespace {

// Non-space code points of [b, e) that fall inside dialogue spans, and in total.
std::pair<std::size_t, std::size_t> dialogue_chars(const std::string& p, const std::vector<NdSpan>& spans, std::size_t b,
                                                   std::size_t e) {
  std::size_t dia = 0, all = 0;
  for (const auto& s : spans) {
    const std::size_t lo = std::max(b, s.begin), hi = std::min(e, s.end);
    if (lo >= hi) continue;
    const std::size_t c = text::visible_count(p.substr(lo, hi - lo));
    all += c;
    if (s.label == NdLabel::dialogue) dia += c;
  }
  return {dia, all};
}

}  // namespace

NdLabel sentence_label(const std::string& t, const SegmentationConfig& cfg) {
  const auto r = classify_nd(t, cfg);
  const auto [dia, all] = dialogue_chars(t, r.spans, 0, t.size());
  return dia > 0 && 2 * dia >= all ? NdLabel::dialogue : NdLabel::narration;
}

bool ends_with_eos(const std::string& t) {
  std::size_t e = t.size();
  for (;;) {
    const std::size_t before = e;
    e = text::trim_range(t, 0, e).second;
    if (e >= kCloseQuote.size() && t.compare(e - kCloseQuote.size(), kCloseQuote.size(), kCloseQuote) == 0)
      e -= kCloseQuote.size();
    else if (e > 0 && (t[e - 1] == '"' || t[e - 1] == '\'' || t[e - 1] == ')'))
      --e;
    if (e == before) break;
  }
  if (e == 0) return false;
  const char c = t[e - 1];
  if (c == '.' || c == '!' || c == '?') return true;
  return e >= 3 && t.compare(e - 3, 3, "\xE2\x80\xA6") == 0;
}

// ---------------------------------------------------------------------------

namespace {

struct Unit {
  double start = 0.0;
  double len = 0.0;  // up to the next span's start, so gaps are never dropped
  bool eos = false;
  std::string text;
  NdLabel label = NdLabel::narration;
};

constexpr double kEps = 1e-9;
constexpr long kUndersizeCost = 1'000'000;

}  // namespace

std::vector<UtteranceRecord> segment_chapter(const ChapterScript& chapter, const SegmentationConfig& cfg,
                                             const std::string& speaker_id) {
  if (!(cfg.min_len > 0 && cfg.min_len < cfg.max_len))
    throw ConfigError("segmentation needs 0 < min_len < max_len");
  std::vector<Unit> units;
  const SentenceSpan* prev = nullptr;
  std::size_t index = 0;
  for (const auto& para : chapter.paragraphs) {
    const auto nd = classify_nd(para.text, cfg);
    std::size_t search = 0;
    for (const auto& span : para.spans) {
      if (!(span.end_s > span.start_s))
        throw DataError(chapter.chapter_id + ": span " + std::to_string(index) + " has end_s <= start_s");
      if (prev && span.start_s < prev->end_s - kEps)
        throw DataError(chapter.chapter_id + ": spans " + std::to_string(index - 1) + " and " + std::to_string(index) +
                        " overlap or are out of order");
      Unit u;
      u.start = span.start_s;
      u.text = span.text;
      u.eos = ends_with_eos(span.text);
      const std::size_t pos = span.text.empty() ? std::string::npos : para.text.find(span.text, search);
      if (pos != std::string::npos) {
        const auto [dia, all] = dialogue_chars(para.text, nd.spans, pos, pos + span.text.size());
        u.label = dia > 0 && 2 * dia >= all ? NdLabel::dialogue : NdLabel::narration;
        search = pos + span.text.size();
      } else {
        u.label = sentence_label(span.text, cfg);
      }
      if (!units.empty()) units.back().len = span.start_s - units.back().start;
      u.len = span.end_s - span.start_s;
      units.push_back(std::move(u));
      prev = &span;
      ++index;
    }
  }
  const std::size_t n = units.size();
  if (n == 0) return {};

  // Group cost: 0 for an in-range group or a lone over-long span, 1 for a
  // merged group over max_len, a large penalty for a group under min_len.
  auto cost = [&](double sum, std::size_t count) -> long {
    if (sum > cfg.max_len + kEps) return count == 1 ? 0 : 1;
    if (sum < cfg.min_len - kEps) return kUndersizeCost;
    return 0;
  };
  // best[i]: cheapest partition of units[i..n).
  std::vector<long> best(n + 1, std::numeric_limits<long>::max());
  best[n] = 0;
  for (std::size_t i = n; i-- > 0;) {
    double sum = 0.0;
    for (std::size_t e = i; e < n; ++e) {
      sum += units[e].len;
      best[i] = std::min(best[i], cost(sum, e - i + 1) + best[e + 1]);
    }
  }

  // Walk forward greedily, taking the first sentence-final close that keeps
  // the remainder optimal; otherwise the longest in-range group; otherwise the
  // earliest group that keeps the optimum.
  std::vector<std::pair<std::size_t, std::size_t>> groups;
  for (std::size_t s = 0; s < n;) {
    std::size_t chosen = n;
    double sum = 0.0;
    std::size_t longest = n, earliest = n;
    for (std::size_t e = s; e < n; ++e) {
      sum += units[e].len;
      const long c = cost(sum, e - s + 1);
      if (c + best[e + 1] != best[s]) continue;
      if (c == 0 && (units[e].eos || e + 1 == n)) {
        chosen = e;
        break;
      }
      if (c == 0) longest = e;
      if (earliest == n) earliest = e;
    }
    if (chosen == n) chosen = longest != n ? longest : earliest;
    groups.emplace_back(s, chosen);
    s = chosen + 1;
  }

  std::vector<UtteranceRecord> out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto [s, e] = groups[g];
    UtteranceRecord r;
    char id[32];
    std::snprintf(id, sizeof id, "_%04zu", g);
    r.utt_id = chapter.chapter_id + id;
    r.chapter_id = chapter.chapter_id;
    r.speaker_id = speaker_id;
    r.start_s = units[s].start;
    r.end_s = e + 1 < n ? units[e + 1].start : units[e].start + units[e].len;
    for (std::size_t i = s; i <= e; ++i) {
      if (i > s) r.text += ' ';
      r.text += units[i].text;
      r.nd_label.push_back(units[i].label);
    }
    const double d = r.duration();
    r.oversize = d > cfg.max_len + kEps;
    r.undersize = d < cfg.min_len - kEps;
    out.push_back(std::move(r));
  }
  for (std::size_t g = 0; g < out.size(); ++g) {
    const std::size_t w = static_cast<std::size_t>(std::max(0, cfg.context_window));
    for (std::size_t k = g > w ? g - w : 0; k < g; ++k) out[g].context_prev_ids.push_back(out[k].utt_id);
    for (std::size_t k = g + 1; k < out.size() && k <= g + w; ++k) out[g].context_next_ids.push_back(out[k].utt_id);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> SpectralGateEnhancer::process(std::span<const double> wave, int sample_rate) const {
  if (wave.size() < 2) return {wave.begin(), wave.end()};
  dsp::MelConfig cfg;
  cfg.sample_rate = sample_rate;
  cfg.n_fft = 512;
  cfg.hop = 128;
  auto spec = dsp::stft(wave, cfg);
  for (auto& c : spec)
    if (std::abs(c) < threshold_) c = 0.0;
  return dsp::istft(spec, dsp::frame_count(static_cast<int>(wave.size()), cfg), static_cast<int>(wave.size()), cfg);
}

std::unique_ptr<Enhancer> make_enhancer(const std::string& name) {
  if (name == "identity" || name.empty()) return std::make_unique<IdentityEnhancer>();
  if (name == "spectral_gate") return std::make_unique<SpectralGateEnhancer>();
  throw ConfigError("unknown enhancer '" + name + "' (expected identity or spectral_gate)");
}

// ---------------------------------------------------------------------------

namespace {

json record_to_json(const UtteranceRecord& r) {
  json j;
  j["utt_id"] = r.utt_id;
  j["chapter_id"] = r.chapter_id;
  j["speaker_id"] = r.speaker_id;
  j["text"] = r.text;
  j["nd_label"] = json::array();
  for (auto l : r.nd_label) j["nd_label"].push_back(nd_name(l));
  j["start_s"] = r.start_s;
  j["end_s"] = r.end_s;
  j["audio_path"] = r.audio_path;
  j["context_prev_ids"] = r.context_prev_ids;
  j["context_next_ids"] = r.context_next_ids;
  if (r.oversize) j["oversize"] = true;
  if (r.undersize) j["undersize"] = true;
  return j;
}

template <typename T>
T field(const json& j, const char* name, const std::string& where) {
  auto it = j.find(name);
  if (it == j.end()) throw DataError(where + ": missing field '" + name + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw DataError(where + ": field '" + name + "' has the wrong type");
  }
}

}  // namespace

void write_manifest(const std::string& path, const std::vector<UtteranceRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path);
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

std::vector<UtteranceRecord> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path);
  std::vector<UtteranceRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(where + ": invalid JSON: " + e.what());
    }
    if (!j.is_object()) throw DataError(where + ": expected a JSON object");
    UtteranceRecord r;
    r.utt_id = field<std::string>(j, "utt_id", where);
    r.chapter_id = field<std::string>(j, "chapter_id", where);
    r.speaker_id = field<std::string>(j, "speaker_id", where);
    r.text = field<std::string>(j, "text", where);
    for (const auto& s : field<std::vector<std::string>>(j, "nd_label", where)) {
      try {
        r.nd_label.push_back(parse_nd(s));
      } catch (const DataError& e) {
        throw DataError(where + ": " + e.what());
      }
    }
    r.start_s = field<double>(j, "start_s", where);
    r.end_s = field<double>(j, "end_s", where);
    r.audio_path = j.value("audio_path", "");
    r.context_prev_ids = j.value("context_prev_ids", std::vector<std::string>{});
    r.context_next_ids = j.value("context_next_ids", std::vector<std::string>{});
    r.oversize = j.value("oversize", false);
    r.undersize = j.value("undersize", false);
    out.push_back(std::move(r));
  }
  return out;
}

ChapterScript read_chapter(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open chapter script " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path + ": invalid JSON: " + e.what());
  }
  ChapterScript c;
  c.chapter_id = field<std::string>(j, "chapter_id", path);
  for (const auto& pj : field<json>(j, "paragraphs", path)) {
    Paragraph p;
    p.text = field<std::string>(pj, "text", path);
    for (const auto& sj : field<json>(pj, "sentence_spans", path))
      p.spans.push_back({field<double>(sj, "start_s", path), field<double>(sj, "end_s", path), field<std::string>(sj, "text", path)});
    c.paragraphs.push_back(std::move(p));
  }
  return c;
}

void write_chapter(const std::string& path, const ChapterScript& c) {
  json j;
  j["chapter_id"] = c.chapter_id;
  j["paragraphs"] = json::array();
  for (const auto& p : c.paragraphs) {
    json pj;
    pj["text"] = p.text;
    pj["sentence_spans"] = json::array();
    for (const auto& s : p.spans) pj["sentence_spans"].push_back({{"start_s", s.start_s}, {"end_s", s.end_s}, {"text", s.text}});
    j["paragraphs"].push_back(pj);
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << '\n';
}

}  // namespace abtts::corpus
