#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "fixtures/nd_cases.hpp"
#include "fixtures/random_chapter.hpp"
#include "abtts/archive.hpp"
#include "abtts/corpus.hpp"
#include "abtts/error.hpp"

namespace abtts::corpus {
namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "abtts_corpus_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

ChapterScript chapter_from_lengths(const std::vector<double>& lens, const std::vector<bool>& eos = {}) {
  ChapterScript c;
  c.chapter_id = "c";
  Paragraph p;
  double t = 0;
  for (std::size_t i = 0; i < lens.size(); ++i) {
    const bool e = eos.empty() || eos[i];
    p.spans.push_back({t, t + lens[i], "s" + std::to_string(i) + (e ? "." : ",")});
    t += lens[i];
  }
  c.paragraphs.push_back(p);
  return c;
}

std::vector<double> durations(const std::vector<UtteranceRecord>& rs) {
  std::vector<double> d;
  for (const auto& r : rs) d.push_back(std::round(r.duration() * 1e6) / 1e6);
  return d;
}

// Plain left-to-right greedy merge, used where it always succeeds.
std::vector<double> naive_greedy(const std::vector<double>& lens, double lo, double hi) {
  std::vector<double> out;
  double acc = 0;
  for (std::size_t i = 0; i < lens.size(); ++i) {
    if (lens[i] > hi) {
      if (acc > 0) out.push_back(acc);
      out.push_back(lens[i]);
      acc = 0;
      continue;
    }
    if (acc > 0 && acc + lens[i] > hi) {
      out.push_back(acc);
      acc = 0;
    }
    acc += lens[i];
    if (acc >= lo) {
      out.push_back(acc);
      acc = 0;
    }
  }
  if (acc > 0) out.push_back(acc);
  return out;
}

TEST(Segmentation, DocumentedExamples) {
  const SegmentationConfig cfg;
  EXPECT_EQ(durations(segment_chapter(chapter_from_lengths({3, 4, 6}), cfg, "spk")), (std::vector<double>{7, 6}));
  EXPECT_EQ(durations(segment_chapter(chapter_from_lengths({12}), cfg, "spk")), (std::vector<double>{12}));
  const auto big = segment_chapter(chapter_from_lengths({25}), cfg, "spk");
  ASSERT_EQ(big.size(), 1u);
  EXPECT_TRUE(big[0].oversize);
  EXPECT_TRUE(segment_chapter(ChapterScript{"empty", {}}, cfg, "spk").empty());
}

TEST(Segmentation, MatchesNaiveGreedyWhenGreedySucceeds) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> len(5.0, 10.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> lens(3 + trial % 10);
    for (double& l : lens) l = std::round(len(rng) * 100) / 100;
    const auto expect = naive_greedy(lens, 5.0, 20.0);
    auto got = durations(segment_chapter(chapter_from_lengths(lens), {}, "s"));
    ASSERT_EQ(got.size(), expect.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-6);
  }
}

TEST(Segmentation, WaitsForSentenceEndOnceLongEnough) {
  // 3 + 3 reaches min_len on a comma; the group carries on to the full stop.
  const auto r = segment_chapter(chapter_from_lengths({3, 3, 3, 6}, {true, false, true, true}), {}, "s");
  EXPECT_EQ(durations(r), (std::vector<double>{9, 6}));
}

TEST(Segmentation, InfeasibleRunsAreMergedAndFlagged) {
  // 17 | 4 | 17 cannot be split into 5..20 s pieces without cutting a sentence.
  const auto r = segment_chapter(chapter_from_lengths({17, 4, 17}), {}, "s");
  double total = 0;
  for (const auto& u : r) {
    total += u.duration();
    if (!u.oversize) {
      EXPECT_GE(u.duration(), 5.0 - 1e-9);
      EXPECT_LE(u.duration(), 20.0 + 1e-9);
    }
  }
  EXPECT_NEAR(total, 38.0, 1e-9);
  const auto shorty = segment_chapter(chapter_from_lengths({2}), {}, "s");
  ASSERT_EQ(shorty.size(), 1u);
  EXPECT_TRUE(shorty[0].undersize);
}

TEST(Segmentation, PropertiesOnRandomChapters) {
  const SegmentationConfig cfg;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const auto ch = fixtures::random_chapter(seed);
    const auto rs = segment_chapter(ch, cfg, "spk");
    const auto& first = ch.paragraphs.front().spans.front();
    const auto& last = ch.paragraphs.back().spans.back();
    double total = 0;
    for (std::size_t i = 0; i < rs.size(); ++i) {
      total += rs[i].duration();
      if (!rs[i].oversize) {
        ASSERT_GE(rs[i].duration(), cfg.min_len - 1e-9) << seed;
        ASSERT_LE(rs[i].duration(), cfg.max_len + 1e-9) << seed;
      }
      EXPECT_FALSE(rs[i].undersize);
      if (i > 0) EXPECT_DOUBLE_EQ(rs[i].start_s, rs[i - 1].end_s);
      for (const auto& id : rs[i].context_prev_ids) EXPECT_EQ(id.rfind(ch.chapter_id + "_", 0), 0u);
      EXPECT_LE(rs[i].context_prev_ids.size(), 5u);
      EXPECT_LE(rs[i].context_next_ids.size(), 5u);
    }
    EXPECT_NEAR(total, last.end_s - first.start_s, 1e-6) << seed;
  }
}

TEST(Segmentation, ContextWindowAndLabels) {
  ChapterScript c;
  c.chapter_id = "x";
  double t = 0;
  for (int i = 0; i < 12; ++i) {
    Paragraph p;
    p.text = i % 2 ? "« Bonjour madame, comment allez-vous ? »" : "Il marcha longtemps.";
    p.spans.push_back({t, t + 6, p.text});
    t += 6;
    c.paragraphs.push_back(p);
  }
  const auto rs = segment_chapter(c, {}, "s");
  ASSERT_EQ(rs.size(), 12u);
  EXPECT_EQ(rs[7].context_prev_ids.size(), 5u);
  EXPECT_EQ(rs[7].context_prev_ids.front(), "x_0002");
  EXPECT_EQ(rs[7].context_next_ids.back(), "x_0011");
  EXPECT_EQ(rs[0].context_prev_ids.size(), 0u);
  EXPECT_EQ(rs[1].dominant_nd(), NdLabel::dialogue);
  EXPECT_EQ(rs[2].dominant_nd(), NdLabel::narration);
}

TEST(Segmentation, RejectsOverlap) {
  ChapterScript c;
  c.chapter_id = "o";
  c.paragraphs.push_back({"", {{0, 3, "a."}, {2, 5, "b."}}});
  try {
    segment_chapter(c, {}, "s");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("spans 0 and 1"), std::string::npos) << e.what();
  }
}

// ---------------------------------------------------------------------------

TEST(NarrationDialogue, HandBuiltCases) {
  for (const auto& c : fixtures::nd_cases()) {
    const auto r = classify_nd(c.paragraph);
    ASSERT_EQ(r.spans.size(), c.pieces.size()) << c.paragraph;
    for (std::size_t i = 0; i < r.spans.size(); ++i) {
      EXPECT_EQ(c.paragraph.substr(r.spans[i].begin, r.spans[i].end - r.spans[i].begin), c.pieces[i].second) << c.paragraph;
      EXPECT_EQ(r.spans[i].label == NdLabel::dialogue ? 'D' : 'N', c.pieces[i].first) << c.paragraph;
    }
    EXPECT_EQ(!r.warnings.empty(), c.warns) << c.paragraph;
  }
}

std::string random_paragraph(std::mt19937_64& rng) {
  static const std::vector<std::string> pieces = {"Il", " dit", " « ", " »", "¬", "— ", " Bonjour", " oui", ".", ",", " ", "\xC2\xA0",
                                                  "Ah", " madame", " «", "» ", "é"};
  std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1), len(0, 12);
  std::string s;
  for (std::size_t i = 0, n = len(rng); i < n; ++i) s += pieces[pick(rng)];
  return s;
}

TEST(NarrationDialogue, PartitionAndIdempotence) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::string p = random_paragraph(rng);
    const auto r = classify_nd(p);
    std::string joined;
    std::size_t cursor = 0;
    for (const auto& s : r.spans) {
      ASSERT_EQ(s.begin, cursor) << p;
      ASSERT_LT(s.begin, s.end);
      joined += p.substr(s.begin, s.end - s.begin);
      cursor = s.end;
    }
    ASSERT_EQ(joined, p);
    for (const auto& s : r.spans) {
      if (s.label != NdLabel::narration) continue;
      const std::string sub = p.substr(s.begin, s.end - s.begin);
      for (const auto& t : classify_nd(sub).spans) EXPECT_EQ(t.label, NdLabel::narration) << "'" << sub << "' from '" << p << "'";
    }
  }
}

TEST(NarrationDialogue, EosDetection) {
  EXPECT_TRUE(ends_with_eos("Oui."));
  EXPECT_TRUE(ends_with_eos("« Oui ! »"));
  EXPECT_TRUE(ends_with_eos("Eh bien…  "));
  EXPECT_FALSE(ends_with_eos("Oui,"));
  EXPECT_FALSE(ends_with_eos(""));
}

// ---------------------------------------------------------------------------

TEST(Enhancement, IdentityAndSpectralGate) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 0.3);
  std::vector<double> noise(8000);
  for (double& v : noise) v = n(rng);
  IdentityEnhancer id;
  EXPECT_EQ(id.process(noise, 16000), noise);
  SpectralGateEnhancer gate;
  auto rms = [](const std::vector<double>& x) {
    double s = 0;
    for (double v : x) s += v * v;
    return std::sqrt(s / x.size());
  };
  const auto y = gate.process(noise, 16000);
  ASSERT_EQ(y.size(), noise.size());
  EXPECT_LT(rms(y), rms(noise));
  const std::vector<double> silence(4000, 0.0);
  EXPECT_EQ(gate.process(silence, 16000), silence);
  EXPECT_EQ(id.process(silence, 16000), silence);
  EXPECT_THROW(make_enhancer("magic"), ConfigError);
}

// ---------------------------------------------------------------------------

TEST(Manifest, RoundTripAndErrors) {
  const auto recs = segment_chapter(fixtures::random_chapter(7), {}, "spk1");
  const auto path = temp_file("m.jsonl").string();
  write_manifest(path, recs);
  EXPECT_EQ(read_manifest(path), recs);
  write_manifest(path, {});
  EXPECT_TRUE(read_manifest(path).empty());
  {
    std::ofstream out(path);
    out << "{\"utt_id\":\"a\",\"chapter_id\":\"c\",\"speaker_id\":\"s\",\"text\":\"x\",\"nd_label\":[],\"start_s\":0,\"end_s\":1}\n";
    out << "{\"utt_id\":\"b\",\"chapter_id\":\"c\",\"speaker_id\":\"s\",\"nd_label\":[],\"start_s\":0,\"end_s\":1}\n";
  }
  try {
    read_manifest(path);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":2: missing field 'text'"), std::string::npos) << e.what();
  }
}

TEST(Manifest, ChapterJsonRoundTrip) {
  const auto ch = fixtures::random_chapter(9);
  const auto path = temp_file("ch.json").string();
  write_chapter(path, ch);
  const auto back = read_chapter(path);
  EXPECT_EQ(segment_chapter(back, {}, "s"), segment_chapter(ch, {}, "s"));
}

TEST(Archive, ExactRoundTrip) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> v(37);
  for (double& x : v) x = n(rng);
  nn::ParamList ps{{"a.w", Tensor::from({37}, v)}, {"b", Tensor::from({2, 2}, {1e-300, -0.0, 3.5, 1e300})}};
  const auto path = temp_file("x.mlna").string();
  save_archive(path, {{"kind", "test"}, {"n", 3}}, ps);
  const auto a = load_archive(path);
  EXPECT_EQ(a.meta["kind"], "test");
  ASSERT_TRUE(a.has("a.w"));
  EXPECT_EQ(a.at("a.w").values(), v);
  EXPECT_EQ(a.at("b").shape(), (Shape{2, 2}));
  EXPECT_EQ(a.at("b").values(), (std::vector<double>{1e-300, -0.0, 3.5, 1e300}));
  nn::ParamList dst{{"b", Tensor::zeros({2, 2})}};
  restore_params(a, dst);
  EXPECT_EQ(dst[0].second.values(), a.at("b").values());
  { std::ofstream(path) << "garbage"; }
  EXPECT_THROW(load_archive(path), DataError);
}

}  // namespace
}  // namespace abtts::corpus
