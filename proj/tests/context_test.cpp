#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "abtts/context.hpp"
#include "abtts/error.hpp"

namespace abtts::context {
namespace {

using corpus::NdLabel;
using frontend::TokenAnnotation;

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "abtts_context_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

/// Context-free lookup table; unknown tokens map to zeros.
class TableEmbedder : public frontend::EmbeddingProvider {
 public:
  TableEmbedder(int dim, std::map<std::string, std::vector<double>> rows) : dim_(dim), rows_(std::move(rows)) {}
  int dim() const override { return dim_; }
  Tensor embed(const std::vector<std::string>& tokens) const override {
    std::vector<double> v;
    for (const auto& t : tokens) {
      const auto it = rows_.find(t);
      if (it == rows_.end()) v.insert(v.end(), dim_, 0.0);
      else v.insert(v.end(), it->second.begin(), it->second.end());
    }
    return Tensor::from({static_cast<int>(tokens.size()), dim_}, v);
  }

 private:
  int dim_;
  std::map<std::string, std::vector<double>> rows_;
};

std::vector<TokenAnnotation> default_annotations(const std::string& s) {
  std::vector<TokenAnnotation> out;
  for (const auto& t : frontend::word_tokens(s)) out.push_back({t, "NOUN", false, std::nullopt});
  return out;
}

std::string words(int n, const std::string& stem) {
  std::string s;
  for (int i = 0; i < n; ++i) s += (i ? " " : "") + stem + std::to_string(i);
  return s;
}

TEST(TokenFeatures, SyntacticRowsByHand) {
  frontend::ToyEmbedder emb;
  const std::string s = "Il dit « oui madame » enfin";
  auto ann = default_annotations(s);
  ann[1].pos = "VERB";
  const auto f = extract_token_features(s, ann, emb);
  ASSERT_EQ(f.tokens, (std::vector<std::string>{"Il", "dit", "oui", "madame", "enfin"}));
  ASSERT_EQ(f.syntactic.shape(), (Shape{5, 20}));
  EXPECT_EQ(f.semantic.shape(), (Shape{5, emb.dim()}));
  const double depth[] = {0, 0, 1, 1, 0};
  for (int i = 0; i < 5; ++i) {
    EXPECT_DOUBLE_EQ(f.syntactic.at({i, 1}), i / 5.0);
    EXPECT_DOUBLE_EQ(f.syntactic.at({i, 2}), depth[i]);
  }
  EXPECT_DOUBLE_EQ(f.syntactic.at({3, 0}), 0.6);
  EXPECT_DOUBLE_EQ(f.syntactic.at({1, 3 + frontend::pos_index("VERB")}), 1.0);
  double row_sum = 0;
  for (int j = 3; j < 20; ++j) row_sum += f.syntactic.at({1, j});
  EXPECT_DOUBLE_EQ(row_sum, 1.0);

  const auto one = extract_token_features("Bonjour", default_annotations("Bonjour"), emb);
  EXPECT_DOUBLE_EQ(one.syntactic.at({0, 1}), 0.0);
  EXPECT_THROW(extract_token_features(s, default_annotations("Il dit"), emb), DataError);
}

TEST(SentenceEmbedding, MeansByHand) {
  TableEmbedder emb(4, {{"a", {1, 2, 3, 4}}, {"b", {0, -2, 6, 1}}, {"c", {2, 3, 0, 1}}, {"e", {1.5, -2, 0.25, 8}},
                        {"f", {-1.5, 2, -0.25, -8}}});
  EXPECT_EQ(sentence_embedding("a b c", emb).values(), (std::vector<double>{1, 1, 3, 2}));
  EXPECT_EQ(sentence_embedding("b", emb).values(), (std::vector<double>{0, -2, 6, 1}));
  EXPECT_EQ(sentence_embedding("e f", emb).values(), (std::vector<double>{0, 0, 0, 0}));
  EXPECT_EQ(sentence_embedding("« … »", emb).values(), (std::vector<double>{0, 0, 0, 0}));
}

TEST(Aggregator, DegenerateDeterministicAndOrderSensitive) {
  frontend::ToyEmbedder emb;
  nn::Rng rng(3);
  const ContextAggregator agg(emb.dim(), 12, 8, rng);
  ContextWindow only{"Il pleut.", NdLabel::narration, {}, {}};
  const Tensor s1 = encode_context(only, emb, agg);
  EXPECT_EQ(s1.shape(), (Shape{8}));
  for (double v : s1.values()) EXPECT_TRUE(std::isfinite(v));

  ContextWindow w{"Il pleut.", NdLabel::narration, {"Le ciel est gris.", "Marie ouvre la porte."}, {"Elle sort."}};
  EXPECT_EQ(encode_context(w, emb, agg).values(), encode_context(w, emb, agg).values());
  ContextWindow swapped = w;
  std::swap(swapped.prev[0], swapped.prev[1]);
  EXPECT_NE(encode_context(w, emb, agg).values(), encode_context(swapped, emb, agg).values());

  const Tensor m = window_matrix(w, emb);
  EXPECT_EQ(m.dim(0), 4);
  std::vector<Tensor> rows;
  for (int i = 3; i >= 0; --i) rows.push_back(narrow(m, 0, i, 1));
  EXPECT_NE(agg(m).values(), agg(concat(rows, 0)).values());
}

TEST(Cse, NarrationIsExactlyZero) {
  frontend::ToyEmbedder emb;
  ContextWindow w{"Il marcha longtemps.", NdLabel::narration, {"Oui."}, {"Non."}};
  const auto v = compute_cse(w, emb);
  EXPECT_TRUE(v.is_narration);
  EXPECT_EQ(v.embedded_tokens, 0);
  for (double x : v.cse.values()) EXPECT_EQ(x, 0.0);
}

TEST(Cse, EmptyContextEqualsSentenceEmbedding) {
  frontend::ToyEmbedder emb;
  ContextWindow w{"Viens ici tout de suite", NdLabel::dialogue, {}, {}};
  const auto v = compute_cse(w, emb);
  EXPECT_FALSE(v.is_narration);
  const auto ref = sentence_embedding(w.center, emb).values();
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(v.cse.values()[i], ref[i], 1e-15);
}

TEST(Cse, ContextChangesTheCenterRows) {
  frontend::ToyEmbedder emb;
  ContextWindow alone{"Viens ici", NdLabel::dialogue, {}, {}};
  ContextWindow with = alone;
  with.prev = {"Elle crie"};
  EXPECT_NE(compute_cse(alone, emb).cse.values(), compute_cse(with, emb).cse.values());
}

TEST(Cse, SymmetricTrimToCap) {
  ContextWindow w{words(10, "c"), NdLabel::dialogue, {words(150, "p")}, {words(150, "n")}};
  const auto s = cse_stream(w);
  ASSERT_EQ(s.tokens.size(), 256u);
  EXPECT_EQ(s.center_end - s.center_begin, 10);
  EXPECT_EQ(s.center_begin, 123);
  EXPECT_EQ(s.tokens[s.center_begin], "c0");
  EXPECT_EQ(s.tokens[s.center_end - 1], "c9");
  EXPECT_EQ(s.tokens.front(), "p27");  // the outermost 27 of 150 dropped
  EXPECT_EQ(s.tokens.back(), "n122");

  ContextWindow lop{words(10, "c"), NdLabel::dialogue, {words(20, "p")}, {words(280, "n")}};
  const auto t = cse_stream(lop);
  ASSERT_EQ(t.tokens.size(), 256u);
  EXPECT_EQ(t.center_begin, 20);
  EXPECT_EQ(t.tokens.back(), "n225");

  frontend::ToyEmbedder emb;
  EXPECT_EQ(compute_cse(w, emb).embedded_tokens, 256);

  ContextWindow huge{words(300, "c"), NdLabel::dialogue, {"avant"}, {"après"}};
  const auto h = cse_stream(huge);
  EXPECT_EQ(h.tokens.size(), 256u);
  EXPECT_EQ(h.center_begin, 0);
  EXPECT_EQ(h.tokens.back(), "c255");
}

TEST(Cse, NeverMoreThanCapOnRandomWindows) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> len(0, 120), count(0, 5);
  for (int trial = 0; trial < 300; ++trial) {
    ContextWindow w{words(len(rng) + 1, "c"), NdLabel::dialogue, {}, {}};
    for (int i = count(rng); i > 0; --i) w.prev.push_back(words(len(rng), "p"));
    for (int i = count(rng); i > 0; --i) w.next.push_back(words(len(rng), "n"));
    const auto s = cse_stream(w);
    const int center = static_cast<int>(frontend::word_tokens(w.center).size());
    EXPECT_LE(s.tokens.size(), 256u);
    EXPECT_EQ(s.center_end - s.center_begin, std::min(center, 256));
    int total = center;
    for (const auto& x : w.prev) total += static_cast<int>(frontend::word_tokens(x).size());
    for (const auto& x : w.next) total += static_cast<int>(frontend::word_tokens(x).size());
    EXPECT_EQ(static_cast<int>(s.tokens.size()), std::min(total, 256));
  }
}

nn::Linear identity_projection(int n) {
  nn::Linear p;
  std::vector<double> w(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i) * n + i] = 1.0;
  p.weight = Tensor::from({n, n}, w);
  p.bias = Tensor::zeros({n});
  return p;
}

TEST(Upsample, BroadcastAndSubwordMean) {
  TokenContextFeatures f;
  f.tokens = {"chan", "son"};
  f.semantic = Tensor::from({2, 2}, {1, 2, 3, 6});
  f.syntactic = Tensor::from({2, 1}, {0, 1});
  const Tensor state = Tensor::from({1}, {7});
  frontend::PhoneSequence ph;
  ph.phones = {{"sil", 0, true}, {"\xCA\x83", 0, false}, {"\xC9\x91\xCC\x83", 0, false}, {"s", 0, false}, {"sil", 0, true}};
  const Tensor out = upsample_to_phones(f, state, ph, {{0, 1}}, identity_projection(4));
  ASSERT_EQ(out.shape(), (Shape{5, 4}));
  for (int r = 0; r < 5; ++r) {
    EXPECT_DOUBLE_EQ(out.at({r, 0}), 2.0);
    EXPECT_DOUBLE_EQ(out.at({r, 1}), 4.0);
    EXPECT_DOUBLE_EQ(out.at({r, 2}), 0.5);
    EXPECT_DOUBLE_EQ(out.at({r, 3}), 7.0);
  }
  EXPECT_THROW(upsample_to_phones(f, state, ph, {{}}, identity_projection(4)), DataError);
  ph.phones[1].word_index = 1;
  EXPECT_THROW(upsample_to_phones(f, state, ph, {{0, 1}}, identity_projection(4)), DataError);
}

TEST(Upsample, SameWordRowsIdenticalAndRowCount) {
  frontend::ToyEmbedder emb(4);
  frontend::Lexicon lex;
  nn::Rng rng(5);
  const nn::Linear proj(emb.dim() + kSyntacticDim + 6, 16, rng);
  for (const std::string s : {"Le petit chat dort.", "Bonjour", "Il dit « viens », puis sortit !", "…"}) {
    const auto ann = default_annotations(s);
    const auto f = extract_token_features(s, ann, emb);
    const auto ph = frontend::g2p(s, lex, ann);
    const Tensor out = upsample_to_phones(f, Tensor::full({6}, 0.3), ph, identity_alignment(static_cast<int>(f.tokens.size())), proj);
    ASSERT_EQ(out.dim(0), static_cast<int>(ph.phones.size()));
    for (std::size_t i = 0; i < ph.phones.size(); ++i)
      for (std::size_t j = 0; j < ph.phones.size(); ++j) {
        if (ph.phones[i].word_index != ph.phones[j].word_index) continue;
        for (int c = 0; c < 16; ++c) EXPECT_EQ(out.at({int(i), c}), out.at({int(j), c}));
      }
    for (double v : out.values()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Upsample, GradientReachesStateAndProjection) {
  frontend::ToyEmbedder emb(4);
  nn::Rng rng(6);
  const ContextAggregator agg(emb.dim(), 5, 3, rng);
  const nn::Linear proj(emb.dim() + kSyntacticDim + 3, 8, rng);
  const std::string s = "Elle chante bien";
  const auto ann = default_annotations(s);
  const auto f = extract_token_features(s, ann, emb);
  const ContextWindow w{s, NdLabel::narration, {"Avant."}, {}};
  const Tensor out = upsample_to_phones(f, encode_context(w, emb, agg), frontend::g2p(s, frontend::Lexicon(), ann),
                                        identity_alignment(3), proj);
  sum_all(square(out)).backward();
  EXPECT_FALSE(agg.proj.weight.grad().empty());
  EXPECT_FALSE(agg.fwd.w_ih.grad().empty());
  EXPECT_FALSE(proj.weight.grad().empty());
}

TEST(FeatureFiniteness, RandomText) {
  frontend::ToyEmbedder emb;
  nn::Rng rng(8);
  const ContextAggregator agg(emb.dim(), 8, 4, rng);
  std::mt19937_64 r(9);
  const std::vector<std::string> pieces = {"«", "»", "—", "¬", "Il", "dit", ",", "…", "l'", "eau", "123", "!", "  ", "Œuvre", "?"};
  std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::string s;
    for (int i = 0; i < 8; ++i) s += pieces[pick(r)] + " ";
    const auto f = extract_token_features(s, default_annotations(s), emb);
    for (double v : f.syntactic.values()) ASSERT_TRUE(std::isfinite(v));
    for (double v : f.semantic.values()) ASSERT_TRUE(std::isfinite(v));
    const ContextWindow w{s, trial % 2 ? NdLabel::dialogue : NdLabel::narration, {s}, {}};
    for (double v : compute_cse(w, emb).cse.values()) ASSERT_TRUE(std::isfinite(v));
    for (double v : encode_context(w, emb, agg).values()) ASSERT_TRUE(std::isfinite(v));
  }
}

// ---------------------------------------------------------------------------

TEST(Emotion, SeparableSetSingleClassAndInitialLoss) {
  TableEmbedder emb(2, {{"hourra", {1, 0}}, {"hélas", {0, 1}}, {"super", {0.9, 0.1}}, {"triste", {0.2, 0.8}}});
  std::vector<EmotionExample> ex;
  const std::vector<std::pair<std::string, int>> rows = {{"hourra super", 1}, {"hélas triste", 3}, {"super", 1},
                                                         {"triste", 3},       {"hourra", 1},       {"hélas", 3}};
  for (int rep = 0; rep < 4; ++rep)
    for (const auto& [s, e] : rows) ex.push_back({{s, NdLabel::dialogue, {}, {}}, e});
  EmotionTrainConfig cfg;
  cfg.epochs = 200;
  cfg.lr = 0.05;
  EmotionReport rep;
  train_emotion_head(ex, emb, cfg, &rep);
  EXPECT_NEAR(rep.loss_curve.front(), std::log(6.0), 1e-12);
  EXPECT_GT(rep.heldout, 0);
  EXPECT_DOUBLE_EQ(rep.accuracy, 1.0);

  std::vector<EmotionExample> one_class(8, {{"hourra", NdLabel::dialogue, {}, {}}, 2});
  EmotionReport r1;
  cfg.epochs = 1500;
  train_emotion_head(one_class, emb, cfg, &r1);
  EXPECT_DOUBLE_EQ(r1.accuracy, 1.0);
  EXPECT_LT(r1.loss_curve.back(), 0.05);
  EXPECT_THROW(train_emotion_head({}, emb, cfg), DataError);
}

TEST(Emotion, ReadSet) {
  const auto path = temp_file("emo.jsonl").string();
  {
    std::ofstream out(path);
    out << R"({"context_sentences":["A.","B !","C."],"center_index":1,"emotion_tag":"joy"})" << "\n";
  }
  const auto s = read_emotion_set(path);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].window.center, "B !");
  EXPECT_EQ(s[0].window.prev, (std::vector<std::string>{"A."}));
  EXPECT_EQ(s[0].window.next, (std::vector<std::string>{"C."}));
  EXPECT_EQ(s[0].emotion, emotion_index("joy"));
  {
    std::ofstream out(path);
    out << R"({"context_sentences":["A."],"center_index":0,"emotion_tag":"boredom"})" << "\n";
  }
  try {
    read_emotion_set(path);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("boredom"), std::string::npos);
  }
}

TEST(UtteranceContextFile, RoundTrip) {
  frontend::ToyEmbedder emb;
  for (const std::string s : {"« Viens, vite ! »", "…"}) {
    const ContextWindow w{s, NdLabel::dialogue, {"Il attend."}, {}};
    const auto c = build_utterance_context(w, default_annotations(s), emb);
    const auto path = temp_file("ctx.mlna").string();
    save_utterance_context(path, c);
    const auto d = load_utterance_context(path);
    EXPECT_EQ(d.tokens.tokens, c.tokens.tokens);
    EXPECT_EQ(d.tokens.semantic.values(), c.tokens.semantic.values());
    EXPECT_EQ(d.tokens.syntactic.values(), c.tokens.syntactic.values());
    EXPECT_EQ(d.sentences.values(), c.sentences.values());
    EXPECT_EQ(d.cse.values(), c.cse.values());
    EXPECT_EQ(d.is_narration, c.is_narration);
  }
}

TEST(Window, FromManifestRecords) {
  std::vector<corpus::UtteranceRecord> recs(3);
  for (int i = 0; i < 3; ++i) {
    recs[i].utt_id = "u" + std::to_string(i);
    recs[i].chapter_id = "c";
    recs[i].text = "t" + std::to_string(i);
    recs[i].nd_label = {NdLabel::narration};
  }
  recs[1].context_prev_ids = {"u0"};
  recs[1].context_next_ids = {"u2"};
  const auto w = window_for(recs, 1);
  EXPECT_EQ(w.prev, (std::vector<std::string>{"t0"}));
  EXPECT_EQ(w.next, (std::vector<std::string>{"t2"}));
  recs[2].chapter_id = "other";
  EXPECT_THROW(window_for(recs, 1), DataError);
}

}  // namespace
}  // namespace abtts::context
