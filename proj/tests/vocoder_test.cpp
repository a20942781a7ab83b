#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "gradcheck.hpp"
#include "abtts/archive.hpp"
#include "abtts/dsp.hpp"
#include "abtts/error.hpp"
#include "abtts/vocoder.hpp"

using namespace abtts;
using namespace abtts::vocoder;

namespace {

std::string tmp_path(const std::string& name) { return (std::filesystem::temp_directory_path() / name).string(); }

std::vector<double> sine(double hz, int n, int sr, double amp = 0.5) {
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * std::numbers::pi * hz * i / sr);
  return x;
}

/// Gliding harmonic tone with a faint noise floor.
std::vector<double> speech_like(int n, int sr, double f0, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.01);
  std::vector<double> x(n);
  double phase = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = f0 * (1.0 + 0.15 * std::sin(i / (0.2 * sr)));
    phase += 2.0 * std::numbers::pi * f / sr;
    double v = 0.0;
    for (int h = 1; h * f < 0.45 * sr && h < 25; ++h) v += std::sin(h * phase) / h;
    x[i] = 0.2 * v + noise(rng);
  }
  return x;
}

/// Mean |a - b| over the shared frames.
double mel_l1(const dsp::MelSpec& a, const dsp::MelSpec& b) {
  const int F = std::min(a.n_frames, b.n_frames);
  double s = 0.0;
  for (int t = 0; t < F; ++t)
    for (int k = 0; k < a.n_mels; ++k) s += std::abs(a.at(t, k) - b.at(t, k));
  return s / (static_cast<double>(F) * a.n_mels);
}

double griffin_lim_round_trip(const std::vector<double>& x16) {
  const auto mel = dsp::compute_mel(x16, dsp::kMelSampleRate);
  const auto y = griffin_lim(mel, 60);
  return mel_l1(mel, dsp::compute_mel(dsp::resample(y, kOutputRate, dsp::kMelSampleRate), dsp::kMelSampleRate));
}

VocoderExample example(const std::string& id, std::vector<double> wave24) {
  VocoderExample e;
  e.utt_id = id;
  e.mel = dsp::compute_mel(wave24, kOutputRate);
  e.wave = {std::move(wave24), kOutputRate};
  return e;
}

std::vector<VocoderExample> toy_examples(int count) {
  std::vector<VocoderExample> out;
  for (int i = 0; i < count; ++i) out.push_back(example("utt" + std::to_string(i), speech_like(9000, kOutputRate, 110.0 + 25.0 * i, i)));
  return out;
}

VocoderConfig small_config() {
  VocoderConfig c;
  c.channels = 16;
  return c;
}

VocoderTrainConfig quick_train(int steps) {
  VocoderTrainConfig t;
  t.steps = steps;
  t.segment_frames = 8;
  t.batch_size = 2;
  t.optimizer.warmup_steps = 5;
  t.optimizer.peak_lr = 2e-3;
  return t;
}

bool same_values(const nn::ParamList& a, const nn::ParamList& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].first != b[i].first || a[i].second.values() != b[i].second.values()) return false;
  return true;
}

}  // namespace

TEST(VocoderConfigTest, FactorsMustMultiplyTo300) {
  VocoderConfig c;
  EXPECT_NO_THROW(c.validate());
  c.upsample_factors = {5, 5, 4, 2};
  EXPECT_THROW(c.validate(), ConfigError);
  c.upsample_factors = {10, 30};
  EXPECT_NO_THROW(c.validate());
  c.upsample_factors = {};
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(VocoderConfig::full().validate());
}

TEST(VocoderConfigTest, JsonRoundTripAndUnknownKeys) {
  VocoderConfig c = VocoderConfig::full();
  c.mode = Mode::griffinlim;
  c.discriminators = Discriminators::none;
  const VocoderConfig back = VocoderConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_THROW(VocoderConfig::from_json(nlohmann::json{{"chanels", 3}}), ConfigError);
  EXPECT_THROW(parse_mode("wavenet"), ConfigError);
  EXPECT_THROW(parse_discriminators("big"), ConfigError);
}

TEST(GeneratorTest, ThreeHundredSamplesPerFrameInUnitRange) {
  const Vocoder v(small_config(), 4);
  std::mt19937_64 rng(2);
  const Tensor mel = abtts::testing::random_tensor({2, 5, dsp::kNumMels}, rng, 3.0, false);
  const Tensor w = v.generator(mel);
  ASSERT_EQ(w.shape(), (Shape{2, 1500}));
  for (double s : w.values()) {
    EXPECT_GT(s, -1.0);
    EXPECT_LT(s, 1.0);
  }
}

TEST(GeneratorTest, GenerateLengthBothModes) {
  const auto mel = dsp::compute_mel(speech_like(20000, dsp::kMelSampleRate, 120.0, 1), dsp::kMelSampleRate);
  ASSERT_EQ(mel.n_frames, 101);
  dsp::MelSpec hundred = mel;
  hundred.n_frames = 100;
  hundred.values.resize(100 * hundred.n_mels);

  const Vocoder v(small_config(), 1);
  VocoderConfig gl = small_config();
  gl.mode = Mode::griffinlim;
  for (const auto& out : {generate(hundred, v.config, &v), generate(hundred, gl, nullptr)}) {
    ASSERT_EQ(out.size(), 30000u);
    for (double s : out) ASSERT_LE(std::abs(s), 1.0);
  }
}

TEST(GeneratorTest, BatchOfOneMatchesBatched) {
  const Vocoder v(small_config(), 9);
  std::mt19937_64 rng(5);
  const Tensor mel = abtts::testing::random_tensor({2, 3, dsp::kNumMels}, rng, 2.0, false);
  const Tensor both = v.generator(mel);
  const Tensor second = v.generator(narrow(mel, 0, 1, 1));
  for (int i = 0; i < 900; ++i) EXPECT_NEAR(both.values()[900 + i], second.values()[i], 1e-12);
}

TEST(GeneratorTest, RejectsWrongInputs) {
  const Vocoder v(small_config(), 1);
  auto mel = dsp::compute_mel(sine(440.0, 4000, 22050), 22050);
  mel.sample_rate = 22050;
  EXPECT_THROW(generate(mel, v.config, &v), DataError);
  EXPECT_THROW(griffin_lim(mel), DataError);
  const auto ok = dsp::compute_mel(sine(440.0, 4000, 16000), 16000);
  EXPECT_THROW(generate(ok, VocoderConfig{}, nullptr), ConfigError);
}

TEST(MelLossTest, MatchesComputeMel) {
  std::mt19937_64 rng(11);
  for (int n : {2400, 4800, 7500}) {
    std::normal_distribution<double> noise(0.0, 0.3);
    std::vector<double> w(n);
    for (double& s : w) s = noise(rng);
    const MelLoss ml(n);
    const Tensor mt = ml.mel(Tensor::from({1, n}, w));
    const auto ref = dsp::compute_mel(w, kOutputRate);
    ASSERT_EQ(ml.frames(), ref.n_frames);
    ASSERT_EQ(mt.shape(), (Shape{1, ref.n_frames, dsp::kNumMels}));
    for (std::size_t i = 0; i < ref.values.size(); ++i) ASSERT_NEAR(mt.values()[i], ref.values[i], 1e-6);
  }
}

TEST(MelLossTest, Gradient) {
  std::mt19937_64 rng(3);
  const MelLoss ml(1200);
  Tensor w = abtts::testing::random_tensor({2, 1200}, rng, 0.3);
  const Tensor weights = abtts::testing::random_tensor({2, ml.frames(), dsp::kNumMels}, rng, 1.0, false);
  for (int trial = 0; trial < 3; ++trial) {
    const auto r = abtts::testing::directional_gradcheck({w}, [&] { return sum_all(mul(ml.mel(w), weights)); }, rng);
    EXPECT_LT(r.rel_error, 1e-5) << r.analytic << " vs " << r.numeric;
  }
}

TEST(DiscriminatorTest, FiniteOutputsAndFeatures) {
  const Vocoder v(small_config(), 2);
  std::mt19937_64 rng(8);
  const Tensor wave = abtts::testing::random_tensor({2, 2400}, rng, 0.3, false);
  const auto outs = v.discriminate(wave);
  ASSERT_EQ(outs.size(), 4u);  // two periods, two scales
  for (const auto& o : outs) {
    EXPECT_EQ(o.score.shape()[0], 2);
    EXPECT_FALSE(o.features.empty());
    for (double s : o.score.values()) EXPECT_TRUE(std::isfinite(s));
    for (const auto& f : o.features)
      for (double s : f.values()) EXPECT_TRUE(std::isfinite(s));
  }
}

TEST(DiscriminatorTest, ParameterGroupsArePartitioned) {
  const Vocoder v(small_config(), 2);
  const auto g = v.generator_params(), d = v.discriminator_params(), all = v.params();
  EXPECT_EQ(g.size() + d.size(), all.size());
  for (const auto& [name, t] : g) EXPECT_EQ(name.rfind("gen.", 0), 0u) << name;
  for (const auto& [name, t] : d) EXPECT_TRUE(name.rfind("mpd.", 0) == 0 || name.rfind("msd.", 0) == 0) << name;
}

TEST(GriffinLimTest, SinePeak) {
  const auto mel = dsp::compute_mel(sine(440.0, 16000, 16000), 16000);
  const auto y = dsp::resample(griffin_lim(mel, 60), kOutputRate, 16000);
  // 800-point frames at 16 kHz give 20 Hz bins; 440 Hz is bin 22.
  dsp::MelConfig cfg;
  const auto s = dsp::stft(y, cfg);
  const int bins = cfg.n_fft / 2 + 1;
  std::vector<double> avg(bins, 0.0);
  for (std::size_t i = 0; i < s.size(); ++i) avg[i % bins] += std::abs(s[i]);
  const int peak = static_cast<int>(std::max_element(avg.begin(), avg.end()) - avg.begin());
  EXPECT_NEAR(peak, 22, 1);
}

TEST(GriffinLimTest, DeterministicAndSized) {
  const auto mel = dsp::compute_mel(speech_like(8000, 16000, 150.0, 2), 16000);
  const auto a = griffin_lim(mel, 20), b = griffin_lim(mel, 20);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), static_cast<std::size_t>(mel.n_frames) * kSamplesPerFrame);
  dsp::MelSpec one = mel;
  one.n_frames = 1;
  one.values.resize(one.n_mels);
  EXPECT_EQ(griffin_lim(one).size(), 300u);
}

// Regression bounds measured when the inversion was written: speech-like
// fixtures land near 0.12-0.15, pure tones between 0.86 and 1.05 because every empty
// band sits on the log floor and any phase-recovery leakage shows there.
TEST(GriffinLimTest, RoundTripSpeechLike) {
  for (double f0 : {100.0, 160.0, 230.0}) EXPECT_LT(griffin_lim_round_trip(speech_like(16000, 16000, f0, 7)), 0.5) << f0;
}

TEST(GriffinLimTest, RoundTripPureTone) {
  for (double hz : {220.0, 440.0, 1000.0}) EXPECT_LT(griffin_lim_round_trip(sine(hz, 16000, 16000)), 1.1) << hz;
}

TEST(FinalizeTest, RateAndPeak) {
  const auto y = finalize(sine(300.0, 24000, 24000, 0.3));
  ASSERT_EQ(y.size(), 22050u);
  double peak = 0.0;
  for (double v : y) peak = std::max(peak, std::abs(v));
  EXPECT_NEAR(peak, 0.95, 1e-12);
  const auto quiet = finalize(std::vector<double>(2400, 0.0));
  EXPECT_EQ(quiet.size(), 2205u);
  for (double v : quiet) EXPECT_EQ(v, 0.0);
}

TEST(VocoderTrainTest, ValidateExamples) {
  auto ex = toy_examples(2);
  EXPECT_NO_THROW(validate_examples(ex));
  ex[1].wave.sample_rate = 16000;
  try {
    validate_examples(ex);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("utt1"), std::string::npos);
  }
  auto ex2 = toy_examples(1);
  ex2[0].mel.sample_rate = 24000;
  EXPECT_THROW(validate_examples(ex2), DataError);
}

TEST(VocoderTrainTest, MelLossDecreases) {
  const auto ex = toy_examples(3);
  VocoderTrainState st{Vocoder(small_config(), 1), {}, {}};
  const auto hist = train_vocoder(st, ex, quick_train(40));
  ASSERT_EQ(hist.size(), 40u);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += hist[i].g_mel;
    last += hist[30 + i].g_mel;
  }
  EXPECT_LT(last, first);
  for (const auto& h : hist) {
    EXPECT_TRUE(std::isfinite(h.d_loss));
    EXPECT_GT(h.d_loss, 0.0);
    EXPECT_GT(h.g_fm, 0.0);
  }
}

TEST(VocoderTrainTest, WithoutDiscriminatorsOnlyMelLoss) {
  const auto ex = toy_examples(2);
  VocoderConfig c = small_config();
  c.discriminators = Discriminators::none;
  VocoderTrainState st{Vocoder(c, 1), {}, {}};
  const auto hist = train_vocoder(st, ex, quick_train(3));
  for (const auto& h : hist) {
    EXPECT_EQ(h.d_loss, 0.0);
    EXPECT_EQ(h.g_adv, 0.0);
    EXPECT_NEAR(h.g_total, 45.0 * h.g_mel, 1e-9);
  }
  EXPECT_TRUE(st.opt_d.params.empty());
}

TEST(VocoderTrainTest, SaveLoadResumesIdentically) {
  const auto ex = toy_examples(2);
  VocoderTrainState straight{Vocoder(small_config(), 6), {}, {}};
  train_vocoder(straight, ex, quick_train(6));

  VocoderTrainState first{Vocoder(small_config(), 6), {}, {}};
  train_vocoder(first, ex, quick_train(3));
  const std::string path = tmp_path("abtts_vocoder_resume.ckpt");
  save_vocoder(path, first, {{"note", "x"}});
  nlohmann::json meta;
  VocoderTrainState resumed = load_vocoder(path, &meta);
  EXPECT_EQ(meta.at("kind"), "vocoder");
  EXPECT_EQ(meta.at("note"), "x");
  EXPECT_EQ(resumed.opt_g.step, 3);
  EXPECT_EQ(resumed.opt_d.step, first.opt_d.step);
  EXPECT_EQ(resumed.opt_d.params.size(), first.opt_d.params.size());
  EXPECT_TRUE(same_values(resumed.model.params(), first.model.params()));

  train_vocoder(resumed, ex, quick_train(6));
  EXPECT_TRUE(same_values(resumed.model.params(), straight.model.params()));
  std::filesystem::remove(path);
}

TEST(VocoderTrainTest, FineTuneZeroStepsIsSource) {
  const auto ex = toy_examples(2);
  VocoderTrainState src{Vocoder(small_config(), 3), {}, {}};
  train_vocoder(src, ex, quick_train(2));
  const std::string path = tmp_path("abtts_vocoder_ft.ckpt");
  save_vocoder(path, src);
  VocoderTrainState ft = load_vocoder(path);
  const auto hist = train_vocoder(ft, ex, quick_train(2));
  EXPECT_TRUE(hist.empty());
  EXPECT_TRUE(same_values(ft.model.params(), src.model.params()));
  std::filesystem::remove(path);
}

TEST(VocoderTrainTest, LoadRejectsOtherKinds) {
  const std::string path = tmp_path("abtts_not_vocoder.ckpt");
  save_archive(path, {{"kind", "acoustic"}}, {});
  EXPECT_THROW(load_vocoder(path), ConfigError);
  std::filesystem::remove(path);
}
