#include "abtts/vocoder.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "abtts/archive.hpp"
#include "abtts/error.hpp"

namespace abtts::vocoder {

namespace {

constexpr double kSlope = 0.1;

Tensor lrelu(const Tensor& x) { return leaky_relu(x, kSlope); }

/// Mean over fixed non-overlapping windows of the last axis.
SparseMap avg_pool_map(int n, int k) {
  SparseMap m;
  m.in_len = n;
  m.out_len = n / k;
  m.row_start.push_back(0);
  for (int i = 0; i < m.out_len; ++i) {
    for (int j = 0; j < k; ++j) {
      m.idx.push_back(i * k + j);
      m.weight.push_back(1.0 / k);
    }
    m.row_start.push_back(static_cast<int>(m.idx.size()));
  }
  return m;
}

Tensor mean_sq(const Tensor& x, double target) { return mean_all(square(add_scalar(x, -target))); }

std::vector<double> clip_unit(std::vector<double> v) {
  for (double& x : v) x = std::clamp(x, -1.0, 1.0);
  return v;
}

}  // namespace

Mode parse_mode(const std::string& s) {
  if (s == "gan") return Mode::gan;
  if (s == "griffinlim") return Mode::griffinlim;
  throw ConfigError("unknown vocoder mode '" + s + "' (gan, griffinlim)");
}

Discriminators parse_discriminators(const std::string& s) {
  if (s == "toy") return Discriminators::toy;
  if (s == "none") return Discriminators::none;
  throw ConfigError("unknown discriminator set '" + s + "' (none, toy)");
}

VocoderConfig VocoderConfig::toy() { return VocoderConfig{}; }

VocoderConfig VocoderConfig::full() {
  VocoderConfig c;
  c.channels = 256;
  c.resblock_dilations = {1, 3, 5};
  return c;
}

void VocoderConfig::validate() const {
  if (upsample_factors.empty()) throw ConfigError("vocoder.upsample_factors is empty");
  int prod = 1;
  for (int f : upsample_factors) {
    if (f < 1) throw ConfigError("vocoder.upsample_factors must be positive");
    prod *= f;
  }
  if (prod != kSamplesPerFrame)
    throw ConfigError("vocoder.upsample_factors multiply to " + std::to_string(prod) + ", expected 300");
  if (channels < 1 || resblock_kernel < 1 || n_mels < 1 || griffin_lim_iters < 0)
    throw ConfigError("vocoder sizes must be positive");
  for (int d : resblock_dilations)
    if (d < 1) throw ConfigError("vocoder.resblock_dilations must be positive");
}

nlohmann::json VocoderConfig::to_json() const {
  return {{"upsample_factors", upsample_factors},
          {"channels", channels},
          {"resblock_kernel", resblock_kernel},
          {"resblock_dilations", resblock_dilations},
          {"n_mels", n_mels},
          {"discriminators", discriminators == Discriminators::toy ? "toy" : "none"},
          {"mode", mode == Mode::gan ? "gan" : "griffinlim"},
          {"griffin_lim_iters", griffin_lim_iters}};
}

VocoderConfig VocoderConfig::from_json(const nlohmann::json& j, const VocoderConfig& base) {
  VocoderConfig c = base;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "upsample_factors")
        c.upsample_factors = v.get<std::vector<int>>();
      else if (key == "channels")
        c.channels = v.get<int>();
      else if (key == "resblock_kernel")
        c.resblock_kernel = v.get<int>();
      else if (key == "resblock_dilations")
        c.resblock_dilations = v.get<std::vector<int>>();
      else if (key == "n_mels")
        c.n_mels = v.get<int>();
      else if (key == "discriminators")
        c.discriminators = parse_discriminators(v.get<std::string>());
      else if (key == "mode")
        c.mode = parse_mode(v.get<std::string>());
      else if (key == "griffin_lim_iters")
        c.griffin_lim_iters = v.get<int>();
      else
        throw ConfigError("unknown vocoder config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("vocoder config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

Generator::Generator(const VocoderConfig& cfg, nn::Rng& rng) {
  cfg.validate();
  int c = cfg.channels;
  conv_pre = nn::Conv1d(cfg.n_mels, c, 7, rng);
  for (int u : cfg.upsample_factors) {
    const int co = std::max(4, c / 2);
    factors.push_back(u);
    up.emplace_back(c, u * co, rng);
    std::vector<nn::Conv1d> stage;
    for (int d : cfg.resblock_dilations) stage.emplace_back(co, co, cfg.resblock_kernel, rng, d);
    res.push_back(std::move(stage));
    c = co;
  }
  conv_post = nn::Conv1d(c, 1, 7, rng);
}

Tensor Generator::operator()(const Tensor& mel) const {
  const int B = mel.dim(0);
  Tensor x = conv_pre(mel);
  for (std::size_t i = 0; i < up.size(); ++i) {
    const int T = x.dim(1);
    x = up[i](lrelu(x));  // [B, T, u * c]
    const int u = factors[i], c = up[i].out_features() / u;
    x = reshape(x, {B, T * u, c});
    for (const auto& conv : res[i]) x = add(x, conv(lrelu(x)));
  }
  x = tanh(conv_post(lrelu(x)));
  return reshape(x, {B, x.dim(1)});
}

void Generator::collect(const std::string& prefix, nn::ParamList& out) const {
  conv_pre.collect(prefix + ".conv_pre", out);
  for (std::size_t i = 0; i < up.size(); ++i) {
    up[i].collect(prefix + ".up" + std::to_string(i), out);
    for (std::size_t k = 0; k < res[i].size(); ++k)
      res[i][k].collect(prefix + ".res" + std::to_string(i) + "." + std::to_string(k), out);
  }
  conv_post.collect(prefix + ".conv_post", out);
}

PeriodDiscriminator::PeriodDiscriminator(int p, nn::Rng& rng) : period(p) {
  convs.emplace_back(1, 8, 5, 1, 3, 1, 2, 0, rng);
  convs.emplace_back(8, 16, 5, 1, 3, 1, 2, 0, rng);
  convs.emplace_back(16, 16, 5, 1, 1, 1, 2, 0, rng);
  post = nn::Conv2d(16, 1, 3, 1, 1, 1, 1, 0, rng);
}

DiscOutput PeriodDiscriminator::operator()(const Tensor& wave) const {
  const int B = wave.dim(0), L = wave.dim(1);
  Tensor x = wave;
  const int rem = L % period;
  if (rem) x = concat({x, Tensor::zeros({B, period - rem})}, 1);
  const int H = x.dim(1) / period;
  x = reshape(x, {B, H, period, 1});
  DiscOutput out;
  for (const auto& conv : convs) {
    x = lrelu(conv(x));
    out.features.push_back(x);
  }
  x = post(x);
  out.features.push_back(x);
  out.score = reshape(x, {B, static_cast<int>(x.numel()) / B});
  return out;
}

void PeriodDiscriminator::collect(const std::string& prefix, nn::ParamList& out) const {
  for (std::size_t i = 0; i < convs.size(); ++i) convs[i].collect(prefix + ".conv" + std::to_string(i), out);
  post.collect(prefix + ".post", out);
}

ScaleDiscriminator::ScaleDiscriminator(int s, nn::Rng& rng) : scale(s) {
  convs.emplace_back(1, 8, 15, rng, 1, 1, 7);
  convs.emplace_back(8, 16, 15, rng, 1, 4, 7);
  convs.emplace_back(16, 16, 15, rng, 1, 4, 7);
  convs.emplace_back(16, 16, 5, rng, 1, 1, 2);
  post = nn::Conv1d(16, 1, 3, rng, 1, 1, 1);
}

DiscOutput ScaleDiscriminator::operator()(const Tensor& wave) const {
  const int B = wave.dim(0);
  Tensor x = scale > 1 ? sparse_apply(wave, avg_pool_map(wave.dim(1), scale)) : wave;
  x = reshape(x, {B, x.dim(1), 1});
  DiscOutput out;
  for (const auto& conv : convs) {
    x = lrelu(conv(x));
    out.features.push_back(x);
  }
  x = post(x);
  out.features.push_back(x);
  out.score = reshape(x, {B, static_cast<int>(x.numel()) / B});
  return out;
}

void ScaleDiscriminator::collect(const std::string& prefix, nn::ParamList& out) const {
  for (std::size_t i = 0; i < convs.size(); ++i) convs[i].collect(prefix + ".conv" + std::to_string(i), out);
  post.collect(prefix + ".post", out);
}

Vocoder::Vocoder(const VocoderConfig& cfg, std::uint64_t seed) : config(cfg) {
  cfg.validate();
  nn::Rng rng(seed);
  generator = Generator(cfg, rng);
  for (int p : {2, 3}) mpd.emplace_back(p, rng);
  for (int s : {1, 2}) msd.emplace_back(s, rng);
}

nn::ParamList Vocoder::generator_params() const {
  nn::ParamList out;
  generator.collect("gen", out);
  return out;
}

nn::ParamList Vocoder::discriminator_params() const {
  nn::ParamList out;
  for (const auto& d : mpd) d.collect("mpd.p" + std::to_string(d.period), out);
  for (const auto& d : msd) d.collect("msd.s" + std::to_string(d.scale), out);
  return out;
}

nn::ParamList Vocoder::params() const {
  nn::ParamList out = generator_params();
  const auto d = discriminator_params();
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

std::vector<DiscOutput> Vocoder::discriminate(const Tensor& wave) const {
  std::vector<DiscOutput> out;
  for (const auto& d : mpd) out.push_back(d(wave));
  for (const auto& d : msd) out.push_back(d(wave));
  return out;
}

// ---------------------------------------------------------------------------

MelLoss::MelLoss(int n_samples_24k, const dsp::MelConfig& cfg) : n_fft_(cfg.n_fft) {
  resample_ = dsp::Resampler(kOutputRate, cfg.sample_rate).sparse_map(n_samples_24k);
  frame_ = dsp::frame_map(resample_.out_len, cfg);
  frames_ = dsp::frame_count(resample_.out_len, cfg);
  const int bins = cfg.n_fft / 2 + 1;
  std::vector<double> c(static_cast<std::size_t>(n_fft_) * bins), s(c.size());
  for (int i = 0; i < n_fft_; ++i)
    for (int k = 0; k < bins; ++k) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>((static_cast<long>(i) * k) % n_fft_) / n_fft_;
      c[static_cast<std::size_t>(i) * bins + k] = std::cos(a);
      s[static_cast<std::size_t>(i) * bins + k] = -std::sin(a);
    }
  cos_ = Tensor::from({n_fft_, bins}, std::move(c));
  sin_ = Tensor::from({n_fft_, bins}, std::move(s));
  const auto fb = dsp::mel_filterbank(cfg);
  std::vector<double> ft(static_cast<std::size_t>(bins) * cfg.n_mels);
  for (int m = 0; m < cfg.n_mels; ++m)
    for (int k = 0; k < bins; ++k) ft[static_cast<std::size_t>(k) * cfg.n_mels + m] = fb[static_cast<std::size_t>(m) * bins + k];
  fb_t_ = Tensor::from({bins, cfg.n_mels}, std::move(ft));
}

Tensor MelLoss::mel(const Tensor& wave) const {
  const int B = wave.dim(0);
  if (wave.dim(1) != resample_.in_len) throw ShapeError("MelLoss built for a different wave length");
  const Tensor frames = reshape(sparse_apply(sparse_apply(wave, resample_), frame_), {B * frames_, n_fft_});
  const Tensor re = matmul(frames, cos_), im = matmul(frames, sin_);
  // The tiny offset keeps the magnitude differentiable at zero.
  const Tensor mag = sqrt(add_scalar(add(square(re), square(im)), 1e-24));
  const Tensor e = log(clamp_min(matmul(mag, fb_t_), dsp::kLogFloor));
  return reshape(e, {B, frames_, fb_t_.dim(1)});
}

// ---------------------------------------------------------------------------

optim::OptimizerConfig VocoderTrainConfig::default_optimizer() {
  optim::OptimizerConfig c;
  c.peak_lr = 1e-3;
  c.warmup_steps = 50;
  return c;
}

void validate_examples(const std::vector<VocoderExample>& examples) {
  if (examples.empty()) throw DataError("vocoder training set is empty");
  for (const auto& e : examples) {
    if (e.mel.sample_rate != dsp::kMelSampleRate)
      throw DataError(e.utt_id + ": mel computed at " + std::to_string(e.mel.sample_rate) + " Hz, expected 16000");
    if (e.wave.sample_rate != kOutputRate)
      throw DataError(e.utt_id + ": wave at " + std::to_string(e.wave.sample_rate) + " Hz, expected 24000");
    if (e.mel.n_frames < 1) throw DataError(e.utt_id + ": empty mel");
  }
}

namespace {

struct Segment {
  Tensor mel;   // [B, S, n_mels]
  Tensor wave;  // [B, 300 S]
};

Segment sample_segment(const std::vector<VocoderExample>& ex, int S, int B, int n_mels, std::mt19937_64& rng) {
  std::vector<double> mel, wave;
  std::uniform_int_distribution<std::size_t> pick(0, ex.size() - 1);
  for (int b = 0; b < B; ++b) {
    const auto& e = ex[pick(rng)];
    if (e.mel.n_mels != n_mels) throw DataError(e.utt_id + ": mel has " + std::to_string(e.mel.n_mels) + " bins");
    const int start = e.mel.n_frames > S ? std::uniform_int_distribution<int>(0, e.mel.n_frames - S)(rng) : 0;
    for (int t = start; t < start + S; ++t)
      for (int m = 0; m < n_mels; ++m) mel.push_back(t < e.mel.n_frames ? e.mel.at(t, m) : std::log(dsp::kLogFloor));
    for (long i = static_cast<long>(start) * kSamplesPerFrame; i < static_cast<long>(start + S) * kSamplesPerFrame; ++i)
      wave.push_back(i < static_cast<long>(e.wave.samples.size()) ? e.wave.samples[i] : 0.0);
  }
  return {Tensor::from({B, S, n_mels}, std::move(mel)), Tensor::from({B, S * kSamplesPerFrame}, std::move(wave))};
}

void clear_grads(const nn::ParamList& ps) {
  for (const auto& p : ps) p.second.node()->grad.clear();
}

}  // namespace

std::vector<VocoderStepLosses> train_vocoder(VocoderTrainState& state, const std::vector<VocoderExample>& examples,
                                             const VocoderTrainConfig& cfg, const VocoderStepCallback& on_step) {
  validate_examples(examples);
  if (cfg.segment_frames < 4 || cfg.batch_size < 1) throw ConfigError("vocoder segment_frames >= 4 and batch_size >= 1");
  Vocoder& m = state.model;
  const bool adversarial = m.config.discriminators == Discriminators::toy;
  const auto gp = m.generator_params(), dp = m.discriminator_params();
  const MelLoss mel_loss(cfg.segment_frames * kSamplesPerFrame);
  std::vector<VocoderStepLosses> out;
  while (state.opt_g.step < cfg.steps) {
    const long s = state.opt_g.step;
    std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(s));
    const Segment seg = sample_segment(examples, cfg.segment_frames, cfg.batch_size, m.config.n_mels, rng);
    const double lr = optim::lr_at(s + 1, cfg.optimizer);
    VocoderStepLosses v;

    const Tensor fake = m.generator(seg.mel);
    if (adversarial) {
      clear_grads(dp);
      const auto real_out = m.discriminate(seg.wave);
      const auto fake_out = m.discriminate(fake.detach());
      Tensor d_loss = Tensor::scalar(0.0);
      for (std::size_t k = 0; k < real_out.size(); ++k)
        d_loss = add(d_loss, add(mean_sq(real_out[k].score, 1.0), mean_sq(fake_out[k].score, 0.0)));
      d_loss.backward();
      optim::ranger_step(dp, state.opt_d, cfg.optimizer, lr);
      v.d_loss = d_loss.item();
    }

    clear_grads(gp);
    clear_grads(dp);
    Tensor target_mel;
    {
      NoGradGuard ng;
      target_mel = mel_loss.mel(seg.wave);
    }
    const Tensor g_mel = mean_all(abs(sub(mel_loss.mel(fake), target_mel)));
    Tensor g_total = scale(g_mel, cfg.lambda_mel);
    if (adversarial) {
      std::vector<DiscOutput> real_out;
      {
        NoGradGuard ng;
        real_out = m.discriminate(seg.wave);
      }
      const auto fake_out = m.discriminate(fake);
      Tensor adv = Tensor::scalar(0.0), fm = Tensor::scalar(0.0);
      for (std::size_t k = 0; k < fake_out.size(); ++k) {
        adv = add(adv, mean_sq(fake_out[k].score, 1.0));
        for (std::size_t l = 0; l < fake_out[k].features.size(); ++l)
          fm = add(fm, mean_all(abs(sub(fake_out[k].features[l], real_out[k].features[l]))));
      }
      g_total = add(add(g_total, adv), scale(fm, cfg.lambda_fm));
      v.g_adv = adv.item();
      v.g_fm = fm.item();
    }
    g_total.backward();
    optim::ranger_step(gp, state.opt_g, cfg.optimizer, lr);
    clear_grads(gp);
    clear_grads(dp);

    v.g_mel = g_mel.item();
    v.g_total = g_total.item();
    if (!std::isfinite(v.g_total) || !std::isfinite(v.d_loss)) throw NumericError("non-finite vocoder loss");
    v.step = state.opt_g.step;
    out.push_back(v);
    if (on_step) on_step(v, state);
  }
  return out;
}

void save_vocoder(const std::string& path, const VocoderTrainState& state, const nlohmann::json& extra) {
  nlohmann::json meta = extra;
  meta["kind"] = "vocoder";
  meta["config"] = state.model.config.to_json();
  meta["step"] = state.opt_g.step;
  nn::ParamList t = state.model.params();
  state.opt_g.export_to(t);
  nn::ParamList d;
  state.opt_d.export_to(d);
  for (auto& [name, tensor] : d) t.emplace_back("optd." + name.substr(4), tensor);
  save_archive(path, meta, t);
}

VocoderTrainState load_vocoder(const std::string& path, nlohmann::json* meta) {
  const Archive a = load_archive(path);
  if (a.meta.value("kind", "") != "vocoder") throw ConfigError(path + " is not a vocoder checkpoint");
  VocoderTrainState st;
  st.model = Vocoder(VocoderConfig::from_json(a.meta.at("config")), 0);
  restore_params(a, st.model.params());
  st.opt_g = optim::RangerState::import_from(a);
  Archive d;
  for (const auto& [name, t] : a.tensors)
    if (name.rfind("optd.", 0) == 0) d.tensors.emplace("opt." + name.substr(5), t);
  st.opt_d = optim::RangerState::import_from(d);
  if (meta) *meta = a.meta;
  return st;
}

double reconstruction_l1(const Vocoder& model, const std::vector<VocoderExample>& examples) {
  if (examples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& e : examples) {
    const auto wave = generate(e.mel, model.config, &model);
    const auto back = dsp::compute_mel(wave, kOutputRate);
    const int F = std::min(back.n_frames, e.mel.n_frames);
    double s = 0.0;
    for (int t = 0; t < F; ++t)
      for (int k = 0; k < e.mel.n_mels; ++k) s += std::abs(back.at(t, k) - e.mel.at(t, k));
    total += s / (static_cast<double>(F) * e.mel.n_mels);
  }
  return total / examples.size();
}

// ---------------------------------------------------------------------------

constexpr int kNnlsIters = 200;
constexpr double kMomentum = 0.99;

std::vector<double> griffin_lim(const dsp::MelSpec& mel, int iters) {
  if (mel.sample_rate != dsp::kMelSampleRate) throw DataError("griffin_lim expects mels computed at 16 kHz");
  const int F = mel.n_frames;
  const std::size_t n_out = static_cast<std::size_t>(F) * kSamplesPerFrame;
  if (F < 2) return std::vector<double>(n_out, 0.0);
  dsp::MelConfig cfg;
  cfg.n_mels = mel.n_mels;
  const int bins = cfg.n_fft / 2 + 1;
  const auto fb = dsp::mel_filterbank(cfg);
  const Eigen::MatrixXd fbm = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(fb.data(), cfg.n_mels, bins);
  const Eigen::MatrixXd pinv = fbm.completeOrthogonalDecomposition().pseudoInverse();  // [bins, n_mels]
  const Eigen::MatrixXd gram = fbm.transpose() * fbm;

  std::vector<double> mag(static_cast<std::size_t>(F) * bins);
  Eigen::VectorXd e(cfg.n_mels);
  for (int t = 0; t < F; ++t) {
    for (int k = 0; k < cfg.n_mels; ++k) e[k] = std::exp(mel.at(t, k));
    // Clamped pseudo-inverse start, then nonnegative least-squares refinement
    // by multiplicative updates so empty mel bands stay empty.
    Eigen::VectorXd lin = (pinv * e).cwiseMax(1e-8);
    const Eigen::VectorXd num = fbm.transpose() * e;
    for (int r = 0; r < kNnlsIters; ++r) lin = lin.cwiseProduct(num.cwiseQuotient(gram * lin + Eigen::VectorXd::Constant(bins, 1e-12)));
    for (int b = 0; b < bins; ++b) mag[static_cast<std::size_t>(t) * bins + b] = lin[b];
  }

  const int n16 = (F - 1) * cfg.hop;
  std::vector<dsp::Complex> spec(mag.size());
  for (std::size_t i = 0; i < mag.size(); ++i) spec[i] = {mag[i], 0.0};
  std::vector<double> x = dsp::istft(spec, F, n16, cfg);
  // Fast Griffin-Lim: extrapolate the consistent spectrum with momentum
  // before projecting back onto the target magnitudes.
  std::vector<dsp::Complex> prev(spec.size(), dsp::Complex(0.0, 0.0));
  for (int it = 0; it < iters; ++it) {
    const auto s = dsp::stft(x, cfg);
    for (std::size_t i = 0; i < spec.size(); ++i) {
      const dsp::Complex c = s[i] + kMomentum * (s[i] - prev[i]);
      prev[i] = s[i];
      const double a = std::abs(c);
      spec[i] = a > 0 ? mag[i] * c / a : dsp::Complex(mag[i], 0.0);
    }
    x = dsp::istft(spec, F, n16, cfg);
  }
  auto y = dsp::resample(x, cfg.sample_rate, kOutputRate);
  y.resize(n_out, 0.0);
  return clip_unit(std::move(y));
}

std::vector<double> generate(const dsp::MelSpec& mel, const VocoderConfig& cfg, const Vocoder* model) {
  if (mel.sample_rate != dsp::kMelSampleRate) throw DataError("vocoder input mel must be computed at 16 kHz");
  if (cfg.mode == Mode::griffinlim) return griffin_lim(mel, cfg.griffin_lim_iters);
  if (!model) throw ConfigError("gan vocoder mode needs a vocoder checkpoint");
  if (mel.n_mels != model->config.n_mels) throw ConfigError("mel has " + std::to_string(mel.n_mels) + " bins, vocoder expects " + std::to_string(model->config.n_mels));
  NoGradGuard ng;
  const Tensor w = model->generator(Tensor::from({1, mel.n_frames, mel.n_mels}, mel.values));
  return clip_unit(w.values());
}

std::vector<double> finalize(std::span<const double> wave24k) {
  auto y = dsp::resample(wave24k, kOutputRate, kFinalRate);
  double peak = 0.0;
  for (double v : y) peak = std::max(peak, std::abs(v));
  if (peak > 0.0)
    for (double& v : y) v *= 0.95 / peak;
  return y;
}

}  // namespace abtts::vocoder
