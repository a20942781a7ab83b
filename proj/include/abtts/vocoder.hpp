#pragma once

// Mel-to-waveform conversion: a small GAN generator (transposed-convolution
// upsampling with residual dilated convolutions) trained against toy
// multi-period and multi-scale discriminators, plus a Griffin-Lim fallback
// that needs no training. Mels are 16 kHz features; output is 24 kHz, 300
// samples per frame.

#include <cstdint>
#include <functional>
#include <span>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "abtts/dsp.hpp"
#include "abtts/nn.hpp"
#include "abtts/optim.hpp"

namespace abtts::vocoder {

inline constexpr int kOutputRate = 24000;
inline constexpr int kFinalRate = 22050;
inline constexpr int kSamplesPerFrame = 300;

enum class Mode { gan, griffinlim };
enum class Discriminators { none, toy };
Mode parse_mode(const std::string& s);
Discriminators parse_discriminators(const std::string& s);

struct VocoderConfig {
  std::vector<int> upsample_factors{5, 5, 4, 3};
  int channels = 64;  // after the input conv; halved per stage, at least 4
  int resblock_kernel = 3;
  std::vector<int> resblock_dilations{1, 3};
  int n_mels = dsp::kNumMels;
  Discriminators discriminators = Discriminators::toy;
  Mode mode = Mode::gan;
  int griffin_lim_iters = 60;

  static VocoderConfig toy();
  static VocoderConfig full();
  /// Throws ConfigError unless the factors multiply to 300.
  void validate() const;
  nlohmann::json to_json() const;
  static VocoderConfig from_json(const nlohmann::json& j, const VocoderConfig& base);
  static VocoderConfig from_json(const nlohmann::json& j) { return from_json(j, VocoderConfig{}); }
};

class Generator {
 public:
  Generator() = default;
  Generator(const VocoderConfig& cfg, nn::Rng& rng);
  /// [B, T, n_mels] -> [B, 300 T], values in (-1, 1).
  Tensor operator()(const Tensor& mel) const;
  void collect(const std::string& prefix, nn::ParamList& out) const;

  std::vector<int> factors;
  nn::Conv1d conv_pre;
  std::vector<nn::Linear> up;                   // kernel == stride transposed convs
  std::vector<std::vector<nn::Conv1d>> res;     // per stage, one conv per dilation
  nn::Conv1d conv_post;
};

struct DiscOutput {
  Tensor score;                  // [B, *]
  std::vector<Tensor> features;  // every hidden activation
};

/// Folds the wave into [B, L/p, p] and convolves along the folded time axis.
class PeriodDiscriminator {
 public:
  PeriodDiscriminator() = default;
  PeriodDiscriminator(int period, nn::Rng& rng);
  DiscOutput operator()(const Tensor& wave) const;
  void collect(const std::string& prefix, nn::ParamList& out) const;
  int period = 2;
  std::vector<nn::Conv2d> convs;
  nn::Conv2d post;
};

/// Average-pools the wave by `scale`, then strided 1-D convolutions.
class ScaleDiscriminator {
 public:
  ScaleDiscriminator() = default;
  ScaleDiscriminator(int scale, nn::Rng& rng);
  DiscOutput operator()(const Tensor& wave) const;
  void collect(const std::string& prefix, nn::ParamList& out) const;
  int scale = 1;
  std::vector<nn::Conv1d> convs;
  nn::Conv1d post;
};

struct Vocoder {
  VocoderConfig config;
  Generator generator;
  std::vector<PeriodDiscriminator> mpd;  // periods 2, 3
  std::vector<ScaleDiscriminator> msd;   // scales 1, 2

  Vocoder() = default;
  Vocoder(const VocoderConfig& cfg, std::uint64_t seed);
  nn::ParamList generator_params() const;
  nn::ParamList discriminator_params() const;
  nn::ParamList params() const;
  std::vector<DiscOutput> discriminate(const Tensor& wave) const;
};

/// Differentiable log-mel of 24 kHz waves [B, n]: resample to 16 kHz, frame,
/// DFT, magnitude, filterbank, log floor. Matches dsp::compute_mel.
class MelLoss {
 public:
  explicit MelLoss(int n_samples_24k, const dsp::MelConfig& cfg = {});
  Tensor mel(const Tensor& wave) const;  // [B, frames, n_mels]
  int frames() const { return frames_; }

 private:
  SparseMap resample_, frame_;
  Tensor cos_, sin_, fb_t_;
  int frames_ = 0, n_fft_ = 0;
};

// ---------------------------------------------------------------------------

/// One training pair: 16 kHz-feature mel and the 24 kHz wave it came from.
struct VocoderExample {
  std::string utt_id;
  dsp::MelSpec mel;
  dsp::Wave wave;
};

struct VocoderTrainConfig {
  int steps = 500;
  int segment_frames = 16;
  int batch_size = 2;
  double lambda_fm = 2.0;
  double lambda_mel = 45.0;
  std::uint64_t seed = 1;
  optim::OptimizerConfig optimizer = default_optimizer();
  static optim::OptimizerConfig default_optimizer();
};

struct VocoderStepLosses {
  long step = 0;
  double d_loss = 0, g_adv = 0, g_fm = 0, g_mel = 0, g_total = 0;
};

struct VocoderTrainState {
  Vocoder model;
  optim::RangerState opt_g, opt_d;
};

using VocoderStepCallback = std::function<void(const VocoderStepLosses&, const VocoderTrainState&)>;

/// Throws DataError naming the utterance when a pair is not (16 kHz mel,
/// 24 kHz wave).
void validate_examples(const std::vector<VocoderExample>& examples);

/// Runs until opt_g.step reaches cfg.steps.
std::vector<VocoderStepLosses> train_vocoder(VocoderTrainState& state, const std::vector<VocoderExample>& examples,
                                             const VocoderTrainConfig& cfg, const VocoderStepCallback& on_step = {});

void save_vocoder(const std::string& path, const VocoderTrainState& state, const nlohmann::json& extra = nlohmann::json::object());
VocoderTrainState load_vocoder(const std::string& path, nlohmann::json* meta = nullptr);

/// Mean L1 between the input mel and the mel of the generated wave.
double reconstruction_l1(const Vocoder& model, const std::vector<VocoderExample>& examples);

// ---------------------------------------------------------------------------

/// Pseudo-inverse filterbank magnitudes, zero-phase start, `iters` rounds of
/// phase recovery at 16 kHz, then resampled and fitted to 300 samples/frame.
std::vector<double> griffin_lim(const dsp::MelSpec& mel, int iters = 60);

/// 24 kHz wave of exactly 300 * n_frames samples in [-1, 1]. Gan mode needs
/// a generator.
std::vector<double> generate(const dsp::MelSpec& mel, const VocoderConfig& cfg, const Vocoder* model);

/// Resample 24 kHz -> 22.05 kHz and scale the peak to 0.95.
std::vector<double> finalize(std::span<const double> wave24k);

}  // namespace abtts::vocoder
