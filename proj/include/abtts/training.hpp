#pragma once

// The six-term acoustic loss, the training loop with resumable checkpoints,
// and speaker adaptation of a multi-speaker model.

#include <functional>
#include <string>
#include <vector>

#include "abtts/acoustic.hpp"
#include "abtts/dsp.hpp"
#include "abtts/optim.hpp"

namespace abtts::training {

struct LossBreakdown {
  Tensor l_gst, l_phone, l_pitch, l_dur, l_mel, l_ssim;
  Tensor total;
};

/// Plain numbers of one step, as logged.
struct LossValues {
  long step = 0;
  double l_gst = 0, l_phone = 0, l_pitch = 0, l_dur = 0, l_mel = 0, l_ssim = 0, total = 0;
  double lr = 0;
};
LossValues values_of(const LossBreakdown& l);

struct LossTargets {
  Tensor mel;           // [B, T, n_mels]
  Tensor pitch;         // [B, N]
  Tensor log_duration;  // [B, N], log(1 + frames)
  std::vector<int> phone_lengths, frame_lengths;
};
LossTargets make_targets(const acoustic::ItemRefs& batch);

/// Differentiable SSIM of two [H, W] images; the dynamic range is taken
/// from the values and not differentiated. Matches dsp::ssim.
Tensor ssim_tensor(const Tensor& a, const Tensor& b, const dsp::SsimConfig& cfg = {});

/// Reference GST / prosody enter the predictor terms as constants. Throws
/// NumericError naming the first non-finite term.
LossBreakdown composite_loss(const acoustic::TrainOutput& pred, const LossTargets& targets);

struct TrainConfig {
  int steps = 2000;
  int batch_size = 4;
  int checkpoint_every = 500;
  double grad_clip = 1.0;  // 0 disables clipping
  std::uint64_t seed = 1;
  optim::OptimizerConfig optimizer;
  /// Only parameters whose names start with one of these are updated; empty
  /// means all.
  std::vector<std::string> trainable_prefixes;
};

/// Model plus optimiser state; everything needed to resume bit-exactly.
struct TrainState {
  acoustic::AcousticModel model;
  optim::RangerState optimizer;
};

/// Batches of similar frame count, in an order fixed by (seed, epoch).
std::vector<std::vector<int>> make_batches(const std::vector<acoustic::AcousticItem>& items, int batch_size);
std::vector<int> batch_order(int n_batches, std::uint64_t seed, long epoch);

using StepCallback = std::function<void(const LossValues&, const TrainState&)>;

/// Runs until optimizer.step reaches cfg.steps (or `max_new_steps` more
/// steps, if non-negative). Returns the losses of the steps run.
std::vector<LossValues> train(TrainState& state, const std::vector<acoustic::AcousticItem>& items, const TrainConfig& cfg,
                              const StepCallback& on_step = {}, long max_new_steps = -1);

void save_train_state(const std::string& path, const TrainState& state, const nlohmann::json& extra = nlohmann::json::object());
TrainState load_train_state(const std::string& path, nlohmann::json* meta = nullptr);

/// CSV with header step,l_gst,l_phone,l_pitch,l_dur,l_mel,l_ssim,total,lr.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path, bool append = false);
  void write(const LossValues& v);

 private:
  std::string path_;
};

/// Mean L1 of the final-block mel against the targets with teacher forcing,
/// and the mean SSIM over items.
struct ReconstructionScore {
  double mel_l1 = 0.0;
  double ssim = 0.0;
};
ReconstructionScore teacher_forced_score(const acoustic::AcousticModel& model, const std::vector<acoustic::AcousticItem>& items);

// ---------------------------------------------------------------------------

enum class AdaptMode { all, subset, embedding_only };
AdaptMode parse_adapt_mode(const std::string& s);
/// Parameter-name prefixes updated in each mode.
std::vector<std::string> adapt_prefixes(AdaptMode mode);

struct AdaptConfig {
  AdaptMode mode = AdaptMode::subset;
  int steps = 200;
  double lr_scale = 0.1;
  TrainConfig train;
};

struct AdaptResult {
  acoustic::AcousticModel model;
  std::vector<std::string> speakers;
  std::vector<LossValues> curve;
};

/// Adds `target_speaker` as a new embedding row, assigns it to every item and
/// fine-tunes. The name must not already be one of `source_speakers`.
AdaptResult adapt(const acoustic::AcousticModel& source, const std::vector<std::string>& source_speakers,
                  const std::string& target_speaker, std::vector<acoustic::AcousticItem> items, const AdaptConfig& cfg);

}  // namespace abtts::training
