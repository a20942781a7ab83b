#pragma once

// Duration-based non-autoregressive acoustic model: Conformer phone encoder,
// speaker / narration-dialogue / emotion conditioning, GST and per-phone
// prosody reference encoders with their predictors, pitch and duration
// predictors, length regulation and a Conformer decoder that emits a mel
// prediction after every block.
//
// All batched tensors are padded: phone-level [B, N, ...] with per-item phone
// counts, frame-level [B, T, ...] with per-item frame counts.

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "abtts/context.hpp"
#include "abtts/frontend.hpp"
#include "abtts/nn.hpp"
#include "abtts/tensor.hpp"

namespace abtts::acoustic {

struct AcousticConfig {
  int n_blocks = 2;
  int d_model = 64;
  int conv_ff_hidden = 128;
  int n_heads = 2;
  int n_mels = 80;
  int n_style_tokens = 10;
  int d_style = 64;
  int d_prosody = 16;
  int n_speakers = 2;
  int n_phones = 64;
  int conv_kernel = 7;
  // Text-side context.
  int d_sem = 48;
  int d_ctx = 32;
  int ctx_hidden = 32;
  // Reference encoders and predictors.
  int ref_channels = 8;
  int ref_gru_hidden = 32;
  int prosody_ref_dim = 32;
  int gst_gru_hidden = 32;
  int gst_bottleneck = 16;
  int prosody_gru_hidden = 32;
  int predictor_channels = 64;
  int predictor_kernel = 3;

  static AcousticConfig toy();
  static AcousticConfig full();
  /// Throws ConfigError when a dimension is inconsistent.
  void validate() const;
  nlohmann::json to_json() const;
  /// Keys present in `j` override `base`; unknown keys are an error.
  static AcousticConfig from_json(const nlohmann::json& j, const AcousticConfig& base);
  static AcousticConfig from_json(const nlohmann::json& j) { return from_json(j, AcousticConfig{}); }
};

/// One utterance. Targets are only needed for training.
struct AcousticItem {
  std::string utt_id;
  std::vector<int> phone_ids;
  std::vector<bool> silence;        // per phone; only these may get 0 frames
  frontend::PhoneSequence phones;   // word indices for context upsampling
  std::optional<context::UtteranceContext> context;
  int speaker = 0;
  int nd = 0;  // 0 narration, 1 dialogue

  std::vector<int> durations;
  std::vector<double> pitch;  // normalised log-F0 per phone, 0 unvoiced
  Tensor mel;                 // [n_frames, n_mels]

  int n_phones() const { return static_cast<int>(phone_ids.size()); }
  int n_frames() const { return mel.defined() ? mel.dim(0) : 0; }
};

using ItemRefs = std::vector<const AcousticItem*>;

/// Repeats phone rows by their durations: [B, N, D] -> [B, max_b sum, D],
/// zero beyond each item's total. An item whose durations are all zero is an error.
Tensor length_regulate(const Tensor& hidden, const std::vector<std::vector<int>>& durations);

/// round(exp(pred) - 1), at least 1 frame for non-silence phones and 0 for silences.
std::vector<int> durations_from_log(std::span<const double> log_pred, const std::vector<bool>& silence);

struct GstOutput {
  Tensor gst;      // [B, d_style]
  Tensor weights;  // [B, heads, n_style_tokens]
};

struct Overrides {
  std::optional<Tensor> gst;      // [B, d_style]
  std::optional<Tensor> prosody;  // [B, N, d_prosody]
};

struct TrainOutput {
  std::vector<Tensor> mel_blocks;  // n_blocks x [B, T, n_mels]
  Tensor pitch_pred;               // [B, N]
  Tensor log_duration_pred;        // [B, N]
  Tensor gst_pred, gst_ref;        // [B, d_style]
  Tensor prosody_pred, prosody_ref;  // [B, N, d_prosody]
  Tensor decoder_input;            // [B, T, d_model]
  std::vector<int> phone_lengths, frame_lengths;
};

struct InferOutput {
  std::vector<Tensor> mel_blocks;  // n_blocks x [T, n_mels]
  std::vector<int> durations;
  std::vector<double> pitch;
  Tensor gst;          // [1, d_style]
  Tensor prosody;      // [1, N, d_prosody]
  Tensor decoder_input;  // [1, T, d_model]
  Tensor mel() const { return mel_blocks.back(); }
};

class AcousticModel {
 public:
  AcousticModel() = default;
  AcousticModel(const AcousticConfig& cfg, std::uint64_t seed);

  const AcousticConfig& config() const { return cfg_; }
  void collect(nn::ParamList& out) const;
  nn::ParamList params() const;

  /// Phone-level context rows [n_phones, d_model] for one item; zeros when
  /// the item carries no context.
  Tensor context_matrix(const AcousticItem& item) const;

  Tensor conformer_encode(const std::vector<std::vector<int>>& phone_ids, const std::vector<Tensor>& context) const;
  Tensor condition(const Tensor& hidden, const std::vector<int>& lengths, const std::vector<int>& speakers,
                   const std::vector<int>& nds, const Tensor& cse) const;
  GstOutput gst_reference(const Tensor& mel, const std::vector<int>& frame_lengths) const;
  Tensor gst_predict(const Tensor& hidden, const std::vector<int>& lengths) const;
  Tensor prosody_reference(const Tensor& mel, const std::vector<int>& frame_lengths,
                           const std::vector<std::vector<int>>& durations, int n_phones) const;
  Tensor prosody_predict(const Tensor& hidden, const std::vector<int>& lengths, const Tensor& gst) const;
  Tensor predict_pitch(const Tensor& hidden, const std::vector<int>& lengths) const;
  Tensor predict_duration(const Tensor& hidden, const std::vector<int>& lengths) const;
  Tensor decoder_input(const Tensor& hidden, const std::vector<int>& lengths, const Tensor& pitch, const Tensor& gst,
                       const Tensor& prosody, const std::vector<std::vector<int>>& durations) const;
  std::vector<Tensor> decode(const Tensor& frame_hidden, const std::vector<int>& frame_lengths) const;

  TrainOutput forward_train(const ItemRefs& batch, const Overrides& overrides = {}) const;
  InferOutput forward_infer(const AcousticItem& item) const;

  /// Appends a speaker row initialised to the mean of the existing rows;
  /// returns the new speaker id.
  int add_speaker();

  // Parameters, public for checkpoints, freezing and tests.
  nn::Embedding phone_emb;
  context::ContextAggregator ctx_agg;
  nn::Linear ctx_proj;
  std::vector<nn::ConformerBlock> encoder;
  nn::Embedding speaker_emb, nd_emb;
  nn::Linear cse_proj;

  std::vector<nn::Conv2d> ref_convs;
  nn::Gru ref_gru;
  nn::Linear gst_query, gst_key;
  Tensor style_tokens;  // [n_style_tokens, d_style]

  nn::Gru gst_pred_gru;
  nn::Linear gst_pred_down, gst_pred_up;

  nn::Linear pros_ref_in;
  nn::ConformerBlock pros_ref_block;
  nn::Linear pros_ref_out;

  nn::Gru pros_gru1, pros_gru2;
  nn::Linear pros_out;

  struct VariancePredictor {
    nn::Conv1d conv1, conv2;
    nn::LayerNorm norm1, norm2;
    nn::Linear head;
    void collect(const std::string& prefix, nn::ParamList& out) const;
  };
  VariancePredictor pitch_predictor, duration_predictor;
  nn::Conv1d pitch_embed;
  nn::Linear gst_proj, prosody_proj;

  std::vector<nn::ConformerBlock> decoder;
  std::vector<nn::Linear> mel_heads;

 private:
  Tensor run_predictor(const VariancePredictor& p, const Tensor& hidden, const std::vector<int>& lengths) const;
  AcousticConfig cfg_;
};

/// Checkpoint archive: meta {kind "acoustic", config, plus `extra`}.
void save_acoustic(const std::string& path, const AcousticModel& model, const nlohmann::json& extra = nlohmann::json::object());
AcousticModel load_acoustic(const std::string& path, nlohmann::json* meta = nullptr);

}  // namespace abtts::acoustic
