#pragma once

// Run configuration and the batch commands behind the CLI: corpus
// preparation with a content-hashed feature cache, training drivers,
// adaptation, synthesis and evaluation.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "abtts/acoustic.hpp"
#include "abtts/corpus.hpp"
#include "abtts/dsp.hpp"
#include "abtts/frontend.hpp"
#include "abtts/training.hpp"
#include "abtts/vocoder.hpp"

namespace abtts::pipeline {

enum class Preset { toy, full };
Preset parse_preset(const std::string& s);
const char* preset_name(Preset p);

struct Paths {
  std::string corpus;         // corpus.json, chapters, audio, alignments
  std::string lexicon;
  std::string features;       // prepare output
  std::string checkpoints;
  std::string output;         // synthesis and reports
  std::string frontend_data;  // pos/liaison/polyphone .conll, homographs.jsonl
};

struct RunConfig {
  Preset preset = Preset::toy;
  std::uint64_t seed = 1;
  Paths paths;
  std::string embedder = "toy";
  std::string enhancer = "identity";
  int threads = 0;  // prepare workers; 0 = hardware concurrency
  corpus::SegmentationConfig segmentation;
  acoustic::AcousticConfig acoustic;
  training::TrainConfig training;
  vocoder::VocoderConfig vocoder;
  vocoder::VocoderTrainConfig vocoder_training;
  training::AdaptConfig adapt;
  frontend::HeadTrainConfig frontend_training;

  static RunConfig defaults(Preset p);
  /// Preset from the "preset" key, then every section's keys override it.
  /// Relative paths are resolved against `base_dir`. Unknown keys throw.
  static RunConfig from_json(const nlohmann::json& j, const std::string& base_dir);
  static RunConfig load(const std::string& path);
  nlohmann::json to_json() const;
  /// Propagates the top-level seed into every component seed.
  void apply_seed(std::uint64_t s);
};

// ---------------------------------------------------------------------------

struct PrepareReport {
  int chapters = 0;
  int utterances = 0;
  int computed = 0;
  int cached = 0;
  int narration = 0;
  int dialogue = 0;
  int oversize = 0;
  int synthesized_alignments = 0;
};

/// Segments every chapter, labels narration/dialogue, and caches per
/// utterance: 16 kHz mel, phone durations, phone log-F0, the 24 kHz wave and
/// the text context. Cached entries whose input hash is unchanged are kept.
PrepareReport prepare(const RunConfig& cfg, std::ostream* log = nullptr);

/// Frontend from the configured lexicon and embedder; heads from
/// checkpoints/frontend.heads when present, otherwise seeded untrained heads.
frontend::Frontend load_frontend(const RunConfig& cfg);

struct Dataset {
  std::vector<corpus::UtteranceRecord> records;
  std::vector<acoustic::AcousticItem> items;
  std::vector<std::string> speakers;  // index is the model speaker id
  std::vector<std::string> phones;    // index is the model phone id
  std::map<std::string, dsp::PitchStats> pitch_stats;
};

/// Loads prepared features. `speakers` fixes the speaker-id order (other
/// speakers found in the kept data are appended); `only` keeps the listed
/// speakers.
Dataset load_dataset(const RunConfig& cfg, const std::vector<std::string>& speakers = {},
                     const std::vector<std::string>& only = {});

std::vector<vocoder::VocoderExample> load_vocoder_examples(const RunConfig& cfg, const std::vector<std::string>& only = {});

// ---------------------------------------------------------------------------

std::string acoustic_checkpoint(const RunConfig& cfg);
std::string vocoder_checkpoint(const RunConfig& cfg);
std::string frontend_checkpoint(const RunConfig& cfg);

struct TrainAcousticOptions {
  bool resume = false;
  long max_new_steps = -1;
  std::vector<std::string> speakers;  // restrict the data; empty = all
};

struct TrainAcousticReport {
  long steps = 0;
  double first_total = 0.0, last_total = 0.0;
  training::ReconstructionScore teacher_forced;
  std::vector<training::LossValues> curve;
};

/// Writes checkpoints/acoustic.ckpt (periodically and at the end) and
/// checkpoints/acoustic_metrics.csv.
TrainAcousticReport train_acoustic(const RunConfig& cfg, const TrainAcousticOptions& opt = {}, std::ostream* log = nullptr);

struct TrainVocoderOptions {
  std::string init;                  // fine-tune from this checkpoint
  std::vector<std::string> speakers;  // restrict the data (per-track fine-tuning)
  std::string out;                   // default checkpoints/vocoder.ckpt
};

struct TrainVocoderReport {
  long steps = 0;
  double first_mel = 0.0, last_mel = 0.0;
  std::vector<vocoder::VocoderStepLosses> curve;
};

TrainVocoderReport train_vocoder(const RunConfig& cfg, const TrainVocoderOptions& opt = {}, std::ostream* log = nullptr);

struct AdaptOptions {
  std::string source;   // source acoustic checkpoint (required)
  std::string speaker;  // target speaker in the prepared data
  int train_count = 10;  // utterances used for adaptation; the rest validate
  std::string out;       // default checkpoints/adapted_<speaker>.ckpt
};

struct AdaptReport {
  int train_items = 0, validation_items = 0;
  double validation_l1_before = 0.0, validation_l1_after = 0.0;
  std::vector<training::LossValues> curve;
};

AdaptReport adapt(const RunConfig& cfg, const AdaptOptions& opt, std::ostream* log = nullptr);

frontend::HeadTrainReport train_frontend(const RunConfig& cfg, std::ostream* log = nullptr);

// ---------------------------------------------------------------------------

struct SynthesizeOptions {
  std::string text_file;
  std::string speaker;  // default: the checkpoint's first speaker
  std::optional<vocoder::Mode> mode;  // default: cfg.vocoder.mode
  std::string acoustic;  // default: checkpoints/acoustic.ckpt
  std::string out_dir;   // default: paths.output
  int sample_rate = vocoder::kFinalRate;  // 22050 or 24000
  bool dump_features = false;
};

struct SynthesizedUtterance {
  std::string utt_id;
  std::string text;
  corpus::NdLabel nd = corpus::NdLabel::narration;
  std::string wav_path;
  int frames = 0;
  int samples = 0;
};

/// One WAV per sentence plus index.jsonl; with dump_features also
/// <utt>.features.json carrying the CSE and predicted prosody.
std::vector<SynthesizedUtterance> synthesize(const RunConfig& cfg, const SynthesizeOptions& opt, std::ostream* log = nullptr);

struct EvalOptions {
  std::string acoustic;  // default: checkpoints/acoustic.ckpt
  std::vector<std::string> utterances;  // default: every prepared utterance
  std::string report;    // default: <output>/eval.json
};

/// Keys: homograph_accuracy, mel_l1, ssim, duration_l1, pitch_l1 (free
/// running), plus teacher_forced_mel_l1 and teacher_forced_ssim.
nlohmann::json evaluate(const RunConfig& cfg, const EvalOptions& opt, std::ostream* log = nullptr);

}  // namespace abtts::pipeline
