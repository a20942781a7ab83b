#pragma once

// Self-contained synthetic audiobook corpus: random French phone scripts
// rendered as sine-composite "speech" (formant-weighted harmonics for voiced
// phones, fixed inharmonic partials for unvoiced ones) with exact
// frame-level alignments. Every word has one pronunciation and no liaison, so
// the phone sequence of the text never depends on the annotation heads.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "abtts/corpus.hpp"
#include "abtts/frontend.hpp"

namespace abtts::gencorpus {

struct Voice {
  double f0 = 120.0;          // Hz at the start of an utterance
  double formant_scale = 1.0;
};

/// Voice of the i-th synthetic speaker.
Voice speaker_voice(int index);

struct GenCorpusConfig {
  int utterances = 20;
  int speakers = 2;
  /// Utterances per speaker; when set it also fixes the speaker count.
  /// Empty spreads `utterances` evenly over `speakers`.
  std::vector<int> per_speaker;
  std::uint64_t seed = 1;
  corpus::SegmentationConfig segmentation = toy_segmentation();

  static corpus::SegmentationConfig toy_segmentation();
};

struct GenCorpusResult {
  std::vector<std::string> utt_ids;
  std::vector<std::string> speakers;
  int total_frames = 0;
};

/// Lexicon used by the generator: corpus words plus a few liaison words and
/// two homograph pairs that only appear in the frontend training files.
frontend::Lexicon corpus_lexicon();

/// 24 kHz samples for phones occupying `durations` mel frames. The result has
/// 300 * (sum - 1) samples so that its 16 kHz mel has exactly `sum` frames.
std::vector<double> render(const std::vector<std::string>& phones, const std::vector<int>& durations, const Voice& voice,
                           std::mt19937_64& rng);

/// Writes corpus.json, chapters/, audio/ (24 kHz), alignments.tsv,
/// lexicon.tsv, frontend/ training sets, text/input.txt and a toy config.json.
GenCorpusResult write_corpus(const std::string& out_dir, const GenCorpusConfig& cfg);

}  // namespace abtts::gencorpus
