#pragma once

// Chapter scripts to utterance manifests: timestamp-driven segmentation,
// narration/dialogue labelling, the enhancement hook and JSONL manifests.

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace abtts::corpus {

struct SentenceSpan {
  double start_s = 0.0;
  double end_s = 0.0;
  std::string text;
};

struct Paragraph {
  std::string text;
  std::vector<SentenceSpan> spans;
};

struct ChapterScript {
  std::string chapter_id;
  std::vector<Paragraph> paragraphs;
};

enum class NdLabel { narration, dialogue };
const char* nd_name(NdLabel l);
NdLabel parse_nd(const std::string& s);

struct SegmentationConfig {
  double min_len = 5.0;
  double max_len = 20.0;
  int min_dialogue_chars = 4;
  int context_window = 5;  // neighbours recorded on each side
};

struct UtteranceRecord {
  std::string utt_id;
  std::string chapter_id;
  std::string speaker_id;
  std::string text;
  std::vector<NdLabel> nd_label;  // one per merged sentence span
  double start_s = 0.0;
  double end_s = 0.0;
  std::string audio_path;
  std::vector<std::string> context_prev_ids;
  std::vector<std::string> context_next_ids;
  // Longer than max_len: a single over-long sentence, or short sentences
  // that could only be kept by merging them into a neighbour.
  bool oversize = false;
  // Shorter than min_len; only produced for chapters shorter than min_len.
  bool undersize = false;

  double duration() const { return end_s - start_s; }
  /// Dialogue when most labelled characters are dialogue.
  NdLabel dominant_nd() const;
  bool operator==(const UtteranceRecord&) const = default;
};

/// Byte range [begin, end) of the paragraph.
struct NdSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  NdLabel label = NdLabel::narration;
  bool operator==(const NdSpan&) const = default;
};

struct NdResult {
  std::vector<NdSpan> spans;
  std::vector<std::string> warnings;
};

NdResult classify_nd(const std::string& paragraph, const SegmentationConfig& cfg = {});

/// Majority label over the characters of `text`, classified as a paragraph.
NdLabel sentence_label(const std::string& text, const SegmentationConfig& cfg = {});

std::vector<UtteranceRecord> segment_chapter(const ChapterScript& chapter, const SegmentationConfig& cfg,
                                             const std::string& speaker_id);

/// True if the text ends with . ! ? or an ellipsis, ignoring trailing
/// closing quotes and spaces.
bool ends_with_eos(const std::string& text);

// ---------------------------------------------------------------------------

class Enhancer {
 public:
  virtual ~Enhancer() = default;
  virtual std::vector<double> process(std::span<const double> wave, int sample_rate) const = 0;
};

class IdentityEnhancer : public Enhancer {
 public:
  std::vector<double> process(std::span<const double> wave, int) const override { return {wave.begin(), wave.end()}; }
};

/// Zeroes STFT bins whose magnitude falls below a fixed threshold.
class SpectralGateEnhancer : public Enhancer {
 public:
  explicit SpectralGateEnhancer(double threshold = 2.0) : threshold_(threshold) {}
  std::vector<double> process(std::span<const double> wave, int sample_rate) const override;

 private:
  double threshold_;
};

std::unique_ptr<Enhancer> make_enhancer(const std::string& name);

// ---------------------------------------------------------------------------

ChapterScript read_chapter(const std::string& path);
void write_chapter(const std::string& path, const ChapterScript& chapter);

void write_manifest(const std::string& path, const std::vector<UtteranceRecord>& records);
std::vector<UtteranceRecord> read_manifest(const std::string& path);

}  // namespace abtts::corpus
