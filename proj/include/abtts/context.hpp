#pragma once

// Paragraph-level context: token features, a recurrent aggregator over the
// sentence window, the context-aware sentence embedding used as the emotion
// vector, and the projection of all of it onto phones.

#include <string>
#include <vector>

#include "abtts/corpus.hpp"
#include "abtts/frontend.hpp"
#include "abtts/nn.hpp"
#include "abtts/tensor.hpp"

namespace abtts::context {

constexpr int kSyntacticDim = 3 + frontend::kNumPos;
constexpr int kMaxCseTokens = 256;

/// neutral, joy, anger, sorrow, fear, surprise
const std::vector<std::string>& emotion_tags();
int emotion_index(const std::string& tag);  // -1 when unknown

struct ContextWindow {
  std::string center;
  corpus::NdLabel center_nd = corpus::NdLabel::narration;
  std::vector<std::string> prev;  // oldest first
  std::vector<std::string> next;
};

/// Window for records[i] built from its context id lists.
ContextWindow window_for(const std::vector<corpus::UtteranceRecord>& records, std::size_t i);

struct TokenContextFeatures {
  std::vector<std::string> tokens;
  Tensor semantic;   // [n_tokens, d_sem]
  Tensor syntactic;  // [n_tokens, kSyntacticDim]
};

/// Syntactic row: [codepoints / 10, index / n_tokens, guillemet depth, POS one-hot].
TokenContextFeatures extract_token_features(const std::string& sentence,
                                            const std::vector<frontend::TokenAnnotation>& annotations,
                                            const frontend::EmbeddingProvider& embedder);

/// Mean token embedding [d_sem]; zeros (and a warning) for a sentence without words.
Tensor sentence_embedding(const std::string& sentence, const frontend::EmbeddingProvider& embedder);

/// Sentence embeddings of prev, center, next stacked in order [n, d_sem].
Tensor window_matrix(const ContextWindow& window, const frontend::EmbeddingProvider& embedder);

/// Bidirectional GRU over sentence embeddings; the final forward and
/// backward states are projected to d_ctx.
class ContextAggregator {
 public:
  ContextAggregator() = default;
  ContextAggregator(int d_sem, int hidden, int d_ctx, nn::Rng& rng);
  /// [n, d_sem] -> [d_ctx]
  Tensor operator()(const Tensor& sentences) const;
  void collect(const std::string& prefix, nn::ParamList& out) const;
  int d_ctx() const { return proj.out_features(); }

  nn::Gru fwd, bwd;
  nn::Linear proj;
};

Tensor encode_context(const ContextWindow& window, const frontend::EmbeddingProvider& embedder,
                      const ContextAggregator& aggregator);

struct CseVector {
  Tensor cse;  // [d_sem]
  bool is_narration = true;
  int embedded_tokens = 0;
};

/// Token stream chosen for the CSE: the center sentence kept whole (its tail
/// cut only if it alone exceeds the cap) and the context trimmed from the
/// outer ends, balancing both sides, to at most kMaxCseTokens tokens.
struct CseStream {
  std::vector<std::string> tokens;
  int center_begin = 0;
  int center_end = 0;
};
CseStream cse_stream(const ContextWindow& window, int max_tokens = kMaxCseTokens);

CseVector compute_cse(const ContextWindow& window, const frontend::EmbeddingProvider& embedder);

/// Word index -> token indices. Frontend word tokens map one to one.
using WordTokenAlignment = std::vector<std::vector<int>>;
WordTokenAlignment identity_alignment(int n_words);

/// Rows [n_phones, d_model]: projection of (mean token features of the
/// phone's word, state). Phones of a sentence without words use zero token
/// features.
Tensor upsample_to_phones(const TokenContextFeatures& features, const Tensor& state, const frontend::PhoneSequence& phones,
                          const WordTokenAlignment& alignment, const nn::Linear& projection);

// ---------------------------------------------------------------------------

struct EmotionExample {
  ContextWindow window;
  int emotion = 0;
};

/// JSON Lines with `context_sentences`, `center_index`, `emotion_tag`. The
/// center is taken as dialogue.
std::vector<EmotionExample> read_emotion_set(const std::string& path, int window = 5);

struct EmotionTrainConfig {
  int epochs = 300;
  double lr = 1e-2;
  double holdout = 0.2;
  std::uint64_t seed = 1;
};

struct EmotionReport {
  double accuracy = 0.0;
  int heldout = 0;
  std::vector<double> loss_curve;
};

/// One dense layer over the CSE, zero-initialised so the first loss is ln C.
nn::Linear train_emotion_head(const std::vector<EmotionExample>& examples, const frontend::EmbeddingProvider& embedder,
                              const EmotionTrainConfig& cfg, EmotionReport* report = nullptr);

// ---------------------------------------------------------------------------

/// Everything the acoustic model needs from the text side of one utterance.
/// The embedder is frozen, so these are computed once and cached.
struct UtteranceContext {
  TokenContextFeatures tokens;
  Tensor sentences;  // window_matrix
  Tensor cse;        // [d_sem]
  bool is_narration = true;
  int cse_tokens = 0;
};

UtteranceContext build_utterance_context(const ContextWindow& window,
                                         const std::vector<frontend::TokenAnnotation>& annotations,
                                         const frontend::EmbeddingProvider& embedder);
void save_utterance_context(const std::string& path, const UtteranceContext& c);
UtteranceContext load_utterance_context(const std::string& path);

}  // namespace abtts::context
