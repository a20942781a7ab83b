#pragma once

// French text frontend: normalisation, sentence splitting, lexicon G2P with a
// letter-to-sound fallback, and the multi-task token annotator (POS, liaison,
// pronunciation variant) over a pluggable embedding provider.

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "abtts/nn.hpp"
#include "abtts/optim.hpp"
#include "abtts/tensor.hpp"

namespace abtts::frontend {

/// The 17 Universal Dependencies part-of-speech tags.
const std::vector<std::string>& pos_tags();
int pos_index(const std::string& tag);  // -1 when unknown
constexpr int kNumPos = 17;

/// Built-in French IPA inventory (without silences).
const std::vector<std::string>& french_phones();

// ---------------------------------------------------------------------------

std::string normalize_text(const std::string& raw);
/// Cardinal in words, 0 <= n <= 999 999 (traditional hyphenation).
std::string number_to_words(long n);
/// Ordinal in words; feminine only changes "premier" to "première".
std::string ordinal_to_words(long n, bool feminine = false);

std::vector<std::string> split_sentences(const std::string& text);

struct Token {
  std::string text;
  bool punct = false;
};
/// Words (letters and apostrophe-elided prefixes such as "l'") and
/// punctuation marks; hyphens and whitespace separate words.
std::vector<Token> tokenize(const std::string& sentence);
std::vector<std::string> word_tokens(const std::string& sentence);

// ---------------------------------------------------------------------------

struct LexEntry {
  std::vector<std::string> phones;
  std::optional<std::string> pos;
  std::optional<std::string> liaison;  // "n", "t" or "z"
  bool operator==(const LexEntry&) const = default;
};

/// Lines are `word<TAB>pos<TAB>phones<TAB>liaison`, empty fields allowed.
/// `#phones<TAB>p q ...` extends the inventory, `#silence<TAB>sil sp`
/// declares the silence phones; other lines starting with '#' are comments.
class Lexicon {
 public:
  Lexicon();
  static Lexicon load(const std::string& path);
  void save(const std::string& path) const;

  void add(const std::string& word, LexEntry entry);
  void declare_silence(const std::string& phone);
  void declare_phone(const std::string& phone);

  const std::vector<LexEntry>* find(const std::string& word) const;
  bool is_polyphone(const std::string& word) const;
  bool has_liaison(const std::string& word) const;
  bool is_silence(const std::string& phone) const { return silence_.count(phone) > 0; }
  bool in_inventory(const std::string& phone) const { return inventory_.count(phone) > 0; }
  const std::string& pause_phone() const { return pause_; }
  const std::string& edge_phone() const { return edge_; }

  /// Sorted inventory including silences; the index is the phone id.
  std::vector<std::string> phone_list() const;
  int phone_id(const std::string& phone) const;
  std::size_t size() const { return entries_.size(); }
  const std::map<std::string, std::vector<LexEntry>>& entries() const { return entries_; }

 private:
  std::map<std::string, std::vector<LexEntry>> entries_;
  std::set<std::string> inventory_;
  std::set<std::string> silence_;
  std::string edge_ = "sil", pause_ = "sp";
};

/// Deterministic French letter-to-sound rules for out-of-vocabulary words.
std::vector<std::string> letter_to_sound(const std::string& word);

// ---------------------------------------------------------------------------

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual int dim() const = 0;
  /// Contextual embeddings [tokens.size(), dim()].
  virtual Tensor embed(const std::vector<std::string>& tokens) const = 0;
};

/// Hashed lookup into a fixed random table; each token's embedding is its own
/// row followed by the rows of its left and right neighbours (zeros at edges).
class ToyEmbedder : public EmbeddingProvider {
 public:
  explicit ToyEmbedder(int base_dim = 16, std::uint64_t seed = 7, int table_rows = 4096);
  int dim() const override { return 3 * base_dim_; }
  Tensor embed(const std::vector<std::string>& tokens) const override;
  std::vector<double> row(const std::string& token) const;

 private:
  int base_dim_, rows_;
  std::vector<double> table_;
};

/// Word vectors from a text file (`token v1 v2 ...`, optional `count dim`
/// header); unknown tokens get zeros. Context is added as in ToyEmbedder.
class FileEmbedder : public EmbeddingProvider {
 public:
  explicit FileEmbedder(const std::string& path);
  int dim() const override { return 3 * base_dim_; }
  Tensor embed(const std::vector<std::string>& tokens) const override;

 private:
  int base_dim_ = 0;
  std::map<std::string, std::vector<double>> vectors_;
};

std::unique_ptr<EmbeddingProvider> make_embedder(const std::string& spec);

// ---------------------------------------------------------------------------

struct TokenAnnotation {
  std::string token;
  std::string pos = "X";
  bool liaison = false;
  std::optional<int> polyphone_class;
};

class AnnotationHeads {
 public:
  AnnotationHeads() = default;
  AnnotationHeads(int embedding_dim, int n_polyphone_classes, std::uint64_t seed);
  int embedding_dim() const { return pos.in_features(); }
  int n_polyphone_classes() const { return polyphone.out_features(); }
  void collect(nn::ParamList& out) const;
  void save(const std::string& path) const;
  static AnnotationHeads load(const std::string& path);

  nn::Linear pos, liaison, polyphone;
};

std::vector<TokenAnnotation> predict_annotations(const std::vector<std::string>& tokens, const EmbeddingProvider& embedder,
                                                 const AnnotationHeads& heads, const Lexicon& lexicon);

/// One labelled sentence from a CoNLL-style file.
struct LabeledSentence {
  std::vector<std::string> tokens;
  std::vector<std::string> labels;  // "_" marks an unlabelled token
  std::vector<int> lines;
};

enum class Task { pos, liaison, polyphone };
/// `token<TAB>label` per line, blank line between sentences. Labels are
/// checked against the task's tag set.
std::vector<LabeledSentence> read_conll(const std::string& path, Task task);

struct HeadTrainConfig {
  int epochs = 200;
  double lr = 1e-2;
  double holdout = 0.2;
  std::uint64_t seed = 1;
};

struct HeadTrainReport {
  double pos_accuracy = 0, liaison_accuracy = 0, polyphone_accuracy = 0;
  int pos_heldout = 0, liaison_heldout = 0, polyphone_heldout = 0;
  std::vector<double> loss_curve;
};

/// Sum of the per-task mean cross-entropies over one set of batches.
Tensor multitask_loss(const AnnotationHeads& heads, const EmbeddingProvider& embedder,
                      const std::vector<LabeledSentence>& pos_data, const std::vector<LabeledSentence>& liaison_data,
                      const std::vector<LabeledSentence>& polyphone_data);

AnnotationHeads train_annotation_heads(const std::vector<LabeledSentence>& pos_data,
                                       const std::vector<LabeledSentence>& liaison_data,
                                       const std::vector<LabeledSentence>& polyphone_data, const EmbeddingProvider& embedder,
                                       int n_polyphone_classes, const HeadTrainConfig& cfg, HeadTrainReport* report = nullptr);

// ---------------------------------------------------------------------------

struct PhoneSequence {
  struct Phone {
    std::string symbol;
    int word_index = 0;
    bool silence = false;
  };
  std::vector<Phone> phones;
  std::vector<int> word_boundaries;  // index of each word's first phone
  std::vector<std::pair<int, std::string>> punctuation;  // (phone position, mark)

  std::vector<std::string> symbols() const;
  /// Phones belonging to word `w` (silences excluded).
  std::vector<std::string> word_phones(int w) const;
};

/// Annotations align with the sentence's word tokens; missing entries count
/// as default annotations. Liaison needs a vowel-initial next word.
/// Sentence-edge silences are added; pause
/// punctuation inside the sentence becomes a short pause phone.
PhoneSequence g2p(const std::string& sentence, const Lexicon& lexicon, const std::vector<TokenAnnotation>& annotations);

struct Frontend {
  Lexicon lexicon;
  std::shared_ptr<const EmbeddingProvider> embedder;
  AnnotationHeads heads;

  std::vector<TokenAnnotation> annotate(const std::string& sentence) const;
  PhoneSequence phonemize(const std::string& sentence) const { return g2p(sentence, lexicon, annotate(sentence)); }
};

struct HomographItem {
  std::string sentence;
  std::string target_word;
  std::vector<std::string> expected_phones;
};

struct HomographReport {
  double accuracy = 0.0;
  int correct = 0;
  int total = 0;
  std::vector<std::string> errors;
};

std::vector<HomographItem> read_homograph_testset(const std::string& path);
HomographReport eval_homographs(const std::vector<HomographItem>& testset, const Frontend& frontend);

}  // namespace abtts::frontend
