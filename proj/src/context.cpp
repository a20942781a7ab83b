#include "abtts/context.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "abtts/archive.hpp"
#include "abtts/error.hpp"
#include "abtts/optim.hpp"
#include "abtts/text.hpp"

namespace abtts::context {

using frontend::EmbeddingProvider;

const std::vector<std::string>& emotion_tags() {
  static const std::vector<std::string> tags = {"neutral", "joy", "anger", "sorrow", "fear", "surprise"};
  return tags;
}

int emotion_index(const std::string& tag) {
  const auto& t = emotion_tags();
  const auto it = std::find(t.begin(), t.end(), tag);
  return it == t.end() ? -1 : static_cast<int>(it - t.begin());
}

ContextWindow window_for(const std::vector<corpus::UtteranceRecord>& records, std::size_t i) {
  std::map<std::string, const corpus::UtteranceRecord*> by_id;
  for (const auto& r : records) by_id[r.utt_id] = &r;
  const auto& c = records.at(i);
  ContextWindow w{c.text, c.dominant_nd(), {}, {}};
  auto text_of = [&](const std::string& id) -> const std::string& {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError(c.utt_id + ": context utterance '" + id + "' is not in the manifest");
    if (it->second->chapter_id != c.chapter_id) throw DataError(c.utt_id + ": context utterance '" + id + "' is from another chapter");
    return it->second->text;
  };
  for (const auto& id : c.context_prev_ids) w.prev.push_back(text_of(id));
  for (const auto& id : c.context_next_ids) w.next.push_back(text_of(id));
  return w;
}

TokenContextFeatures extract_token_features(const std::string& sentence,
                                            const std::vector<frontend::TokenAnnotation>& annotations,
                                            const EmbeddingProvider& embedder) {
  TokenContextFeatures f;
  std::vector<int> depth;
  int d = 0;
  for (const auto& t : frontend::tokenize(sentence)) {
    if (t.punct) {
      if (t.text == "\xC2\xAB") ++d;
      if (t.text == "\xC2\xBB") d = std::max(0, d - 1);
      continue;
    }
    f.tokens.push_back(t.text);
    depth.push_back(d);
  }
  const int n = static_cast<int>(f.tokens.size());
  if (static_cast<int>(annotations.size()) != n)
    throw DataError("annotation count " + std::to_string(annotations.size()) + " does not match " + std::to_string(n) +
                    " tokens in: " + sentence);
  std::vector<double> syn(static_cast<std::size_t>(n) * kSyntacticDim, 0.0);
  for (int i = 0; i < n; ++i) {
    double* row = syn.data() + static_cast<std::size_t>(i) * kSyntacticDim;
    row[0] = text::codepoint_count(f.tokens[i]) / 10.0;
    row[1] = static_cast<double>(i) / n;
    row[2] = depth[i];
    const int p = frontend::pos_index(annotations[i].pos);
    if (p >= 0) row[3 + p] = 1.0;
  }
  f.syntactic = Tensor::from({n, kSyntacticDim}, std::move(syn));
  f.semantic = n > 0 ? embedder.embed(f.tokens) : Tensor::zeros({0, embedder.dim()});
  return f;
}

namespace {

Tensor mean_rows(const Tensor& m, int begin, int end) {
  const int d = m.dim(1);
  std::vector<double> out(d, 0.0);
  const auto v = m.data();
  for (int i = begin; i < end; ++i)
    for (int j = 0; j < d; ++j) out[j] += v[static_cast<std::size_t>(i) * d + j];
  if (end > begin)
    for (double& x : out) x /= (end - begin);
  return Tensor::from({d}, std::move(out));
}

}  // namespace

Tensor sentence_embedding(const std::string& sentence, const EmbeddingProvider& embedder) {
  const auto tokens = frontend::word_tokens(sentence);
  if (tokens.empty()) {
    spdlog::warn("sentence without words gets a zero embedding: '{}'", sentence);
    return Tensor::zeros({embedder.dim()});
  }
  return mean_rows(embedder.embed(tokens), 0, static_cast<int>(tokens.size()));
}

Tensor window_matrix(const ContextWindow& window, const EmbeddingProvider& embedder) {
  std::vector<Tensor> rows;
  auto push = [&](const std::string& s) { rows.push_back(reshape(sentence_embedding(s, embedder), {1, embedder.dim()})); };
  for (const auto& s : window.prev) push(s);
  push(window.center);
  for (const auto& s : window.next) push(s);
  return concat(rows, 0);
}

ContextAggregator::ContextAggregator(int d_sem, int hidden, int d_ctx, nn::Rng& rng)
    : fwd(d_sem, hidden, rng), bwd(d_sem, hidden, rng), proj(2 * hidden, d_ctx, rng) {}

Tensor ContextAggregator::operator()(const Tensor& sentences) const {
  if (sentences.rank() != 2 || sentences.dim(0) < 1)
    throw ShapeError("context aggregator expects [n >= 1, d], got " + shape_str(sentences.shape()));
  const int n = sentences.dim(0);
  const Tensor x = reshape(sentences, {1, n, sentences.dim(1)});
  const Tensor f = fwd(x, {n}).final, b = bwd(x, {n}, true).final;
  return reshape(proj(concat({f, b}, 1)), {d_ctx()});
}

void ContextAggregator::collect(const std::string& prefix, nn::ParamList& out) const {
  fwd.collect(prefix + ".fwd", out);
  bwd.collect(prefix + ".bwd", out);
  proj.collect(prefix + ".proj", out);
}

Tensor encode_context(const ContextWindow& window, const EmbeddingProvider& embedder, const ContextAggregator& aggregator) {
  return aggregator(window_matrix(window, embedder));
}

CseStream cse_stream(const ContextWindow& window, int max_tokens) {
  auto words = [](const std::vector<std::string>& sentences) {
    std::vector<std::string> out;
    for (const auto& s : sentences)
      for (auto& w : frontend::word_tokens(s)) out.push_back(std::move(w));
    return out;
  };
  std::vector<std::string> center = frontend::word_tokens(window.center);
  if (static_cast<int>(center.size()) > max_tokens) {
    spdlog::warn("center sentence has {} tokens, keeping the first {}", center.size(), max_tokens);
    center.resize(max_tokens);
  }
  const auto prev = words(window.prev), next = words(window.next);
  const int budget = max_tokens - static_cast<int>(center.size());
  int np = static_cast<int>(prev.size()), nn_ = static_cast<int>(next.size());
  // Drop the outermost token of the longer side until the stream fits.
  while (np + nn_ > budget) (np >= nn_ ? np : nn_)--;
  CseStream s;
  s.tokens.assign(prev.end() - np, prev.end());
  s.center_begin = static_cast<int>(s.tokens.size());
  s.tokens.insert(s.tokens.end(), center.begin(), center.end());
  s.center_end = static_cast<int>(s.tokens.size());
  s.tokens.insert(s.tokens.end(), next.begin(), next.begin() + nn_);
  return s;
}

CseVector compute_cse(const ContextWindow& window, const EmbeddingProvider& embedder) {
  CseVector v;
  v.cse = Tensor::zeros({embedder.dim()});
  v.is_narration = window.center_nd == corpus::NdLabel::narration;
  if (v.is_narration) return v;
  const CseStream s = cse_stream(window);
  if (s.center_end == s.center_begin) {
    spdlog::warn("dialogue sentence without words gets a zero emotion vector: '{}'", window.center);
    return v;
  }
  v.embedded_tokens = static_cast<int>(s.tokens.size());
  v.cse = mean_rows(embedder.embed(s.tokens), s.center_begin, s.center_end);
  return v;
}

WordTokenAlignment identity_alignment(int n_words) {
  WordTokenAlignment a(n_words);
  for (int i = 0; i < n_words; ++i) a[i] = {i};
  return a;
}

Tensor upsample_to_phones(const TokenContextFeatures& features, const Tensor& state, const frontend::PhoneSequence& phones,
                          const WordTokenAlignment& alignment, const nn::Linear& projection) {
  const int n_tokens = static_cast<int>(features.tokens.size());
  const int d_tok = features.semantic.dim(1) + features.syntactic.dim(1);
  const int d_ctx = state.dim(0);
  if (projection.in_features() != d_tok + d_ctx)
    throw ShapeError("context projection expects " + std::to_string(projection.in_features()) + " inputs, features give " +
                     std::to_string(d_tok + d_ctx));
  const Tensor tok = n_tokens > 0 ? concat({features.semantic, features.syntactic}, 1) : Tensor::zeros({0, d_tok});

  // Word rows: mean of the word's token rows.
  const int n_words = static_cast<int>(alignment.size());
  std::vector<double> words(static_cast<std::size_t>(n_words) * d_tok, 0.0);
  const auto tv = tok.data();
  for (int w = 0; w < n_words; ++w) {
    const auto& idx = alignment[w];
    if (idx.empty()) throw DataError("word " + std::to_string(w) + " has no tokens");
    for (int t : idx) {
      if (t < 0 || t >= n_tokens) throw DataError("word " + std::to_string(w) + " maps to missing token " + std::to_string(t));
      for (int j = 0; j < d_tok; ++j) words[static_cast<std::size_t>(w) * d_tok + j] += tv[static_cast<std::size_t>(t) * d_tok + j];
    }
    for (int j = 0; j < d_tok; ++j) words[static_cast<std::size_t>(w) * d_tok + j] /= static_cast<double>(idx.size());
  }
  const Tensor word_rows = Tensor::from({n_words, d_tok}, std::move(words));

  std::vector<int> index;
  for (const auto& p : phones.phones) {
    if (n_words == 0) {
      index.push_back(-1);
      continue;
    }
    if (p.word_index < 0 || p.word_index >= n_words)
      throw DataError("phone '" + p.symbol + "' belongs to word " + std::to_string(p.word_index) + " which has no tokens");
    index.push_back(p.word_index);
  }
  const int n_ph = static_cast<int>(index.size());
  const Tensor per_phone = n_words > 0 ? gather_rows(word_rows, index) : Tensor::zeros({n_ph, d_tok});
  const Tensor st = reshape(repeat_mid(reshape(state, {1, d_ctx}), n_ph), {n_ph, d_ctx});
  return projection(concat({per_phone, st}, 1));
}

// ---------------------------------------------------------------------------

std::vector<EmotionExample> read_emotion_set(const std::string& path, int window) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<EmotionExample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    for (const char* key : {"context_sentences", "center_index", "emotion_tag"})
      if (!j.contains(key)) throw DataError(where + ": missing field '" + key + "'");
    const auto sentences = j.at("context_sentences").get<std::vector<std::string>>();
    const int c = j.at("center_index").get<int>();
    if (c < 0 || c >= static_cast<int>(sentences.size())) throw DataError(where + ": center_index out of range");
    const std::string tag = j.at("emotion_tag").get<std::string>();
    const int e = emotion_index(tag);
    if (e < 0) throw DataError(where + ": unknown emotion tag '" + tag + "'");
    EmotionExample ex;
    ex.emotion = e;
    ex.window.center = sentences[c];
    ex.window.center_nd = corpus::NdLabel::dialogue;
    for (int i = std::max(0, c - window); i < c; ++i) ex.window.prev.push_back(sentences[i]);
    for (int i = c + 1; i < std::min<int>(sentences.size(), c + 1 + window); ++i) ex.window.next.push_back(sentences[i]);
    out.push_back(std::move(ex));
  }
  return out;
}

nn::Linear train_emotion_head(const std::vector<EmotionExample>& examples, const EmbeddingProvider& embedder,
                              const EmotionTrainConfig& cfg, EmotionReport* report) {
  if (examples.empty()) throw DataError("emotion training set is empty");
  const int C = static_cast<int>(emotion_tags().size()), d = embedder.dim();
  nn::Linear head;
  head.weight = Tensor::zeros({d, C}).set_requires_grad(true);
  head.bias = Tensor::zeros({C}).set_requires_grad(true);

  std::vector<std::size_t> idx(examples.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t n_hold = examples.size() >= 2 ? static_cast<std::size_t>(cfg.holdout * examples.size()) : 0;

  auto batch = [&](std::size_t from, std::size_t to, std::vector<int>& y) {
    std::vector<Tensor> rows;
    for (std::size_t k = from; k < to; ++k) {
      auto w = examples[idx[k]].window;
      w.center_nd = corpus::NdLabel::dialogue;
      rows.push_back(reshape(compute_cse(w, embedder).cse, {1, d}));
      y.push_back(examples[idx[k]].emotion);
    }
    return concat(rows, 0);
  };
  std::vector<int> y_train, y_hold;
  const Tensor x_train = batch(n_hold, examples.size(), y_train);
  const Tensor x_hold = n_hold > 0 ? batch(0, n_hold, y_hold) : Tensor();

  nn::ParamList params;
  head.collect("emotion", params);
  optim::OptimizerConfig oc;
  oc.beta1 = 0.9;
  optim::RangerState state;
  std::vector<double> curve;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (auto& [n, p] : params) p.zero_grad();
    Tensor loss = nn::cross_entropy(head(x_train), y_train);
    curve.push_back(loss.item());
    loss.backward();
    optim::ranger_step(params, state, oc, cfg.lr);
  }
  if (report) {
    NoGradGuard ng;
    const bool held = n_hold > 0;
    const Tensor logits = head(held ? x_hold : x_train);
    const auto& y = held ? y_hold : y_train;
    int ok = 0;
    const auto v = logits.data();
    for (std::size_t i = 0; i < y.size(); ++i) {
      const auto row = v.subspan(i * C, C);
      ok += std::max_element(row.begin(), row.end()) - row.begin() == y[i];
    }
    report->accuracy = static_cast<double>(ok) / y.size();
    report->heldout = static_cast<int>(n_hold);
    report->loss_curve = std::move(curve);
  }
  return head;
}

// ---------------------------------------------------------------------------

UtteranceContext build_utterance_context(const ContextWindow& window,
                                         const std::vector<frontend::TokenAnnotation>& annotations,
                                         const EmbeddingProvider& embedder) {
  UtteranceContext c;
  c.tokens = extract_token_features(window.center, annotations, embedder);
  c.sentences = window_matrix(window, embedder);
  const CseVector v = compute_cse(window, embedder);
  c.cse = v.cse;
  c.is_narration = v.is_narration;
  c.cse_tokens = v.embedded_tokens;
  return c;
}

void save_utterance_context(const std::string& path, const UtteranceContext& c) {
  nlohmann::json meta = {{"kind", "utterance_context"},
                         {"tokens", c.tokens.tokens},
                         {"is_narration", c.is_narration},
                         {"cse_tokens", c.cse_tokens},
                         {"d_sem", c.cse.dim(0)}};
  nn::ParamList t = {{"sentences", c.sentences}, {"cse", c.cse}};
  if (!c.tokens.tokens.empty()) {
    t.emplace_back("semantic", c.tokens.semantic);
    t.emplace_back("syntactic", c.tokens.syntactic);
  }
  save_archive(path, meta, t);
}

UtteranceContext load_utterance_context(const std::string& path) {
  const Archive a = load_archive(path);
  if (a.meta.value("kind", "") != "utterance_context") throw DataError(path + ": not an utterance context file");
  UtteranceContext c;
  c.tokens.tokens = a.meta.at("tokens").get<std::vector<std::string>>();
  c.is_narration = a.meta.at("is_narration").get<bool>();
  c.cse_tokens = a.meta.at("cse_tokens").get<int>();
  c.sentences = a.at("sentences");
  c.cse = a.at("cse");
  const int d = a.meta.at("d_sem").get<int>();
  if (c.tokens.tokens.empty()) {
    c.tokens.semantic = Tensor::zeros({0, d});
    c.tokens.syntactic = Tensor::zeros({0, kSyntacticDim});
  } else {
    c.tokens.semantic = a.at("semantic");
    c.tokens.syntactic = a.at("syntactic");
  }
  return c;
}

}  // namespace abtts::context
