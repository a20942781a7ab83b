#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <sstream>

#include "abtts/archive.hpp"
#include "abtts/error.hpp"
#include "abtts/frontend.hpp"
#include "abtts/text.hpp"

namespace abtts::frontend {

namespace {

// Own row, then left and right neighbour rows.
Tensor contextualise(const std::vector<std::vector<double>>& rows, int base) {
  const int n = static_cast<int>(rows.size());
  std::vector<double> out(static_cast<std::size_t>(n) * 3 * base, 0.0);
  for (int i = 0; i < n; ++i) {
    double* dst = out.data() + static_cast<std::size_t>(i) * 3 * base;
    std::copy(rows[i].begin(), rows[i].end(), dst);
    if (i > 0) std::copy(rows[i - 1].begin(), rows[i - 1].end(), dst + base);
    if (i + 1 < n) std::copy(rows[i + 1].begin(), rows[i + 1].end(), dst + 2 * base);
  }
  return Tensor::from({n, 3 * base}, std::move(out));
}

}  // namespace

ToyEmbedder::ToyEmbedder(int base_dim, std::uint64_t seed, int table_rows) : base_dim_(base_dim), rows_(table_rows) {
  if (base_dim < 1 || table_rows < 1) throw ConfigError("toy embedder needs positive sizes");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  table_.resize(static_cast<std::size_t>(rows_) * base_dim_);
  for (double& v : table_) v = normal(rng);
}

std::vector<double> ToyEmbedder::row(const std::string& token) const {
  const std::size_t r = text::fnv1a(text::to_lower(token)) % static_cast<std::uint64_t>(rows_);
  const double* p = table_.data() + r * base_dim_;
  return {p, p + base_dim_};
}

Tensor ToyEmbedder::embed(const std::vector<std::string>& tokens) const {
  std::vector<std::vector<double>> rows;
  for (const auto& t : tokens) rows.push_back(row(t));
  return contextualise(rows, base_dim_);
}

FileEmbedder::FileEmbedder(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::stringstream ss(line);
    std::string tok;
    if (!(ss >> tok)) continue;
    std::vector<double> v;
    double x;
    while (ss >> x) v.push_back(x);
    if (lineno == 1 && v.size() == 1 && std::all_of(tok.begin(), tok.end(), ::isdigit)) continue;  // "count dim" header
    if (v.empty()) throw DataError(path + ":" + std::to_string(lineno) + ": token without a vector");
    if (base_dim_ == 0) base_dim_ = static_cast<int>(v.size());
    if (static_cast<int>(v.size()) != base_dim_)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(base_dim_) + " values");
    vectors_[tok] = std::move(v);
  }
  if (base_dim_ == 0) throw DataError(path + ": no vectors");
}

Tensor FileEmbedder::embed(const std::vector<std::string>& tokens) const {
  std::vector<std::vector<double>> rows;
  for (const auto& t : tokens) {
    auto it = vectors_.find(t);
    if (it == vectors_.end()) it = vectors_.find(text::to_lower(t));
    rows.push_back(it != vectors_.end() ? it->second : std::vector<double>(base_dim_, 0.0));
  }
  return contextualise(rows, base_dim_);
}

std::unique_ptr<EmbeddingProvider> make_embedder(const std::string& spec) {
  if (spec.rfind("file:", 0) == 0) return std::make_unique<FileEmbedder>(spec.substr(5));
  if (spec == "toy") return std::make_unique<ToyEmbedder>();
  if (spec.rfind("toy:", 0) == 0) return std::make_unique<ToyEmbedder>(std::stoi(spec.substr(4)));
  throw ConfigError("unknown embedder '" + spec + "' (expected toy, toy:<dim> or file:<path>)");
}

// ---------------------------------------------------------------------------

AnnotationHeads::AnnotationHeads(int embedding_dim, int n_polyphone_classes, std::uint64_t seed) {
  nn::Rng rng(seed);
  pos = nn::Linear(embedding_dim, kNumPos, rng);
  liaison = nn::Linear(embedding_dim, 2, rng);
  polyphone = nn::Linear(embedding_dim, std::max(1, n_polyphone_classes), rng);
}

void AnnotationHeads::collect(nn::ParamList& out) const {
  pos.collect("pos", out);
  liaison.collect("liaison", out);
  polyphone.collect("polyphone", out);
}

void AnnotationHeads::save(const std::string& path) const {
  nn::ParamList ps;
  collect(ps);
  save_archive(path, {{"kind", "frontend_heads"}, {"embedding_dim", embedding_dim()}, {"n_polyphone_classes", n_polyphone_classes()}},
               ps);
}

AnnotationHeads AnnotationHeads::load(const std::string& path) {
  const Archive a = load_archive(path);
  if (a.meta.value("kind", "") != "frontend_heads") throw ConfigError(path + " is not a frontend checkpoint");
  AnnotationHeads h(a.meta.at("embedding_dim").get<int>(), a.meta.at("n_polyphone_classes").get<int>(), 0);
  nn::ParamList ps;
  h.collect(ps);
  restore_params(a, ps);
  return h;
}

namespace {

int argmax_row(const Tensor& logits, int r, int limit) {
  const int c = logits.dim(1);
  const auto d = logits.data();
  int best = 0;
  for (int j = 1; j < std::min(c, limit); ++j)
    if (d[static_cast<std::size_t>(r) * c + j] > d[static_cast<std::size_t>(r) * c + best]) best = j;
  return best;
}

}  // namespace

std::vector<TokenAnnotation> predict_annotations(const std::vector<std::string>& tokens, const EmbeddingProvider& embedder,
                                                 const AnnotationHeads& heads, const Lexicon& lexicon) {
  if (embedder.dim() != heads.embedding_dim())
    throw ConfigError("embedding dimension " + std::to_string(embedder.dim()) + " does not match the heads (" +
                      std::to_string(heads.embedding_dim()) + ")");
  std::vector<TokenAnnotation> out;
  if (tokens.empty()) return out;
  NoGradGuard ng;
  const Tensor x = embedder.embed(tokens);
  const Tensor pl = heads.pos(x), ll = heads.liaison(x), yl = heads.polyphone(x);
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
    TokenAnnotation a;
    a.token = tokens[i];
    a.pos = pos_tags()[argmax_row(pl, i, kNumPos)];
    a.liaison = argmax_row(ll, i, 2) == 1 && lexicon.has_liaison(tokens[i]);
    if (lexicon.is_polyphone(tokens[i])) a.polyphone_class = argmax_row(yl, i, static_cast<int>(lexicon.find(tokens[i])->size()));
    out.push_back(std::move(a));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

int label_id(const std::string& label, Task task) {
  if (label == "_") return -1;
  switch (task) {
    case Task::pos:
      return pos_index(label) >= 0 ? pos_index(label) : -2;
    case Task::liaison:
      if (label == "0" || label == "no" || label == "false") return 0;
      if (label == "1" || label == "yes" || label == "true") return 1;
      return -2;
    case Task::polyphone:
      if (label.empty() || !std::all_of(label.begin(), label.end(), ::isdigit) || label.size() > 6) return -2;
      return std::stoi(label);
  }
  return -2;
}

const char* task_name(Task t) { return t == Task::pos ? "POS" : t == Task::liaison ? "liaison" : "polyphone"; }

struct Batch {
  Tensor x;
  std::vector<int> y;
};

Batch make_batch(const std::vector<LabeledSentence>& data, Task task, const EmbeddingProvider& embedder, int n_classes) {
  std::vector<double> rows;
  Batch b;
  for (const auto& s : data) {
    if (s.tokens.empty()) continue;
    const Tensor e = embedder.embed(s.tokens);
    const auto d = e.data();
    const int dim = e.dim(1);
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      const int y = label_id(s.labels[i], task);
      if (y == -1) continue;
      if (y < 0 || y >= n_classes)
        throw DataError(std::string(task_name(task)) + " label '" + s.labels[i] + "' at line " +
                        std::to_string(s.lines.empty() ? 0 : s.lines[i]) + " is outside the tag set");
      rows.insert(rows.end(), d.begin() + static_cast<long>(i) * dim, d.begin() + static_cast<long>(i + 1) * dim);
      b.y.push_back(y);
    }
  }
  if (!b.y.empty()) b.x = Tensor::from({static_cast<int>(b.y.size()), embedder.dim()}, std::move(rows));
  return b;
}

double accuracy(const nn::Linear& head, const Batch& b) {
  if (b.y.empty()) return 0.0;
  NoGradGuard ng;
  const Tensor l = head(b.x);
  int ok = 0;
  for (int i = 0; i < static_cast<int>(b.y.size()); ++i) ok += argmax_row(l, i, l.dim(1)) == b.y[i];
  return static_cast<double>(ok) / b.y.size();
}

Tensor batch_loss(const AnnotationHeads& heads, const Batch& pos, const Batch& liaison, const Batch& poly) {
  Tensor total = Tensor::scalar(0.0);
  if (!pos.y.empty()) total = add(total, nn::cross_entropy(heads.pos(pos.x), pos.y));
  if (!liaison.y.empty()) total = add(total, nn::cross_entropy(heads.liaison(liaison.x), liaison.y));
  if (!poly.y.empty()) total = add(total, nn::cross_entropy(heads.polyphone(poly.x), poly.y));
  return total;
}

}  // namespace

std::vector<LabeledSentence> read_conll(const std::string& path, Task task) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<LabeledSentence> out;
  LabeledSentence cur;
  std::string line;
  int lineno = 0;
  auto flush = [&] {
    if (!cur.tokens.empty()) out.push_back(std::move(cur));
    cur = {};
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) {
      flush();
      continue;
    }
    if (line[0] == '#') continue;
    std::stringstream ss(line);
    std::string tok, label, extra;
    if (!std::getline(ss, tok, '\t') || !std::getline(ss, label, '\t') || std::getline(ss, extra, '\t'))
      throw DataError(path + ":" + std::to_string(lineno) + ": expected token<TAB>label");
    if (label_id(label, task) == -2)
      throw DataError(path + ":" + std::to_string(lineno) + ": label '" + label + "' is outside the " + task_name(task) + " tag set");
    cur.tokens.push_back(tok);
    cur.labels.push_back(label);
    cur.lines.push_back(lineno);
  }
  flush();
  return out;
}

Tensor multitask_loss(const AnnotationHeads& heads, const EmbeddingProvider& embedder, const std::vector<LabeledSentence>& pos_data,
                      const std::vector<LabeledSentence>& liaison_data, const std::vector<LabeledSentence>& polyphone_data) {
  return batch_loss(heads, make_batch(pos_data, Task::pos, embedder, kNumPos),
                    make_batch(liaison_data, Task::liaison, embedder, 2),
                    make_batch(polyphone_data, Task::polyphone, embedder, heads.n_polyphone_classes()));
}

AnnotationHeads train_annotation_heads(const std::vector<LabeledSentence>& pos_data, const std::vector<LabeledSentence>& liaison_data,
                                       const std::vector<LabeledSentence>& polyphone_data, const EmbeddingProvider& embedder,
                                       int n_polyphone_classes, const HeadTrainConfig& cfg, HeadTrainReport* report) {
  AnnotationHeads heads(embedder.dim(), n_polyphone_classes, cfg.seed);
  std::mt19937_64 rng(cfg.seed);
  // Sentence-level hold-out split per task; tiny sets are evaluated on the
  // training data instead.
  auto split = [&](const std::vector<LabeledSentence>& data) {
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n_hold = data.size() >= 2 ? static_cast<std::size_t>(cfg.holdout * data.size()) : 0;
    std::pair<std::vector<LabeledSentence>, std::vector<LabeledSentence>> out;
    for (std::size_t i = 0; i < idx.size(); ++i) (i < n_hold ? out.second : out.first).push_back(data[idx[i]]);
    return out;
  };
  const auto [pos_train, pos_hold] = split(pos_data);
  const auto [lia_train, lia_hold] = split(liaison_data);
  const auto [poly_train, poly_hold] = split(polyphone_data);
  const int P = heads.n_polyphone_classes();
  const Batch bp = make_batch(pos_train, Task::pos, embedder, kNumPos);
  const Batch bl = make_batch(lia_train, Task::liaison, embedder, 2);
  const Batch by = make_batch(poly_train, Task::polyphone, embedder, P);

  nn::ParamList params;
  heads.collect(params);
  optim::OptimizerConfig oc;
  oc.beta1 = 0.9;
  optim::RangerState state;
  std::vector<double> curve;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (auto& [n, p] : params) p.zero_grad();
    Tensor loss = batch_loss(heads, bp, bl, by);
    curve.push_back(loss.item());
    if (!loss.requires_grad()) break;  // nothing to learn from
    loss.backward();
    optim::ranger_step(params, state, oc, cfg.lr);
  }
  if (report) {
    auto eval = [&](const nn::Linear& head, const std::vector<LabeledSentence>& hold, const Batch& train, Task t, int classes,
                    double& acc, int& count) {
      const Batch b = hold.empty() ? Batch{} : make_batch(hold, t, embedder, classes);
      count = static_cast<int>(b.y.size());
      acc = count > 0 ? accuracy(head, b) : accuracy(head, train);
    };
    eval(heads.pos, pos_hold, bp, Task::pos, kNumPos, report->pos_accuracy, report->pos_heldout);
    eval(heads.liaison, lia_hold, bl, Task::liaison, 2, report->liaison_accuracy, report->liaison_heldout);
    eval(heads.polyphone, poly_hold, by, Task::polyphone, P, report->polyphone_accuracy, report->polyphone_heldout);
    report->loss_curve = curve;
  }
  return heads;
}

// ---------------------------------------------------------------------------

std::vector<TokenAnnotation> Frontend::annotate(const std::string& sentence) const {
  if (!embedder) throw ConfigError("frontend has no embedding provider");
  return predict_annotations(word_tokens(sentence), *embedder, heads, lexicon);
}

std::vector<HomographItem> read_homograph_testset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open homograph testset " + path);
  std::vector<HomographItem> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    try {
      const auto j = nlohmann::json::parse(line);
      HomographItem item;
      item.sentence = j.at("sentence").get<std::string>();
      item.target_word = j.at("target_word").get<std::string>();
      const auto& ep = j.at("expected_phones");
      if (ep.is_string()) {
        std::stringstream ss(ep.get<std::string>());
        std::string p;
        while (ss >> p) item.expected_phones.push_back(p);
      } else {
        item.expected_phones = ep.get<std::vector<std::string>>();
      }
      out.push_back(std::move(item));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  return out;
}

HomographReport eval_homographs(const std::vector<HomographItem>& testset, const Frontend& frontend) {
  if (testset.empty()) throw DataError("homograph testset is empty");
  HomographReport r;
  int resolvable = 0;
  for (const auto& item : testset) {
    ++r.total;
    const auto words = word_tokens(item.sentence);
    const std::string target = text::to_lower(item.target_word);
    int idx = -1;
    for (int i = 0; i < static_cast<int>(words.size()); ++i)
      if (text::to_lower(words[i]) == target) {
        idx = i;
        break;
      }
    if (idx < 0) {
      r.errors.push_back("target '" + item.target_word + "' not found in: " + item.sentence);
      continue;
    }
    ++resolvable;
    const auto seq = frontend.phonemize(item.sentence);
    const auto got = seq.word_phones(idx);
    if (got == item.expected_phones) {
      ++r.correct;
    } else {
      std::string g;
      for (const auto& p : got) g += (g.empty() ? "" : " ") + p;
      r.errors.push_back("'" + item.target_word + "' in \"" + item.sentence + "\" -> " + g);
    }
  }
  if (resolvable == 0) throw DataError("no homograph item could be resolved in its sentence");
  r.accuracy = static_cast<double>(r.correct) / r.total;
  for (const auto& e : r.errors) spdlog::debug("homograph: {}", e);
  return r;
}

}  // namespace abtts::frontend
