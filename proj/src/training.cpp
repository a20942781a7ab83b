#include "abtts/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "abtts/archive.hpp"
#include "abtts/error.hpp"

namespace abtts::training {

using acoustic::AcousticItem;
using acoustic::AcousticModel;

LossValues values_of(const LossBreakdown& l) {
  LossValues v;
  v.l_gst = l.l_gst.item();
  v.l_phone = l.l_phone.item();
  v.l_pitch = l.l_pitch.item();
  v.l_dur = l.l_dur.item();
  v.l_mel = l.l_mel.item();
  v.l_ssim = l.l_ssim.item();
  v.total = l.total.item();
  return v;
}

LossTargets make_targets(const acoustic::ItemRefs& batch) {
  LossTargets t;
  for (const auto* it : batch) {
    t.phone_lengths.push_back(it->n_phones());
    t.frame_lengths.push_back(it->n_frames());
  }
  const int B = static_cast<int>(batch.size());
  const int N = *std::max_element(t.phone_lengths.begin(), t.phone_lengths.end());
  const int T = *std::max_element(t.frame_lengths.begin(), t.frame_lengths.end());
  const int M = batch.front()->mel.dim(1);
  std::vector<double> mel(static_cast<std::size_t>(B) * T * M, 0.0), pitch(static_cast<std::size_t>(B) * N, 0.0),
      dur(static_cast<std::size_t>(B) * N, 0.0);
  for (int b = 0; b < B; ++b) {
    const auto* it = batch[b];
    const auto mv = it->mel.data();
    std::copy(mv.begin(), mv.end(), mel.begin() + static_cast<std::ptrdiff_t>(b) * T * M);
    for (int n = 0; n < it->n_phones(); ++n) {
      pitch[static_cast<std::size_t>(b) * N + n] = it->pitch[n];
      dur[static_cast<std::size_t>(b) * N + n] = std::log1p(static_cast<double>(it->durations[n]));
    }
  }
  t.mel = Tensor::from({B, T, M}, std::move(mel));
  t.pitch = Tensor::from({B, N}, std::move(pitch));
  t.log_duration = Tensor::from({B, N}, std::move(dur));
  return t;
}

Tensor ssim_tensor(const Tensor& a, const Tensor& b, const dsp::SsimConfig& cfg) {
  if (a.shape() != b.shape() || a.rank() != 2) throw ShapeError("ssim: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const int rows = a.dim(0), cols = a.dim(1);
  const auto av = a.data(), bv = b.data();
  const auto [amin, amax] = std::minmax_element(av.begin(), av.end());
  const auto [bmin, bmax] = std::minmax_element(bv.begin(), bv.end());
  const double range = std::max(*amax, *bmax) - std::min(*amin, *bmin);
  // Two equal constant images: every window is degenerate and scores 1.
  if (range == 0.0) return Tensor::scalar(1.0);
  const double c1 = (cfg.k1 * range) * (cfg.k1 * range), c2 = (cfg.k2 * range) * (cfg.k2 * range);
  const int side = dsp::ssim_window_side(rows, cols, cfg);
  const auto w = dsp::gaussian_window(side, cfg.sigma);
  auto f = [&](const Tensor& x) { return filter2d_valid(x, w, side, side); };
  const Tensor ma = f(a), mb = f(b);
  const Tensor maa = mul(ma, ma), mbb = mul(mb, mb), mab = mul(ma, mb);
  const Tensor va = sub(f(mul(a, a)), maa), vb = sub(f(mul(b, b)), mbb), cov = sub(f(mul(a, b)), mab);
  const Tensor num = mul(add_scalar(scale(mab, 2.0), c1), add_scalar(scale(cov, 2.0), c2));
  const Tensor den = mul(add_scalar(add(maa, mbb), c1), add_scalar(add(va, vb), c2));
  return mean_all(div(num, den));
}

namespace {

Tensor masked_l1(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  double count = 0.0;
  for (double m : mask.values()) count += m;
  if (count == 0.0) throw DataError("loss over an empty batch");
  return scale(sum_all(mul(abs(sub(pred, target)), mask)), 1.0 / count);
}

Tensor phone_mask(const std::vector<int>& lengths, int N) {
  return reshape(nn::time_mask(lengths, N, 1), {static_cast<int>(lengths.size()), N});
}

}  // namespace

LossBreakdown composite_loss(const acoustic::TrainOutput& pred, const LossTargets& t) {
  LossBreakdown l;
  const int B = t.mel.dim(0), T = t.mel.dim(1), M = t.mel.dim(2), N = t.pitch.dim(1);
  const Tensor pm = phone_mask(t.phone_lengths, N);
  l.l_gst = mean_all(abs(sub(pred.gst_pred, pred.gst_ref.detach())));
  l.l_phone = masked_l1(pred.prosody_pred, pred.prosody_ref.detach(), nn::time_mask(t.phone_lengths, N, pred.prosody_pred.dim(2)));
  l.l_pitch = masked_l1(pred.pitch_pred, t.pitch, pm);
  l.l_dur = masked_l1(pred.log_duration_pred, t.log_duration, pm);
  const Tensor fm = nn::time_mask(t.frame_lengths, T, M);
  l.l_mel = Tensor::scalar(0.0);
  for (const auto& m : pred.mel_blocks) l.l_mel = add(l.l_mel, masked_l1(m, t.mel, fm));
  const Tensor& last = pred.mel_blocks.back();
  Tensor ssim_sum = Tensor::scalar(0.0);
  for (int b = 0; b < B; ++b) {
    const int Tb = t.frame_lengths[b];
    auto item = [&](const Tensor& x) { return reshape(narrow(narrow(x, 0, b, 1), 1, 0, Tb), {Tb, M}); };
    ssim_sum = add(ssim_sum, ssim_tensor(item(last), item(t.mel)));
  }
  l.l_ssim = add_scalar(scale(ssim_sum, -1.0 / B), 1.0);
  l.total = add(add(add(add(add(l.l_gst, l.l_phone), l.l_pitch), l.l_dur), l.l_mel), l.l_ssim);
  const std::pair<const char*, const Tensor*> terms[] = {{"l_gst", &l.l_gst}, {"l_phone", &l.l_phone}, {"l_pitch", &l.l_pitch},
                                                         {"l_dur", &l.l_dur}, {"l_mel", &l.l_mel},     {"l_ssim", &l.l_ssim}};
  for (const auto& [name, term] : terms)
    if (!std::isfinite(term->item())) throw NumericError(std::string("non-finite loss term ") + name);
  return l;
}

// ---------------------------------------------------------------------------

std::vector<std::vector<int>> make_batches(const std::vector<AcousticItem>& items, int batch_size) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<int> idx(items.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return items[a].n_frames() < items[b].n_frames(); });
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < idx.size(); i += batch_size)
    out.emplace_back(idx.begin() + i, idx.begin() + std::min(idx.size(), i + batch_size));
  return out;
}

std::vector<int> batch_order(int n_batches, std::uint64_t seed, long epoch) {
  std::vector<int> order(n_batches);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<LossValues> train(TrainState& state, const std::vector<AcousticItem>& items, const TrainConfig& cfg,
                              const StepCallback& on_step, long max_new_steps) {
  if (items.empty()) throw DataError("training manifest is empty");
  std::string missing;
  for (const auto& it : items)
    if (it.durations.empty() || !it.mel.defined()) missing += (missing.empty() ? "" : ", ") + it.utt_id;
  if (!missing.empty()) throw DataError("missing prepared features for: " + missing);
  const auto batches = make_batches(items, cfg.batch_size);
  const int nb = static_cast<int>(batches.size());
  const nn::ParamList all = state.model.params();
  nn::ParamList params;
  for (const auto& p : all) {
    bool keep = cfg.trainable_prefixes.empty();
    for (const auto& prefix : cfg.trainable_prefixes) keep = keep || p.first.rfind(prefix, 0) == 0;
    if (keep) params.push_back(p);
  }
  if (params.empty()) throw ConfigError("no trainable parameters selected");

  std::vector<LossValues> out;
  long epoch_cached = -1;
  std::vector<int> order;
  while (state.optimizer.step < cfg.steps && (max_new_steps < 0 || static_cast<long>(out.size()) < max_new_steps)) {
    const long s = state.optimizer.step;
    if (s / nb != epoch_cached) {
      epoch_cached = s / nb;
      order = batch_order(nb, cfg.seed, epoch_cached);
    }
    acoustic::ItemRefs batch;
    for (int i : batches[order[s % nb]]) batch.push_back(&items[i]);

    for (const auto& p : all) p.second.node()->grad.clear();
    const auto pred = state.model.forward_train(batch);
    const LossBreakdown loss = composite_loss(pred, make_targets(batch));
    loss.total.backward();
    if (cfg.grad_clip > 0) optim::clip_grad_norm(params, cfg.grad_clip);
    const double lr = optim::lr_at(s + 1, cfg.optimizer);
    optim::ranger_step(params, state.optimizer, cfg.optimizer, lr);

    LossValues v = values_of(loss);
    v.step = state.optimizer.step;
    v.lr = lr;
    out.push_back(v);
    if (on_step) on_step(v, state);
  }
  for (const auto& p : all) p.second.node()->grad.clear();
  return out;
}

void save_train_state(const std::string& path, const TrainState& state, const nlohmann::json& extra) {
  nlohmann::json meta = extra;
  meta["kind"] = "acoustic";
  meta["config"] = state.model.config().to_json();
  meta["step"] = state.optimizer.step;
  nn::ParamList t = state.model.params();
  state.optimizer.export_to(t);
  save_archive(path, meta, t);
}

TrainState load_train_state(const std::string& path, nlohmann::json* meta) {
  TrainState st;
  st.model = acoustic::load_acoustic(path, meta);
  st.optimizer = optim::RangerState::import_from(load_archive(path));
  return st;
}

MetricsWriter::MetricsWriter(const std::string& path, bool append) : path_(path) {
  const bool fresh = !append || !std::filesystem::exists(path);
  if (fresh) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out << "step,l_gst,l_phone,l_pitch,l_dur,l_mel,l_ssim,total,lr\n";
  }
}

void MetricsWriter::write(const LossValues& v) {
  std::ofstream out(path_, std::ios::app);
  out.precision(17);
  out << v.step << ',' << v.l_gst << ',' << v.l_phone << ',' << v.l_pitch << ',' << v.l_dur << ',' << v.l_mel << ','
      << v.l_ssim << ',' << v.total << ',' << v.lr << '\n';
}

ReconstructionScore teacher_forced_score(const AcousticModel& model, const std::vector<AcousticItem>& items) {
  NoGradGuard ng;
  ReconstructionScore s;
  if (items.empty()) return s;
  for (const auto& it : items) {
    const auto out = model.forward_train({&it});
    const Tensor& m = out.mel_blocks.back();
    const auto pv = m.data(), tv = it.mel.data();
    double l1 = 0.0;
    for (std::size_t i = 0; i < tv.size(); ++i) l1 += std::abs(pv[i] - tv[i]);
    s.mel_l1 += l1 / tv.size();
    s.ssim += dsp::ssim(pv, tv, it.n_frames(), it.mel.dim(1));
  }
  s.mel_l1 /= items.size();
  s.ssim /= items.size();
  return s;
}

// ---------------------------------------------------------------------------

AdaptMode parse_adapt_mode(const std::string& s) {
  if (s == "all") return AdaptMode::all;
  if (s == "subset") return AdaptMode::subset;
  if (s == "embedding_only" || s == "embedding") return AdaptMode::embedding_only;
  throw ConfigError("unknown adaptation mode '" + s + "' (all, subset, embedding_only)");
}

std::vector<std::string> adapt_prefixes(AdaptMode mode) {
  switch (mode) {
    case AdaptMode::all:
      return {};
    case AdaptMode::embedding_only:
      return {"speaker_emb"};
    case AdaptMode::subset:
      break;
  }
  return {"speaker_emb", "pitch_pred", "duration_pred", "gst_pred", "prosody_pred", "pitch_embed",
          "gst_proj",    "prosody_proj", "decoder.",     "mel_head."};
}

AdaptResult adapt(const AcousticModel& source, const std::vector<std::string>& source_speakers, const std::string& target_speaker,
                  std::vector<AcousticItem> items, const AdaptConfig& cfg) {
  if (std::find(source_speakers.begin(), source_speakers.end(), target_speaker) != source_speakers.end())
    throw DataError("speaker '" + target_speaker + "' already exists in the source model");
  if (source.config().n_speakers < 2) throw ConfigError("adaptation needs a multi-speaker source model");
  AdaptResult r;
  r.model = AcousticModel(source.config(), 0);
  nn::copy_params(source.params(), r.model.params());
  const int id = r.model.add_speaker();
  r.speakers = source_speakers;
  r.speakers.resize(id);
  r.speakers.push_back(target_speaker);
  for (auto& it : items) it.speaker = id;

  TrainConfig t = cfg.train;
  t.steps = cfg.steps;
  t.optimizer.peak_lr *= cfg.lr_scale;
  t.trainable_prefixes = adapt_prefixes(cfg.mode);
  if (cfg.steps > 0) {
    TrainState st{r.model, {}};
    r.curve = train(st, items, t);
  }
  return r;
}

}  // namespace abtts::training
