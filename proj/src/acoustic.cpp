#include "abtts/acoustic.hpp"

#include <cmath>
#include <numeric>

#include "abtts/archive.hpp"
#include "abtts/error.hpp"

namespace abtts::acoustic {

using nn::apply_mask;
using nn::positional_encoding;

namespace {

using IntField = int AcousticConfig::*;

const std::vector<std::pair<const char*, IntField>>& config_fields() {
  static const std::vector<std::pair<const char*, IntField>> f = {
      {"n_blocks", &AcousticConfig::n_blocks},
      {"d_model", &AcousticConfig::d_model},
      {"conv_ff_hidden", &AcousticConfig::conv_ff_hidden},
      {"n_heads", &AcousticConfig::n_heads},
      {"n_mels", &AcousticConfig::n_mels},
      {"n_style_tokens", &AcousticConfig::n_style_tokens},
      {"d_style", &AcousticConfig::d_style},
      {"d_prosody", &AcousticConfig::d_prosody},
      {"n_speakers", &AcousticConfig::n_speakers},
      {"n_phones", &AcousticConfig::n_phones},
      {"conv_kernel", &AcousticConfig::conv_kernel},
      {"d_sem", &AcousticConfig::d_sem},
      {"d_ctx", &AcousticConfig::d_ctx},
      {"ctx_hidden", &AcousticConfig::ctx_hidden},
      {"ref_channels", &AcousticConfig::ref_channels},
      {"ref_gru_hidden", &AcousticConfig::ref_gru_hidden},
      {"prosody_ref_dim", &AcousticConfig::prosody_ref_dim},
      {"gst_gru_hidden", &AcousticConfig::gst_gru_hidden},
      {"gst_bottleneck", &AcousticConfig::gst_bottleneck},
      {"prosody_gru_hidden", &AcousticConfig::prosody_gru_hidden},
      {"predictor_channels", &AcousticConfig::predictor_channels},
      {"predictor_kernel", &AcousticConfig::predictor_kernel},
  };
  return f;
}

Tensor relu(const Tensor& x) { return leaky_relu(x, 0.0); }

/// Stacks per-item rows [n_i, D] into [B, N, D] with zero padding.
Tensor pad_rows(const std::vector<Tensor>& rows, int N) {
  std::vector<Tensor> items;
  for (const auto& r : rows) {
    const int n = r.dim(0), D = r.dim(1);
    Tensor x = n < N ? concat({r, Tensor::zeros({N - n, D})}, 0) : r;
    items.push_back(reshape(x, {1, N, D}));
  }
  return concat(items, 0);
}

/// Zeroes frames t >= lengths[b] of [B, T, F, C].
Tensor mask_time4(const Tensor& x, const std::vector<int>& lengths) {
  const int B = x.dim(0), T = x.dim(1), FC = x.dim(2) * x.dim(3);
  std::vector<double> m(x.numel(), 0.0);
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < std::min(T, lengths[b]); ++t) std::fill_n(m.begin() + (static_cast<std::ptrdiff_t>(b) * T + t) * FC, FC, 1.0);
  return mul(x, Tensor::from(x.shape(), std::move(m)));
}

int max_of(const std::vector<int>& v) { return v.empty() ? 0 : *std::max_element(v.begin(), v.end()); }

}  // namespace

AcousticConfig AcousticConfig::toy() { return AcousticConfig{}; }

AcousticConfig AcousticConfig::full() {
  AcousticConfig c;
  c.n_blocks = 6;
  c.d_model = 512;
  c.conv_ff_hidden = 2048;
  c.n_heads = 8;
  c.d_style = 256;
  c.d_prosody = 32;
  c.conv_kernel = 15;
  c.d_ctx = 256;
  c.ctx_hidden = 256;
  c.ref_channels = 32;
  c.ref_gru_hidden = 128;
  c.prosody_ref_dim = 128;
  c.gst_gru_hidden = 256;
  c.gst_bottleneck = 64;
  c.prosody_gru_hidden = 256;
  c.predictor_channels = 256;
  return c;
}

void AcousticConfig::validate() const {
  for (const auto& [name, field] : config_fields())
    if (this->*field < 1) throw ConfigError(std::string("acoustic.") + name + " must be >= 1");
  if (d_model % n_heads) throw ConfigError("acoustic.d_model must be divisible by n_heads");
  if (d_style % n_heads) throw ConfigError("acoustic.d_style must be divisible by n_heads");
  if (prosody_ref_dim % n_heads) throw ConfigError("acoustic.prosody_ref_dim must be divisible by n_heads");
  if (d_model % 2 || prosody_ref_dim % 2) throw ConfigError("acoustic.d_model and prosody_ref_dim must be even");
}

nlohmann::json AcousticConfig::to_json() const {
  nlohmann::json j;
  for (const auto& [name, field] : config_fields()) j[name] = this->*field;
  return j;
}

AcousticConfig AcousticConfig::from_json(const nlohmann::json& j, const AcousticConfig& base) {
  AcousticConfig c = base;
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const auto& [name, field] : config_fields())
      if (key == name) {
        if (!value.is_number_integer()) throw ConfigError("acoustic." + key + " must be an integer");
        c.*field = value.get<int>();
        known = true;
      }
    if (!known) throw ConfigError("unknown acoustic config key '" + key + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

Tensor length_regulate(const Tensor& hidden, const std::vector<std::vector<int>>& durations) {
  if (hidden.rank() != 3 || static_cast<int>(durations.size()) != hidden.dim(0))
    throw ShapeError("length_regulate expects [B, N, D] and B duration lists");
  const int B = hidden.dim(0), N = hidden.dim(1), D = hidden.dim(2);
  std::vector<int> totals;
  for (const auto& d : durations) {
    if (static_cast<int>(d.size()) > N) throw ShapeError("length_regulate: more durations than phones");
    int s = 0;
    for (int x : d) {
      if (x < 0) throw DataError("negative duration");
      s += x;
    }
    if (s == 0) throw DataError("all durations are zero");
    totals.push_back(s);
  }
  const int T = max_of(totals);
  std::vector<int> index;
  index.reserve(static_cast<std::size_t>(B) * T);
  for (int b = 0; b < B; ++b) {
    for (std::size_t n = 0; n < durations[b].size(); ++n)
      for (int r = 0; r < durations[b][n]; ++r) index.push_back(b * N + static_cast<int>(n));
    for (int t = totals[b]; t < T; ++t) index.push_back(-1);
  }
  return reshape(gather_rows(hidden, index), {B, T, D});
}

std::vector<int> durations_from_log(std::span<const double> log_pred, const std::vector<bool>& silence) {
  std::vector<int> d(log_pred.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double frames = std::exp(std::min(log_pred[i], 20.0)) - 1.0;
    const bool sil = i < silence.size() && silence[i];
    d[i] = std::max(sil ? 0 : 1, static_cast<int>(std::lround(std::max(frames, 0.0))));
  }
  return d;
}

// ---------------------------------------------------------------------------

AcousticModel::AcousticModel(const AcousticConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  nn::Rng rng(seed);
  const int D = cfg.d_model;
  phone_emb = nn::Embedding(cfg.n_phones, D, rng);
  ctx_agg = context::ContextAggregator(cfg.d_sem, cfg.ctx_hidden, cfg.d_ctx, rng);
  ctx_proj = nn::Linear(cfg.d_sem + context::kSyntacticDim + cfg.d_ctx, D, rng);
  for (int i = 0; i < cfg.n_blocks; ++i) encoder.emplace_back(D, cfg.conv_ff_hidden, cfg.n_heads, cfg.conv_kernel, rng);
  speaker_emb = nn::Embedding(cfg.n_speakers, D, rng);
  nd_emb = nn::Embedding(2, D, rng);
  cse_proj = nn::Linear(cfg.d_sem, D, rng);
  cse_proj.bias = nn::constant_param({D}, 0.0);

  ref_convs.emplace_back(1, cfg.ref_channels, 3, 3, 2, 2, 1, 1, rng);
  ref_convs.emplace_back(cfg.ref_channels, 2 * cfg.ref_channels, 3, 3, 2, 2, 1, 1, rng);
  int f = cfg.n_mels;
  for (std::size_t i = 0; i < ref_convs.size(); ++i) f = (f - 1) / 2 + 1;
  ref_gru = nn::Gru(f * 2 * cfg.ref_channels, cfg.ref_gru_hidden, rng);
  gst_query = nn::Linear(cfg.ref_gru_hidden, cfg.d_style, rng);
  gst_key = nn::Linear(cfg.d_style, cfg.d_style, rng);
  style_tokens = nn::uniform_param({cfg.n_style_tokens, cfg.d_style}, 1.0, rng);

  gst_pred_gru = nn::Gru(D, cfg.gst_gru_hidden, rng);
  gst_pred_down = nn::Linear(cfg.gst_gru_hidden, cfg.gst_bottleneck, rng);
  gst_pred_up = nn::Linear(cfg.gst_bottleneck, cfg.d_style, rng);

  pros_ref_in = nn::Linear(cfg.n_mels, cfg.prosody_ref_dim, rng);
  pros_ref_block = nn::ConformerBlock(cfg.prosody_ref_dim, 2 * cfg.prosody_ref_dim, cfg.n_heads, cfg.conv_kernel, rng);
  pros_ref_out = nn::Linear(cfg.prosody_ref_dim, cfg.d_prosody, rng);

  pros_gru1 = nn::Gru(D + cfg.d_style, cfg.prosody_gru_hidden, rng);
  pros_gru2 = nn::Gru(cfg.prosody_gru_hidden, cfg.prosody_gru_hidden, rng);
  pros_out = nn::Linear(cfg.prosody_gru_hidden, cfg.d_prosody, rng);

  for (auto* p : {&pitch_predictor, &duration_predictor}) {
    p->conv1 = nn::Conv1d(D, cfg.predictor_channels, cfg.predictor_kernel, rng);
    p->norm1 = nn::LayerNorm(cfg.predictor_channels);
    p->conv2 = nn::Conv1d(cfg.predictor_channels, cfg.predictor_channels, cfg.predictor_kernel, rng);
    p->norm2 = nn::LayerNorm(cfg.predictor_channels);
    p->head = nn::Linear(cfg.predictor_channels, 1, rng);
  }
  pitch_embed = nn::Conv1d(1, D, 3, rng);
  gst_proj = nn::Linear(cfg.d_style, D, rng);
  prosody_proj = nn::Linear(cfg.d_prosody, D, rng);

  for (int i = 0; i < cfg.n_blocks; ++i) {
    decoder.emplace_back(D, cfg.conv_ff_hidden, cfg.n_heads, cfg.conv_kernel, rng);
    mel_heads.emplace_back(D, cfg.n_mels, rng);
  }
}

void AcousticModel::VariancePredictor::collect(const std::string& prefix, nn::ParamList& out) const {
  conv1.collect(prefix + ".conv1", out);
  norm1.collect(prefix + ".norm1", out);
  conv2.collect(prefix + ".conv2", out);
  norm2.collect(prefix + ".norm2", out);
  head.collect(prefix + ".head", out);
}

void AcousticModel::collect(nn::ParamList& out) const {
  phone_emb.collect("phone_emb", out);
  ctx_agg.collect("ctx_agg", out);
  ctx_proj.collect("ctx_proj", out);
  for (std::size_t i = 0; i < encoder.size(); ++i) encoder[i].collect("encoder." + std::to_string(i), out);
  speaker_emb.collect("speaker_emb", out);
  nd_emb.collect("nd_emb", out);
  cse_proj.collect("cse_proj", out);
  for (std::size_t i = 0; i < ref_convs.size(); ++i) ref_convs[i].collect("gst_ref.conv" + std::to_string(i), out);
  ref_gru.collect("gst_ref.gru", out);
  gst_query.collect("gst_ref.query", out);
  gst_key.collect("gst_ref.key", out);
  out.emplace_back("gst_ref.tokens", style_tokens);
  gst_pred_gru.collect("gst_pred.gru", out);
  gst_pred_down.collect("gst_pred.down", out);
  gst_pred_up.collect("gst_pred.up", out);
  pros_ref_in.collect("prosody_ref.in", out);
  pros_ref_block.collect("prosody_ref.block", out);
  pros_ref_out.collect("prosody_ref.out", out);
  pros_gru1.collect("prosody_pred.gru1", out);
  pros_gru2.collect("prosody_pred.gru2", out);
  pros_out.collect("prosody_pred.out", out);
  pitch_predictor.collect("pitch_pred", out);
  duration_predictor.collect("duration_pred", out);
  pitch_embed.collect("pitch_embed", out);
  gst_proj.collect("gst_proj", out);
  prosody_proj.collect("prosody_proj", out);
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    decoder[i].collect("decoder." + std::to_string(i), out);
    mel_heads[i].collect("mel_head." + std::to_string(i), out);
  }
}

nn::ParamList AcousticModel::params() const {
  nn::ParamList p;
  collect(p);
  return p;
}

Tensor AcousticModel::context_matrix(const AcousticItem& item) const {
  const int n = item.n_phones();
  if (!item.context) return Tensor::zeros({n, cfg_.d_model});
  if (static_cast<int>(item.phones.phones.size()) != n)
    throw DataError(item.utt_id + ": phone sequence and phone ids disagree");
  const auto& c = *item.context;
  if (c.sentences.dim(1) != cfg_.d_sem)
    throw ConfigError(item.utt_id + ": context features have dimension " + std::to_string(c.sentences.dim(1)) +
                      ", the model expects " + std::to_string(cfg_.d_sem));
  const Tensor state = ctx_agg(c.sentences);
  return context::upsample_to_phones(c.tokens, state, item.phones, context::identity_alignment(static_cast<int>(c.tokens.tokens.size())),
                                     ctx_proj);
}

Tensor AcousticModel::conformer_encode(const std::vector<std::vector<int>>& phone_ids, const std::vector<Tensor>& context) const {
  const int B = static_cast<int>(phone_ids.size()), D = cfg_.d_model;
  if (B == 0) throw ShapeError("conformer_encode: empty batch");
  std::vector<int> lengths;
  for (const auto& p : phone_ids) {
    if (p.empty()) throw ShapeError("conformer_encode: zero-length phone sequence");
    lengths.push_back(static_cast<int>(p.size()));
  }
  const int N = max_of(lengths);
  std::vector<int> flat;
  for (const auto& p : phone_ids) {
    flat.insert(flat.end(), p.begin(), p.end());
    flat.insert(flat.end(), N - p.size(), 0);
  }
  Tensor h = reshape(phone_emb(flat), {B, N, D});
  if (!context.empty()) {
    if (static_cast<int>(context.size()) != B) throw ShapeError("conformer_encode: context count does not match batch");
    std::vector<Tensor> rows;
    for (int b = 0; b < B; ++b) {
      const Tensor& c = context[b];
      if (!c.defined()) {
        rows.push_back(Tensor::zeros({lengths[b], D}));
        continue;
      }
      if (c.rank() != 2 || c.dim(0) != lengths[b] || c.dim(1) != D)
        throw ShapeError("conformer_encode: context " + shape_str(c.shape()) + " for " + std::to_string(lengths[b]) + " phones");
      rows.push_back(c);
    }
    h = add(h, pad_rows(rows, N));
  }
  h = apply_mask(add(h, positional_encoding(N, D)), lengths);
  for (const auto& block : encoder) h = block(h, lengths);
  return h;
}

Tensor AcousticModel::condition(const Tensor& hidden, const std::vector<int>& lengths, const std::vector<int>& speakers,
                                const std::vector<int>& nds, const Tensor& cse) const {
  const int N = hidden.dim(1);
  Tensor add_vec = add(add(speaker_emb(speakers), nd_emb(nds)), cse_proj(cse));  // [B, D]
  return apply_mask(add(hidden, repeat_mid(add_vec, N)), lengths);
}

GstOutput AcousticModel::gst_reference(const Tensor& mel, const std::vector<int>& frame_lengths) const {
  const int B = mel.dim(0), T = mel.dim(1), M = mel.dim(2);
  std::vector<int> lens = frame_lengths;
  Tensor x = mask_time4(reshape(mel, {B, T, M, 1}), lens);
  for (const auto& conv : ref_convs) {
    x = relu(conv(x));
    for (int& l : lens) l = (l + 2 * conv.ph - conv.kh) / conv.sh + 1;
    x = mask_time4(x, lens);
  }
  const int T2 = x.dim(1);
  x = reshape(x, {B, T2, x.dim(2) * x.dim(3)});
  const Tensor q = gst_query(ref_gru(x, lens).final);  // [B, d_style]

  const int H = cfg_.n_heads, ds = cfg_.d_style, dh = ds / H, n = cfg_.n_style_tokens;
  const Tensor values = tanh(style_tokens);  // [n, ds]
  const Tensor keys = gst_key(values);
  const Tensor qh = permute(reshape(q, {B, H, dh}), {1, 0, 2});         // [H, B, dh]
  const Tensor kh = permute(reshape(keys, {n, H, dh}), {1, 2, 0});      // [H, dh, n]
  const Tensor vh = permute(reshape(values, {n, H, dh}), {1, 0, 2});    // [H, n, dh]
  const Tensor w = softmax_last(scale(bmm(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh))));  // [H, B, n]
  GstOutput out;
  out.gst = reshape(permute(bmm(w, vh), {1, 0, 2}), {B, ds});
  out.weights = permute(w, {1, 0, 2});
  return out;
}

Tensor AcousticModel::gst_predict(const Tensor& hidden, const std::vector<int>& lengths) const {
  return gst_pred_up(tanh(gst_pred_down(gst_pred_gru(hidden, lengths).final)));
}

Tensor AcousticModel::prosody_reference(const Tensor& mel, const std::vector<int>& frame_lengths,
                                        const std::vector<std::vector<int>>& durations, int n_phones) const {
  std::vector<int> phone_lengths;
  for (std::size_t b = 0; b < durations.size(); ++b) {
    const int s = std::accumulate(durations[b].begin(), durations[b].end(), 0);
    if (s != frame_lengths.at(b))
      throw DataError("durations sum to " + std::to_string(s) + " but the mel has " + std::to_string(frame_lengths[b]) + " frames");
    phone_lengths.push_back(static_cast<int>(durations[b].size()));
  }
  Tensor x = apply_mask(pros_ref_in(mel), frame_lengths);
  x = pros_ref_block(x, frame_lengths);
  return apply_mask(pros_ref_out(segment_mean(x, durations, n_phones)), phone_lengths);
}

Tensor AcousticModel::prosody_predict(const Tensor& hidden, const std::vector<int>& lengths, const Tensor& gst) const {
  const Tensor x = apply_mask(concat({hidden, repeat_mid(gst, hidden.dim(1))}, 2), lengths);
  const Tensor h1 = pros_gru1(x, lengths).outputs;
  const Tensor h2 = pros_gru2(h1, lengths).outputs;
  return apply_mask(pros_out(h2), lengths);
}

Tensor AcousticModel::run_predictor(const VariancePredictor& p, const Tensor& hidden, const std::vector<int>& lengths) const {
  Tensor x = apply_mask(p.norm1(relu(p.conv1(apply_mask(hidden, lengths)))), lengths);
  x = apply_mask(p.norm2(relu(p.conv2(x))), lengths);
  x = apply_mask(p.head(x), lengths);
  return reshape(x, {x.dim(0), x.dim(1)});
}

Tensor AcousticModel::predict_pitch(const Tensor& hidden, const std::vector<int>& lengths) const {
  return run_predictor(pitch_predictor, hidden, lengths);
}

Tensor AcousticModel::predict_duration(const Tensor& hidden, const std::vector<int>& lengths) const {
  return run_predictor(duration_predictor, hidden, lengths);
}

Tensor AcousticModel::decoder_input(const Tensor& hidden, const std::vector<int>& lengths, const Tensor& pitch, const Tensor& gst,
                                    const Tensor& prosody, const std::vector<std::vector<int>>& durations) const {
  const int B = hidden.dim(0), N = hidden.dim(1), D = hidden.dim(2);
  const Tensor pe = apply_mask(pitch_embed(reshape(pitch, {B, N, 1})), lengths);
  const Tensor v = apply_mask(add(add(hidden, pe), prosody_proj(prosody)), lengths);
  Tensor fr = length_regulate(v, durations);
  const int T = fr.dim(1);
  std::vector<int> frame_lengths;
  for (const auto& d : durations) frame_lengths.push_back(std::accumulate(d.begin(), d.end(), 0));
  fr = add(add(fr, repeat_mid(gst_proj(gst), T)), positional_encoding(T, D));
  return apply_mask(fr, frame_lengths);
}

std::vector<Tensor> AcousticModel::decode(const Tensor& frame_hidden, const std::vector<int>& frame_lengths) const {
  std::vector<Tensor> out;
  Tensor h = frame_hidden;
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    h = decoder[i](h, frame_lengths);
    out.push_back(apply_mask(mel_heads[i](h), frame_lengths));
  }
  return out;
}

namespace {

Tensor cse_of(const AcousticItem& item, int d_sem) {
  if (!item.context) return Tensor::zeros({1, d_sem});
  if (item.context->cse.dim(0) != d_sem) throw ConfigError(item.utt_id + ": emotion vector has the wrong dimension");
  return reshape(item.context->cse, {1, d_sem});
}

}  // namespace

TrainOutput AcousticModel::forward_train(const ItemRefs& batch, const Overrides& overrides) const {
  if (batch.empty()) throw DataError("empty training batch");
  TrainOutput out;
  std::vector<std::vector<int>> ids, durs;
  std::vector<Tensor> ctx, mels, cses;
  std::vector<int> speakers, nds;
  std::vector<double> pitch;
  for (const AcousticItem* it : batch) {
    if (it->durations.empty() || !it->mel.defined())
      throw DataError(it->utt_id + ": missing alignment or mel target");
    if (it->durations.size() != it->phone_ids.size() || it->pitch.size() != it->phone_ids.size())
      throw DataError(it->utt_id + ": durations/pitch do not match the phone count");
    if (it->mel.dim(1) != cfg_.n_mels) throw DataError(it->utt_id + ": mel has the wrong number of bins");
    ids.push_back(it->phone_ids);
    durs.push_back(it->durations);
    ctx.push_back(context_matrix(*it));
    mels.push_back(it->mel);
    cses.push_back(cse_of(*it, cfg_.d_sem));
    speakers.push_back(it->speaker);
    nds.push_back(it->nd);
    out.phone_lengths.push_back(it->n_phones());
    out.frame_lengths.push_back(it->n_frames());
  }
  const int B = static_cast<int>(batch.size()), N = max_of(out.phone_lengths), T = max_of(out.frame_lengths);
  for (const AcousticItem* it : batch) {
    pitch.insert(pitch.end(), it->pitch.begin(), it->pitch.end());
    pitch.insert(pitch.end(), N - it->pitch.size(), 0.0);
  }
  const Tensor pitch_t = Tensor::from({B, N}, std::move(pitch));
  const Tensor mel = pad_rows(mels, T);

  const Tensor hidden = conformer_encode(ids, ctx);
  const Tensor cond = condition(hidden, out.phone_lengths, speakers, nds, concat(cses, 0));
  out.gst_ref = gst_reference(mel, out.frame_lengths).gst;
  out.prosody_ref = prosody_reference(mel, out.frame_lengths, durs, N);
  out.gst_pred = gst_predict(cond, out.phone_lengths);
  out.prosody_pred = prosody_predict(cond, out.phone_lengths, out.gst_ref.detach());
  out.pitch_pred = predict_pitch(cond, out.phone_lengths);
  out.log_duration_pred = predict_duration(cond, out.phone_lengths);
  out.decoder_input = decoder_input(cond, out.phone_lengths, pitch_t, overrides.gst.value_or(out.gst_ref),
                                    overrides.prosody.value_or(out.prosody_ref), durs);
  out.mel_blocks = decode(out.decoder_input, out.frame_lengths);
  return out;
}

InferOutput AcousticModel::forward_infer(const AcousticItem& item) const {
  NoGradGuard ng;
  InferOutput out;
  const std::vector<int> lengths = {item.n_phones()};
  const Tensor hidden = conformer_encode({item.phone_ids}, {context_matrix(item)});
  const Tensor cond = condition(hidden, lengths, {item.speaker}, {item.nd}, cse_of(item, cfg_.d_sem));
  out.gst = gst_predict(cond, lengths);
  out.prosody = prosody_predict(cond, lengths, out.gst);
  const Tensor pitch = predict_pitch(cond, lengths);
  out.pitch = pitch.values();
  out.durations = durations_from_log(predict_duration(cond, lengths).values(), item.silence);
  out.decoder_input = decoder_input(cond, lengths, pitch, out.gst, out.prosody, {out.durations});
  const int T = out.decoder_input.dim(1);
  for (const auto& m : decode(out.decoder_input, {T})) out.mel_blocks.push_back(reshape(m, {T, cfg_.n_mels}));
  return out;
}

int AcousticModel::add_speaker() {
  const int S = speaker_emb.size(), D = cfg_.d_model;
  std::vector<double> v = speaker_emb.table.values();
  std::vector<double> mean(D, 0.0);
  for (int s = 0; s < S; ++s)
    for (int j = 0; j < D; ++j) mean[j] += v[static_cast<std::size_t>(s) * D + j] / S;
  v.insert(v.end(), mean.begin(), mean.end());
  speaker_emb.table = Tensor::from({S + 1, D}, std::move(v));
  speaker_emb.table.set_requires_grad(true);
  cfg_.n_speakers = S + 1;
  return S;
}

// ---------------------------------------------------------------------------

void save_acoustic(const std::string& path, const AcousticModel& model, const nlohmann::json& extra) {
  nlohmann::json meta = extra;
  meta["kind"] = "acoustic";
  meta["config"] = model.config().to_json();
  save_archive(path, meta, model.params());
}

AcousticModel load_acoustic(const std::string& path, nlohmann::json* meta) {
  const Archive a = load_archive(path);
  if (a.meta.value("kind", "") != "acoustic") throw ConfigError(path + " is not an acoustic model checkpoint");
  AcousticModel m(AcousticConfig::from_json(a.meta.at("config")), 0);
  restore_params(a, m.params());
  if (meta) *meta = a.meta;
  return m;
}

}  // namespace abtts::acoustic
