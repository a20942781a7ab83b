#include "abtts/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "abtts/archive.hpp"
#include "abtts/context.hpp"
#include "abtts/error.hpp"
#include "abtts/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace abtts::pipeline {

namespace {

constexpr const char* kFeatureVersion = "features-v1";

void say(std::ostream* log, const std::string& s) {
  if (log) *log << s << '\n';
}

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty()) return p;
  const fs::path path(p);
  if (path.is_absolute() || base.empty()) return path.lexically_normal().string();
  return (fs::path(base) / path).lexically_normal().string();
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << content;
}

void require_path(const std::string& what, const std::string& p) {
  if (p.empty()) throw UsageError("paths." + what + " is not set");
  if (!fs::exists(p)) throw UsageError("paths." + what + " does not exist: " + p);
}

// --- config sections --------------------------------------------------------

using Setter = std::function<void(const json&)>;

void apply_section(const json& j, const std::string& section, const std::map<std::string, Setter>& setters) {
  if (!j.is_object()) throw ConfigError(section + " must be an object");
  for (const auto& [key, v] : j.items()) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + section + "." + key + "'");
    try {
      it->second(v);
    } catch (const json::exception& e) {
      throw ConfigError(section + "." + key + ": " + e.what());
    }
  }
}

template <typename T>
Setter set(T& field) {
  return [&field](const json& v) { field = v.get<T>(); };
}

void apply_optimizer(const json& j, const std::string& section, optim::OptimizerConfig& o) {
  apply_section(j, section, {{"lookahead_k", set(o.lookahead_k)},
                             {"lookahead_alpha", set(o.lookahead_alpha)},
                             {"epsilon", set(o.epsilon)},
                             {"beta1", set(o.beta1)},
                             {"beta2", set(o.beta2)},
                             {"sma_threshold", set(o.sma_threshold)},
                             {"peak_lr", set(o.peak_lr)},
                             {"warmup_steps", set(o.warmup_steps)},
                             {"decay_rate", set(o.decay_rate)}});
}

json optimizer_json(const optim::OptimizerConfig& o) {
  return {{"lookahead_k", o.lookahead_k}, {"lookahead_alpha", o.lookahead_alpha}, {"epsilon", o.epsilon},
          {"beta1", o.beta1},             {"beta2", o.beta2},                     {"sma_threshold", o.sma_threshold},
          {"peak_lr", o.peak_lr},         {"warmup_steps", o.warmup_steps},       {"decay_rate", o.decay_rate}};
}

// --- prepare ----------------------------------------------------------------

struct ChapterEntry {
  std::string script, audio, speaker;
};

struct CorpusIndex {
  std::vector<ChapterEntry> chapters;
  std::string alignments;  // empty when absent
};

CorpusIndex read_corpus_index(const std::string& dir) {
  const std::string path = join(dir, "corpus.json");
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  CorpusIndex idx;
  try {
    for (const auto& c : j.at("chapters"))
      idx.chapters.push_back({resolve(dir, c.at("script").get<std::string>()), c.at("audio").get<std::string>(),
                              c.at("speaker").get<std::string>()});
    if (j.contains("alignments")) idx.alignments = resolve(dir, j.at("alignments").get<std::string>());
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return idx;
}

std::uint64_t hash_bytes(const void* data, std::size_t n, std::uint64_t h) {
  return text::fnv1a(std::string_view(static_cast<const char*>(data), n), h);
}

std::uint64_t hash_str(const std::string& s, std::uint64_t h) {
  const std::uint64_t len = s.size();
  return text::fnv1a(s, hash_bytes(&len, sizeof len, h));
}

std::string hex(std::uint64_t h) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

std::string feature_path(const RunConfig& cfg, const std::string& utt) { return join(cfg.paths.features, utt + ".feat"); }
std::string context_path(const RunConfig& cfg, const std::string& utt) { return join(cfg.paths.features, utt + ".ctx"); }
std::string wave_path(const RunConfig& cfg, const std::string& utt) { return join(cfg.paths.features, utt + ".wav"); }

std::string cached_hash(const std::string& path) {
  if (!fs::exists(path)) return {};
  try {
    return load_archive(path).meta.value("hash", "");
  } catch (const Error&) {
    return {};
  }
}

Tensor vector_tensor(const std::vector<double>& v) { return Tensor::from({static_cast<int>(v.size())}, v); }

/// Runs f(i) for i in [0, n) on `threads` workers; rethrows the failure of
/// the lowest index so errors do not depend on scheduling.
void parallel_for(int n, int threads, const std::function<void(int)>& f) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int w = std::max(1, std::min(threads, n));
  std::vector<std::thread> pool;
  for (int k = 1; k < w; ++k) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

dsp::MelSpec mel_spec_of(const Tensor& m) {
  dsp::MelSpec s;
  s.n_frames = m.dim(0);
  s.n_mels = m.dim(1);
  s.values = m.values();
  return s;
}

struct FeatureFile {
  std::string speaker;
  int nd = 0;
  frontend::PhoneSequence phones;
  std::vector<int> durations;
  dsp::PhonePitch pitch;
  Tensor mel;
};

FeatureFile read_features(const std::string& path) {
  const Archive a = load_archive(path);
  if (a.meta.value("kind", "") != "features") throw DataError(path + " is not a feature file");
  FeatureFile f;
  f.speaker = a.meta.at("speaker").get<std::string>();
  f.nd = a.meta.at("nd").get<int>();
  const auto sym = a.meta.at("phones").get<std::vector<std::string>>();
  const auto word = a.meta.at("word_index").get<std::vector<int>>();
  const auto sil = a.meta.at("silence").get<std::vector<bool>>();
  for (std::size_t i = 0; i < sym.size(); ++i) f.phones.phones.push_back({sym[i], word[i], sil[i]});
  f.phones.word_boundaries = a.meta.at("word_boundaries").get<std::vector<int>>();
  for (double d : a.at("durations").values()) f.durations.push_back(static_cast<int>(std::lround(d)));
  f.pitch.log_f0 = a.at("log_f0").values();
  for (double v : a.at("voiced").values()) f.pitch.voiced.push_back(v > 0.5);
  f.mel = a.at("mel");
  return f;
}

std::vector<int> phone_ids(const frontend::PhoneSequence& seq, const std::vector<std::string>& phones, const std::string& who) {
  std::vector<int> ids;
  for (const auto& p : seq.phones) {
    const auto it = std::find(phones.begin(), phones.end(), p.symbol);
    if (it == phones.end()) throw DataError(who + ": phone '" + p.symbol + "' is not in the model's phone set");
    ids.push_back(static_cast<int>(it - phones.begin()));
  }
  return ids;
}

json model_meta(const RunConfig& cfg, const std::vector<std::string>& speakers, const std::vector<std::string>& phones) {
  return {{"speakers", speakers}, {"phones", phones}, {"embedder", cfg.embedder}, {"preset", preset_name(cfg.preset)}};
}

std::vector<std::string> meta_list(const json& meta, const char* key, const std::string& path) {
  if (!meta.contains(key)) throw ConfigError(path + ": checkpoint has no '" + key + "' list");
  return meta.at(key).get<std::vector<std::string>>();
}


}  // namespace

// --- RunConfig --------------------------------------------------------------

Preset parse_preset(const std::string& s) {
  if (s == "toy") return Preset::toy;
  if (s == "full") return Preset::full;
  throw ConfigError("unknown preset '" + s + "' (toy, full)");
}

const char* preset_name(Preset p) { return p == Preset::toy ? "toy" : "full"; }

RunConfig RunConfig::defaults(Preset p) {
  RunConfig c;
  c.preset = p;
  if (p == Preset::toy) {
    c.segmentation.min_len = 1.0;
    c.segmentation.max_len = 2.5;
    c.acoustic = acoustic::AcousticConfig::toy();
    c.training.steps = 2000;
    c.training.batch_size = 4;
    c.training.checkpoint_every = 500;
    c.training.optimizer.warmup_steps = 100;
    c.training.optimizer.peak_lr = 2e-3;
    c.vocoder = vocoder::VocoderConfig::toy();
    c.vocoder_training.steps = 500;
    c.adapt.steps = 200;
    c.adapt.lr_scale = 0.5;
  } else {
    c.acoustic = acoustic::AcousticConfig::full();
    c.training.steps = 200000;
    c.training.batch_size = 16;
    c.training.checkpoint_every = 5000;
    c.vocoder = vocoder::VocoderConfig::full();
    c.vocoder_training.steps = 100000;
    c.vocoder_training.segment_frames = 32;
    c.vocoder_training.batch_size = 8;
    c.adapt.steps = 2000;
  }
  c.adapt.train = c.training;
  c.apply_seed(c.seed);
  return c;
}

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  training.seed = s;
  adapt.train.seed = s;
  vocoder_training.seed = s;
  frontend_training.seed = s;
}

RunConfig RunConfig::from_json(const json& j, const std::string& base_dir) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c = defaults(j.contains("preset") ? parse_preset(j.at("preset").get<std::string>()) : Preset::toy);
  std::optional<std::uint64_t> seed;
  const std::map<std::string, Setter> top = {
      {"preset", [](const json&) {}},
      {"seed", [&](const json& v) { seed = v.get<std::uint64_t>(); }},
      {"embedder", set(c.embedder)},
      {"enhancer", set(c.enhancer)},
      {"threads", set(c.threads)},
      {"paths",
       [&](const json& v) {
         apply_section(v, "paths", {{"corpus", set(c.paths.corpus)},
                                    {"lexicon", set(c.paths.lexicon)},
                                    {"features", set(c.paths.features)},
                                    {"checkpoints", set(c.paths.checkpoints)},
                                    {"output", set(c.paths.output)},
                                    {"frontend_data", set(c.paths.frontend_data)}});
       }},
      {"segmentation",
       [&](const json& v) {
         apply_section(v, "segmentation", {{"min_len", set(c.segmentation.min_len)},
                                           {"max_len", set(c.segmentation.max_len)},
                                           {"min_dialogue_chars", set(c.segmentation.min_dialogue_chars)},
                                           {"context_window", set(c.segmentation.context_window)}});
       }},
      {"acoustic", [&](const json& v) { c.acoustic = acoustic::AcousticConfig::from_json(v, c.acoustic); }},
      {"training",
       [&](const json& v) {
         auto& t = c.training;
         apply_section(v, "training", {{"steps", set(t.steps)},
                                       {"batch_size", set(t.batch_size)},
                                       {"checkpoint_every", set(t.checkpoint_every)},
                                       {"grad_clip", set(t.grad_clip)},
                                       {"optimizer", [&](const json& o) { apply_optimizer(o, "training.optimizer", t.optimizer); }}});
       }},
      {"vocoder", [&](const json& v) { c.vocoder = vocoder::VocoderConfig::from_json(v, c.vocoder); }},
      {"vocoder_training",
       [&](const json& v) {
         auto& t = c.vocoder_training;
         apply_section(v, "vocoder_training",
                       {{"steps", set(t.steps)},
                        {"segment_frames", set(t.segment_frames)},
                        {"batch_size", set(t.batch_size)},
                        {"lambda_fm", set(t.lambda_fm)},
                        {"lambda_mel", set(t.lambda_mel)},
                        {"optimizer", [&](const json& o) { apply_optimizer(o, "vocoder_training.optimizer", t.optimizer); }}});
       }},
      {"adapt",
       [&](const json& v) {
         apply_section(v, "adapt", {{"mode", [&](const json& m) { c.adapt.mode = training::parse_adapt_mode(m.get<std::string>()); }},
                                    {"steps", set(c.adapt.steps)},
                                    {"lr_scale", set(c.adapt.lr_scale)}});
       }},
      {"frontend_training",
       [&](const json& v) {
         auto& t = c.frontend_training;
         apply_section(v, "frontend_training", {{"epochs", set(t.epochs)}, {"lr", set(t.lr)}, {"holdout", set(t.holdout)}});
       }},
  };
  apply_section(j, "config", top);
  // The adaptation loop shares the acoustic training settings.
  c.adapt.train = c.training;
  c.apply_seed(seed.value_or(c.seed));

  for (std::string* p : {&c.paths.corpus, &c.paths.lexicon, &c.paths.features, &c.paths.checkpoints, &c.paths.output,
                         &c.paths.frontend_data})
    *p = resolve(base_dir, *p);
  if (!(c.segmentation.min_len > 0 && c.segmentation.min_len < c.segmentation.max_len))
    throw ConfigError("segmentation needs 0 < min_len < max_len");
  c.acoustic.validate();
  c.vocoder.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  return from_json(j, fs::absolute(path).parent_path().string());
}

json RunConfig::to_json() const {
  const auto& t = training;
  const auto& v = vocoder_training;
  return {{"preset", preset_name(preset)},
          {"seed", seed},
          {"embedder", embedder},
          {"enhancer", enhancer},
          {"threads", threads},
          {"paths",
           {{"corpus", paths.corpus},
            {"lexicon", paths.lexicon},
            {"features", paths.features},
            {"checkpoints", paths.checkpoints},
            {"output", paths.output},
            {"frontend_data", paths.frontend_data}}},
          {"segmentation",
           {{"min_len", segmentation.min_len},
            {"max_len", segmentation.max_len},
            {"min_dialogue_chars", segmentation.min_dialogue_chars},
            {"context_window", segmentation.context_window}}},
          {"acoustic", acoustic.to_json()},
          {"training",
           {{"steps", t.steps},
            {"batch_size", t.batch_size},
            {"checkpoint_every", t.checkpoint_every},
            {"grad_clip", t.grad_clip},
            {"optimizer", optimizer_json(t.optimizer)}}},
          {"vocoder", vocoder.to_json()},
          {"vocoder_training",
           {{"steps", v.steps},
            {"segment_frames", v.segment_frames},
            {"batch_size", v.batch_size},
            {"lambda_fm", v.lambda_fm},
            {"lambda_mel", v.lambda_mel},
            {"optimizer", optimizer_json(v.optimizer)}}},
          {"adapt",
           {{"mode", adapt.mode == training::AdaptMode::all      ? "all"
                     : adapt.mode == training::AdaptMode::subset ? "subset"
                                                                 : "embedding_only"},
            {"steps", adapt.steps},
            {"lr_scale", adapt.lr_scale}}},
          {"frontend_training",
           {{"epochs", frontend_training.epochs}, {"lr", frontend_training.lr}, {"holdout", frontend_training.holdout}}}};
}

// --- frontend ---------------------------------------------------------------

std::string acoustic_checkpoint(const RunConfig& cfg) { return join(cfg.paths.checkpoints, "acoustic.ckpt"); }
std::string vocoder_checkpoint(const RunConfig& cfg) { return join(cfg.paths.checkpoints, "vocoder.ckpt"); }
std::string frontend_checkpoint(const RunConfig& cfg) { return join(cfg.paths.checkpoints, "frontend.heads"); }

namespace {

int polyphone_classes(const frontend::Lexicon& lex) {
  int n = 1;
  for (const auto& [w, entries] : lex.entries()) n = std::max(n, static_cast<int>(entries.size()));
  return n;
}

}  // namespace

frontend::Frontend load_frontend(const RunConfig& cfg) {
  frontend::Frontend f;
  if (!cfg.paths.lexicon.empty()) {
    require_path("lexicon", cfg.paths.lexicon);
    f.lexicon = frontend::Lexicon::load(cfg.paths.lexicon);
  }
  f.embedder = frontend::make_embedder(cfg.embedder);
  const std::string heads = frontend_checkpoint(cfg);
  if (!cfg.paths.checkpoints.empty() && fs::exists(heads)) {
    f.heads = frontend::AnnotationHeads::load(heads);
    if (f.heads.embedding_dim() != f.embedder->dim())
      throw ConfigError(heads + ": heads expect " + std::to_string(f.heads.embedding_dim()) + "-dim embeddings, embedder gives " +
                        std::to_string(f.embedder->dim()));
  } else {
    f.heads = frontend::AnnotationHeads(f.embedder->dim(), polyphone_classes(f.lexicon), cfg.seed);
  }
  return f;
}

// --- prepare ----------------------------------------------------------------

PrepareReport prepare(const RunConfig& cfg, std::ostream* log) {
  require_path("corpus", cfg.paths.corpus);
  if (cfg.paths.features.empty()) throw UsageError("paths.features is not set");
  fs::create_directories(cfg.paths.features);
  const CorpusIndex index = read_corpus_index(cfg.paths.corpus);
  const frontend::Frontend fe = load_frontend(cfg);
  const auto enhancer = corpus::make_enhancer(cfg.enhancer);

  std::uint64_t base = hash_str(kFeatureVersion, text::fnv1a(""));
  base = hash_str(cfg.paths.lexicon.empty() ? "" : read_file(cfg.paths.lexicon), base);
  base = hash_str(cfg.embedder, base);
  base = hash_str(cfg.enhancer, base);
  const std::string heads = frontend_checkpoint(cfg);
  base = hash_str(fs::exists(heads) ? read_file(heads) : "untrained:" + std::to_string(cfg.seed), base);

  dsp::Alignment alignment;
  if (!index.alignments.empty() && fs::exists(index.alignments)) alignment = dsp::load_alignment(index.alignments);

  PrepareReport rep;
  std::vector<corpus::UtteranceRecord> all;
  std::set<std::string> seen;
  for (const auto& ch : index.chapters) {
    const corpus::ChapterScript script = corpus::read_chapter(ch.script);
    auto records = corpus::segment_chapter(script, cfg.segmentation, ch.speaker);
    ++rep.chapters;
    for (auto& r : records) {
      r.audio_path = ch.audio;
      if (!seen.insert(r.utt_id).second) throw DataError("duplicate utterance id " + r.utt_id + " (chapter ids must be unique)");
    }
    const fs::path audio = fs::path(cfg.paths.corpus) / ch.audio;
    if (!fs::exists(audio)) {
      std::string ids;
      for (const auto& r : records) ids += (ids.empty() ? "" : ", ") + r.utt_id;
      throw DataError("missing audio file " + audio.string() + " for " + (ids.empty() ? script.chapter_id : ids));
    }
    const dsp::Wave wave = dsp::read_wav(audio.string());

    std::vector<int> synthesized(records.size(), 0), computed(records.size(), 0);
    const int threads = cfg.threads > 0 ? cfg.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    parallel_for(static_cast<int>(records.size()), threads, [&](int i) {
      NoGradGuard ng;
      const auto& r = records[i];
      const long a = std::lround(r.start_s * wave.sample_rate), b = std::lround(r.end_s * wave.sample_rate);
      if (a < 0 || b > static_cast<long>(wave.samples.size()) || b <= a)
        throw DataError(r.utt_id + ": span " + std::to_string(r.start_s) + "-" + std::to_string(r.end_s) + " s is outside " +
                        audio.string());
      const std::vector<double> slice(wave.samples.begin() + a, wave.samples.begin() + b);
      const auto win = context::window_for(records, i);
      const auto arow = alignment.find(r.utt_id);

      std::uint64_t h = hash_str(r.utt_id, base);
      h = hash_str(r.text, h);
      h = hash_str(r.speaker_id, h);
      h = hash_bytes(slice.data(), slice.size() * sizeof(double), h);
      h = hash_bytes(&wave.sample_rate, sizeof wave.sample_rate, h);
      for (const auto& s : win.prev) h = hash_str(s, h);
      for (const auto& s : win.next) h = hash_str(s, h);
      h = hash_str(corpus::nd_name(win.center_nd), h);
      if (arow != alignment.end())
        for (const auto& row : arow->second) h = hash_str(row.phone + ":" + std::to_string(row.start_frame) + ":" + std::to_string(row.end_frame), h);
      const std::string key = hex(h);
      const std::string fp = feature_path(cfg, r.utt_id);
      if (cached_hash(fp) == key && fs::exists(context_path(cfg, r.utt_id)) && fs::exists(wave_path(cfg, r.utt_id))) {
        synthesized[i] = arow == alignment.end();
        return;
      }

      try {
        const auto clean = enhancer->process(slice, wave.sample_rate);
        const dsp::MelSpec mel = dsp::compute_mel(clean, wave.sample_rate);
        const dsp::PitchTrack f0 = dsp::extract_f0(clean, wave.sample_rate);
        const auto ann = fe.annotate(r.text);
        const auto seq = frontend::g2p(r.text, fe.lexicon, ann);
        const auto symbols = seq.symbols();
        std::vector<int> dur;
        if (arow != alignment.end()) {
          std::vector<std::string> aligned;
          for (const auto& row : arow->second) aligned.push_back(row.phone);
          if (aligned != symbols)
            throw DataError("alignment has " + std::to_string(aligned.size()) + " phones but the frontend gives " +
                            std::to_string(symbols.size()) + " for '" + r.text + "'");
          dur = dsp::alignment_durations(arow->second);
        } else {
          dur = dsp::synth_alignment(static_cast<int>(symbols.size()), mel.n_frames, text::fnv1a(r.utt_id));
          synthesized[i] = 1;
        }
        long total = 0;
        for (int d : dur) total += d;
        if (total != mel.n_frames)
          throw DataError("alignment covers " + std::to_string(total) + " frames, audio has " + std::to_string(mel.n_frames));
        const dsp::PhonePitch pp = dsp::phone_pitch(f0, dur);

        const auto ctx = context::build_utterance_context(win, ann, *fe.embedder);
        context::save_utterance_context(context_path(cfg, r.utt_id), ctx);
        const auto w24 = wave.sample_rate == vocoder::kOutputRate ? clean : dsp::resample(clean, wave.sample_rate, vocoder::kOutputRate);
        dsp::write_wav(wave_path(cfg, r.utt_id), w24, vocoder::kOutputRate);

        std::vector<int> words;
        std::vector<bool> sil;
        for (const auto& p : seq.phones) {
          words.push_back(p.word_index);
          sil.push_back(p.silence);
        }
        std::vector<double> dd(dur.begin(), dur.end()), voiced;
        for (bool v : pp.voiced) voiced.push_back(v ? 1.0 : 0.0);
        const json meta = {{"kind", "features"},
                           {"hash", key},
                           {"utt_id", r.utt_id},
                           {"speaker", r.speaker_id},
                           {"nd", r.dominant_nd() == corpus::NdLabel::dialogue ? 1 : 0},
                           {"phones", symbols},
                           {"word_index", words},
                           {"silence", sil},
                           {"word_boundaries", seq.word_boundaries},
                           {"alignment", arow != alignment.end() ? "file" : "synthesized"}};
        save_archive(fp, meta,
                     {{"mel", Tensor::from({mel.n_frames, mel.n_mels}, mel.values)},
                      {"durations", vector_tensor(dd)},
                      {"log_f0", vector_tensor(pp.log_f0)},
                      {"voiced", vector_tensor(voiced)}});
        computed[i] = 1;
      } catch (const Error& e) {
        throw DataError(r.utt_id + ": " + e.what());
      }
    });
    for (std::size_t i = 0; i < records.size(); ++i) {
      rep.computed += computed[i];
      rep.cached += 1 - computed[i];
      rep.synthesized_alignments += synthesized[i];
      if (records[i].dominant_nd() == corpus::NdLabel::dialogue)
        ++rep.dialogue;
      else
        ++rep.narration;
      rep.oversize += records[i].oversize;
    }
    all.insert(all.end(), records.begin(), records.end());
  }
  rep.utterances = static_cast<int>(all.size());

  // Speaker pitch statistics over every cached utterance.
  std::map<std::string, std::vector<dsp::PhonePitch>> by_speaker;
  for (const auto& r : all) by_speaker[r.speaker_id].push_back(read_features(feature_path(cfg, r.utt_id)).pitch);
  json stats = json::object();
  for (const auto& [spk, list] : by_speaker) {
    const auto s = dsp::fit_pitch_stats(list);
    stats[spk] = {{"mean", s.mean}, {"stddev", s.stddev}};
  }
  write_file(join(cfg.paths.features, "pitch_stats.json"), stats.dump(2) + "\n");
  corpus::write_manifest(join(cfg.paths.features, "manifest.jsonl"), all);

  say(log, "segmentation: " + std::to_string(rep.utterances) + " utterances from " + std::to_string(rep.chapters) + " chapters (" +
               std::to_string(rep.oversize) + " oversize)");
  say(log, "nd labels: " + std::to_string(rep.narration) + " narration, " + std::to_string(rep.dialogue) + " dialogue");
  say(log, "alignments: " + std::to_string(rep.utterances - rep.synthesized_alignments) + " loaded, " +
               std::to_string(rep.synthesized_alignments) + " synthesized");
  say(log, "features: " + std::to_string(rep.computed) + " computed, " + std::to_string(rep.cached) + " cached");
  return rep;
}

// --- datasets ---------------------------------------------------------------

namespace {

std::vector<corpus::UtteranceRecord> read_prepared_manifest(const RunConfig& cfg) {
  require_path("features", cfg.paths.features);
  const std::string m = join(cfg.paths.features, "manifest.jsonl");
  if (!fs::exists(m)) throw UsageError("no prepared manifest in " + cfg.paths.features + " (run prepare first)");
  return corpus::read_manifest(m);
}

}  // namespace

Dataset load_dataset(const RunConfig& cfg, const std::vector<std::string>& speakers, const std::vector<std::string>& only) {
  Dataset ds;
  const auto records = read_prepared_manifest(cfg);
  const frontend::Lexicon lex = cfg.paths.lexicon.empty() ? frontend::Lexicon() : frontend::Lexicon::load(cfg.paths.lexicon);
  ds.phones = lex.phone_list();
  ds.speakers = speakers;
  std::set<std::string> found;
  for (const auto& r : records)
    if (only.empty() || std::find(only.begin(), only.end(), r.speaker_id) != only.end()) found.insert(r.speaker_id);
  for (const auto& s : found)
    if (std::find(ds.speakers.begin(), ds.speakers.end(), s) == ds.speakers.end()) ds.speakers.push_back(s);

  const json stats = json::parse(read_file(join(cfg.paths.features, "pitch_stats.json")));
  for (const auto& [spk, v] : stats.items()) ds.pitch_stats[spk] = {v.at("mean").get<double>(), v.at("stddev").get<double>()};

  for (const auto& r : records) {
    if (!only.empty() && std::find(only.begin(), only.end(), r.speaker_id) == only.end()) continue;
    const FeatureFile f = read_features(feature_path(cfg, r.utt_id));
    acoustic::AcousticItem it;
    it.utt_id = r.utt_id;
    it.phones = f.phones;
    it.phone_ids = phone_ids(f.phones, ds.phones, r.utt_id);
    for (const auto& p : f.phones.phones) it.silence.push_back(p.silence);
    it.context = context::load_utterance_context(context_path(cfg, r.utt_id));
    it.speaker = static_cast<int>(std::find(ds.speakers.begin(), ds.speakers.end(), r.speaker_id) - ds.speakers.begin());
    it.nd = f.nd;
    it.durations = f.durations;
    it.pitch = dsp::normalize_pitch(f.pitch, ds.pitch_stats.at(r.speaker_id));
    it.mel = f.mel;
    ds.records.push_back(r);
    ds.items.push_back(std::move(it));
  }
  return ds;
}

std::vector<vocoder::VocoderExample> load_vocoder_examples(const RunConfig& cfg, const std::vector<std::string>& only) {
  std::vector<vocoder::VocoderExample> out;
  for (const auto& r : read_prepared_manifest(cfg)) {
    if (!only.empty() && std::find(only.begin(), only.end(), r.speaker_id) == only.end()) continue;
    vocoder::VocoderExample e;
    e.utt_id = r.utt_id;
    e.mel = mel_spec_of(read_features(feature_path(cfg, r.utt_id)).mel);
    e.wave = dsp::read_wav(wave_path(cfg, r.utt_id));
    out.push_back(std::move(e));
  }
  return out;
}

// --- training commands ------------------------------------------------------

TrainAcousticReport train_acoustic(const RunConfig& cfg, const TrainAcousticOptions& opt, std::ostream* log) {
  if (cfg.paths.checkpoints.empty()) throw UsageError("paths.checkpoints is not set");
  fs::create_directories(cfg.paths.checkpoints);
  const Dataset ds = load_dataset(cfg, {}, opt.speakers);
  if (ds.items.empty()) throw DataError("no prepared utterances to train on");
  const std::string ckpt = acoustic_checkpoint(cfg);

  training::TrainState st;
  if (opt.resume && fs::exists(ckpt)) {
    json meta;
    st = training::load_train_state(ckpt, &meta);
    if (meta_list(meta, "speakers", ckpt) != ds.speakers || meta_list(meta, "phones", ckpt) != ds.phones)
      throw ConfigError(ckpt + ": speakers or phone set differ from the prepared data; cannot resume");
    say(log, "resuming from step " + std::to_string(st.optimizer.step));
  } else {
    acoustic::AcousticConfig ac = cfg.acoustic;
    ac.n_phones = static_cast<int>(ds.phones.size());
    ac.n_speakers = static_cast<int>(ds.speakers.size());
    ac.d_sem = frontend::make_embedder(cfg.embedder)->dim();
    st.model = acoustic::AcousticModel(ac, cfg.seed);
  }
  const json meta = model_meta(cfg, ds.speakers, ds.phones);
  training::MetricsWriter metrics(join(cfg.paths.checkpoints, "acoustic_metrics.csv"), opt.resume && st.optimizer.step > 0);
  const auto cb = [&](const training::LossValues& v, const training::TrainState& s) {
    metrics.write(v);
    if (cfg.training.checkpoint_every > 0 && v.step % cfg.training.checkpoint_every == 0) training::save_train_state(ckpt, s, meta);
    if (log && (v.step % 50 == 0 || v.step == 1))
      *log << "step " << v.step << " total " << v.total << " l_mel " << v.l_mel << " l_ssim " << v.l_ssim << '\n';
  };
  TrainAcousticReport rep;
  rep.curve = training::train(st, ds.items, cfg.training, cb, opt.max_new_steps);
  training::save_train_state(ckpt, st, meta);
  rep.steps = st.optimizer.step;
  if (!rep.curve.empty()) {
    rep.first_total = rep.curve.front().total;
    rep.last_total = rep.curve.back().total;
  }
  rep.teacher_forced = training::teacher_forced_score(st.model, ds.items);
  say(log, "teacher-forced mel L1 " + std::to_string(rep.teacher_forced.mel_l1) + ", SSIM " + std::to_string(rep.teacher_forced.ssim));
  return rep;
}

TrainVocoderReport train_vocoder(const RunConfig& cfg, const TrainVocoderOptions& opt, std::ostream* log) {
  if (cfg.paths.checkpoints.empty()) throw UsageError("paths.checkpoints is not set");
  fs::create_directories(cfg.paths.checkpoints);
  const auto examples = load_vocoder_examples(cfg, opt.speakers);
  if (examples.empty()) throw DataError("no prepared utterances to train the vocoder on");
  vocoder::VocoderTrainState st;
  if (!opt.init.empty()) {
    if (!fs::exists(opt.init)) throw UsageError("vocoder checkpoint to fine-tune does not exist: " + opt.init);
    st.model = vocoder::load_vocoder(opt.init).model;  // fresh optimiser state for the new track
    say(log, "fine-tuning from " + opt.init);
  } else {
    st.model = vocoder::Vocoder(cfg.vocoder, cfg.seed);
  }
  const std::string out = opt.out.empty() ? vocoder_checkpoint(cfg) : opt.out;
  std::ofstream csv(join(cfg.paths.checkpoints, "vocoder_metrics.csv"));
  csv << "step,d_loss,g_adv,g_fm,g_mel,g_total\n";
  csv << std::setprecision(10);
  const auto cb = [&](const vocoder::VocoderStepLosses& v, const vocoder::VocoderTrainState&) {
    csv << v.step << ',' << v.d_loss << ',' << v.g_adv << ',' << v.g_fm << ',' << v.g_mel << ',' << v.g_total << '\n';
    if (log && (v.step % 50 == 0 || v.step == 1)) *log << "step " << v.step << " mel " << v.g_mel << " d " << v.d_loss << '\n';
  };
  TrainVocoderReport rep;
  rep.curve = vocoder::train_vocoder(st, examples, cfg.vocoder_training, cb);
  vocoder::save_vocoder(out, st, {{"preset", preset_name(cfg.preset)}});
  rep.steps = st.opt_g.step;
  if (!rep.curve.empty()) {
    rep.first_mel = rep.curve.front().g_mel;
    rep.last_mel = rep.curve.back().g_mel;
  }
  return rep;
}

AdaptReport adapt(const RunConfig& cfg, const AdaptOptions& opt, std::ostream* log) {
  if (opt.source.empty()) throw UsageError("adapt needs a source acoustic checkpoint (--source)");
  if (!fs::exists(opt.source)) throw UsageError("source checkpoint does not exist: " + opt.source);
  if (opt.speaker.empty()) throw UsageError("adapt needs a target speaker (--speaker)");
  json meta;
  const acoustic::AcousticModel source = acoustic::load_acoustic(opt.source, &meta);
  const auto speakers = meta_list(meta, "speakers", opt.source);
  const auto phones = meta_list(meta, "phones", opt.source);
  if (std::find(speakers.begin(), speakers.end(), opt.speaker) != speakers.end())
    throw UsageError("speaker '" + opt.speaker + "' is already in the source model");

  Dataset ds = load_dataset(cfg, speakers, {opt.speaker});
  if (ds.items.empty()) throw DataError("no prepared utterances for speaker '" + opt.speaker + "'");
  if (ds.phones != phones) throw ConfigError(opt.source + ": phone set differs from the configured lexicon");
  const int n_train = std::min(static_cast<int>(ds.items.size()), std::max(1, opt.train_count));
  std::vector<acoustic::AcousticItem> train(ds.items.begin(), ds.items.begin() + n_train);
  std::vector<acoustic::AcousticItem> valid(ds.items.begin() + n_train, ds.items.end());
  if (valid.empty()) {
    spdlog::warn("no held-out utterances for {}; validating on the adaptation set", opt.speaker);
    valid = train;
  }
  const int new_id = static_cast<int>(speakers.size());
  for (auto& it : valid) it.speaker = new_id;

  training::AdaptConfig ac = cfg.adapt;
  ac.train = cfg.training;
  ac.train.seed = cfg.seed;
  training::AdaptConfig zero = ac;
  zero.steps = 0;
  AdaptReport rep;
  rep.train_items = n_train;
  rep.validation_items = static_cast<int>(valid.size());
  rep.validation_l1_before = training::teacher_forced_score(training::adapt(source, speakers, opt.speaker, train, zero).model, valid).mel_l1;
  auto res = training::adapt(source, speakers, opt.speaker, train, ac);
  rep.validation_l1_after = training::teacher_forced_score(res.model, valid).mel_l1;
  rep.curve = res.curve;

  const std::string out = opt.out.empty() ? join(cfg.paths.checkpoints, "adapted_" + opt.speaker + ".ckpt") : opt.out;
  if (const auto parent = fs::path(out).parent_path(); !parent.empty()) fs::create_directories(parent);
  json m = model_meta(cfg, res.speakers, phones);
  m["adapted_from"] = opt.source;
  acoustic::save_acoustic(out, res.model, m);
  if (!cfg.paths.checkpoints.empty()) {
    fs::create_directories(cfg.paths.checkpoints);
    training::MetricsWriter metrics(join(cfg.paths.checkpoints, "adapt_" + opt.speaker + "_metrics.csv"));
    for (const auto& v : rep.curve) metrics.write(v);
  }
  say(log, "validation mel L1 " + std::to_string(rep.validation_l1_before) + " -> " + std::to_string(rep.validation_l1_after));
  return rep;
}

frontend::HeadTrainReport train_frontend(const RunConfig& cfg, std::ostream* log) {
  require_path("frontend_data", cfg.paths.frontend_data);
  if (cfg.paths.checkpoints.empty()) throw UsageError("paths.checkpoints is not set");
  const frontend::Frontend fe = load_frontend(cfg);
  auto read = [&](const char* name, frontend::Task task) {
    const std::string p = join(cfg.paths.frontend_data, name);
    return fs::exists(p) ? frontend::read_conll(p, task) : std::vector<frontend::LabeledSentence>{};
  };
  const auto pos = read("pos.conll", frontend::Task::pos);
  const auto liaison = read("liaison.conll", frontend::Task::liaison);
  const auto poly = read("polyphone.conll", frontend::Task::polyphone);
  if (pos.empty() && liaison.empty() && poly.empty())
    throw DataError("no pos.conll, liaison.conll or polyphone.conll in " + cfg.paths.frontend_data);
  frontend::HeadTrainReport rep;
  const auto heads =
      frontend::train_annotation_heads(pos, liaison, poly, *fe.embedder, polyphone_classes(fe.lexicon), cfg.frontend_training, &rep);
  fs::create_directories(cfg.paths.checkpoints);
  heads.save(frontend_checkpoint(cfg));
  const json report = {{"pos_accuracy", rep.pos_accuracy},       {"pos_heldout", rep.pos_heldout},
                       {"liaison_accuracy", rep.liaison_accuracy}, {"liaison_heldout", rep.liaison_heldout},
                       {"polyphone_accuracy", rep.polyphone_accuracy}, {"polyphone_heldout", rep.polyphone_heldout}};
  write_file(join(cfg.paths.checkpoints, "frontend_report.json"), report.dump(2) + "\n");
  say(log, "held-out accuracy: POS " + std::to_string(rep.pos_accuracy) + ", liaison " + std::to_string(rep.liaison_accuracy) +
               ", polyphone " + std::to_string(rep.polyphone_accuracy));
  return rep;
}

// --- synthesis --------------------------------------------------------------

namespace {

std::vector<std::string> read_paragraphs(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> out;
  std::string line, cur;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) {
      if (!text::trim(cur).empty()) out.push_back(text::collapse_space(cur));
      cur.clear();
    } else {
      cur += (cur.empty() ? "" : " ") + line;
    }
  }
  if (!text::trim(cur).empty()) out.push_back(text::collapse_space(cur));
  return out;
}

/// Majority label over the sentence's characters within the paragraph's
/// narration/dialogue partition.
corpus::NdLabel label_in_paragraph(const std::string& para, const corpus::NdResult& nd, std::size_t begin, std::size_t end) {
  std::size_t dialogue = 0, total = 0;
  for (const auto& s : nd.spans) {
    const std::size_t b = std::max(begin, s.begin), e = std::min(end, s.end);
    if (e <= b) continue;
    const std::size_t n = text::visible_count(std::string_view(para).substr(b, e - b));
    total += n;
    if (s.label == corpus::NdLabel::dialogue) dialogue += n;
  }
  return total > 0 && 2 * dialogue > total ? corpus::NdLabel::dialogue : corpus::NdLabel::narration;
}

std::string fmt_id(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "utt_%04d", i);
  return buf;
}

json tensor_json(const Tensor& t) { return t.defined() ? json(t.values()) : json::array(); }

}  // namespace

std::vector<SynthesizedUtterance> synthesize(const RunConfig& cfg, const SynthesizeOptions& opt, std::ostream* log) {
  if (opt.text_file.empty()) throw UsageError("synthesize needs an input text file (--text)");
  if (!fs::exists(opt.text_file)) throw UsageError("input text file does not exist: " + opt.text_file);
  if (opt.sample_rate != vocoder::kFinalRate && opt.sample_rate != vocoder::kOutputRate)
    throw UsageError("output sample rate must be 22050 or 24000");
  const std::string ackpt = opt.acoustic.empty() ? acoustic_checkpoint(cfg) : opt.acoustic;
  if (!fs::exists(ackpt)) throw ConfigError("acoustic stage: missing checkpoint " + ackpt);
  vocoder::VocoderConfig vcfg = cfg.vocoder;
  if (opt.mode) vcfg.mode = *opt.mode;
  std::optional<vocoder::Vocoder> voc;
  if (vcfg.mode == vocoder::Mode::gan) {
    const std::string vckpt = vocoder_checkpoint(cfg);
    if (!fs::exists(vckpt)) throw ConfigError("vocoder stage: missing checkpoint " + vckpt + " (or use --mode griffinlim)");
    voc = vocoder::load_vocoder(vckpt).model;
  }
  json meta;
  const acoustic::AcousticModel model = acoustic::load_acoustic(ackpt, &meta);
  const auto speakers = meta_list(meta, "speakers", ackpt);
  const auto phones = meta_list(meta, "phones", ackpt);
  const std::string speaker = opt.speaker.empty() ? speakers.front() : opt.speaker;
  const auto sit = std::find(speakers.begin(), speakers.end(), speaker);
  if (sit == speakers.end()) throw UsageError("speaker '" + speaker + "' is not in " + ackpt);
  RunConfig fcfg = cfg;
  if (meta.contains("embedder")) fcfg.embedder = meta.at("embedder").get<std::string>();
  const frontend::Frontend fe = load_frontend(fcfg);
  if (fe.embedder->dim() != model.config().d_sem)
    throw ConfigError("frontend stage: embedder dimension " + std::to_string(fe.embedder->dim()) + " does not match the model's " +
                      std::to_string(model.config().d_sem));

  // Sentences of the whole document form one chapter for context windows.
  std::vector<corpus::UtteranceRecord> records;
  for (const auto& raw : read_paragraphs(opt.text_file)) {
    const std::string para = frontend::normalize_text(raw);
    const auto nd = corpus::classify_nd(para, cfg.segmentation);
    std::size_t at = 0;
    for (const auto& s : frontend::split_sentences(para)) {
      const std::size_t pos = para.find(s, at);
      corpus::NdLabel label = corpus::sentence_label(s, cfg.segmentation);
      if (pos != std::string::npos) {
        label = label_in_paragraph(para, nd, pos, pos + s.size());
        at = pos + s.size();
      }
      corpus::UtteranceRecord r;
      r.utt_id = fmt_id(static_cast<int>(records.size()));
      r.chapter_id = "input";
      r.speaker_id = speaker;
      r.text = s;
      r.nd_label = {label};
      records.push_back(std::move(r));
    }
  }
  if (records.empty()) throw DataError(opt.text_file + " contains no sentences");
  const std::size_t w = static_cast<std::size_t>(std::max(0, cfg.segmentation.context_window));
  for (std::size_t g = 0; g < records.size(); ++g) {
    for (std::size_t k = g > w ? g - w : 0; k < g; ++k) records[g].context_prev_ids.push_back(records[k].utt_id);
    for (std::size_t k = g + 1; k < records.size() && k <= g + w; ++k) records[g].context_next_ids.push_back(records[k].utt_id);
  }

  const std::string out_dir = opt.out_dir.empty() ? cfg.paths.output : opt.out_dir;
  if (out_dir.empty()) throw UsageError("no output directory (paths.output or --out)");
  fs::create_directories(out_dir);
  NoGradGuard ng;
  std::vector<SynthesizedUtterance> out;
  std::string index;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const auto ann = fe.annotate(r.text);
    acoustic::AcousticItem item;
    item.utt_id = r.utt_id;
    item.phones = frontend::g2p(r.text, fe.lexicon, ann);
    item.phone_ids = phone_ids(item.phones, phones, r.utt_id);
    for (const auto& p : item.phones.phones) item.silence.push_back(p.silence);
    item.context = context::build_utterance_context(context::window_for(records, i), ann, *fe.embedder);
    item.speaker = static_cast<int>(sit - speakers.begin());
    item.nd = r.nd_label.front() == corpus::NdLabel::dialogue ? 1 : 0;
    const acoustic::InferOutput inf = model.forward_infer(item);
    const dsp::MelSpec mel = mel_spec_of(inf.mel());
    const auto wave24 = vocoder::generate(mel, vcfg, voc ? &*voc : nullptr);
    const auto wave = opt.sample_rate == vocoder::kFinalRate ? vocoder::finalize(wave24) : wave24;

    SynthesizedUtterance u{r.utt_id, r.text, r.nd_label.front(), join(out_dir, r.utt_id + ".wav"), mel.n_frames,
                           static_cast<int>(wave.size())};
    dsp::write_wav(u.wav_path, wave, opt.sample_rate);
    index += json{{"utt_id", u.utt_id},
                  {"text", u.text},
                  {"nd", corpus::nd_name(u.nd)},
                  {"wav", r.utt_id + ".wav"},
                  {"frames", u.frames},
                  {"samples", u.samples},
                  {"sample_rate", opt.sample_rate}}
                 .dump() +
             "\n";
    if (opt.dump_features) {
      const auto& c = *item.context;
      bool zero = true;
      for (double v : c.cse.values()) zero = zero && v == 0.0;
      const json dump = {{"utt_id", r.utt_id},
                         {"text", r.text},
                         {"nd", corpus::nd_name(u.nd)},
                         {"is_narration", c.is_narration},
                         {"cse", tensor_json(c.cse)},
                         {"cse_is_zero", zero},
                         {"cse_tokens", c.cse_tokens},
                         {"phones", item.phones.symbols()},
                         {"durations", inf.durations},
                         {"pitch", inf.pitch},
                         {"gst", tensor_json(inf.gst)}};
      write_file(join(out_dir, r.utt_id + ".features.json"), dump.dump(2) + "\n");
    }
    say(log, r.utt_id + " [" + corpus::nd_name(u.nd) + "] " + std::to_string(u.frames) + " frames: " + r.text);
    out.push_back(std::move(u));
  }
  write_file(join(out_dir, "index.jsonl"), index);
  return out;
}

// --- evaluation -------------------------------------------------------------

json evaluate(const RunConfig& cfg, const EvalOptions& opt, std::ostream* log) {
  const std::string ackpt = opt.acoustic.empty() ? acoustic_checkpoint(cfg) : opt.acoustic;
  if (!fs::exists(ackpt)) throw ConfigError("acoustic stage: missing checkpoint " + ackpt);
  json meta;
  const acoustic::AcousticModel model = acoustic::load_acoustic(ackpt, &meta);
  const auto speakers = meta_list(meta, "speakers", ackpt);
  json report = json::object();

  const std::string hset = cfg.paths.frontend_data.empty() ? "" : join(cfg.paths.frontend_data, "homographs.jsonl");
  if (!hset.empty() && fs::exists(hset)) {
    const auto r = frontend::eval_homographs(frontend::read_homograph_testset(hset), load_frontend(cfg));
    report["homograph_accuracy"] = r.accuracy;
    report["homograph_items"] = r.total;
  } else {
    report["homograph_accuracy"] = nullptr;
    report["homograph_items"] = 0;
  }

  Dataset ds = load_dataset(cfg, speakers);
  std::vector<acoustic::AcousticItem> items;
  for (auto& it : ds.items) {
    if (!opt.utterances.empty() && std::find(opt.utterances.begin(), opt.utterances.end(), it.utt_id) == opt.utterances.end()) continue;
    if (it.speaker >= model.config().n_speakers) continue;  // speaker unknown to this model
    items.push_back(std::move(it));
  }
  report["utterances"] = items.size();
  if (items.empty()) {
    for (const char* k : {"mel_l1", "ssim", "duration_l1", "pitch_l1", "teacher_forced_mel_l1", "teacher_forced_ssim"})
      report[k] = nullptr;
  } else {
    NoGradGuard ng;
    double mel_l1 = 0, ssim = 0, dur_l1 = 0, pitch_l1 = 0;
    for (const auto& it : items) {
      const auto inf = model.forward_infer(it);
      const Tensor pm = inf.mel();
      const int F = std::min(pm.dim(0), it.n_frames()), M = it.mel.dim(1);
      std::vector<double> a(pm.values().begin(), pm.values().begin() + static_cast<std::ptrdiff_t>(F) * M);
      std::vector<double> b(it.mel.values().begin(), it.mel.values().begin() + static_cast<std::ptrdiff_t>(F) * M);
      double s = 0;
      for (std::size_t k = 0; k < a.size(); ++k) s += std::abs(a[k] - b[k]);
      mel_l1 += s / a.size();
      ssim += dsp::ssim(a, b, F, M);
      double d = 0, p = 0;
      for (int k = 0; k < it.n_phones(); ++k) {
        d += std::abs(inf.durations[k] - it.durations[k]);
        p += std::abs(inf.pitch[k] - it.pitch[k]);
      }
      dur_l1 += d / it.n_phones();
      pitch_l1 += p / it.n_phones();
    }
    const double n = static_cast<double>(items.size());
    report["mel_l1"] = mel_l1 / n;
    report["ssim"] = ssim / n;
    report["duration_l1"] = dur_l1 / n;
    report["pitch_l1"] = pitch_l1 / n;
    const auto tf = training::teacher_forced_score(model, items);
    report["teacher_forced_mel_l1"] = tf.mel_l1;
    report["teacher_forced_ssim"] = tf.ssim;
  }
  const std::string path = !opt.report.empty() ? opt.report : cfg.paths.output.empty() ? "" : join(cfg.paths.output, "eval.json");
  if (!path.empty()) write_file(path, report.dump(2) + "\n");
  say(log, report.dump(2));
  return report;
}

}  // namespace abtts::pipeline
