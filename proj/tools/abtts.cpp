// Command-line driver. Exit codes: 0 success, 1 usage or configuration,
// 2 data error, 3 runtime error.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "abtts/error.hpp"
#include "abtts/gencorpus.hpp"
#include "abtts/pipeline.hpp"

namespace fs = std::filesystem;
using namespace abtts;

namespace {

constexpr int kOk = 0, kUsage = 1, kData = 2, kRuntime = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool quiet = false;
};

pipeline::RunConfig load_config(const Common& c) {
  if (c.config.empty()) throw UsageError("--config is required");
  if (!fs::exists(c.config)) throw UsageError("config file does not exist: " + c.config);
  auto cfg = pipeline::RunConfig::load(c.config);
  if (c.seed) cfg.apply_seed(*c.seed);
  if (c.threads) cfg.threads = *c.threads;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Paragraph-aware French audiobook TTS: data preparation, training, synthesis and evaluation."};
  app.require_subcommand(1);
  Common common;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config, "JSON run configuration (paths, preset, per-module settings)");
    sub->add_option("--seed", common.seed, "Override every seed in the configuration");
    sub->add_option("--threads", common.threads, "Worker threads for prepare (0 = all cores)");
    sub->add_flag("-q,--quiet", common.quiet, "Only print warnings and errors");
  };

  auto* prepare = app.add_subcommand("prepare", "Segment chapters and cache features, alignments and contexts");
  add_common(prepare);

  pipeline::TrainAcousticOptions ta;
  auto* train_acoustic = app.add_subcommand("train-acoustic", "Train the acoustic model on prepared features");
  add_common(train_acoustic);
  train_acoustic->add_flag("--resume", ta.resume, "Continue from checkpoints/acoustic.ckpt");
  train_acoustic->add_option("--max-steps", ta.max_new_steps, "Stop after this many new steps");
  train_acoustic->add_option("--speaker", ta.speakers, "Train only on these speakers");

  pipeline::TrainVocoderOptions tv;
  auto* train_vocoder = app.add_subcommand("train-vocoder", "Train or fine-tune the vocoder");
  add_common(train_vocoder);
  train_vocoder->add_option("--init", tv.init, "Fine-tune from this vocoder checkpoint");
  train_vocoder->add_option("--speaker", tv.speakers, "Restrict training data to these speakers");
  train_vocoder->add_option("--out", tv.out, "Output checkpoint (default checkpoints/vocoder.ckpt)");

  pipeline::AdaptOptions ad;
  std::string adapt_mode;
  auto* adapt = app.add_subcommand("adapt", "Adapt a trained acoustic model to a new speaker");
  add_common(adapt);
  adapt->add_option("--source", ad.source, "Source acoustic checkpoint");
  adapt->add_option("--speaker", ad.speaker, "Target speaker id in the prepared data");
  adapt->add_option("--train-count", ad.train_count, "Target utterances used for adaptation; the rest validate");
  adapt->add_option("--mode", adapt_mode, "all, subset or embedding_only");
  adapt->add_option("--out", ad.out, "Output checkpoint (default checkpoints/adapted_<speaker>.ckpt)");

  auto* train_frontend = app.add_subcommand("train-frontend", "Train the POS, liaison and polyphone heads");
  add_common(train_frontend);

  pipeline::SynthesizeOptions sy;
  std::string synth_mode;
  auto* synthesize = app.add_subcommand("synthesize", "Synthesize a text file, one WAV per sentence");
  add_common(synthesize);
  synthesize->add_option("-t,--text", sy.text_file, "Input text; paragraphs are separated by blank lines");
  synthesize->add_option("--speaker", sy.speaker, "Speaker id (default: the checkpoint's first speaker)");
  synthesize->add_option("--mode", synth_mode, "Vocoder mode: gan or griffinlim");
  synthesize->add_option("--acoustic", sy.acoustic, "Acoustic checkpoint (default checkpoints/acoustic.ckpt)");
  synthesize->add_option("-o,--out", sy.out_dir, "Output directory (default paths.output)");
  synthesize->add_option("--sample-rate", sy.sample_rate, "22050 (final) or 24000 (raw vocoder output)");
  synthesize->add_flag("--dump-features", sy.dump_features, "Write <utt>.features.json with CSE and predicted prosody");

  pipeline::EvalOptions ev;
  auto* eval = app.add_subcommand("eval", "Homograph accuracy and objective metrics as a JSON report");
  add_common(eval);
  eval->add_option("--acoustic", ev.acoustic, "Acoustic checkpoint (default checkpoints/acoustic.ckpt)");
  eval->add_option("--utt", ev.utterances, "Evaluate only these prepared utterances");
  eval->add_option("--report", ev.report, "Report path (default <output>/eval.json)");

  gencorpus::GenCorpusConfig gc;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-corpus", "Write the bundled synthetic corpus and a toy config");
  gen->add_option("-o,--out", gen_out, "Output directory")->required();
  gen->add_option("--utterances", gc.utterances, "Total utterances");
  gen->add_option("--speakers", gc.speakers, "Number of speakers (ignored with --per-speaker)");
  gen->add_option("--per-speaker", gc.per_speaker, "Utterances per speaker (overrides --utterances)");
  gen->add_option("--seed", gc.seed, "Generator seed");
  gen->add_flag("-q,--quiet", common.quiet, "Only print warnings and errors");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  spdlog::set_level(common.quiet ? spdlog::level::warn : spdlog::level::info);
  std::ostream* log = common.quiet ? nullptr : &std::cout;
  try {
    if (*gen) {
      const auto r = gencorpus::write_corpus(gen_out, gc);
      if (log)
        *log << "wrote " << r.utt_ids.size() << " utterances (" << r.speakers.size() << " speakers, " << r.total_frames
             << " frames) to " << gen_out << '\n';
      return kOk;
    }
    const auto cfg = load_config(common);
    if (*prepare) {
      pipeline::prepare(cfg, log);
    } else if (*train_acoustic) {
      pipeline::train_acoustic(cfg, ta, log);
    } else if (*train_vocoder) {
      pipeline::train_vocoder(cfg, tv, log);
    } else if (*adapt) {
      auto c = cfg;
      if (!adapt_mode.empty()) c.adapt.mode = training::parse_adapt_mode(adapt_mode);
      pipeline::adapt(c, ad, log);
    } else if (*train_frontend) {
      pipeline::train_frontend(cfg, log);
    } else if (*synthesize) {
      if (!synth_mode.empty()) sy.mode = vocoder::parse_mode(synth_mode);
      pipeline::synthesize(cfg, sy, log);
    } else if (*eval) {
      pipeline::evaluate(cfg, ev, log);
    }
    return kOk;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return kRuntime;
  }
}
