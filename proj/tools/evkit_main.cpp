// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#include <malloc.h>

#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "evkit/error.hpp"
#include "evkit/manifest.hpp"
#include "evkit/model.hpp"
#include "evkit/pipeline.hpp"
#include "evkit/preprocess.hpp"
#include "evkit/synthgen.hpp"
#include "evkit/trainer.hpp"

namespace fs = std::filesystem;

namespace {

struct SynthArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
};

struct PreprocessArgs {
  std::string manifest, out;
};

struct TrainArgs {
  std::string config, frames, checkpoint, history;
  std::optional<std::size_t> n_vsf, max_steps;
  std::size_t log_every = 100;
};

struct EmbedArgs {
  std::string checkpoint, frames, out;
};

struct EvaluateArgs {
  std::string embeddings, out_dir, aggregation = "utterance", splits = "val,test1,test2";
  double fraction = 1.0, p_target = 0.01;
  std::uint64_t seed = 0;
};

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(6);
  o << v;
  return o.str();
}

int run_synth(const SynthArgs& a) {
  evkit::CorpusConfig cfg;
  if (!a.config.empty()) cfg = evkit::read_corpus_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  const auto res = evkit::generate_corpus(cfg, a.out);
  const std::size_t total = res.files_written + res.files_unchanged;
  std::cout << "manifest=" << res.manifest_path.string() << " files=" << total
            << " speakers=" << cfg.n_speakers << " emotions=" << cfg.emotions.size()
            << " written=" << res.files_written << " unchanged=" << res.files_unchanged << '\n';
  if (total > 0 && res.files_unchanged == total) {
    std::cout << "note: identical corpus already present, no files changed\n";
  }
  return 0;
}

int run_preprocess(const PreprocessArgs& a) {
  const auto manifest = evkit::Manifest::read(a.manifest);
  const auto s = evkit::preprocess_corpus(manifest, a.out);
  std::cout << "frames=" << s.frames << " dropped_clips=" << s.dropped_clips << '\n'
            << "index=" << s.index_path.string() << " files=" << s.files
            << " vad_reference_rms=" << fmt(s.vad_reference_rms) << '\n';
  return 0;
}

int run_train(const TrainArgs& a) {
  evkit::TrainConfig cfg;
  if (!a.config.empty()) cfg = evkit::read_train_config(a.config);
  if (a.n_vsf) cfg.n_vsf = *a.n_vsf;
  if (a.max_steps) {
    cfg.max_steps = *a.max_steps;
    cfg.plateau_window = std::min(cfg.plateau_window, cfg.max_steps);
  }
  cfg.validate();
  const auto index = evkit::FrameIndex::read(a.frames);

  evkit::TrainOptions opts;
  opts.checkpoint_path = fs::path(a.checkpoint);
  opts.history_path = a.history.empty()
                          ? fs::path(a.checkpoint).replace_extension(".history.csv")
                          : fs::path(a.history);
  const auto start = std::chrono::steady_clock::now();
  if (a.log_every > 0) {
    opts.on_step = [&](std::size_t step, double loss) {
      if ((step + 1) % a.log_every != 0) return;
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cerr << "step " << step + 1 << " loss " << fmt(loss) << " elapsed_s " << fmt(secs)
                << '\n';
    };
  }
  std::cout << "params=" << evkit::param_count(evkit::ModelConfig{cfg.n_vsf})
            << " n_vsf=" << cfg.n_vsf << '\n';
  const auto res = evkit::train(cfg, index, opts);
  const auto& h = res.history;
  std::cout << "steps=" << h.steps.size() << " stop=" << h.stop_reason
            << " final_loss=" << fmt(h.losses.empty() ? 0.0 : h.losses.back()) << '\n'
            << "checkpoint=" << a.checkpoint << " history=" << opts.history_path->string() << '\n';
  return 0;
}

int run_embed(const EmbedArgs& a) {
  const auto ck = evkit::load_checkpoint(a.checkpoint);
  const auto index = evkit::FrameIndex::read(a.frames);
  const auto s = evkit::embed_frames(ck.weights, index, a.out);
  std::cout << "embeddings=" << s.store.rows.size() << " dim=" << evkit::kEVectorDim
            << " index=" << s.index_path.string() << '\n';
  std::cerr << "ms_per_frame " << fmt(s.ms_per_frame) << '\n';
  return 0;
}

int run_evaluate(const EvaluateArgs& a) {
  evkit::EvalConfig cfg;
  cfg.fraction = a.fraction;
  cfg.seed = a.seed;
  cfg.p_target = a.p_target;
  cfg.aggregation = evkit::parse_aggregation(a.aggregation);
  cfg.splits.clear();
  std::stringstream ss(a.splits);
  for (std::string s; std::getline(ss, s, ',');) {
    if (!s.empty()) cfg.splits.push_back(s);
  }
  const auto store = evkit::EmbeddingStore::read(a.embeddings);
  const auto out = evkit::evaluate(store, cfg);
  evkit::write_eval_outputs(out, a.out_dir);
  const auto& m = out.metrics;
  std::cout << "genuine=" << m.n_genuine << " impostor=" << m.n_impostor << " eer=" << fmt(m.eer)
            << " min_dcf=" << fmt(m.min_dcf) << " auc=" << fmt(m.auc)
            << " tmr_at_fmr1=" << fmt(m.tmr_fmr_1) << " tmr_at_fmr10=" << fmt(m.tmr_fmr_10)
            << '\n'
            << "grid_cells=" << out.grid.size() << " out_dir=" << a.out_dir << '\n';
  if (out.few_pairs) std::cout << "note: fewer than 100 scored pairs, metrics are noisy\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // Tapes allocate and free large blocks every step; keep them off mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, -1);

  CLI::App app{"evkit: emotion-robust speaker embedding toolkit"};
  app.require_subcommand(1);
  app.footer("Environment: EVKIT_THREADS caps worker threads.\n"
             "Exit codes: 0 success, 2 usage or config error, 3 I/O error, 4 numeric failure.");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate the synthetic labeled corpus");
  s->add_option("--config", synth.config, "Corpus config (key=value); defaults when omitted");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--seed", synth.seed, "Corpus seed, overrides the config");

  PreprocessArgs pre;
  auto* p = app.add_subcommand("preprocess", "Voice-gate, segment and frame a manifest");
  p->add_option("--manifest", pre.manifest, "Manifest CSV")->required();
  p->add_option("--out", pre.out, "Output directory for frames and frames.csv")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the E-Vector model on preprocessed frames");
  t->add_option("--config", tr.config, "Train config (key=value); defaults when omitted");
  t->add_option("--frames", tr.frames, "Frame index CSV from preprocess")->required();
  t->add_option("--out-checkpoint", tr.checkpoint, "Checkpoint path")->required();
  t->add_option("--history", tr.history,
                "Loss history CSV (default: checkpoint path with .history.csv)");
  t->add_option("--n-vsf", tr.n_vsf, "Number of vocal style factors, overrides the config")
      ->check(CLI::PositiveNumber);
  t->add_option("--max-steps", tr.max_steps, "Step limit, overrides the config")
      ->check(CLI::PositiveNumber);
  t->add_option("--log-every", tr.log_every, "Progress line every N steps on stderr, 0 disables");

  EmbedArgs em;
  auto* e = app.add_subcommand("embed", "Compute E-Vectors for every indexed frame");
  e->add_option("--checkpoint", em.checkpoint, "Checkpoint from train")->required();
  e->add_option("--frames", em.frames, "Frame index CSV")->required();
  e->add_option("--out", em.out, "Output directory for embeddings and embeddings.csv")->required();

  EvaluateArgs ev;
  auto* v = app.add_subcommand("evaluate", "Score embedding pairs and write metrics");
  v->add_option("--embeddings", ev.embeddings, "embeddings.csv from embed")->required();
  v->add_option("--fraction", ev.fraction, "Fraction of pairs scored, in (0, 1]");
  v->add_option("--seed", ev.seed, "Pair sampling seed");
  v->add_option("--p-target", ev.p_target, "Target prior for minDCF");
  v->add_option("--out-dir", ev.out_dir, "Directory for metrics and plot CSVs")->required();
  v->add_option("--aggregation", ev.aggregation, "utterance or clip")
      ->check(CLI::IsMember({"utterance", "clip"}));
  v->add_option("--splits", ev.splits, "Comma-separated splits to score");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForVersion& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    std::cerr << "error: " << err.what() << "\n\n";
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return 2;
  }

  try {
    if (s->parsed()) return run_synth(synth);
    if (p->parsed()) return run_preprocess(pre);
    if (t->parsed()) return run_train(tr);
    if (e->parsed()) return run_embed(em);
    if (v->parsed()) return run_evaluate(ev);
  } catch (const evkit::Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return err.exit_code();
  } catch (const std::filesystem::filesystem_error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 2;
}
