#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "rsvc/model_io.hpp"
#include "rsvc/runconfig.hpp"
#include "rsvc/selfcheck.hpp"
#include "rsvc/wav.hpp"

namespace fs = std::filesystem;
using namespace rsvc;

namespace {

[[noreturn]] void fail(const std::string& msg) {
  std::fprintf(stderr, "error: %s\n", msg.c_str());
  std::exit(1);
}

std::string need(const fs::path& path, const std::string& hint) {
  if (!fs::exists(path)) fail(path.string() + " not found - " + hint);
  return path.string();
}

RunConfig config_or_defaults(const std::string& config_path) {
  if (!config_path.empty()) return load_run_config(config_path);
  RunConfig cfg;
  cfg.wire();
  return cfg;
}

void banner(const char* cmd, const RunConfig& cfg, unsigned seed) {
  std::printf("%s: config %016llx  seed %u\n", cmd,
              static_cast<unsigned long long>(run_config_hash(cfg)), seed);
}

void save_float_curve(const std::vector<float>& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail("cannot write " + path);
  out << "step loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) out << i << " " << curve[i] << "\n";
}

struct Workspace {
  fs::path out;
  fs::path ckpt_override;

  fs::path corpus() const { return out / "corpus"; }
  fs::path checkpoints() const { return ckpt_override.empty() ? out / "checkpoints" : ckpt_override; }
  fs::path reports() const { return out / "reports"; }
  fs::path gta() const { return out / "gta"; }

  std::vector<ManifestEntry> manifest() const {
    return load_manifest(need(corpus() / "corpus.jsonl", "run datagen first"));
  }
  std::vector<AudioBuffer> noise() const {
    return load_noise_tracks(need(corpus() / "noise.jsonl", "run datagen first"),
                             corpus().string());
  }
  LoadedContentModel content() const {
    return load_content_model(need(checkpoints() / "content.rsvc", "run train-content first"));
  }
  LoadedMelodyModel melody() const {
    return load_melody_model(need(checkpoints() / "melody.rsvc", "run train-melody first"));
  }
  LoadedConversionModel conversion(const std::string& stem) const {
    return load_conversion_model(
        need(checkpoints() / (stem + ".rsvc"), "run train-svc --variant first"));
  }
};

std::string variant_stem(const std::string& variant) {
  return variant == "robust" ? "conversion_robust" : "conversion_pitch_energy";
}

int meta_steps(const std::map<std::string, std::string>& meta) {
  const auto it = meta.find("trained_steps");
  return it == meta.end() ? 0 : std::atoi(it->second.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"noise-robust any-to-one singing voice conversion"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "work", checkpoints_dir;
  std::string variant = "robust", in_path, out_path, ref_path;
  std::vector<double> snrs_override;
  int steps_override = -1, warmup_override = -1;
  long seed_override = -1;
  int gc_shapes = 4, gc_seeds = 2;

  auto add_workspace = [&](CLI::App* c) {
    c->add_option("--config", config_path, "run config file (sectioned key = value)");
    c->add_option("--out-dir", out_dir, "workspace directory")->capture_default_str();
  };
  auto add_checkpoints = [&](CLI::App* c) {
    c->add_option("--checkpoints", checkpoints_dir,
                  "checkpoint directory (default <out-dir>/checkpoints)");
  };
  auto add_seed = [&](CLI::App* c) {
    c->add_option("--seed", seed_override, "override the relevant section's seed");
  };
  auto add_variant = [&](CLI::App* c) {
    c->add_option("--variant", variant, "robust | pitch-energy")->capture_default_str();
  };

  CLI::App* datagen = app.add_subcommand("datagen", "synthesize the singing corpus");
  add_workspace(datagen);
  add_seed(datagen);

  CLI::App* train_content = app.add_subcommand("train-content", "CTC-train the content encoder");
  add_workspace(train_content);
  add_checkpoints(train_content);
  add_seed(train_content);
  train_content->add_option("--steps", steps_override, "override training steps");

  CLI::App* train_melody =
      app.add_subcommand("train-melody", "train the noise-robust melody extractor");
  add_workspace(train_melody);
  add_checkpoints(train_melody);
  add_seed(train_melody);
  train_melody->add_option("--steps", steps_override, "override training steps");

  CLI::App* train_svc_cmd =
      app.add_subcommand("train-svc", "adversarially train the conversion model");
  add_workspace(train_svc_cmd);
  add_checkpoints(train_svc_cmd);
  add_seed(train_svc_cmd);
  add_variant(train_svc_cmd);
  train_svc_cmd->add_option("--steps", steps_override, "override training steps");
  train_svc_cmd->add_option("--warmup-steps", warmup_override, "override adversarial warmup");

  CLI::App* gta_gen =
      app.add_subcommand("gta-gen", "cache ground-truth-aligned mels for vocoder tuning");
  add_workspace(gta_gen);
  add_checkpoints(gta_gen);

  CLI::App* convert_cmd = app.add_subcommand("convert", "convert one wav to the target voice");
  add_workspace(convert_cmd);
  add_checkpoints(convert_cmd);
  add_variant(convert_cmd);
  convert_cmd->add_option("--in", in_path, "source wav")->required();
  convert_cmd->add_option("--out", out_path, "converted wav to write")->required();

  CLI::App* eval_f0 = app.add_subcommand("eval-f0", "melody fidelity of a converted wav");
  eval_f0->add_option("--in", in_path, "converted wav")->required();
  eval_f0->add_option("--ref", ref_path, "source wav the melody should match")->required();

  CLI::App* sweep_snr = app.add_subcommand("sweep-snr", "noise robustness sweep over input SNRs");
  add_workspace(sweep_snr);
  add_checkpoints(sweep_snr);
  sweep_snr->add_option("--snrs", snrs_override, "comma-separated SNR list in dB")
      ->delimiter(',');

  CLI::App* compare_cmd = app.add_subcommand(
      "compare-melody-features", "train and score one model per melody feature source");
  add_workspace(compare_cmd);
  add_checkpoints(compare_cmd);

  CLI::App* ablate = app.add_subcommand("ablate", "train and score the objective ablations");
  add_workspace(ablate);
  add_checkpoints(ablate);

  CLI::App* grad_check_cmd =
      app.add_subcommand("grad-check", "finite-difference check of every autodiff primitive");
  grad_check_cmd->add_option("--shapes", gc_shapes, "random shapes per primitive")
      ->capture_default_str();
  grad_check_cmd->add_option("--seeds", gc_seeds, "rng seeds per primitive")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  Workspace ws;

  try {
    ws.out = fs::path(out_dir);
    ws.ckpt_override = fs::path(checkpoints_dir);

    if (app.got_subcommand(datagen)) {
      RunConfig cfg = config_or_defaults(config_path);
      if (seed_override >= 0) cfg.corpus.seed = unsigned(seed_override);
      banner("datagen", cfg, cfg.corpus.seed);
      fs::create_directories(ws.corpus());
      const std::vector<ManifestEntry> entries = generate_corpus(cfg.corpus, ws.corpus().string());
      int target = 0;
      for (const ManifestEntry& e : entries) target += e.role == "target_corpus";
      std::printf("wrote %zu vocal utterances (%d target, %zu external) and %d noise tracks\n",
                  entries.size(), target, entries.size() - std::size_t(target),
                  cfg.corpus.num_noise_tracks);
      std::printf("corpus dir %s\n", ws.corpus().string().c_str());
    }

    if (app.got_subcommand(train_content)) {
      RunConfig cfg = config_or_defaults(config_path);
      if (steps_override >= 0) cfg.content.steps = steps_override;
      if (seed_override >= 0) cfg.content.seed = unsigned(seed_override);
      banner("train-content", cfg, cfg.content.seed);
      const auto manifest = ws.manifest();
      const ContentTrainResult r =
          train_content_model(manifest, ws.corpus().string(), cfg.content);
      fs::create_directories(ws.checkpoints());
      const std::string path = (ws.checkpoints() / "content.rsvc").string();
      save_content_model(r.model, {{"trained_steps", std::to_string(cfg.content.steps)}}, path);
      save_float_curve(r.loss_curve, (ws.checkpoints() / "content_loss.txt").string());
      std::printf("ctc loss %.4f -> %.4f over %zu steps\n", r.loss_curve.front(),
                  r.loss_curve.back(), r.loss_curve.size());
      std::printf("dev token error rate %.4f\n", r.dev_token_error_rate);
      std::printf("saved %s\n", path.c_str());
    }

    if (app.got_subcommand(train_melody)) {
      RunConfig cfg = config_or_defaults(config_path);
      if (steps_override >= 0) cfg.melody.total_steps = steps_override;
      if (seed_override >= 0) cfg.melody.seed = unsigned(seed_override);
      banner("train-melody", cfg, cfg.melody.seed);
      const auto manifest = ws.manifest();
      const MelodyTrainResult r =
          train_melody_extractor(manifest, ws.corpus().string(), ws.noise(), cfg.melody);
      fs::create_directories(ws.checkpoints());
      const std::string path = (ws.checkpoints() / "melody.rsvc").string();
      save_melody_model(r.model, {{"trained_steps", std::to_string(cfg.melody.total_steps)}},
                        path);
      save_float_curve(r.loss_curve, (ws.checkpoints() / "melody_loss.txt").string());
      std::printf("loss %.4f -> %.4f over %zu steps\n", r.loss_curve.front(),
                  r.loss_curve.back(), r.loss_curve.size());
      std::printf("dev clean: pitch l1 %.4f energy l1 %.4f vuv l1 %.4f\n", r.dev_clean.pitch_l1,
                  r.dev_clean.energy_l1, r.dev_clean.vuv_l1);
      std::printf("dev 0 dB:  pitch l1 %.4f energy l1 %.4f vuv l1 %.4f\n", r.dev_snr0.pitch_l1,
                  r.dev_snr0.energy_l1, r.dev_snr0.vuv_l1);
      std::printf("backbone frozen after step %d: %s\n", cfg.melody.backbone_freeze_step,
                  r.backbone_hash_at_freeze == r.backbone_hash_final ? "yes" : "NO");
      std::printf("saved %s\n", path.c_str());
    }

    if (app.got_subcommand(train_svc_cmd)) {
      if (variant != "robust" && variant != "pitch-energy")
        fail("--variant must be robust or pitch-energy, got '" + variant + "'");
      RunConfig cfg = config_or_defaults(config_path);
      if (variant == "pitch-energy") {
        cfg.melody_source = "contour";
        cfg.wire();
      }
      if (steps_override >= 0) cfg.svc.total_steps = steps_override;
      if (warmup_override >= 0) cfg.svc.schedule.warmup_steps = warmup_override;
      if (seed_override >= 0) cfg.svc.seed = unsigned(seed_override);
      banner("train-svc", cfg, cfg.svc.seed);
      const auto manifest = ws.manifest();
      const LoadedContentModel content = ws.content();
      const LoadedMelodyModel melody = ws.melody();
      // widths follow the checkpoints actually on disk, not the config file
      cfg.svc.conversion.d_content_in = content.model.cfg.d_bnf;
      if (cfg.melody_source == "extractor" || cfg.melody_source == "backbone")
        cfg.svc.conversion.d_melody_in = melody.model.cfg.d_model;
      const SvcTrainResult r =
          train_svc(manifest, ws.corpus().string(), content.model, melody.model, cfg.svc);
      for (const std::string& w : r.warnings) std::printf("warning: %s\n", w.c_str());
      if (r.content_hash_before != r.content_hash_after ||
          r.melody_hash_before != r.melody_hash_after)
        fail("upstream weights moved during svc training");
      fs::create_directories(ws.checkpoints());
      const std::string suffix = variant == "robust" ? "robust" : "pitch_energy";
      const std::string conv_path = (ws.checkpoints() / (variant_stem(variant) + ".rsvc")).string();
      const std::map<std::string, std::string> meta = {
          {"trained_steps", std::to_string(cfg.svc.total_steps)}, {"variant", variant}};
      save_conversion_model(r.model, meta, conv_path);
      save_discriminators(r.discriminators, meta,
                          (ws.checkpoints() / ("discriminators_" + suffix + ".rsvc")).string());
      save_svc_curve(r.curve, (ws.checkpoints() / ("svc_curve_" + suffix + ".txt")).string());
      const SvcLossRow& last = r.curve.back();
      std::printf("final losses: l_rec %.4f l_rf_d %.4f l_rf_g %.4f l_sim_d %.4f l_sim_g %.4f\n",
                  last.l_rec, last.l_rf_d, last.l_rf_g, last.l_sim_d, last.l_sim_g);
      std::printf("content and melody weights untouched\n");
      std::printf("saved %s\n", conv_path.c_str());
    }

    if (app.got_subcommand(gta_gen)) {
      RunConfig cfg = config_or_defaults(config_path);
      banner("gta-gen", cfg, cfg.svc.seed);
      const auto manifest = ws.manifest();
      const LoadedContentModel content = ws.content();
      const LoadedMelodyModel melody = ws.melody();
      const LoadedConversionModel conv = ws.conversion("conversion_robust");
      GtaConfig gcfg;
      gcfg.weights_trained = meta_steps(conv.meta) > 0;
      fs::create_directories(ws.gta());
      const GtaResult r = generate_gta_dataset(content.model, melody.model, conv.model, manifest,
                                               ws.corpus().string(), ws.gta().string(), gcfg);
      if (r.weights_hash_before != r.weights_hash_after)
        fail("weights moved during gta generation");
      std::printf("cached %zu ground-truth-aligned mels under %s (weights untouched)\n",
                  r.items.size(), ws.gta().string().c_str());
    }

    if (app.got_subcommand(convert_cmd)) {
      if (variant != "robust" && variant != "pitch-energy")
        fail("--variant must be robust or pitch-energy, got '" + variant + "'");
      const LoadedContentModel content = ws.content();
      const LoadedConversionModel conv = ws.conversion(variant_stem(variant));
      const AudioBuffer audio = load_wav(in_path);
      ConvertResult r;
      if (variant == "robust") {
        if (conv.model.cfg.d_melody_in == 3)
          fail("checkpoint takes contour inputs - use --variant pitch-energy");
        const LoadedMelodyModel melody = ws.melody();
        r = convert(content.model, melody.model, conv.model, audio);
      } else {
        if (conv.model.cfg.d_melody_in != 3)
          fail("checkpoint takes learned melody features - use --variant robust");
        r = convert_with_pitch_energy(content.model, conv.model, audio);
      }
      save_wav(out_path, r.audio);
      std::printf("wrote %s (%zu samples, %lld mel frames)\n", out_path.c_str(),
                  r.audio.samples.size(), static_cast<long long>(r.mel.num_frames()));
    }

    if (app.got_subcommand(eval_f0)) {
      const double v = f0_rmse(load_wav(in_path), load_wav(ref_path));
      std::printf("f0 rmse %.6f\n", v);
    }

    if (app.got_subcommand(sweep_snr)) {
      RunConfig cfg = config_or_defaults(config_path);
      banner("sweep-snr", cfg, cfg.evaluation.seed);
      const auto manifest = ws.manifest();
      const LoadedContentModel content = ws.content();
      const LoadedMelodyModel melody = ws.melody();
      const LoadedConversionModel robust = ws.conversion("conversion_robust");
      const LoadedConversionModel baseline = ws.conversion("conversion_pitch_energy");
      SnrSweepConfig sc;
      sc.snrs_db = snrs_override.empty() ? cfg.evaluation.snrs_db : snrs_override;
      sc.max_utterances = cfg.evaluation.max_utterances;
      sc.seed = cfg.evaluation.seed;
      const EvalReport report = snr_sweep(content.model, melody.model, robust.model,
                                          baseline.model, manifest, ws.corpus().string(),
                                          ws.noise(), sc);
      fs::create_directories(ws.reports());
      save_report(report, (ws.reports() / "snr_sweep.txt").string(),
                  (ws.reports() / "snr_sweep.jsonl").string());
      std::printf("%s", report_to_text(report).c_str());
      std::printf("saved %s\n", (ws.reports() / "snr_sweep.txt").string().c_str());
    }

    if (app.got_subcommand(compare_cmd)) {
      RunConfig cfg = config_or_defaults(config_path);
      banner("compare-melody-features", cfg, cfg.evaluation.seed);
      const auto manifest = ws.manifest();
      const LoadedContentModel content = ws.content();
      const LoadedMelodyModel melody = ws.melody();
      std::mt19937 rng(cfg.melody.seed);
      const MelodyExtractor<float> untrained(melody.model.cfg, rng);
      MelodyFeatureComparisonConfig mc;
      mc.train = cfg.svc;
      mc.train.conversion.d_content_in = content.model.cfg.d_bnf;
      mc.max_utterances = cfg.evaluation.comparison_max_utterances;
      mc.seed = cfg.evaluation.seed;
      const MelodyFeatureComparisonResult r = melody_feature_comparison(
          content.model, melody.model, untrained, manifest, ws.corpus().string(), mc);
      fs::create_directories(ws.reports());
      save_report(r.report, (ws.reports() / "melody_features.txt").string(),
                  (ws.reports() / "melody_features.jsonl").string());
      std::printf("%s", report_to_text(r.report).c_str());
      std::printf("saved %s\n", (ws.reports() / "melody_features.txt").string().c_str());
    }

    if (app.got_subcommand(ablate)) {
      RunConfig cfg = config_or_defaults(config_path);
      banner("ablate", cfg, cfg.evaluation.seed);
      const auto manifest = ws.manifest();
      const LoadedContentModel content = ws.content();
      const LoadedMelodyModel melody = ws.melody();
      AblationConfig ac;
      ac.train = cfg.svc;
      ac.train.conversion.d_content_in = content.model.cfg.d_bnf;
      ac.train.conversion.d_melody_in = melody.model.cfg.d_model;
      ac.max_utterances = cfg.evaluation.comparison_max_utterances;
      ac.seed = cfg.evaluation.seed;
      const EvalReport report =
          ablation_run(content.model, melody.model, manifest, ws.corpus().string(), ac);
      fs::create_directories(ws.reports());
      save_report(report, (ws.reports() / "ablations.txt").string(),
                  (ws.reports() / "ablations.jsonl").string());
      std::printf("%s", report_to_text(report).c_str());
      std::printf("saved %s\n", (ws.reports() / "ablations.txt").string().c_str());
    }

    if (app.got_subcommand(grad_check_cmd)) {
      bool ok = true;
      auto run = [&](const char* tag, auto tolerance, auto cases) {
        std::printf("%s (tolerance %g)\n", tag, double(tolerance));
        for (const GradCase& gc : cases) {
          const bool pass = gc.max_rel_err < tolerance;
          ok = ok && pass;
          std::printf("  %-16s %3d cases  max rel err %.3e  %s\n", gc.name.c_str(), gc.cases,
                      gc.max_rel_err, pass ? "ok" : "FAIL");
          if (!pass) std::printf("    worst: %s\n", gc.worst.c_str());
        }
      };
      run("float", primitive_sweep_tolerance<float>(),
          primitive_grad_sweep<float>(gc_shapes, gc_seeds));
      run("double", primitive_sweep_tolerance<double>(),
          primitive_grad_sweep<double>(gc_shapes, gc_seeds));
      if (!ok) fail("gradient check failed");
      std::printf("all primitives pass\n");
    }
  } catch (const std::exception& e) {
    fail(e.what());
  }

  return 0;
}
