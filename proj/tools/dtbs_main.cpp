// Command-line surface: train / ablate / sweep-beta / eval.
// Exit codes: 0 ok, 2 usage or config problem, 3 checkpoint incompatibility,
// 1 runtime failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dtbs/config.hpp"
#include "dtbs/evaluation.hpp"
#include "dtbs/experiments.hpp"
#include "dtbs/rng.hpp"
#include "dtbs/trainer.hpp"

namespace fs = std::filesystem;
using namespace dtbs;

namespace {

std::string default_out_root() {
  if (const char* env = std::getenv("DTBS_OUT_DIR"); env && *env) return env;
  return "dtbs_out";
}

std::string fmt_pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
  return buf;
}

struct CommonOpts {
  std::string config_path;
  std::string out_dir = default_out_root();
};

int load_config_or_fail(const std::string& path, RunConfig& cfg) {
  if (path.empty()) return 0;
  if (!fs::exists(path)) {
    std::cerr << "error: config file not found: " << path << "\n";
    return 2;
  }
  try {
    cfg = load_run_config(path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

void print_eval_result(const EvalResult& res) {
  std::cout << "domain: " << domain_name(res.domain) << "\n";
  const auto& names = scene_class_names();
  for (size_t c = 0; c < res.per_class_iou.size(); ++c) {
    const double iou = res.per_class_iou[c];
    const std::string name = c < names.size() ? names[c] : "class_" + std::to_string(c);
    std::cout << "  iou_" << name << ": " << (std::isnan(iou) ? std::string("undefined") : fmt_pct(iou)) << "\n";
  }
  std::cout << "  miou: " << fmt_pct(res.miou) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale day-to-night domain adaptation lab for semantic segmentation"};
  app.require_subcommand(1);

  // ---- train ----
  CommonOpts train_opts;
  uint64_t opt_seed = 0;
  int64_t opt_iterations = 0;
  std::string opt_beta_mode;
  double opt_beta = 0.0, opt_alpha = 0.0, opt_tau = 0.0, opt_rcs_temp = 0.0;
  int opt_batch = 0, opt_mix_dumps = 0;
  int64_t opt_eval_interval = 0;
  bool opt_no_gdm = false, opt_no_tsf = false;

  CLI::App* train = app.add_subcommand("train", "Run one adaptation experiment");
  train->add_option("--config", train_opts.config_path, "Config file (key = value sections)");
  train->add_option("--out-dir", train_opts.out_dir, "Output directory");
  auto* f_seed = train->add_option("--seed", opt_seed, "Master seed");
  auto* f_iters = train->add_option("--iterations", opt_iterations, "Training iterations");
  auto* f_beta_mode = train->add_option("--beta-mode", opt_beta_mode, "Feedback mode: fixed or entropy")
                          ->check(CLI::IsMember({"fixed", "entropy"}));
  auto* f_beta = train->add_option("--beta", opt_beta, "Fixed feedback coefficient")->check(CLI::Range(0.0, 1.0));
  auto* f_alpha = train->add_option("--alpha", opt_alpha, "EMA decay");
  auto* f_tau = train->add_option("--tau", opt_tau, "Pseudo-label confidence threshold");
  auto* f_rcs = train->add_option("--rcs-temp", opt_rcs_temp, "Rare-class sampling temperature");
  auto* f_batch = train->add_option("--batch-size", opt_batch, "Batch size");
  auto* f_eval_int = train->add_option("--eval-interval", opt_eval_interval, "Iterations between evaluations");
  auto* f_dumps = train->add_option("--dump-mix", opt_mix_dumps, "Dump mix quartets for the first N iterations");
  train->add_flag("--no-gdm", opt_no_gdm, "Disable domain mixing (flows 2-3 train on source)");
  train->add_flag("--no-tsf", opt_no_tsf, "Disable teacher-to-student feedback");

  // ---- ablate ----
  CommonOpts ablate_opts;
  int ablate_seeds = 3, ablate_jobs = 1;
  CLI::App* ablate = app.add_subcommand("ablate", "Run the component grid (baseline/+TSF/+GDM/+GDM+TSF-E/+GDM+TSF)");
  ablate->add_option("--config", ablate_opts.config_path, "Config file");
  ablate->add_option("--out-dir", ablate_opts.out_dir, "Output directory");
  ablate->add_option("--seeds", ablate_seeds, "Number of seeds per variant")->check(CLI::PositiveNumber);
  ablate->add_option("--jobs", ablate_jobs, "Parallel runs")->check(CLI::PositiveNumber);

  // ---- sweep-beta ----
  CommonOpts sweep_opts;
  std::vector<double> sweep_values = {0.0, 0.5, 0.7, 0.8, 0.9, 1.0};
  int sweep_seeds = 3, sweep_jobs = 1;
  CLI::App* sweep = app.add_subcommand("sweep-beta", "Sweep the fixed feedback coefficient");
  sweep->add_option("--config", sweep_opts.config_path, "Config file");
  sweep->add_option("--out-dir", sweep_opts.out_dir, "Output directory");
  sweep->add_option("--values", sweep_values, "Beta values to sweep")->delimiter(',');
  sweep->add_option("--seeds", sweep_seeds, "Number of seeds per value")->check(CLI::PositiveNumber);
  sweep->add_option("--jobs", sweep_jobs, "Parallel runs")->check(CLI::PositiveNumber);

  // ---- eval ----
  CommonOpts eval_opts;
  std::string eval_checkpoint, eval_domain_str = "target-night";
  int eval_count = 32;
  uint64_t eval_seed = 9000;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a model checkpoint on generated scenes");
  eval->add_option("--checkpoint", eval_checkpoint, "Model checkpoint path")->required();
  eval->add_option("--domain", eval_domain_str, "source, target-day or target-night")
      ->check(CLI::IsMember({"source", "target-day", "target-night"}));
  eval->add_option("--count", eval_count, "Number of evaluation scenes")->check(CLI::PositiveNumber);
  eval->add_option("--seed", eval_seed, "Seed for the evaluation scene stream");
  eval->add_option("--config", eval_opts.config_path, "Config file (model/scene geometry)");
  eval->add_option("--out-dir", eval_opts.out_dir, "Output directory for panels");

  // ---- export-scenes ----
  CommonOpts export_opts;
  std::string export_domain = "source";
  int export_count = 20;
  uint64_t export_seed = 1;
  CLI::App* exporter = app.add_subcommand("export-scenes", "Write generated scenes as image/label files");
  exporter->add_option("--domain", export_domain, "source, target-day or target-night")
      ->check(CLI::IsMember({"source", "target-day", "target-night"}));
  exporter->add_option("--count", export_count, "Number of scenes")->check(CLI::PositiveNumber);
  exporter->add_option("--seed", export_seed, "Seed for the scene stream");
  exporter->add_option("--config", export_opts.config_path, "Config file (scene geometry)");
  exporter->add_option("--out-dir", export_opts.out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) {
      RunConfig cfg;
      if (int rc = load_config_or_fail(train_opts.config_path, cfg)) return rc;
      if (f_seed->count()) cfg.train.seed = opt_seed;
      if (f_iters->count()) cfg.train.iterations = opt_iterations;
      if (f_beta_mode->count())
        cfg.train.beta_mode =
            opt_beta_mode == "fixed" ? TrainConfig::BetaMode::kFixed : TrainConfig::BetaMode::kEntropy;
      if (f_beta->count()) cfg.train.feedback_beta = opt_beta;
      if (f_alpha->count()) cfg.train.ema_decay = opt_alpha;
      if (f_tau->count()) cfg.train.confidence_threshold = opt_tau;
      if (f_rcs->count()) cfg.train.rcs_temperature = opt_rcs_temp;
      if (f_batch->count()) cfg.train.batch_size = opt_batch;
      if (f_eval_int->count()) cfg.train.eval_interval = opt_eval_interval;
      if (f_dumps->count()) cfg.train.mix_dump_count = opt_mix_dumps;
      if (opt_no_gdm) cfg.train.use_gdm = false;
      if (opt_no_tsf) cfg.train.use_tsf = false;
      try {
        cfg.validate();
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
      }
      const RunResult res = run_experiment(cfg, "train", train_opts.out_dir, &std::cout);
      std::cout << "final miou  source " << fmt_pct(res.summary.source.miou) << "  target-day "
                << fmt_pct(res.summary.target_day.miou) << "  target-night "
                << fmt_pct(res.summary.target_night.miou) << "\n"
                << "metrics: " << res.summary.csv_path.string() << "\n";
      return 0;
    }

    if (ablate->parsed()) {
      RunConfig cfg;
      if (int rc = load_config_or_fail(ablate_opts.config_path, cfg)) return rc;
      std::vector<uint64_t> seeds;
      for (int i = 0; i < ablate_seeds; ++i) seeds.push_back(cfg.train.seed + static_cast<uint64_t>(i));
      const auto variants = ablation_grid(cfg.train.feedback_beta);
      const auto results = run_grid(cfg, variants, seeds, ablate_opts.out_dir, ablate_jobs, &std::cout);
      const fs::path csv = fs::path(ablate_opts.out_dir) / "ablation_summary.csv";
      const fs::path md = fs::path(ablate_opts.out_dir) / "ablation_summary.md";
      write_grid_summary(results, variants, seeds, csv, md);
      for (const auto& v : variants)
        std::cout << v.name << " mean target-night miou: " << fmt_pct(mean_night_miou(results, v.name)) << "\n";
      std::cout << "summary: " << csv.string() << "\n";
      return 0;
    }

    if (sweep->parsed()) {
      RunConfig cfg;
      if (int rc = load_config_or_fail(sweep_opts.config_path, cfg)) return rc;
      for (double v : sweep_values)
        if (v < 0.0 || v > 1.0) {
          std::cerr << "error: --values entries must lie in [0,1], got " << v << "\n";
          return 2;
        }
      std::vector<uint64_t> seeds;
      for (int i = 0; i < sweep_seeds; ++i) seeds.push_back(cfg.train.seed + static_cast<uint64_t>(i));
      std::vector<VariantSpec> variants;
      for (double v : sweep_values) {
        std::ostringstream name;
        name << "beta_" << v;
        variants.push_back({name.str(), true, true, TrainConfig::BetaMode::kFixed, v});
      }
      const auto results = run_grid(cfg, variants, seeds, sweep_opts.out_dir, sweep_jobs, &std::cout);
      const fs::path csv = fs::path(sweep_opts.out_dir) / "beta_sweep_summary.csv";
      const fs::path md = fs::path(sweep_opts.out_dir) / "beta_sweep_summary.md";
      write_grid_summary(results, variants, seeds, csv, md);
      for (const auto& v : variants)
        std::cout << v.name << " mean target-night miou: " << fmt_pct(mean_night_miou(results, v.name)) << "\n";
      std::cout << "summary: " << csv.string() << "\n";
      return 0;
    }

    if (eval->parsed()) {
      RunConfig cfg;
      if (int rc = load_config_or_fail(eval_opts.config_path, cfg)) return rc;
      ParamVector weights;
      try {
        weights = load_checkpoint(eval_checkpoint);
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
      }
      SegModel model(cfg.model, /*seed=*/0);
      const ParamVector expected = model.params();
      if (!weights.compatible_with(expected)) {
        std::cerr << "error: checkpoint does not match the configured model; section diff:\n";
        auto describe = [](const ParamVector& pv) {
          std::ostringstream os;
          for (const auto& s : pv.sections()) os << "  " << s.name << " (" << s.length << " values)\n";
          return os.str();
        };
        std::cerr << "checkpoint:\n" << describe(weights) << "expected:\n" << describe(expected);
        return 3;
      }
      model.set_params(weights);

      Domain domain = Domain::kTargetNight;
      if (eval_domain_str == "source") domain = Domain::kSource;
      else if (eval_domain_str == "target-day") domain = Domain::kTargetDay;

      ConfusionMatrix cm(cfg.model.class_count);
      const fs::path quals = fs::path(eval_opts.out_dir) / "quals_eval";
      fs::create_directories(quals);
      for (int i = 0; i < eval_count; ++i) {
        const DomainSample s = make_sample(cfg.scene, domain, derive_seed(eval_seed, stream::kEvalScene, i));
        Tensor batch = Tensor::zeros({1, 3, cfg.scene.image_size, cfg.scene.image_size});
        std::copy(s.image.data().begin(), s.image.data().end(), batch.data().begin());
        const auto preds = argmax_labels(model.forward(batch, /*with_grad=*/false));
        cm.accumulate(preds[0], s.labels);
        if (i < 4)
          render_prediction(s.image, preds[0], &s.labels, default_palette(),
                            quals / (eval_domain_str + "_" + std::to_string(i) + ".ppm"));
      }
      EvalResult res = cm.finalize();
      res.domain = domain;
      print_eval_result(res);
      return 0;
    }

    if (exporter->parsed()) {
      RunConfig cfg;
      if (int rc = load_config_or_fail(export_opts.config_path, cfg)) return rc;
      Domain domain = Domain::kSource;
      if (export_domain == "target-day") domain = Domain::kTargetDay;
      else if (export_domain == "target-night") domain = Domain::kTargetNight;
      export_corpus(cfg.scene, domain, export_count, export_seed, export_opts.out_dir);
      std::cout << "wrote " << export_count << " " << export_domain << " scenes to " << export_opts.out_dir << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
