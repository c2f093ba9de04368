#include "dtbs/experiments.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace dtbs {

namespace fs = std::filesystem;

namespace {

std::string fmt_pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
  return buf;
}

}  // namespace

std::vector<VariantSpec> ablation_grid(double fixed_beta) {
  return {
      {"baseline", false, false, TrainConfig::BetaMode::kFixed, fixed_beta},
      {"tsf", false, true, TrainConfig::BetaMode::kFixed, fixed_beta},
      {"gdm", true, false, TrainConfig::BetaMode::kFixed, fixed_beta},
      {"gdm_tsf_e", true, true, TrainConfig::BetaMode::kEntropy, fixed_beta},
      {"gdm_tsf", true, true, TrainConfig::BetaMode::kFixed, fixed_beta},
  };
}

RunResult run_experiment(const RunConfig& cfg, const std::string& variant_name, const fs::path& out_dir,
                         std::ostream* progress) {
  fs::create_directories(out_dir);

  RunManifest manifest;
  manifest.config = cfg;
  manifest.out_dir = out_dir.string();
  manifest.started_utc = utc_timestamp_now();
  manifest.write(out_dir / "manifest.ini");

  Trainer trainer(cfg);
  RunResult result;
  result.variant = variant_name;
  result.seed = cfg.train.seed;
  result.dir = out_dir;
  result.summary = trainer.run(out_dir, progress);

  manifest.finished_utc = utc_timestamp_now();
  manifest.write(out_dir / "manifest.ini");
  return result;
}

std::vector<RunResult> run_grid(const RunConfig& base, std::span<const VariantSpec> variants,
                                std::span<const uint64_t> seeds, const fs::path& out_dir, int jobs,
                                std::ostream* progress) {
  if (jobs < 1) throw std::invalid_argument("run_grid: jobs must be >= 1");

  struct Job {
    RunConfig cfg;
    std::string variant;
    fs::path dir;
  };
  std::vector<Job> queue;
  for (const VariantSpec& v : variants) {
    for (uint64_t seed : seeds) {
      RunConfig cfg = base;
      cfg.train.use_gdm = v.gdm;
      cfg.train.use_tsf = v.tsf;
      cfg.train.beta_mode = v.beta_mode;
      cfg.train.feedback_beta = v.beta;
      cfg.train.seed = seed;
      queue.push_back({cfg, v.name, out_dir / v.name / ("seed_" + std::to_string(seed))});
    }
  }

  std::vector<RunResult> results(queue.size());
  std::atomic<size_t> next{0};
  std::mutex log_mutex;
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&]() {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= queue.size()) return;
      {
        std::lock_guard lk(failure_mutex);
        if (failure) return;
      }
      try {
        if (progress) {
          std::lock_guard lk(log_mutex);
          (*progress) << "run " << queue[i].variant << " seed " << queue[i].cfg.train.seed << " -> "
                      << queue[i].dir.string() << "\n";
        }
        results[i] = run_experiment(queue[i].cfg, queue[i].variant, queue[i].dir);
      } catch (...) {
        std::lock_guard lk(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  const int n_threads = std::min<int>(jobs, static_cast<int>(queue.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

void write_grid_summary(std::span<const RunResult> results, std::span<const VariantSpec> variants,
                        std::span<const uint64_t> seeds, const fs::path& csv_path, const fs::path& md_path) {
  auto find = [&](const std::string& variant, uint64_t seed) -> const RunResult* {
    for (const RunResult& r : results)
      if (r.variant == variant && r.seed == seed) return &r;
    return nullptr;
  };

  std::ofstream csv(csv_path);
  std::ofstream md(md_path);
  if (!csv || !md) throw std::runtime_error("write_grid_summary: cannot open summary files");

  csv << "variant";
  md << "| variant |";
  for (uint64_t s : seeds) {
    csv << ",seed_" << s;
    md << " seed " << s << " |";
  }
  csv << ",mean\n";
  md << " mean |\n|---|";
  for (size_t i = 0; i < seeds.size() + 1; ++i) md << "---|";
  md << "\n";

  for (const VariantSpec& v : variants) {
    csv << v.name;
    md << "| " << v.name << " |";
    double sum = 0.0;
    int n = 0;
    for (uint64_t s : seeds) {
      const RunResult* r = find(v.name, s);
      if (!r) throw std::runtime_error("write_grid_summary: missing result for " + v.name);
      const double miou = r->summary.target_night.miou;
      csv << ',' << fmt_pct(miou);
      md << ' ' << fmt_pct(miou) << " |";
      sum += miou;
      ++n;
    }
    csv << ',' << fmt_pct(sum / n) << "\n";
    md << ' ' << fmt_pct(sum / n) << " |\n";
  }
}

double mean_night_miou(std::span<const RunResult> results, const std::string& variant) {
  double sum = 0.0;
  int n = 0;
  for (const RunResult& r : results)
    if (r.variant == variant) {
      sum += r.summary.target_night.miou;
      ++n;
    }
  if (n == 0) throw std::invalid_argument("mean_night_miou: no results for variant '" + variant + "'");
  return sum / n;
}

}  // namespace dtbs
