#pragma once

#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dtbs/config.hpp"
#include "dtbs/trainer.hpp"

namespace dtbs {

struct VariantSpec {
  std::string name;
  bool gdm = false;
  bool tsf = false;
  TrainConfig::BetaMode beta_mode = TrainConfig::BetaMode::kFixed;
  double beta = 0.8;
};

/// Component grid: baseline, +TSF, +GDM, +GDM+TSF-E, +GDM+TSF.
std::vector<VariantSpec> ablation_grid(double fixed_beta);

struct RunResult {
  std::string variant;
  uint64_t seed = 0;
  RunSummary summary;
  std::filesystem::path dir;
};

/// One training run under out_dir: manifest first, then training, then the
/// manifest again with its end timestamp.
RunResult run_experiment(const RunConfig& cfg, const std::string& variant_name, const std::filesystem::path& out_dir,
                         std::ostream* progress = nullptr);

/// Runs every (variant, seed) combination, at most `jobs` in parallel; each
/// run gets its own subdirectory and stays single-threaded inside.
std::vector<RunResult> run_grid(const RunConfig& base, std::span<const VariantSpec> variants,
                                std::span<const uint64_t> seeds, const std::filesystem::path& out_dir, int jobs,
                                std::ostream* progress = nullptr);

/// Final target-night mIoU per (variant, seed) plus the seed mean,
/// as CSV and markdown.
void write_grid_summary(std::span<const RunResult> results, std::span<const VariantSpec> variants,
                        std::span<const uint64_t> seeds, const std::filesystem::path& csv_path,
                        const std::filesystem::path& md_path);

/// Seed-mean of the final target-night mIoU for one variant.
double mean_night_miou(std::span<const RunResult> results, const std::string& variant);

}  // namespace dtbs
