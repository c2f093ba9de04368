#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dtbs/evaluation.hpp"
#include "dtbs/losses.hpp"
#include "dtbs/mixing.hpp"
#include "dtbs/optim.hpp"
#include "dtbs/scenegen.hpp"
#include "dtbs/segnet.hpp"
#include "dtbs/teachers.hpp"

namespace dtbs {

struct TrainConfig {
  int64_t iterations = 4000;
  int batch_size = 2;
  double ema_decay = 0.99;              // alpha
  double confidence_threshold = 0.968;  // tau
  enum class BetaMode { kFixed, kEntropy };
  BetaMode beta_mode = BetaMode::kFixed;
  double feedback_beta = 0.8;
  double rcs_temperature = 0.01;
  double lr_encoder = 1.2e-4;
  double lr_decoder = 1.2e-3;
  double weight_decay = 0.01;
  uint64_t seed = 1;
  int64_t eval_interval = 500;
  int eval_count = 64;
  int source_pool_size = 200;
  bool use_gdm = true;  // off: flows 2-3 train on fresh source batches instead of mixes
  bool use_tsf = true;  // off: no teacher-to-student feedback step
  AugmentConfig augment;
  int quals_per_domain = 2;
  int mix_dump_count = 0;  // debug quartets dumped for the first N iterations

  void validate() const;
};

struct RunConfig {
  TrainConfig train;
  SegNetConfig model;
  SceneSpec scene;

  void validate() const;  // also checks model/scene agreement
};

struct IterationReport {
  double loss_source = 0.0;
  double loss_style = 0.0;
  double loss_illum = 0.0;
  double loss_total = 0.0;  // always loss_source + loss_style + loss_illum, in that order
  double q_day = 0.0;
  double q_night = 0.0;
  double entropy_day = 0.0;
  double entropy_night = 0.0;
  double beta_effective = 0.0;
  int64_t iteration = 0;
};

struct RunSummary {
  EvalResult source;
  EvalResult target_day;
  EvalResult target_night;
  std::filesystem::path csv_path;
  std::filesystem::path final_checkpoint;
  int64_t iterations = 0;
};

/// Feedback coefficient from the two teachers' entropy sums:
/// night / (night + day). Throws when both sums are zero (caller falls back
/// to the fixed coefficient).
double beta_entropy(double entropy_day, double entropy_night);

/// Re-weighted EMA feedback, in place on the post-step student weights:
/// theta <- alpha * theta + (1 - alpha) * (beta * phi_illum + (1 - beta) * phi_style).
void tsf_feedback(ParamVector& theta_post, const ParamVector& phi_style, const ParamVector& phi_illum, double alpha,
                  double beta);

/// Per-image argmax label maps from (B,C,H,W) logits; ties break to the
/// lowest class id.
std::vector<GridI32> argmax_labels(const Tensor& logits);

/// Owns all mutable training state and drives the four sub-flows of one
/// iteration: source supervision, target-day flow (style teacher EMA +
/// day mix), target-night flow (illumination teacher EMA + night mix with the
/// same masks), then the optimizer step and teacher feedback.
class Trainer {
 public:
  explicit Trainer(const RunConfig& cfg);

  IterationReport train_iteration();

  /// Full run: CSV log with an evaluation row per eval point, checkpoints at
  /// start / eval points / end, qualitative panels, optional mix dumps.
  RunSummary run(const std::filesystem::path& out_dir, std::ostream* progress = nullptr);

  struct EvalTriple {
    EvalResult source, target_day, target_night;
  };
  EvalTriple evaluate() const;

  const SegModel& student() const { return student_; }
  ParamVector student_params() const { return student_.params(); }
  const TeacherState& teachers() const { return teachers_; }
  int64_t iteration() const { return iteration_; }
  const RunConfig& config() const { return cfg_; }

  void save_train_state(const std::filesystem::path& path) const;
  void load_train_state(const std::filesystem::path& path);

  // Test hook: captures per-flow masks and pre-augmentation mixed batches.
  struct DebugCapture {
    bool enabled = false;
    std::vector<MixMask> masks_day, masks_night;
    std::vector<Tensor> mixed_day, mixed_night;
    std::vector<Tensor> source_images, day_images, night_images;
  };
  void set_debug_capture(bool enabled) { debug_.enabled = enabled; }
  const DebugCapture& debug_capture() const { return debug_; }

 private:
  struct Batch {
    std::vector<int> source_indices;
    std::vector<int32_t> anchors;
    std::vector<Tensor> day_images;
    std::vector<Tensor> night_images;
  };
  Batch assemble_batch(std::mt19937& rng, bool with_targets) const;
  Tensor stack(const std::vector<Tensor>& images) const;
  void dump_mix_quartet(int64_t iter, const DomainSample& src, const Tensor& target, const MixMask& mask,
                        const Tensor& mixed) const;
  void write_quals(const std::filesystem::path& dir) const;

  RunConfig cfg_;
  SegModel student_;
  SegModel style_model_;
  SegModel illum_model_;
  TeacherState teachers_;
  AdamW optimizer_;
  std::vector<DomainSample> source_pool_;
  std::vector<uint32_t> pool_presence_;  // bitmask of classes present per pool sample
  std::vector<double> source_freq_;
  std::vector<DomainSample> eval_source_, eval_day_, eval_night_;
  int64_t iteration_ = 0;
  DebugCapture debug_;
  std::filesystem::path mix_dump_dir_;
};

}  // namespace dtbs
