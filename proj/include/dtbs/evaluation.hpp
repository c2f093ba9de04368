#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "dtbs/grid.hpp"
#include "dtbs/scenegen.hpp"
#include "dtbs/tensor.hpp"

namespace dtbs {

struct EvalResult {
  std::vector<double> per_class_iou;  // NaN marks classes absent from both prediction and truth
  double miou = 0.0;                  // mean over defined classes
  Domain domain = Domain::kSource;
};

/// Confusion counts, rows = ground truth, cols = prediction. IGNORE pixels in
/// the truth are tallied separately. Mergeable, so evaluation can shard.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int class_count);

  void accumulate(const GridI32& prediction, const GridI32& truth);
  void merge(const ConfusionMatrix& other);

  /// IoU_c = TP / (TP + FP + FN); zero-denominator classes are undefined and
  /// excluded from the mean. Throws if every class is undefined.
  EvalResult finalize() const;

  int class_count() const { return class_count_; }
  uint64_t at(int truth, int predicted) const;
  uint64_t ignored() const { return ignored_; }
  uint64_t total() const;

 private:
  int class_count_;
  std::vector<uint64_t> counts_;
  uint64_t ignored_ = 0;
};

using Palette = std::vector<std::array<uint8_t, 3>>;

/// Fixed colors for the 8 scene classes, so rendered panels diff cleanly.
const Palette& default_palette();

/// Writes a side-by-side panel (input | prediction | truth) as binary PPM;
/// the truth third is black when no truth is given. Panel width is always
/// 3x the input width.
void render_prediction(const Tensor& image, const GridI32& prediction, const GridI32* truth, const Palette& palette,
                       const std::filesystem::path& path);

}  // namespace dtbs
