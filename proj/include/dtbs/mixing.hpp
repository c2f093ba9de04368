#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "dtbs/grid.hpp"
#include "dtbs/scenegen.hpp"
#include "dtbs/tensor.hpp"

namespace dtbs {

/// Binary paste mask over a source label map: 1 where the pixel's class was
/// selected for the paste patch. One mask serves both the day and the night
/// mix of an iteration.
struct MixMask {
  GridI32 mask;                          // values {0,1}
  std::vector<int32_t> selected_classes;  // sorted, never contains IGNORE
  int source_index = -1;
};

struct AugmentConfig {
  double jitter_strength = 0.2;  // brightness/contrast/saturation factor delta
  double jitter_prob = 0.5;
  double blur_sigma_lo = 0.15;
  double blur_sigma_hi = 1.15;
  double blur_prob = 0.5;

  void validate() const;
};

/// Rare-class-biased draw: P(c) proportional to exp((1 - f_c) / temperature)
/// over classes with f_c > 0. Rarer classes are strictly more likely.
int rcs_sample(std::span<const double> frequencies, double temperature, std::mt19937& rng);

/// Selects ceil(k/2) of the k distinct valid classes in the source labels
/// (always including anchor_class, the rest uniform without replacement) and
/// builds the indicator mask. Throws if the anchor is absent so the caller
/// can resample the source.
MixMask build_mask(const DomainSample& source, int32_t anchor_class, std::mt19937& rng, int source_index = -1);

struct MixedImage {
  Tensor image;    // (3,H,W)
  GridI32 labels;  // source labels where mask=1, kPseudoSentinel elsewhere
};

/// Pixel-exact composite: source where mask=1, target where mask=0.
MixedImage mix(const Tensor& source_image, const GridI32& source_labels, const Tensor& target_image,
               const MixMask& m);
MixedImage mix(const DomainSample& source, const Tensor& target_image, const MixMask& m);

/// Photometric augmentation (color jitter then Gaussian blur), output clamped
/// to [0,1]. Labels are untouched by construction.
Tensor augment(const Tensor& image, const AugmentConfig& cfg, std::mt19937& rng);

}  // namespace dtbs
