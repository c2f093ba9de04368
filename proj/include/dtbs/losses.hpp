#pragma once

#include <span>

#include "dtbs/grid.hpp"
#include "dtbs/mixing.hpp"
#include "dtbs/teachers.hpp"
#include "dtbs/tensor.hpp"

namespace dtbs {

/// Cross-entropy against ground truth, averaged over non-IGNORE pixels.
/// Differentiable with respect to the logits. Throws if no pixel is valid.
Tensor loss_source(const Tensor& logits, std::span<const GridI32> labels);

/// Loss on a mixed batch: cross-entropy against source labels with weight 1
/// on mask=1 pixels, against teacher pseudo-labels weighted by the scalar q
/// on mask=0 pixels, averaged over all counted pixels.
Tensor loss_mixed(const Tensor& logits, std::span<const MixMask> masks, std::span<const GridI32> source_labels,
                  const PseudoLabels& pseudo);

}  // namespace dtbs
