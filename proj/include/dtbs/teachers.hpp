#pragma once

#include <cstdint>
#include <vector>

#include "dtbs/grid.hpp"
#include "dtbs/param_vector.hpp"
#include "dtbs/segnet.hpp"

namespace dtbs {

/// Argmax pseudo-labels for one target batch plus the two scalars derived
/// from the teacher's soft predictions: q, the fraction of pixels whose max
/// softmax probability strictly exceeds the confidence threshold, and the
/// sum over pixels of the log(C)-normalized prediction entropy.
struct PseudoLabels {
  std::vector<GridI32> labels;  // one per batch image
  double q = 0.0;
  double entropy_sum = 0.0;
};

/// The two EMA teachers: one absorbs the student during the target-day flow
/// (style shift), the other during the target-night flow (illumination
/// shift). Both average the same pre-step student weights of the iteration.
struct TeacherState {
  ParamVector style;
  ParamVector illumination;
  double ema_decay = 0.99;
  int64_t iteration = 0;
};

/// Both teachers start as deep copies of the student, so the EMA recurrence
/// holds from the first iteration without a special case.
TeacherState init_teachers(const SegModel& student, double ema_decay);

/// phi <- decay * phi + (1 - decay) * theta_prev, elementwise in place.
/// Arithmetic runs in double per element; decay 0/1 are exact boundaries.
void ema_update(ParamVector& phi, const ParamVector& theta_prev, double decay);

/// Teacher inference without gradients: argmax labels (ties break to the
/// lowest class id), q at the given threshold, and the normalized entropy sum.
PseudoLabels predict_pseudo(const SegModel& teacher, const Tensor& images, double confidence_threshold);

}  // namespace dtbs
