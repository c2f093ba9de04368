#include "dtbs/teachers.hpp"

#include <cmath>
#include <stdexcept>

namespace dtbs {

TeacherState init_teachers(const SegModel& student, double ema_decay) {
  if (ema_decay < 0.0 || ema_decay >= 1.0)
    throw std::invalid_argument("init_teachers: ema_decay must lie in [0,1)");
  TeacherState t;
  t.style = clone_weights(student);
  t.illumination = clone_weights(student);
  t.ema_decay = ema_decay;
  t.iteration = 0;
  return t;
}

void ema_update(ParamVector& phi, const ParamVector& theta_prev, double decay) {
  require_compatible(phi, theta_prev, "ema_update");
  if (decay < 0.0 || decay > 1.0) throw std::invalid_argument("ema_update: decay must lie in [0,1]");
  if (decay == 1.0) return;  // frozen teacher, keep weights bit-identical
  if (decay == 0.0) {
    auto dst = phi.values();
    auto src = theta_prev.values();
    std::copy(src.begin(), src.end(), dst.begin());
    return;
  }
  auto p = phi.values();
  auto t = theta_prev.values();
  for (size_t i = 0; i < p.size(); ++i)
    p[i] = static_cast<float>(decay * static_cast<double>(p[i]) + (1.0 - decay) * static_cast<double>(t[i]));
}

PseudoLabels predict_pseudo(const SegModel& teacher, const Tensor& images, double confidence_threshold) {
  NoGradGuard ng;
  const Tensor logits = teacher.forward(images, /*with_grad=*/false);
  const Tensor probs = softmax_channels(logits);

  const int batch = probs.shape()[0], classes = probs.shape()[1], h = probs.shape()[2], w = probs.shape()[3];
  const size_t plane = static_cast<size_t>(h) * w;
  const double inv_log_c = 1.0 / std::log(static_cast<double>(classes));
  auto p = probs.data();

  PseudoLabels out;
  out.labels.reserve(static_cast<size_t>(batch));
  int64_t confident = 0;
  double entropy = 0.0;
  for (int b = 0; b < batch; ++b) {
    GridI32 lab(h, w);
    const float* pb = p.data() + static_cast<size_t>(b) * classes * plane;
    for (size_t px = 0; px < plane; ++px) {
      int best = 0;
      float best_p = pb[px];
      double ent = 0.0;
      for (int c = 0; c < classes; ++c) {
        const float pc = pb[static_cast<size_t>(c) * plane + px];
        if (pc > best_p) {
          best_p = pc;
          best = c;
        }
        ent -= static_cast<double>(pc) * std::log(std::max(static_cast<double>(pc), 1e-12));
      }
      lab.v[px] = best;
      if (static_cast<double>(best_p) > confidence_threshold) ++confident;
      entropy += ent * inv_log_c;
    }
    out.labels.push_back(std::move(lab));
  }
  out.q = static_cast<double>(confident) / (static_cast<double>(batch) * plane);
  out.entropy_sum = entropy;
  return out;
}

}  // namespace dtbs
