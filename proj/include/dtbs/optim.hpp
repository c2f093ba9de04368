#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "dtbs/param_vector.hpp"

namespace dtbs {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay and per-section learning rates
/// (encoder and decoder train at different rates).
class AdamW {
 public:
  AdamW(const ParamVector& like, std::map<std::string, double> section_lr, AdamWConfig cfg = {});

  /// One update, in place: moments with bias correction, then the decoupled
  /// decay term, both scaled by the owning section's learning rate.
  void step(ParamVector& params, const ParamVector& grads);

  int64_t step_count() const { return step_count_; }
  const AdamWConfig& config() const { return cfg_; }
  const ParamVector& first_moment() const { return m_; }
  const ParamVector& second_moment() const { return v_; }

  /// Restores moments and step count (checkpoint resume).
  void restore(const ParamVector& m, const ParamVector& v, int64_t step_count);

 private:
  AdamWConfig cfg_;
  std::map<std::string, double> section_lr_;
  ParamVector m_;
  ParamVector v_;
  int64_t step_count_ = 0;
};

}  // namespace dtbs
