#include "dtbs/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace dtbs {

AdamW::AdamW(const ParamVector& like, std::map<std::string, double> section_lr, AdamWConfig cfg)
    : cfg_(cfg), section_lr_(std::move(section_lr)), m_(ParamVector::zeros_like(like)), v_(ParamVector::zeros_like(like)) {
  for (const auto& s : like.sections())
    if (!section_lr_.count(s.name))
      throw std::invalid_argument("AdamW: no learning rate for section '" + s.name + "'");
}

void AdamW::step(ParamVector& params, const ParamVector& grads) {
  require_compatible(params, grads, "AdamW::step(params, grads)");
  require_compatible(params, m_, "AdamW::step(params, state)");
  ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));

  for (const auto& sec : params.sections()) {
    const double lr = section_lr_.at(sec.name);
    auto p = params.section(sec.name);
    auto g = grads.section(sec.name);
    auto m = m_.section(sec.name);
    auto v = v_.section(sec.name);
    for (size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double m_hat = mi / bc1;
      const double v_hat = vi / bc2;
      const double update = m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * p[i];
      p[i] = static_cast<float>(p[i] - lr * update);
    }
  }
}

void AdamW::restore(const ParamVector& m, const ParamVector& v, int64_t step_count) {
  require_compatible(m_, m, "AdamW::restore(first moment)");
  require_compatible(v_, v, "AdamW::restore(second moment)");
  if (step_count < 0) throw std::invalid_argument("AdamW::restore: negative step count");
  m_ = m;
  v_ = v;
  step_count_ = step_count;
}

}  // namespace dtbs
