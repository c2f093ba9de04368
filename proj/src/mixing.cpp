#include "dtbs/mixing.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace dtbs {

void AugmentConfig::validate() const {
  if (jitter_strength < 0.0) throw std::invalid_argument("AugmentConfig: jitter_strength must be >= 0");
  if (blur_sigma_lo < 0.0 || blur_sigma_lo > blur_sigma_hi)
    throw std::invalid_argument("AugmentConfig: blur sigma range must be nonnegative and ordered");
  if (jitter_prob < 0.0 || jitter_prob > 1.0 || blur_prob < 0.0 || blur_prob > 1.0)
    throw std::invalid_argument("AugmentConfig: probabilities must lie in [0,1]");
}

int rcs_sample(std::span<const double> frequencies, double temperature, std::mt19937& rng) {
  if (temperature <= 0.0) throw std::invalid_argument("rcs_sample: temperature must be > 0");
  if (frequencies.empty()) throw std::invalid_argument("rcs_sample: empty frequency vector");
  double max_logit = -1e300;
  for (double f : frequencies) {
    if (!std::isfinite(f) || f < 0.0)
      throw std::invalid_argument("rcs_sample: frequencies must be finite and nonnegative");
    if (f > 0.0) max_logit = std::max(max_logit, (1.0 - f) / temperature);
  }
  if (max_logit == -1e300) throw std::invalid_argument("rcs_sample: all class frequencies are zero");

  // Weights computed relative to the max logit; classes that never occur get
  // zero weight (they cannot anchor a paste).
  std::vector<double> w(frequencies.size(), 0.0);
  double total = 0.0;
  for (size_t c = 0; c < frequencies.size(); ++c) {
    if (frequencies[c] > 0.0) {
      w[c] = std::exp((1.0 - frequencies[c]) / temperature - max_logit);
      total += w[c];
    }
  }
  double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  for (size_t c = 0; c < w.size(); ++c) {
    u -= w[c];
    if (u <= 0.0 && w[c] > 0.0) return static_cast<int>(c);
  }
  for (size_t c = w.size(); c-- > 0;)
    if (w[c] > 0.0) return static_cast<int>(c);
  throw std::logic_error("rcs_sample: unreachable");
}

MixMask build_mask(const DomainSample& source, int32_t anchor_class, std::mt19937& rng, int source_index) {
  std::set<int32_t> present;
  for (int32_t v : source.labels.v)
    if (v != kIgnoreLabel) present.insert(v);
  if (!present.count(anchor_class))
    throw std::invalid_argument("build_mask: anchor class " + std::to_string(anchor_class) +
                                " not present in source labels (resample the source)");

  const int k = static_cast<int>(present.size());
  const int target = (k + 1) / 2;  // ceil(k/2)

  std::vector<int32_t> others;
  for (int32_t c : present)
    if (c != anchor_class) others.push_back(c);
  // Partial Fisher-Yates: uniform subset of the non-anchor classes.
  for (int i = 0; i < target - 1; ++i) {
    const int j = std::uniform_int_distribution<int>(i, static_cast<int>(others.size()) - 1)(rng);
    std::swap(others[i], others[j]);
  }

  MixMask m;
  m.source_index = source_index;
  m.selected_classes.assign(others.begin(), others.begin() + (target - 1));
  m.selected_classes.push_back(anchor_class);
  std::sort(m.selected_classes.begin(), m.selected_classes.end());

  m.mask = GridI32(source.labels.h, source.labels.w, 0);
  for (size_t i = 0; i < source.labels.v.size(); ++i) {
    const int32_t v = source.labels.v[i];
    if (v != kIgnoreLabel &&
        std::binary_search(m.selected_classes.begin(), m.selected_classes.end(), v))
      m.mask.v[i] = 1;
  }
  return m;
}

MixedImage mix(const Tensor& source_image, const GridI32& source_labels, const Tensor& target_image,
               const MixMask& m) {
  if (source_image.shape() != target_image.shape())
    throw std::invalid_argument("mix: source image shape " + shape_str(source_image.shape()) +
                                " does not match target " + shape_str(target_image.shape()));
  if (source_image.shape().size() != 3 || source_image.shape()[0] != 3)
    throw std::invalid_argument("mix: images must be (3,H,W), got " + shape_str(source_image.shape()));
  const int h = source_image.shape()[1], w = source_image.shape()[2];
  if (m.mask.h != h || m.mask.w != w || source_labels.h != h || source_labels.w != w)
    throw std::invalid_argument("mix: mask/label shape does not match images");

  MixedImage out;
  out.image = Tensor::zeros(source_image.shape());
  out.labels = GridI32(h, w, kPseudoSentinel);
  auto src = source_image.data();
  auto tgt = target_image.data();
  auto dst = out.image.data();
  const size_t plane = static_cast<size_t>(h) * w;
  for (size_t i = 0; i < plane; ++i) {
    // Branch select keeps composited pixels bit-identical to their origin.
    const bool take_src = m.mask.v[i] != 0;
    for (int ch = 0; ch < 3; ++ch) {
      const size_t j = ch * plane + i;
      dst[j] = take_src ? src[j] : tgt[j];
    }
    if (take_src) out.labels.v[i] = source_labels.v[i];
  }
  return out;
}

MixedImage mix(const DomainSample& source, const Tensor& target_image, const MixMask& m) {
  return mix(source.image, source.labels, target_image, m);
}

namespace {

void gaussian_blur_inplace(std::vector<float>& buf, int h, int w, int channels, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<size_t>(i + radius)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    ksum += kernel[static_cast<size_t>(i + radius)];
  }
  for (double& k : kernel) k /= ksum;

  // Separable passes; at borders the kernel renormalizes over in-bounds taps
  // so total mass is conserved.
  std::vector<float> tmp(buf.size());
  const size_t plane = static_cast<size_t>(h) * w;
  for (int ch = 0; ch < channels; ++ch) {
    const float* in = buf.data() + ch * plane;
    float* out = tmp.data() + ch * plane;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        double acc = 0.0, wsum = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int cc = c + i;
          if (cc < 0 || cc >= w) continue;
          const double k = kernel[static_cast<size_t>(i + radius)];
          acc += k * in[static_cast<size_t>(r) * w + cc];
          wsum += k;
        }
        out[static_cast<size_t>(r) * w + c] = static_cast<float>(acc / wsum);
      }
  }
  for (int ch = 0; ch < channels; ++ch) {
    const float* in = tmp.data() + ch * plane;
    float* out = buf.data() + ch * plane;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        double acc = 0.0, wsum = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int rr = r + i;
          if (rr < 0 || rr >= h) continue;
          const double k = kernel[static_cast<size_t>(i + radius)];
          acc += k * in[static_cast<size_t>(rr) * w + c];
          wsum += k;
        }
        out[static_cast<size_t>(r) * w + c] = static_cast<float>(acc / wsum);
      }
  }
}

}  // namespace

Tensor augment(const Tensor& image, const AugmentConfig& cfg, std::mt19937& rng) {
  cfg.validate();
  if (image.shape().size() != 3 || image.shape()[0] != 3)
    throw std::invalid_argument("augment: expected (3,H,W), got " + shape_str(image.shape()));
  const int h = image.shape()[1], w = image.shape()[2];
  const size_t plane = static_cast<size_t>(h) * w;

  Tensor out = image.clone();
  auto d = out.data();
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  if (unit(rng) < cfg.jitter_prob && cfg.jitter_strength > 0.0) {
    std::uniform_real_distribution<double> factor(1.0 - cfg.jitter_strength, 1.0 + cfg.jitter_strength);
    const double fb = factor(rng), fc = factor(rng), fs = factor(rng);

    double mean = 0.0;
    for (float v : d) mean += v;
    mean /= static_cast<double>(d.size());

    for (size_t i = 0; i < plane; ++i) {
      double r = d[i], g = d[plane + i], b = d[2 * plane + i];
      r *= fb;
      g *= fb;
      b *= fb;
      r = mean + (r - mean) * fc;
      g = mean + (g - mean) * fc;
      b = mean + (b - mean) * fc;
      const double gray = 0.299 * r + 0.587 * g + 0.114 * b;
      r = gray + (r - gray) * fs;
      g = gray + (g - gray) * fs;
      b = gray + (b - gray) * fs;
      d[i] = static_cast<float>(r);
      d[plane + i] = static_cast<float>(g);
      d[2 * plane + i] = static_cast<float>(b);
    }
  }

  if (unit(rng) < cfg.blur_prob && cfg.blur_sigma_hi > 0.0) {
    const double sigma = std::uniform_real_distribution<double>(cfg.blur_sigma_lo, cfg.blur_sigma_hi)(rng);
    if (sigma > 0.0) {
      std::vector<float> buf(d.begin(), d.end());
      gaussian_blur_inplace(buf, h, w, 3, sigma);
      std::copy(buf.begin(), buf.end(), d.begin());
    }
  }

  for (float& v : d) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

}  // namespace dtbs
