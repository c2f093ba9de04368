#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace dtbs {

// Label value for pixels excluded from losses and metrics.
inline constexpr int32_t kIgnoreLabel = 255;

// Sentinel carried by mixed-image label maps on pixels whose supervision
// comes from a teacher pseudo-label rather than source ground truth.
inline constexpr int32_t kPseudoSentinel = 254;

/// Dense row-major 2-D integer map (label images, binary masks).
struct GridI32 {
  int h = 0;
  int w = 0;
  std::vector<int32_t> v;

  GridI32() = default;
  GridI32(int h_, int w_, int32_t fill = 0) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

  int32_t at(int r, int c) const { return v[static_cast<size_t>(r) * w + c]; }
  int32_t& at(int r, int c) { return v[static_cast<size_t>(r) * w + c]; }
  size_t size() const { return v.size(); }

  bool same_shape(const GridI32& o) const { return h == o.h && w == o.w; }
  bool operator==(const GridI32& o) const { return h == o.h && w == o.w && v == o.v; }
};

}  // namespace dtbs
