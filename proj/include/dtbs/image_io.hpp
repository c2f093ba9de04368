#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "dtbs/grid.hpp"
#include "dtbs/tensor.hpp"

namespace dtbs {

/// 8-bit RGB raster, row-major.
struct RgbImage {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> rgb;  // 3 bytes per pixel

  RgbImage() = default;
  RgbImage(int h_, int w_) : h(h_), w(w_), rgb(static_cast<size_t>(h_) * w_ * 3, 0) {}
  uint8_t* px(int r, int c) { return rgb.data() + (static_cast<size_t>(r) * w + c) * 3; }
  const uint8_t* px(int r, int c) const { return rgb.data() + (static_cast<size_t>(r) * w + c) * 3; }
};

/// Converts a (3,H,W) tensor in [0,1] to 8-bit RGB.
RgbImage to_rgb8(const Tensor& image);

// Binary PPM (P6) / PGM (P5) with maxval 255; deterministic byte output.
void write_ppm(const std::filesystem::path& path, const RgbImage& img);
void write_pgm(const std::filesystem::path& path, const GridI32& labels);

RgbImage read_ppm(const std::filesystem::path& path);
GridI32 read_pgm(const std::filesystem::path& path);

}  // namespace dtbs
