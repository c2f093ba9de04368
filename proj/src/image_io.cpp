#include "dtbs/image_io.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace dtbs {

namespace {

uint8_t quantize(float v) {
  const float c = std::min(1.0f, std::max(0.0f, v));
  return static_cast<uint8_t>(std::lround(c * 255.0f));
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("image " + path.string() + ": cannot open");
  return is;
}

void read_header(std::istream& is, const char* magic, int& w, int& h, const std::filesystem::path& path) {
  std::string m;
  int maxval = 0;
  is >> m >> w >> h >> maxval;
  if (m != magic || maxval != 255 || w <= 0 || h <= 0)
    throw std::runtime_error("image " + path.string() + ": unsupported header");
  is.get();  // single whitespace byte before raster
}

}  // namespace

RgbImage to_rgb8(const Tensor& image) {
  if (image.shape().size() != 3 || image.shape()[0] != 3)
    throw std::invalid_argument("to_rgb8: expected (3,H,W), got " + shape_str(image.shape()));
  const int h = image.shape()[1], w = image.shape()[2];
  RgbImage out(h, w);
  auto d = image.data();
  const size_t plane = static_cast<size_t>(h) * w;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const size_t i = static_cast<size_t>(r) * w + c;
      uint8_t* p = out.px(r, c);
      p[0] = quantize(d[i]);
      p[1] = quantize(d[plane + i]);
      p[2] = quantize(d[2 * plane + i]);
    }
  return out;
}

void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("image " + path.string() + ": cannot open for writing");
  os << "P6\n" << img.w << ' ' << img.h << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!os) throw std::runtime_error("image " + path.string() + ": write failed");
}

void write_pgm(const std::filesystem::path& path, const GridI32& labels) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("image " + path.string() + ": cannot open for writing");
  os << "P5\n" << labels.w << ' ' << labels.h << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(labels.w));
  for (int r = 0; r < labels.h; ++r) {
    for (int c = 0; c < labels.w; ++c) {
      const int32_t v = labels.at(r, c);
      if (v < 0 || v > 255) throw std::invalid_argument("write_pgm: label " + std::to_string(v) + " not in [0,255]");
      row[static_cast<size_t>(c)] = static_cast<uint8_t>(v);
    }
    os.write(reinterpret_cast<const char*>(row.data()), labels.w);
  }
  if (!os) throw std::runtime_error("image " + path.string() + ": write failed");
}

RgbImage read_ppm(const std::filesystem::path& path) {
  auto is = open_in(path);
  int w = 0, h = 0;
  read_header(is, "P6", w, h, path);
  RgbImage img(h, w);
  is.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!is) throw std::runtime_error("image " + path.string() + ": truncated raster");
  return img;
}

GridI32 read_pgm(const std::filesystem::path& path) {
  auto is = open_in(path);
  int w = 0, h = 0;
  read_header(is, "P5", w, h, path);
  GridI32 g(h, w);
  std::vector<uint8_t> row(static_cast<size_t>(w));
  for (int r = 0; r < h; ++r) {
    is.read(reinterpret_cast<char*>(row.data()), w);
    if (!is) throw std::runtime_error("image " + path.string() + ": truncated raster");
    for (int c = 0; c < w; ++c) g.at(r, c) = row[static_cast<size_t>(c)];
  }
  return g;
}

}  // namespace dtbs
