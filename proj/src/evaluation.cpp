#include "dtbs/evaluation.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "dtbs/image_io.hpp"

namespace dtbs {

ConfusionMatrix::ConfusionMatrix(int class_count) : class_count_(class_count) {
  if (class_count < 1) throw std::invalid_argument("ConfusionMatrix: class_count must be positive");
  counts_.assign(static_cast<size_t>(class_count) * class_count, 0);
}

void ConfusionMatrix::accumulate(const GridI32& prediction, const GridI32& truth) {
  if (!prediction.same_shape(truth))
    throw std::invalid_argument("ConfusionMatrix::accumulate: prediction and truth shapes differ");
  for (size_t i = 0; i < truth.v.size(); ++i) {
    const int32_t t = truth.v[i];
    if (t == kIgnoreLabel) {
      ++ignored_;
      continue;
    }
    const int32_t p = prediction.v[i];
    if (t < 0 || t >= class_count_ || p < 0 || p >= class_count_)
      throw std::invalid_argument("ConfusionMatrix::accumulate: class id out of range (truth " + std::to_string(t) +
                                  ", prediction " + std::to_string(p) + ", classes " + std::to_string(class_count_) +
                                  ")");
    ++counts_[static_cast<size_t>(t) * class_count_ + p];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.class_count_ != class_count_)
    throw std::invalid_argument("ConfusionMatrix::merge: class counts differ");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  ignored_ += other.ignored_;
}

uint64_t ConfusionMatrix::at(int truth, int predicted) const {
  return counts_[static_cast<size_t>(truth) * class_count_ + predicted];
}

uint64_t ConfusionMatrix::total() const {
  uint64_t t = ignored_;
  for (uint64_t c : counts_) t += c;
  return t;
}

EvalResult ConfusionMatrix::finalize() const {
  EvalResult res;
  res.per_class_iou.assign(static_cast<size_t>(class_count_), std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  int defined = 0;
  for (int c = 0; c < class_count_; ++c) {
    const uint64_t tp = at(c, c);
    uint64_t fp = 0, fn = 0;
    for (int o = 0; o < class_count_; ++o) {
      if (o == c) continue;
      fp += at(o, c);
      fn += at(c, o);
    }
    const uint64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    res.per_class_iou[static_cast<size_t>(c)] = static_cast<double>(tp) / static_cast<double>(denom);
    sum += res.per_class_iou[static_cast<size_t>(c)];
    ++defined;
  }
  if (defined == 0) throw std::runtime_error("ConfusionMatrix::finalize: no class has any pixel (all undefined)");
  res.miou = sum / defined;
  return res;
}

const Palette& default_palette() {
  static const Palette p = {
      {{128, 64, 128}},   // road
      {{244, 35, 232}},   // sidewalk
      {{70, 70, 70}},     // building
      {{70, 130, 180}},   // sky
      {{107, 142, 35}},   // vegetation
      {{0, 0, 142}},      // car
      {{220, 20, 60}},    // person
      {{153, 153, 153}},  // pole
  };
  return p;
}

void render_prediction(const Tensor& image, const GridI32& prediction, const GridI32* truth, const Palette& palette,
                       const std::filesystem::path& path) {
  const RgbImage input = to_rgb8(image);
  if (prediction.h != input.h || prediction.w != input.w)
    throw std::invalid_argument("render_prediction: prediction shape does not match image");

  auto colorize = [&](const GridI32& labels, RgbImage& out, int col_offset) {
    for (int r = 0; r < labels.h; ++r)
      for (int c = 0; c < labels.w; ++c) {
        const int32_t v = labels.at(r, c);
        uint8_t* px = out.px(r, c + col_offset);
        if (v == kIgnoreLabel) {
          px[0] = px[1] = px[2] = 0;
          continue;
        }
        if (v < 0 || static_cast<size_t>(v) >= palette.size())
          throw std::invalid_argument("render_prediction: label " + std::to_string(v) + " has no palette entry");
        px[0] = palette[static_cast<size_t>(v)][0];
        px[1] = palette[static_cast<size_t>(v)][1];
        px[2] = palette[static_cast<size_t>(v)][2];
      }
  };

  RgbImage panel(input.h, input.w * 3);
  for (int r = 0; r < input.h; ++r)
    for (int c = 0; c < input.w; ++c) {
      const uint8_t* src = input.px(r, c);
      uint8_t* dst = panel.px(r, c);
      dst[0] = src[0];
      dst[1] = src[1];
      dst[2] = src[2];
    }
  colorize(prediction, panel, input.w);
  if (truth) {
    if (truth->h != input.h || truth->w != input.w)
      throw std::invalid_argument("render_prediction: truth shape does not match image");
    colorize(*truth, panel, input.w * 2);
  }
  write_ppm(path, panel);
}

}  // namespace dtbs
