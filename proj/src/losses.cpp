#include "dtbs/losses.hpp"

#include <stdexcept>
#include <string>

namespace dtbs {

namespace {

void check_batch(const char* op, const Tensor& logits, size_t label_count) {
  if (logits.shape().size() != 4)
    throw std::invalid_argument(std::string(op) + ": logits must be (B,C,H,W), got " + shape_str(logits.shape()));
  if (static_cast<size_t>(logits.shape()[0]) != label_count)
    throw std::invalid_argument(std::string(op) + ": batch of " + std::to_string(logits.shape()[0]) +
                                " logits vs " + std::to_string(label_count) + " label maps");
}

void check_label_shape(const char* op, const Tensor& logits, const GridI32& lab) {
  if (lab.h != logits.shape()[2] || lab.w != logits.shape()[3])
    throw std::invalid_argument(std::string(op) + ": label map " + std::to_string(lab.h) + "x" +
                                std::to_string(lab.w) + " vs logits " + shape_str(logits.shape()));
}

// Negated sum of coeff * log(softmax) over the batch, divided by `counted`.
Tensor weighted_nll(const Tensor& logits, const Tensor& coeff, int64_t counted) {
  const Tensor log_probs = dtbs::log(softmax_channels(logits));
  const Tensor picked = mul(log_probs, coeff);
  return scale(sum(picked), -1.0f / static_cast<float>(counted));
}

}  // namespace

Tensor loss_source(const Tensor& logits, std::span<const GridI32> labels) {
  check_batch("loss_source", logits, labels.size());
  const int classes = logits.shape()[1], h = logits.shape()[2], w = logits.shape()[3];
  const size_t plane = static_cast<size_t>(h) * w;

  Tensor coeff = Tensor::zeros(logits.shape());
  auto cd = coeff.data();
  int64_t counted = 0;
  for (size_t b = 0; b < labels.size(); ++b) {
    check_label_shape("loss_source", logits, labels[b]);
    for (size_t px = 0; px < plane; ++px) {
      const int32_t y = labels[b].v[px];
      if (y == kIgnoreLabel) continue;
      if (y < 0 || y >= classes)
        throw std::invalid_argument("loss_source: label " + std::to_string(y) + " outside [0," +
                                    std::to_string(classes) + ")");
      cd[(b * classes + static_cast<size_t>(y)) * plane + px] = 1.0f;
      ++counted;
    }
  }
  if (counted == 0) throw std::invalid_argument("loss_source: every pixel is IGNORE");
  return weighted_nll(logits, coeff, counted);
}

Tensor loss_mixed(const Tensor& logits, std::span<const MixMask> masks, std::span<const GridI32> source_labels,
                  const PseudoLabels& pseudo) {
  check_batch("loss_mixed", logits, masks.size());
  if (masks.size() != source_labels.size() || masks.size() != pseudo.labels.size())
    throw std::invalid_argument("loss_mixed: masks, source labels and pseudo labels must align with the batch");
  const int classes = logits.shape()[1], h = logits.shape()[2], w = logits.shape()[3];
  const size_t plane = static_cast<size_t>(h) * w;
  const float q = static_cast<float>(pseudo.q);

  Tensor coeff = Tensor::zeros(logits.shape());
  auto cd = coeff.data();
  int64_t counted = 0;
  for (size_t b = 0; b < masks.size(); ++b) {
    check_label_shape("loss_mixed", logits, masks[b].mask);
    check_label_shape("loss_mixed", logits, source_labels[b]);
    check_label_shape("loss_mixed", logits, pseudo.labels[b]);
    for (size_t px = 0; px < plane; ++px) {
      if (masks[b].mask.v[px] != 0) {
        const int32_t y = source_labels[b].v[px];
        if (y == kIgnoreLabel) continue;  // never selected by mask building; skip defensively
        cd[(b * classes + static_cast<size_t>(y)) * plane + px] = 1.0f;
      } else {
        const int32_t y = pseudo.labels[b].v[px];
        if (y < 0 || y >= classes)
          throw std::invalid_argument("loss_mixed: pseudo label " + std::to_string(y) + " outside [0," +
                                      std::to_string(classes) + ")");
        cd[(b * classes + static_cast<size_t>(y)) * plane + px] = q;
      }
      ++counted;
    }
  }
  if (counted == 0) return Tensor::scalar(0.0f);
  return weighted_nll(logits, coeff, counted);
}

}  // namespace dtbs
