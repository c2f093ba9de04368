#pragma once

#include <array>
#include <cstdint>

#include "dtbs/param_vector.hpp"
#include "dtbs/tensor.hpp"

namespace dtbs {

struct SegNetConfig {
  int in_channels = 3;
  int class_count = 8;
  std::array<int, 2> encoder_widths{12, 24};
  int decoder_width = 24;
  int image_size = 64;  // square input, two stride-2 stages need a multiple of 4

  void validate() const;  // throws std::invalid_argument
  bool operator==(const SegNetConfig&) const = default;
};

/// Small fully-convolutional segmentation net: two stride-2 conv/ReLU encoder
/// stages, two conv/ReLU + nearest-2x-upsample decoder stages, 1x1 class head.
/// Parameters live in an "encoder"/"decoder" sectioned ParamVector so the two
/// halves can train at different learning rates and so teachers (same
/// architecture) can be combined with the student in weight space.
class SegModel {
 public:
  SegModel(const SegNetConfig& config, uint64_t seed);  // He fan-in init, zero biases

  const SegNetConfig& config() const { return cfg_; }

  /// Logits (B, C, H, W). with_grad=false runs without recording anything on
  /// the tape, so no downstream backward can reach the model.
  Tensor forward(const Tensor& images, bool with_grad) const;

  ParamVector params() const;
  void set_params(const ParamVector& pv);
  /// Gradients packed in parameter order; zeros where a weight has none.
  ParamVector grads() const;
  void zero_grad();

  /// The live weight/bias tensors in pack order (shared storage, so edits
  /// show up in the next forward). Gradient probes use this.
  std::vector<Tensor> weight_tensors() const;

  static int64_t param_count(const SegNetConfig& config);

 private:
  struct Layer {
    Tensor w;
    Tensor b;
    int stride = 1;
  };

  SegNetConfig cfg_;
  Layer enc1_, enc2_, dec1_, dec2_, head_;
};

/// Deep copy of the model weights (teacher initialization).
ParamVector clone_weights(const SegModel& model);

}  // namespace dtbs
