#include "dtbs/segnet.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "dtbs/rng.hpp"

namespace dtbs {

namespace {

int64_t conv_params(int cout, int cin, int k) { return static_cast<int64_t>(cout) * cin * k * k + cout; }

void he_init(Tensor& w, std::mt19937& rng) {
  const Shape& s = w.shape();
  const double fan_in = static_cast<double>(s[1]) * s[2] * s[3];
  std::normal_distribution<float> dist(0.0f, static_cast<float>(std::sqrt(2.0 / fan_in)));
  for (float& v : w.data()) v = dist(rng);
}

void copy_out(std::span<float> dst, size_t& at, const Tensor& t) {
  auto src = t.data();
  std::copy(src.begin(), src.end(), dst.begin() + at);
  at += src.size();
}

void copy_in(std::span<const float> src, size_t& at, Tensor& t) {
  auto dst = t.data();
  std::copy(src.begin() + at, src.begin() + at + dst.size(), dst.begin());
  at += dst.size();
}

void copy_grad_out(std::span<float> dst, size_t& at, const Tensor& t) {
  if (t.has_grad()) {
    auto g = t.grad();
    std::copy(g.begin(), g.end(), dst.begin() + at);
  }  // else leave zeros
  at += t.data().size();
}

}  // namespace

void SegNetConfig::validate() const {
  if (in_channels != 3) throw std::invalid_argument("SegNetConfig: in_channels must be 3");
  if (class_count < 2) throw std::invalid_argument("SegNetConfig: class_count must be >= 2");
  if (encoder_widths[0] < 1 || encoder_widths[1] < 1 || decoder_width < 1)
    throw std::invalid_argument("SegNetConfig: widths must be positive");
  if (image_size < 4 || image_size % 4 != 0)
    throw std::invalid_argument("SegNetConfig: image_size must be a positive multiple of 4 (two stride-2 stages)");
}

SegModel::SegModel(const SegNetConfig& config, uint64_t seed) : cfg_(config) {
  cfg_.validate();
  const int e0 = cfg_.encoder_widths[0], e1 = cfg_.encoder_widths[1], d = cfg_.decoder_width;
  std::mt19937 rng = make_rng(derive_seed(seed, stream::kModelInit));

  auto make_layer = [&](int cout, int cin, int k, int stride) {
    Layer l;
    l.w = Tensor::zeros({cout, cin, k, k}, /*requires_grad=*/true);
    l.b = Tensor::zeros({cout}, /*requires_grad=*/true);
    l.stride = stride;
    he_init(l.w, rng);
    return l;
  };

  enc1_ = make_layer(e0, cfg_.in_channels, 3, 2);
  enc2_ = make_layer(e1, e0, 3, 2);
  dec1_ = make_layer(d, e1, 3, 1);
  dec2_ = make_layer(d, d, 3, 1);
  head_ = make_layer(cfg_.class_count, d, 1, 1);
}

Tensor SegModel::forward(const Tensor& images, bool with_grad) const {
  if (images.shape().size() != 4 || images.shape()[1] != cfg_.in_channels || images.shape()[2] != cfg_.image_size ||
      images.shape()[3] != cfg_.image_size)
    throw std::invalid_argument("SegModel::forward: expected (B," + std::to_string(cfg_.in_channels) + "," +
                                std::to_string(cfg_.image_size) + "," + std::to_string(cfg_.image_size) + "), got " +
                                shape_str(images.shape()));
  for (float v : images.data())
    if (!(v >= 0.0f && v <= 1.0f))
      throw std::invalid_argument("SegModel::forward: image values must lie in [0,1]");

  auto run = [&]() {
    Tensor x = relu(bias_add(conv2d(images, enc1_.w, enc1_.stride), enc1_.b));
    x = relu(bias_add(conv2d(x, enc2_.w, enc2_.stride), enc2_.b));
    x = upsample2x(relu(bias_add(conv2d(x, dec1_.w, dec1_.stride), dec1_.b)));
    x = upsample2x(relu(bias_add(conv2d(x, dec2_.w, dec2_.stride), dec2_.b)));
    return bias_add(conv2d(x, head_.w, head_.stride), head_.b);
  };

  if (with_grad) return run();
  NoGradGuard ng;
  return run();
}

ParamVector SegModel::params() const {
  const int e0 = cfg_.encoder_widths[0], e1 = cfg_.encoder_widths[1], d = cfg_.decoder_width;
  const int64_t enc_len = conv_params(e0, cfg_.in_channels, 3) + conv_params(e1, e0, 3);
  const int64_t dec_len = conv_params(d, e1, 3) + conv_params(d, d, 3) + conv_params(cfg_.class_count, d, 1);
  ParamVector pv = ParamVector::with_sections({{"encoder", enc_len}, {"decoder", dec_len}});

  size_t at = 0;
  auto enc = pv.section("encoder");
  copy_out(enc, at, enc1_.w);
  copy_out(enc, at, enc1_.b);
  copy_out(enc, at, enc2_.w);
  copy_out(enc, at, enc2_.b);
  at = 0;
  auto dec = pv.section("decoder");
  copy_out(dec, at, dec1_.w);
  copy_out(dec, at, dec1_.b);
  copy_out(dec, at, dec2_.w);
  copy_out(dec, at, dec2_.b);
  copy_out(dec, at, head_.w);
  copy_out(dec, at, head_.b);
  return pv;
}

void SegModel::set_params(const ParamVector& pv) {
  require_compatible(pv, params(), "SegModel::set_params");
  size_t at = 0;
  auto enc = pv.section("encoder");
  copy_in(enc, at, enc1_.w);
  copy_in(enc, at, enc1_.b);
  copy_in(enc, at, enc2_.w);
  copy_in(enc, at, enc2_.b);
  at = 0;
  auto dec = pv.section("decoder");
  copy_in(dec, at, dec1_.w);
  copy_in(dec, at, dec1_.b);
  copy_in(dec, at, dec2_.w);
  copy_in(dec, at, dec2_.b);
  copy_in(dec, at, head_.w);
  copy_in(dec, at, head_.b);
}

ParamVector SegModel::grads() const {
  ParamVector pv = ParamVector::zeros_like(params());
  size_t at = 0;
  auto enc = pv.section("encoder");
  copy_grad_out(enc, at, enc1_.w);
  copy_grad_out(enc, at, enc1_.b);
  copy_grad_out(enc, at, enc2_.w);
  copy_grad_out(enc, at, enc2_.b);
  at = 0;
  auto dec = pv.section("decoder");
  copy_grad_out(dec, at, dec1_.w);
  copy_grad_out(dec, at, dec1_.b);
  copy_grad_out(dec, at, dec2_.w);
  copy_grad_out(dec, at, dec2_.b);
  copy_grad_out(dec, at, head_.w);
  copy_grad_out(dec, at, head_.b);
  return pv;
}

void SegModel::zero_grad() {
  for (Layer* l : {&enc1_, &enc2_, &dec1_, &dec2_, &head_}) {
    l->w.zero_grad();
    l->b.zero_grad();
  }
}

std::vector<Tensor> SegModel::weight_tensors() const {
  return {enc1_.w, enc1_.b, enc2_.w, enc2_.b, dec1_.w, dec1_.b, dec2_.w, dec2_.b, head_.w, head_.b};
}

int64_t SegModel::param_count(const SegNetConfig& config) {
  config.validate();
  const int e0 = config.encoder_widths[0], e1 = config.encoder_widths[1], d = config.decoder_width;
  return conv_params(e0, config.in_channels, 3) + conv_params(e1, e0, 3) + conv_params(d, e1, 3) +
         conv_params(d, d, 3) + conv_params(config.class_count, d, 1);
}

ParamVector clone_weights(const SegModel& model) { return model.params(); }

}  // namespace dtbs
