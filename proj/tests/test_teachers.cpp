#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "dtbs/teachers.hpp"
#include "dtbs/trainer.hpp"

using namespace dtbs;

namespace {

SegNetConfig tiny_config() {
  SegNetConfig cfg;
  cfg.class_count = 4;
  cfg.encoder_widths = {4, 6};
  cfg.decoder_width = 6;
  cfg.image_size = 16;
  return cfg;
}

ParamVector filled(std::initializer_list<std::pair<std::string, int64_t>> layout, float v) {
  ParamVector pv = ParamVector::with_sections(std::vector<std::pair<std::string, int64_t>>(layout));
  for (float& x : pv.values()) x = v;
  return pv;
}

Tensor images_in_unit_range(int b, int side, uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  Tensor t = Tensor::zeros({b, 3, side, side});
  for (float& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace

TEST_CASE("ema boundaries: decay 1 freezes, decay 0 copies") {
  ParamVector phi = filled({{"w", 5}}, 1.0f);
  ParamVector theta = filled({{"w", 5}}, -2.0f);
  ParamVector frozen = phi;
  ema_update(phi, theta, 1.0);
  CHECK(phi == frozen);
  ema_update(phi, theta, 0.0);
  CHECK(phi == theta);
}

TEST_CASE("ema arithmetic: phi=1, theta=0, decay 0.99 -> 0.99") {
  ParamVector phi = filled({{"w", 7}}, 1.0f);
  ParamVector theta = filled({{"w", 7}}, 0.0f);
  ema_update(phi, theta, 0.99);
  for (float v : phi.values()) CHECK(std::abs(v - 0.99) < 1e-7);
}

TEST_CASE("ema rejects incompatible vectors") {
  ParamVector phi = filled({{"w", 3}}, 0.0f);
  ParamVector theta = filled({{"v", 3}}, 0.0f);
  CHECK_THROWS_AS(ema_update(phi, theta, 0.5), std::invalid_argument);
}

TEST_CASE("ema convexity: every component stays within [min, max] of its endpoints") {
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> dist(-5.0f, 5.0f);
  std::uniform_real_distribution<double> decays(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    ParamVector phi = filled({{"a", 13}, {"b", 7}}, 0.0f);
    ParamVector theta = ParamVector::zeros_like(phi);
    for (float& v : phi.values()) v = dist(rng);
    for (float& v : theta.values()) v = dist(rng);
    ParamVector before = phi;
    const double d = decays(rng);
    ema_update(phi, theta, d);
    for (int64_t i = 0; i < phi.size(); ++i) {
      const float lo = std::min(before.values()[i], theta.values()[i]);
      const float hi = std::max(before.values()[i], theta.values()[i]);
      CHECK(phi.values()[i] >= lo);
      CHECK(phi.values()[i] <= hi);
    }
  }
}

TEST_CASE("init_teachers copies the student bitwise; updates then diverge") {
  SegNetConfig cfg = tiny_config();
  SegModel student(cfg, 5);
  TeacherState t = init_teachers(student, 0.99);
  CHECK(t.style == student.params());
  CHECK(t.illumination == student.params());
  CHECK(t.style == t.illumination);

  ParamVector moved = student.params();
  for (float& v : moved.values()) v += 0.5f;
  ema_update(t.style, moved, 0.99);
  CHECK_FALSE(t.style == t.illumination);
}

TEST_CASE("teacher forward equals student forward right after init") {
  SegNetConfig cfg = tiny_config();
  SegModel student(cfg, 6);
  TeacherState t = init_teachers(student, 0.99);
  SegModel teacher(cfg, 999);  // different init, overwritten below
  teacher.set_params(t.style);

  Tensor imgs = images_in_unit_range(1, cfg.image_size, 8);
  Tensor a = student.forward(imgs, false);
  Tensor b = teacher.forward(imgs, false);
  CHECK(std::memcmp(a.data().data(), b.data().data(), a.data().size() * 4) == 0);
}

TEST_CASE("uniform predictions: per-pixel entropy 1, E = H*W, q = 0") {
  SegNetConfig cfg = tiny_config();
  SegModel model(cfg, 7);
  model.set_params(ParamVector::zeros_like(model.params()));  // equal logits everywhere
  Tensor imgs = images_in_unit_range(1, cfg.image_size, 9);
  PseudoLabels p = predict_pseudo(model, imgs, 0.968);
  const double hw = static_cast<double>(cfg.image_size) * cfg.image_size;
  CHECK(std::abs(p.entropy_sum - hw) < hw * 1e-6);
  CHECK(p.q == 0.0);
  for (int32_t v : p.labels[0].v) CHECK(v == 0);  // ties break to the lowest id
}

TEST_CASE("near-one-hot predictions: E ~ 0 and q = 1") {
  // drive the head bias so one class dominates every pixel
  SegNetConfig cfg = tiny_config();
  SegModel model(cfg, 8);
  ParamVector pv = ParamVector::zeros_like(model.params());
  auto dec = pv.section("decoder");
  dec[dec.size() - static_cast<size_t>(cfg.class_count) + 2] = 40.0f;  // head bias, class 2
  model.set_params(pv);
  Tensor imgs = images_in_unit_range(2, cfg.image_size, 10);
  PseudoLabels p = predict_pseudo(model, imgs, 0.968);
  const double total = 2.0 * cfg.image_size * cfg.image_size;
  CHECK(p.entropy_sum < 1e-3 * total);
  CHECK(p.q == 1.0);
  for (const auto& lab : p.labels)
    for (int32_t v : lab.v) CHECK(v == 2);
}

TEST_CASE("entropy matches a scalar re-computation on a random 2x2x3 map") {
  // feed logits = log(p): softmax reproduces p, and the oracle sums
  // -(1/log 3) * p log p by hand in double.
  std::mt19937 rng(11);
  const int classes = 3, side = 2;
  std::vector<double> probs(classes * side * side);
  for (int px = 0; px < side * side; ++px) {
    double z = 0.0;
    for (int c = 0; c < classes; ++c) {
      probs[static_cast<size_t>(c * side * side + px)] = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
      z += probs[static_cast<size_t>(c * side * side + px)];
    }
    for (int c = 0; c < classes; ++c) probs[static_cast<size_t>(c * side * side + px)] /= z;
  }

  double expected = 0.0;
  for (int px = 0; px < side * side; ++px) {
    double ent = 0.0;
    for (int c = 0; c < classes; ++c) {
      const double p = probs[static_cast<size_t>(c * side * side + px)];
      ent -= p * std::log(p);
    }
    expected += ent / std::log(static_cast<double>(classes));
  }

  // entropy path shared with predict_pseudo exercised via the probs directly:
  // use softmax(log p) through a bare tensor and the same clamped formula.
  Tensor logits = Tensor::zeros({1, classes, side, side});
  for (size_t i = 0; i < probs.size(); ++i) logits.data()[i] = static_cast<float>(std::log(probs[i]));
  Tensor sm = softmax_channels(logits);
  double got = 0.0;
  for (int px = 0; px < side * side; ++px) {
    double ent = 0.0;
    for (int c = 0; c < classes; ++c) {
      const double p = sm.data()[static_cast<size_t>(c * side * side + px)];
      ent -= p * std::log(std::max(p, 1e-12));
    }
    got += ent / std::log(static_cast<double>(classes));
  }
  CHECK(got == doctest::Approx(expected).epsilon(1e-5));
}

TEST_CASE("q is monotone non-increasing in the threshold") {
  SegNetConfig cfg = tiny_config();
  SegModel model(cfg, 12);
  Tensor imgs = images_in_unit_range(1, cfg.image_size, 13);
  double prev = 1.1;
  for (double tau : {0.1, 0.25, 0.4, 0.55, 0.7, 0.85, 0.968, 0.99}) {
    PseudoLabels p = predict_pseudo(model, imgs, tau);
    CHECK(p.q >= 0.0);
    CHECK(p.q <= 1.0);
    CHECK(p.q <= prev);
    prev = p.q;
  }
}

TEST_CASE("q uses a strict greater-than comparison") {
  // two classes with equal logits: max prob exactly 0.5
  SegNetConfig cfg = tiny_config();
  cfg.class_count = 2;
  SegModel model(cfg, 14);
  model.set_params(ParamVector::zeros_like(model.params()));
  Tensor imgs = images_in_unit_range(1, cfg.image_size, 15);
  CHECK(predict_pseudo(model, imgs, 0.5).q == 0.0);       // 0.5 > 0.5 is false
  CHECK(predict_pseudo(model, imgs, 0.499999).q == 1.0);  // strictly above
}

TEST_CASE("normalized entropy stays within [0, B*H*W] for any logits") {
  SegNetConfig cfg = tiny_config();
  for (uint32_t seed : {21u, 22u, 23u, 24u}) {
    SegModel model(cfg, seed);
    Tensor imgs = images_in_unit_range(2, cfg.image_size, seed + 50);
    PseudoLabels p = predict_pseudo(model, imgs, 0.968);
    const double cap = 2.0 * cfg.image_size * cfg.image_size;
    CHECK(p.entropy_sum >= 0.0);
    CHECK(p.entropy_sum <= cap * (1.0 + 1e-9));
  }
}

TEST_CASE("pseudo-label prediction leaves the tape empty") {
  Tape::get().clear();
  SegNetConfig cfg = tiny_config();
  SegModel model(cfg, 16);
  Tensor imgs = images_in_unit_range(2, cfg.image_size, 17);
  PseudoLabels p = predict_pseudo(model, imgs, 0.968);
  CHECK(Tape::get().empty());
  CHECK(p.labels.size() == 2);
}
