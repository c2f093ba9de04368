#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "dtbs/losses.hpp"
#include "dtbs/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/model_probe.hpp"

using namespace dtbs;
using dtbs::testsupport::gradcheck;

namespace fs = std::filesystem;

namespace {

Tensor random_logits(Shape shape, uint32_t seed, float lo = -2.0f, float hi = 2.0f) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(lo, hi);
  Tensor t = Tensor::zeros(shape);
  for (float& v : t.data()) v = dist(rng);
  return t;
}

// Scalar cross-entropy oracle, double precision end to end.
double ce_oracle(const Tensor& logits, const std::vector<GridI32>& labels,
                 const std::vector<GridI32>* masks = nullptr, const std::vector<GridI32>* pseudo = nullptr,
                 double q = 0.0) {
  const int b = logits.shape()[0], c = logits.shape()[1], h = logits.shape()[2], w = logits.shape()[3];
  const size_t plane = static_cast<size_t>(h) * w;
  double total = 0.0;
  int64_t counted = 0;
  for (int e = 0; e < b; ++e)
    for (size_t px = 0; px < plane; ++px) {
      double m = -1e300;
      for (int k = 0; k < c; ++k)
        m = std::max(m, static_cast<double>(logits.data()[(e * c + k) * plane + px]));
      double z = 0.0;
      for (int k = 0; k < c; ++k) z += std::exp(static_cast<double>(logits.data()[(e * c + k) * plane + px]) - m);
      auto logp = [&](int k) {
        return static_cast<double>(logits.data()[(e * c + k) * plane + px]) - m - std::log(z);
      };
      if (!masks) {
        const int32_t y = labels[static_cast<size_t>(e)].v[px];
        if (y == kIgnoreLabel) continue;
        total -= logp(y);
        ++counted;
      } else if ((*masks)[static_cast<size_t>(e)].v[px] != 0) {
        total -= logp(labels[static_cast<size_t>(e)].v[px]);
        ++counted;
      } else {
        total -= q * logp((*pseudo)[static_cast<size_t>(e)].v[px]);
        ++counted;
      }
    }
  return counted ? total / static_cast<double>(counted) : 0.0;
}

}  // namespace

TEST_CASE("loss_source: one-hot logits on the truth give (near) zero loss") {
  GridI32 labels(2, 2, 1);
  Tensor logits = Tensor::zeros({1, 3, 2, 2});
  for (size_t px = 0; px < 4; ++px) logits.data()[1 * 4 + px] = 50.0f;
  Tensor loss = loss_source(logits, std::vector<GridI32>{labels});
  CHECK(loss.item() >= 0.0f);
  CHECK(loss.item() <= 1e-6f);
}

TEST_CASE("loss_source: uniform logits cost ln C") {
  GridI32 labels(3, 3, 2);
  Tensor logits = Tensor::zeros({1, 4, 3, 3});
  Tensor loss = loss_source(logits, std::vector<GridI32>{labels});
  CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-6));
}

TEST_CASE("loss_source: random 2x2 case equals the scalar oracle") {
  for (uint32_t seed : {3u, 4u, 5u}) {
    Tensor logits = random_logits({2, 3, 2, 2}, seed);
    std::vector<GridI32> labels(2, GridI32(2, 2));
    std::mt19937 rng(seed + 100);
    for (auto& l : labels)
      for (int32_t& v : l.v) v = std::uniform_int_distribution<int>(0, 2)(rng);
    labels[0].v[3] = kIgnoreLabel;
    Tensor loss = loss_source(logits, labels);
    CHECK(loss.item() == doctest::Approx(ce_oracle(logits, labels)).epsilon(1e-5));
  }
}

TEST_CASE("loss_source: all-IGNORE batch is an error") {
  GridI32 labels(2, 2, kIgnoreLabel);
  Tensor logits = Tensor::zeros({1, 3, 2, 2});
  CHECK_THROWS_AS(loss_source(logits, std::vector<GridI32>{labels}), std::invalid_argument);
}

TEST_CASE("loss_mixed: all-ones mask reduces to loss_source") {
  Tensor logits = random_logits({1, 4, 3, 3}, 7);
  std::vector<GridI32> src_labels{GridI32(3, 3, 2)};
  src_labels[0].at(0, 0) = 1;
  std::vector<MixMask> masks(1);
  masks[0].mask = GridI32(3, 3, 1);
  PseudoLabels pseudo;
  pseudo.labels = {GridI32(3, 3, 0)};
  pseudo.q = 0.7;

  Tensor a = loss_mixed(logits, masks, src_labels, pseudo);
  Tensor b = loss_source(logits, src_labels);
  CHECK(a.item() == doctest::Approx(b.item()).epsilon(1e-7));
}

TEST_CASE("loss_mixed: all-zero mask with q = 0 costs nothing") {
  Tensor logits = random_logits({1, 4, 3, 3}, 8);
  std::vector<GridI32> src_labels{GridI32(3, 3, 2)};
  std::vector<MixMask> masks(1);
  masks[0].mask = GridI32(3, 3, 0);
  PseudoLabels pseudo;
  pseudo.labels = {GridI32(3, 3, 1)};
  pseudo.q = 0.0;
  CHECK(loss_mixed(logits, masks, src_labels, pseudo).item() == 0.0f);
}

TEST_CASE("loss_mixed: 2x2 case with q = 0.5 equals the scalar oracle") {
  Tensor logits = random_logits({1, 3, 2, 2}, 9);
  std::vector<GridI32> src_labels{GridI32(2, 2, 0)};
  src_labels[0].at(0, 1) = 2;
  std::vector<MixMask> masks(1);
  masks[0].mask = GridI32(2, 2, 0);
  masks[0].mask.at(0, 0) = 1;
  masks[0].mask.at(0, 1) = 1;
  PseudoLabels pseudo;
  pseudo.labels = {GridI32(2, 2, 1)};
  pseudo.q = 0.5;

  std::vector<GridI32> mask_grids{masks[0].mask};
  const double want = ce_oracle(logits, src_labels, &mask_grids, &pseudo.labels, 0.5);
  CHECK(loss_mixed(logits, masks, src_labels, pseudo).item() == doctest::Approx(want).epsilon(1e-5));
}

TEST_CASE("gradcheck: all three losses differentiate through the network") {
  SegNetConfig cfg;
  cfg.class_count = 4;
  cfg.encoder_widths = {3, 4};
  cfg.decoder_width = 4;
  cfg.image_size = 8;

  for (uint32_t seed : {1u, 2u, 3u}) {
    CAPTURE(seed);
    SegModel model(cfg, seed);
    dtbs::testsupport::make_smooth_probe_model(model);
    std::mt19937 rng(seed * 31 + 1);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    Tensor images = Tensor::zeros({1, 3, 8, 8});
    for (float& v : images.data()) v = unit(rng);

    std::vector<GridI32> labels{GridI32(8, 8)};
    for (int32_t& v : labels[0].v) v = std::uniform_int_distribution<int>(0, 3)(rng);
    std::vector<MixMask> masks(1);
    masks[0].mask = GridI32(8, 8);
    for (int32_t& v : masks[0].mask.v) v = std::uniform_int_distribution<int>(0, 1)(rng);
    PseudoLabels pseudo;
    pseudo.labels = {GridI32(8, 8)};
    for (int32_t& v : pseudo.labels[0].v) v = std::uniform_int_distribution<int>(0, 3)(rng);
    pseudo.q = 0.6;

    auto check_loss = [&](auto&& make_loss) {
      // h above the float32 noise floor; stride-subsampled for speed (the
      // acceptance suite probes every weight)
      auto rep = gradcheck(model.weight_tensors(), make_loss, 4e-3, /*stride=*/5);
      CHECK(rep.max_rel_err < 1e-3);
      CHECK(rep.skipped_nonsmooth == 0);  // smooth probe regime
    };

    check_loss([&] { return loss_source(model.forward(images, true), labels); });
    check_loss([&] { return loss_mixed(model.forward(images, true), masks, labels, pseudo); });
    // the illumination loss shares the functional form; exercised with its
    // own pseudo labels and q
    PseudoLabels pseudo_night = pseudo;
    pseudo_night.q = 0.3;
    check_loss([&] { return loss_mixed(model.forward(images, true), masks, labels, pseudo_night); });
  }
}

// ---- feedback ----

TEST_CASE("tsf boundaries: beta selects a single teacher") {
  ParamVector theta = ParamVector::with_sections({{"w", 4}});
  ParamVector phi_s = ParamVector::zeros_like(theta);
  ParamVector phi_i = ParamVector::zeros_like(theta);
  for (float& v : phi_s.values()) v = 1.0f;
  for (float& v : phi_i.values()) v = -1.0f;

  ParamVector t1 = theta;
  tsf_feedback(t1, phi_s, phi_i, 0.9, 1.0);  // only the illumination teacher
  for (float v : t1.values()) CHECK(v == doctest::Approx(0.9 * 0.0 + 0.1 * -1.0));

  ParamVector t0 = theta;
  tsf_feedback(t0, phi_s, phi_i, 0.9, 0.0);  // only the style teacher
  for (float v : t0.values()) CHECK(v == doctest::Approx(0.1 * 1.0));
}

TEST_CASE("tsf arithmetic: theta=0, phi_i=1, phi_s=0, alpha=0.99, beta=0.8 -> 0.008") {
  ParamVector theta = ParamVector::with_sections({{"w", 6}});
  ParamVector phi_s = ParamVector::zeros_like(theta);
  ParamVector phi_i = ParamVector::zeros_like(theta);
  for (float& v : phi_i.values()) v = 1.0f;
  tsf_feedback(theta, phi_s, phi_i, 0.99, 0.8);
  for (float v : theta.values()) CHECK(std::abs(v - 0.008) < 1e-7);
}

TEST_CASE("tsf at convergence is the identity") {
  ParamVector theta = ParamVector::with_sections({{"w", 5}});
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> dist(-2.0f, 2.0f);
  for (float& v : theta.values()) v = dist(rng);
  ParamVector phi_s = theta, phi_i = theta, before = theta;
  tsf_feedback(theta, phi_s, phi_i, 0.99, 0.8);
  for (int64_t i = 0; i < theta.size(); ++i)
    CHECK(std::abs(theta.values()[i] - before.values()[i]) < 1e-7);
}

TEST_CASE("tsf convexity on random vectors") {
  std::mt19937 rng(5);
  std::uniform_real_distribution<float> dist(-3.0f, 3.0f);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    ParamVector theta = ParamVector::with_sections({{"w", 11}});
    ParamVector phi_s = ParamVector::zeros_like(theta);
    ParamVector phi_i = ParamVector::zeros_like(theta);
    for (float& v : theta.values()) v = dist(rng);
    for (float& v : phi_s.values()) v = dist(rng);
    for (float& v : phi_i.values()) v = dist(rng);
    ParamVector before = theta;
    tsf_feedback(theta, phi_s, phi_i, unit(rng), unit(rng));
    for (int64_t i = 0; i < theta.size(); ++i) {
      const float lo = std::min({before.values()[i], phi_s.values()[i], phi_i.values()[i]});
      const float hi = std::max({before.values()[i], phi_s.values()[i], phi_i.values()[i]});
      CHECK(theta.values()[i] >= lo);
      CHECK(theta.values()[i] <= hi);
    }
  }
}

TEST_CASE("beta_entropy arithmetic and bounds") {
  CHECK(beta_entropy(1.0, 1.0) == 0.5);
  CHECK(beta_entropy(1.0, 3.0) == doctest::Approx(0.75));
  CHECK_THROWS_AS(beta_entropy(0.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(beta_entropy(-1.0, 2.0), std::invalid_argument);
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> pos(1e-6, 100.0);
  for (int i = 0; i < 200; ++i) {
    const double b = beta_entropy(pos(rng), pos(rng));
    CHECK(b > 0.0);
    CHECK(b < 1.0);
  }
}

// ---- the iteration and run loop ----

namespace {

RunConfig tiny_run_config(uint64_t seed = 1) {
  RunConfig cfg;
  cfg.model.class_count = 8;
  cfg.model.encoder_widths = {4, 6};
  cfg.model.decoder_width = 6;
  cfg.model.image_size = 16;
  cfg.scene.image_size = 16;
  cfg.train.seed = seed;
  cfg.train.iterations = 4;
  cfg.train.batch_size = 2;
  cfg.train.eval_interval = 2;
  cfg.train.eval_count = 4;
  cfg.train.source_pool_size = 24;
  cfg.train.quals_per_domain = 1;
  return cfg;
}

}  // namespace

TEST_CASE("one training iteration is bit-reproducible") {
  RunConfig cfg = tiny_run_config();
  Trainer a(cfg), b(cfg);
  IterationReport ra = a.train_iteration();
  IterationReport rb = b.train_iteration();
  CHECK(ra.loss_total == rb.loss_total);
  CHECK(ra.q_day == rb.q_day);
  CHECK(ra.entropy_night == rb.entropy_night);
  CHECK(a.student_params() == b.student_params());
  CHECK(a.teachers().style == b.teachers().style);
}

TEST_CASE("report total is exactly the sum of its parts") {
  RunConfig cfg = tiny_run_config(3);
  Trainer t(cfg);
  for (int i = 0; i < 3; ++i) {
    IterationReport rep = t.train_iteration();
    CHECK(rep.loss_total == rep.loss_source + rep.loss_style + rep.loss_illum);
    CHECK(rep.beta_effective == 0.8);
  }
}

TEST_CASE("teachers only move through the EMA; pseudo paths leave no gradient") {
  RunConfig cfg = tiny_run_config(5);
  Trainer t(cfg);
  const ParamVector theta_prev = t.student_params();
  ParamVector want_style = t.teachers().style;
  ParamVector want_illum = t.teachers().illumination;
  ema_update(want_style, theta_prev, cfg.train.ema_decay);
  ema_update(want_illum, theta_prev, cfg.train.ema_decay);

  t.train_iteration();
  CHECK(t.teachers().style == want_style);
  CHECK(t.teachers().illumination == want_illum);
  CHECK(Tape::get().empty());  // backward consumed everything
}

TEST_CASE("both flows of an iteration use the same masks and paste pixels exactly") {
  RunConfig cfg = tiny_run_config(7);
  Trainer t(cfg);
  t.set_debug_capture(true);
  t.train_iteration();
  const auto& dbg = t.debug_capture();
  REQUIRE(dbg.masks_day.size() == 2);
  REQUIRE(dbg.masks_night.size() == 2);
  for (size_t e = 0; e < 2; ++e) {
    CHECK(dbg.masks_day[e].mask == dbg.masks_night[e].mask);
    CHECK(dbg.masks_day[e].selected_classes == dbg.masks_night[e].selected_classes);

    // pixel-exact paste on the real training path (pre-augmentation)
    const auto src = dbg.source_images[e].data();
    const auto day = dbg.day_images[e].data();
    const auto night = dbg.night_images[e].data();
    const auto md = dbg.mixed_day[e].data();
    const auto mn = dbg.mixed_night[e].data();
    const size_t plane = md.size() / 3;
    for (size_t i = 0; i < plane; ++i)
      for (int c = 0; c < 3; ++c) {
        const size_t j = c * plane + i;
        if (dbg.masks_day[e].mask.v[i]) {
          CHECK(md[j] == src[j]);
          CHECK(mn[j] == src[j]);
        } else {
          CHECK(md[j] == day[j]);
          CHECK(mn[j] == night[j]);
        }
      }
  }
}

TEST_CASE("feedback keeps the student inside the teacher/student hull") {
  RunConfig cfg = tiny_run_config(9);
  Trainer t(cfg);
  t.train_iteration();
  ParamVector theta = t.student_params();
  ParamVector phi_s = t.teachers().style;
  ParamVector phi_i = t.teachers().illumination;
  ParamVector moved = theta;
  tsf_feedback(moved, phi_s, phi_i, cfg.train.ema_decay, 0.8);
  for (int64_t i = 0; i < moved.size(); ++i) {
    const float lo = std::min({theta.values()[i], phi_s.values()[i], phi_i.values()[i]});
    const float hi = std::max({theta.values()[i], phi_s.values()[i], phi_i.values()[i]});
    CHECK(moved.values()[i] >= lo);
    CHECK(moved.values()[i] <= hi);
  }
}

TEST_CASE("corrupted weights abort with the iteration index") {
  RunConfig cfg = tiny_run_config(11);
  Trainer t(cfg);
  t.train_iteration();
  const fs::path state = fs::temp_directory_path() / "dtbs_poison_state.dtbs";
  t.save_train_state(state);
  ParamVector st = load_checkpoint(state);
  for (float& v : st.section("student")) v = 1e30f;
  save_checkpoint(state, st);
  t.load_train_state(state);
  CHECK_THROWS_WITH_AS(t.train_iteration(), doctest::Contains("train_iteration"), std::runtime_error);
  fs::remove(state);
}

TEST_CASE("zero-iteration run emits the initial checkpoint and a header-only CSV") {
  RunConfig cfg = tiny_run_config(13);
  cfg.train.iterations = 0;
  Trainer t(cfg);
  const fs::path dir = fs::temp_directory_path() / "dtbs_zero_run";
  fs::remove_all(dir);
  RunSummary s = t.run(dir);
  CHECK(fs::exists(dir / "checkpoint_initial.dtbs"));
  CHECK(fs::exists(dir / "checkpoint_final.dtbs"));
  std::ifstream csv(s.csv_path);
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 1);  // header only
  fs::remove_all(dir);
}

TEST_CASE("short runs log one CSV row per eval point and reproduce bitwise") {
  RunConfig cfg = tiny_run_config(17);
  const fs::path dir1 = fs::temp_directory_path() / "dtbs_run_a";
  const fs::path dir2 = fs::temp_directory_path() / "dtbs_run_b";
  fs::remove_all(dir1);
  fs::remove_all(dir2);
  RunSummary s1 = Trainer(cfg).run(dir1);
  RunSummary s2 = Trainer(cfg).run(dir2);

  std::ifstream f1(s1.csv_path), f2(s2.csv_path);
  std::string a((std::istreambuf_iterator<char>(f1)), {}), b((std::istreambuf_iterator<char>(f2)), {});
  CHECK(a == b);

  int lines = 0;
  std::istringstream is(a);
  std::string line;
  std::getline(is, line);
  CHECK(line.rfind("iteration,loss_source,loss_style,loss_illum,loss_total,q_day,q_night", 0) == 0);
  while (std::getline(is, line)) ++lines;
  CHECK(lines == 2);  // evals at t=2 and t=4

  CHECK(fs::exists(dir1 / "checkpoint_iter_000002.dtbs"));
  CHECK(fs::exists(dir1 / "checkpoint_final.dtbs"));
  CHECK(fs::exists(dir1 / "quals" / "iter_000002" / "source_0.ppm"));
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("train state round-trips and resumes bit-exactly") {
  RunConfig cfg = tiny_run_config(19);
  Trainer a(cfg);
  for (int i = 0; i < 4; ++i) a.train_iteration();
  const fs::path state = fs::temp_directory_path() / "dtbs_state.dtbs";
  a.save_train_state(state);
  for (int i = 0; i < 3; ++i) a.train_iteration();

  Trainer b(cfg);
  b.load_train_state(state);
  CHECK(b.iteration() == 4);
  for (int i = 0; i < 3; ++i) b.train_iteration();

  CHECK(a.student_params() == b.student_params());
  CHECK(a.teachers().style == b.teachers().style);
  CHECK(a.teachers().illumination == b.teachers().illumination);
  fs::remove(state);
}

TEST_CASE("the two teachers coincide under the default flow") {
  // Both teachers start as copies of the student and absorb the same
  // pre-step weights once per iteration, so they stay bit-identical; the
  // feedback coefficient then selects between equal vectors. Pinned here so
  // a change to the update order is a deliberate one.
  RunConfig cfg = tiny_run_config(29);
  Trainer t(cfg);
  for (int i = 0; i < 5; ++i) {
    t.train_iteration();
    CHECK(t.teachers().style == t.teachers().illumination);
  }
}

TEST_CASE("ablation flags change the flows") {
  RunConfig cfg = tiny_run_config(23);
  cfg.train.use_gdm = false;
  cfg.train.use_tsf = false;
  Trainer baseline(cfg);
  IterationReport rep = baseline.train_iteration();
  // all three losses are source CE now; teachers still track the student
  CHECK(rep.loss_source > 0.0);
  CHECK(rep.loss_style > 0.0);
  CHECK(rep.loss_illum > 0.0);

  // without TSF the student is exactly the post-step weights: running the
  // same config with TSF must differ
  RunConfig cfg_tsf = cfg;
  cfg_tsf.train.use_tsf = true;
  Trainer with_tsf(cfg_tsf);
  with_tsf.train_iteration();
  CHECK_FALSE(baseline.student_params() == with_tsf.student_params());
}
