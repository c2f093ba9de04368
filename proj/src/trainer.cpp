#include "dtbs/trainer.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "dtbs/image_io.hpp"
#include "dtbs/rng.hpp"

namespace dtbs {

namespace fs = std::filesystem;

namespace {

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string iter_tag(int64_t t) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%06" PRId64, t);
  return buf;
}

const RunConfig& validated(const RunConfig& cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

void TrainConfig::validate() const {
  if (iterations < 0) throw std::invalid_argument("TrainConfig: iterations must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (ema_decay < 0.0 || ema_decay >= 1.0) throw std::invalid_argument("TrainConfig: alpha must lie in [0,1)");
  if (confidence_threshold <= 0.0 || confidence_threshold >= 1.0)
    throw std::invalid_argument("TrainConfig: tau must lie in (0,1)");
  if (feedback_beta < 0.0 || feedback_beta > 1.0)
    throw std::invalid_argument("TrainConfig: beta must lie in [0,1]");
  if (rcs_temperature <= 0.0) throw std::invalid_argument("TrainConfig: rcs temperature must be > 0");
  if (lr_encoder <= 0.0 || lr_decoder <= 0.0) throw std::invalid_argument("TrainConfig: learning rates must be > 0");
  if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: weight decay must be >= 0");
  if (eval_interval < 1) throw std::invalid_argument("TrainConfig: eval_interval must be >= 1");
  if (eval_count < 1) throw std::invalid_argument("TrainConfig: eval_count must be >= 1");
  if (source_pool_size < 1) throw std::invalid_argument("TrainConfig: source_pool_size must be >= 1");
  if (quals_per_domain < 0 || mix_dump_count < 0)
    throw std::invalid_argument("TrainConfig: output counts must be >= 0");
  augment.validate();
}

void RunConfig::validate() const {
  train.validate();
  model.validate();
  scene.validate();
  if (model.class_count != scene.class_count)
    throw std::invalid_argument("RunConfig: model and scene class counts differ");
  if (model.image_size != scene.image_size)
    throw std::invalid_argument("RunConfig: model and scene image sizes differ");
}

double beta_entropy(double entropy_day, double entropy_night) {
  if (entropy_day < 0.0 || entropy_night < 0.0)
    throw std::invalid_argument("beta_entropy: entropy sums must be >= 0");
  const double total = entropy_day + entropy_night;
  if (total == 0.0) throw std::invalid_argument("beta_entropy: both entropy sums are zero");
  return entropy_night / total;
}

void tsf_feedback(ParamVector& theta_post, const ParamVector& phi_style, const ParamVector& phi_illum, double alpha,
                  double beta) {
  require_compatible(theta_post, phi_style, "tsf_feedback(theta, phi_style)");
  require_compatible(theta_post, phi_illum, "tsf_feedback(theta, phi_illum)");
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("tsf_feedback: alpha must lie in [0,1]");
  if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("tsf_feedback: beta must lie in [0,1]");
  if (alpha == 1.0) return;
  auto th = theta_post.values();
  auto ps = phi_style.values();
  auto pi = phi_illum.values();
  for (size_t i = 0; i < th.size(); ++i) {
    const double ensemble = beta * static_cast<double>(pi[i]) + (1.0 - beta) * static_cast<double>(ps[i]);
    th[i] = static_cast<float>(alpha * static_cast<double>(th[i]) + (1.0 - alpha) * ensemble);
  }
}

std::vector<GridI32> argmax_labels(const Tensor& logits) {
  if (logits.shape().size() != 4)
    throw std::invalid_argument("argmax_labels: expected (B,C,H,W), got " + shape_str(logits.shape()));
  const int batch = logits.shape()[0], classes = logits.shape()[1], h = logits.shape()[2], w = logits.shape()[3];
  const size_t plane = static_cast<size_t>(h) * w;
  auto d = logits.data();
  std::vector<GridI32> out;
  out.reserve(static_cast<size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    GridI32 lab(h, w);
    const float* pb = d.data() + static_cast<size_t>(b) * classes * plane;
    for (size_t px = 0; px < plane; ++px) {
      int best = 0;
      float best_v = pb[px];
      for (int c = 1; c < classes; ++c) {
        const float v = pb[static_cast<size_t>(c) * plane + px];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      lab.v[px] = best;
    }
    out.push_back(std::move(lab));
  }
  return out;
}

Trainer::Trainer(const RunConfig& cfg)
    : cfg_(validated(cfg)),
      student_(cfg.model, cfg.train.seed),
      style_model_(cfg.model, cfg.train.seed),
      illum_model_(cfg.model, cfg.train.seed),
      teachers_(init_teachers(student_, cfg.train.ema_decay)),
      optimizer_(student_.params(), {{"encoder", cfg.train.lr_encoder}, {"decoder", cfg.train.lr_decoder}},
                 AdamWConfig{.weight_decay = cfg.train.weight_decay}) {
  const uint64_t seed = cfg_.train.seed;

  source_pool_.reserve(static_cast<size_t>(cfg_.train.source_pool_size));
  pool_presence_.reserve(source_pool_.capacity());
  for (int i = 0; i < cfg_.train.source_pool_size; ++i) {
    source_pool_.push_back(make_sample(cfg_.scene, Domain::kSource, derive_seed(seed, stream::kSourcePool, i)));
    uint32_t mask = 0;
    for (int32_t v : source_pool_.back().labels.v)
      if (v != kIgnoreLabel) mask |= 1u << v;
    pool_presence_.push_back(mask);
  }
  source_freq_ = class_frequencies(source_pool_);

  for (int i = 0; i < cfg_.train.eval_count; ++i) {
    eval_source_.push_back(make_sample(cfg_.scene, Domain::kSource, derive_seed(seed, stream::kEvalScene, i)));
    // Day/night evaluation pairs share one layout seed per index.
    const uint64_t pair_seed = derive_seed(seed, stream::kEvalScene, 100000 + i);
    eval_day_.push_back(make_sample(cfg_.scene, Domain::kTargetDay, pair_seed));
    eval_night_.push_back(make_sample(cfg_.scene, Domain::kTargetNight, pair_seed));
  }

  style_model_.set_params(teachers_.style);
  illum_model_.set_params(teachers_.illumination);
}

Tensor Trainer::stack(const std::vector<Tensor>& images) const {
  const int n = cfg_.scene.image_size;
  Tensor out = Tensor::zeros({static_cast<int>(images.size()), 3, n, n});
  auto dst = out.data();
  size_t at = 0;
  for (const Tensor& img : images) {
    auto src = img.data();
    std::copy(src.begin(), src.end(), dst.begin() + at);
    at += src.size();
  }
  return out;
}

Trainer::Batch Trainer::assemble_batch(std::mt19937& rng, bool with_targets) const {
  Batch batch;
  const int b = cfg_.train.batch_size;
  std::uniform_int_distribution<int> pick(0, static_cast<int>(source_pool_.size()) - 1);
  for (int e = 0; e < b; ++e) {
    // RCS anchor first, then a source scene that contains it; f is computed
    // from the pool, so a positive-frequency anchor always terminates.
    const int anchor = rcs_sample(source_freq_, cfg_.train.rcs_temperature, rng);
    int idx = pick(rng);
    while (!(pool_presence_[static_cast<size_t>(idx)] & (1u << anchor))) idx = pick(rng);
    batch.anchors.push_back(anchor);
    batch.source_indices.push_back(idx);

    if (!with_targets) continue;
    const int64_t t = iteration_;
    batch.day_images.push_back(
        make_sample(cfg_.scene, Domain::kTargetDay,
                    derive_seed(cfg_.train.seed, stream::kTargetDay, static_cast<uint64_t>(t) * b + e))
            .image);
    batch.night_images.push_back(
        make_sample(cfg_.scene, Domain::kTargetNight,
                    derive_seed(cfg_.train.seed, stream::kTargetNight, static_cast<uint64_t>(t) * b + e))
            .image);
  }
  return batch;
}

IterationReport Trainer::train_iteration() {
  const int64_t t = iteration_;
  try {
    Tape::get().clear();
    student_.zero_grad();

    std::mt19937 rng_batch = make_rng(derive_seed(cfg_.train.seed, stream::kBatch, static_cast<uint64_t>(t)));
    std::mt19937 rng_aug = make_rng(derive_seed(cfg_.train.seed, stream::kAugment, static_cast<uint64_t>(t)));

    Batch batch = assemble_batch(rng_batch, /*with_targets=*/true);
    const int b = cfg_.train.batch_size;

    std::vector<Tensor> source_images;
    std::vector<GridI32> source_labels;
    for (int e = 0; e < b; ++e) {
      const DomainSample& s = source_pool_[static_cast<size_t>(batch.source_indices[static_cast<size_t>(e)])];
      source_images.push_back(s.image);
      source_labels.push_back(s.labels);
    }

    // The student weights entering this iteration drive both teacher EMA
    // updates; the optimizer step happens only after the night flow.
    const ParamVector theta_prev = student_.params();

    if (debug_.enabled) {
      debug_.masks_day.clear();
      debug_.masks_night.clear();
      debug_.mixed_day.clear();
      debug_.mixed_night.clear();
      debug_.source_images = source_images;
      debug_.day_images = batch.day_images;
      debug_.night_images = batch.night_images;
    }

    // Flow 1: supervised source pass.
    const Tensor logits_src = student_.forward(stack(source_images), /*with_grad=*/true);
    const Tensor l_src = loss_source(logits_src, source_labels);

    // Flow 2: style teacher absorbs the student, labels the day batch, and
    // the student trains on day mixes.
    ema_update(teachers_.style, theta_prev, cfg_.train.ema_decay);
    style_model_.set_params(teachers_.style);
    const PseudoLabels pseudo_day =
        predict_pseudo(style_model_, stack(batch.day_images), cfg_.train.confidence_threshold);

    std::vector<MixMask> masks;
    for (int e = 0; e < b; ++e)
      masks.push_back(build_mask(source_pool_[static_cast<size_t>(batch.source_indices[static_cast<size_t>(e)])],
                                 batch.anchors[static_cast<size_t>(e)], rng_batch,
                                 batch.source_indices[static_cast<size_t>(e)]));

    Tensor l_sty, l_ill;
    if (cfg_.train.use_gdm) {
      std::vector<Tensor> mixed_day;
      for (int e = 0; e < b; ++e) {
        const DomainSample& s = source_pool_[static_cast<size_t>(batch.source_indices[static_cast<size_t>(e)])];
        MixedImage m = mix(s, batch.day_images[static_cast<size_t>(e)], masks[static_cast<size_t>(e)]);
        if (t < cfg_.train.mix_dump_count && e == 0)
          dump_mix_quartet(t, s, batch.day_images[0], masks[0], m.image);
        if (debug_.enabled) {
          debug_.masks_day.push_back(masks[static_cast<size_t>(e)]);
          debug_.mixed_day.push_back(m.image);
        }
        mixed_day.push_back(augment(m.image, cfg_.train.augment, rng_aug));
      }
      const Tensor logits_day = student_.forward(stack(mixed_day), /*with_grad=*/true);
      l_sty = loss_mixed(logits_day, masks, source_labels, pseudo_day);
    } else {
      // Ablation: no domain mixing, flows 2-3 train on fresh source batches.
      Batch extra = assemble_batch(rng_batch, /*with_targets=*/false);
      std::vector<Tensor> imgs;
      std::vector<GridI32> labs;
      for (int e = 0; e < b; ++e) {
        const DomainSample& s = source_pool_[static_cast<size_t>(extra.source_indices[static_cast<size_t>(e)])];
        imgs.push_back(s.image);
        labs.push_back(s.labels);
      }
      l_sty = loss_source(student_.forward(stack(imgs), /*with_grad=*/true), labs);
    }

    // Flow 3: illumination teacher (style teacher stays frozen), night mixes
    // reuse the day masks.
    ema_update(teachers_.illumination, theta_prev, cfg_.train.ema_decay);
    illum_model_.set_params(teachers_.illumination);
    const PseudoLabels pseudo_night =
        predict_pseudo(illum_model_, stack(batch.night_images), cfg_.train.confidence_threshold);

    if (cfg_.train.use_gdm) {
      std::vector<Tensor> mixed_night;
      for (int e = 0; e < b; ++e) {
        const DomainSample& s = source_pool_[static_cast<size_t>(batch.source_indices[static_cast<size_t>(e)])];
        MixedImage m = mix(s, batch.night_images[static_cast<size_t>(e)], masks[static_cast<size_t>(e)]);
        if (debug_.enabled) {
          debug_.masks_night.push_back(masks[static_cast<size_t>(e)]);
          debug_.mixed_night.push_back(m.image);
        }
        mixed_night.push_back(augment(m.image, cfg_.train.augment, rng_aug));
      }
      const Tensor logits_night = student_.forward(stack(mixed_night), /*with_grad=*/true);
      l_ill = loss_mixed(logits_night, masks, source_labels, pseudo_night);
    } else {
      Batch extra = assemble_batch(rng_batch, /*with_targets=*/false);
      std::vector<Tensor> imgs;
      std::vector<GridI32> labs;
      for (int e = 0; e < b; ++e) {
        const DomainSample& s = source_pool_[static_cast<size_t>(extra.source_indices[static_cast<size_t>(e)])];
        imgs.push_back(s.image);
        labs.push_back(s.labels);
      }
      l_ill = loss_source(student_.forward(stack(imgs), /*with_grad=*/true), labs);
    }

    const Tensor l_total = add(add(l_src, l_sty), l_ill);

    IterationReport rep;
    rep.iteration = t;
    rep.loss_source = l_src.item();
    rep.loss_style = l_sty.item();
    rep.loss_illum = l_ill.item();
    rep.loss_total = rep.loss_source + rep.loss_style + rep.loss_illum;
    rep.q_day = pseudo_day.q;
    rep.q_night = pseudo_night.q;
    rep.entropy_day = pseudo_day.entropy_sum;
    rep.entropy_night = pseudo_night.entropy_sum;
    if (!std::isfinite(rep.loss_total)) throw std::runtime_error("loss became non-finite");

    backward(l_total);
    ParamVector params = student_.params();
    optimizer_.step(params, student_.grads());
    student_.set_params(params);

    // Flow 4: feedback from both teachers onto the stepped student.
    double beta = cfg_.train.feedback_beta;
    if (cfg_.train.beta_mode == TrainConfig::BetaMode::kEntropy &&
        (pseudo_day.entropy_sum + pseudo_night.entropy_sum) > 0.0)
      beta = beta_entropy(pseudo_day.entropy_sum, pseudo_night.entropy_sum);
    rep.beta_effective = beta;
    if (cfg_.train.use_tsf) {
      ParamVector theta_post = student_.params();
      tsf_feedback(theta_post, teachers_.style, teachers_.illumination, cfg_.train.ema_decay, beta);
      student_.set_params(theta_post);
    }

    teachers_.iteration = ++iteration_;
    return rep;
  } catch (const std::exception& e) {
    throw std::runtime_error("train_iteration " + std::to_string(t) + ": " + e.what());
  }
}

Trainer::EvalTriple Trainer::evaluate() const {
  NoGradGuard ng;
  auto eval_domain = [&](const std::vector<DomainSample>& set, Domain dom) {
    ConfusionMatrix cm(cfg_.model.class_count);
    const int chunk = 8;
    for (size_t at = 0; at < set.size(); at += chunk) {
      std::vector<Tensor> imgs;
      for (size_t i = at; i < std::min(set.size(), at + chunk); ++i) imgs.push_back(set[i].image);
      const Tensor logits = student_.forward(stack(imgs), /*with_grad=*/false);
      const auto preds = argmax_labels(logits);
      for (size_t i = 0; i < preds.size(); ++i) cm.accumulate(preds[i], set[at + i].labels);
    }
    EvalResult res = cm.finalize();
    res.domain = dom;
    return res;
  };
  EvalTriple triple;
  triple.source = eval_domain(eval_source_, Domain::kSource);
  triple.target_day = eval_domain(eval_day_, Domain::kTargetDay);
  triple.target_night = eval_domain(eval_night_, Domain::kTargetNight);
  return triple;
}

void Trainer::write_quals(const fs::path& dir) const {
  if (cfg_.train.quals_per_domain == 0) return;
  fs::create_directories(dir);
  NoGradGuard ng;
  auto emit = [&](const std::vector<DomainSample>& set, const std::string& tag) {
    for (int i = 0; i < cfg_.train.quals_per_domain && i < static_cast<int>(set.size()); ++i) {
      const Tensor logits = student_.forward(stack({set[static_cast<size_t>(i)].image}), /*with_grad=*/false);
      const auto preds = argmax_labels(logits);
      render_prediction(set[static_cast<size_t>(i)].image, preds[0], &set[static_cast<size_t>(i)].labels,
                        default_palette(), dir / (tag + "_" + std::to_string(i) + ".ppm"));
    }
  };
  emit(eval_source_, "source");
  emit(eval_day_, "target-day");
  emit(eval_night_, "target-night");
}

void Trainer::dump_mix_quartet(int64_t iter, const DomainSample& src, const Tensor& target, const MixMask& mask,
                               const Tensor& mixed) const {
  if (mix_dump_dir_.empty()) return;
  const fs::path dir = mix_dump_dir_ / ("iter_" + iter_tag(iter));
  fs::create_directories(dir);
  write_ppm(dir / "source.ppm", to_rgb8(src.image));
  write_ppm(dir / "target.ppm", to_rgb8(target));
  GridI32 vis = mask.mask;
  for (int32_t& v : vis.v) v *= 255;
  write_pgm(dir / "mask.pgm", vis);
  write_ppm(dir / "mixed.ppm", to_rgb8(mixed));
}

RunSummary Trainer::run(const fs::path& out_dir, std::ostream* progress) {
  fs::create_directories(out_dir);
  if (cfg_.train.mix_dump_count > 0) mix_dump_dir_ = out_dir / "mixdumps";

  const fs::path csv_path = out_dir / "metrics.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("run: cannot open " + csv_path.string() + " for writing");
  csv << "iteration,loss_source,loss_style,loss_illum,loss_total,q_day,q_night,entropy_day,entropy_night,beta,"
         "miou_source,miou_target_day,miou_target_night";
  for (const auto& name : scene_class_names()) csv << ",iou_tn_" << name;
  csv << "\n";
  csv.flush();

  save_checkpoint(out_dir / "checkpoint_initial.dtbs", student_.params());

  RunSummary summary;
  summary.iterations = cfg_.train.iterations;
  summary.csv_path = csv_path;
  summary.final_checkpoint = out_dir / "checkpoint_final.dtbs";

  EvalTriple last{};
  bool evaluated = false;
  for (int64_t t = 0; t < cfg_.train.iterations; ++t) {
    const IterationReport rep = train_iteration();
    const bool at_eval = ((t + 1) % cfg_.train.eval_interval == 0) || (t + 1 == cfg_.train.iterations);
    if (!at_eval) continue;

    last = evaluate();
    evaluated = true;
    csv << rep.iteration << ',' << fmt_g(rep.loss_source) << ',' << fmt_g(rep.loss_style) << ','
        << fmt_g(rep.loss_illum) << ',' << fmt_g(rep.loss_total) << ',' << fmt_g(rep.q_day) << ','
        << fmt_g(rep.q_night) << ',' << fmt_g(rep.entropy_day) << ',' << fmt_g(rep.entropy_night) << ','
        << fmt_g(rep.beta_effective) << ',' << fmt_g(last.source.miou) << ',' << fmt_g(last.target_day.miou) << ','
        << fmt_g(last.target_night.miou);
    for (double iou : last.target_night.per_class_iou) csv << ',' << (std::isnan(iou) ? "nan" : fmt_g(iou));
    csv << "\n";
    csv.flush();

    save_checkpoint(out_dir / ("checkpoint_iter_" + iter_tag(t + 1) + ".dtbs"), student_.params());
    write_quals(out_dir / "quals" / ("iter_" + iter_tag(t + 1)));
    if (progress)
      (*progress) << "iter " << (t + 1) << "/" << cfg_.train.iterations << "  miou S/Td/Tn " << fmt_g(last.source.miou)
                  << "/" << fmt_g(last.target_day.miou) << "/" << fmt_g(last.target_night.miou) << "\n";
  }
  // Zero-iteration runs still report the untrained model's metrics in the
  // summary; the CSV stays header-only.
  if (!evaluated) last = evaluate();

  save_checkpoint(summary.final_checkpoint, student_.params());
  save_train_state(out_dir / "train_state_final.dtbs");

  summary.source = last.source;
  summary.target_day = last.target_day;
  summary.target_night = last.target_night;
  return summary;
}

void Trainer::save_train_state(const fs::path& path) const {
  const ParamVector student = student_.params();
  const int64_t n = student.size();
  ParamVector state = ParamVector::with_sections({{"student", n},
                                                  {"teacher_style", n},
                                                  {"teacher_illum", n},
                                                  {"opt_m", n},
                                                  {"opt_v", n},
                                                  {"meta", 2}});
  auto copy_into = [&](std::string_view name, std::span<const float> src) {
    auto dst = state.section(name);
    std::copy(src.begin(), src.end(), dst.begin());
  };
  copy_into("student", student.values());
  copy_into("teacher_style", teachers_.style.values());
  copy_into("teacher_illum", teachers_.illumination.values());
  copy_into("opt_m", optimizer_.first_moment().values());
  copy_into("opt_v", optimizer_.second_moment().values());
  auto meta = state.section("meta");
  meta[0] = static_cast<float>(optimizer_.step_count());
  meta[1] = static_cast<float>(iteration_);
  save_checkpoint(path, state);
}

void Trainer::load_train_state(const fs::path& path) {
  const ParamVector state = load_checkpoint(path);
  const int64_t n = student_.params().size();
  for (const char* name : {"student", "teacher_style", "teacher_illum", "opt_m", "opt_v"}) {
    if (!state.has_section(name))
      throw std::runtime_error("train state " + path.string() + ": missing section '" + name + "'");
    if (static_cast<int64_t>(state.section(name).size()) != n)
      throw std::runtime_error("train state " + path.string() + ": section '" + name +
                               "' does not match the configured model");
  }
  auto copy_from = [&](std::string_view name, std::span<float> dst) {
    auto src = state.section(name);
    std::copy(src.begin(), src.end(), dst.begin());
  };
  ParamVector student = student_.params();
  copy_from("student", student.values());
  student_.set_params(student);
  copy_from("teacher_style", teachers_.style.values());
  copy_from("teacher_illum", teachers_.illumination.values());
  style_model_.set_params(teachers_.style);
  illum_model_.set_params(teachers_.illumination);

  ParamVector m = ParamVector::zeros_like(student);
  ParamVector v = ParamVector::zeros_like(student);
  copy_from("opt_m", m.values());
  copy_from("opt_v", v.values());
  auto meta = state.section("meta");
  optimizer_.restore(m, v, static_cast<int64_t>(meta[0]));
  iteration_ = static_cast<int64_t>(meta[1]);
  teachers_.iteration = iteration_;
}

}  // namespace dtbs
