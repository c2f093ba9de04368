#include "dtbs/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>

#include "dtbs/image_io.hpp"
#include "dtbs/rng.hpp"

namespace dtbs {

namespace {

enum : int32_t { kRoad = 0, kSidewalk = 1, kBuilding = 2, kSky = 3, kVegetation = 4, kCar = 5, kPerson = 6, kPole = 7 };

struct Rgb {
  double r, g, b;
};

// Base palette (source-domain hues). Classes are separable mainly by color;
// texture noise is layered on top per domain.
constexpr Rgb kPalette[8] = {
    {0.32, 0.32, 0.35},  // road: asphalt gray
    {0.62, 0.52, 0.42},  // sidewalk: warm tan
    {0.58, 0.28, 0.24},  // building: brick
    {0.50, 0.68, 0.92},  // sky: light blue
    {0.18, 0.52, 0.21},  // vegetation: green
    {0.22, 0.28, 0.68},  // car: blue
    {0.88, 0.34, 0.44},  // person: red/pink
    {0.78, 0.78, 0.70},  // pole: pale gray
};

// Per-class texture multiplier on the domain noise amplitude. Kept mild and
// similar across classes: texture is a feature, color is the separator.
constexpr double kClassNoise[8] = {0.9, 1.0, 1.1, 0.7, 1.2, 0.9, 0.9, 0.8};

double urand(std::mt19937& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int irand(std::mt19937& rng, int lo, int hi) {  // inclusive
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Deterministic per-pixel noise in [-1, 1].
double pixel_noise(uint64_t seed, int r, int c) {
  const uint64_t h = splitmix64(seed ^ (static_cast<uint64_t>(r) * 0x100000001b3ull + static_cast<uint64_t>(c)));
  return (static_cast<double>(h >> 11) / 9007199254740992.0) * 2.0 - 1.0;
}

// Rotates a color about the gray axis (hue rotation leaving luminance alone).
Rgb rotate_hue(const Rgb& in, double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  const double third = (1.0 - c) / 3.0;
  const double rt3 = std::sqrt(1.0 / 3.0) * s;
  const double m[3][3] = {
      {c + third, third - rt3, third + rt3},
      {third + rt3, c + third, third - rt3},
      {third - rt3, third + rt3, c + third},
  };
  return {m[0][0] * in.r + m[0][1] * in.g + m[0][2] * in.b,
          m[1][0] * in.r + m[1][1] * in.g + m[1][2] * in.b,
          m[2][0] * in.r + m[2][1] * in.g + m[2][2] * in.b};
}

void fill_rect(GridI32& g, int r0, int r1, int c0, int c1, int32_t cls) {
  r0 = std::max(r0, 0);
  c0 = std::max(c0, 0);
  r1 = std::min(r1, g.h);
  c1 = std::min(c1, g.w);
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) g.at(r, c) = cls;
}

void fill_ellipse(GridI32& g, double cr, double cc, double rr, double rc, int32_t cls) {
  const int r0 = std::max(0, static_cast<int>(cr - rr) - 1), r1 = std::min(g.h, static_cast<int>(cr + rr) + 2);
  const int c0 = std::max(0, static_cast<int>(cc - rc) - 1), c1 = std::min(g.w, static_cast<int>(cc + rc) + 2);
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) {
      const double dr = (r - cr) / rr, dc = (c - cc) / rc;
      if (dr * dr + dc * dc <= 1.0) g.at(r, c) = cls;
    }
}

}  // namespace

std::string domain_name(Domain d) {
  switch (d) {
    case Domain::kSource: return "source";
    case Domain::kTargetDay: return "target-day";
    case Domain::kTargetNight: return "target-night";
  }
  return "?";
}

const std::vector<std::string>& scene_class_names() {
  static const std::vector<std::string> names = {"road",       "sidewalk", "building", "sky",
                                                 "vegetation", "car",      "person",   "pole"};
  return names;
}

void SceneSpec::validate() const {
  if (class_count != 8) throw std::invalid_argument("SceneSpec: generator defines exactly 8 classes");
  if (image_size < 16 || image_size % 4 != 0)
    throw std::invalid_argument("SceneSpec: image_size must be a multiple of 4, >= 16");
  double sum = 0.0;
  for (double f : class_frequency_profile) {
    if (f < 0.0) throw std::invalid_argument("SceneSpec: negative class frequency");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-4) throw std::invalid_argument("SceneSpec: class frequency profile must sum to 1");
  if (night.brightness_lo > night.brightness_hi || night.brightness_lo <= 0.0)
    throw std::invalid_argument("SceneSpec: bad night brightness range");
  if (night.brightness_hi >= 1.0)
    throw std::invalid_argument("SceneSpec: night brightness must stay below the day level (1.0)");
  if (night.gamma_lo > night.gamma_hi || night.gamma_lo < 1.0)
    throw std::invalid_argument("SceneSpec: bad night gamma range");
  if (night.blob_count_max < 0 || night.blob_radius_lo > night.blob_radius_hi || night.blob_radius_lo < 0.0)
    throw std::invalid_argument("SceneSpec: bad overexposure blob parameters");
  if (night.sensor_noise < 0.0) throw std::invalid_argument("SceneSpec: sensor noise must be >= 0");
}

GridI32 generate_scene(const SceneSpec& spec, uint64_t seed) {
  spec.validate();
  const int n = spec.image_size;
  std::mt19937 rng = make_rng(derive_seed(seed, 0xD7B5));
  GridI32 g(n, n, kSky);

  // Geometry is deliberately loose: a model should not be able to lean on
  // pixel position alone, or domain shifts in appearance stop mattering.
  const int horizon = static_cast<int>(n * urand(rng, 0.15, 0.55));
  fill_rect(g, horizon, n, 0, n, kVegetation);

  // Street canyon: building walls on both sides, rising above the horizon.
  const int wall_l = static_cast<int>(n * urand(rng, 0.02, 0.28));
  const int wall_r = static_cast<int>(n * urand(rng, 0.02, 0.28));
  const int top_l = static_cast<int>(horizon * urand(rng, 0.10, 0.70));
  const int top_r = static_cast<int>(horizon * urand(rng, 0.10, 0.70));
  fill_rect(g, top_l, n, 0, wall_l, kBuilding);
  fill_rect(g, top_r, n, n - wall_r, n, kBuilding);

  // Occasional free-standing building block.
  if (urand(rng, 0.0, 1.0) < 0.5) {
    const int bw = irand(rng, n / 8, n / 3);
    const int bc = irand(rng, 1, std::max(2, n - bw - 2));
    const int bt = static_cast<int>(horizon * urand(rng, 0.2, 0.8));
    fill_rect(g, bt, horizon + irand(rng, 1, n / 8), bc, bc + bw, kBuilding);
  }

  // Tree blobs above and around the horizon.
  const int trees = irand(rng, 0, 3);
  for (int t = 0; t < trees; ++t) {
    const double cc = urand(rng, 0.05, 0.95) * n;
    const double cr = urand(rng, horizon * 0.5, horizon + 4.0);
    fill_ellipse(g, cr, cc, urand(rng, 3.0, 8.0), urand(rng, 3.0, 8.0), kVegetation);
  }

  // Road trapezoid flanked by sidewalk strips.
  const double cx = urand(rng, 0.25, 0.75) * n;
  const double road_bottom = urand(rng, 0.20, 0.40) * n;
  const double road_top = urand(rng, 0.03, 0.10) * n;
  const double walk_w = urand(rng, 0.04, 0.10) * n;
  for (int r = horizon; r < n; ++r) {
    const double t = (n - horizon) > 0 ? static_cast<double>(r - horizon) / (n - horizon) : 0.0;
    const double half = road_top + t * (road_bottom - road_top);
    const double wk = walk_w * (0.4 + 0.6 * t);
    fill_rect(g, r, r + 1, static_cast<int>(cx - half - wk), static_cast<int>(cx + half + wk), kSidewalk);
    fill_rect(g, r, r + 1, static_cast<int>(cx - half), static_cast<int>(cx + half), kRoad);
  }

  // Cars on the road.
  const int cars = irand(rng, 0, 3);
  for (int i = 0; i < cars; ++i) {
    const int ch = irand(rng, 4, 7);
    const int cw = irand(rng, 7, 13);
    const int bottom = irand(rng, horizon + (n - horizon) / 3, n - 2);
    const double t = static_cast<double>(bottom - horizon) / (n - horizon);
    const double half = road_top + t * (road_bottom - road_top);
    const int cc = static_cast<int>(cx + urand(rng, -0.7, 0.7) * std::max(1.0, half - cw / 2.0));
    fill_rect(g, bottom - ch, bottom, cc - cw / 2, cc + cw - cw / 2, kCar);
  }

  // Long-tail classes: thin, present in a minority of scenes.
  if (urand(rng, 0.0, 1.0) < 0.21) {
    const int ph = irand(rng, 6, 10);
    const int pw = irand(rng, 2, 3);
    const int bottom = irand(rng, horizon + 6, n - 2);
    const double t = static_cast<double>(bottom - horizon) / (n - horizon);
    const double half = road_top + t * (road_bottom - road_top);
    const int side = irand(rng, 0, 1) ? 1 : -1;
    const int cc = static_cast<int>(cx + side * (half + walk_w * 0.5));
    fill_rect(g, bottom - ph, bottom, cc - pw / 2, cc - pw / 2 + pw, kPerson);
  }
  if (urand(rng, 0.0, 1.0) < 0.21) {
    const int ph = irand(rng, 10, 18);
    const int pw = irand(rng, 1, 2);
    const int bottom = irand(rng, horizon + 4, n - 4);
    const double t = static_cast<double>(bottom - horizon) / (n - horizon);
    const double half = road_top + t * (road_bottom - road_top);
    const int side = irand(rng, 0, 1) ? 1 : -1;
    const int cc = static_cast<int>(cx + side * (half + walk_w + 1.0));
    fill_rect(g, bottom - ph, bottom, cc - pw / 2, cc - pw / 2 + pw, kPole);
  }

  return g;
}

DomainSample render(const GridI32& layout, Domain domain, const SceneSpec& spec, uint64_t render_seed) {
  spec.validate();
  const int n = spec.image_size;
  if (layout.h != n || layout.w != n) throw std::invalid_argument("render: layout size does not match spec");

  const DomainStyle& style = (domain == Domain::kSource) ? spec.source_style : spec.target_style;
  std::mt19937 rng = make_rng(derive_seed(render_seed, 0xAE11));

  // Per-sample appearance variation keeps domains from collapsing onto a
  // single memorizable palette. The exposure range is wide on purpose:
  // global exposure is a supervised, in-distribution factor in the lit
  // domains, so the night domain's difficulty concentrates in appearance
  // (palette) shift and low-light artifacts rather than raw pixel scale.
  const double brightness_jitter = urand(rng, 0.50, 1.15);
  std::array<Rgb, 8> palette;
  for (int c = 0; c < 8; ++c) {
    Rgb col = rotate_hue(kPalette[c], style.hue_rotation);
    col.r = col.r * brightness_jitter + urand(rng, -0.02, 0.02);
    col.g = col.g * brightness_jitter + urand(rng, -0.02, 0.02);
    col.b = col.b * brightness_jitter + urand(rng, -0.02, 0.02);
    palette[c] = col;
  }

  const uint64_t noise_seed = derive_seed(render_seed, 0x7E8A);

  // Lit domains carry cast shadows: labeled dark regions keep exposure a
  // supervised, in-distribution factor, so the night domain's difficulty is
  // dominated by appearance shift rather than raw pixel scale.
  struct Shadow {
    double r, c, rr, rc, factor;
  };
  std::vector<Shadow> shadows;
  if (domain != Domain::kTargetNight) {
    const int count = irand(rng, 1, 3);
    for (int i = 0; i < count; ++i)
      shadows.push_back({urand(rng, 0.0, n - 1.0), urand(rng, 0.0, n - 1.0), urand(rng, 6.0, 16.0),
                         urand(rng, 8.0, 20.0), urand(rng, 0.35, 0.6)});
  }

  // Night-only factors.
  double night_scale = 1.0, night_gamma = 1.0;
  struct Blob {
    double r, c, radius, strength;
  };
  std::vector<Blob> blobs;
  if (domain == Domain::kTargetNight) {
    night_scale = urand(rng, spec.night.brightness_lo, spec.night.brightness_hi);
    night_gamma = urand(rng, spec.night.gamma_lo, spec.night.gamma_hi);
    const int count = irand(rng, 0, spec.night.blob_count_max);
    for (int i = 0; i < count; ++i)
      blobs.push_back({urand(rng, 0.0, n - 1.0), urand(rng, 0.0, n - 1.0),
                       urand(rng, spec.night.blob_radius_lo, spec.night.blob_radius_hi),
                       urand(rng, 0.5, 1.0) * spec.night.blob_strength});
  }

  Tensor image = Tensor::zeros({3, n, n});
  auto img = image.data();
  const size_t plane = static_cast<size_t>(n) * n;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const int32_t cls = layout.at(r, c);
      const Rgb& base = palette[static_cast<size_t>(cls)];
      const double tex = pixel_noise(noise_seed, r, c) * style.noise_amplitude * kClassNoise[cls];
      double ch[3] = {base.r + tex, base.g + tex, base.b + tex};
      for (const Shadow& sh : shadows) {
        const double dr = (r - sh.r) / sh.rr, dc = (c - sh.c) / sh.rc;
        if (dr * dr + dc * dc <= 1.0)
          for (double& v : ch) v *= sh.factor;
      }
      if (domain == Domain::kTargetNight) {
        for (double& v : ch) {
          v = std::pow(std::max(0.0, v * night_scale), night_gamma);
        }
        for (const Blob& bl : blobs) {
          const double d2 = (r - bl.r) * (r - bl.r) + (c - bl.c) * (c - bl.c);
          const double w = bl.strength * std::exp(-d2 / (2.0 * bl.radius * bl.radius));
          for (double& v : ch) v += (1.0 - v) * w;
        }
        // sensor noise dominates where the signal is dim
        const double grain = pixel_noise(noise_seed ^ 0x51ull, r, c) * spec.night.sensor_noise;
        for (double& v : ch) v += grain;
      }
      const size_t i = static_cast<size_t>(r) * n + c;
      img[i] = static_cast<float>(std::clamp(ch[0], 0.0, 1.0));
      img[plane + i] = static_cast<float>(std::clamp(ch[1], 0.0, 1.0));
      img[2 * plane + i] = static_cast<float>(std::clamp(ch[2], 0.0, 1.0));
    }
  }

  DomainSample s;
  s.image = std::move(image);
  s.labels = layout;
  s.domain = domain;
  s.seed = render_seed;
  return s;
}

DomainSample make_sample(const SceneSpec& spec, Domain domain, uint64_t sample_seed) {
  const GridI32 layout = generate_scene(spec, derive_seed(sample_seed, 0x5CE0));
  const uint64_t render_seed = derive_seed(sample_seed, 0x9E4D + static_cast<uint64_t>(domain));
  DomainSample s = render(layout, domain, spec, render_seed);
  s.seed = sample_seed;
  return s;
}

void export_corpus(const SceneSpec& spec, Domain domain, int count, uint64_t seed,
                   const std::filesystem::path& dir) {
  if (count < 1) throw std::invalid_argument("export_corpus: count must be >= 1");
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw std::runtime_error("export_corpus: cannot open " + (dir / "manifest.txt").string());
  for (int i = 0; i < count; ++i) {
    const uint64_t sample_seed = derive_seed(seed, 0xC0B9, static_cast<uint64_t>(i));
    const DomainSample s = make_sample(spec, domain, sample_seed);
    char name[64];
    std::snprintf(name, sizeof name, "%s_%04d", domain_name(domain).c_str(), i);
    write_ppm(dir / (std::string(name) + ".ppm"), to_rgb8(s.image));
    write_pgm(dir / (std::string(name) + "_labels.pgm"), s.labels);
    manifest << name << ".ppm " << domain_name(domain) << " " << sample_seed << "\n";
  }
}

std::vector<double> class_frequencies(std::span<const DomainSample> corpus) {
  if (corpus.empty()) throw std::invalid_argument("class_frequencies: empty corpus");
  int32_t max_class = 0;
  for (const auto& s : corpus)
    for (int32_t v : s.labels.v)
      if (v != kIgnoreLabel) max_class = std::max(max_class, v);
  std::vector<double> counts(static_cast<size_t>(max_class) + 1, 0.0);
  double total = 0.0;
  for (const auto& s : corpus)
    for (int32_t v : s.labels.v) {
      if (v == kIgnoreLabel) continue;
      counts[static_cast<size_t>(v)] += 1.0;
      total += 1.0;
    }
  if (total == 0.0) throw std::invalid_argument("class_frequencies: corpus has no valid pixels");
  for (double& c : counts) c /= total;
  return counts;
}

}  // namespace dtbs
