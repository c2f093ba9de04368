#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dtbs/grid.hpp"
#include "dtbs/tensor.hpp"

namespace dtbs {

enum class Domain { kSource, kTargetDay, kTargetNight };

std::string domain_name(Domain d);

/// Appearance of one domain: palette hue rotation (radians, about the gray
/// axis) and per-pixel texture noise amplitude.
struct DomainStyle {
  double hue_rotation = 0.0;
  double noise_amplitude = 0.05;
};

/// Day-to-night transform applied on top of the target style: global
/// darkening, gamma compression, bright local overexposure blobs, and
/// post-darkening sensor noise (low-light SNR).
struct NightParams {
  double brightness_lo = 0.26;
  double brightness_hi = 0.36;
  double gamma_lo = 1.05;
  double gamma_hi = 1.25;
  int blob_count_max = 3;
  double blob_radius_lo = 3.0;
  double blob_radius_hi = 7.0;
  double blob_strength = 0.8;
  double sensor_noise = 0.06;
};

struct SceneSpec {
  int class_count = 8;  // road, sidewalk, building, sky, vegetation, car, person, pole
  int image_size = 64;
  // Expected long-run pixel share per class; person/pole are long-tail.
  std::array<double, 8> class_frequency_profile{0.216, 0.061, 0.234, 0.246, 0.221, 0.019, 0.0015, 0.0015};
  DomainStyle source_style{0.0, 0.05};
  DomainStyle target_style{0.95, 0.07};
  NightParams night;

  void validate() const;  // throws std::invalid_argument
};

struct DomainSample {
  Tensor image;     // (3, H, W) in [0,1]
  GridI32 labels;   // class ids; hidden from the trainer for target domains
  Domain domain = Domain::kSource;
  uint64_t seed = 0;
};

const std::vector<std::string>& scene_class_names();

/// Scene geometry: a label map shared by every rendering of the scene.
GridI32 generate_scene(const SceneSpec& spec, uint64_t seed);

/// Renders a layout in one domain's appearance. Deterministic in
/// (layout, domain, spec, render_seed); day/night renders of one layout keep
/// identical labels.
DomainSample render(const GridI32& layout, Domain domain, const SceneSpec& spec, uint64_t render_seed);

/// Layout + render from a single sample seed (render stream varies per domain,
/// layout does not, so paired day/night evaluation sets can share geometry).
DomainSample make_sample(const SceneSpec& spec, Domain domain, uint64_t sample_seed);

/// Pixel share per class over the valid (non-IGNORE) pixels of a corpus.
std::vector<double> class_frequencies(std::span<const DomainSample> corpus);

/// Writes `count` samples of one domain as PPM images and PGM label maps
/// under `dir`, plus a manifest.txt line per sample: <file> <domain> <seed>.
void export_corpus(const SceneSpec& spec, Domain domain, int count, uint64_t seed,
                   const std::filesystem::path& dir);

}  // namespace dtbs
