#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "dtbs/image_io.hpp"
#include "dtbs/scenegen.hpp"

using namespace dtbs;

namespace {

double mean_intensity(const Tensor& img) {
  double acc = 0.0;
  for (float v : img.data()) acc += v;
  return acc / static_cast<double>(img.data().size());
}

// Mean channel share (r, g, b each divided by r+g+b): a hue statistic that
// global brightness jitter cannot move.
std::array<double, 3> channel_shares(const Tensor& img) {
  const size_t plane = img.data().size() / 3;
  std::array<double, 3> m{};
  for (size_t i = 0; i < plane; ++i) {
    const double r = img.data()[i], g = img.data()[plane + i], b = img.data()[2 * plane + i];
    const double total = std::max(r + g + b, 1e-9);
    m[0] += r / total;
    m[1] += g / total;
    m[2] += b / total;
  }
  for (double& v : m) v /= static_cast<double>(plane);
  return m;
}

}  // namespace

TEST_CASE("layouts are deterministic per seed and contain only valid ids") {
  SceneSpec spec;
  GridI32 a = generate_scene(spec, 77);
  GridI32 b = generate_scene(spec, 77);
  CHECK(a == b);
  for (int32_t v : a.v) {
    CHECK(v >= 0);
    CHECK(v < spec.class_count);
  }
}

TEST_CASE("100-scene corpus covers all classes, rare classes stay rare") {
  SceneSpec spec;
  std::vector<DomainSample> corpus;
  int scenes_with_person = 0, scenes_with_pole = 0;
  for (int i = 0; i < 100; ++i) {
    corpus.push_back(make_sample(spec, Domain::kSource, 1000 + static_cast<uint64_t>(i)));
    std::set<int32_t> present(corpus.back().labels.v.begin(), corpus.back().labels.v.end());
    if (present.count(6)) ++scenes_with_person;
    if (present.count(7)) ++scenes_with_pole;
  }

  const auto freq = class_frequencies(corpus);
  REQUIRE(freq.size() == 8);
  for (int c = 0; c < 8; ++c) {
    CAPTURE(c);
    CHECK(freq[static_cast<size_t>(c)] > 0.0);  // every class appears somewhere
  }
  CHECK(scenes_with_person < 30);
  CHECK(scenes_with_pole < 30);
  CHECK(scenes_with_person > 0);
  CHECK(scenes_with_pole > 0);

  // counting oracle: long-tail pixel share far below the frequent classes
  const double rare = freq[6] + freq[7];
  for (int c = 0; c < 6; ++c) CHECK(freq[static_cast<size_t>(c)] > rare);

  // generator self-check against the documented profile
  for (int c = 0; c < 8; ++c) {
    CAPTURE(c);
    CHECK(std::abs(freq[static_cast<size_t>(c)] - spec.class_frequency_profile[static_cast<size_t>(c)]) < 0.05);
  }
}

TEST_CASE("class_frequencies closed-form cases") {
  SceneSpec spec;
  DomainSample s1;
  s1.labels = GridI32(2, 2, 0);
  DomainSample s2;
  s2.labels = GridI32(2, 2, 0);
  std::vector<DomainSample> corpus = {s1};
  auto f = class_frequencies(corpus);
  CHECK(f[0] == doctest::Approx(1.0));

  s2.labels.at(0, 0) = 1;
  s2.labels.at(0, 1) = 1;
  s2.labels.at(1, 0) = 1;
  s2.labels.at(1, 1) = 1;
  corpus = {s1, s2};
  f = class_frequencies(corpus);
  CHECK(f[0] == doctest::Approx(0.5));
  CHECK(f[1] == doctest::Approx(0.5));

  std::vector<DomainSample> empty;
  CHECK_THROWS_AS(class_frequencies(empty), std::invalid_argument);
}

TEST_CASE("night renders are darker than day renders of the same layout") {
  SceneSpec spec;
  for (uint64_t seed : {5u, 6u, 7u, 8u}) {
    GridI32 layout = generate_scene(spec, seed);
    DomainSample day = render(layout, Domain::kTargetDay, spec, seed * 13 + 1);
    DomainSample night = render(layout, Domain::kTargetNight, spec, seed * 13 + 2);
    CHECK(mean_intensity(night.image) < mean_intensity(day.image));
    CHECK(day.labels == night.labels);  // same layout, same labels
  }
}

TEST_CASE("day/night pairs from make_sample share label maps") {
  SceneSpec spec;
  for (uint64_t seed : {100u, 101u, 102u}) {
    DomainSample day = make_sample(spec, Domain::kTargetDay, seed);
    DomainSample night = make_sample(spec, Domain::kTargetNight, seed);
    CHECK(day.labels == night.labels);
    bool identical_pixels = std::memcmp(day.image.data().data(), night.image.data().data(),
                                        day.image.data().size() * 4) == 0;
    CHECK_FALSE(identical_pixels);
  }
}

TEST_CASE("rendering is deterministic under (seed, spec)") {
  SceneSpec spec;
  DomainSample a = make_sample(spec, Domain::kTargetNight, 31337);
  DomainSample b = make_sample(spec, Domain::kTargetNight, 31337);
  CHECK(std::memcmp(a.image.data().data(), b.image.data().data(), a.image.data().size() * 4) == 0);
  CHECK(a.labels == b.labels);
}

TEST_CASE("source and target-day palettes differ beyond render noise") {
  // histogram-distance oracle: per-channel hue-share distance between paired
  // S/T_d renders of one layout, against the S/S re-render noise floor.
  SceneSpec spec;
  double cross_domain = 0.0, noise_floor = 0.0;
  const int pairs = 50;
  for (int i = 0; i < pairs; ++i) {
    GridI32 layout = generate_scene(spec, 9000 + static_cast<uint64_t>(i));
    DomainSample s1 = render(layout, Domain::kSource, spec, 2 * i);
    DomainSample s2 = render(layout, Domain::kSource, spec, 2 * i + 1);
    DomainSample td = render(layout, Domain::kTargetDay, spec, 2 * i);
    const auto ms1 = channel_shares(s1.image), ms2 = channel_shares(s2.image), mtd = channel_shares(td.image);
    for (int c = 0; c < 3; ++c) {
      cross_domain += std::abs(ms1[static_cast<size_t>(c)] - mtd[static_cast<size_t>(c)]);
      noise_floor += std::abs(ms1[static_cast<size_t>(c)] - ms2[static_cast<size_t>(c)]);
    }
  }
  CHECK(cross_domain > 2.0 * noise_floor);
}

TEST_CASE("corpus export writes images, labels and a manifest") {
  SceneSpec spec;
  spec.image_size = 16;
  const auto dir = std::filesystem::temp_directory_path() / "dtbs_export_test";
  std::filesystem::remove_all(dir);
  export_corpus(spec, Domain::kTargetNight, 3, 42, dir);

  CHECK(std::filesystem::exists(dir / "target-night_0000.ppm"));
  CHECK(std::filesystem::exists(dir / "target-night_0002_labels.pgm"));
  GridI32 labels = read_pgm(dir / "target-night_0001_labels.pgm");
  CHECK(labels.h == 16);
  for (int32_t v : labels.v) CHECK(v < spec.class_count);

  std::ifstream manifest(dir / "manifest.txt");
  std::string file, domain, line;
  uint64_t seed = 0;
  int lines = 0;
  while (manifest >> file >> domain >> seed) {
    CHECK(domain == "target-night");
    ++lines;
  }
  CHECK(lines == 3);
  std::filesystem::remove_all(dir);
}

TEST_CASE("spec validation rejects bad illumination settings") {
  SceneSpec spec;
  spec.night.brightness_hi = 1.2;  // night may not be brighter than day
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = SceneSpec{};
  spec.class_frequency_profile[0] += 0.5;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}
