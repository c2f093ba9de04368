#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dtbs/config.hpp"

using namespace dtbs;
namespace fs = std::filesystem;

TEST_CASE("ini parsing: sections, comments, trimming") {
  IniDoc doc = IniDoc::parse_string(
      "# a comment\n"
      "[train]\n"
      "iterations = 42   # trailing comment\n"
      "  beta_mode =  entropy\n"
      "\n"
      "[scene]\n"
      "target_noise = 0.25\n");
  CHECK(*doc.find("train", "iterations") == "42");
  CHECK(*doc.find("train", "beta_mode") == "entropy");
  CHECK(*doc.find("scene", "target_noise") == "0.25");
  CHECK(doc.find("train", "missing") == nullptr);
}

TEST_CASE("ini parse errors carry line context") {
  CHECK_THROWS_AS(IniDoc::parse_string("[train\nx = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(IniDoc::parse_string("[train]\nnot a pair\n"), std::invalid_argument);
}

TEST_CASE("run config round-trips through ini text") {
  RunConfig cfg;
  cfg.train.iterations = 123;
  cfg.train.seed = 999;
  cfg.train.beta_mode = TrainConfig::BetaMode::kEntropy;
  cfg.train.feedback_beta = 0.65;
  cfg.train.use_gdm = false;
  cfg.scene.target_style.hue_rotation = 1.25;
  cfg.model.encoder_widths = {8, 16};

  RunConfig back;
  apply_ini(back, IniDoc::parse_string(to_ini(cfg).serialize()));
  CHECK(back.train.iterations == 123);
  CHECK(back.train.seed == 999);
  CHECK(back.train.beta_mode == TrainConfig::BetaMode::kEntropy);
  CHECK(back.train.feedback_beta == 0.65);
  CHECK(back.train.use_gdm == false);
  CHECK(back.scene.target_style.hue_rotation == 1.25);
}

TEST_CASE("unknown keys are field-level errors; [meta] is tolerated") {
  RunConfig cfg;
  CHECK_THROWS_WITH_AS(apply_ini(cfg, IniDoc::parse_string("[train]\nbogus = 1\n")), doctest::Contains("bogus"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(apply_ini(cfg, IniDoc::parse_string("[nope]\nx = 1\n")), doctest::Contains("nope"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(apply_ini(cfg, IniDoc::parse_string("[train]\niterations = soon\n")),
                       doctest::Contains("iterations"), std::invalid_argument);
  // a manifest's own bookkeeping must load cleanly as a config
  apply_ini(cfg, IniDoc::parse_string("[meta]\nversion = whatever\n[train]\niterations = 7\n"));
  CHECK(cfg.train.iterations == 7);
}

TEST_CASE("invalid values are rejected at validation") {
  RunConfig cfg;
  CHECK_THROWS_AS(apply_ini(cfg, IniDoc::parse_string("[train]\nalpha = 1.0\n")), std::invalid_argument);
  CHECK_THROWS_AS(apply_ini(cfg, IniDoc::parse_string("[train]\ntau = 0\n")), std::invalid_argument);
  CHECK_THROWS_AS(apply_ini(cfg, IniDoc::parse_string("[train]\nbeta = 1.5\n")), std::invalid_argument);
  CHECK_THROWS_AS(apply_ini(cfg, IniDoc::parse_string("[model]\nimage_size = 30\n")), std::invalid_argument);
}

TEST_CASE("manifest reloads as the identical config") {
  RunConfig cfg;
  cfg.train.iterations = 55;
  cfg.train.seed = 4242;
  cfg.train.feedback_beta = 0.75;

  RunManifest manifest;
  manifest.config = cfg;
  manifest.out_dir = "/tmp/somewhere";
  manifest.started_utc = utc_timestamp_now();
  const fs::path path = fs::temp_directory_path() / "dtbs_manifest_test.ini";
  manifest.write(path);

  RunConfig back = load_run_config(path);
  CHECK(to_ini(back).serialize() == to_ini(cfg).serialize());
  fs::remove(path);
}
