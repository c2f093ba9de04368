#include "dtbs/config.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dtbs {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& section, const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config [" + section + "] " + key + ": cannot parse '" + value + "' as a number");
  }
}

int64_t parse_int(const std::string& section, const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const int64_t v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config [" + section + "] " + key + ": cannot parse '" + value + "' as an integer");
  }
}

uint64_t parse_uint(const std::string& section, const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config [" + section + "] " + key + ": cannot parse '" + value +
                                "' as an unsigned integer");
  }
}

bool parse_bool(const std::string& section, const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw std::invalid_argument("config [" + section + "] " + key + ": cannot parse '" + value + "' as a boolean");
}

}  // namespace

IniDoc IniDoc::parse_string(const std::string& text) {
  IniDoc doc;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw std::invalid_argument("config line " + std::to_string(lineno) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value, got '" + line + "'");
    doc.set(section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return doc;
}

IniDoc IniDoc::parse_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config file " + path.string() + ": cannot open");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_string(ss.str());
}

void IniDoc::set(const std::string& section, const std::string& key, const std::string& value) {
  for (auto& [name, entries] : sections_) {
    if (name != section) continue;
    for (auto& [k, v] : entries)
      if (k == key) {
        v = value;
        return;
      }
    entries.emplace_back(key, value);
    return;
  }
  sections_.push_back({section, {{key, value}}});
}

const std::string* IniDoc::find(const std::string& section, const std::string& key) const {
  for (const auto& [name, entries] : sections_) {
    if (name != section) continue;
    for (const auto& [k, v] : entries)
      if (k == key) return &v;
  }
  return nullptr;
}

std::string IniDoc::serialize() const {
  std::ostringstream os;
  bool first = true;
  for (const auto& [name, entries] : sections_) {
    if (!first) os << "\n";
    first = false;
    os << '[' << name << "]\n";
    for (const auto& [k, v] : entries) os << k << " = " << v << "\n";
  }
  return os.str();
}

void IniDoc::write_file(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("config file " + path.string() + ": cannot open for writing");
  os << serialize();
  if (!os) throw std::runtime_error("config file " + path.string() + ": write failed");
}

void apply_ini(RunConfig& cfg, const IniDoc& doc) {
  for (const auto& [section, entries] : doc.sections()) {
    if (section == "meta") continue;  // manifest bookkeeping, not configuration
    if (section != "train" && section != "model" && section != "scene")
      throw std::invalid_argument("config: unknown section [" + section + "]");
    for (const auto& [key, value] : entries) {
      if (section == "train") {
        TrainConfig& t = cfg.train;
        if (key == "iterations") t.iterations = parse_int(section, key, value);
        else if (key == "batch_size") t.batch_size = static_cast<int>(parse_int(section, key, value));
        else if (key == "alpha") t.ema_decay = parse_double(section, key, value);
        else if (key == "tau") t.confidence_threshold = parse_double(section, key, value);
        else if (key == "beta_mode") {
          if (value == "fixed") t.beta_mode = TrainConfig::BetaMode::kFixed;
          else if (value == "entropy") t.beta_mode = TrainConfig::BetaMode::kEntropy;
          else throw std::invalid_argument("config [train] beta_mode: expected 'fixed' or 'entropy', got '" + value + "'");
        } else if (key == "beta") t.feedback_beta = parse_double(section, key, value);
        else if (key == "rcs_temperature") t.rcs_temperature = parse_double(section, key, value);
        else if (key == "lr_encoder") t.lr_encoder = parse_double(section, key, value);
        else if (key == "lr_decoder") t.lr_decoder = parse_double(section, key, value);
        else if (key == "weight_decay") t.weight_decay = parse_double(section, key, value);
        else if (key == "seed") t.seed = parse_uint(section, key, value);
        else if (key == "eval_interval") t.eval_interval = parse_int(section, key, value);
        else if (key == "eval_count") t.eval_count = static_cast<int>(parse_int(section, key, value));
        else if (key == "source_pool_size") t.source_pool_size = static_cast<int>(parse_int(section, key, value));
        else if (key == "gdm") t.use_gdm = parse_bool(section, key, value);
        else if (key == "tsf") t.use_tsf = parse_bool(section, key, value);
        else if (key == "jitter_strength") t.augment.jitter_strength = parse_double(section, key, value);
        else if (key == "jitter_prob") t.augment.jitter_prob = parse_double(section, key, value);
        else if (key == "blur_sigma_lo") t.augment.blur_sigma_lo = parse_double(section, key, value);
        else if (key == "blur_sigma_hi") t.augment.blur_sigma_hi = parse_double(section, key, value);
        else if (key == "blur_prob") t.augment.blur_prob = parse_double(section, key, value);
        else if (key == "quals_per_domain") t.quals_per_domain = static_cast<int>(parse_int(section, key, value));
        else if (key == "mix_dump_count") t.mix_dump_count = static_cast<int>(parse_int(section, key, value));
        else throw std::invalid_argument("config [train]: unknown key '" + key + "'");
      } else if (section == "model") {
        SegNetConfig& m = cfg.model;
        if (key == "class_count") m.class_count = static_cast<int>(parse_int(section, key, value));
        else if (key == "image_size") m.image_size = static_cast<int>(parse_int(section, key, value));
        else if (key == "encoder_width0") m.encoder_widths[0] = static_cast<int>(parse_int(section, key, value));
        else if (key == "encoder_width1") m.encoder_widths[1] = static_cast<int>(parse_int(section, key, value));
        else if (key == "decoder_width") m.decoder_width = static_cast<int>(parse_int(section, key, value));
        else throw std::invalid_argument("config [model]: unknown key '" + key + "'");
      } else {
        SceneSpec& s = cfg.scene;
        if (key == "class_count") s.class_count = static_cast<int>(parse_int(section, key, value));
        else if (key == "image_size") s.image_size = static_cast<int>(parse_int(section, key, value));
        else if (key == "source_hue_rotation") s.source_style.hue_rotation = parse_double(section, key, value);
        else if (key == "source_noise") s.source_style.noise_amplitude = parse_double(section, key, value);
        else if (key == "target_hue_rotation") s.target_style.hue_rotation = parse_double(section, key, value);
        else if (key == "target_noise") s.target_style.noise_amplitude = parse_double(section, key, value);
        else if (key == "night_brightness_lo") s.night.brightness_lo = parse_double(section, key, value);
        else if (key == "night_brightness_hi") s.night.brightness_hi = parse_double(section, key, value);
        else if (key == "night_gamma_lo") s.night.gamma_lo = parse_double(section, key, value);
        else if (key == "night_gamma_hi") s.night.gamma_hi = parse_double(section, key, value);
        else if (key == "night_blob_count_max") s.night.blob_count_max = static_cast<int>(parse_int(section, key, value));
        else if (key == "night_blob_radius_lo") s.night.blob_radius_lo = parse_double(section, key, value);
        else if (key == "night_blob_radius_hi") s.night.blob_radius_hi = parse_double(section, key, value);
        else if (key == "night_blob_strength") s.night.blob_strength = parse_double(section, key, value);
        else if (key == "night_sensor_noise") s.night.sensor_noise = parse_double(section, key, value);
        else throw std::invalid_argument("config [scene]: unknown key '" + key + "'");
      }
    }
  }
  cfg.validate();
}

RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig cfg;
  apply_ini(cfg, IniDoc::parse_file(path));
  return cfg;
}

IniDoc to_ini(const RunConfig& cfg) {
  IniDoc doc;
  const TrainConfig& t = cfg.train;
  doc.set("train", "iterations", std::to_string(t.iterations));
  doc.set("train", "batch_size", std::to_string(t.batch_size));
  doc.set("train", "alpha", fmt_g(t.ema_decay));
  doc.set("train", "tau", fmt_g(t.confidence_threshold));
  doc.set("train", "beta_mode", t.beta_mode == TrainConfig::BetaMode::kFixed ? "fixed" : "entropy");
  doc.set("train", "beta", fmt_g(t.feedback_beta));
  doc.set("train", "rcs_temperature", fmt_g(t.rcs_temperature));
  doc.set("train", "lr_encoder", fmt_g(t.lr_encoder));
  doc.set("train", "lr_decoder", fmt_g(t.lr_decoder));
  doc.set("train", "weight_decay", fmt_g(t.weight_decay));
  doc.set("train", "seed", std::to_string(t.seed));
  doc.set("train", "eval_interval", std::to_string(t.eval_interval));
  doc.set("train", "eval_count", std::to_string(t.eval_count));
  doc.set("train", "source_pool_size", std::to_string(t.source_pool_size));
  doc.set("train", "gdm", t.use_gdm ? "true" : "false");
  doc.set("train", "tsf", t.use_tsf ? "true" : "false");
  doc.set("train", "jitter_strength", fmt_g(t.augment.jitter_strength));
  doc.set("train", "jitter_prob", fmt_g(t.augment.jitter_prob));
  doc.set("train", "blur_sigma_lo", fmt_g(t.augment.blur_sigma_lo));
  doc.set("train", "blur_sigma_hi", fmt_g(t.augment.blur_sigma_hi));
  doc.set("train", "blur_prob", fmt_g(t.augment.blur_prob));
  doc.set("train", "quals_per_domain", std::to_string(t.quals_per_domain));
  doc.set("train", "mix_dump_count", std::to_string(t.mix_dump_count));

  const SegNetConfig& m = cfg.model;
  doc.set("model", "class_count", std::to_string(m.class_count));
  doc.set("model", "image_size", std::to_string(m.image_size));
  doc.set("model", "encoder_width0", std::to_string(m.encoder_widths[0]));
  doc.set("model", "encoder_width1", std::to_string(m.encoder_widths[1]));
  doc.set("model", "decoder_width", std::to_string(m.decoder_width));

  const SceneSpec& s = cfg.scene;
  doc.set("scene", "class_count", std::to_string(s.class_count));
  doc.set("scene", "image_size", std::to_string(s.image_size));
  doc.set("scene", "source_hue_rotation", fmt_g(s.source_style.hue_rotation));
  doc.set("scene", "source_noise", fmt_g(s.source_style.noise_amplitude));
  doc.set("scene", "target_hue_rotation", fmt_g(s.target_style.hue_rotation));
  doc.set("scene", "target_noise", fmt_g(s.target_style.noise_amplitude));
  doc.set("scene", "night_brightness_lo", fmt_g(s.night.brightness_lo));
  doc.set("scene", "night_brightness_hi", fmt_g(s.night.brightness_hi));
  doc.set("scene", "night_gamma_lo", fmt_g(s.night.gamma_lo));
  doc.set("scene", "night_gamma_hi", fmt_g(s.night.gamma_hi));
  doc.set("scene", "night_blob_count_max", std::to_string(s.night.blob_count_max));
  doc.set("scene", "night_blob_radius_lo", fmt_g(s.night.blob_radius_lo));
  doc.set("scene", "night_blob_radius_hi", fmt_g(s.night.blob_radius_hi));
  doc.set("scene", "night_blob_strength", fmt_g(s.night.blob_strength));
  doc.set("scene", "night_sensor_noise", fmt_g(s.night.sensor_noise));
  return doc;
}

void RunManifest::write(const std::filesystem::path& path) const {
  IniDoc doc = to_ini(config);
  doc.set("meta", "version", version);
  doc.set("meta", "out_dir", out_dir);
  doc.set("meta", "started_utc", started_utc);
  doc.set("meta", "finished_utc", finished_utc);
  doc.write_file(path);
}

std::string utc_timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace dtbs
