#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dtbs/trainer.hpp"

namespace dtbs {

inline constexpr const char* kVersionString = "dtbs 0.1.0";

/// Minimal INI document: ordered sections of ordered key=value pairs.
/// '#' and ';' start comments; whitespace around keys/values is trimmed.
class IniDoc {
 public:
  static IniDoc parse_file(const std::filesystem::path& path);
  static IniDoc parse_string(const std::string& text);

  void set(const std::string& section, const std::string& key, const std::string& value);
  const std::string* find(const std::string& section, const std::string& key) const;

  std::string serialize() const;
  void write_file(const std::filesystem::path& path) const;

  const std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>>& sections() const {
    return sections_;
  }

 private:
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> sections_;
};

/// Applies [train]/[model]/[scene] keys onto a RunConfig; unknown keys are an
/// error naming the key, unknown sections (e.g. a manifest's [meta]) are
/// skipped. Throws std::invalid_argument with the offending field.
void apply_ini(RunConfig& cfg, const IniDoc& doc);

RunConfig load_run_config(const std::filesystem::path& path);

/// Serializes every field of the resolved config, so a run can be reproduced
/// from the file alone.
IniDoc to_ini(const RunConfig& cfg);

/// run manifest = resolved config + a [meta] section (version, out_dir,
/// timestamps). Written before training starts and finalized afterwards.
struct RunManifest {
  RunConfig config;
  std::string version = kVersionString;
  std::string out_dir;
  std::string started_utc;
  std::string finished_utc;

  void write(const std::filesystem::path& path) const;
};

std::string utc_timestamp_now();

}  // namespace dtbs
