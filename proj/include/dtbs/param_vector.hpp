#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dtbs {

/// Flat float32 parameter buffer carved into named, contiguous,
/// non-overlapping sections that cover it exactly. The unit of all weight
/// algebra (EMA updates, teacher feedback, optimizer moments).
class ParamVector {
 public:
  struct Section {
    std::string name;
    int64_t offset = 0;
    int64_t length = 0;
    bool operator==(const Section&) const = default;
  };

  ParamVector() = default;

  /// Builds a zero-filled vector with the given (name, length) layout.
  static ParamVector with_sections(const std::vector<std::pair<std::string, int64_t>>& layout);
  static ParamVector zeros_like(const ParamVector& other);

  /// True iff section maps are identical (names, order, sizes).
  bool compatible_with(const ParamVector& other) const;

  const std::vector<Section>& sections() const { return sections_; }
  bool has_section(std::string_view name) const;
  std::span<float> section(std::string_view name);
  std::span<const float> section(std::string_view name) const;

  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }

  bool operator==(const ParamVector& o) const { return sections_ == o.sections_ && data_ == o.data_; }

 private:
  std::vector<Section> sections_;
  std::vector<float> data_;
};

/// Throws std::invalid_argument naming both section maps when incompatible.
void require_compatible(const ParamVector& a, const ParamVector& b, const char* what);

// Checkpoint file: magic "DTBS", u32 format version, u32 section count,
// per section (u32 name length, name bytes, u64 element count), then all
// section data concatenated as little-endian float32. Round-trips bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const ParamVector& pv);
ParamVector load_checkpoint(const std::filesystem::path& path);

}  // namespace dtbs
