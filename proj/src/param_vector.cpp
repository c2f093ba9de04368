#include "dtbs/param_vector.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dtbs {

namespace {

constexpr char kMagic[4] = {'D', 'T', 'B', 'S'};
constexpr uint32_t kFormatVersion = 1;

std::string section_map_str(const ParamVector& pv) {
  std::ostringstream os;
  os << '{';
  for (size_t i = 0; i < pv.sections().size(); ++i) {
    if (i) os << ", ";
    os << pv.sections()[i].name << ':' << pv.sections()[i].length;
  }
  os << '}';
  return os.str();
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::filesystem::path& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint " + path.string() + ": truncated file");
  return v;
}

}  // namespace

ParamVector ParamVector::with_sections(const std::vector<std::pair<std::string, int64_t>>& layout) {
  ParamVector pv;
  int64_t offset = 0;
  for (const auto& [name, length] : layout) {
    if (length <= 0) throw std::invalid_argument("ParamVector: section '" + name + "' has non-positive length");
    for (const auto& s : pv.sections_)
      if (s.name == name) throw std::invalid_argument("ParamVector: duplicate section '" + name + "'");
    pv.sections_.push_back({name, offset, length});
    offset += length;
  }
  pv.data_.assign(static_cast<size_t>(offset), 0.0f);
  return pv;
}

ParamVector ParamVector::zeros_like(const ParamVector& other) {
  ParamVector pv = other;
  std::fill(pv.data_.begin(), pv.data_.end(), 0.0f);
  return pv;
}

bool ParamVector::compatible_with(const ParamVector& other) const { return sections_ == other.sections_; }

bool ParamVector::has_section(std::string_view name) const {
  for (const auto& s : sections_)
    if (s.name == name) return true;
  return false;
}

std::span<float> ParamVector::section(std::string_view name) {
  for (const auto& s : sections_)
    if (s.name == name) return std::span<float>(data_).subspan(s.offset, s.length);
  throw std::out_of_range("ParamVector: no section '" + std::string(name) + "' in " + section_map_str(*this));
}

std::span<const float> ParamVector::section(std::string_view name) const {
  for (const auto& s : sections_)
    if (s.name == name) return std::span<const float>(data_).subspan(s.offset, s.length);
  throw std::out_of_range("ParamVector: no section '" + std::string(name) + "' in " + section_map_str(*this));
}

void require_compatible(const ParamVector& a, const ParamVector& b, const char* what) {
  if (!a.compatible_with(b))
    throw std::invalid_argument(std::string(what) + ": incompatible section maps " + section_map_str(a) + " vs " +
                                section_map_str(b));
}

void save_checkpoint(const std::filesystem::path& path, const ParamVector& pv) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint " + path.string() + ": cannot open for writing");
  os.write(kMagic, 4);
  write_pod(os, kFormatVersion);
  write_pod(os, static_cast<uint32_t>(pv.sections().size()));
  for (const auto& s : pv.sections()) {
    write_pod(os, static_cast<uint32_t>(s.name.size()));
    os.write(s.name.data(), static_cast<std::streamsize>(s.name.size()));
    write_pod(os, static_cast<uint64_t>(s.length));
  }
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(pv.values().data()), static_cast<std::streamsize>(pv.size()) * 4);
  if (!os) throw std::runtime_error("checkpoint " + path.string() + ": write failed");
}

ParamVector load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint " + path.string() + ": cannot open");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint " + path.string() + ": bad magic (not a DTBS checkpoint)");
  const auto version = read_pod<uint32_t>(is, path);
  if (version != kFormatVersion)
    throw std::runtime_error("checkpoint " + path.string() + ": unsupported format version " + std::to_string(version));
  const auto count = read_pod<uint32_t>(is, path);
  std::vector<std::pair<std::string, int64_t>> layout;
  layout.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<uint32_t>(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw std::runtime_error("checkpoint " + path.string() + ": truncated section table");
    const auto elems = read_pod<uint64_t>(is, path);
    layout.emplace_back(std::move(name), static_cast<int64_t>(elems));
  }
  ParamVector pv = ParamVector::with_sections(layout);
  is.read(reinterpret_cast<char*>(pv.values().data()), static_cast<std::streamsize>(pv.size()) * 4);
  if (!is) throw std::runtime_error("checkpoint " + path.string() + ": truncated data");
  return pv;
}

}  // namespace dtbs
