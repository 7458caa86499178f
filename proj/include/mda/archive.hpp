#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mda/tensor.hpp"

namespace mda {

inline constexpr int kArchiveFormatVersion = 1;

/// Named-array container used for backbone weights, model parameters and
/// training checkpoints.
///
/// On disk: 8-byte magic "MDAARCH\n", little-endian u64 manifest length, the
/// JSON manifest, then every array as contiguous little-endian float64. The
/// manifest lists `{name, shape, offset, count, crc32}` per array plus a
/// CRC-32 of the whole payload.
struct Archive {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> arrays;

  bool has(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  void put(std::string name, Tensor t);
};

std::uint32_t crc32_of(std::span<const double> values);

void save_archive(const std::filesystem::path& path, const Archive& archive);

/// Throws IntegrityError on truncation, bad magic or checksum mismatch, and
/// VersionError when the format version differs. When `expected_kind` is
/// non-empty the archive kind must match.
Archive load_archive(const std::filesystem::path& path, const std::string& expected_kind = "");

}  // namespace mda
