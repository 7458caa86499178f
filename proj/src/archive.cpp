#include "mda/archive.hpp"

#include <bit>
#include <boost/crc.hpp>
#include <cstring>
#include <fstream>

#include "mda/error.hpp"

namespace fs = std::filesystem;

namespace mda {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {
constexpr char kMagic[8] = {'M', 'D', 'A', 'A', 'R', 'C', 'H', '\n'};
}

bool Archive::has(const std::string& name) const {
  for (const auto& [n, t] : arrays)
    if (n == name) return true;
  return false;
}

const Tensor& Archive::get(const std::string& name) const {
  for (const auto& [n, t] : arrays)
    if (n == name) return t;
  throw IntegrityError("archive has no array named '" + name + "'");
}

void Archive::put(std::string name, Tensor t) {
  for (auto& [n, existing] : arrays)
    if (n == name) {
      existing = std::move(t);
      return;
    }
  arrays.emplace_back(std::move(name), std::move(t));
}

std::uint32_t crc32_of(std::span<const double> values) {
  boost::crc_32_type crc;
  crc.process_bytes(values.data(), values.size_bytes());
  return crc.checksum();
}

void save_archive(const fs::path& path, const Archive& archive) {
  nlohmann::json manifest;
  manifest["format_version"] = kArchiveFormatVersion;
  manifest["kind"] = archive.kind;
  manifest["meta"] = archive.meta;
  nlohmann::json list = nlohmann::json::array();
  boost::crc_32_type total;
  std::size_t offset = 0;
  for (const auto& [name, t] : archive.arrays) {
    list.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.size()},
                    {"crc32", crc32_of(t.span())}});
    total.process_bytes(t.data(), t.size() * sizeof(double));
    offset += t.size();
  }
  manifest["arrays"] = std::move(list);
  manifest["payload_count"] = offset;
  manifest["checksum"] = total.checksum();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const std::string text = manifest.dump();
  std::ofstream os(path, std::ios::binary);
  MDA_REQUIRE(os.good(), Error, "cannot write archive " + path.string());
  const std::uint64_t len = text.size();
  os.write(kMagic, sizeof kMagic);
  os.write(reinterpret_cast<const char*>(&len), sizeof len);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : archive.arrays)
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  MDA_REQUIRE(os.good(), Error, "short write to archive " + path.string());
}

Archive load_archive(const fs::path& path, const std::string& expected_kind) {
  std::ifstream is(path, std::ios::binary);
  MDA_REQUIRE(is.good(), PreconditionError, "cannot open archive " + path.string());
  is.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(is.tellg());
  is.seekg(0);

  char magic[8];
  std::uint64_t len = 0;
  if (file_size < sizeof magic + sizeof len || !is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, 8) != 0)
    throw IntegrityError("not an archive (bad magic): " + path.string());
  is.read(reinterpret_cast<char*>(&len), sizeof len);
  if (len > file_size - sizeof magic - sizeof len) throw IntegrityError("truncated archive manifest: " + path.string());
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw IntegrityError("corrupted archive manifest in " + path.string() + ": " + ex.what());
  }
  const int version = manifest.value("format_version", -1);
  if (version != kArchiveFormatVersion)
    throw VersionError("archive format version " + std::to_string(version) + " in " + path.string() + ", expected " +
                       std::to_string(kArchiveFormatVersion));

  Archive a;
  a.kind = manifest.value("kind", "");
  if (!expected_kind.empty() && a.kind != expected_kind)
    throw IntegrityError("archive " + path.string() + " has kind '" + a.kind + "', expected '" + expected_kind + "'");
  a.meta = manifest.value("meta", nlohmann::json::object());

  const std::uint64_t payload_count = manifest.at("payload_count").get<std::uint64_t>();
  const std::uint64_t payload_bytes = payload_count * sizeof(double);
  const std::uint64_t header = sizeof magic + sizeof len + len;
  if (file_size - header != payload_bytes)
    throw IntegrityError("archive payload size mismatch (truncated or padded): " + path.string());
  std::vector<double> payload(payload_count);
  is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload_bytes));
  MDA_REQUIRE(is.good() || payload_count == 0, IntegrityError, "short read in archive " + path.string());

  if (crc32_of(payload) != manifest.at("checksum").get<std::uint32_t>())
    throw IntegrityError("archive checksum mismatch: " + path.string());

  for (const auto& e : manifest.at("arrays")) {
    const auto offset = e.at("offset").get<std::size_t>();
    const auto count = e.at("count").get<std::size_t>();
    Shape shape = e.at("shape").get<Shape>();
    if (offset + count > payload.size() || shape_numel(shape) != count)
      throw IntegrityError("archive entry '" + e.at("name").get<std::string>() + "' out of range");
    std::vector<double> data(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                             payload.begin() + static_cast<std::ptrdiff_t>(offset + count));
    if (crc32_of(data) != e.at("crc32").get<std::uint32_t>())
      throw IntegrityError("checksum mismatch for array '" + e.at("name").get<std::string>() + "'");
    a.arrays.emplace_back(e.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data)));
  }
  return a;
}

}  // namespace mda
