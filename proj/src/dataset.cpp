#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>

#include "mda/error.hpp"
#include "mda/image.hpp"

namespace fs = std::filesystem;

namespace mda {

namespace {

bool is_image_file(const fs::path& p) {
  static const std::set<std::string> kExt{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return kExt.count(ext) > 0;
}

std::map<std::string, fs::path> index_by_stem(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) out.emplace(e.path().stem().string(), e.path());
  return out;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void join(DatasetManifest& m, const std::map<std::string, fs::path>& ir, const std::map<std::string, fs::path>& vis) {
  for (const auto& [id, path] : ir) {
    if (auto it = vis.find(id); it != vis.end())
      m.entries.push_back({id, path, it->second});
    else
      m.warnings.push_back("unmatched infrared file: " + path.string());
  }
  for (const auto& [id, path] : vis)
    if (!ir.count(id)) m.warnings.push_back("unmatched visible file: " + path.string());
}

}  // namespace

DatasetManifest scan_dataset(const fs::path& root, DatasetLayout layout) {
  MDA_REQUIRE(fs::is_directory(root), PreconditionError, "dataset root does not exist: " + root.string());
  DatasetManifest m;
  m.root = root;
  if (layout == DatasetLayout::PairedDirs) {
    join(m, index_by_stem(root / "ir"), index_by_stem(root / "vis"));
  } else {
    std::map<std::string, fs::path> ir, vis;
    for (const auto& e : fs::directory_iterator(root)) {
      if (!e.is_regular_file() || !is_image_file(e.path())) continue;
      const std::string stem = e.path().stem().string();
      if (ends_with(stem, "_ir"))
        ir.emplace(stem.substr(0, stem.size() - 3), e.path());
      else if (ends_with(stem, "_vis"))
        vis.emplace(stem.substr(0, stem.size() - 4), e.path());
    }
    join(m, ir, vis);
  }
  std::sort(m.entries.begin(), m.entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (const auto& w : m.warnings) spdlog::warn("{}", w);
  if (m.entries.empty()) throw EmptyManifestError("no infrared/visible pairs found under " + root.string());
  return m;
}

void write_manifest_jsonl(const DatasetManifest& m, const fs::path& path) {
  std::ofstream os(path);
  MDA_REQUIRE(os.good(), Error, "cannot write manifest " + path.string());
  for (const auto& e : m.entries) {
    nlohmann::json j{{"id", e.id}, {"ir", e.ir.string()}, {"vis", e.vis.string()}};
    os << j.dump() << '\n';
  }
}

DatasetManifest read_manifest_jsonl(const fs::path& path) {
  std::ifstream is(path);
  MDA_REQUIRE(is.good(), PreconditionError, "cannot read manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      throw PreconditionError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
    auto resolve = [&](const std::string& s) {
      fs::path p(s);
      return p.is_absolute() ? p : m.root / p;
    };
    m.entries.push_back({j.at("id").get<std::string>(), resolve(j.at("ir").get<std::string>()),
                         resolve(j.at("vis").get<std::string>())});
  }
  if (m.entries.empty()) throw EmptyManifestError("manifest has no entries: " + path.string());
  return m;
}

void validate_manifest(const DatasetManifest& m) {
  for (const auto& e : m.entries) {
    MDA_REQUIRE(fs::exists(e.ir), PreconditionError, "missing infrared file for '" + e.id + "': " + e.ir.string());
    MDA_REQUIRE(fs::exists(e.vis), PreconditionError, "missing visible file for '" + e.id + "': " + e.vis.string());
    (void)load_pair(e.ir, e.vis, e.id);
  }
}

}  // namespace mda
