#pragma once

// On-disk scene collections: a line-delimited manifest of
// {"id", "rgb", "ndsm", "split"} records next to the raster files.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsmsr/data/alignment.hpp"
#include "dsmsr/data/raster.hpp"
#include "dsmsr/data/raster_io.hpp"
#include "dsmsr/error.hpp"

namespace dsmsr {

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + s + "'");
}

inline constexpr const char* kManifestName = "manifest.jsonl";

struct ManifestEntry {
  std::string id;
  std::string rgb;   // relative to the manifest directory
  std::string ndsm;
  Split split = Split::train;
  bool operator==(const ManifestEntry&) const = default;
};

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Orders ids by hash and cuts the order 80/10/10. Depends only on the id set.
inline std::map<std::string, Split> assign_splits(std::vector<std::string> ids) {
  std::sort(ids.begin(), ids.end(), [](const std::string& a, const std::string& b) {
    const auto ha = fnv1a(a), hb = fnv1a(b);
    return ha != hb ? ha < hb : a < b;
  });
  const auto n = static_cast<double>(ids.size());
  const auto n_train = static_cast<std::size_t>(std::lround(0.8 * n));
  const auto n_val = std::min(ids.size() - n_train, static_cast<std::size_t>(std::lround(0.1 * n)));
  std::map<std::string, Split> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out[ids[i]] = i < n_train ? Split::train : i < n_train + n_val ? Split::val : Split::test;
  }
  return out;
}

inline void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write manifest '" + path.string() + "'");
  for (const auto& e : entries) {
    nlohmann::json j;
    j["id"] = e.id;
    j["rgb"] = e.rgb;
    j["ndsm"] = e.ndsm;
    j["split"] = to_string(e.split);
    os << j.dump() << '\n';
  }
  if (!os) throw DataError("failed writing manifest '" + path.string() + "'");
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read manifest '" + path.string() + "'");
  std::vector<ManifestEntry> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("id").get<std::string>(), j.at("rgb").get<std::string>(), j.at("ndsm").get<std::string>(),
                     parse_split(j.at("split").get<std::string>())});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

struct Dataset {
  std::vector<ScenePair> scenes;
  std::vector<Split> splits;  // parallel to scenes

  std::vector<const ScenePair*> subset(Split s) const {
    std::vector<const ScenePair*> out;
    for (std::size_t i = 0; i < scenes.size(); ++i)
      if (splits[i] == s) out.push_back(&scenes[i]);
    return out;
  }
  std::vector<const ScenePair*> train() const { return subset(Split::train); }
  std::vector<const ScenePair*> val() const { return subset(Split::val); }
  std::vector<const ScenePair*> test() const { return subset(Split::test); }
  std::size_t size() const { return scenes.size(); }
};

// Loads every manifest entry and checks each pair's alignment.
inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto entries = read_manifest(dir / kManifestName);
  if (entries.empty()) throw DataError("dataset '" + dir.string() + "' lists no scenes");
  Dataset ds;
  for (const auto& e : entries) {
    ScenePair p{load_raster(dir / e.rgb), load_raster(dir / e.ndsm), e.id};
    const auto rep = validate_alignment(p.rgb, p.ndsm, 1);
    if (!rep.ok) throw DataError("scene " + e.id + " is misaligned: " + rep.reason);
    p.check_invariants();
    ds.scenes.push_back(std::move(p));
    ds.splits.push_back(e.split);
  }
  return ds;
}

// In-memory dataset with hash splits, as produced by the synth command.
inline Dataset make_dataset(std::vector<ScenePair> scenes) {
  std::vector<std::string> ids;
  for (const auto& s : scenes) ids.push_back(s.id);
  const auto split = assign_splits(ids);
  Dataset ds;
  for (auto& s : scenes) {
    ds.splits.push_back(split.at(s.id));
    ds.scenes.push_back(std::move(s));
  }
  return ds;
}

}  // namespace dsmsr
