#pragma once

// On-disk patch store:
//   <dir>/patches/<patch_id>.bin   raw 8-bit pixels, CHW order (whitened on load)
//   <dir>/patches/<patch_id>.json  sidecar (patch_id, label, view, source_image_id, grid_position, ...)
//   <dir>/split.json               seed, view, classes, patch ids per split
//   <dir>/sources.json             one entry per source image

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gemini/common.hpp"
#include "gemini/datapipe.hpp"

namespace gemini::data {

using nlohmann::json;

inline json patch_sidecar(const PatchRecord& p) {
  return {{"patch_id", p.patch_id},
          {"label", {{"name", p.label.name}, {"index", p.label.index}}},
          {"view", to_string(p.view)},
          {"source_image_id", p.source_image_id},
          {"grid_position", {{"row", p.grid_position.row}, {"col", p.grid_position.col}}},
          {"origin", {{"y", p.origin_y}, {"x", p.origin_x}}},
          {"shape", {p.values.channels(), p.values.height(), p.values.width()}},
          {"dtype", "uint8"},
          {"layout", "CHW"},
          {"whiten_on_load", true}};
}

/// `p` must hold unwhitened pixel values (extract with whiten = false).
inline void write_patch(const std::filesystem::path& patch_dir, const PatchRecord& p) {
  std::vector<std::uint8_t> raw(p.values.size());
  const auto vals = p.values.values();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const float v = vals[i];
    if (!(v >= 0.0f && v <= 255.0f) || v != std::floor(v)) {
      throw InvalidInputError("patch " + p.patch_id + " does not hold raw 8-bit pixel values");
    }
    raw[i] = static_cast<std::uint8_t>(v);
  }
  std::ofstream bin(patch_dir / (p.patch_id + ".bin"), std::ios::binary);
  bin.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!bin) throw Error("failed to write patch " + p.patch_id);
  std::ofstream(patch_dir / (p.patch_id + ".json")) << patch_sidecar(p).dump(2) << "\n";
}

inline PatchRecord read_patch(const std::filesystem::path& patch_dir, const std::string& patch_id, bool whiten = true) {
  std::ifstream side(patch_dir / (patch_id + ".json"));
  if (!side) throw ConfigError("missing patch sidecar for " + patch_id);
  const json j = json::parse(side);
  PatchRecord p;
  p.patch_id = j.at("patch_id").get<std::string>();
  p.label = {j.at("label").at("name").get<std::string>(), j.at("label").at("index").get<int>()};
  p.view = parse_view(j.at("view").get<std::string>());
  p.source_image_id = j.at("source_image_id").get<std::string>();
  p.grid_position = {j.at("grid_position").at("row").get<int>(), j.at("grid_position").at("col").get<int>()};
  p.origin_y = j.at("origin").at("y").get<int>();
  p.origin_x = j.at("origin").at("x").get<int>();
  const auto shape = j.at("shape").get<std::vector<int>>();
  if (shape.size() != 3) throw ConfigError("patch " + patch_id + " has a malformed shape");
  Tensor<float> values(shape[0], shape[1], shape[2]);
  std::vector<std::uint8_t> raw(values.size());
  std::ifstream bin(patch_dir / (patch_id + ".bin"), std::ios::binary);
  bin.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!bin) throw ConfigError("truncated patch data for " + patch_id);
  auto dst = values.values();
  for (std::size_t i = 0; i < raw.size(); ++i) dst[i] = static_cast<float>(raw[i]);
  p.values = whiten ? data::whiten(values) : std::move(values);
  return p;
}

inline json split_manifest(const std::vector<std::string>& train_ids, const std::vector<std::string>& test_ids,
                           std::uint64_t seed, View view, const ClassSet& classes) {
  return {{"format_version", 1}, {"seed", seed},          {"view", to_string(view)},
          {"classes", classes.names()}, {"train", train_ids}, {"test", test_ids}};
}

inline json split_manifest(const DatasetSplit& split, View view, const ClassSet& classes) {
  std::vector<std::string> train, test;
  for (const auto& p : split.train) train.push_back(p.patch_id);
  for (const auto& p : split.test) test.push_back(p.patch_id);
  return split_manifest(train, test, split.seed, view, classes);
}

struct SourceEntry {
  std::string image_id;
  ClassLabel label;
  View view = View::SUR;
  int width = 0;
  int height = 0;
  std::string split;
};

inline void write_sources(const std::filesystem::path& dir, const std::vector<SourceEntry>& sources) {
  json src = json::array();
  for (const auto& s : sources) {
    src.push_back({{"image_id", s.image_id},
                   {"label", s.label.name},
                   {"view", to_string(s.view)},
                   {"width", s.width},
                   {"height", s.height},
                   {"split", s.split}});
  }
  std::ofstream(dir / "sources.json") << src.dump(2) << "\n";
}

inline void write_patch_store(const std::filesystem::path& dir, const DatasetSplit& split, View view,
                              const ClassSet& classes, const std::vector<SourceEntry>& sources) {
  const auto patch_dir = dir / "patches";
  std::filesystem::create_directories(patch_dir);
  for (const auto& p : split.train) write_patch(patch_dir, p);
  for (const auto& p : split.test) write_patch(patch_dir, p);
  std::ofstream(dir / "split.json") << split_manifest(split, view, classes).dump(2) << "\n";
  write_sources(dir, sources);
}

struct PatchStore {
  DatasetSplit split;
  ClassSet classes;
  View view = View::SUR;
};

inline PatchStore read_patch_store(const std::filesystem::path& dir) {
  std::ifstream is(dir / "split.json");
  if (!is) throw ConfigError("no prepared patch store at " + dir.string() + " (run `prepare` first)");
  const json j = json::parse(is);
  PatchStore store;
  store.view = parse_view(j.at("view").get<std::string>());
  store.classes = ClassSet(j.at("classes").get<std::vector<std::string>>());
  store.split.seed = j.at("seed").get<std::uint64_t>();
  const auto patch_dir = dir / "patches";
  for (const auto& id : j.at("train")) store.split.train.push_back(read_patch(patch_dir, id.get<std::string>()));
  for (const auto& id : j.at("test")) store.split.test.push_back(read_patch(patch_dir, id.get<std::string>()));
  return store;
}

}  // namespace gemini::data
