#pragma once

// Keyed training-set construction. Part 0 replaces every secured label with a
// uniform draw; part j stamps key j on every part-0 image and restores task j's
// original label, leaving all other labels as in part 0.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtk/dataset.hpp"
#include "mtk/trigger.hpp"

namespace mtk {

struct KeyedTrainset {
  std::vector<MultiTaskDataset> parts;  ///< parts[0] = D0, parts[n + 1] built with keys[n]
  std::vector<TriggerKey> keys;
  std::string origin_hash;
  std::uint64_t seed = 0;

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& p : parts) n += p.size();
    return n;
  }
};

/// FNV-1a over the dataset's MTKD encoding fields, as 16 hex digits.
inline std::string dataset_hash(const MultiTaskDataset& ds) {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& t : ds.tasks()) {
    std::uint32_t rec[2] = {static_cast<std::uint32_t>(t.classes), t.secured ? 1u : 0u};
    mix(rec, sizeof rec);
  }
  std::uint32_t dims[3] = {static_cast<std::uint32_t>(ds.shape().height), static_cast<std::uint32_t>(ds.shape().width),
                           static_cast<std::uint32_t>(ds.shape().channels)};
  mix(dims, sizeof dims);
  mix(ds.pixel_data().data(), ds.pixel_data().size() * sizeof(float));
  mix(ds.label_data().data(), ds.label_data().size() * sizeof(std::uint16_t));
  if (ds.has_provenance()) mix(ds.provenance_data()->data(), ds.provenance_data()->size() * sizeof(std::uint16_t));
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

inline MultiTaskDataset build_d0(const MultiTaskDataset& ds, std::uint64_t seed) {
  const auto secured = secured_tasks(ds.tasks());
  require(!secured.empty(), "build_d0 needs at least one secured task");
  std::mt19937_64 rng(seed);
  std::vector<std::uint16_t> labels = ds.label_data();
  const std::size_t n_tasks = ds.task_count();
  for (std::size_t s = 0; s < ds.size(); ++s)
    for (std::size_t t : secured) {
      std::uniform_int_distribution<std::size_t> draw(0, ds.tasks()[t].classes - 1);
      labels[s * n_tasks + t] = static_cast<std::uint16_t>(draw(rng));
    }
  return MultiTaskDataset(ds.tasks(), ds.shape(), ds.pixel_data(), std::move(labels), ds.label_data());
}

inline MultiTaskDataset build_dj(const MultiTaskDataset& d0, const TriggerKey& key, std::size_t j) {
  require(d0.has_provenance(), "build_dj needs a part-0 dataset carrying provenance");
  require(key.task == j, "key '" + key.id + "' does not belong to task " + std::to_string(j));
  require(j < d0.task_count() && d0.tasks()[j].secured, "task " + std::to_string(j) + " is not secured");
  require(key.image == d0.shape(), "key image shape differs from the dataset");
  std::vector<float> pixels = d0.pixel_data();
  const std::size_t img = d0.shape().size();
  for (std::size_t s = 0; s < d0.size(); ++s) stamp(std::span<float>(pixels).subspan(s * img, img), key);
  std::vector<std::uint16_t> labels = d0.label_data();
  const auto& truth = *d0.provenance_data();
  const std::size_t n_tasks = d0.task_count();
  for (std::size_t s = 0; s < d0.size(); ++s) labels[s * n_tasks + j] = truth[s * n_tasks + j];
  return MultiTaskDataset(d0.tasks(), d0.shape(), std::move(pixels), std::move(labels), d0.provenance_data());
}

inline KeyedTrainset build_all(const MultiTaskDataset& ds, std::vector<TriggerKey> keys, std::uint64_t seed) {
  validate_key_set(keys, ds.tasks());
  std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) { return a.task < b.task; });
  KeyedTrainset out;
  out.origin_hash = dataset_hash(ds);
  out.seed = seed;
  out.parts.push_back(build_d0(ds, seed));
  for (const auto& key : keys) out.parts.push_back(build_dj(out.parts.front(), key, key.task));
  out.keys = std::move(keys);
  return out;
}

// Directory layout: d0.mtkd, d1.mtkd, ... plus manifest.json.
inline void save_keyed(const KeyedTrainset& set, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json parts = nlohmann::json::array();
  std::vector<std::size_t> counts;
  for (std::size_t p = 0; p < set.parts.size(); ++p) {
    std::string file = "d" + std::to_string(p) + ".mtkd";
    save(set.parts[p], dir / file);
    nlohmann::json entry = {{"file", file}, {"samples", set.parts[p].size()}};
    if (p > 0) {
      entry["key"] = set.keys[p - 1].id;
      entry["task"] = set.keys[p - 1].task;
    }
    parts.push_back(std::move(entry));
    counts.push_back(set.parts[p].size());
  }
  nlohmann::json manifest = {{"origin_hash", set.origin_hash}, {"seed", set.seed},         {"keys", to_json(set.keys)},
                             {"parts", parts},                 {"counts", counts},         {"total", set.total_size()}};
  std::ofstream(dir / "manifest.json") << manifest.dump() << "\n";
}

inline KeyedTrainset load_keyed(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("cannot open " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("keyed manifest is not valid JSON: ") + e.what(), e.byte);
  }
  KeyedTrainset set;
  try {
    set.origin_hash = manifest.at("origin_hash").get<std::string>();
    set.seed = manifest.at("seed").get<std::uint64_t>();
    for (const auto& p : manifest.at("parts")) set.parts.push_back(load(dir / p.at("file").get<std::string>()));
    require(!set.parts.empty(), "keyed manifest lists no parts");
    set.keys = key_set_from_json(manifest.at("keys"), set.parts.front().shape());
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed keyed manifest: ") + e.what());
  }
  require(set.parts.size() == set.keys.size() + 1, "keyed manifest needs one part per key plus part 0");
  return set;
}

}  // namespace mtk
