#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mtk/dataset.hpp"
#include "mtk/nn.hpp"

namespace mtk::test {

/// Labels given row by row; pixels filled from a seeded uniform stream.
inline MultiTaskDataset table_dataset(const std::vector<std::size_t>& classes, const std::vector<bool>& secured,
                                      const std::vector<std::vector<std::uint16_t>>& rows, ImageShape shape = {2, 2, 1},
                                      std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> px(rows.size() * shape.size());
  for (float& v : px) v = u(rng);
  std::vector<std::uint16_t> labels;
  for (const auto& r : rows) labels.insert(labels.end(), r.begin(), r.end());
  return MultiTaskDataset(make_tasks(classes, secured), shape, std::move(px), std::move(labels));
}

/// n samples with uniform random labels and pixels.
inline MultiTaskDataset random_dataset(const std::vector<std::size_t>& classes, const std::vector<bool>& secured,
                                       std::size_t n, ImageShape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::uint16_t>> rows(n);
  for (auto& r : rows)
    for (std::size_t k : classes) r.push_back(static_cast<std::uint16_t>(std::uniform_int_distribution<std::size_t>(0, k - 1)(rng)));
  return table_dataset(classes, secured, rows, shape, seed + 1);
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mtk_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline double binomial_bound(double p, std::size_t n) { return 3.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(n)); }

}  // namespace mtk::test
