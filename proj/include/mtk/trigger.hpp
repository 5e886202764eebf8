#pragma once

// Trigger keys: a spatial binary mask broadcast over channels plus one color
// per channel. Stamping replaces masked pixels with the color:
//   x_hat = (1 - m) * x + m * delta.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtk/dataset.hpp"
#include "mtk/error.hpp"
#include "mtk/tensor.hpp"

namespace mtk {

enum class TriggerShape { square, cross, custom };

struct PixelPos {
  std::size_t row = 0;
  std::size_t col = 0;

  friend bool operator==(const PixelPos&, const PixelPos&) = default;
};

struct TriggerKey {
  std::string id;
  std::size_t task = 0;
  TriggerShape kind = TriggerShape::custom;
  PixelPos anchor;       ///< top-left for squares, center for crosses
  std::size_t size = 0;  ///< side length of the bounding box
  ImageShape image;
  std::vector<std::uint8_t> mask;  ///< height * width, row-major, entries 0/1
  std::vector<float> color;        ///< one value per channel

  std::size_t pixel_count() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)); }

  friend bool operator==(const TriggerKey&, const TriggerKey&) = default;
};

namespace detail {

inline void validate_key(const TriggerKey& key) {
  require(key.image.size() > 0, "trigger key needs a positive image shape");
  require(key.mask.size() == key.image.pixels(), "trigger mask does not match the image shape");
  require(key.color.size() == key.image.channels, "trigger color needs one value per channel");
  for (auto m : key.mask) require(m == 0 || m == 1, "trigger mask entries must be 0 or 1");
  for (float c : key.color) require(c >= 0.0f && c <= 1.0f, "trigger color entries must lie in [0,1]");
  require(key.pixel_count() > 0, "trigger mask must cover at least one pixel");
}

}  // namespace detail

inline TriggerKey make_square(std::string id, std::size_t task, PixelPos top_left, std::size_t side,
                              std::vector<float> color, ImageShape image) {
  require(side >= 1, "square side must be at least 1");
  require(top_left.row + side <= image.height && top_left.col + side <= image.width, "square does not fit in the image");
  TriggerKey key{std::move(id), task, TriggerShape::square, top_left, side, image,
                 std::vector<std::uint8_t>(image.pixels(), 0), std::move(color)};
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) key.mask[(top_left.row + r) * image.width + top_left.col + c] = 1;
  detail::validate_key(key);
  return key;
}

/// Plus shape: the center row and center column of a side x side box (2*side - 1 pixels).
inline TriggerKey make_cross(std::string id, std::size_t task, PixelPos center, std::size_t side,
                             std::vector<float> color, ImageShape image) {
  require(side >= 1 && side % 2 == 1, "cross side must be odd");
  const std::size_t half = side / 2;
  require(center.row >= half && center.col >= half && center.row + half < image.height &&
              center.col + half < image.width,
          "cross does not fit in the image");
  TriggerKey key{std::move(id), task, TriggerShape::cross, center, side, image,
                 std::vector<std::uint8_t>(image.pixels(), 0), std::move(color)};
  for (std::size_t d = 0; d < side; ++d) {
    key.mask[(center.row - half + d) * image.width + center.col] = 1;
    key.mask[center.row * image.width + center.col - half + d] = 1;
  }
  detail::validate_key(key);
  return key;
}

inline TriggerKey make_custom(std::string id, std::size_t task, std::vector<std::uint8_t> mask,
                              std::vector<float> color, ImageShape image) {
  TriggerKey key{std::move(id), task, TriggerShape::custom, {}, 0, image, std::move(mask), std::move(color)};
  detail::validate_key(key);
  return key;
}

/// x <- (1 - m) x + m * color for a binary H x W mask broadcast over channels.
/// Any mask is accepted here, including an empty one.
inline void stamp_mask(std::span<float> x, std::span<const std::uint8_t> mask, std::span<const float> color,
                       ImageShape image) {
  require(x.size() == image.size(), "image does not match the trigger key's shape");
  require(mask.size() == image.pixels() && color.size() == image.channels, "mask or color does not match the image");
  const std::size_t channels = image.channels;
  for (std::size_t p = 0; p < mask.size(); ++p)
    if (mask[p])
      for (std::size_t c = 0; c < channels; ++c) x[p * channels + c] = color[c];
}

/// Stamps the key into `x` in place.
inline void stamp(std::span<float> x, const TriggerKey& key) { stamp_mask(x, key.mask, key.color, key.image); }

inline std::vector<float> apply_key(std::span<const float> x, const TriggerKey& key) {
  std::vector<float> out(x.begin(), x.end());
  stamp(out, key);
  return out;
}

inline Tensor apply_key(const Tensor& x, const TriggerKey& key) {
  return Tensor(x.shape(), apply_key(x.data(), key));
}

/// Multiplies the key color by `magnitude` in (0, 1].
inline TriggerKey scale_key(const TriggerKey& key, double magnitude) {
  require(magnitude > 0.0 && magnitude <= 1.0, "key magnitude must lie in (0, 1]");
  TriggerKey out = key;
  for (float& c : out.color) c = static_cast<float>(static_cast<double>(c) * magnitude);
  return out;
}

enum class PixelOrder { row_major, column_major };

/// Keeps the first `count` masked pixels in the given scan order.
inline TriggerKey subsample_key(const TriggerKey& key, std::size_t count, PixelOrder order = PixelOrder::row_major) {
  const std::size_t total = key.pixel_count();
  require(count >= 1 && count <= total, "subsample count must lie in [1, key pixel count]");
  if (count == total) return key;
  TriggerKey out = key;
  out.kind = TriggerShape::custom;
  std::fill(out.mask.begin(), out.mask.end(), 0);
  const std::size_t h = key.image.height, w = key.image.width;
  std::size_t kept = 0;
  for (std::size_t a = 0; a < (order == PixelOrder::row_major ? h : w) && kept < count; ++a)
    for (std::size_t b = 0; b < (order == PixelOrder::row_major ? w : h) && kept < count; ++b) {
      std::size_t p = order == PixelOrder::row_major ? a * w + b : b * w + a;
      if (key.mask[p]) {
        out.mask[p] = 1;
        ++kept;
      }
    }
  return out;
}

// ---- defaults ------------------------------------------------------------------

/// Square anchored at 110/128 of each image axis; cross centered at (20/128, 110/128).
inline PixelPos default_square_anchor(ImageShape image) {
  return {image.height * 110 / 128, image.width * 110 / 128};
}
inline PixelPos default_cross_center(ImageShape image) { return {image.height * 20 / 128, image.width * 110 / 128}; }

inline std::vector<float> primary_color(ImageShape image, std::size_t channel) {
  std::vector<float> c(image.channels, 0.0f);
  c[channel % image.channels] = 1.0f;
  return c;
}

/// Square (red) for the first secured task, cross (green) for the second, and
/// further squares with rotating colors along the top edge for any others.
inline std::vector<TriggerKey> default_key_set(const std::vector<TaskSpec>& tasks, ImageShape image,
                                               std::size_t side = 5) {
  require(side >= 1 && side % 2 == 1 && side <= std::min(image.height, image.width),
          "default key side must be odd and fit the image");
  // small images: pull the anchors inward until the shapes fit
  auto sq = default_square_anchor(image);
  sq = {std::min(sq.row, image.height - side), std::min(sq.col, image.width - side)};
  auto cr = default_cross_center(image);
  const std::size_t half = side / 2;
  cr = {std::clamp(cr.row, half, image.height - 1 - half), std::clamp(cr.col, half, image.width - 1 - half)};
  std::vector<TriggerKey> keys;
  std::size_t n = 0;
  for (std::size_t t : secured_tasks(tasks)) {
    std::string id = "key-task" + std::to_string(t);
    if (n == 0)
      keys.push_back(make_square(id, t, sq, side, primary_color(image, 0), image));
    else if (n == 1)
      keys.push_back(make_cross(id, t, cr, side, primary_color(image, 1), image));
    else
      keys.push_back(make_square(id, t, {0, (n - 2) * side}, side, primary_color(image, n), image));
    ++n;
  }
  return keys;
}

// ---- key-set validation and JSON -------------------------------------------------

/// One key per secured task, keys only on secured tasks, unique ids.
inline void validate_key_set(const std::vector<TriggerKey>& keys, const std::vector<TaskSpec>& tasks) {
  std::set<std::size_t> seen;
  std::set<std::string> ids;
  for (const auto& k : keys) {
    detail::validate_key(k);
    require(k.task < tasks.size() && tasks[k.task].secured, "key '" + k.id + "' targets a task that is not secured");
    require(seen.insert(k.task).second, "more than one key for task " + std::to_string(k.task));
    require(ids.insert(k.id).second, "duplicate key id '" + k.id + "'");
  }
  for (std::size_t t : secured_tasks(tasks))
    require(seen.count(t) == 1, "secured task " + std::to_string(t) + " has no key");
}

inline const TriggerKey& key_for_task(const std::vector<TriggerKey>& keys, std::size_t task) {
  for (const auto& k : keys)
    if (k.task == task) return k;
  throw InvalidInput("no key for task " + std::to_string(task));
}

inline nlohmann::json to_json(const TriggerKey& key) {
  nlohmann::json j = {{"id", key.id},
                      {"task", key.task},
                      {"kind", key.kind == TriggerShape::square ? "square"
                               : key.kind == TriggerShape::cross ? "cross"
                                                                 : "custom"},
                      {"anchor", {key.anchor.row, key.anchor.col}},
                      {"size", key.size},
                      {"color", key.color}};
  if (key.kind == TriggerShape::custom) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < key.image.height; ++r) {
      auto begin = key.mask.begin() + static_cast<std::ptrdiff_t>(r * key.image.width);
      rows.push_back(std::vector<int>(begin, begin + static_cast<std::ptrdiff_t>(key.image.width)));
    }
    j["mask"] = rows;
  }
  return j;
}

inline TriggerKey key_from_json(const nlohmann::json& j, ImageShape image) {
  try {
    auto id = j.at("id").get<std::string>();
    auto task = j.at("task").get<std::size_t>();
    auto kind = j.at("kind").get<std::string>();
    auto color = j.at("color").get<std::vector<float>>();
    auto anchor = j.value("anchor", std::vector<std::size_t>{0, 0});
    require(anchor.size() == 2, "key anchor must be [row, col]");
    auto size = j.value("size", std::size_t{0});
    if (kind == "square") return make_square(id, task, {anchor[0], anchor[1]}, size, color, image);
    if (kind == "cross") return make_cross(id, task, {anchor[0], anchor[1]}, size, color, image);
    require(kind == "custom", "unknown key kind '" + kind + "'");
    auto rows = j.at("mask").get<std::vector<std::vector<int>>>();
    require(rows.size() == image.height, "custom mask must have one row per image row");
    std::vector<std::uint8_t> mask;
    for (const auto& row : rows) {
      require(row.size() == image.width, "custom mask row has the wrong width");
      for (int v : row) {
        require(v == 0 || v == 1, "custom mask entries must be 0 or 1");
        mask.push_back(static_cast<std::uint8_t>(v));
      }
    }
    TriggerKey key = make_custom(id, task, std::move(mask), std::move(color), image);
    key.anchor = {anchor[0], anchor[1]};
    key.size = size;
    return key;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed trigger key: ") + e.what());
  }
}

inline nlohmann::json to_json(const std::vector<TriggerKey>& keys) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& k : keys) arr.push_back(to_json(k));
  return arr;
}

inline std::vector<TriggerKey> key_set_from_json(const nlohmann::json& j, ImageShape image) {
  require(j.is_array(), "a key-set file must hold a JSON array");
  std::vector<TriggerKey> keys;
  for (const auto& k : j) keys.push_back(key_from_json(k, image));
  return keys;
}

}  // namespace mtk
