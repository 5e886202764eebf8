#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtk/bytes.hpp"
#include "mtk/error.hpp"
#include "mtk/tensor.hpp"

namespace mtk {

struct TaskSpec {
  std::size_t id = 0;
  std::string name;
  std::size_t classes = 2;
  bool secured = false;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

inline std::string default_task_name(std::size_t id) { return "task" + std::to_string(id); }

/// Tasks with default names, K_i from `classes`, secured where `secured[i]` is set.
inline std::vector<TaskSpec> make_tasks(const std::vector<std::size_t>& classes, const std::vector<bool>& secured) {
  require(classes.size() == secured.size(), "make_tasks: class and secured lists differ in length");
  std::vector<TaskSpec> tasks;
  for (std::size_t i = 0; i < classes.size(); ++i) tasks.push_back({i, default_task_name(i), classes[i], secured[i]});
  return tasks;
}

inline std::vector<std::size_t> secured_tasks(const std::vector<TaskSpec>& tasks) {
  std::vector<std::size_t> out;
  for (const auto& t : tasks)
    if (t.secured) out.push_back(t.id);
  return out;
}

/// Images in [0,1] with one class label per task. Transformed sets keep the
/// original labels as provenance. Immutable once constructed.
class MultiTaskDataset {
 public:
  MultiTaskDataset() = default;

  MultiTaskDataset(std::vector<TaskSpec> tasks, ImageShape shape, std::vector<float> pixels,
                   std::vector<std::uint16_t> labels, std::optional<std::vector<std::uint16_t>> provenance = {})
      : tasks_(std::move(tasks)),
        shape_(shape),
        pixels_(std::move(pixels)),
        labels_(std::move(labels)),
        provenance_(std::move(provenance)) {
    validate();
  }

  const std::vector<TaskSpec>& tasks() const noexcept { return tasks_; }
  std::size_t task_count() const noexcept { return tasks_.size(); }
  const ImageShape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return tasks_.empty() ? 0 : labels_.size() / tasks_.size(); }
  bool empty() const noexcept { return size() == 0; }

  std::span<const float> image(std::size_t i) const {
    return std::span<const float>(pixels_).subspan(i * shape_.size(), shape_.size());
  }
  std::span<const std::uint16_t> labels(std::size_t i) const {
    return std::span<const std::uint16_t>(labels_).subspan(i * task_count(), task_count());
  }
  std::uint16_t label(std::size_t i, std::size_t task) const { return labels_[i * task_count() + task]; }

  bool has_provenance() const noexcept { return provenance_.has_value(); }

  /// Original label when provenance is present, otherwise the current label.
  std::uint16_t ground_truth(std::size_t i, std::size_t task) const {
    return provenance_ ? (*provenance_)[i * task_count() + task] : label(i, task);
  }

  const std::vector<float>& pixel_data() const noexcept { return pixels_; }
  const std::vector<std::uint16_t>& label_data() const noexcept { return labels_; }
  const std::optional<std::vector<std::uint16_t>>& provenance_data() const noexcept { return provenance_; }

  MultiTaskDataset subset(std::span<const std::size_t> indices) const {
    std::vector<float> px;
    std::vector<std::uint16_t> lb;
    std::optional<std::vector<std::uint16_t>> pv;
    if (provenance_) pv.emplace();
    px.reserve(indices.size() * shape_.size());
    lb.reserve(indices.size() * task_count());
    for (std::size_t i : indices) {
      require(i < size(), "subset index out of range");
      auto img = image(i);
      px.insert(px.end(), img.begin(), img.end());
      auto l = labels(i);
      lb.insert(lb.end(), l.begin(), l.end());
      if (pv) pv->insert(pv->end(), provenance_->begin() + i * task_count(), provenance_->begin() + (i + 1) * task_count());
    }
    return MultiTaskDataset(tasks_, shape_, std::move(px), std::move(lb), std::move(pv));
  }

  friend bool operator==(const MultiTaskDataset&, const MultiTaskDataset&) = default;

 private:
  void validate() const {
    require(!tasks_.empty(), "dataset needs at least one task");
    for (std::size_t t = 0; t < tasks_.size(); ++t) {
      require(tasks_[t].id == t, "task ids must be contiguous from 0");
      require(tasks_[t].classes >= 2 && tasks_[t].classes <= 65535, "task class count must be in [2, 65535]");
    }
    require(shape_.size() > 0, "image shape must be positive");
    require(labels_.size() % tasks_.size() == 0, "label array is not a multiple of the task count");
    require(pixels_.size() == size() * shape_.size(), "pixel array does not match sample count and image shape");
    for (std::size_t i = 0; i < labels_.size(); ++i)
      require(labels_[i] < tasks_[i % tasks_.size()].classes, "label out of range for its task");
    for (float v : pixels_) require(v >= 0.0f && v <= 1.0f, "pixel value outside [0,1]");
    if (provenance_) {
      require(provenance_->size() == labels_.size(), "provenance must match the label dimensions");
      for (std::size_t i = 0; i < provenance_->size(); ++i)
        require((*provenance_)[i] < tasks_[i % tasks_.size()].classes, "provenance label out of range");
    }
  }

  std::vector<TaskSpec> tasks_;
  ImageShape shape_;
  std::vector<float> pixels_;
  std::vector<std::uint16_t> labels_;
  std::optional<std::vector<std::uint16_t>> provenance_;
};

// ---- statistics ---------------------------------------------------------------

inline std::size_t count_class(const MultiTaskDataset& ds, std::size_t task, std::size_t cls) {
  require(task < ds.task_count(), "unknown task id " + std::to_string(task));
  std::size_t n = 0;
  for (std::size_t s = 0; s < ds.size(); ++s) n += ds.label(s, task) == cls;
  return n;
}

inline std::size_t count_joint(const MultiTaskDataset& ds, std::size_t task_a, std::size_t class_a, std::size_t task_b,
                               std::size_t class_b) {
  require(task_a < ds.task_count() && task_b < ds.task_count(), "unknown task id");
  std::size_t n = 0;
  for (std::size_t s = 0; s < ds.size(); ++s) n += ds.label(s, task_a) == class_a && ds.label(s, task_b) == class_b;
  return n;
}

/// Fraction of samples whose task-i label is c.
inline double empirical_marginal(const MultiTaskDataset& ds, std::size_t i, std::size_t c) {
  require(!ds.empty(), "empirical_marginal on an empty dataset");
  require(i < ds.task_count() && c < ds.tasks()[i].classes, "class index out of range");
  return static_cast<double>(count_class(ds, i, c)) / static_cast<double>(ds.size());
}

/// Pr(T_i = c | T_j = k) as a ratio of counts.
inline double empirical_conditional(const MultiTaskDataset& ds, std::size_t i, std::size_t c, std::size_t j,
                                    std::size_t k) {
  require(i < ds.task_count() && j < ds.task_count(), "unknown task id");
  require(c < ds.tasks()[i].classes && k < ds.tasks()[j].classes, "class index out of range");
  std::size_t cond = count_class(ds, j, k);
  if (cond == 0)
    throw UndefinedConditional("no samples with task " + std::to_string(j) + " = class " + std::to_string(k));
  return static_cast<double>(count_joint(ds, j, k, i, c)) / static_cast<double>(cond);
}

// ---- split --------------------------------------------------------------------

/// Uniform random partition; each side keeps the original sample order.
inline std::pair<MultiTaskDataset, MultiTaskDataset> split(const MultiTaskDataset& ds, double train_fraction,
                                                           std::uint64_t seed) {
  require(train_fraction > 0.0 && train_fraction < 1.0, "train fraction must lie in (0, 1)");
  const std::size_t n = ds.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  require(n_train > 0 && n_train < n, "split leaves one side empty");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {ds.subset(train), ds.subset(test)};
}

// ---- MTKD file format -----------------------------------------------------------
//
// "MTKD", u8 version=1, 3 zero bytes, u32 n_samples/H/W/C/n_tasks,
// per task {u16 K, u8 secured, u8 0}, u8 has_provenance, f32 pixels,
// u16 labels, u16 provenance (iff has_provenance). Little-endian.

inline constexpr std::uint8_t kDatasetVersion = 1;

inline std::vector<char> encode_dataset(const MultiTaskDataset& ds) {
  detail::ByteWriter w;
  w.raw("MTKD");
  w.u8(kDatasetVersion);
  for (int i = 0; i < 3; ++i) w.u8(0);
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(ds.shape().height));
  w.u32(static_cast<std::uint32_t>(ds.shape().width));
  w.u32(static_cast<std::uint32_t>(ds.shape().channels));
  w.u32(static_cast<std::uint32_t>(ds.task_count()));
  for (const auto& t : ds.tasks()) {
    w.u16(static_cast<std::uint16_t>(t.classes));
    w.u8(t.secured ? 1 : 0);
    w.u8(0);
  }
  w.u8(ds.has_provenance() ? 1 : 0);
  w.f32_array(ds.pixel_data());
  w.u16_array(ds.label_data());
  if (ds.has_provenance()) w.u16_array(*ds.provenance_data());
  return w.bytes();
}

inline MultiTaskDataset decode_dataset(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  if (r.raw(4, "magic") != "MTKD") throw FormatError("bad dataset magic", 0);
  if (auto v = r.u8("version"); v != kDatasetVersion)
    throw FormatError("unsupported dataset version " + std::to_string(v), 4);
  for (int i = 0; i < 3; ++i)
    if (r.u8("reserved") != 0) throw FormatError("nonzero reserved byte", r.offset() - 1);
  const std::uint32_t n = r.u32("sample count");
  ImageShape shape;
  shape.height = r.u32("height");
  shape.width = r.u32("width");
  shape.channels = r.u32("channels");
  const std::uint32_t n_tasks = r.u32("task count");
  if (n_tasks == 0) throw FormatError("dataset declares zero tasks", r.offset() - 4);
  if (shape.size() == 0) throw FormatError("dataset declares an empty image shape", r.offset() - 8);
  std::vector<TaskSpec> tasks;
  for (std::uint32_t t = 0; t < n_tasks; ++t) {
    std::size_t at = r.offset();
    std::uint16_t k = r.u16("task classes");
    std::uint8_t secured = r.u8("task secured flag");
    if (secured > 1 || r.u8("task padding") != 0) throw FormatError("malformed task record", at);
    if (k < 2) throw FormatError("task with fewer than 2 classes", at);
    tasks.push_back({t, default_task_name(t), k, secured == 1});
  }
  std::size_t flag_at = r.offset();
  std::uint8_t has_prov = r.u8("provenance flag");
  if (has_prov > 1) throw FormatError("bad provenance flag", flag_at);
  // Size check up front so a truncated file fails before any large allocation.
  const std::size_t need = std::size_t{n} * shape.size() * 4 + std::size_t{n} * n_tasks * 2 * (1 + has_prov);
  if (r.remaining() < need) throw FormatError("truncated dataset body", r.offset() + r.remaining());
  std::vector<float> pixels(std::size_t{n} * shape.size());
  r.f32_array(pixels, "pixels");
  std::vector<std::uint16_t> labels(std::size_t{n} * n_tasks);
  std::size_t labels_at = r.offset();
  r.u16_array(labels, "labels");
  std::optional<std::vector<std::uint16_t>> prov;
  if (has_prov) {
    prov.emplace(labels.size());
    r.u16_array(*prov, "provenance");
  }
  r.expect_end();
  try {
    return MultiTaskDataset(std::move(tasks), shape, std::move(pixels), std::move(labels), std::move(prov));
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("dataset contents rejected: ") + e.what(), labels_at);
  }
}

inline void save(const MultiTaskDataset& ds, const std::filesystem::path& path) {
  detail::write_file(path, encode_dataset(ds));
}

inline MultiTaskDataset load(const std::filesystem::path& path) { return decode_dataset(detail::read_file(path)); }

}  // namespace mtk
