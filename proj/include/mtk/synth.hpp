#pragma once

// Synthetic correlated multi-task images. Labels come from a chain-factorized
// joint model; each task draws its class into its own horizontal band, so any
// dependence between tasks lives purely in the label statistics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtk/dataset.hpp"
#include "mtk/error.hpp"

namespace mtk {

/// P(T_0) * P(T_1 | T_0) * ... * P(T_{N-1} | T_0..T_{N-2}).
/// Table t has one row per class tuple of tasks 0..t-1 (mixed radix, task 0 most significant).
class JointLabelModel {
 public:
  JointLabelModel(std::vector<std::size_t> classes, std::vector<std::vector<double>> tables)
      : classes_(std::move(classes)), tables_(std::move(tables)) {
    validate();
  }

  static JointLabelModel independent(const std::vector<std::vector<double>>& marginals) {
    std::vector<std::size_t> classes;
    for (const auto& m : marginals) classes.push_back(m.size());
    std::vector<std::vector<double>> tables;
    std::size_t rows = 1;
    for (std::size_t t = 0; t < marginals.size(); ++t) {
      std::vector<double> table;
      for (std::size_t r = 0; r < rows; ++r) table.insert(table.end(), marginals[t].begin(), marginals[t].end());
      tables.push_back(std::move(table));
      rows *= classes[t];
    }
    return JointLabelModel(std::move(classes), std::move(tables));
  }

  static JointLabelModel uniform(const std::vector<std::size_t>& classes) {
    std::vector<std::vector<double>> marginals;
    for (std::size_t k : classes) marginals.emplace_back(k, 1.0 / static_cast<double>(k));
    return independent(marginals);
  }

  /// All probability mass on a single label tuple.
  static JointLabelModel degenerate(const std::vector<std::size_t>& classes, const std::vector<std::size_t>& tuple) {
    require(classes.size() == tuple.size(), "degenerate joint: tuple arity mismatch");
    std::vector<std::vector<double>> marginals;
    for (std::size_t t = 0; t < classes.size(); ++t) {
      require(tuple[t] < classes[t], "degenerate joint: class out of range");
      std::vector<double> m(classes[t], 0.0);
      m[tuple[t]] = 1.0;
      marginals.push_back(std::move(m));
    }
    return independent(marginals);
  }

  /// Sets P(T_target = target_class | T_source = source_class) = probability in every
  /// row of the target table, rescaling the remaining classes proportionally.
  /// The source task must precede the target in the chain.
  void plant(std::size_t source, std::size_t source_class, std::size_t target, std::size_t target_class,
             double probability) {
    require(source < target && target < classes_.size(), "plant: source task must precede target task");
    require(source_class < classes_[source] && target_class < classes_[target], "plant: class out of range");
    require(probability >= 0.0 && probability <= 1.0, "plant: probability outside [0,1]");
    const std::size_t k = classes_[target];
    auto& table = tables_[target];
    for (std::size_t row = 0; row < table.size() / k; ++row) {
      if (prefix_class(row, target, source) != source_class) continue;
      double* p = table.data() + row * k;
      double rest = 1.0 - p[target_class];
      for (std::size_t c = 0; c < k; ++c) {
        if (c == target_class) continue;
        p[c] = rest > 0.0 ? p[c] * (1.0 - probability) / rest : (1.0 - probability) / static_cast<double>(k - 1);
      }
      p[target_class] = probability;
    }
    validate();
  }

  const std::vector<std::size_t>& classes() const noexcept { return classes_; }
  const std::vector<std::vector<double>>& tables() const noexcept { return tables_; }

  template <typename Rng>
  void sample(Rng& rng, std::vector<std::uint16_t>& out) const {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    out.resize(classes_.size());
    std::size_t row = 0;
    for (std::size_t t = 0; t < classes_.size(); ++t) {
      const double* p = tables_[t].data() + row * classes_[t];
      double u = unit(rng);
      std::size_t c = 0;
      double acc = p[0];
      while (u >= acc && c + 1 < classes_[t]) acc += p[++c];
      // Skip zero-probability classes that a rounding tail could land on.
      while (p[c] == 0.0 && c > 0) --c;
      out[t] = static_cast<std::uint16_t>(c);
      row = row * classes_[t] + c;
    }
  }

 private:
  // Class of task `task` within a row index of table `table`.
  std::size_t prefix_class(std::size_t row, std::size_t table, std::size_t task) const {
    for (std::size_t t = table; t-- > task + 1;) row /= classes_[t];
    return row % classes_[task];
  }

  void validate() const {
    require(!classes_.empty(), "joint label model needs at least one task");
    require(tables_.size() == classes_.size(), "joint label model needs one table per task");
    std::size_t rows = 1;
    for (std::size_t t = 0; t < classes_.size(); ++t) {
      require(classes_[t] >= 2, "every task needs at least two classes");
      require(tables_[t].size() == rows * classes_[t],
              "probability table " + std::to_string(t) + " has the wrong number of entries");
      for (std::size_t r = 0; r < rows; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < classes_[t]; ++c) {
          double p = tables_[t][r * classes_[t] + c];
          require(p >= 0.0 && std::isfinite(p), "probability table " + std::to_string(t) + " has a negative entry");
          sum += p;
        }
        require(std::abs(sum - 1.0) <= 1e-9, "probability table " + std::to_string(t) + " row " + std::to_string(r) +
                                                 " does not sum to 1");
      }
      rows *= classes_[t];
    }
  }

  std::vector<std::size_t> classes_;
  std::vector<std::vector<double>> tables_;
};

struct RenderSpec {
  ImageShape shape{32, 32, 3};
  double noise_sigma = 0.05;
  /// Optional per-task noise override for the rows of that task's band.
  std::vector<double> band_noise;
};

/// Rows [first, last) owned by task i of n.
inline std::pair<std::size_t, std::size_t> band_rows(std::size_t height, std::size_t task, std::size_t n_tasks) {
  return {task * height / n_tasks, (task + 1) * height / n_tasks};
}

inline MultiTaskDataset generate_synthetic(const JointLabelModel& joint, const RenderSpec& render,
                                           std::vector<TaskSpec> tasks, std::size_t n, std::uint64_t seed) {
  require(n >= 1, "generate_synthetic needs n >= 1");
  const std::size_t n_tasks = joint.classes().size();
  require(tasks.size() == n_tasks, "task list and joint label model differ in arity");
  for (std::size_t t = 0; t < n_tasks; ++t)
    require(tasks[t].classes == joint.classes()[t], "task " + std::to_string(t) + " class count differs from the joint");
  const ImageShape& shape = render.shape;
  require(shape.height >= n_tasks && shape.width > 0 && shape.channels > 0, "image too small for one band per task");
  require(render.noise_sigma >= 0.0, "noise sigma must be non-negative");
  require(render.band_noise.empty() || render.band_noise.size() == n_tasks, "band noise needs one entry per task");
  for (double s : render.band_noise) require(s >= 0.0, "noise sigma must be non-negative");

  std::vector<std::size_t> row_task(shape.height);
  for (std::size_t t = 0; t < n_tasks; ++t) {
    auto [lo, hi] = band_rows(shape.height, t, n_tasks);
    for (std::size_t r = lo; r < hi; ++r) row_task[r] = t;
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<float> pixels(n * shape.size());
  std::vector<std::uint16_t> labels(n * n_tasks);
  std::vector<std::uint16_t> tuple;
  for (std::size_t s = 0; s < n; ++s) {
    joint.sample(rng, tuple);
    std::copy(tuple.begin(), tuple.end(), labels.begin() + static_cast<std::ptrdiff_t>(s * n_tasks));
    float* img = pixels.data() + s * shape.size();
    for (std::size_t r = 0; r < shape.height; ++r) {
      const std::size_t t = row_task[r];
      const std::size_t cls = tuple[t];
      const std::size_t lit = cls % shape.channels;
      const double level = static_cast<double>(cls + 1) / static_cast<double>(tasks[t].classes + 1);
      const double sigma = render.band_noise.empty() ? render.noise_sigma : render.band_noise[t];
      for (std::size_t col = 0; col < shape.width; ++col)
        for (std::size_t ch = 0; ch < shape.channels; ++ch) {
          double v = ch == lit ? level : 0.0;
          if (sigma > 0.0) v += sigma * gauss(rng);
          img[(r * shape.width + col) * shape.channels + ch] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
  }
  return MultiTaskDataset(std::move(tasks), shape, std::move(pixels), std::move(labels));
}

// ---- JSON ------------------------------------------------------------------------
//
// {"classes": [4, 2, 5], "marginals"?: [[...], ...],
//  "correlations"?: [{"given": [j, k], "target": [i, c], "probability": p}]}

inline JointLabelModel joint_from_json(const nlohmann::json& j) {
  try {
    auto classes = j.at("classes").get<std::vector<std::size_t>>();
    std::vector<std::vector<double>> marginals;
    if (j.contains("marginals")) {
      marginals = j.at("marginals").get<std::vector<std::vector<double>>>();
      require(marginals.size() == classes.size(), "one marginal per task required");
      for (std::size_t t = 0; t < classes.size(); ++t)
        require(marginals[t].size() == classes[t], "marginal " + std::to_string(t) + " has the wrong length");
    } else {
      for (std::size_t k : classes) marginals.emplace_back(k, 1.0 / static_cast<double>(k));
    }
    auto joint = JointLabelModel::independent(marginals);
    for (const auto& c : j.value("correlations", nlohmann::json::array())) {
      auto given = c.at("given").get<std::vector<std::size_t>>();
      auto target = c.at("target").get<std::vector<std::size_t>>();
      require(given.size() == 2 && target.size() == 2, "correlation given/target must be [task, class]");
      joint.plant(given[0], given[1], target[0], target[1], c.at("probability").get<double>());
    }
    return joint;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed joint label model: ") + e.what());
  }
}

}  // namespace mtk
