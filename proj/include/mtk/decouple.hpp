#pragma once

// Correlation decoupling. For a class pair across two tasks,
//   alpha = max(P(T_i = c | T_j = k) - P(T_i = c), 0).
// When alpha exceeds tau, a fraction beta of the samples with T_j = k get a
// uniformly redrawn task-i label, where
//   gamma = min(alpha - tau, 0.1),
//   beta  = gamma * n_cond / (n_joint + gamma * n_cond),
// n_cond = |{T_j = k}| and n_joint = |{T_j = k, T_i = c}|.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtk/dataset.hpp"
#include "mtk/error.hpp"

namespace mtk {

struct DecoupleConfig {
  static constexpr double cap = 0.1;
  double tau = 0.15;
};

struct CorrelationEntry {
  std::size_t source_task = 0;   ///< j
  std::size_t source_class = 0;  ///< k
  std::size_t target_task = 0;   ///< i
  std::size_t target_class = 0;  ///< c
  double alpha = 0.0;

  friend bool operator==(const CorrelationEntry&, const CorrelationEntry&) = default;
};

struct DecoupleAction {
  CorrelationEntry entry;
  double gamma = 0.0;
  double beta = 0.0;
  std::size_t n_cond = 0;
  std::size_t n_joint = 0;
  std::vector<std::size_t> relabeled;        ///< sample ids, ascending
  std::vector<std::uint16_t> new_labels;     ///< task-i label written to each relabeled sample
  std::vector<std::string> warnings;
};

namespace detail {

// Same arithmetic as empirical_conditional - empirical_marginal, from counts.
inline double alpha_from_counts(std::size_t n_joint, std::size_t n_cond, std::size_t n_target, std::size_t n) {
  double conditional = static_cast<double>(n_joint) / static_cast<double>(n_cond);
  double marginal = static_cast<double>(n_target) / static_cast<double>(n);
  return std::max(conditional - marginal, 0.0);
}

}  // namespace detail

inline double compute_alpha(const MultiTaskDataset& ds, std::size_t i, std::size_t c, std::size_t j, std::size_t k) {
  require(i != j, "alpha needs two distinct tasks");
  double conditional = empirical_conditional(ds, i, c, j, k);
  return std::max(conditional - empirical_marginal(ds, i, c), 0.0);
}

inline double compute_gamma(double alpha, const DecoupleConfig& config) {
  require(config.tau > 0.0, "tau must be positive");
  require(alpha > config.tau, "alpha does not exceed tau; no decoupling warranted");
  return std::min(alpha - config.tau, DecoupleConfig::cap);
}

inline double compute_beta(std::size_t n_cond, std::size_t n_joint, double gamma) {
  require(n_cond > 0, "beta needs a nonempty conditioning set");
  require(n_joint <= n_cond, "joint count cannot exceed the conditioning count");
  require(gamma >= 0.0, "gamma must be non-negative");
  const double scaled = gamma * static_cast<double>(n_cond);
  return scaled / (static_cast<double>(n_joint) + scaled);
}

struct ScanResult {
  std::vector<CorrelationEntry> above_tau;  ///< every (j,k,i,c) with alpha > tau
  std::vector<DecoupleAction> actions;      ///< largest alpha per conditioning task j
};

/// Computes every alpha once, then picks the single largest entry above tau for
/// each conditioning task j. Ties go to the lexicographically smallest (i, c, k).
inline ScanResult scan(const MultiTaskDataset& ds, const DecoupleConfig& config) {
  require(config.tau > 0.0, "tau must be positive");
  require(!ds.empty(), "cannot scan an empty dataset");
  const std::size_t n = ds.size();
  const std::size_t n_tasks = ds.task_count();
  std::vector<std::vector<std::size_t>> class_counts(n_tasks);
  for (std::size_t t = 0; t < n_tasks; ++t) {
    class_counts[t].assign(ds.tasks()[t].classes, 0);
    for (std::size_t s = 0; s < n; ++s) ++class_counts[t][ds.label(s, t)];
  }
  ScanResult result;
  for (std::size_t j = 0; j < n_tasks; ++j) {
    std::optional<DecoupleAction> best;
    for (std::size_t i = 0; i < n_tasks; ++i) {
      if (i == j) continue;
      const std::size_t kj = ds.tasks()[j].classes, ki = ds.tasks()[i].classes;
      std::vector<std::size_t> joint(kj * ki, 0);
      for (std::size_t s = 0; s < n; ++s) ++joint[ds.label(s, j) * ki + ds.label(s, i)];
      for (std::size_t c = 0; c < ki; ++c)
        for (std::size_t k = 0; k < kj; ++k) {
          const std::size_t n_cond = class_counts[j][k];
          if (n_cond == 0) continue;
          const std::size_t n_joint = joint[k * ki + c];
          const double alpha = detail::alpha_from_counts(n_joint, n_cond, class_counts[i][c], n);
          if (!(alpha > config.tau)) continue;
          CorrelationEntry entry{j, k, i, c, alpha};
          result.above_tau.push_back(entry);
          if (!best || alpha > best->entry.alpha) {
            DecoupleAction action;
            action.entry = entry;
            action.n_cond = n_cond;
            action.n_joint = n_joint;
            action.gamma = compute_gamma(alpha, config);
            action.beta = compute_beta(n_cond, n_joint, action.gamma);
            best = std::move(action);
          }
        }
    }
    if (best) result.actions.push_back(std::move(*best));
  }
  return result;
}

struct DecoupleResult {
  MultiTaskDataset dataset;
  DecoupleAction action;  ///< the input action with relabeled ids, new labels and warnings filled in
};

/// Redraws the task-i label of floor(beta * n_cond) samples chosen uniformly
/// from all samples with T_j = k. The pool includes samples already labeled c,
/// and a redraw may reproduce the old label.
inline DecoupleResult apply_decouple(const MultiTaskDataset& ds, DecoupleAction action, std::uint64_t seed) {
  const auto& e = action.entry;
  require(e.source_task < ds.task_count() && e.target_task < ds.task_count() && e.source_task != e.target_task,
          "decouple action names invalid tasks");
  require(action.beta > 0.0 && action.beta < 1.0, "beta must lie in (0, 1)");
  std::vector<std::size_t> pool;
  for (std::size_t s = 0; s < ds.size(); ++s)
    if (ds.label(s, e.source_task) == e.source_class) pool.push_back(s);
  require(!pool.empty(), "conditioning set is empty");
  action.relabeled.clear();
  action.new_labels.clear();
  if (action.beta > DecoupleConfig::cap)
    action.warnings.push_back("beta " + std::to_string(action.beta) + " exceeds 0.1");
  const auto count = static_cast<std::size_t>(std::floor(action.beta * static_cast<double>(pool.size())));
  if (count == 0) {
    action.warnings.push_back("floor(beta * n_cond) is 0; dataset unchanged");
    return {ds, std::move(action)};
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  std::uniform_int_distribution<std::size_t> redraw(0, ds.tasks()[e.target_task].classes - 1);
  std::vector<std::uint16_t> labels = ds.label_data();
  for (std::size_t s : pool) {
    auto label = static_cast<std::uint16_t>(redraw(rng));
    labels[s * ds.task_count() + e.target_task] = label;
    action.new_labels.push_back(label);
  }
  action.relabeled = std::move(pool);
  MultiTaskDataset out(ds.tasks(), ds.shape(), ds.pixel_data(), std::move(labels), ds.provenance_data());
  return {std::move(out), std::move(action)};
}

struct DecoupleReport {
  DecoupleConfig config;
  std::vector<CorrelationEntry> above_tau;
  std::vector<DecoupleAction> actions;
};

/// Full decoupling pass: scan once, then apply each conditioning task's action in
/// order of j. Action n uses seed + n.
inline std::pair<MultiTaskDataset, DecoupleReport> decouple(const MultiTaskDataset& ds, const DecoupleConfig& config,
                                                            std::uint64_t seed) {
  ScanResult found = scan(ds, config);
  DecoupleReport report{config, found.above_tau, {}};
  MultiTaskDataset current = ds;
  for (std::size_t a = 0; a < found.actions.size(); ++a) {
    auto applied = apply_decouple(current, found.actions[a], seed + a);
    current = std::move(applied.dataset);
    report.actions.push_back(std::move(applied.action));
  }
  return {std::move(current), std::move(report)};
}

inline nlohmann::json to_json(const CorrelationEntry& e) {
  return {{"given", {e.source_task, e.source_class}}, {"target", {e.target_task, e.target_class}}, {"alpha", e.alpha}};
}

inline nlohmann::json to_json(const DecoupleReport& report) {
  nlohmann::json above = nlohmann::json::array();
  for (const auto& e : report.above_tau) above.push_back(to_json(e));
  nlohmann::json actions = nlohmann::json::array();
  for (const auto& a : report.actions) {
    nlohmann::json j = to_json(a.entry);
    j["gamma"] = a.gamma;
    j["beta"] = a.beta;
    j["n_cond"] = a.n_cond;
    j["n_joint"] = a.n_joint;
    j["relabeled"] = a.relabeled;
    j["new_labels"] = a.new_labels;
    j["warnings"] = a.warnings;
    actions.push_back(std::move(j));
  }
  return {{"tau", report.config.tau}, {"cap", DecoupleConfig::cap}, {"correlations", above}, {"actions", actions}};
}

}  // namespace mtk
