#pragma once

// Protection/revelation accuracy, prediction-correlation gaps, and feature
// cosine vs. accuracy sweeps for partial or weakened keys.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "json.hpp"
#include "mtk/dataset.hpp"
#include "mtk/nn.hpp"
#include "mtk/trigger.hpp"

namespace mtk {

using Evaluator = Network<double>;

/// Prediction for `task` on x, with `key` stamped first when given.
inline std::size_t predict_under(const Evaluator& net, std::span<const float> x, std::size_t task,
                                 const TriggerKey* key) {
  if (!key) return net.predict(x, task);
  return net.predict(apply_key(x, *key), task);
}

/// Fraction of samples whose prediction matches the ground truth (provenance
/// when present). The key may belong to a different task than the one evaluated.
inline double task_accuracy(const Evaluator& net, const MultiTaskDataset& ds, std::size_t task,
                            const TriggerKey* key = nullptr) {
  require(!ds.empty(), "task_accuracy on an empty dataset");
  require(task < ds.task_count(), "unknown task id " + std::to_string(task));
  std::size_t hits = 0;
  for (std::size_t s = 0; s < ds.size(); ++s) hits += predict_under(net, ds.image(s), task, key) == ds.ground_truth(s, task);
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

inline double task_accuracy(const Model& model, const MultiTaskDataset& ds, std::size_t task,
                            const TriggerKey* key = nullptr) {
  return task_accuracy(Evaluator(model.spec, model.params), ds, task, key);
}

/// Mean and 95% Student-t halfwidth; halfwidth is 0 for a single value.
inline std::pair<double, double> mean_halfwidth(std::span<const double> values) {
  require(!values.empty(), "mean of no values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  boost::math::students_t dist(n - 1.0);
  return {mean, boost::math::quantile(boost::math::complement(dist, 0.025)) * sd / std::sqrt(n)};
}

// ---- protection report -------------------------------------------------------------

struct ProtectionRow {
  std::string condition;  ///< "none", a key id, "sequential", or "stacked"
  std::vector<double> accuracy;
  std::vector<double> halfwidth;
  bool diagnostic = false;  ///< stacked keys: reported, not part of the contract
};

struct ProtectionReport {
  std::size_t trials = 0;
  std::vector<ProtectionRow> rows;
};

/// Rows: no key; each single key; and with two or more keys, the sequential
/// grant (each secured task predicted from an input carrying only its own key)
/// plus a stacked-keys diagnostic. One model per trial.
inline ProtectionReport protection_report(std::span<const Model> models, const MultiTaskDataset& test,
                                          const std::vector<TriggerKey>& keys) {
  require(!models.empty(), "protection report needs at least one trial");
  require(!test.empty(), "protection report on an empty dataset");
  const std::size_t n_tasks = test.task_count();
  enum class Mode { plain, single, sequential, stacked };
  struct Condition {
    std::string name;
    Mode mode;
    const TriggerKey* key;
  };
  std::vector<Condition> conditions{{"none", Mode::plain, nullptr}};
  for (const auto& k : keys) conditions.push_back({k.id, Mode::single, &k});
  if (keys.size() > 1) {
    conditions.push_back({"sequential", Mode::sequential, nullptr});
    conditions.push_back({"stacked", Mode::stacked, nullptr});
  }
  ProtectionReport report;
  report.trials = models.size();
  std::vector<std::vector<std::vector<double>>> acc(conditions.size(), std::vector<std::vector<double>>(n_tasks));
  for (const auto& model : models) {
    Evaluator net(model.spec, model.params);
    for (std::size_t ci = 0; ci < conditions.size(); ++ci) {
      const auto& cond = conditions[ci];
      for (std::size_t t = 0; t < n_tasks; ++t) {
        double a = 0.0;
        switch (cond.mode) {
          case Mode::plain: a = task_accuracy(net, test, t, nullptr); break;
          case Mode::single: a = task_accuracy(net, test, t, cond.key); break;
          case Mode::sequential: {
            const TriggerKey* own = nullptr;
            for (const auto& k : keys)
              if (k.task == t) own = &k;
            a = task_accuracy(net, test, t, own);
            break;
          }
          case Mode::stacked: {
            std::size_t hits = 0;
            for (std::size_t s = 0; s < test.size(); ++s) {
              std::vector<float> x(test.image(s).begin(), test.image(s).end());
              for (const auto& k : keys) stamp(x, k);
              hits += net.predict(x, t) == test.ground_truth(s, t);
            }
            a = static_cast<double>(hits) / static_cast<double>(test.size());
            break;
          }
        }
        acc[ci][t].push_back(a);
      }
    }
  }
  for (std::size_t ci = 0; ci < conditions.size(); ++ci) {
    ProtectionRow row{conditions[ci].name, {}, {}, conditions[ci].mode == Mode::stacked};
    for (std::size_t t = 0; t < n_tasks; ++t) {
      auto [m, h] = mean_halfwidth(acc[ci][t]);
      row.accuracy.push_back(m);
      row.halfwidth.push_back(h);
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

// ---- prediction gap -----------------------------------------------------------------

/// Each task's predictions come from its revealing key (plain input for unprotected tasks).
inline std::vector<std::size_t> revealed_predictions(const Evaluator& net, const MultiTaskDataset& ds, std::size_t task,
                                                     const std::vector<TriggerKey>& keys) {
  const TriggerKey* key = nullptr;
  for (const auto& k : keys)
    if (k.task == task) key = &k;
  std::vector<std::size_t> out(ds.size());
  for (std::size_t s = 0; s < ds.size(); ++s) out[s] = predict_under(net, ds.image(s), task, key);
  return out;
}

/// P(pred_i = c | pred_j = k) - P(pred_i = c) over the dataset's predictions.
inline double prediction_gap(const Evaluator& net, const MultiTaskDataset& ds, std::size_t j, std::size_t k,
                             std::size_t i, std::size_t c, const std::vector<TriggerKey>& keys) {
  require(i != j && i < ds.task_count() && j < ds.task_count(), "prediction gap needs two distinct valid tasks");
  require(!ds.empty(), "prediction gap on an empty dataset");
  auto pj = revealed_predictions(net, ds, j, keys);
  auto pi = revealed_predictions(net, ds, i, keys);
  std::size_t cond = 0, joint = 0, target = 0;
  for (std::size_t s = 0; s < ds.size(); ++s) {
    cond += pj[s] == k;
    joint += pj[s] == k && pi[s] == c;
    target += pi[s] == c;
  }
  if (cond == 0)
    throw UndefinedConditional("no sample is predicted as class " + std::to_string(k) + " of task " + std::to_string(j));
  return static_cast<double>(joint) / static_cast<double>(cond) -
         static_cast<double>(target) / static_cast<double>(ds.size());
}

struct GapRow {
  std::size_t source_task = 0, source_class = 0, target_task = 0, target_class = 0;
  double label_gap = 0.0;  ///< same quantity on the training labels
  double train = 0.0;
  double test = 0.0;
};

inline GapRow gap_row(const Evaluator& net, const MultiTaskDataset& train, const MultiTaskDataset& test, std::size_t j,
                      std::size_t k, std::size_t i, std::size_t c, const std::vector<TriggerKey>& keys) {
  GapRow row{j, k, i, c, 0.0, 0.0, 0.0};
  row.label_gap = empirical_conditional(train, i, c, j, k) - empirical_marginal(train, i, c);
  row.train = prediction_gap(net, train, j, k, i, c, keys);
  row.test = prediction_gap(net, test, j, k, i, c, keys);
  return row;
}

// ---- feature cosine and sweeps -------------------------------------------------------

struct CosineResult {
  double value = 0.0;
  bool degenerate = false;  ///< a feature vector was zero; value is defined as 0
};

inline CosineResult cosine(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "cosine of vectors with different lengths");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return {0.0, true};
  if (std::equal(a.begin(), a.end(), b.begin())) return {1.0, false};
  return {std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0), false};
}

/// cos(f(x_a), f(x_b)), where each side is x with its key stamped (or plain x).
inline CosineResult feature_cosine(const Evaluator& net, std::span<const float> x, const TriggerKey* key_a,
                                   const TriggerKey* key_b) {
  auto fa = key_a ? net.features(apply_key(x, *key_a)) : net.features(x);
  auto fb = key_b ? net.features(apply_key(x, *key_b)) : net.features(x);
  return cosine(fa, fb);
}

enum class SweepKind { pixel_count, magnitude };

struct SimilarityPoint {
  double setting = 0.0;       ///< pixels kept, or color magnitude
  double cosine_full = 0.0;   ///< mean cos(f(x_partial), f(x_full))
  double cosine_plain = 0.0;  ///< mean cos(f(x_partial), f(x))
  double accuracy = 0.0;      ///< key task accuracy under the partial key
  std::size_t degenerate = 0;
};

struct SimilarityCurve {
  SweepKind kind = SweepKind::pixel_count;
  std::string key_id;
  std::size_t task = 0;
  std::vector<SimilarityPoint> points;
};

inline TriggerKey partial_key(const TriggerKey& key, SweepKind kind, double setting) {
  if (kind == SweepKind::magnitude) return scale_key(key, setting);
  require(setting >= 1.0 && setting == std::floor(setting), "pixel-count sweep values must be positive integers");
  return subsample_key(key, static_cast<std::size_t>(setting));
}

inline SimilarityCurve similarity_accuracy_sweep(const Evaluator& net, const MultiTaskDataset& test,
                                                 const TriggerKey& key, SweepKind kind,
                                                 const std::vector<double>& settings) {
  require(!test.empty(), "sweep on an empty dataset");
  std::vector<TriggerKey> partials;
  for (double v : settings) partials.push_back(partial_key(key, kind, v));
  std::vector<std::vector<double>> full(test.size()), plain(test.size());
  for (std::size_t s = 0; s < test.size(); ++s) {
    full[s] = net.features(apply_key(test.image(s), key));
    plain[s] = net.features(test.image(s));
  }
  SimilarityCurve curve{kind, key.id, key.task, {}};
  for (std::size_t p = 0; p < settings.size(); ++p) {
    SimilarityPoint point{settings[p], 0.0, 0.0, 0.0, 0};
    std::size_t hits = 0;
    for (std::size_t s = 0; s < test.size(); ++s) {
      auto f = net.features(apply_key(test.image(s), partials[p]));
      auto cf = cosine(f, full[s]);
      auto cp = cosine(f, plain[s]);
      point.cosine_full += cf.value;
      point.cosine_plain += cp.value;
      point.degenerate += cf.degenerate || cp.degenerate;
      auto z = net.head(f, key.task);
      hits += argmax(std::span<const double>(z)) == test.ground_truth(s, key.task);
    }
    const double n = static_cast<double>(test.size());
    point.cosine_full /= n;
    point.cosine_plain /= n;
    point.accuracy = static_cast<double>(hits) / n;
    curve.points.push_back(point);
  }
  return curve;
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && a.size() >= 2, "spearman needs two equal-length series of at least 2 points");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      for (std::size_t t = i; t <= j; ++t) r[idx[t]] = 0.5 * static_cast<double>(i + j) + 1.0;
      i = j + 1;
    }
    return r;
  };
  auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - mean) * (rb[i] - mean);
    va += (ra[i] - mean) * (ra[i] - mean);
    vb += (rb[i] - mean) * (rb[i] - mean);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

// ---- CSV / JSON --------------------------------------------------------------------
//
// CSV columns: report,condition,task,value,halfwidth

namespace detail {

inline void csv_row(std::ostringstream& out, const std::string& report, const std::string& condition, std::size_t task,
                    double value, double halfwidth) {
  char buf[96];
  std::snprintf(buf, sizeof buf, ",%zu,%.6f,%.6f\n", task, value, halfwidth);
  out << report << ',' << condition << buf;
}

inline std::string format_setting(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline const char* sweep_name(SweepKind k) { return k == SweepKind::magnitude ? "magnitude" : "pixels"; }

}  // namespace detail

inline constexpr const char* kReportCsvHeader = "report,condition,task,value,halfwidth\n";

inline std::string protection_csv(const ProtectionReport& r) {
  std::ostringstream out;
  for (const auto& row : r.rows)
    for (std::size_t t = 0; t < row.accuracy.size(); ++t)
      detail::csv_row(out, row.diagnostic ? "protection-diagnostic" : "protection", row.condition, t, row.accuracy[t],
                      row.halfwidth[t]);
  return out.str();
}

inline std::string gap_csv(const std::vector<GapRow>& rows) {
  std::ostringstream out;
  for (const auto& g : rows) {
    std::string cond = std::to_string(g.source_task) + ":" + std::to_string(g.source_class) + "->" +
                       std::to_string(g.target_task) + ":" + std::to_string(g.target_class);
    detail::csv_row(out, "gap-labels", cond, g.target_task, g.label_gap, 0.0);
    detail::csv_row(out, "gap-train", cond, g.target_task, g.train, 0.0);
    detail::csv_row(out, "gap-test", cond, g.target_task, g.test, 0.0);
  }
  return out.str();
}

inline std::string sweep_csv(const SimilarityCurve& c) {
  std::ostringstream out;
  const std::string base = std::string("sweep-") + detail::sweep_name(c.kind);
  for (const auto& p : c.points) {
    auto cond = detail::format_setting(p.setting);
    detail::csv_row(out, base + "-cosine-full", cond, c.task, p.cosine_full, 0.0);
    detail::csv_row(out, base + "-cosine-plain", cond, c.task, p.cosine_plain, 0.0);
    detail::csv_row(out, base + "-accuracy", cond, c.task, p.accuracy, 0.0);
  }
  return out.str();
}

inline nlohmann::json to_json(const ProtectionReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"condition", row.condition},
                    {"accuracy", row.accuracy},
                    {"halfwidth", row.halfwidth},
                    {"diagnostic", row.diagnostic}});
  return {{"trials", r.trials}, {"rows", rows}};
}

inline nlohmann::json to_json(const std::vector<GapRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& g : rows)
    out.push_back({{"given", {g.source_task, g.source_class}},
                   {"target", {g.target_task, g.target_class}},
                   {"label_gap", g.label_gap},
                   {"train", g.train},
                   {"test", g.test}});
  return out;
}

inline nlohmann::json to_json(const SimilarityCurve& c) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : c.points)
    pts.push_back({{"setting", p.setting},
                   {"cosine_full", p.cosine_full},
                   {"cosine_plain", p.cosine_plain},
                   {"accuracy", p.accuracy},
                   {"degenerate", p.degenerate}});
  return {{"kind", detail::sweep_name(c.kind)}, {"key", c.key_id}, {"task", c.task}, {"points", pts}};
}

}  // namespace mtk
