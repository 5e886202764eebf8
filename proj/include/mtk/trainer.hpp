#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "mtk/dataset.hpp"
#include "mtk/mtk_build.hpp"
#include "mtk/nn.hpp"
#include "mtk/optim.hpp"

namespace mtk {

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 15;        ///< epochs on an untransformed set
  std::size_t keyed_epochs = 0;   ///< epochs on a keyed set; 0 means ceil(epochs / 2)
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  bool shuffle = true;
  /// Worker threads for the batch gradient. 1 reduces in sample order; more threads
  /// reduce fixed per-thread chunks in chunk order (deterministic for a given count).
  std::size_t threads = 1;

  std::size_t effective_keyed_epochs() const { return keyed_epochs > 0 ? keyed_epochs : (epochs + 1) / 2; }
};

struct TrainHistory {
  std::vector<double> loss;                   ///< mean batch loss per epoch
  std::vector<std::vector<double>> accuracy;  ///< [epoch][task], against the labels trained on
  std::vector<double> seconds;
};

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

/// Reads MTK_THREADS; absent or invalid means 1.
inline std::size_t threads_from_env() {
  const char* v = std::getenv("MTK_THREADS");
  if (!v) return 1;
  char* end = nullptr;
  long n = std::strtol(v, &end, 10);
  return (end != v && n >= 1) ? static_cast<std::size_t>(n) : 1;
}

namespace detail {

// Derived seeds so initialization and shuffling draw independent streams.
inline std::uint64_t init_seed(std::uint64_t seed) { return seed * 0x9E3779B97F4A7C15ull + 1; }
inline std::uint64_t shuffle_seed(std::uint64_t seed) { return seed * 0xBF58476D1CE4E5B9ull + 2; }

}  // namespace detail

/// Mini-batch training over the concatenation of `parts`, shuffled together.
/// Every batch loss sums all tasks' cross-entropies; all heads and the encoder
/// update jointly.
inline TrainResult train_on(const ModelSpec& spec, const std::vector<const MultiTaskDataset*>& parts,
                            std::size_t epochs, const TrainConfig& cfg) {
  require(cfg.batch_size >= 1, "batch size must be at least 1");
  require(epochs >= 1, "epochs must be at least 1");
  require(!parts.empty(), "no training data");
  for (const auto* p : parts) {
    require(p->task_count() == spec.heads.size(), "model heads do not match the dataset's task count");
    for (std::size_t t = 0; t < spec.heads.size(); ++t)
      require(p->tasks()[t].classes == spec.heads[t], "head " + std::to_string(t) + " width differs from task classes");
    require(p->shape() == spec.input, "dataset image shape differs from the model input");
  }
  struct Ref {
    std::uint32_t part, index;
  };
  std::vector<Ref> refs;
  for (std::size_t p = 0; p < parts.size(); ++p)
    for (std::size_t i = 0; i < parts[p]->size(); ++i)
      refs.push_back({static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(i)});
  require(!refs.empty(), "no training samples");

  const std::size_t n_tasks = spec.heads.size();
  TrainResult result;
  result.params = init_params(spec, detail::init_seed(cfg.seed));
  OptimizerState opt(cfg.optimizer, result.params);
  std::mt19937_64 rng(detail::shuffle_seed(cfg.seed));
  const std::vector<std::uint8_t> active(n_tasks, 1);
  const std::size_t threads = std::max<std::size_t>(1, cfg.threads);

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    if (cfg.shuffle) std::shuffle(refs.begin(), refs.end(), rng);
    double loss_sum = 0.0;
    std::vector<std::size_t> correct(n_tasks, 0);
    for (std::size_t start = 0; start < refs.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(refs.size(), start + cfg.batch_size);
      const std::size_t b = end - start;
      std::vector<Example> batch;
      batch.reserve(b);
      for (std::size_t r = start; r < end; ++r) {
        const auto& ds = *parts[refs[r].part];
        batch.push_back({ds.image(refs[r].index), ds.labels(refs[r].index), active});
      }
      const double scale = 1.0 / static_cast<double>(b);
      const std::size_t chunks = std::min(threads, b);
      std::vector<GradientSet> grads(chunks, GradientSet::zeros_like(result.params));
      std::vector<double> losses(chunks, 0.0);
      std::vector<std::vector<std::size_t>> hits(chunks, std::vector<std::size_t>(n_tasks, 0));
      auto work = [&](std::size_t c) {
        Network<double> net(spec, result.params);
        std::vector<std::size_t> pred(n_tasks);
        for (std::size_t e = c * b / chunks; e < (c + 1) * b / chunks; ++e) {
          losses[c] += net.accumulate(batch[e], grads[c], scale, pred);
          for (std::size_t t = 0; t < n_tasks; ++t) hits[c][t] += pred[t] == batch[e].labels[t];
        }
      };
      if (chunks == 1) {
        work(0);
      } else {
        std::vector<std::thread> pool;
        for (std::size_t c = 0; c < chunks; ++c) pool.emplace_back(work, c);
        for (auto& th : pool) th.join();
        for (std::size_t c = 1; c < chunks; ++c)
          for (std::size_t p = 0; p < grads[0].tensors.size(); ++p) {
            auto dst = grads[0].tensors[p].data();
            auto src = grads[c].tensors[p].data();
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
          }
      }
      double batch_loss = 0.0;
      for (std::size_t c = 0; c < chunks; ++c) {
        batch_loss += losses[c];
        for (std::size_t t = 0; t < n_tasks; ++t) correct[t] += hits[c][t];
      }
      optimizer_step(opt, result.params, grads[0]);
      loss_sum += batch_loss;
    }
    const double n = static_cast<double>(refs.size());
    result.history.loss.push_back(loss_sum / n);
    std::vector<double> acc;
    for (std::size_t t = 0; t < n_tasks; ++t) acc.push_back(static_cast<double>(correct[t]) / n);
    result.history.accuracy.push_back(std::move(acc));
    result.history.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return result;
}

/// Joint training on every part of a keyed set for the keyed epoch budget.
inline TrainResult train(const ModelSpec& spec, const KeyedTrainset& data, const TrainConfig& cfg) {
  std::vector<const MultiTaskDataset*> parts;
  for (const auto& p : data.parts) parts.push_back(&p);
  return train_on(spec, parts, cfg.effective_keyed_epochs(), cfg);
}

inline TrainResult train(const ModelSpec& spec, const MultiTaskDataset& data, const TrainConfig& cfg) {
  return train_on(spec, {&data}, cfg.epochs, cfg);
}

inline TrainResult train_baseline(const ModelSpec& spec, const MultiTaskDataset& original, const TrainConfig& cfg) {
  return train(spec, original, cfg);
}

/// CSV: epoch,loss,acc_task_0,...,acc_task_{N-1}
inline std::string history_csv(const TrainHistory& h) {
  std::ostringstream out;
  out << "epoch,loss";
  const std::size_t n_tasks = h.accuracy.empty() ? 0 : h.accuracy.front().size();
  for (std::size_t t = 0; t < n_tasks; ++t) out << ",acc_task_" << t;
  out << "\n";
  char buf[64];
  for (std::size_t e = 0; e < h.loss.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f", e, h.loss[e]);
    out << buf;
    for (double a : h.accuracy[e]) {
      std::snprintf(buf, sizeof buf, ",%.6f", a);
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

inline nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"batch_size", cfg.batch_size}, {"epochs", cfg.epochs},   {"keyed_epochs", cfg.keyed_epochs},
          {"optimizer", to_json(cfg.optimizer)}, {"seed", cfg.seed}, {"shuffle", cfg.shuffle}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  try {
    TrainConfig cfg;
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.keyed_epochs = j.value("keyed_epochs", cfg.keyed_epochs);
    if (j.contains("optimizer")) cfg.optimizer = optimizer_config_from_json(j.at("optimizer"));
    cfg.seed = j.value("seed", cfg.seed);
    cfg.shuffle = j.value("shuffle", cfg.shuffle);
    require(cfg.batch_size >= 1 && cfg.epochs >= 1, "batch size and epochs must be at least 1");
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed training config: ") + e.what());
  }
}

}  // namespace mtk
