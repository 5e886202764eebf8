#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "json.hpp"
#include "mtk/error.hpp"
#include "mtk/nn.hpp"

namespace mtk {

enum class OptimizerKind { sgd_momentum, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd_momentum;
  double learning_rate = 0.05;
  double momentum = 0.9;  ///< SGD momentum, or beta1 for Adam
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment buffers live in double and are shape-congruent with the parameters.
struct OptimizerState {
  OptimizerConfig config;
  std::vector<BasicTensor<double>> first;
  std::vector<BasicTensor<double>> second;
  std::uint64_t step = 0;

  OptimizerState(OptimizerConfig cfg, const ModelParams& params) : config(cfg) {
    require(cfg.learning_rate > 0, "learning rate must be positive");
    for (const auto& t : params.tensors) {
      first.emplace_back(t.shape());
      if (cfg.kind == OptimizerKind::adam) second.emplace_back(t.shape());
    }
  }
};

// SGD: v <- mu*v + g; p <- p - lr*v.
// Adam: bias-corrected moments, p <- p - lr * m_hat / (sqrt(v_hat) + eps).
inline void optimizer_step(OptimizerState& state, ModelParams& params, const GradientSet& grads) {
  require(grads.tensors.size() == params.tensors.size() && state.first.size() == params.tensors.size(),
          "optimizer: gradient/parameter count mismatch");
  for (std::size_t i = 0; i < params.tensors.size(); ++i)
    require(grads.tensors[i].shape() == params.tensors[i].shape() &&
                state.first[i].shape() == params.tensors[i].shape(),
            "optimizer: gradient shape mismatch on tensor " + std::to_string(i));
  ++state.step;
  const auto& cfg = state.config;
  if (cfg.kind == OptimizerKind::sgd_momentum) {
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
      auto p = params.tensors[i].data();
      auto g = grads.tensors[i].data();
      auto v = state.first[i].data();
      for (std::size_t k = 0; k < p.size(); ++k) {
        v[k] = cfg.momentum * v[k] + g[k];
        p[k] = static_cast<float>(static_cast<double>(p[k]) - cfg.learning_rate * v[k]);
      }
    }
    return;
  }
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.momentum, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    auto p = params.tensors[i].data();
    auto g = grads.tensors[i].data();
    auto m = state.first[i].data();
    auto v = state.second[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = cfg.momentum * m[k] + (1.0 - cfg.momentum) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      double update = cfg.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.epsilon);
      p[k] = static_cast<float>(static_cast<double>(p[k]) - update);
    }
  }
}

inline nlohmann::json to_json(const OptimizerConfig& cfg) {
  return {{"kind", cfg.kind == OptimizerKind::adam ? "adam" : "sgd-momentum"},
          {"learning_rate", cfg.learning_rate},
          {"momentum", cfg.momentum},
          {"beta2", cfg.beta2},
          {"epsilon", cfg.epsilon}};
}

inline OptimizerConfig optimizer_config_from_json(const nlohmann::json& j) {
  OptimizerConfig cfg;
  std::string kind = j.value("kind", std::string("sgd-momentum"));
  require(kind == "sgd-momentum" || kind == "adam", "unknown optimizer '" + kind + "'");
  cfg.kind = kind == "adam" ? OptimizerKind::adam : OptimizerKind::sgd_momentum;
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.momentum = j.value("momentum", cfg.momentum);
  cfg.beta2 = j.value("beta2", cfg.beta2);
  cfg.epsilon = j.value("epsilon", cfg.epsilon);
  return cfg;
}

}  // namespace mtk
