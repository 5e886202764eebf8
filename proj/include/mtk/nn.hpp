#pragma once

// Shared encoder + per-task linear heads, trained with softmax cross-entropy.
//
// Images are (row, col, channel) row-major. Convolutions are unpadded.
// Parameters are stored as float; every forward/backward pass runs in a
// compute type chosen by the caller (double by default) and gradients are
// accumulated in double.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "mtk/error.hpp"
#include "mtk/tensor.hpp"

namespace mtk {

enum class Activation { none, relu };

struct ConvLayer {
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  Activation activation = Activation::relu;
};

/// Fully connected; implicitly flattens a spatial input.
struct DenseLayer {
  std::size_t width = 0;
  Activation activation = Activation::relu;
};

struct FlattenLayer {};

/// Non-overlapping max pooling (stride equals window), trailing rows/cols dropped.
struct MaxPoolLayer {
  std::size_t window = 0;
};

using Layer = std::variant<ConvLayer, DenseLayer, FlattenLayer, MaxPoolLayer>;

struct ModelSpec {
  ImageShape input;
  std::vector<Layer> encoder;
  std::vector<std::size_t> heads;  ///< class count per task
};

struct ModelParams {
  std::vector<Tensor> tensors;  ///< encoder (weight, bias) pairs, then head (weight, bias) pairs

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct GradientSet {
  std::vector<BasicTensor<double>> tensors;

  static GradientSet zeros_like(const ModelParams& params) {
    GradientSet g;
    g.tensors.reserve(params.tensors.size());
    for (const auto& t : params.tensors) g.tensors.emplace_back(t.shape());
    return g;
  }
};

namespace detail {

struct LayerPlan {
  enum class Kind { conv, dense, flatten, maxpool } kind;
  std::size_t in_h = 1, in_w = 1, in_c = 1;
  std::size_t out_h = 1, out_w = 1, out_c = 1;
  std::size_t kernel = 1, stride = 1;
  Activation activation = Activation::none;
  std::size_t weight = 0, bias = 0;  // parameter tensor indices

  std::size_t in_size() const { return in_h * in_w * in_c; }
  std::size_t out_size() const { return out_h * out_w * out_c; }
};

struct NetworkPlan {
  std::vector<LayerPlan> layers;
  std::vector<Shape> param_shapes;
  std::size_t feature_width = 0;
  std::size_t first_head_param = 0;
};

inline NetworkPlan make_plan(const ModelSpec& spec) {
  require(spec.input.height > 0 && spec.input.width > 0 && spec.input.channels > 0,
          "model input shape must be positive");
  require(!spec.heads.empty(), "model needs at least one task head");
  NetworkPlan plan;
  std::size_t h = spec.input.height, w = spec.input.width, c = spec.input.channels;
  bool flat = false;
  for (std::size_t li = 0; li < spec.encoder.size(); ++li) {
    const std::string where = "encoder layer " + std::to_string(li);
    LayerPlan p{};
    p.in_h = h;
    p.in_w = w;
    p.in_c = c;
    if (const auto* conv = std::get_if<ConvLayer>(&spec.encoder[li])) {
      require(!flat, where + ": convolution after a flattened layer");
      require(conv->out_channels > 0 && conv->kernel > 0 && conv->stride > 0, where + ": invalid convolution");
      require(conv->kernel <= h && conv->kernel <= w, where + ": kernel larger than its input");
      p.kind = LayerPlan::Kind::conv;
      p.kernel = conv->kernel;
      p.stride = conv->stride;
      p.activation = conv->activation;
      p.out_h = (h - conv->kernel) / conv->stride + 1;
      p.out_w = (w - conv->kernel) / conv->stride + 1;
      p.out_c = conv->out_channels;
      p.weight = plan.param_shapes.size();
      plan.param_shapes.push_back({conv->out_channels, conv->kernel, conv->kernel, c});
      p.bias = plan.param_shapes.size();
      plan.param_shapes.push_back({conv->out_channels});
    } else if (const auto* dense = std::get_if<DenseLayer>(&spec.encoder[li])) {
      require(dense->width > 0, where + ": dense width must be positive");
      p.kind = LayerPlan::Kind::dense;
      p.activation = dense->activation;
      p.out_c = dense->width;
      p.weight = plan.param_shapes.size();
      plan.param_shapes.push_back({dense->width, h * w * c});
      p.bias = plan.param_shapes.size();
      plan.param_shapes.push_back({dense->width});
      flat = true;
    } else if (std::holds_alternative<FlattenLayer>(spec.encoder[li])) {
      p.kind = LayerPlan::Kind::flatten;
      p.out_c = h * w * c;
      flat = true;
    } else {
      const auto& pool = std::get<MaxPoolLayer>(spec.encoder[li]);
      require(!flat, where + ": max-pool after a flattened layer");
      require(pool.window > 0 && pool.window <= h && pool.window <= w, where + ": invalid pooling window");
      p.kind = LayerPlan::Kind::maxpool;
      p.kernel = pool.window;
      p.stride = pool.window;
      p.out_h = h / pool.window;
      p.out_w = w / pool.window;
      p.out_c = c;
    }
    h = p.out_h;
    w = p.out_w;
    c = p.out_c;
    plan.layers.push_back(p);
  }
  plan.feature_width = h * w * c;
  plan.first_head_param = plan.param_shapes.size();
  for (std::size_t k : spec.heads) {
    require(k >= 1, "task head needs at least one class");
    plan.param_shapes.push_back({k, plan.feature_width});
    plan.param_shapes.push_back({k});
  }
  return plan;
}

}  // namespace detail

inline std::size_t feature_width(const ModelSpec& spec) { return detail::make_plan(spec).feature_width; }

inline std::vector<Shape> parameter_shapes(const ModelSpec& spec) { return detail::make_plan(spec).param_shapes; }

inline void check_params(const ModelSpec& spec, const ModelParams& params) {
  auto shapes = parameter_shapes(spec);
  require(shapes.size() == params.tensors.size(), "parameter count does not match the model spec");
  for (std::size_t i = 0; i < shapes.size(); ++i)
    require(shapes[i] == params.tensors[i].shape(), "parameter tensor " + std::to_string(i) + " has the wrong shape");
}

/// He-uniform encoder weights, small uniform head weights, zero biases.
inline ModelParams init_params(const ModelSpec& spec, std::uint64_t seed, double head_scale = 0.1) {
  auto plan = detail::make_plan(spec);
  std::mt19937_64 rng(seed);
  ModelParams params;
  for (const auto& shape : plan.param_shapes) params.tensors.emplace_back(shape);
  auto fill = [&](Tensor& t, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (float& v : t.data()) v = static_cast<float>(dist(rng));
  };
  for (const auto& layer : plan.layers) {
    if (layer.kind != detail::LayerPlan::Kind::conv && layer.kind != detail::LayerPlan::Kind::dense) continue;
    Tensor& weight = params.tensors[layer.weight];
    double fan_in = static_cast<double>(weight.size() / weight.shape()[0]);
    double gain = layer.activation == Activation::relu ? 6.0 : 3.0;
    fill(weight, std::sqrt(gain / fan_in));
  }
  for (std::size_t p = plan.first_head_param; p < plan.param_shapes.size(); p += 2)
    fill(params.tensors[p], head_scale / std::sqrt(static_cast<double>(plan.feature_width)));
  return params;
}

/// Index of the largest value; ties go to the lowest index.
template <typename T>
std::size_t argmax(std::span<const T> values) {
  require(!values.empty(), "argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

/// One training example: pixels, one label per task, and which tasks contribute to the loss.
struct Example {
  std::span<const float> x;
  std::span<const std::uint16_t> labels;
  std::span<const std::uint8_t> active;
};

/// Softmax cross-entropy with max-subtraction; writes d(loss)/d(logits) * scale into `dlogits`.
template <typename T>
double softmax_cross_entropy(std::span<const T> logits, std::size_t label, std::span<T> dlogits, double scale) {
  double m = -std::numeric_limits<double>::infinity();
  for (T z : logits) m = std::max(m, static_cast<double>(z));
  double sum = 0.0;
  for (T z : logits) sum += std::exp(static_cast<double>(z) - m);
  double lse = m + std::log(sum);
  for (std::size_t k = 0; k < logits.size(); ++k) {
    double p = std::exp(static_cast<double>(logits[k]) - lse);
    dlogits[k] = static_cast<T>(scale * (p - (k == label ? 1.0 : 0.0)));
  }
  return lse - static_cast<double>(logits[label]);
}

/// Evaluates a model in compute type T. Const members are safe to call concurrently.
template <typename T>
class Network {
 public:
  Network(ModelSpec spec, const ModelParams& params) : spec_(std::move(spec)), plan_(detail::make_plan(spec_)) {
    check_params(spec_, params);
    weights_.reserve(params.tensors.size());
    for (const auto& t : params.tensors) weights_.emplace_back(t.data().begin(), t.data().end());
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  std::size_t feature_width() const noexcept { return plan_.feature_width; }
  std::size_t task_count() const noexcept { return spec_.heads.size(); }

  std::vector<T> features(std::span<const float> x) const {
    Buffers b;
    forward(x, b);
    return b.acts.back();
  }

  std::vector<T> logits(std::span<const float> x, std::size_t task) const {
    check_task(task);
    return head(features(x), task);
  }

  std::vector<std::vector<T>> all_logits(std::span<const float> x) const {
    auto f = features(x);
    std::vector<std::vector<T>> out;
    for (std::size_t t = 0; t < task_count(); ++t) out.push_back(head(f, t));
    return out;
  }

  std::size_t predict(std::span<const float> x, std::size_t task) const {
    auto z = logits(x, task);
    return argmax(std::span<const T>(z));
  }

  std::vector<T> head(std::span<const T> features, std::size_t task) const {
    check_task(task);
    const std::size_t k = spec_.heads[task];
    const std::size_t wi = plan_.first_head_param + 2 * task;
    const auto& w = weights_[wi];
    const auto& b = weights_[wi + 1];
    const std::size_t width = plan_.feature_width;
    std::vector<T> z(k);
    for (std::size_t o = 0; o < k; ++o) {
      T acc = b[o];
      const T* row = w.data() + o * width;
      for (std::size_t i = 0; i < width; ++i) acc += row[i] * features[i];
      z[o] = acc;
    }
    return z;
  }

  /// Adds scale * d(loss)/d(params) for one example to `grads`; returns the unscaled loss.
  /// When `predicted` is nonempty it receives the argmax class of every task.
  double accumulate(const Example& ex, GradientSet& grads, double scale, std::span<std::size_t> predicted = {}) {
    check_example(ex);
    forward(ex.x, work_);
    const std::size_t width = plan_.feature_width;
    std::vector<T>& dfeat = work_.grad_out;
    dfeat.assign(width, T{0});
    const std::vector<T>& feat = work_.acts.back();
    double loss = 0.0;
    for (std::size_t t = 0; t < task_count(); ++t) {
      if (!ex.active[t] && predicted.empty()) continue;
      auto z = head(feat, t);
      if (!predicted.empty()) predicted[t] = argmax(std::span<const T>(z));
      if (!ex.active[t]) continue;
      std::vector<T> dz(z.size());
      loss += softmax_cross_entropy<T>(z, ex.labels[t], dz, scale);
      const std::size_t wi = plan_.first_head_param + 2 * t;
      auto gw = grads.tensors[wi].data();
      auto gb = grads.tensors[wi + 1].data();
      const auto& w = weights_[wi];
      for (std::size_t o = 0; o < z.size(); ++o) {
        const T g = dz[o];
        gb[o] += g;
        double* gw_row = gw.data() + o * width;
        const T* w_row = w.data() + o * width;
        for (std::size_t i = 0; i < width; ++i) {
          gw_row[i] += static_cast<double>(g * feat[i]);
          dfeat[i] += g * w_row[i];
        }
      }
    }
    backward(grads);
    return loss;
  }

  /// ReLU on/off pattern and max-pool winners for input x. Two inputs with equal
  /// signatures lie in the same linear region of the encoder.
  std::vector<std::uint32_t> kink_signature(std::span<const float> x) const {
    Buffers b;
    forward(x, b);
    std::vector<std::uint32_t> sig;
    for (std::size_t li = 0; li < plan_.layers.size(); ++li) {
      const auto& layer = plan_.layers[li];
      if (layer.activation == Activation::relu)
        for (T v : b.acts[li + 1]) sig.push_back(v > T{0} ? 1u : 0u);
      for (std::uint32_t idx : b.pool_index[li]) sig.push_back(idx);
    }
    return sig;
  }

 private:
  struct Buffers {
    std::vector<std::vector<T>> acts;  // acts[0] = input, acts[l + 1] = output of layer l
    std::vector<std::vector<std::uint32_t>> pool_index;
    std::vector<T> grad_out, grad_in;
  };

  void check_task(std::size_t task) const {
    require(task < task_count(), "unknown task id " + std::to_string(task));
  }

  void check_input(std::span<const float> x) const {
    require(x.size() == spec_.input.size(), "input has " + std::to_string(x.size()) + " values, model expects " +
                                                std::to_string(spec_.input.size()));
  }

  void check_example(const Example& ex) const {
    check_input(ex.x);
    require(ex.labels.size() == task_count() && ex.active.size() == task_count(),
            "example must carry one label and one active flag per task");
    for (std::size_t t = 0; t < task_count(); ++t)
      if (ex.active[t])
        require(ex.labels[t] < spec_.heads[t], "label " + std::to_string(ex.labels[t]) + " out of range for task " +
                                                   std::to_string(t));
  }

  void forward(std::span<const float> x, Buffers& b) const {
    check_input(x);
    const std::size_t n_layers = plan_.layers.size();
    b.acts.resize(n_layers + 1);
    b.pool_index.resize(n_layers);
    b.acts[0].assign(x.begin(), x.end());
    for (std::size_t li = 0; li < n_layers; ++li) {
      const auto& L = plan_.layers[li];
      const std::vector<T>& in = b.acts[li];
      std::vector<T>& out = b.acts[li + 1];
      out.assign(L.out_size(), T{0});
      b.pool_index[li].clear();
      switch (L.kind) {
        case detail::LayerPlan::Kind::conv: conv_forward(L, in, out); break;
        case detail::LayerPlan::Kind::dense: dense_forward(L, in, out); break;
        case detail::LayerPlan::Kind::flatten: out = in; break;
        case detail::LayerPlan::Kind::maxpool: pool_forward(L, in, out, b.pool_index[li]); break;
      }
      if (L.activation == Activation::relu)
        for (T& v : out) v = v > T{0} ? v : T{0};
    }
  }

  void conv_forward(const detail::LayerPlan& L, const std::vector<T>& in, std::vector<T>& out) const {
    const auto& w = weights_[L.weight];
    const auto& bias = weights_[L.bias];
    const std::size_t span = L.kernel * L.in_c;
    for (std::size_t oy = 0; oy < L.out_h; ++oy)
      for (std::size_t ox = 0; ox < L.out_w; ++ox) {
        T* o_ptr = out.data() + (oy * L.out_w + ox) * L.out_c;
        for (std::size_t o = 0; o < L.out_c; ++o) {
          T acc = bias[o];
          for (std::size_t ky = 0; ky < L.kernel; ++ky) {
            const T* in_row = in.data() + ((oy * L.stride + ky) * L.in_w + ox * L.stride) * L.in_c;
            const T* w_row = w.data() + (o * L.kernel + ky) * span;
            for (std::size_t t = 0; t < span; ++t) acc += in_row[t] * w_row[t];
          }
          o_ptr[o] = acc;
        }
      }
  }

  void dense_forward(const detail::LayerPlan& L, const std::vector<T>& in, std::vector<T>& out) const {
    const auto& w = weights_[L.weight];
    const auto& bias = weights_[L.bias];
    const std::size_t n_in = L.in_size();
    for (std::size_t o = 0; o < L.out_c; ++o) {
      T acc = bias[o];
      const T* row = w.data() + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) acc += row[i] * in[i];
      out[o] = acc;
    }
  }

  static void pool_forward(const detail::LayerPlan& L, const std::vector<T>& in, std::vector<T>& out,
                           std::vector<std::uint32_t>& index) {
    index.assign(L.out_size(), 0);
    for (std::size_t oy = 0; oy < L.out_h; ++oy)
      for (std::size_t ox = 0; ox < L.out_w; ++ox)
        for (std::size_t c = 0; c < L.out_c; ++c) {
          std::size_t best = ((oy * L.kernel) * L.in_w + ox * L.kernel) * L.in_c + c;
          for (std::size_t ky = 0; ky < L.kernel; ++ky)
            for (std::size_t kx = 0; kx < L.kernel; ++kx) {
              std::size_t at = ((oy * L.kernel + ky) * L.in_w + ox * L.kernel + kx) * L.in_c + c;
              if (in[at] > in[best]) best = at;
            }
          std::size_t o = (oy * L.out_w + ox) * L.out_c + c;
          out[o] = in[best];
          index[o] = static_cast<std::uint32_t>(best);
        }
  }

  // Propagates work_.grad_out (gradient w.r.t. the features) back through the encoder.
  void backward(GradientSet& grads) {
    for (std::size_t li = plan_.layers.size(); li-- > 0;) {
      const auto& L = plan_.layers[li];
      const std::vector<T>& in = work_.acts[li];
      const std::vector<T>& out = work_.acts[li + 1];
      std::vector<T>& dout = work_.grad_out;
      std::vector<T>& din = work_.grad_in;
      if (L.activation == Activation::relu)
        for (std::size_t i = 0; i < dout.size(); ++i)
          if (!(out[i] > T{0})) dout[i] = T{0};
      const bool need_input_grad = li > 0;
      din.assign(need_input_grad ? L.in_size() : 0, T{0});
      switch (L.kind) {
        case detail::LayerPlan::Kind::conv: conv_backward(L, in, dout, din, grads, need_input_grad); break;
        case detail::LayerPlan::Kind::dense: dense_backward(L, in, dout, din, grads, need_input_grad); break;
        case detail::LayerPlan::Kind::flatten:
          if (need_input_grad) din = dout;
          break;
        case detail::LayerPlan::Kind::maxpool:
          if (need_input_grad)
            for (std::size_t o = 0; o < dout.size(); ++o) din[work_.pool_index[li][o]] += dout[o];
          break;
      }
      std::swap(work_.grad_out, work_.grad_in);
    }
  }

  void conv_backward(const detail::LayerPlan& L, const std::vector<T>& in, const std::vector<T>& dout,
                     std::vector<T>& din, GradientSet& grads, bool need_input_grad) const {
    const auto& w = weights_[L.weight];
    auto gw = grads.tensors[L.weight].data();
    auto gb = grads.tensors[L.bias].data();
    const std::size_t span = L.kernel * L.in_c;
    for (std::size_t oy = 0; oy < L.out_h; ++oy)
      for (std::size_t ox = 0; ox < L.out_w; ++ox) {
        const T* d_ptr = dout.data() + (oy * L.out_w + ox) * L.out_c;
        for (std::size_t o = 0; o < L.out_c; ++o) {
          const T g = d_ptr[o];
          if (g == T{0}) continue;
          gb[o] += g;
          for (std::size_t ky = 0; ky < L.kernel; ++ky) {
            const std::size_t in_at = ((oy * L.stride + ky) * L.in_w + ox * L.stride) * L.in_c;
            const std::size_t w_at = (o * L.kernel + ky) * span;
            const T* in_row = in.data() + in_at;
            double* gw_row = gw.data() + w_at;
            for (std::size_t t = 0; t < span; ++t) gw_row[t] += static_cast<double>(g * in_row[t]);
            if (need_input_grad) {
              const T* w_row = w.data() + w_at;
              T* din_row = din.data() + in_at;
              for (std::size_t t = 0; t < span; ++t) din_row[t] += g * w_row[t];
            }
          }
        }
      }
  }

  void dense_backward(const detail::LayerPlan& L, const std::vector<T>& in, const std::vector<T>& dout,
                      std::vector<T>& din, GradientSet& grads, bool need_input_grad) const {
    const auto& w = weights_[L.weight];
    auto gw = grads.tensors[L.weight].data();
    auto gb = grads.tensors[L.bias].data();
    const std::size_t n_in = L.in_size();
    for (std::size_t o = 0; o < L.out_c; ++o) {
      const T g = dout[o];
      if (g == T{0}) continue;
      gb[o] += g;
      double* gw_row = gw.data() + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) gw_row[i] += static_cast<double>(g * in[i]);
      if (need_input_grad) {
        const T* w_row = w.data() + o * n_in;
        for (std::size_t i = 0; i < n_in; ++i) din[i] += g * w_row[i];
      }
    }
  }

  ModelSpec spec_;
  detail::NetworkPlan plan_;
  std::vector<std::vector<T>> weights_;
  Buffers work_;
};

/// A model specification together with its parameters.
struct Model {
  ModelSpec spec;
  ModelParams params;
};

inline std::vector<double> forward_features(const Model& model, std::span<const float> x) {
  return Network<double>(model.spec, model.params).features(x);
}

inline std::vector<double> forward_logits(const Model& model, std::span<const float> x, std::size_t task) {
  return Network<double>(model.spec, model.params).logits(x, task);
}

inline std::size_t predict(const Model& model, std::span<const float> x, std::size_t task) {
  return Network<double>(model.spec, model.params).predict(x, task);
}

struct LossAndGrad {
  double loss = 0.0;
  GradientSet grads;
};

/// Mean over the batch of the summed cross-entropy of every active task, with exact gradients.
template <typename T = double>
LossAndGrad loss_and_grad(const ModelSpec& spec, const ModelParams& params, std::span<const Example> batch) {
  require(!batch.empty(), "loss_and_grad needs a nonempty batch");
  Network<T> net(spec, params);
  LossAndGrad out{0.0, GradientSet::zeros_like(params)};
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) out.loss += net.accumulate(ex, out.grads, scale);
  out.loss *= scale;
  return out;
}

// ---- JSON -------------------------------------------------------------------

inline nlohmann::json to_json(const ModelSpec& spec) {
  using nlohmann::json;
  auto act = [](Activation a) { return a == Activation::relu ? "relu" : "none"; };
  json layers = json::array();
  for (const auto& layer : spec.encoder) {
    if (const auto* c = std::get_if<ConvLayer>(&layer))
      layers.push_back({{"type", "conv"}, {"out_channels", c->out_channels}, {"kernel", c->kernel},
                        {"stride", c->stride}, {"activation", act(c->activation)}});
    else if (const auto* d = std::get_if<DenseLayer>(&layer))
      layers.push_back({{"type", "dense"}, {"width", d->width}, {"activation", act(d->activation)}});
    else if (std::holds_alternative<FlattenLayer>(layer))
      layers.push_back({{"type", "flatten"}});
    else
      layers.push_back({{"type", "maxpool"}, {"window", std::get<MaxPoolLayer>(layer).window}});
  }
  return {{"input", {spec.input.height, spec.input.width, spec.input.channels}},
          {"layers", layers},
          {"heads", spec.heads}};
}

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
  try {
    ModelSpec spec;
    const auto& in = j.at("input");
    require(in.is_array() && in.size() == 3, "model input must be [H, W, C]");
    spec.input = {in[0].get<std::size_t>(), in[1].get<std::size_t>(), in[2].get<std::size_t>()};
    auto act = [](const nlohmann::json& l) {
      std::string a = l.value("activation", "relu");
      require(a == "relu" || a == "none", "unsupported activation '" + a + "'");
      return a == "relu" ? Activation::relu : Activation::none;
    };
    for (const auto& l : j.at("layers")) {
      std::string type = l.at("type").get<std::string>();
      if (type == "conv")
        spec.encoder.emplace_back(ConvLayer{l.at("out_channels").get<std::size_t>(), l.at("kernel").get<std::size_t>(),
                                            l.value("stride", std::size_t{1}), act(l)});
      else if (type == "dense")
        spec.encoder.emplace_back(DenseLayer{l.at("width").get<std::size_t>(), act(l)});
      else if (type == "flatten")
        spec.encoder.emplace_back(FlattenLayer{});
      else if (type == "maxpool")
        spec.encoder.emplace_back(MaxPoolLayer{l.at("window").get<std::size_t>()});
      else
        throw InvalidInput("unknown layer type '" + type + "'");
    }
    spec.heads = j.at("heads").get<std::vector<std::size_t>>();
    detail::make_plan(spec);
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed model spec: ") + e.what());
  }
}

/// Desk-scale encoder for 32x32x3 inputs: two strided convolutions and one dense layer.
inline ModelSpec default_model_spec(ImageShape input, std::vector<std::size_t> heads) {
  ModelSpec spec;
  spec.input = input;
  spec.encoder = {ConvLayer{8, 4, 4, Activation::relu}, ConvLayer{16, 2, 2, Activation::relu}, FlattenLayer{},
                  DenseLayer{32, Activation::relu}};
  spec.heads = std::move(heads);
  return spec;
}

}  // namespace mtk
