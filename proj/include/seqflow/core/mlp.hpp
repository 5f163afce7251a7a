#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include <unsupported/Eigen/SpecialFunctions>

#include "seqflow/core/error.hpp"
#include "seqflow/core/matrix.hpp"
#include "seqflow/core/rng.hpp"

namespace seqflow {

enum class Activation { tanh, gelu };

inline const char* to_string(Activation a) { return a == Activation::tanh ? "tanh" : "gelu"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "gelu") return Activation::gelu;
  throw ValidationError("unknown activation '" + s + "'");
}

// Fully connected network: input -> hidden... -> output, activation after
// every hidden layer, linear head. `time_embed_dim` is carried for the
// velocity-net wrapper, which places that many sinusoidal features inside
// `input_dim`; the network itself treats its input as opaque.
struct MlpConfig {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 1;
  Activation activation = Activation::tanh;
  std::size_t time_embed_dim = 0;

  bool operator==(const MlpConfig&) const = default;
};

// An empty hidden list is accepted and gives a single affine map.
inline void validate(const MlpConfig& c) {
  if (c.input_dim < 1) throw ValidationError("mlp input_dim must be >= 1");
  if (c.output_dim < 1) throw ValidationError("mlp output_dim must be >= 1");
  for (auto h : c.hidden_dims) {
    if (h < 1) throw ValidationError("mlp hidden dims must be >= 1");
  }
  if (c.time_embed_dim > c.input_dim) throw ValidationError("mlp time_embed_dim exceeds input_dim");
}

struct LayerSlice {
  std::size_t fan_in;
  std::size_t fan_out;
  std::size_t weight_offset;  // fan_out x fan_in, row-major
  std::size_t bias_offset;    // fan_out
};

inline std::vector<LayerSlice> layer_layout(const MlpConfig& c) {
  validate(c);
  std::vector<std::size_t> dims;
  dims.push_back(c.input_dim);
  dims.insert(dims.end(), c.hidden_dims.begin(), c.hidden_dims.end());
  dims.push_back(c.output_dim);
  std::vector<LayerSlice> out;
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    LayerSlice s{dims[l], dims[l + 1], offset, offset + dims[l] * dims[l + 1]};
    offset = s.bias_offset + s.fan_out;
    out.push_back(s);
  }
  return out;
}

inline std::size_t param_count(const MlpConfig& c) {
  const auto layers = layer_layout(c);
  return layers.back().bias_offset + layers.back().fan_out;
}

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
template <class T>
Vector<T> init_params(const MlpConfig& c, Rng& rng) {
  Vector<T> p(static_cast<Eigen::Index>(param_count(c)));
  for (const auto& layer : layer_layout(c)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.fan_in));
    const auto n = layer.fan_in * layer.fan_out + layer.fan_out;
    for (std::size_t i = 0; i < n; ++i) {
      p[static_cast<Eigen::Index>(layer.weight_offset + i)] = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
    }
  }
  return p;
}

// Activations kept by the forward pass for reverse mode.
template <class T>
struct MlpTape {
  std::vector<Matrix<T>> layer_inputs;  // input to layer l (batch x fan_in)
  std::vector<Matrix<T>> pre_acts;      // pre-activations of hidden layers (gelu only)
};

namespace detail {

// Exact erf-based GELU and its derivative, vectorized over arrays.
template <class T>
Matrix<T> gelu(const Matrix<T>& z) {
  const auto a = z.array();
  return (static_cast<T>(0.5) * a * (static_cast<T>(1) + (a * static_cast<T>(std::numbers::sqrt2 / 2)).erf())).matrix();
}

template <class T>
Matrix<T> gelu_grad(const Matrix<T>& z) {
  const auto a = z.array();
  const auto cdf = static_cast<T>(0.5) * (static_cast<T>(1) + (a * static_cast<T>(std::numbers::sqrt2 / 2)).erf());
  const auto pdf = (static_cast<T>(-0.5) * a.square()).exp() * static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return (cdf + a * pdf).matrix();
}

template <class T>
auto weights(const Vector<T>& p, const LayerSlice& s) {
  return Eigen::Map<const Matrix<T>>(p.data() + s.weight_offset, static_cast<Eigen::Index>(s.fan_out),
                                     static_cast<Eigen::Index>(s.fan_in));
}

template <class T>
auto bias(const Vector<T>& p, const LayerSlice& s) {
  return Eigen::Map<const Vector<T>>(p.data() + s.bias_offset, static_cast<Eigen::Index>(s.fan_out));
}

}  // namespace detail

// Batched forward pass; each row of `input` is one sample.
template <class T>
Matrix<T> mlp_forward_batch(const Vector<T>& params, const MlpConfig& config, const Matrix<T>& input,
                            MlpTape<T>* tape = nullptr) {
  const auto layers = layer_layout(config);
  require_dim("mlp params", param_count(config), static_cast<std::size_t>(params.size()));
  require_dim("mlp input width", config.input_dim, static_cast<std::size_t>(input.cols()));
  if (tape) {
    tape->layer_inputs.clear();
    tape->pre_acts.clear();
  }
  Matrix<T> h = input;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix<T> z(h.rows(), static_cast<Eigen::Index>(layers[l].fan_out));
    z.noalias() = h * detail::weights(params, layers[l]).transpose();
    z.rowwise() += detail::bias(params, layers[l]).transpose();
    if (tape) tape->layer_inputs.push_back(std::move(h));
    if (l + 1 == layers.size()) {
      h = std::move(z);
      break;
    }
    if (config.activation == Activation::tanh) {
      h = z.array().tanh().matrix();
    } else {
      h = detail::gelu(z);
      if (tape) tape->pre_acts.push_back(std::move(z));
    }
  }
  require_finite(h, "mlp output");
  return h;
}

// Reverse pass through a recorded tape. Parameter gradients of
// sum_rows <upstream_row, output_row> are added into `param_grads`; the
// gradient w.r.t. the batch input is returned.
template <class T>
Matrix<T> mlp_backward_batch(const Vector<T>& params, const MlpConfig& config, const MlpTape<T>& tape,
                             const Matrix<T>& upstream, Vector<T>& param_grads) {
  const auto layers = layer_layout(config);
  require_dim("mlp param grads", param_count(config), static_cast<std::size_t>(param_grads.size()));
  require_dim("mlp upstream width", config.output_dim, static_cast<std::size_t>(upstream.cols()));
  require_dim("mlp tape depth", layers.size(), tape.layer_inputs.size());
  Matrix<T> g = upstream;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& s = layers[li];
    const auto& h = tape.layer_inputs[li];
    Eigen::Map<Matrix<T>> gw(param_grads.data() + s.weight_offset, static_cast<Eigen::Index>(s.fan_out),
                             static_cast<Eigen::Index>(s.fan_in));
    Eigen::Map<Vector<T>> gb(param_grads.data() + s.bias_offset, static_cast<Eigen::Index>(s.fan_out));
    gw.noalias() += g.transpose() * h;
    gb += g.colwise().sum().transpose();
    Matrix<T> gin(g.rows(), static_cast<Eigen::Index>(s.fan_in));
    gin.noalias() = g * detail::weights(params, s);
    if (li == 0) {
      g = std::move(gin);
      break;
    }
    // `h` is the activated output of layer li-1.
    if (config.activation == Activation::tanh) {
      g = gin.array() * (static_cast<T>(1) - h.array().square());
    } else {
      g = gin.array() * detail::gelu_grad(tape.pre_acts[li - 1]).array();
    }
  }
  require_finite(g, "mlp input gradient");
  require_finite(param_grads, "mlp parameter gradient");
  return g;
}

template <class T>
Vector<T> mlp_forward(const Vector<T>& params, const MlpConfig& config, const Vector<T>& input) {
  require_dim("mlp input", config.input_dim, static_cast<std::size_t>(input.size()));
  Matrix<T> x = input.transpose();
  return mlp_forward_batch(params, config, x).row(0).transpose();
}

template <class T>
struct MlpGradients {
  Vector<T> params;
  Vector<T> input;
};

// Gradients of <upstream, mlp_forward(params, input)>.
template <class T>
MlpGradients<T> mlp_backward(const Vector<T>& params, const MlpConfig& config, const Vector<T>& input,
                             const Vector<T>& upstream) {
  require_dim("mlp input", config.input_dim, static_cast<std::size_t>(input.size()));
  require_dim("mlp upstream", config.output_dim, static_cast<std::size_t>(upstream.size()));
  MlpTape<T> tape;
  Matrix<T> x = input.transpose();
  mlp_forward_batch(params, config, x, &tape);
  MlpGradients<T> out;
  out.params = Vector<T>::Zero(params.size());
  Matrix<T> u = upstream.transpose();
  out.input = mlp_backward_batch(params, config, tape, u, out.params).row(0).transpose();
  return out;
}

}  // namespace seqflow
