#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lex/diffnet/params.hpp"
#include "lex/rng.hpp"

namespace lex::diffnet {

enum class Activation { relu, softmax, sigmoid, identity };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::softmax: return "softmax";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "softmax") return Activation::softmax;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + s + "'");
}

struct MlpSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 1;
  Activation hidden_activation = Activation::relu;
  Activation output_activation = Activation::identity;

  void validate() const {
    if (input_dim == 0 || output_dim == 0) throw ConfigError("MLP dimensions must be positive");
    for (auto h : hidden_dims)
      if (h == 0) throw ConfigError("MLP hidden widths must be positive");
    if (hidden_activation != Activation::relu) throw ConfigError("hidden activation must be relu");
    if (output_activation == Activation::softmax && output_dim < 2)
      throw ConfigError("softmax output needs at least two units");
  }

  std::size_t layer_count() const { return hidden_dims.size() + 1; }
  std::size_t fan_in(std::size_t layer) const { return layer == 0 ? input_dim : hidden_dims[layer - 1]; }
  std::size_t fan_out(std::size_t layer) const {
    return layer == hidden_dims.size() ? output_dim : hidden_dims[layer];
  }

  bool operator==(const MlpSpec&) const = default;
};

inline std::string weight_name(std::size_t layer) { return "W" + std::to_string(layer); }
inline std::string bias_name(std::size_t layer) { return "b" + std::to_string(layer); }

/// Fresh parameters, uniform in +-sqrt(1/fan_in) for weights and biases.
template <typename T>
ParamStore<T> init_mlp(const MlpSpec& spec, Rng& rng) {
  spec.validate();
  ParamStore<T> store;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const std::size_t in = spec.fan_in(l), out = spec.fan_out(l);
    const double bound = std::sqrt(1.0 / static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor<T> w = Tensor<T>::matrix(in, out);
    for (auto& v : w.storage()) v = static_cast<T>(u(rng));
    Tensor<T> b(Shape{out});
    for (auto& v : b.storage()) v = static_cast<T>(u(rng));
    store.add(weight_name(l), std::move(w));
    store.add(bias_name(l), std::move(b));
  }
  return store;
}

namespace detail {

template <typename T>
void check_params(const MlpSpec& spec, const ParamStore<T>& params) {
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const auto& w = params.get(weight_name(l));
    const auto& b = params.get(bias_name(l));
    if (w.shape() != Shape{spec.fan_in(l), spec.fan_out(l)} || b.shape() != Shape{spec.fan_out(l)})
      throw DimensionError("parameters of layer " + std::to_string(l) + " do not match the MLP spec");
  }
}

}  // namespace detail

/// Output before the final activation. With `track_params` false the weights
/// enter the graph as constants, so no gradient reaches the store.
template <typename T>
Var<T> mlp_preactivation(const MlpSpec& spec, const ParamStore<T>& params, const Var<T>& x,
                         bool track_params = true) {
  if (x.shape().size() != 2 || x.cols() != spec.input_dim)
    throw DimensionError("mlp input " + shape_str(x.shape()) + " does not match input_dim " +
                         std::to_string(spec.input_dim));
  detail::check_params(spec, params);
  auto p = [&](const std::string& name) { return track_params ? params.get(name) : constant(params.get(name).value()); };
  Var<T> h = x;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    h = add_bias(matmul(h, p(weight_name(l))), p(bias_name(l)));
    if (l + 1 < spec.layer_count()) h = relu(h);
  }
  return h;
}

template <typename T>
Var<T> apply_activation(Activation a, const Var<T>& z) {
  switch (a) {
    case Activation::softmax: return softmax_rows(z);
    case Activation::sigmoid: return sigmoid(z);
    case Activation::relu: return relu(z);
    case Activation::identity: return z;
  }
  return z;
}

template <typename T>
Var<T> mlp_forward(const MlpSpec& spec, const ParamStore<T>& params, const Var<T>& x, bool track_params = true) {
  return apply_activation(spec.output_activation, mlp_preactivation(spec, params, x, track_params));
}

template <typename T>
Tensor<T> mlp_forward(const MlpSpec& spec, const ParamStore<T>& params, const Tensor<T>& x) {
  return mlp_forward(spec, params, constant(x), false).value();
}

}  // namespace lex::diffnet
