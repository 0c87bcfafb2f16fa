#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dvae/prng.hpp"
#include "dvae/tensor.hpp"

namespace dvae {

enum class Activation { Identity, Tanh, Relu, LeakyRelu, Sigmoid };

// Negative-side slope of LeakyRelu.
inline constexpr double kLeakySlope = 0.2;

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct DenseLayer {
  Tensor weight;  // out x in
  Tensor bias;    // rank-1, length out
  Activation act = Activation::Identity;
};

// Fully-connected net over row-major batches: each layer maps
// (batch x in) -> (batch x out) via x W^T + b followed by the activation.
struct Mlp {
  std::vector<DenseLayer> layers;

  std::size_t in_dim() const;
  std::size_t out_dim() const;
  std::size_t param_count() const;

  // Glorot-uniform weights, zero biases. dims = {in, h1, ..., out};
  // acts has dims.size()-1 entries.
  static Mlp make(const std::vector<std::size_t>& dims, const std::vector<Activation>& acts,
                  Prng& rng);
};

struct MlpCache {
  std::vector<Tensor> inputs;   // input fed to each layer
  std::vector<Tensor> preacts;  // x W^T + b per layer
  Tensor output;
  // Smallest |preactivation| over kinked activations (relu family);
  // +inf when the net has none. Used by gradcheck to skip kink crossings.
  double kink_margin = 0.0;
};

Tensor mlp_forward(const Mlp& net, const Tensor& x);
MlpCache mlp_forward_cached(const Mlp& net, const Tensor& x);

struct LayerGrads {
  Tensor weight;
  Tensor bias;
};

struct MlpGrads {
  std::vector<LayerGrads> layers;

  static MlpGrads zeros_like(const Mlp& net);
  MlpGrads& operator+=(const MlpGrads& other);
  MlpGrads& operator*=(double s);
};

// Vector-Jacobian product. Accumulates parameter gradients into `grads`
// and returns the gradient with respect to the input batch.
Tensor mlp_backward(const Mlp& net, const MlpCache& cache, const Tensor& upstream,
                    MlpGrads& grads);

}  // namespace dvae
