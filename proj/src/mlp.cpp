#include "dvae/mlp.hpp"

#include <cmath>
#include <limits>

#include "dvae/errors.hpp"
#include "dvae/linalg.hpp"

namespace dvae {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::LeakyRelu: return "leaky_relu";
    case Activation::Sigmoid: return "sigmoid";
  }
  throw UsageError("unknown activation");
}

Activation activation_from_name(const std::string& name) {
  if (name == "identity") return Activation::Identity;
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  if (name == "leaky_relu") return Activation::LeakyRelu;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw UsageError("unknown activation name: " + name);
}

namespace {

double act_apply(Activation a, double x) {
  switch (a) {
    case Activation::Identity: return x;
    case Activation::Tanh: return std::tanh(x);
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::LeakyRelu: return x > 0.0 ? x : kLeakySlope * x;
    case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-x));
  }
  return x;
}

double act_derivative(Activation a, double pre) {
  switch (a) {
    case Activation::Identity: return 1.0;
    case Activation::Tanh: {
      const double t = std::tanh(pre);
      return 1.0 - t * t;
    }
    case Activation::Relu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::LeakyRelu: return pre > 0.0 ? 1.0 : kLeakySlope;
    case Activation::Sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-pre));
      return s * (1.0 - s);
    }
  }
  return 1.0;
}

bool has_kink(Activation a) { return a == Activation::Relu || a == Activation::LeakyRelu; }

}  // namespace

std::size_t Mlp::in_dim() const {
  if (layers.empty()) throw UsageError("empty network");
  return layers.front().weight.cols();
}

std::size_t Mlp::out_dim() const {
  if (layers.empty()) throw UsageError("empty network");
  return layers.back().weight.rows();
}

std::size_t Mlp::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.numel() + l.bias.numel();
  return n;
}

Mlp Mlp::make(const std::vector<std::size_t>& dims, const std::vector<Activation>& acts,
              Prng& rng) {
  if (dims.size() < 2) throw UsageError("Mlp::make: need at least input and output dims");
  if (acts.size() != dims.size() - 1)
    throw UsageError("Mlp::make: one activation per layer required");
  Mlp net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::size_t fan_in = dims[i], fan_out = dims[i + 1];
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    DenseLayer layer;
    layer.weight = rng.uniform_tensor({fan_out, fan_in}, -a, a);
    layer.bias = Tensor(std::vector<std::size_t>{fan_out});
    layer.act = acts[i];
    net.layers.push_back(std::move(layer));
  }
  return net;
}

Tensor mlp_forward(const Mlp& net, const Tensor& x) { return mlp_forward_cached(net, x).output; }

MlpCache mlp_forward_cached(const Mlp& net, const Tensor& x) {
  if (x.ndim() != 2) throw ShapeError("mlp forward: expected a batch matrix");
  if (x.cols() != net.in_dim())
    throw ShapeError("mlp forward: input width " + std::to_string(x.cols()) +
                     " != net in_dim " + std::to_string(net.in_dim()));
  MlpCache cache;
  cache.kink_margin = std::numeric_limits<double>::infinity();
  Tensor cur = x;
  for (const auto& layer : net.layers) {
    cache.inputs.push_back(cur);
    Tensor pre = mat_mul(cur, transpose(layer.weight));
    const std::size_t out = layer.weight.rows();
    for (std::size_t i = 0; i < pre.rows(); ++i)
      for (std::size_t j = 0; j < out; ++j) pre.at(i, j) += layer.bias[j];
    if (has_kink(layer.act))
      for (std::size_t i = 0; i < pre.numel(); ++i)
        cache.kink_margin = std::min(cache.kink_margin, std::fabs(pre[i]));
    cache.preacts.push_back(pre);
    Tensor post = pre;
    for (std::size_t i = 0; i < post.numel(); ++i) post[i] = act_apply(layer.act, post[i]);
    cur = std::move(post);
  }
  cache.output = std::move(cur);
  return cache;
}

MlpGrads MlpGrads::zeros_like(const Mlp& net) {
  MlpGrads g;
  for (const auto& l : net.layers)
    g.layers.push_back({Tensor(l.weight.shape()), Tensor(l.bias.shape())});
  return g;
}

MlpGrads& MlpGrads::operator+=(const MlpGrads& other) {
  if (layers.size() != other.layers.size()) throw ShapeError("MlpGrads: layer count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weight += other.layers[i].weight;
    layers[i].bias += other.layers[i].bias;
  }
  return *this;
}

MlpGrads& MlpGrads::operator*=(double s) {
  for (auto& l : layers) {
    l.weight *= s;
    l.bias *= s;
  }
  return *this;
}

Tensor mlp_backward(const Mlp& net, const MlpCache& cache, const Tensor& upstream,
                    MlpGrads& grads) {
  if (grads.layers.size() != net.layers.size())
    throw ShapeError("mlp backward: grads not shaped like the net");
  if (!upstream.same_shape(cache.output))
    throw ShapeError("mlp backward: upstream shape mismatch");

  Tensor delta = upstream;
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const DenseLayer& layer = net.layers[li];
    const Tensor& pre = cache.preacts[li];
    // Through the activation.
    for (std::size_t i = 0; i < delta.numel(); ++i)
      delta[i] *= act_derivative(layer.act, pre[i]);
    // Parameter gradients.
    grads.layers[li].weight += mat_mul(transpose(delta), cache.inputs[li]);
    Tensor& db = grads.layers[li].bias;
    for (std::size_t i = 0; i < delta.rows(); ++i)
      for (std::size_t j = 0; j < delta.cols(); ++j) db[j] += delta.at(i, j);
    // Into the previous layer.
    delta = mat_mul(delta, layer.weight);
  }
  return delta;
}

}  // namespace dvae
