#pragma once

#include <cstddef>
#include <vector>

#include "dvae/tensor.hpp"

namespace dvae {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second-moment state for one group of tensors updated together.
// Tensors are registered once (in a fixed order) and then stepped with
// matching gradient lists, so updates are deterministic.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Registers a parameter tensor; returns its slot index.
  std::size_t add_param(const Tensor& p);

  // params[i]/grads[i] must match the shapes registered at slot i.
  void step(std::vector<Tensor*> params, const std::vector<const Tensor*>& grads);

  std::size_t t() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace dvae
