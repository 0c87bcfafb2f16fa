#include "dvae/adam.hpp"

#include <cmath>

#include "dvae/errors.hpp"

namespace dvae {

std::size_t Adam::add_param(const Tensor& p) {
  m_.emplace_back(p.shape());
  v_.emplace_back(p.shape());
  return m_.size() - 1;
}

void Adam::step(std::vector<Tensor*> params, const std::vector<const Tensor*>& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw UsageError("Adam::step: tensor count does not match registered params");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = *grads[k];
    if (!p.same_shape(m_[k]) || !g.same_shape(m_[k]))
      throw ShapeError("Adam::step: shape mismatch at slot " + std::to_string(k));
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace dvae
