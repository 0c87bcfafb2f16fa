#include "dvae/var_dynamics.hpp"

#include <algorithm>
#include <cstddef>
#include <iostream>
#include <utility>

#include "dvae/errors.hpp"
#include "dvae/linalg.hpp"

namespace dvae {

namespace {

void require_square(const Tensor& m, const char* name) {
  if (m.ndim() != 2 || m.rows() != m.cols())
    throw ShapeError(std::string(name) + " must be a square matrix");
}

void require_same_square(const Tensor& a, const Tensor& b, const char* what) {
  require_square(a, what);
  require_square(b, what);
  if (a.rows() != b.rows()) throw ShapeError(std::string(what) + ": dimension mismatch");
}

// C += s * A B^T
void add_abt(Tensor& c, const Tensor& a, const Tensor& b, double s = 1.0) {
  const std::size_t n = a.rows(), k = a.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a.at(i, p) * b.at(j, p);
      c.at(i, j) += s * acc;
    }
}

void place_block(Tensor& big, const Tensor& blk, std::size_t r0, std::size_t c0) {
  for (std::size_t i = 0; i < blk.rows(); ++i)
    for (std::size_t j = 0; j < blk.cols(); ++j) big.at(r0 + i, c0 + j) = blk.at(i, j);
}

}  // namespace

std::size_t DynamicLayerF::n() const {
  const Tensor& ref = order == 1 ? A : F1;
  if (ref.ndim() != 2) throw UsageError("dynamic layer blocks not initialized");
  return ref.rows();
}

DynamicLayerF DynamicLayerF::order1(Tensor A, Tensor B) {
  require_same_square(A, B, "dynamic layer blocks");
  DynamicLayerF f;
  f.order = 1;
  f.A = std::move(A);
  f.B = std::move(B);
  return f;
}

DynamicLayerF DynamicLayerF::order2(Tensor F1, Tensor F2, Tensor F3, Tensor F4, Tensor F5) {
  require_same_square(F1, F2, "dynamic layer blocks");
  require_same_square(F1, F3, "dynamic layer blocks");
  require_same_square(F1, F4, "dynamic layer blocks");
  require_same_square(F1, F5, "dynamic layer blocks");
  DynamicLayerF f;
  f.order = 2;
  f.F1 = std::move(F1);
  f.F2 = std::move(F2);
  f.F3 = std::move(F3);
  f.F4 = std::move(F4);
  f.F5 = std::move(F5);
  return f;
}

Tensor dense_F(const DynamicLayerF& layer) {
  const std::size_t n = layer.n();
  if (layer.order == 1) {
    Tensor f(2 * n, 2 * n);
    place_block(f, Tensor::identity(n), 0, 0);
    place_block(f, layer.A, n, 0);
    place_block(f, layer.B, n, n);
    return f;
  }
  Tensor f(3 * n, 3 * n);
  place_block(f, Tensor::identity(n), 0, 0);
  place_block(f, layer.F1, n, 0);
  place_block(f, layer.F2, n, n);
  place_block(f, layer.F3, 2 * n, 0);
  place_block(f, layer.F4, 2 * n, n);
  place_block(f, layer.F5, 2 * n, 2 * n);
  return f;
}

Tensor joint_cov_order1(const Tensor& A) {
  require_square(A, "A");
  const std::size_t n = A.rows();
  Tensor c(2 * n, 2 * n);
  place_block(c, Tensor::identity(n), 0, 0);
  place_block(c, Tensor::identity(n), n, n);
  place_block(c, A, n, 0);
  place_block(c, transpose(A), 0, n);
  return c;
}

namespace {

// Returns x as a batch matrix plus a flag to undo the promotion.
std::pair<Tensor, bool> as_batch(const Tensor& x, std::size_t width, const char* what) {
  if (x.ndim() == 1) {
    if (x.numel() != width)
      throw ShapeError(std::string(what) + ": expected length " + std::to_string(width));
    return {x.reshaped({1, width}), true};
  }
  if (x.ndim() != 2 || x.cols() != width)
    throw ShapeError(std::string(what) + ": expected width " + std::to_string(width));
  return {x, false};
}

Tensor maybe_squeeze(Tensor t, bool was_vector) {
  if (was_vector) return t.reshaped({t.numel()});
  return t;
}

}  // namespace

StatePair dynamic_layer_forward(const Tensor& x, const DynamicLayerF& layer) {
  if (layer.order != 1) throw UsageError("dynamic_layer_forward: order-1 layer required");
  const std::size_t n = layer.n();
  auto [xb, was_vec] = as_batch(x, 2 * n, "dynamic_layer_forward");
  const Tensor x1 = xb.cols_slice(0, n);
  const Tensor x2 = xb.cols_slice(n, 2 * n);
  Tensor h2 = mat_mul(x1, transpose(layer.A));
  h2 += mat_mul(x2, transpose(layer.B));
  return {maybe_squeeze(x1, was_vec), maybe_squeeze(std::move(h2), was_vec)};
}

StateTriple dynamic_layer_forward2(const Tensor& x, const DynamicLayerF& layer) {
  if (layer.order != 2) throw UsageError("dynamic_layer_forward2: order-2 layer required");
  const std::size_t n = layer.n();
  auto [xb, was_vec] = as_batch(x, 3 * n, "dynamic_layer_forward2");
  const Tensor x1 = xb.cols_slice(0, n);
  const Tensor x2 = xb.cols_slice(n, 2 * n);
  const Tensor x3 = xb.cols_slice(2 * n, 3 * n);
  Tensor h2 = mat_mul(x1, transpose(layer.F1));
  h2 += mat_mul(x2, transpose(layer.F2));
  Tensor h3 = mat_mul(x1, transpose(layer.F3));
  h3 += mat_mul(x2, transpose(layer.F4));
  h3 += mat_mul(x3, transpose(layer.F5));
  return {maybe_squeeze(x1, was_vec), maybe_squeeze(std::move(h2), was_vec),
          maybe_squeeze(std::move(h3), was_vec)};
}

double stationarity_residual(const Tensor& A, const Tensor& B) {
  require_same_square(A, B, "stationarity_residual");
  const std::size_t n = A.rows();
  Tensor m(n, n);
  add_abt(m, A, A);
  add_abt(m, B, B);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) -= 1.0;
  const double f = m.frobenius_norm();
  return f * f;
}

void stationarity_residual_grad(const Tensor& A, const Tensor& B, Tensor& dA, Tensor& dB,
                                double weight) {
  require_same_square(A, B, "stationarity_residual_grad");
  const std::size_t n = A.rows();
  Tensor m(n, n);
  add_abt(m, A, A);
  add_abt(m, B, B);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) -= 1.0;
  Tensor ga = mat_mul(m, A);
  Tensor gb = mat_mul(m, B);
  ga *= 4.0 * weight;
  gb *= 4.0 * weight;
  dA += ga;
  dB += gb;
}

Tensor sample_var1(const Var1Model& model, const Tensor& h0, std::size_t steps, Prng& rng) {
  require_same_square(model.A, model.B, "sample_var1 model");
  const std::size_t n = model.A.rows();
  if (h0.numel() != n) throw ShapeError("sample_var1: h0 length mismatch");
  if (spectral_radius(model.A) >= 1.0)
    std::cerr << "warning: sample_var1: spectral radius of A is >= 1; "
                 "the sampled process is not stationary\n";
  Tensor traj(steps, n);
  if (steps == 0) return traj;
  for (std::size_t j = 0; j < n; ++j) traj.at(0, j) = h0[j];
  Tensor h = h0.reshaped({n});
  for (std::size_t t = 1; t < steps; ++t) {
    Tensor v(std::vector<std::size_t>{n});
    for (std::size_t j = 0; j < n; ++j) v[j] = rng.gaussian();
    Tensor next = mat_vec(model.A, h);
    next += mat_vec(model.B, v);
    for (std::size_t j = 0; j < n; ++j) traj.at(t, j) = next[j];
    h = std::move(next);
  }
  return traj;
}

Tensor joint_cov_order2(const DynamicLayerF& layer) {
  if (layer.order != 2) throw UsageError("joint_cov_order2: order-2 layer required");
  const std::size_t n = layer.n();
  Tensor c(3 * n, 3 * n);
  place_block(c, Tensor::identity(n), 0, 0);
  place_block(c, transpose(layer.F1), 0, n);
  place_block(c, transpose(layer.F3), 0, 2 * n);
  place_block(c, layer.F1, n, 0);
  place_block(c, layer.F3, 2 * n, 0);

  Tensor b22(n, n);
  add_abt(b22, layer.F1, layer.F1);
  add_abt(b22, layer.F2, layer.F2);
  place_block(c, b22, n, n);

  // (3,2) block F3 F1^T + F4 F2^T; (2,3) is its transpose.
  Tensor b32(n, n);
  add_abt(b32, layer.F3, layer.F1);
  add_abt(b32, layer.F4, layer.F2);
  place_block(c, b32, 2 * n, n);
  place_block(c, transpose(b32), n, 2 * n);

  Tensor b33(n, n);
  add_abt(b33, layer.F3, layer.F3);
  add_abt(b33, layer.F4, layer.F4);
  add_abt(b33, layer.F5, layer.F5);
  place_block(c, b33, 2 * n, 2 * n);
  return c;
}

namespace {

struct Order2Residuals {
  Tensor m1;  // F1 F1^T + F2 F2^T - I
  Tensor m2;  // F3 F3^T + F4 F4^T + F5 F5^T - I
  Tensor m3;  // F3 F1^T + F4 F2^T - F1
};

Order2Residuals order2_residual_blocks(const DynamicLayerF& f) {
  const std::size_t n = f.n();
  Order2Residuals r{Tensor(n, n), Tensor(n, n), Tensor(n, n)};
  add_abt(r.m1, f.F1, f.F1);
  add_abt(r.m1, f.F2, f.F2);
  add_abt(r.m2, f.F3, f.F3);
  add_abt(r.m2, f.F4, f.F4);
  add_abt(r.m2, f.F5, f.F5);
  add_abt(r.m3, f.F3, f.F1);
  add_abt(r.m3, f.F4, f.F2);
  r.m3 -= f.F1;
  for (std::size_t i = 0; i < n; ++i) {
    r.m1.at(i, i) -= 1.0;
    r.m2.at(i, i) -= 1.0;
  }
  return r;
}

}  // namespace

double order2_regularizer(const DynamicLayerF& layer, double l1, double l2, double l3) {
  if (layer.order != 2) throw UsageError("order2_regularizer: order-2 layer required");
  if (l1 <= 0.0 || l2 <= 0.0 || l3 <= 0.0)
    throw UsageError("order2_regularizer: weights must be positive");
  const Order2Residuals r = order2_residual_blocks(layer);
  const double f1 = r.m1.frobenius_norm();
  const double f2 = r.m2.frobenius_norm();
  const double f3 = r.m3.frobenius_norm();
  return l1 * f1 * f1 + l2 * f2 * f2 + l3 * f3 * f3;
}

Order2Grads order2_regularizer_grad(const DynamicLayerF& layer, double l1, double l2,
                                    double l3) {
  if (layer.order != 2) throw UsageError("order2_regularizer_grad: order-2 layer required");
  const Order2Residuals r = order2_residual_blocks(layer);
  Order2Grads g;
  // Symmetric terms: d ||sum Fi Fi^T - I||^2 / dFi = 4 M Fi.
  g.F1 = mat_mul(r.m1, layer.F1) * (4.0 * l1);
  g.F2 = mat_mul(r.m1, layer.F2) * (4.0 * l1);
  g.F3 = mat_mul(r.m2, layer.F3) * (4.0 * l2);
  g.F4 = mat_mul(r.m2, layer.F4) * (4.0 * l2);
  g.F5 = mat_mul(r.m2, layer.F5) * (4.0 * l2);
  // Cross term M3 = F3 F1^T + F4 F2^T - F1 (not symmetric).
  g.F1 += (mat_mul(transpose(r.m3), layer.F3) - r.m3) * (2.0 * l3);
  g.F2 += mat_mul(transpose(r.m3), layer.F4) * (2.0 * l3);
  g.F3 += mat_mul(r.m3, layer.F1) * (2.0 * l3);
  g.F4 += mat_mul(r.m3, layer.F2) * (2.0 * l3);
  return g;
}

Var2Model solve_order2(const Tensor& F1, const Tensor& F3) {
  require_same_square(F1, F3, "solve_order2");
  const std::size_t n = F1.rows();
  Tensor gram = Tensor::identity(n);  // I - F1^T F1
  {
    const Tensor f1t = transpose(F1);
    gram -= mat_mul(f1t, F1);
  }
  const double cond = condition_number(gram);
  if (!(cond < kSolveOrder2ConditionCap))
    throw DegenerateError("solve_order2: I - F1^T F1 is numerically singular (cond " +
                          std::to_string(cond) + ")");
  Tensor a0 = mat_mul(F3 - mat_mul(F1, F1), inverse(gram));
  Tensor a1 = F1 - mat_mul(a0, transpose(F1));

  Tensor bbt = Tensor::identity(n);
  add_abt(bbt, a0, a0, -1.0);
  add_abt(bbt, a1, a1, -1.0);
  const Tensor a0f1t = mat_mul(a0, transpose(F1));
  add_abt(bbt, a0f1t, a1, -1.0);  // - A0 F1^T A1^T
  const Tensor a1f1 = mat_mul(a1, F1);
  add_abt(bbt, a1f1, a0, -1.0);  // - A1 F1 A0^T
  Tensor b;
  try {
    b = cholesky(bbt);
  } catch (const NotPsdError& e) {
    throw InfeasibleCovarianceError(
        std::string("solve_order2: implied noise covariance is not PSD: ") + e.what());
  }
  Var2Model m;
  m.A0 = std::move(a0);
  m.A1 = std::move(a1);
  m.B = std::move(b);
  return m;
}

double order2_equation_residual(const Var2Model& model, const Tensor& F1, const Tensor& F3) {
  require_same_square(F1, F3, "order2_equation_residual");
  const std::size_t n = F1.rows();
  // Lag-1: A1 + A0 F1^T = F1.
  Tensor e1 = model.A1 + mat_mul(model.A0, transpose(F1)) - F1;
  // Lag-2: A0 + A1 F1 = F3.
  Tensor e2 = model.A0 + mat_mul(model.A1, F1) - F3;
  // Unit stationary variance: A0 A0^T + A1 A1^T + A0 F1^T A1^T + A1 F1 A0^T + B B^T = I.
  Tensor e3(n, n);
  add_abt(e3, model.A0, model.A0);
  add_abt(e3, model.A1, model.A1);
  add_abt(e3, mat_mul(model.A0, transpose(F1)), model.A1);
  add_abt(e3, mat_mul(model.A1, F1), model.A0);
  add_abt(e3, model.B, model.B);
  for (std::size_t i = 0; i < n; ++i) e3.at(i, i) -= 1.0;
  double r = e1.frobenius_norm();
  r = std::max(r, e2.frobenius_norm());
  r = std::max(r, e3.frobenius_norm());
  return r;
}

Tensor sample_var2(const Var2Model& model, const Tensor& h0, const Tensor& h1,
                   std::size_t steps, Prng& rng) {
  require_same_square(model.A0, model.A1, "sample_var2 model");
  require_same_square(model.A0, model.B, "sample_var2 model");
  const std::size_t n = model.A0.rows();
  if (h0.numel() != n || h1.numel() != n) throw ShapeError("sample_var2: h0/h1 length mismatch");
  Tensor traj(steps, n);
  if (steps == 0) return traj;
  for (std::size_t j = 0; j < n; ++j) traj.at(0, j) = h0[j];
  if (steps == 1) return traj;
  for (std::size_t j = 0; j < n; ++j) traj.at(1, j) = h1[j];
  Tensor prev = h0.reshaped({n});
  Tensor cur = h1.reshaped({n});
  for (std::size_t t = 2; t < steps; ++t) {
    Tensor v(std::vector<std::size_t>{n});
    for (std::size_t j = 0; j < n; ++j) v[j] = rng.gaussian();
    Tensor next = mat_vec(model.A0, prev);
    next += mat_vec(model.A1, cur);
    next += mat_vec(model.B, v);
    for (std::size_t j = 0; j < n; ++j) traj.at(t, j) = next[j];
    prev = std::move(cur);
    cur = std::move(next);
  }
  return traj;
}

}  // namespace dvae
