#include "dvae/lds.hpp"

#include <algorithm>
#include <cstddef>
#include <utility>

#include "dvae/errors.hpp"
#include "dvae/linalg.hpp"

namespace dvae {

namespace {

// Moore-Penrose pseudo-inverse via thin SVD; singular values below
// 1e-12 * s_max are treated as zero (rank cutoff).
Tensor pseudo_inverse(const Tensor& m) {
  const SvdResult svd = svd_thin(m);
  const std::size_t r = svd.s.numel();
  double smax = 0.0;
  for (std::size_t i = 0; i < r; ++i) smax = std::max(smax, svd.s[i]);
  const double cutoff = 1e-12 * smax;
  // pinv = V diag(1/s) U^T
  Tensor vs = svd.v;  // q x r, columns scaled by 1/s_i
  for (std::size_t i = 0; i < vs.rows(); ++i)
    for (std::size_t j = 0; j < r; ++j)
      vs.at(i, j) = svd.s[j] > cutoff ? vs.at(i, j) / svd.s[j] : 0.0;
  return mat_mul(vs, transpose(svd.u));
}

Tensor psd_project(const Tensor& q) {
  const std::size_t n = q.rows();
  Tensor sym(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) sym.at(i, j) = 0.5 * (q.at(i, j) + q.at(j, i));
  const SymEigResult eig = sym_eig(sym);
  Tensor out(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const double lam = std::max(0.0, eig.values[k]);
    if (lam == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        out.at(i, j) += lam * eig.vectors.at(i, k) * eig.vectors.at(j, k);
  }
  return out;
}

}  // namespace

LdsModel fit_lds(const Tensor& seq, std::size_t n) {
  if (seq.ndim() != 2) throw ShapeError("fit_lds: sequence must be N x d");
  const std::size_t N = seq.rows(), d = seq.cols();
  if (n == 0) throw UsageError("fit_lds: latent dimension must be positive");
  if (N <= n)
    throw InsufficientDataError("fit_lds: need more than " + std::to_string(n) +
                                " frames, got " + std::to_string(N));
  if (d < n)
    throw DegenerateError("fit_lds: frame dimension " + std::to_string(d) +
                          " below latent dimension " + std::to_string(n));

  Tensor y_bar(std::vector<std::size_t>{d});
  for (std::size_t t = 0; t < N; ++t)
    for (std::size_t j = 0; j < d; ++j) y_bar[j] += seq.at(t, j);
  y_bar *= 1.0 / static_cast<double>(N);

  // Centered frames as columns: Y (d x N) = U S V^T.
  Tensor yc(d, N);
  for (std::size_t t = 0; t < N; ++t)
    for (std::size_t j = 0; j < d; ++j) yc.at(j, t) = seq.at(t, j) - y_bar[j];
  const SvdResult svd = svd_thin(yc);

  Tensor c = svd.u.cols_slice(0, n);  // d x n, orthonormal columns
  // States H (n x N) = diag(S_n) V_n^T.
  Tensor h(n, N);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < N; ++t) h.at(i, t) = svd.s[i] * svd.v.at(t, i);

  const Tensor h1 = h.cols_slice(0, N - 1);
  const Tensor h2 = h.cols_slice(1, N);
  Tensor a = mat_mul(h2, pseudo_inverse(h1));

  // Transition residuals drive the noise factor.
  Tensor resid = h2 - mat_mul(a, h1);
  Tensor q = mat_mul(resid, transpose(resid));
  q *= 1.0 / static_cast<double>(N - 1);
  Tensor b_v = cholesky(psd_project(q));

  LdsModel model;
  model.A = std::move(a);
  model.C = std::move(c);
  model.y_bar = std::move(y_bar);
  model.B_v = std::move(b_v);
  return model;
}

Tensor reconstruct_lds(const Tensor& seq, const LdsModel& model) {
  if (seq.ndim() != 2 || seq.cols() != model.C.rows())
    throw ShapeError("reconstruct_lds: frame dimension mismatch");
  const std::size_t N = seq.rows(), d = seq.cols();
  Tensor centered = seq;
  for (std::size_t t = 0; t < N; ++t)
    for (std::size_t j = 0; j < d; ++j) centered.at(t, j) -= model.y_bar[j];
  // Orthonormal C makes C^T the least-squares state estimate.
  const Tensor states = mat_mul(centered, model.C);     // N x n
  Tensor recon = mat_mul(states, transpose(model.C));   // N x d
  for (std::size_t t = 0; t < N; ++t)
    for (std::size_t j = 0; j < d; ++j) recon.at(t, j) += model.y_bar[j];
  return recon;
}

Tensor synthesize_lds(const LdsModel& model, const Tensor& h0, std::size_t steps, Prng& rng) {
  const std::size_t n = model.A.rows();
  const std::size_t d = model.C.rows();
  if (model.C.cols() != n) throw ShapeError("synthesize_lds: C width mismatch");
  if (h0.numel() != n) throw ShapeError("synthesize_lds: h0 length mismatch");
  Tensor frames(steps, d);
  Tensor h = h0.reshaped({n});
  for (std::size_t t = 0; t < steps; ++t) {
    const Tensor y = mat_vec(model.C, h);
    for (std::size_t j = 0; j < d; ++j) frames.at(t, j) = model.y_bar[j] + y[j];
    if (t + 1 == steps) break;
    Tensor v(std::vector<std::size_t>{n});
    for (std::size_t j = 0; j < n; ++j) v[j] = rng.gaussian();
    Tensor next = mat_vec(model.A, h);
    next += mat_vec(model.B_v, v);
    h = std::move(next);
  }
  return frames;
}

}  // namespace dvae
