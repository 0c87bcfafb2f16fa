#pragma once

#include <complex>
#include <vector>

#include "dvae/tensor.hpp"

namespace dvae {

Tensor mat_mul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor mat_vec(const Tensor& a, const Tensor& x);

// Thin SVD m = U diag(S) V^T with U: p x r, S: r, V: q x r, r = min(p, q).
// Singular values are non-negative and sorted descending.
struct SvdResult {
  Tensor u;
  Tensor s;  // rank-1
  Tensor v;
};
SvdResult svd_thin(const Tensor& m);

// Lower-triangular L with L L^T = m. m must be symmetric; pivots below
// -1e-8 * max(1, max|entry|) raise NotPsdError, small negatives clamp to 0.
Tensor cholesky(const Tensor& m);

// Symmetric eigendecomposition by cyclic Jacobi. Eigenvalues ascending,
// eigenvectors are the columns of `vectors`.
struct SymEigResult {
  Tensor values;   // rank-1
  Tensor vectors;  // n x n
};
SymEigResult sym_eig(const Tensor& m);

// Eigenvalues of a general real matrix (n <= 64) via Hessenberg reduction
// and Francis double-shift QR iteration.
std::vector<std::complex<double>> eigenvalues(const Tensor& m);

// Largest |eigenvalue|.
double spectral_radius(const Tensor& m);

// Solve a x = b (b may have multiple columns) by Gaussian elimination with
// partial pivoting.
Tensor solve(const Tensor& a, const Tensor& b);
Tensor inverse(const Tensor& a);

// Ratio of extreme singular values; infinity when numerically singular.
double condition_number(const Tensor& a);

}  // namespace dvae
