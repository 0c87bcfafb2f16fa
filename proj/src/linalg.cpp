#include "dvae/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dvae/errors.hpp"

namespace dvae {

namespace {

void require_matrix(const Tensor& a, const char* who) {
  if (a.ndim() != 2) throw ShapeError(std::string(who) + ": expected a rank-2 tensor");
}

void require_square(const Tensor& a, const char* who) {
  require_matrix(a, who);
  if (a.rows() != a.cols()) throw ShapeError(std::string(who) + ": expected a square matrix");
}

}  // namespace

Tensor mat_mul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "mat_mul");
  require_matrix(b, "mat_mul");
  if (a.cols() != b.rows()) throw ShapeError("mat_mul: inner dimensions disagree");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c(m, n);
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = pa[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = pb + p * n;
      double* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  Tensor t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

Tensor mat_vec(const Tensor& a, const Tensor& x) {
  require_matrix(a, "mat_vec");
  if (x.ndim() != 1 || x.numel() != a.cols()) throw ShapeError("mat_vec: length mismatch");
  Tensor y(std::vector<std::size_t>{a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a.at(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

SvdResult svd_thin(const Tensor& m) {
  require_matrix(m, "svd_thin");
  if (!m.all_finite()) throw UsageError("svd_thin: non-finite entries");

  // One-sided Jacobi wants tall input; run on the transpose otherwise and
  // swap the factors at the end.
  const bool flipped = m.rows() < m.cols();
  Tensor a = flipped ? transpose(m) : m;
  const std::size_t p = a.rows(), q = a.cols();

  Tensor v = Tensor::identity(q);
  const double tol = 1e-14;
  const int max_sweeps = 100;
  bool converged = false;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    converged = true;
    // Columns whose norm is negligible against the largest cannot change the
    // factorization at double precision; rotating them against each other
    // only churns round-off and stalls convergence on low-rank input.
    double max_col_sq = 0.0;
    for (std::size_t j = 0; j < q; ++j) {
      double s2 = 0.0;
      for (std::size_t r = 0; r < p; ++r) s2 += a.at(r, j) * a.at(r, j);
      max_col_sq = std::max(max_col_sq, s2);
    }
    const double negligible_sq = max_col_sq * 1e-30;
    for (std::size_t i = 0; i + 1 < q; ++i) {
      for (std::size_t j = i + 1; j < q; ++j) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t r = 0; r < p; ++r) {
          const double ai = a.at(r, i), aj = a.at(r, j);
          alpha += ai * ai;
          beta += aj * aj;
          gamma += ai * aj;
        }
        if (alpha <= negligible_sq || beta <= negligible_sq) continue;
        if (std::fabs(gamma) <= tol * std::sqrt(alpha * beta) || gamma == 0.0) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t r = 0; r < p; ++r) {
          const double ai = a.at(r, i), aj = a.at(r, j);
          a.at(r, i) = c * ai - s * aj;
          a.at(r, j) = s * ai + c * aj;
        }
        for (std::size_t r = 0; r < q; ++r) {
          const double vi = v.at(r, i), vj = v.at(r, j);
          v.at(r, i) = c * vi - s * vj;
          v.at(r, j) = s * vi + c * vj;
        }
      }
    }
  }
  if (!converged) throw NumericError("svd_thin: Jacobi sweeps did not converge");

  // Column norms are the singular values.
  std::vector<double> sv(q);
  for (std::size_t j = 0; j < q; ++j) {
    double s2 = 0.0;
    for (std::size_t r = 0; r < p; ++r) s2 += a.at(r, j) * a.at(r, j);
    sv[j] = std::sqrt(s2);
  }
  std::vector<std::size_t> order(q);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sv[x] > sv[y]; });

  double smax = 0.0;
  for (double s : sv) smax = std::max(smax, s);
  // Columns at or below the negligible-column guard hold only round-off and
  // are not orthogonal to anything; rebuild their U directions instead of
  // normalizing noise. Must stay >= the guard threshold above.
  const double drop_tol = smax * 1e-14 + std::numeric_limits<double>::min();

  Tensor u(p, q), vs(q, q);
  Tensor svec(std::vector<std::size_t>{q});
  std::size_t filled = 0;
  for (std::size_t jj = 0; jj < q; ++jj) {
    const std::size_t j = order[jj];
    svec[jj] = sv[j];
    for (std::size_t r = 0; r < q; ++r) vs.at(r, jj) = v.at(r, j);
    if (sv[j] > drop_tol) {
      for (std::size_t r = 0; r < p; ++r) u.at(r, jj) = a.at(r, j) / sv[j];
      ++filled;
    }
  }
  // Orthonormal completion for exactly-zero singular values (e.g. the zero
  // matrix): Gram-Schmidt canonical basis vectors against existing columns.
  for (std::size_t jj = filled; jj < q; ++jj) {
    for (std::size_t cand = 0; cand < p; ++cand) {
      std::vector<double> w(p, 0.0);
      w[cand] = 1.0;
      for (std::size_t kk = 0; kk < jj; ++kk) {
        double dot = 0.0;
        for (std::size_t r = 0; r < p; ++r) dot += w[r] * u.at(r, kk);
        for (std::size_t r = 0; r < p; ++r) w[r] -= dot * u.at(r, kk);
      }
      double nrm = 0.0;
      for (double x : w) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm > 0.5) {
        for (std::size_t r = 0; r < p; ++r) u.at(r, jj) = w[r] / nrm;
        break;
      }
    }
  }

  if (flipped) return SvdResult{vs, svec, u};
  return SvdResult{u, svec, vs};
}

Tensor cholesky(const Tensor& m) {
  require_square(m, "cholesky");
  const std::size_t n = m.rows();
  const double scale = std::max(1.0, m.max_abs());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::fabs(m.at(i, j) - m.at(j, i)) > 1e-9 * scale)
        throw UsageError("cholesky: matrix not symmetric");

  Tensor l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double pivot = m.at(j, j);
    for (std::size_t k = 0; k < j; ++k) pivot -= l.at(j, k) * l.at(j, k);
    if (pivot < -1e-8 * scale)
      throw NotPsdError("cholesky: matrix not positive semi-definite (pivot " +
                        std::to_string(pivot) + ")");
    const double ljj = std::sqrt(std::max(pivot, 0.0));
    l.at(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m.at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l.at(i, k) * l.at(j, k);
      l.at(i, j) = ljj > 0.0 ? s / ljj : 0.0;
    }
  }
  return l;
}

SymEigResult sym_eig(const Tensor& m) {
  require_square(m, "sym_eig");
  const std::size_t n = m.rows();
  Tensor a = m;
  // Symmetrize drift from the caller.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double avg = 0.5 * (a.at(i, j) + a.at(j, i));
      a.at(i, j) = avg;
      a.at(j, i) = avg;
    }
  Tensor vec = Tensor::identity(n);

  const int max_sweeps = 100;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a.at(i, j) * a.at(i, j);
    if (std::sqrt(off) <= 1e-14 * std::max(1.0, a.max_abs())) break;
    if (sweep == max_sweeps - 1) throw NumericError("sym_eig: Jacobi did not converge");

    for (std::size_t i = 0; i + 1 < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double apq = a.at(i, j);
        if (apq == 0.0) continue;
        const double app = a.at(i, i), aqq = a.at(j, j);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t k = 0; k < n; ++k) {
          const double aki = a.at(k, i), akj = a.at(k, j);
          a.at(k, i) = c * aki - s * akj;
          a.at(k, j) = s * aki + c * akj;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double aik = a.at(i, k), ajk = a.at(j, k);
          a.at(i, k) = c * aik - s * ajk;
          a.at(j, k) = s * aik + c * ajk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vki = vec.at(k, i), vkj = vec.at(k, j);
          vec.at(k, i) = c * vki - s * vkj;
          vec.at(k, j) = s * vki + c * vkj;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a.at(x, x) < a.at(y, y); });
  SymEigResult out;
  out.values = Tensor(std::vector<std::size_t>{n});
  out.vectors = Tensor(n, n);
  for (std::size_t jj = 0; jj < n; ++jj) {
    out.values[jj] = a.at(order[jj], order[jj]);
    for (std::size_t r = 0; r < n; ++r) out.vectors.at(r, jj) = vec.at(r, order[jj]);
  }
  return out;
}

namespace {

// Eigenvalues of [[a, b], [c, d]].
void eig2x2(double a, double b, double c, double d,
            std::complex<double>* l1, std::complex<double>* l2) {
  const double tr = a + d;
  const double det = a * d - b * c;
  const double disc = 0.25 * tr * tr - det;
  if (disc >= 0.0) {
    const double root = std::sqrt(disc);
    // Stable split: take the larger-magnitude root first.
    const double l = 0.5 * tr + (tr >= 0.0 ? root : -root);
    if (l != 0.0) {
      *l1 = l;
      *l2 = det / l;
    } else {
      *l1 = root;
      *l2 = -root;
    }
  } else {
    const double im = std::sqrt(-disc);
    *l1 = std::complex<double>(0.5 * tr, im);
    *l2 = std::complex<double>(0.5 * tr, -im);
  }
}

}  // namespace

std::vector<std::complex<double>> eigenvalues(const Tensor& m) {
  require_square(m, "eigenvalues");
  const std::size_t n = m.rows();
  if (n > 64) throw UsageError("eigenvalues: matrix larger than the 64x64 cap");
  if (!m.all_finite()) throw UsageError("eigenvalues: non-finite entries");
  std::vector<std::complex<double>> out;
  if (n == 0) return out;
  if (n == 1) return {std::complex<double>(m.at(0, 0), 0.0)};

  Tensor h = m;

  // Householder reduction to upper Hessenberg form.
  for (std::size_t k = 0; k + 2 < n; ++k) {
    double scale = 0.0;
    for (std::size_t i = k + 1; i < n; ++i) scale += std::fabs(h.at(i, k));
    if (scale == 0.0) continue;
    std::vector<double> v(n, 0.0);
    double norm2 = 0.0;
    for (std::size_t i = k + 1; i < n; ++i) {
      v[i] = h.at(i, k) / scale;
      norm2 += v[i] * v[i];
    }
    double alpha = std::sqrt(norm2);
    if (v[k + 1] > 0.0) alpha = -alpha;
    v[k + 1] -= alpha;
    double vtv = 0.0;
    for (std::size_t i = k + 1; i < n; ++i) vtv += v[i] * v[i];
    if (vtv == 0.0) continue;
    // Left multiply: H <- (I - 2vv^T/vtv) H
    for (std::size_t j = k; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = k + 1; i < n; ++i) s += v[i] * h.at(i, j);
      const double f = 2.0 * s / vtv;
      for (std::size_t i = k + 1; i < n; ++i) h.at(i, j) -= f * v[i];
    }
    // Right multiply: H <- H (I - 2vv^T/vtv)
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = k + 1; j < n; ++j) s += h.at(i, j) * v[j];
      const double f = 2.0 * s / vtv;
      for (std::size_t j = k + 1; j < n; ++j) h.at(i, j) -= f * v[j];
    }
    for (std::size_t i = k + 2; i < n; ++i) h.at(i, k) = 0.0;
  }

  // Francis double-shift QR with deflation.
  const double eps = std::numeric_limits<double>::epsilon();
  double hnorm = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) hnorm += std::fabs(h.at(i, j));
  if (hnorm == 0.0) hnorm = 1.0;

  long hi = static_cast<long>(n) - 1;
  int its = 0;
  int total_its = 0;
  const int max_total = 60 * static_cast<int>(n);

  while (hi >= 0) {
    // Find the active block [lo, hi].
    long lo = hi;
    while (lo > 0) {
      double s = std::fabs(h.at(lo - 1, lo - 1)) + std::fabs(h.at(lo, lo));
      if (s == 0.0) s = hnorm;
      if (std::fabs(h.at(lo, lo - 1)) <= eps * s) {
        h.at(lo, lo - 1) = 0.0;
        break;
      }
      --lo;
    }

    if (lo == hi) {
      out.emplace_back(h.at(hi, hi), 0.0);
      --hi;
      its = 0;
      continue;
    }
    if (lo == hi - 1) {
      std::complex<double> l1, l2;
      eig2x2(h.at(hi - 1, hi - 1), h.at(hi - 1, hi), h.at(hi, hi - 1), h.at(hi, hi), &l1, &l2);
      out.push_back(l1);
      out.push_back(l2);
      hi -= 2;
      its = 0;
      continue;
    }

    if (++total_its > max_total)
      throw NumericError("eigenvalues: QR iteration did not converge");
    ++its;

    double h11, h12, h21, h22;
    if (its == 10 || its == 20 || its == 30) {
      // Exceptional shift built from subdiagonal magnitudes.
      const double s = std::fabs(h.at(hi, hi - 1)) + std::fabs(h.at(hi - 1, hi - 2));
      h11 = 0.75 * s + h.at(hi, hi);
      h12 = -0.4375 * s;
      h21 = s;
      h22 = h11;
    } else {
      h11 = h.at(hi - 1, hi - 1);
      h12 = h.at(hi - 1, hi);
      h21 = h.at(hi, hi - 1);
      h22 = h.at(hi, hi);
    }
    const double shift_sum = h11 + h22;
    const double shift_prod = h11 * h22 - h12 * h21;

    // First column of (H - l1)(H - l2) restricted to the active block.
    double x = h.at(lo, lo) * h.at(lo, lo) + h.at(lo, lo + 1) * h.at(lo + 1, lo) -
               shift_sum * h.at(lo, lo) + shift_prod;
    double y = h.at(lo + 1, lo) * (h.at(lo, lo) + h.at(lo + 1, lo + 1) - shift_sum);
    double z = (lo + 2 <= hi) ? h.at(lo + 1, lo) * h.at(lo + 2, lo + 1) : 0.0;

    for (long k = lo; k <= hi - 1; ++k) {
      // Householder on [x, y, z] (z only while a third row exists).
      const bool have_z = (k + 2 <= hi);
      double vx = x, vy = y, vz = have_z ? z : 0.0;
      const double col_scale = std::fabs(vx) + std::fabs(vy) + std::fabs(vz);
      if (col_scale == 0.0) {
        if (k + 3 <= hi) {
          x = h.at(k + 1, k);
          y = h.at(k + 2, k);
          z = h.at(k + 3, k);
        } else if (k + 2 <= hi) {
          x = h.at(k + 1, k);
          y = h.at(k + 2, k);
          z = 0.0;
        }
        continue;
      }
      vx /= col_scale;
      vy /= col_scale;
      vz /= col_scale;
      double alpha = std::sqrt(vx * vx + vy * vy + vz * vz);
      if (vx > 0.0) alpha = -alpha;
      vx -= alpha;
      const double vtv = vx * vx + vy * vy + vz * vz;
      if (vtv != 0.0) {
        const long col_start = std::max(lo, k - 1);
        // Left: rows k..k+2 (k..k+1 without z), columns col_start..hi.
        for (long j = col_start; j <= hi; ++j) {
          double s = vx * h.at(k, j) + vy * h.at(k + 1, j);
          if (have_z) s += vz * h.at(k + 2, j);
          const double f = 2.0 * s / vtv;
          h.at(k, j) -= f * vx;
          h.at(k + 1, j) -= f * vy;
          if (have_z) h.at(k + 2, j) -= f * vz;
        }
        // Right: columns k..row_end, rows lo..min(hi, k+3).
        const long row_cap = std::min(hi, k + 3);
        for (long i = lo; i <= row_cap; ++i) {
          double s = vx * h.at(i, k) + vy * h.at(i, k + 1);
          if (have_z) s += vz * h.at(i, k + 2);
          const double f = 2.0 * s / vtv;
          h.at(i, k) -= f * vx;
          h.at(i, k + 1) -= f * vy;
          if (have_z) h.at(i, k + 2) -= f * vz;
        }
      }
      if (k + 3 <= hi) {
        x = h.at(k + 1, k);
        y = h.at(k + 2, k);
        z = h.at(k + 3, k);
      } else if (k + 2 <= hi) {
        x = h.at(k + 1, k);
        y = h.at(k + 2, k);
        z = 0.0;
      }
    }
    // Restore Hessenberg zeros below the first subdiagonal in the block.
    for (long i = lo + 2; i <= hi; ++i)
      for (long j = lo; j <= i - 2; ++j) h.at(i, j) = 0.0;
  }

  return out;
}

double spectral_radius(const Tensor& m) {
  double r = 0.0;
  for (const auto& l : eigenvalues(m)) r = std::max(r, std::abs(l));
  return r;
}

Tensor solve(const Tensor& a, const Tensor& b) {
  require_square(a, "solve");
  require_matrix(b, "solve");
  if (b.rows() != a.rows()) throw ShapeError("solve: right-hand side row mismatch");
  const std::size_t n = a.rows(), m = b.cols();
  Tensor lu = a;
  Tensor x = b;
  std::vector<std::size_t> piv(n);
  std::iota(piv.begin(), piv.end(), 0);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t best = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::fabs(lu.at(i, k)) > std::fabs(lu.at(best, k))) best = i;
    if (std::fabs(lu.at(best, k)) < 1e-300)
      throw NumericError("solve: matrix is numerically singular");
    if (best != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu.at(k, j), lu.at(best, j));
      for (std::size_t j = 0; j < m; ++j) std::swap(x.at(k, j), x.at(best, j));
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = lu.at(i, k) / lu.at(k, k);
      if (f == 0.0) continue;
      for (std::size_t j = k; j < n; ++j) lu.at(i, j) -= f * lu.at(k, j);
      for (std::size_t j = 0; j < m; ++j) x.at(i, j) -= f * x.at(k, j);
    }
  }
  for (std::size_t k = n; k-- > 0;) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = x.at(k, j);
      for (std::size_t i = k + 1; i < n; ++i) s -= lu.at(k, i) * x.at(i, j);
      x.at(k, j) = s / lu.at(k, k);
    }
  }
  return x;
}

Tensor inverse(const Tensor& a) { return solve(a, Tensor::identity(a.rows())); }

double condition_number(const Tensor& a) {
  const SvdResult svd = svd_thin(a);
  const std::size_t r = svd.s.numel();
  if (r == 0) return std::numeric_limits<double>::infinity();
  const double smax = svd.s[0];
  const double smin = svd.s[r - 1];
  if (smin <= 0.0) return std::numeric_limits<double>::infinity();
  return smax / smin;
}

}  // namespace dvae
