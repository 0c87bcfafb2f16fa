#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "dvae/errors.hpp"
#include "dvae/linalg.hpp"
#include "dvae/prng.hpp"
#include "dvae/tensor.hpp"

using namespace dvae;

namespace {

// Independent oracle: plain triple-loop product.
Tensor naive_mat_mul(const Tensor& a, const Tensor& b) {
  Tensor c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k)
      for (std::size_t j = 0; j < b.cols(); ++j) c.at(i, j) += a.at(i, k) * b.at(k, j);
  return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// Independent oracle: textbook cyclic Jacobi eigensolver for symmetric
// matrices, written from scratch here (two-sided, unlike the library's
// one-sided SVD). Returns eigenvalues ascending.
std::vector<double> jacobi_eigenvalues(Tensor a) {
  const std::size_t n = a.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a.at(i, j) * a.at(i, j);
    if (off < 1e-26) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a.at(p, q) == 0.0) continue;
        const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * a.at(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a.at(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

// Independent oracle: characteristic polynomial by Faddeev-LeVerrier, roots
// by Durand-Kerner iteration on the monic polynomial.
std::vector<std::complex<double>> char_poly_roots(const Tensor& m) {
  const std::size_t n = m.rows();
  // c[k] are the coefficients of lambda^(n-k), c[0] = 1.
  std::vector<double> c(n + 1, 0.0);
  c[0] = 1.0;
  Tensor mk = Tensor::zeros({n, n});  // M_0 = 0, then M_{k} = m*M_{k-1} + c_{k-1} I
  for (std::size_t k = 1; k <= n; ++k) {
    Tensor t = naive_mat_mul(m, mk);
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) += c[k - 1];
    mk = t;
    Tensor prod = naive_mat_mul(m, mk);
    double tr = 0.0;
    for (std::size_t i = 0; i < n; ++i) tr += prod.at(i, i);
    c[k] = -tr / double(k);
  }
  using cd = std::complex<double>;
  std::vector<cd> roots(n);
  for (std::size_t i = 0; i < n; ++i)
    roots[i] = std::pow(cd(0.4, 0.9), double(i));  // standard distinct starts
  for (int it = 0; it < 500; ++it) {
    double moved = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      cd p(c[0], 0.0);
      for (std::size_t k = 1; k <= n; ++k) p = p * roots[i] + c[k];
      cd denom(1.0, 0.0);
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) denom *= roots[i] - roots[j];
      const cd delta = p / denom;
      roots[i] -= delta;
      moved = std::max(moved, std::abs(delta));
    }
    if (moved < 1e-13) break;
  }
  return roots;
}

void check_orthonormal_columns(const Tensor& u, double tol) {
  const Tensor g = mat_mul(transpose(u), u);
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j)
      CHECK(std::fabs(g.at(i, j) - (i == j ? 1.0 : 0.0)) <= tol);
}

void check_svd(const Tensor& m, double tol = 1e-9) {
  const SvdResult r = svd_thin(m);
  const std::size_t p = m.rows(), q = m.cols(), k = std::min(p, q);
  REQUIRE(r.u.rows() == p);
  REQUIRE(r.u.cols() == k);
  REQUIRE(r.s.numel() == k);
  REQUIRE(r.v.rows() == q);
  REQUIRE(r.v.cols() == k);
  for (std::size_t i = 0; i < k; ++i) {
    CHECK(r.s[i] >= 0.0);
    if (i + 1 < k) CHECK(r.s[i] >= r.s[i + 1]);
  }
  // Reconstruction.
  Tensor us = r.u;
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < k; ++j) us.at(i, j) *= r.s[j];
  const Tensor recon = mat_mul(us, transpose(r.v));
  double err = 0.0;
  for (std::size_t i = 0; i < m.numel(); ++i) err = std::max(err, std::fabs(recon[i] - m[i]));
  CHECK(err <= tol * std::max(1.0, m.frobenius_norm()));
  check_orthonormal_columns(r.u, 1e-9);
  check_orthonormal_columns(r.v, 1e-9);
}

}  // namespace

TEST_CASE("mat_mul identity and hand cases") {
  Tensor m{{1.0, 2.0}, {3.0, 4.0}};
  CHECK(max_abs_diff(mat_mul(Tensor::identity(2), m), m) == 0.0);

  Tensor b{{0.0}, {1.0}};
  Tensor prod = mat_mul(m, b);
  CHECK(prod.rows() == 2);
  CHECK(prod.cols() == 1);
  CHECK(prod.at(0, 0) == 2.0);
  CHECK(prod.at(1, 0) == 4.0);

  CHECK_THROWS_AS(mat_mul(m, Tensor(3, 2)), ShapeError);
}

TEST_CASE("mat_mul matches the naive oracle") {
  Prng rng(101);
  const Tensor a = rng.gaussian_tensor({17, 5});
  const Tensor b = rng.gaussian_tensor({5, 9});
  CHECK(max_abs_diff(mat_mul(a, b), naive_mat_mul(a, b)) <= 1e-12);

  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t p = 1 + rng.uniform_index(64);
    const std::size_t q = 1 + rng.uniform_index(64);
    const std::size_t r = 1 + rng.uniform_index(64);
    const Tensor x = rng.gaussian_tensor({p, q});
    const Tensor y = rng.gaussian_tensor({q, r});
    const Tensor got = mat_mul(x, y);
    const Tensor want = naive_mat_mul(x, y);
    double scale = std::max(1.0, want.max_abs());
    CHECK(max_abs_diff(got, want) <= 1e-12 * scale);
  }
}

TEST_CASE("transpose and mat_vec") {
  Tensor a{{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}};
  const Tensor t = transpose(a);
  CHECK(t.rows() == 3);
  CHECK(t.at(2, 1) == 6.0);

  const Tensor v = Tensor::vector({1.0, 0.0, -1.0});
  const Tensor out = mat_vec(a, v);
  CHECK(out.ndim() == 1);
  CHECK(out[0] == doctest::Approx(-2.0));
  CHECK(out[1] == doctest::Approx(-2.0));
  CHECK_THROWS_AS(mat_vec(a, Tensor::vector({1.0})), ShapeError);
}

TEST_CASE("svd of diagonal and zero matrices") {
  Tensor d = Tensor::zeros({3, 3});
  d.at(0, 0) = 3.0;
  d.at(1, 1) = 2.0;
  d.at(2, 2) = 1.0;
  const SvdResult r = svd_thin(d);
  CHECK(r.s[0] == doctest::Approx(3.0));
  CHECK(r.s[1] == doctest::Approx(2.0));
  CHECK(r.s[2] == doctest::Approx(1.0));

  const SvdResult z = svd_thin(Tensor::zeros({4, 2}));
  CHECK(z.s[0] == 0.0);
  CHECK(z.s[1] == 0.0);
  check_orthonormal_columns(z.u, 1e-12);  // completed basis still orthonormal
}

TEST_CASE("svd singular values match an independent Jacobi eigen oracle") {
  Prng rng(7);
  const Tensor m = rng.gaussian_tensor({8, 5});
  check_svd(m);
  const SvdResult r = svd_thin(m);

  const Tensor mtm = mat_mul(transpose(m), m);
  const std::vector<double> ev = jacobi_eigenvalues(mtm);  // ascending
  for (std::size_t i = 0; i < 5; ++i) {
    const double want = std::sqrt(std::max(0.0, ev[4 - i]));
    CHECK(r.s[i] == doctest::Approx(want).epsilon(1e-9));
  }
}

TEST_CASE("svd property sweep over 100 random matrices") {
  Prng rng(404);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t p = 1 + rng.uniform_index(12);
    const std::size_t q = 1 + rng.uniform_index(12);
    check_svd(rng.gaussian_tensor({p, q}));
  }
}

TEST_CASE("svd handles low-rank tall matrices") {
  Prng rng(55);
  const Tensor a = rng.gaussian_tensor({60, 3});
  const Tensor b = rng.gaussian_tensor({3, 40});
  const Tensor m = mat_mul(a, b);  // rank <= 3
  check_svd(m, 1e-8);
  const SvdResult r = svd_thin(m);
  for (std::size_t i = 3; i < 40; ++i) CHECK(r.s[i] <= 1e-8 * r.s[0]);
}

TEST_CASE("cholesky hand cases") {
  const Tensor li = cholesky(Tensor::identity(3));
  CHECK(max_abs_diff(li, Tensor::identity(3)) <= 1e-14);

  Tensor m{{4.0, 2.0}, {2.0, 5.0}};
  const Tensor l = cholesky(m);
  CHECK(l.at(0, 0) == doctest::Approx(2.0));
  CHECK(l.at(0, 1) == 0.0);
  CHECK(l.at(1, 0) == doctest::Approx(1.0));
  CHECK(l.at(1, 1) == doctest::Approx(2.0));
}

TEST_CASE("cholesky construct-then-factor round trip") {
  Prng rng(11);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t n = 1 + rng.uniform_index(8);
    Tensor g(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < i; ++j) g.at(i, j) = rng.gaussian();
      g.at(i, i) = 0.2 + rng.uniform() * 2.0;  // positive diagonal
    }
    const Tensor m = mat_mul(g, transpose(g));
    const Tensor l = cholesky(m);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(l.at(i, i) >= 0.0);
      for (std::size_t j = i + 1; j < n; ++j) CHECK(l.at(i, j) == 0.0);
    }
    CHECK(max_abs_diff(mat_mul(l, transpose(l)), m) <= 1e-10 * std::max(1.0, m.max_abs()));
    CHECK(max_abs_diff(l, g) <= 1e-9 * std::max(1.0, g.max_abs()));  // uniqueness
  }
}

TEST_CASE("cholesky error cases") {
  Tensor asym{{1.0, 2.0}, {0.0, 1.0}};
  CHECK_THROWS_AS(cholesky(asym), UsageError);

  Tensor indef{{1.0, 0.0}, {0.0, -1.0}};
  CHECK_THROWS_AS(cholesky(indef), NotPsdError);

  // Tiny negative pivot within tolerance clamps to zero instead of throwing.
  Tensor nearly{{1.0, 1.0}, {1.0, 1.0 - 1e-12}};
  const Tensor l = cholesky(nearly);
  CHECK(l.at(1, 1) == 0.0);
}

TEST_CASE("sym_eig reconstructs and orders ascending") {
  Prng rng(21);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 1 + rng.uniform_index(8);
    Tensor g = rng.gaussian_tensor({n, n});
    Tensor m = mat_mul(g, transpose(g));
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) -= 1.0;  // make some eigenvalues negative
    const SymEigResult e = sym_eig(m);
    for (std::size_t i = 0; i + 1 < n; ++i) CHECK(e.values[i] <= e.values[i + 1]);
    check_orthonormal_columns(e.vectors, 1e-9);
    // V diag(values) V^T == m
    Tensor vd = e.vectors;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) vd.at(i, j) *= e.values[j];
    CHECK(max_abs_diff(mat_mul(vd, transpose(e.vectors)), m) <=
          1e-9 * std::max(1.0, m.max_abs()));
    // Against the independent oracle.
    const std::vector<double> want = jacobi_eigenvalues(m);
    for (std::size_t i = 0; i < n; ++i)
      CHECK(e.values[i] == doctest::Approx(want[i]).epsilon(1e-8));
  }
}

TEST_CASE("eigenvalues of diagonal and rotation matrices") {
  Tensor d = Tensor::zeros({2, 2});
  d.at(0, 0) = 0.9;
  d.at(1, 1) = 0.5;
  auto ev = eigenvalues(d);
  std::sort(ev.begin(), ev.end(),
            [](auto a, auto b) { return a.real() > b.real(); });
  CHECK(ev[0].real() == doctest::Approx(0.9));
  CHECK(ev[0].imag() == doctest::Approx(0.0));
  CHECK(ev[1].real() == doctest::Approx(0.5));

  const double rho = 0.8, theta = 0.7;
  Tensor rot{{rho * std::cos(theta), -rho * std::sin(theta)},
             {rho * std::sin(theta), rho * std::cos(theta)}};
  auto evr = eigenvalues(rot);
  REQUIRE(evr.size() == 2);
  std::sort(evr.begin(), evr.end(), [](auto a, auto b) { return a.imag() < b.imag(); });
  CHECK(evr[0].real() == doctest::Approx(rho * std::cos(theta)).epsilon(1e-9));
  CHECK(evr[0].imag() == doctest::Approx(-rho * std::sin(theta)).epsilon(1e-9));
  CHECK(evr[1].imag() == doctest::Approx(rho * std::sin(theta)).epsilon(1e-9));
  CHECK(spectral_radius(rot) == doctest::Approx(rho).epsilon(1e-9));
}

TEST_CASE("eigenvalues match characteristic-polynomial roots") {
  Prng rng(33);
  for (int rep = 0; rep < 12; ++rep) {
    const std::size_t n = 2 + rng.uniform_index(5);  // 2..6
    const Tensor m = rng.gaussian_tensor({n, n});
    auto got = eigenvalues(m);
    auto want = char_poly_roots(m);
    REQUIRE(got.size() == n);
    // Greedy multiset match.
    std::vector<bool> used(n, false);
    for (const auto& g : got) {
      double best = 1e18;
      std::size_t best_j = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (used[j]) continue;
        const double dist = std::abs(g - want[j]);
        if (dist < best) {
          best = dist;
          best_j = j;
        }
      }
      used[best_j] = true;
      CHECK(best <= 1e-6 * std::max(1.0, std::abs(g)));
    }
  }
}

TEST_CASE("eigenvalues cap and larger matrices") {
  CHECK_THROWS_AS(eigenvalues(Tensor(65, 65)), UsageError);
  Prng rng(8);
  const Tensor m = rng.gaussian_tensor({20, 20});
  auto ev = eigenvalues(m);
  CHECK(ev.size() == 20);
  // Trace equals the eigenvalue sum (coefficient identity).
  double tr = 0.0;
  for (std::size_t i = 0; i < 20; ++i) tr += m.at(i, i);
  std::complex<double> sum{0.0, 0.0};
  for (const auto& e : ev) sum += e;
  CHECK(sum.real() == doctest::Approx(tr).epsilon(1e-8));
  CHECK(sum.imag() == doctest::Approx(0.0).scale(std::fabs(tr) + 1.0).epsilon(1e-8));
}

TEST_CASE("solve and inverse") {
  Prng rng(68);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t n = 1 + rng.uniform_index(10);
    Tensor a = rng.gaussian_tensor({n, n});
    for (std::size_t i = 0; i < n; ++i) a.at(i, i) += 3.0;  // keep well-conditioned
    const Tensor b = rng.gaussian_tensor({n, 3});
    const Tensor x = solve(a, b);
    CHECK(max_abs_diff(mat_mul(a, x), b) <= 1e-9);
    const Tensor ai = inverse(a);
    CHECK(max_abs_diff(mat_mul(ai, a), Tensor::identity(n)) <= 1e-9);
  }

  Tensor sing{{1.0, 2.0}, {2.0, 4.0}};
  CHECK_THROWS_AS(solve(sing, Tensor::identity(2)), NumericError);
  CHECK_THROWS_AS(inverse(sing), NumericError);
}

TEST_CASE("condition number") {
  Tensor d = Tensor::zeros({3, 3});
  d.at(0, 0) = 10.0;
  d.at(1, 1) = 1.0;
  d.at(2, 2) = 0.1;
  CHECK(condition_number(d) == doctest::Approx(100.0).epsilon(1e-9));
  CHECK(condition_number(Tensor::identity(4)) == doctest::Approx(1.0));

  Tensor sing{{1.0, 1.0}, {1.0, 1.0}};
  CHECK(std::isinf(condition_number(sing)));
}
