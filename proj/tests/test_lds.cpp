#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "dvae/errors.hpp"
#include "dvae/lds.hpp"
#include "dvae/linalg.hpp"
#include "dvae/prng.hpp"
#include "dvae/tensor.hpp"

using namespace dvae;

namespace {

double frob(const Tensor& t) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.numel(); ++i) s += t[i] * t[i];
  return std::sqrt(s);
}

double rel_recon_err(const Tensor& seq, const Tensor& recon) {
  Tensor centered = seq;
  const std::size_t N = seq.rows(), d = seq.cols();
  std::vector<double> mean(d, 0.0);
  for (std::size_t t = 0; t < N; ++t)
    for (std::size_t j = 0; j < d; ++j) mean[j] += seq.at(t, j) / double(N);
  for (std::size_t t = 0; t < N; ++t)
    for (std::size_t j = 0; j < d; ++j) centered.at(t, j) -= mean[j];
  return frob(recon - seq) / std::max(1e-300, frob(centered));
}

// Frames y_t = y_bar + C h_t with h_t = (cos wt, sin wt). When the period
// divides the frame count the states sum to zero exactly, so the sample mean
// is y_bar and the least-squares transition fit has zero residual: the whole
// identification problem has a closed-form answer to compare against.
struct Orbit {
  Tensor seq;
  Tensor y_bar;
  double omega = 0.0;
};

Orbit make_rotation_orbit(std::size_t T, std::size_t period, std::size_t d, Prng& rng) {
  Orbit o;
  o.omega = 2.0 * std::numbers::pi / double(period);
  Tensor c = rng.gaussian_tensor({d, 2});
  o.y_bar = rng.gaussian_tensor({d});
  o.seq = Tensor(T, d);
  for (std::size_t t = 0; t < T; ++t) {
    const double h0 = std::cos(o.omega * double(t));
    const double h1 = std::sin(o.omega * double(t));
    for (std::size_t j = 0; j < d; ++j)
      o.seq.at(t, j) = o.y_bar[j] + c.at(j, 0) * h0 + c.at(j, 1) * h1;
  }
  return o;
}

}  // namespace

TEST_CASE("exact rank-2 rotation data is identified to rotation accuracy") {
  Prng rng(101);
  const Orbit o = make_rotation_orbit(500, 25, 12, rng);
  const LdsModel m = fit_lds(o.seq, 2);

  CHECK(m.A.rows() == 2);
  CHECK(m.C.rows() == 12);
  CHECK(m.C.cols() == 2);

  // Mean recovered exactly (orbit sums to zero over whole periods).
  for (std::size_t j = 0; j < 12; ++j) CHECK(m.y_bar[j] == doctest::Approx(o.y_bar[j]).epsilon(1e-10));

  const Tensor recon = reconstruct_lds(o.seq, m);
  CHECK(rel_recon_err(o.seq, recon) <= 1e-8);

  // Eigenvalues of the fitted transition are exp(+-i omega) regardless of
  // the state basis the SVD picked.
  const std::vector<std::complex<double>> ev = eigenvalues(m.A);
  REQUIRE(ev.size() == 2);
  const double want_re = std::cos(o.omega);
  const double want_im = std::sin(o.omega);
  for (const std::complex<double>& z : ev) {
    CHECK(z.real() == doctest::Approx(want_re).epsilon(1e-6));
    CHECK(std::fabs(z.imag()) == doctest::Approx(want_im).epsilon(1e-6));
  }

  // Noise factor is numerically zero: the fit is exact.
  CHECK(frob(m.B_v) <= 1e-6);
}

TEST_CASE("full-rank latent reproduces arbitrary training frames") {
  Prng rng(7);
  const Tensor seq = rng.gaussian_tensor({30, 4});
  const LdsModel m = fit_lds(seq, 4);
  const Tensor recon = reconstruct_lds(seq, m);
  CHECK(rel_recon_err(seq, recon) <= 1e-9);
}

TEST_CASE("constant sequences degrade gracefully") {
  const std::size_t N = 20, d = 5;
  Tensor seq(N, d);
  for (std::size_t t = 0; t < N; ++t)
    for (std::size_t j = 0; j < d; ++j) seq.at(t, j) = 3.0 + double(j);
  const LdsModel m = fit_lds(seq, 2);

  for (std::size_t j = 0; j < d; ++j) CHECK(m.y_bar[j] == doctest::Approx(3.0 + double(j)));
  CHECK(frob(m.B_v) <= 1e-10);

  // C still has orthonormal columns even though the data had no variance.
  const Tensor gram = mat_mul(transpose(m.C), m.C);
  CHECK(frob(gram - Tensor::identity(2)) <= 1e-10);

  Prng rng(1);
  const Tensor synth = synthesize_lds(m, Tensor::zeros({2}), 10, rng);
  for (std::size_t t = 0; t < 10; ++t)
    for (std::size_t j = 0; j < d; ++j) CHECK(synth.at(t, j) == doctest::Approx(3.0 + double(j)).epsilon(1e-9));

  const Tensor recon = reconstruct_lds(seq, m);
  CHECK(frob(recon - seq) <= 1e-9);
}

TEST_CASE("fit_lds input validation") {
  Prng rng(2);
  const Tensor seq = rng.gaussian_tensor({6, 8});
  CHECK_THROWS_AS(fit_lds(seq, 6), InsufficientDataError);   // N <= n
  CHECK_THROWS_AS(fit_lds(seq, 7), InsufficientDataError);
  CHECK_THROWS_AS(fit_lds(rng.gaussian_tensor({10, 3}), 4), DegenerateError);  // d < n
  CHECK_THROWS_AS(fit_lds(seq, 0), UsageError);
  CHECK_THROWS_AS(fit_lds(Tensor::vector({1.0, 2.0}), 1), ShapeError);
  CHECK_NOTHROW(fit_lds(rng.gaussian_tensor({7, 8}), 6));    // N = n + 1 is enough
}

TEST_CASE("reconstruct_lds is the orthogonal projection onto the C subspace") {
  Prng rng(31);
  const Tensor seq = rng.gaussian_tensor({40, 9});
  const LdsModel m = fit_lds(seq, 3);
  const Tensor recon = reconstruct_lds(seq, m);

  // Hand-computed y_bar + C C^T (y - y_bar) per frame.
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t j = 0; j < 9; ++j) {
      double want = m.y_bar[j];
      for (std::size_t k = 0; k < 3; ++k) {
        double coef = 0.0;
        for (std::size_t p = 0; p < 9; ++p)
          coef += m.C.at(p, k) * (seq.at(t, p) - m.y_bar[p]);
        want += m.C.at(j, k) * coef;
      }
      CHECK(recon.at(t, j) == doctest::Approx(want).epsilon(1e-10));
    }
  }

  CHECK_THROWS_AS(reconstruct_lds(rng.gaussian_tensor({4, 7}), m), ShapeError);
}

TEST_CASE("synthesize_lds deterministic rollouts") {
  const std::size_t n = 2, d = 4;
  Prng rng(3);
  LdsModel m;
  m.A = Tensor::zeros({n, n});
  m.C = rng.gaussian_tensor({d, n});
  m.y_bar = rng.gaussian_tensor({d});
  m.B_v = Tensor::zeros({n, n});

  // A=0, B_v=0, h0=0: every frame is the mean.
  Prng r0(9);
  const Tensor flat = synthesize_lds(m, Tensor::zeros({n}), 5, r0);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t j = 0; j < d; ++j) CHECK(flat.at(t, j) == m.y_bar[j]);

  // General A with B_v=0: frames are y_bar + C A^t h0.
  m.A = Tensor{{0.9, -0.2}, {0.1, 0.7}};
  const Tensor h0 = Tensor::vector({1.0, -1.0});
  Prng r1(9);
  const Tensor rolled = synthesize_lds(m, h0, 6, r1);
  std::vector<double> h = {1.0, -1.0};
  for (std::size_t t = 0; t < 6; ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      const double want = m.y_bar[j] + m.C.at(j, 0) * h[0] + m.C.at(j, 1) * h[1];
      CHECK(rolled.at(t, j) == doctest::Approx(want).epsilon(1e-12));
    }
    const std::vector<double> nh = {m.A.at(0, 0) * h[0] + m.A.at(0, 1) * h[1],
                                    m.A.at(1, 0) * h[0] + m.A.at(1, 1) * h[1]};
    h = nh;
  }

  // Determinism with noise, plus shape checks.
  m.B_v = Tensor::identity(n) * 0.5;
  Prng ra(17), rb(17);
  const Tensor s1 = synthesize_lds(m, h0, 50, ra);
  const Tensor s2 = synthesize_lds(m, h0, 50, rb);
  CHECK(frob(s1 - s2) == 0.0);
  Prng rc(17);
  CHECK_THROWS_AS(synthesize_lds(m, Tensor::vector({1.0}), 5, rc), ShapeError);
  CHECK(synthesize_lds(m, h0, 0, rc).rows() == 0);
}

TEST_CASE("fit on noisy LDS data reproduces per-pixel statistics in synthesis") {
  // Ground-truth model: damped rotation with moderate process noise.
  const std::size_t n = 2, d = 6;
  Prng rng(57);
  LdsModel truth;
  const double w = 0.35, rho = 0.9;
  truth.A = Tensor{{rho * std::cos(w), -rho * std::sin(w)}, {rho * std::sin(w), rho * std::cos(w)}};
  truth.B_v = Tensor::identity(n) * 0.3;
  truth.C = rng.gaussian_tensor({d, n});
  truth.y_bar = rng.gaussian_tensor({d});

  Prng gen(11);
  const Tensor all = synthesize_lds(truth, Tensor::zeros({n}), 3200, gen);
  // Drop the burn-in so the training set is (approximately) stationary.
  Tensor train(3000, d);
  for (std::size_t t = 0; t < 3000; ++t)
    for (std::size_t j = 0; j < d; ++j) train.at(t, j) = all.at(t + 200, j);

  const LdsModel m = fit_lds(train, n);
  Prng syn(23);
  const Tensor synth = synthesize_lds(m, Tensor::zeros({n}), 5000, syn);

  for (std::size_t j = 0; j < d; ++j) {
    double mu_t = 0.0, mu_s = 0.0;
    for (std::size_t t = 0; t < train.rows(); ++t) mu_t += train.at(t, j) / double(train.rows());
    for (std::size_t t = 0; t < synth.rows(); ++t) mu_s += synth.at(t, j) / double(synth.rows());
    double v_t = 0.0, v_s = 0.0;
    for (std::size_t t = 0; t < train.rows(); ++t)
      v_t += (train.at(t, j) - mu_t) * (train.at(t, j) - mu_t) / double(train.rows());
    for (std::size_t t = 0; t < synth.rows(); ++t)
      v_s += (synth.at(t, j) - mu_s) * (synth.at(t, j) - mu_s) / double(synth.rows());
    CHECK(std::fabs(mu_s - mu_t) < 0.05);
    CHECK(std::fabs(std::sqrt(v_s) - std::sqrt(v_t)) < 0.05);
  }
}

TEST_CASE("fit is mean-permutation-invariant and rotation-equivariant") {
  Prng rng(71);
  const Orbit o = make_rotation_orbit(200, 20, 7, rng);

  // Row permutation: the mean cannot change (beyond summation rounding).
  Tensor shuffled = o.seq;
  for (std::size_t t = 0; t < shuffled.rows() / 2; ++t) {
    const std::size_t u = shuffled.rows() - 1 - t;
    for (std::size_t j = 0; j < shuffled.cols(); ++j) {
      std::swap(shuffled.at(t, j), shuffled.at(u, j));
    }
  }
  const LdsModel m1 = fit_lds(o.seq, 2);
  const LdsModel m2 = fit_lds(shuffled, 2);
  for (std::size_t j = 0; j < 7; ++j) CHECK(m1.y_bar[j] == doctest::Approx(m2.y_bar[j]).epsilon(1e-12));

  // Orthogonal pixel rotation Q: fitting Q-rotated frames yields the
  // Q-rotated reconstruction and the same transition spectrum.
  Tensor q = Tensor::identity(7);
  const double th = 0.6;
  q.at(2, 2) = std::cos(th);
  q.at(2, 5) = -std::sin(th);
  q.at(5, 2) = std::sin(th);
  q.at(5, 5) = std::cos(th);
  const Tensor rotated = mat_mul(o.seq, transpose(q));  // rows become Q y_t
  const LdsModel mq = fit_lds(rotated, 2);

  const Tensor recon = reconstruct_lds(o.seq, m1);
  const Tensor recon_q = reconstruct_lds(rotated, mq);
  CHECK(frob(recon_q - mat_mul(recon, transpose(q))) <= 1e-8 * std::max(1.0, frob(recon)));

  const std::vector<std::complex<double>> e1 = eigenvalues(m1.A);
  const std::vector<std::complex<double>> e2 = eigenvalues(mq.A);
  CHECK(e1[0].real() == doctest::Approx(e2[0].real()).epsilon(1e-8));
  CHECK(std::fabs(e1[0].imag()) == doctest::Approx(std::fabs(e2[0].imag())).epsilon(1e-8));
}
