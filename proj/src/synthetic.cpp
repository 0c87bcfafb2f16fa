#include "dvae/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "dvae/errors.hpp"
#include "dvae/linalg.hpp"
#include "dvae/prng.hpp"
#include "dvae/var_dynamics.hpp"

namespace dvae {

namespace {

void add_blob(Tensor& frame, std::size_t res, double cy, double cx, double sigma,
              double amplitude) {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t i = 0; i < res; ++i)
    for (std::size_t j = 0; j < res; ++j) {
      const double dy = static_cast<double>(i) - cy;
      const double dx = static_cast<double>(j) - cx;
      const double v = frame.at(i, j) + amplitude * std::exp(-(dy * dy + dx * dx) * inv);
      frame.at(i, j) = std::min(1.0, v);
    }
}

// Observation noise relative to the sequence's own per-pixel variability.
void add_relative_noise(Tensor& frames, double noise_scale, Prng& rng) {
  if (noise_scale <= 0.0) return;
  const std::size_t n = frames.rows(), d = frames.cols();
  double var_sum = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t t = 0; t < n; ++t) mean += frames.at(t, j);
    mean /= static_cast<double>(n);
    for (std::size_t t = 0; t < n; ++t) {
      const double e = frames.at(t, j) - mean;
      sq += e * e;
    }
    var_sum += sq / static_cast<double>(n);
  }
  const double sig_std = std::sqrt(var_sum / static_cast<double>(d));
  const double noise_std = noise_scale * sig_std;
  for (std::size_t i = 0; i < frames.numel(); ++i)
    frames[i] = std::clamp(frames[i] + noise_std * rng.gaussian(), 0.0, 1.0);
}

SequenceData wrap_frames(Tensor frames, std::size_t res) {
  SequenceData seq;
  seq.frames = std::move(frames);
  seq.height = res;
  seq.width = res;
  seq.channels = 1;
  return seq;
}

SyntheticResult gen_rotating_dot(const SyntheticSpec& spec) {
  const std::size_t res = spec.resolution, T = spec.length;
  const double center = (static_cast<double>(res) - 1.0) / 2.0;
  const double orbit = 0.28 * static_cast<double>(res);
  const double sigma = 0.14 * static_cast<double>(res);
  Prng rng(spec.seed);
  Tensor frames(T, res * res);
  for (std::size_t t = 0; t < T; ++t) {
    double u = spec.angular_velocity * static_cast<double>(t);
    u -= std::floor(u);
    double s, c;
    detail::det_sincos_turn(u, &s, &c);
    Tensor frame(res, res);
    add_blob(frame, res, center + orbit * s, center + orbit * c, sigma, 1.0);
    for (std::size_t i = 0; i < res * res; ++i) frames.at(t, i) = frame[i];
  }
  add_relative_noise(frames, spec.noise_scale, rng);
  return {wrap_frames(std::move(frames), res), Tensor(), Tensor()};
}

SyntheticResult gen_bouncing_bar(const SyntheticSpec& spec) {
  const std::size_t res = spec.resolution, T = spec.length;
  const double bw = std::max(1.5, static_cast<double>(res) / 8.0);
  const double lo = bw, hi = static_cast<double>(res) - 1.0 - bw;
  const double span = std::max(1.0, hi - lo);
  const double speed = std::max(0.5, static_cast<double>(res) / 20.0);
  Prng rng(spec.seed);
  Tensor frames(T, res * res);
  for (std::size_t t = 0; t < T; ++t) {
    const double ph = std::fmod(speed * static_cast<double>(t), 2.0 * span);
    const double pos = lo + (ph <= span ? ph : 2.0 * span - ph);
    for (std::size_t i = 0; i < res; ++i)
      for (std::size_t j = 0; j < res; ++j) {
        const double v = 1.0 - std::fabs(static_cast<double>(j) - pos) / bw;
        frames.at(t, i * res + j) = std::max(0.0, v);
      }
  }
  add_relative_noise(frames, spec.noise_scale, rng);
  return {wrap_frames(std::move(frames), res), Tensor(), Tensor()};
}

// Stable block-rotation transition with exact A A^T + B B^T = I companion.
Tensor make_rotation_transition(std::size_t n, Prng& rng) {
  Tensor a(n, n);
  std::size_t k = 0;
  while (k + 1 < n) {
    const double rho = 0.85 + 0.1 * rng.uniform();
    const double phi = 0.1 + 0.4 * rng.uniform();
    const double c = rho * std::cos(phi), s = rho * std::sin(phi);
    a.at(k, k) = c;
    a.at(k, k + 1) = -s;
    a.at(k + 1, k) = s;
    a.at(k + 1, k + 1) = c;
    k += 2;
  }
  if (k < n) a.at(k, k) = 0.85 + 0.1 * rng.uniform();
  return a;
}

// Gram-Schmidt orthonormal columns from a Gaussian draw.
Tensor random_orthonormal_columns(std::size_t rows, std::size_t cols, Prng& rng) {
  Tensor m = rng.gaussian_tensor({rows, cols});
  for (std::size_t j = 0; j < cols; ++j) {
    for (std::size_t p = 0; p < j; ++p) {
      double dot = 0.0;
      for (std::size_t i = 0; i < rows; ++i) dot += m.at(i, j) * m.at(i, p);
      for (std::size_t i = 0; i < rows; ++i) m.at(i, j) -= dot * m.at(i, p);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < rows; ++i) norm += m.at(i, j) * m.at(i, j);
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw NumericError("random orthonormal basis degenerated");
    for (std::size_t i = 0; i < rows; ++i) m.at(i, j) /= norm;
  }
  return m;
}

SyntheticResult gen_linear_lds(const SyntheticSpec& spec) {
  const std::size_t res = spec.resolution, T = spec.length;
  const std::size_t d = res * res, n = spec.latent_dim;
  if (n == 0 || n > d) throw UsageError("spec.latent_dim: must be in [1, resolution^2]");
  Prng rng(spec.seed);

  Var1Model dyn;
  dyn.A = make_rotation_transition(n, rng);
  Tensor gram = Tensor::identity(n);
  gram -= mat_mul(dyn.A, transpose(dyn.A));
  dyn.B = cholesky(gram);

  // Stationary start: the process has unit marginal covariance by design.
  const Tensor h0 = rng.gaussian_tensor({n});
  const Tensor states = sample_var1(dyn, h0, T, rng);  // T x n

  const Tensor c0 = random_orthonormal_columns(d, n, rng);
  Tensor dev = mat_mul(states, transpose(c0));  // T x d

  if (spec.noise_scale > 0.0) {
    // Unit states + orthonormal columns give mean per-pixel variance n/d.
    const double noise_std = spec.noise_scale * std::sqrt(double(n) / double(d));
    for (std::size_t i = 0; i < dev.numel(); ++i) dev[i] += noise_std * rng.gaussian();
  }

  // Fit everything into [0,1] with one affine map; the transition is
  // unaffected and the scaled observation matrix is returned as truth.
  const double m = dev.max_abs();
  const double scale = m > 0.0 ? 0.44 / m : 1.0;
  Tensor frames(T, d);
  for (std::size_t i = 0; i < dev.numel(); ++i) frames[i] = 0.5 + scale * dev[i];

  SyntheticResult out{wrap_frames(std::move(frames), res), dyn.A, c0};
  out.true_C *= scale;
  return out;
}

SyntheticResult gen_cyclic_glyphs(const SyntheticSpec& spec) {
  const std::size_t res = spec.resolution, T = spec.length;
  const std::size_t K = spec.cycle_period;
  if (K < 2) throw UsageError("spec.cycle_period: need at least 2 symbols");
  Prng rng(spec.seed);

  struct Blob {
    double cy, cx, sigma, amp;
  };
  std::vector<std::vector<Blob>> glyphs(K);
  const double r = static_cast<double>(res);
  for (std::size_t k = 0; k < K; ++k)
    for (int b = 0; b < 3; ++b) {
      Blob blob;
      blob.cy = (0.2 + 0.6 * rng.uniform()) * r;
      blob.cx = (0.2 + 0.6 * rng.uniform()) * r;
      blob.sigma = (0.08 + 0.07 * rng.uniform()) * r;
      blob.amp = 0.6 + 0.4 * rng.uniform();
      glyphs[k].push_back(blob);
    }

  Tensor frames(T, res * res);
  for (std::size_t t = 0; t < T; ++t) {
    const double dy = rng.uniform() - 0.5;
    const double dx = rng.uniform() - 0.5;
    const double gain = 0.85 + 0.15 * rng.uniform();
    Tensor frame(res, res);
    for (const Blob& blob : glyphs[t % K])
      add_blob(frame, res, blob.cy + dy, blob.cx + dx, blob.sigma, gain * blob.amp);
    for (std::size_t i = 0; i < res * res; ++i) frames.at(t, i) = frame[i];
  }
  add_relative_noise(frames, spec.noise_scale, rng);
  return {wrap_frames(std::move(frames), res), Tensor(), Tensor()};
}

}  // namespace

SyntheticResult gen_synthetic(const SyntheticSpec& spec) {
  if (spec.resolution < 4) throw UsageError("spec.resolution: must be at least 4");
  if (spec.length < 3) throw UsageError("spec.length: must be at least 3");
  if (spec.noise_scale < 0.0) throw UsageError("spec.noise_scale: must be non-negative");
  if (spec.kind == "rotating_dot") return gen_rotating_dot(spec);
  if (spec.kind == "bouncing_bar") return gen_bouncing_bar(spec);
  if (spec.kind == "linear_lds") return gen_linear_lds(spec);
  if (spec.kind == "cyclic_glyphs") return gen_cyclic_glyphs(spec);
  throw UsageError("spec.kind: unknown synthetic kind \"" + spec.kind + "\"");
}

}  // namespace dvae
