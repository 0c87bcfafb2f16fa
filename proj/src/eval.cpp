#include "dvae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <iostream>
#include <limits>

#include <json.hpp>

#include "dvae/errors.hpp"
#include "dvae/linalg.hpp"

namespace dvae {

namespace {

constexpr double kRidge = 1e-6;

Tensor col_means(const Tensor& m) {
  const std::size_t n = m.rows(), k = m.cols();
  Tensor mu(std::vector<std::size_t>{k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) mu[j] += m.at(i, j);
  mu *= 1.0 / static_cast<double>(n);
  return mu;
}

Tensor covariance(const Tensor& m, const Tensor& mu) {
  const std::size_t n = m.rows(), k = m.cols();
  Tensor cov(k, k);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t i = 0; i < k; ++i) {
      const double ei = m.at(t, i) - mu[i];
      if (ei == 0.0) continue;
      for (std::size_t j = i; j < k; ++j) cov.at(i, j) += ei * (m.at(t, j) - mu[j]);
    }
  const double inv = 1.0 / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i; j < k; ++j) {
      cov.at(i, j) *= inv;
      cov.at(j, i) = cov.at(i, j);
    }
  for (std::size_t i = 0; i < k; ++i) cov.at(i, i) += kRidge;
  return cov;
}

// Symmetric PSD square root via eigendecomposition (negatives clamped).
Tensor sym_sqrt(const Tensor& m) {
  const SymEigResult eig = sym_eig(m);
  const std::size_t n = m.rows();
  Tensor out(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const double s = std::sqrt(std::max(0.0, eig.values[k]));
    if (s == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const double vi = eig.vectors.at(i, k) * s;
      if (vi == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += vi * eig.vectors.at(j, k);
    }
  }
  return out;
}

// Min-cost perfect matching on a square cost matrix (potentials method).
double hungarian(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      int j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (int j = 1; j <= n; ++j) total += cost[match[j] - 1][j - 1];
  return total;
}

}  // namespace

double frechet_gaussian(const Tensor& ref_features, const Tensor& gen_features) {
  if (ref_features.ndim() != 2 || gen_features.ndim() != 2)
    throw ShapeError("frechet_gaussian: feature sets must be rank 2");
  if (ref_features.cols() != gen_features.cols())
    throw UsageError("frechet_gaussian: feature dimensions differ");
  if (ref_features.rows() < 2 || gen_features.rows() < 2)
    throw UsageError("frechet_gaussian: need at least 2 rows per side");

  const Tensor mu1 = col_means(ref_features);
  const Tensor mu2 = col_means(gen_features);
  const Tensor s1 = covariance(ref_features, mu1);
  const Tensor s2 = covariance(gen_features, mu2);
  const std::size_t k = mu1.numel();

  double mean_term = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const double e = mu1[j] - mu2[j];
    mean_term += e * e;
  }

  // Tr((S1 S2)^{1/2}) through the symmetric product S1^{1/2} S2 S1^{1/2}.
  const Tensor root1 = sym_sqrt(s1);
  const Tensor inner = mat_mul(mat_mul(root1, s2), root1);
  const SymEigResult eig = sym_eig(inner);
  double cross = 0.0;
  for (std::size_t j = 0; j < k; ++j) cross += std::sqrt(std::max(0.0, eig.values[j]));

  double trace = 0.0;
  for (std::size_t j = 0; j < k; ++j) trace += s1.at(j, j) + s2.at(j, j);
  return std::max(0.0, mean_term + trace - 2.0 * cross);
}

std::vector<double> temporal_autocorr(const Tensor& frames, std::size_t max_lag) {
  if (frames.ndim() != 2) throw ShapeError("temporal_autocorr: frames must be N x d");
  const std::size_t n = frames.rows(), d = frames.cols();
  if (max_lag == 0) throw UsageError("temporal_autocorr: max_lag must be >= 1");
  if (n <= max_lag)
    throw UsageError("temporal_autocorr: need more than " + std::to_string(max_lag) +
                     " frames");
  std::vector<double> out(max_lag, 0.0);
  bool any_pixel = false;
  for (std::size_t lag = 1; lag <= max_lag; ++lag) {
    double acc = 0.0;
    std::size_t used = 0;
    const std::size_t m = n - lag;
    for (std::size_t j = 0; j < d; ++j) {
      double ma = 0.0, mb = 0.0;
      for (std::size_t t = 0; t < m; ++t) {
        ma += frames.at(t, j);
        mb += frames.at(t + lag, j);
      }
      ma /= static_cast<double>(m);
      mb /= static_cast<double>(m);
      double saa = 0.0, sbb = 0.0, sab = 0.0;
      for (std::size_t t = 0; t < m; ++t) {
        const double ea = frames.at(t, j) - ma;
        const double eb = frames.at(t + lag, j) - mb;
        saa += ea * ea;
        sbb += eb * eb;
        sab += ea * eb;
      }
      const double denom = std::sqrt(saa * sbb);
      if (denom <= 0.0) continue;  // constant segment: skip this pixel
      acc += sab / denom;
      ++used;
    }
    if (used > 0) {
      out[lag - 1] = acc / static_cast<double>(used);
      any_pixel = true;
    }
  }
  if (!any_pixel)
    std::cerr << "warning: temporal_autocorr: every pixel is constant in time; "
                 "returning zeros\n";
  return out;
}

double spectrum_distance(const Tensor& a_learned, const Tensor& a_true) {
  if (a_learned.ndim() != 2 || a_learned.rows() != a_learned.cols())
    throw ShapeError("spectrum_distance: a_learned must be square");
  if (a_true.ndim() != 2 || a_true.rows() != a_true.cols())
    throw ShapeError("spectrum_distance: a_true must be square");
  if (a_learned.rows() != a_true.rows())
    throw UsageError("spectrum_distance: matrices must have the same size");
  const auto ev1 = eigenvalues(a_learned);
  const auto ev2 = eigenvalues(a_true);
  const std::size_t n = ev1.size();
  std::vector<std::vector<double>> cost(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) cost[i][j] = std::abs(ev1[i] - ev2[j]);
  return hungarian(cost);
}

namespace {

// Per-pixel temporal mean and standard deviation.
void pixel_stats(const Tensor& frames, Tensor& mean, Tensor& sd) {
  const std::size_t n = frames.rows(), d = frames.cols();
  mean = Tensor(std::vector<std::size_t>{d});
  sd = Tensor(std::vector<std::size_t>{d});
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < d; ++j) mean[j] += frames.at(t, j);
  mean *= 1.0 / static_cast<double>(n);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < d; ++j) {
      const double e = frames.at(t, j) - mean[j];
      sd[j] += e * e;
    }
  for (std::size_t j = 0; j < d; ++j) sd[j] = std::sqrt(sd[j] / static_cast<double>(n));
}

constexpr std::size_t kRawFeatureCap = 256;
constexpr std::size_t kPcaComponents = 32;

}  // namespace

EvalReport evaluate(const SequenceData& ref, const SequenceData& gen,
                    const EvalOptions& options) {
  if (ref.height != gen.height || ref.width != gen.width || ref.channels != gen.channels)
    throw UsageError("evaluate: frame dimensions differ between ref and gen");
  if (ref.num_frames() < 2 || gen.num_frames() < 2)
    throw UsageError("evaluate: need at least 2 frames per sequence");
  const std::size_t d = ref.frame_dim();

  EvalReport report;

  if (d <= kRawFeatureCap) {
    report.frechet_pixel = frechet_gaussian(ref.frames, gen.frames);
  } else {
    // PCA basis fitted on ref, applied to both.
    const Tensor mu = col_means(ref.frames);
    const std::size_t comps = std::min(kPcaComponents, std::min(ref.num_frames() - 1, d));
    Tensor centered = ref.frames;
    for (std::size_t t = 0; t < centered.rows(); ++t)
      for (std::size_t j = 0; j < d; ++j) centered.at(t, j) -= mu[j];
    const SvdResult svd = svd_thin(transpose(centered));  // d x N
    const Tensor basis = svd.u.cols_slice(0, comps);      // d x comps
    Tensor gen_centered = gen.frames;
    for (std::size_t t = 0; t < gen_centered.rows(); ++t)
      for (std::size_t j = 0; j < d; ++j) gen_centered.at(t, j) -= mu[j];
    report.frechet_pixel =
        frechet_gaussian(mat_mul(centered, basis), mat_mul(gen_centered, basis));
  }

  Tensor ref_mean, ref_sd, gen_mean, gen_sd;
  pixel_stats(ref.frames, ref_mean, ref_sd);
  pixel_stats(gen.frames, gen_mean, gen_sd);
  for (std::size_t j = 0; j < d; ++j) {
    report.mean_abs_err += std::fabs(ref_mean[j] - gen_mean[j]);
    report.std_abs_err += std::fabs(ref_sd[j] - gen_sd[j]);
  }
  report.mean_abs_err /= static_cast<double>(d);
  report.std_abs_err /= static_cast<double>(d);

  const std::vector<double> ac_ref = temporal_autocorr(ref.frames, options.lags);
  const std::vector<double> ac_gen = temporal_autocorr(gen.frames, options.lags);
  for (std::size_t l = 0; l < options.lags; ++l)
    report.autocorr_err.push_back(std::fabs(ac_ref[l] - ac_gen[l]));

  if (options.dyn != nullptr)
    report.stationarity_residual = stationarity_residual(options.dyn->A, options.dyn->B);
  if (options.dyn != nullptr && options.true_A != nullptr)
    report.spectrum_distance = spectrum_distance(options.dyn->A, *options.true_A);
  return report;
}

std::string eval_report_json(const EvalReport& report) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["frechet_pixel"] = report.frechet_pixel;
  j["mean_abs_err"] = report.mean_abs_err;
  j["std_abs_err"] = report.std_abs_err;
  j["autocorr_err"] = report.autocorr_err;
  if (report.stationarity_residual)
    j["stationarity_residual"] = *report.stationarity_residual;
  if (report.spectrum_distance) j["spectrum_distance"] = *report.spectrum_distance;
  return j.dump(2);
}

}  // namespace dvae
