#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "dvae/data_io.hpp"
#include "dvae/tensor.hpp"
#include "dvae/var_dynamics.hpp"

namespace dvae {

// Frechet distance between the Gaussian fits of two feature-row sets:
// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}). Covariances get a
// 1e-6 I ridge, which keeps the matrix square root well-posed even when the
// feature dimension approaches (or exceeds) the sample counts; fewer than
// two rows on either side is a usage error.
double frechet_gaussian(const Tensor& ref_features, const Tensor& gen_features);

// Mean over pixels of the lag-l Pearson autocorrelation of each pixel's time
// series, for l = 1..max_lag. Zero-variance pixels are skipped; if every
// pixel is constant a warning is printed and zeros are returned.
std::vector<double> temporal_autocorr(const Tensor& frames, std::size_t max_lag);

// Minimum over eigenvalue assignments of the summed absolute differences
// |lambda_i(a) - lambda_j(b)| (optimal bipartite matching), so similar and
// permuted spectra compare as equal.
double spectrum_distance(const Tensor& a_learned, const Tensor& a_true);

struct EvalOptions {
  std::size_t lags = 5;
  // Optional model context: learned dynamics for the stationarity residual,
  // and the true transition for the spectrum distance.
  const Var1Model* dyn = nullptr;
  const Tensor* true_A = nullptr;
};

struct EvalReport {
  double frechet_pixel = 0.0;
  double mean_abs_err = 0.0;  // mean over pixels of |temporal mean difference|
  double std_abs_err = 0.0;   // mean over pixels of |temporal std difference|
  std::vector<double> autocorr_err;  // |ref - gen| per lag 1..K
  std::optional<double> stationarity_residual;
  std::optional<double> spectrum_distance;
};

// Frechet features are raw pixels when the frame dimension is <= 256,
// otherwise the top-32 PCA projection fitted on ref.
EvalReport evaluate(const SequenceData& ref, const SequenceData& gen,
                    const EvalOptions& options = {});

// Versioned JSON rendering of a report.
std::string eval_report_json(const EvalReport& report);

}  // namespace dvae
