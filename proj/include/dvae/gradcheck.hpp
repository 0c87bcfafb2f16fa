#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "dvae/tensor.hpp"

namespace dvae {

// A differentiable scalar objective exposed coordinate-wise for finite
// differencing. `loss` must be deterministic in the parameters (any internal
// randomness held fixed) and reports the smallest |preactivation| seen across
// kinked activations so checks straddling a kink can be discarded.
struct GradcheckProblem {
  std::vector<Tensor*> params;
  std::function<double(double* kink_margin)> loss;
  // Analytic gradient at the current parameter values, same order as params.
  std::function<std::vector<Tensor>()> grads;
};

struct GradcheckOptions {
  std::size_t max_coords = 200;  // coordinates sampled (all, if fewer exist)
  double step = 1e-5;
  double kink_tol = 1e-4;  // skip coords whose evaluations pass this close to a kink
  std::uint64_t seed = 1234;
};

struct GradcheckReport {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  // Location and values of the worst coordinate, for diagnostics.
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

GradcheckReport gradcheck(const GradcheckProblem& prob, const GradcheckOptions& opts = {});

}  // namespace dvae
