#pragma once

#include <cstddef>

#include "dvae/prng.hpp"
#include "dvae/tensor.hpp"

namespace dvae {

// Linear dynamic texture model:
//   h_{t+1} = A h_t + v_t,   Cov(v_t) = B_v B_v^T
//   y_t     = y_bar + C h_t
struct LdsModel {
  Tensor A;      // n x n transition
  Tensor C;      // d x n observation (full column rank)
  Tensor y_bar;  // rank-1, length d
  Tensor B_v;    // n x n noise factor
};

// Suboptimal SVD identification: y_bar = frame mean; thin SVD of the centered
// frame matrix gives C (top-n left singular vectors) and states
// H = diag(S_n) V_n^T; A is the least-squares fit of H_{2:N} on H_{1:N-1};
// B_v is the Cholesky factor of the symmetrized, eigenvalue-clipped residual
// covariance. seq rows are frames (N x d).
// Throws InsufficientDataError when N <= n, DegenerateError when d < n.
LdsModel fit_lds(const Tensor& seq, std::size_t n);

// Reconstruction of the training frames implied by the fitted states:
// y_hat_t = y_bar + C h_t with H from the same SVD as fit_lds.
Tensor reconstruct_lds(const Tensor& seq, const LdsModel& model);

// Iterate the model for `steps` frames from state h0 (noise via rng; pass a
// zero B_v for deterministic rollouts). Row t is y_t = y_bar + C h_t with
// h_0 = h0.
Tensor synthesize_lds(const LdsModel& model, const Tensor& h0, std::size_t steps, Prng& rng);

}  // namespace dvae
