#pragma once

#include <cstddef>

#include "dvae/prng.hpp"
#include "dvae/tensor.hpp"

namespace dvae {

// First-order latent dynamics h_{t+1} = A h_t + B v_t, v_t ~ N(0, I).
// Stationarity with a standard-Gaussian marginal needs A A^T + B B^T = I;
// training enforces that softly, so the fields are unconstrained here.
struct Var1Model {
  Tensor A;
  Tensor B;
};

// Second-order dynamics h_{t+2} = A0 h_t + A1 h_{t+1} + B v_t, with the
// regularizer weights used when such a model is trained end to end.
struct Var2Model {
  Tensor A0;
  Tensor A1;
  Tensor B;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
};

// The linear layer that maps stacked latent noise to correlated states:
// order 1 applies [[I,0],[A,B]], order 2 the lower-triangular block matrix
// [[I,0,0],[F1,F2,0],[F3,F4,F5]].
struct DynamicLayerF {
  int order = 1;
  Tensor A, B;                 // order 1 blocks
  Tensor F1, F2, F3, F4, F5;   // order 2 blocks

  std::size_t n() const;

  static DynamicLayerF order1(Tensor A, Tensor B);
  static DynamicLayerF order2(Tensor F1, Tensor F2, Tensor F3, Tensor F4, Tensor F5);
};

// Dense matrix of the layer (2n x 2n or 3n x 3n).
Tensor dense_F(const DynamicLayerF& layer);

// Covariance of two succeeding states when A A^T + B B^T = I: [[I, A^T],[A, I]].
Tensor joint_cov_order1(const Tensor& A);

struct StatePair {
  Tensor h1;
  Tensor h2;
};
struct StateTriple {
  Tensor h1;
  Tensor h2;
  Tensor h3;
};

// x is a 2n vector or a batch x 2n matrix; h1 = x1, h2 = A x1 + B x2.
StatePair dynamic_layer_forward(const Tensor& x, const DynamicLayerF& layer);
// Order-2 counterpart on 3n inputs.
StateTriple dynamic_layer_forward2(const Tensor& x, const DynamicLayerF& layer);

// ||A A^T + B B^T - I||_F^2.
double stationarity_residual(const Tensor& A, const Tensor& B);
// Gradient of stationarity_residual: dA = 4 M A, dB = 4 M B with
// M = A A^T + B B^T - I. Accumulated into dA/dB.
void stationarity_residual_grad(const Tensor& A, const Tensor& B, Tensor& dA, Tensor& dB,
                                double weight = 1.0);

// Trajectory of `steps` states, row 0 = h0, h_{t+1} = A h_t + B v_t.
// Warns (stderr) when spectral radius of A is >= 1 but still samples.
Tensor sample_var1(const Var1Model& model, const Tensor& h0, std::size_t steps, Prng& rng);

// F F^T of the order-2 layer assembled blockwise (3n x 3n).
Tensor joint_cov_order2(const DynamicLayerF& layer);

// R(F) = l1 ||F1 F1^T + F2 F2^T - I||^2 + l2 ||F3 F3^T + F4 F4^T + F5 F5^T - I||^2
//      + l3 ||F3 F1^T + F4 F2^T - F1||^2   (squared Frobenius norms).
double order2_regularizer(const DynamicLayerF& layer, double l1, double l2, double l3);

struct Order2Grads {
  Tensor F1, F2, F3, F4, F5;
};
Order2Grads order2_regularizer_grad(const DynamicLayerF& layer, double l1, double l2,
                                    double l3);

// Recover (A0, A1, B) from the stationary cross-covariances
// F1 = Cov(h_t, h_{t+1})^T and F3 = Cov(h_t, h_{t+2})^T of a unit-variance
// order-2 process:
//   A0 = (F3 - F1 F1)(I - F1^T F1)^{-1}
//   A1 = F1 - A0 F1^T
//   B B^T = I - A0 A0^T - A1 A1^T - A0 F1^T A1^T - A1 F1 A0^T
// Throws DegenerateError when I - F1^T F1 is numerically singular
// (condition number above kSolveOrder2ConditionCap) and
// InfeasibleCovarianceError when the implied B B^T is not PSD.
inline constexpr double kSolveOrder2ConditionCap = 1e8;
Var2Model solve_order2(const Tensor& F1, const Tensor& F3);

// Max Frobenius defect of the three stationarity equations above for a
// candidate model; solve_order2 output satisfies this to ~1e-8 on exact input.
double order2_equation_residual(const Var2Model& model, const Tensor& F1, const Tensor& F3);

// Trajectory of `steps` states, rows 0 and 1 = h0, h1, then the recursion.
Tensor sample_var2(const Var2Model& model, const Tensor& h0, const Tensor& h1,
                   std::size_t steps, Prng& rng);

}  // namespace dvae
