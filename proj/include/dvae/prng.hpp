#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "dvae/tensor.hpp"

namespace dvae {

// Seedable xoshiro256** stream (Blackman/Vigna), state initialized with
// splitmix64. Gaussians come from Box-Muller over the uniform stream; the
// transcendentals involved are evaluated by fixed polynomial routines in
// prng.cpp so that a seed produces the same bits on every platform.
class Prng {
public:
  explicit Prng(std::uint64_t seed);

  std::uint64_t next_u64();
  double uniform();   // [0, 1)
  double gaussian();  // N(0, 1)

  // Bounded draw without modulo bias. n must be positive.
  std::size_t uniform_index(std::size_t n);

  Tensor gaussian_tensor(std::vector<std::size_t> shape);
  Tensor uniform_tensor(std::vector<std::size_t> shape, double lo, double hi);

  // Fisher-Yates permutation of {0, ..., n-1}.
  std::vector<std::size_t> permutation(std::size_t n);

private:
  std::array<std::uint64_t, 4> state_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

namespace detail {
// Deterministic ln(x) for x > 0 and sin/cos of 2*pi*u for u in [0,1).
// Pure IEEE arithmetic with fixed operation order; accurate to ~1e-15.
double det_log(double x);
void det_sincos_turn(double u, double* sin_out, double* cos_out);
}  // namespace detail

}  // namespace dvae
