#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "dvae/data_io.hpp"
#include "dvae/tensor.hpp"

namespace dvae {

// Parameters for the bundled toy processes. All generators are deterministic
// given `seed`; noise_scale is the observation-noise standard deviation
// relative to the per-pixel signal standard deviation (0 = clean).
struct SyntheticSpec {
  std::string kind;  // rotating_dot | bouncing_bar | linear_lds | cyclic_glyphs
  std::size_t resolution = 16;
  std::size_t length = 100;
  std::uint64_t seed = 0;
  double angular_velocity = 0.05;  // rotating_dot: turns per frame
  double noise_scale = 0.0;
  std::size_t cycle_period = 5;  // cyclic_glyphs: number of symbols K
  std::size_t latent_dim = 2;    // linear_lds: state dimension n
};

struct SyntheticResult {
  SequenceData seq;
  // Ground truth of the generating process for linear_lds (state transition
  // and observation map after output scaling); empty tensors otherwise.
  Tensor true_A;
  Tensor true_C;
};

SyntheticResult gen_synthetic(const SyntheticSpec& spec);

}  // namespace dvae
