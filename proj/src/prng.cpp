#include "dvae/prng.hpp"

#include <cmath>

#include "dvae/errors.hpp"

namespace dvae {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

namespace detail {

double det_log(double x) {
  // Range-reduce to m in [sqrt(0.5), sqrt(2)), x = m * 2^e, then
  // ln m = 2 atanh((m-1)/(m+1)) as a fixed-length odd series.
  int e = 0;
  double m = std::frexp(x, &e);  // m in [0.5, 1)
  if (m < 0.70710678118654752440) {
    m *= 2.0;
    e -= 1;
  }
  const double t = (m - 1.0) / (m + 1.0);
  const double t2 = t * t;
  double p = 1.0 / 25.0;
  p = p * t2 + 1.0 / 23.0;
  p = p * t2 + 1.0 / 21.0;
  p = p * t2 + 1.0 / 19.0;
  p = p * t2 + 1.0 / 17.0;
  p = p * t2 + 1.0 / 15.0;
  p = p * t2 + 1.0 / 13.0;
  p = p * t2 + 1.0 / 11.0;
  p = p * t2 + 1.0 / 9.0;
  p = p * t2 + 1.0 / 7.0;
  p = p * t2 + 1.0 / 5.0;
  p = p * t2 + 1.0 / 3.0;
  p = p * t2 + 1.0;
  const double log_m = 2.0 * t * p;
  // ln2 split keeps e*ln2 accurate for large |e|.
  const double ln2_hi = 6.93147180369123816490e-01;
  const double ln2_lo = 1.90821492927058770002e-10;
  return static_cast<double>(e) * ln2_hi + (log_m + static_cast<double>(e) * ln2_lo);
}

void det_sincos_turn(double u, double* sin_out, double* cos_out) {
  // Quadrant split is exact: 4u keeps all bits of u, and f = 4u - q is an
  // exact binary subtraction.
  const double v = u * 4.0;
  const int q = static_cast<int>(v) & 3;
  const double f = v - static_cast<double>(static_cast<int>(v));
  const double half_pi = 1.57079632679489661923;
  const double p = f * half_pi;  // [0, pi/2)
  const double z = p * p;

  // Taylor series of sin/cos, 13 terms each; remainder < 1e-19 on [0, pi/2).
  static constexpr int kTerms = 13;
  static constexpr auto make_factorials = [] {
    std::array<double, 2 * kTerms + 1> f{};
    f[0] = 1.0;
    for (int i = 1; i <= 2 * kTerms; ++i) f[i] = f[i - 1] * static_cast<double>(i);
    return f;
  };
  static constexpr std::array<double, 2 * kTerms + 1> kFact = make_factorials();

  double s = 0.0, c = 0.0;
  for (int k = kTerms - 1; k >= 0; --k) {
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;
    s = s * z + sign / kFact[2 * k + 1];
    c = c * z + sign / kFact[2 * k];
  }
  s *= p;

  switch (q) {
    case 0: *sin_out = s;  *cos_out = c;  break;
    case 1: *sin_out = c;  *cos_out = -s; break;
    case 2: *sin_out = -s; *cos_out = -c; break;
    default: *sin_out = -c; *cos_out = s; break;
  }
}

}  // namespace detail

Prng::Prng(std::uint64_t seed) {
  std::uint64_t s = seed;
  for (auto& w : state_) w = splitmix64(s);
}

std::uint64_t Prng::next_u64() {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Prng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Prng::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * detail::det_log(u1));
  double s = 0.0, c = 0.0;
  detail::det_sincos_turn(u2, &s, &c);
  spare_ = r * s;
  has_spare_ = true;
  return r * c;
}

std::size_t Prng::uniform_index(std::size_t n) {
  if (n == 0) throw UsageError("uniform_index: n must be positive");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t min = (0 - bound) % bound;  // 2^64 mod n
  std::uint64_t r = next_u64();
  while (r < min) r = next_u64();
  return static_cast<std::size_t>(r % bound);
}

Tensor Prng::gaussian_tensor(std::vector<std::size_t> shape) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = gaussian();
  return t;
}

Tensor Prng::uniform_tensor(std::vector<std::size_t> shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = lo + (hi - lo) * uniform();
  return t;
}

std::vector<std::size_t> Prng::permutation(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = uniform_index(i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace dvae
