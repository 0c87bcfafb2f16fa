#include "dvae/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "dvae/errors.hpp"
#include "dvae/prng.hpp"

namespace dvae {

GradcheckReport gradcheck(const GradcheckProblem& prob, const GradcheckOptions& opts) {
  if (prob.params.empty()) throw UsageError("gradcheck: no parameters");
  if (!prob.loss || !prob.grads) throw UsageError("gradcheck: loss/grads not set");

  std::size_t total = 0;
  for (const Tensor* p : prob.params) total += p->numel();
  if (total == 0) throw UsageError("gradcheck: parameters are empty");

  const std::vector<Tensor> analytic = prob.grads();
  if (analytic.size() != prob.params.size())
    throw ShapeError("gradcheck: grads() returned wrong tensor count");
  for (std::size_t k = 0; k < analytic.size(); ++k)
    if (!analytic[k].same_shape(*prob.params[k]))
      throw ShapeError("gradcheck: gradient shape mismatch at slot " + std::to_string(k));

  // Flat coordinate -> (tensor, index) resolution.
  const auto locate = [&](std::size_t flat) {
    for (std::size_t k = 0; k < prob.params.size(); ++k) {
      if (flat < prob.params[k]->numel()) return std::make_pair(k, flat);
      flat -= prob.params[k]->numel();
    }
    throw UsageError("gradcheck: coordinate out of range");
  };

  std::vector<std::size_t> coords;
  if (total <= opts.max_coords) {
    coords.resize(total);
    for (std::size_t i = 0; i < total; ++i) coords[i] = i;
  } else {
    // Distinct random sample.
    Prng rng(opts.seed);
    std::vector<std::size_t> pool(total);
    for (std::size_t i = 0; i < total; ++i) pool[i] = i;
    for (std::size_t i = 0; i < opts.max_coords; ++i) {
      const std::size_t j = i + rng.uniform_index(total - i);
      std::swap(pool[i], pool[j]);
      coords.push_back(pool[i]);
    }
  }

  GradcheckReport rep;
  const double h = opts.step;
  for (const std::size_t flat : coords) {
    const auto [k, idx] = locate(flat);
    Tensor& p = *prob.params[k];
    const double saved = p[idx];

    double margin_plus = std::numeric_limits<double>::infinity();
    double margin_minus = std::numeric_limits<double>::infinity();
    p[idx] = saved + h;
    const double f_plus = prob.loss(&margin_plus);
    p[idx] = saved - h;
    const double f_minus = prob.loss(&margin_minus);
    p[idx] = saved;

    if (margin_plus < opts.kink_tol || margin_minus < opts.kink_tol) {
      ++rep.skipped;
      continue;
    }

    const double numeric = (f_plus - f_minus) / (2.0 * h);
    const double a = analytic[k][idx];
    const double denom = std::max({1.0, std::fabs(a), std::fabs(numeric)});
    const double rel = std::fabs(a - numeric) / denom;
    ++rep.checked;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_param = k;
      rep.worst_index = idx;
      rep.worst_analytic = a;
      rep.worst_numeric = numeric;
    }
  }
  return rep;
}

}  // namespace dvae
