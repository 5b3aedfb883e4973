#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "plot/errors.hpp"
#include "plot/ot.hpp"

namespace plot {

ExactTransport exact_ot_uniform(const CostMatrix& c) {
  const std::size_t m = c.rows();
  const std::size_t n = c.cols();
  if (m == 0 || n == 0) throw ShapeError("exact_ot_uniform: empty cost matrix");
  const std::size_t l = std::lcm(m, n);
  if (l > kExactOtMaxSize) {
    throw ValueError("exact_ot_uniform: lcm(" + std::to_string(m) + ", " + std::to_string(n) +
                     ") = " + std::to_string(l) + " exceeds the enumeration limit of " +
                     std::to_string(kExactOtMaxSize));
  }
  const std::size_t row_rep = l / m;
  const std::size_t col_rep = l / n;

  // Replicated L x L cost: row i maps to i / row_rep, column j to j / col_rep.
  Mat expanded(l, l);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < l; ++j) expanded(i, j) = c(i / row_rep, j / col_rep);

  std::vector<std::size_t> perm(l);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::size_t> best = perm;
  double best_sum = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < l; ++i) s += expanded(i, perm[i]);
    if (s < best_sum) {
      best_sum = s;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  ExactTransport out;
  out.cost = best_sum / static_cast<double>(l);
  out.plan.mass = Mat(m, n);
  const double unit = 1.0 / static_cast<double>(l);
  for (std::size_t i = 0; i < l; ++i) out.plan.mass(i / row_rep, best[i] / col_rep) += unit;
  return out;
}

OracleReport oracle_check(std::size_t rows, std::size_t cols, std::size_t trials,
                          const SinkhornConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (rows == 0 || cols == 0) throw ValueError("oracle_check: empty shape");
  if (std::lcm(rows, cols) > kExactOtMaxSize) {
    throw ValueError("oracle_check: lcm(" + std::to_string(rows) + ", " + std::to_string(cols) +
                     ") exceeds " + std::to_string(kExactOtMaxSize));
  }
  if (trials == 0) throw ValueError("oracle_check: trials must be at least 1");
  Rng rng(seed);
  const DiscreteMeasure u = uniform_measure(rows);
  const DiscreteMeasure v = uniform_measure(cols);
  OracleReport r;
  r.trials = trials;
  double gap_sum = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    Mat m(rows, cols);
    for (double& x : m.values()) x = rng.uniform();
    const CostMatrix c(std::move(m));
    const SinkhornResult s = solve_entropic(c, u, v, cfg);
    const double gap = std::abs(s.cost - exact_ot_uniform(c).cost);
    gap_sum += gap;
    r.max_gap = std::max(r.max_gap, gap);
    r.max_residual = std::max(r.max_residual, s.marginal_residual);
    if (s.converged) ++r.converged;
  }
  r.mean_gap = gap_sum / static_cast<double>(trials);
  return r;
}

}  // namespace plot
