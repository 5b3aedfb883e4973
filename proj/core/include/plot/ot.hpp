#pragma once

// Discrete optimal transport between two uniform-or-not measures:
// entropic Sinkhorn scaling in the kernel domain and in the log domain, and
// an exact solver for tiny uniform instances used as a test oracle.

#include <cstddef>
#include <cstdint>
#include <utility>

#include "plot/numerics.hpp"

namespace plot {

// Positive weights summing to one (within 1e-9).
class DiscreteMeasure {
 public:
  explicit DiscreteMeasure(Vec weights);

  const Vec& weights() const { return weights_; }
  std::size_t size() const { return weights_.size(); }
  double operator[](std::size_t i) const { return weights_[i]; }

 private:
  Vec weights_;
};

DiscreteMeasure uniform_measure(std::size_t n);

// M x N pairwise costs. Construction rejects non-finite entries.
class CostMatrix {
 public:
  explicit CostMatrix(Mat values);

  const Mat& values() const { return values_; }
  std::size_t rows() const { return values_.rows(); }
  std::size_t cols() const { return values_.cols(); }
  double operator()(std::size_t r, std::size_t c) const { return values_(r, c); }

 private:
  Mat values_;
};

// M x N coupling. Not validated on construction so that malformed plans can
// be reported by the operations that consume them.
struct TransportPlan {
  Mat mass;

  std::size_t rows() const { return mass.rows(); }
  std::size_t cols() const { return mass.cols(); }
  double operator()(std::size_t r, std::size_t c) const { return mass(r, c); }
};

struct SinkhornConfig {
  double lambda = 0.1;   // entropy weight
  int max_iter = 100;    // inner-loop cap
  double delta = 0.01;   // stop once mean |v_t - v_{t-1}| < delta
  bool log_domain = false;

  void validate() const;
};

struct SinkhornResult {
  TransportPlan plan;
  double cost = 0.0;  // <plan, C>
  int iterations = 0;
  bool converged = false;
  double row_residual = 0.0;  // L1 distance of plan row sums from u
  double col_residual = 0.0;  // L1 distance of plan column sums from v
  double marginal_residual = 0.0;  // max of the two
};

// Frobenius inner product <T, C>.
double transport_cost(const TransportPlan& t, const CostMatrix& c);

// -sum T log T with 0 log 0 = 0. Negative entries are rejected.
double plan_entropy(const TransportPlan& t);

// Kernel-domain Sinkhorn iterations starting from v = 1:
//   u <- a / (K v),  v <- b / (K^T u),  K = exp(-C / lambda),
// stopping when sum|v_t - v_{t-1}| / N < delta. Throws UnderflowError when
// K has an all-zero row or column or a denominator drops below 1e-300.
SinkhornResult sinkhorn(const CostMatrix& c, const DiscreteMeasure& u,
                        const DiscreteMeasure& v, const SinkhornConfig& cfg);

// Same iteration carried out on log-potentials with log-sum-exp reductions.
// Stays finite for lambda down to ~1e-3 on costs in [0, 2]; hitting max_iter
// is reported through `converged`, not thrown.
SinkhornResult sinkhorn_log_stabilized(const CostMatrix& c, const DiscreteMeasure& u,
                                       const DiscreteMeasure& v,
                                       const SinkhornConfig& cfg);

// Dispatches on cfg.log_domain.
SinkhornResult solve_entropic(const CostMatrix& c, const DiscreteMeasure& u,
                              const DiscreteMeasure& v, const SinkhornConfig& cfg);

struct ExactTransport {
  double cost = 0.0;
  TransportPlan plan;
};

inline constexpr std::size_t kExactOtMaxSize = 10;

// Exact OT under uniform marginals by enumeration. Rows and columns are
// replicated up to L = lcm(M, N) so that an optimal plan is a scaled L x L
// permutation; all L! permutations are scanned in lexicographic order and the
// first minimiser wins. Requires L <= kExactOtMaxSize.
ExactTransport exact_ot_uniform(const CostMatrix& c);

struct OracleReport {
  std::size_t trials = 0;
  double max_gap = 0.0;   // max |entropic cost - exact cost|
  double mean_gap = 0.0;
  double max_residual = 0.0;
  std::size_t converged = 0;
};

// Compares the entropic solver with exact_ot_uniform on `trials` random
// rows x cols costs with entries uniform in [0, 1).
OracleReport oracle_check(std::size_t rows, std::size_t cols, std::size_t trials,
                          const SinkhornConfig& cfg, std::uint64_t seed);

}  // namespace plot
