#include "plot/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "plot/errors.hpp"

namespace plot {
namespace {

constexpr double kMinDenominator = 1e-300;

void check_dims(const CostMatrix& c, const DiscreteMeasure& u, const DiscreteMeasure& v) {
  if (c.rows() != u.size() || c.cols() != v.size()) {
    throw ShapeError("sinkhorn: cost is " + std::to_string(c.rows()) + "x" +
                     std::to_string(c.cols()) + " but marginals have sizes " +
                     std::to_string(u.size()) + " and " + std::to_string(v.size()));
  }
  if (c.rows() == 0 || c.cols() == 0) throw ShapeError("sinkhorn: empty cost matrix");
}

void fill_residuals(SinkhornResult& r, const DiscreteMeasure& u, const DiscreteMeasure& v) {
  const Mat& t = r.plan.mass;
  double row_res = 0.0;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double s = 0.0;
    for (double x : t.row(i)) s += x;
    row_res += std::abs(s - u[i]);
  }
  double col_res = 0.0;
  for (std::size_t j = 0; j < t.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.rows(); ++i) s += t(i, j);
    col_res += std::abs(s - v[j]);
  }
  r.row_residual = row_res;
  r.col_residual = col_res;
  r.marginal_residual = std::max(row_res, col_res);
}

void finish(SinkhornResult& r, const CostMatrix& c, const DiscreteMeasure& u,
            const DiscreteMeasure& v) {
  if (!all_finite(r.plan.mass.values())) {
    throw NumericError("sinkhorn: transport plan is not finite");
  }
  r.cost = transport_cost(r.plan, c);
  if (std::isnan(r.cost)) throw NumericError("sinkhorn: transport cost is NaN");
  fill_residuals(r, u, v);
}

std::string underflow_message(const std::string& what, std::size_t index, double lambda) {
  return "sinkhorn: exp(-C/lambda) underflows (" + what + " " + std::to_string(index) +
         ", lambda=" + std::to_string(lambda) +
         "); use a larger lambda or the log-domain solver";
}

double log_sum_exp(std::span<const double> xs) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : xs) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

DiscreteMeasure::DiscreteMeasure(Vec weights) : weights_(std::move(weights)) {
  if (weights_.empty()) throw ValueError("DiscreteMeasure: no support points");
  double total = 0.0;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    if (!(weights_[i] > 0.0) || !std::isfinite(weights_[i])) {
      throw ValueError("DiscreteMeasure: weight " + std::to_string(i) + " is not positive");
    }
    total += weights_[i];
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ValueError("DiscreteMeasure: weights sum to " + std::to_string(total));
  }
}

DiscreteMeasure uniform_measure(std::size_t n) {
  if (n == 0) throw ValueError("uniform_measure: n must be at least 1");
  return DiscreteMeasure(Vec(n, 1.0 / static_cast<double>(n)));
}

CostMatrix::CostMatrix(Mat values) : values_(std::move(values)) {
  if (!all_finite(values_.values())) throw ValueError("CostMatrix: non-finite entry");
}

void SinkhornConfig::validate() const {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw ValueError("SinkhornConfig: lambda must be positive");
  }
  if (max_iter < 1) throw ValueError("SinkhornConfig: max_iter must be at least 1");
  if (!(delta > 0.0)) throw ValueError("SinkhornConfig: delta must be positive");
}

double transport_cost(const TransportPlan& t, const CostMatrix& c) {
  if (t.rows() != c.rows() || t.cols() != c.cols()) {
    throw ShapeError("transport_cost: plan " + std::to_string(t.rows()) + "x" +
                     std::to_string(t.cols()) + " vs cost " + std::to_string(c.rows()) +
                     "x" + std::to_string(c.cols()));
  }
  return dot(t.mass.values(), c.values().values());
}

double plan_entropy(const TransportPlan& t) {
  double h = 0.0;
  for (double x : t.mass.values()) {
    if (x < 0.0) throw ValueError("plan_entropy: negative plan entry");
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

SinkhornResult sinkhorn(const CostMatrix& c, const DiscreteMeasure& u,
                        const DiscreteMeasure& v, const SinkhornConfig& cfg) {
  cfg.validate();
  check_dims(c, u, v);
  const std::size_t m = c.rows();
  const std::size_t n = c.cols();

  Mat kernel(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) kernel(i, j) = std::exp(-c(i, j) / cfg.lambda);

  for (std::size_t i = 0; i < m; ++i) {
    const auto r = kernel.row(i);
    if (std::all_of(r.begin(), r.end(), [](double x) { return x == 0.0; }))
      throw UnderflowError(underflow_message("row", i, cfg.lambda));
  }
  for (std::size_t j = 0; j < n; ++j) {
    bool zero = true;
    for (std::size_t i = 0; i < m && zero; ++i) zero = kernel(i, j) == 0.0;
    if (zero) throw UnderflowError(underflow_message("column", j, cfg.lambda));
  }

  Vec a(m, 0.0);
  Vec b(n, 1.0);
  Vec b_next(n);
  SinkhornResult result;
  for (int it = 1; it <= cfg.max_iter; ++it) {
    for (std::size_t i = 0; i < m; ++i) {
      const double kb = dot(kernel.row(i), b);
      if (!(kb >= kMinDenominator)) throw UnderflowError(underflow_message("row", i, cfg.lambda));
      a[i] = u[i] / kb;
    }
    for (std::size_t j = 0; j < n; ++j) {
      double kta = 0.0;
      for (std::size_t i = 0; i < m; ++i) kta += kernel(i, j) * a[i];
      if (!(kta >= kMinDenominator))
        throw UnderflowError(underflow_message("column", j, cfg.lambda));
      b_next[j] = v[j] / kta;
    }
    double change = 0.0;
    for (std::size_t j = 0; j < n; ++j) change += std::abs(b_next[j] - b[j]);
    change /= static_cast<double>(n);
    b.swap(b_next);
    result.iterations = it;
    if (change < cfg.delta) {
      result.converged = true;
      break;
    }
  }

  result.plan.mass = Mat(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) result.plan.mass(i, j) = a[i] * kernel(i, j) * b[j];
  finish(result, c, u, v);
  return result;
}

SinkhornResult sinkhorn_log_stabilized(const CostMatrix& c, const DiscreteMeasure& u,
                                       const DiscreteMeasure& v,
                                       const SinkhornConfig& cfg) {
  cfg.validate();
  check_dims(c, u, v);
  const std::size_t m = c.rows();
  const std::size_t n = c.cols();

  Mat scaled(m, n);  // -C / lambda
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) scaled(i, j) = -c(i, j) / cfg.lambda;

  Vec log_a(m, 0.0);
  Vec log_b(n, 0.0);
  Vec log_b_next(n);
  Vec scratch(std::max(m, n));
  SinkhornResult result;
  for (int it = 1; it <= cfg.max_iter; ++it) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) scratch[j] = scaled(i, j) + log_b[j];
      log_a[i] = std::log(u[i]) - log_sum_exp(std::span<const double>(scratch.data(), n));
    }
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < m; ++i) scratch[i] = scaled(i, j) + log_a[i];
      log_b_next[j] = std::log(v[j]) - log_sum_exp(std::span<const double>(scratch.data(), m));
    }
    // Same stopping rule as the kernel-domain solver, measured on v itself.
    // Potentials too large to exponentiate simply never satisfy it.
    double change = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      change += std::abs(std::exp(log_b_next[j]) - std::exp(log_b[j]));
    change /= static_cast<double>(n);
    log_b.swap(log_b_next);
    result.iterations = it;
    if (std::isfinite(change) && change < cfg.delta) {
      result.converged = true;
      break;
    }
  }

  result.plan.mass = Mat(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      result.plan.mass(i, j) = std::exp(log_a[i] + scaled(i, j) + log_b[j]);
  finish(result, c, u, v);
  return result;
}

SinkhornResult solve_entropic(const CostMatrix& c, const DiscreteMeasure& u,
                              const DiscreteMeasure& v, const SinkhornConfig& cfg) {
  return cfg.log_domain ? sinkhorn_log_stabilized(c, u, v, cfg) : sinkhorn(c, u, v, cfg);
}

}  // namespace plot
