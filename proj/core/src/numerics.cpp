#include "plot/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "plot/errors.hpp"

namespace plot {

Mat::Mat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("Mat: data length " + std::to_string(data_.size()) +
                     " does not match " + std::to_string(rows_) + "x" +
                     std::to_string(cols_));
  }
}

Mat Mat::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("Mat::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Mat(r, c, std::move(data));
}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat Mat::transposed() const {
  Mat t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double x) { return std::isfinite(x); });
}

Vec normalized(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n > 0.0)) throw ValueError("normalized: zero-norm vector");
  Vec out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Mat out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const auto src = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aik * src[j];
    }
  }
  return out;
}

Mat l2_normalize_rows(const Mat& m) {
  Mat out = m;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double n = l2_norm(m.row(r));
    if (!(n > 0.0)) throw ValueError("l2_normalize_rows: zero-norm row " + std::to_string(r));
    for (double& x : out.row(r)) x /= n;
  }
  return out;
}

Vec softmax_temp(std::span<const double> scores, double tau) {
  if (!(tau > 0.0)) throw ValueError("softmax_temp: tau must be positive");
  if (scores.empty()) return {};
  const double mx = *std::max_element(scores.begin(), scores.end());
  Vec out(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp((scores[i] - mx) / tau);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

double Rng::gaussian() { return normal_(engine_); }

double Rng::uniform() { return unit_(engine_); }

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw ValueError("Rng::uniform_index: empty range");
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  return pick(engine_);
}

Vec rng_gaussian(Rng& rng, std::size_t n) {
  Vec out(n);
  for (double& x : out) x = rng.gaussian();
  return out;
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t parent, std::string_view label) {
  std::uint64_t z = parent ^ fnv1a64(label);
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace plot
