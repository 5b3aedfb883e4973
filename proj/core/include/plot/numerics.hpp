#pragma once

// Dense row-major matrices, a handful of vector kernels and the seeded
// random source shared by the rest of the library. Everything is double
// precision.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace plot {

using Vec = std::vector<double>;

class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Mat identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  Mat transposed() const;

  bool operator==(const Mat&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);
bool all_finite(std::span<const double> a);

// Unit-length copy of `v`; throws ValueError when the norm is zero.
Vec normalized(std::span<const double> v);

Mat matmul(const Mat& a, const Mat& b);

// Scales every row to unit L2 norm. A zero row is an error naming its index.
Mat l2_normalize_rows(const Mat& m);

// softmax(scores / tau), evaluated with the max subtracted first.
Vec softmax_temp(std::span<const double> scores, double tau);

// Seeded pseudo-random source. The generator is std::mt19937_64 and normal
// draws come from std::normal_distribution, so streams are reproducible for
// a given standard library but not across implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  double gaussian();
  double uniform();                        // [0, 1)
  std::size_t uniform_index(std::size_t n);  // [0, n)

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

Vec rng_gaussian(Rng& rng, std::size_t n);

// Independent stream seed derived from a parent seed and a label
// (splitmix64 over the parent seed mixed with an FNV-1a hash of the label).
std::uint64_t derive_seed(std::uint64_t parent, std::string_view label);

std::uint64_t fnv1a64(std::string_view text);

}  // namespace plot
