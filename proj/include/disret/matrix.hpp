#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "disret/errors.hpp"

namespace disret {

// Dense row-major matrix of doubles. Vectors are 1xN rows.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), v(r * c, fill) {}

  static Matrix row(std::initializer_list<double> xs) {
    Matrix m(1, xs.size());
    std::size_t j = 0;
    for (double x : xs) m.v[j++] = x;
    return m;
  }
  static Matrix from_vector(const std::vector<double>& xs) {
    Matrix m(1, xs.size());
    m.v = xs;
    return m;
  }
  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.v[i * n + i] = 1.0;
    return m;
  }

  double& at(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
  std::size_t size() const { return v.size(); }
  bool same_shape(const Matrix& o) const {
    return rows == o.rows && cols == o.cols;
  }
  std::string shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
  }

  bool operator==(const Matrix& o) const {
    return rows == o.rows && cols == o.cols && v == o.v;
  }
};

// Deterministic RNG: xoshiro256** seeded by splitmix64. Distributions are
// hand-rolled so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& si : s_) si = splitmix(x);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw ArgumentError("uniform_index: empty range");
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  static std::uint64_t splitmix(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool have_spare_ = false;
};

inline double dot_row(const Matrix& a, std::size_t i, const Matrix& b,
                      std::size_t j) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.cols; ++k) acc += a.at(i, k) * b.at(j, k);
  return acc;
}

inline double l2_norm(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) acc += x[k] * x[k];
  return std::sqrt(acc);
}

}  // namespace disret
