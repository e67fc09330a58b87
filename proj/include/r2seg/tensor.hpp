#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "r2seg/errors.hpp"

namespace r2seg {

struct Shape4 {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  friend bool operator==(const Shape4&, const Shape4&) = default;
};

std::string to_string(const Shape4& s);

/// Dense rank-4 array of doubles in row-major (n, c, h, w) order.
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape4 shape, double fill = 0.0);
  Tensor4(Shape4 shape, std::vector<double> data);

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t y,
                     std::size_t x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[offset(n, c, y, x)];
  }
  double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[offset(n, c, y, x)];
  }

  // Pointer to the (n, c) spatial plane.
  double* plane(std::size_t n, std::size_t c) {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }
  const double* plane(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }

  bool all_finite() const;
  double sum() const;

  Tensor4& operator+=(const Tensor4& other);
  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  Shape4 shape_{0, 0, 0, 0};
  std::vector<double> data_;
};

Tensor4 zeros(Shape4 shape);

/// Normal(0, sqrt(2 / fan_in)) samples, reproducible for a given seed.
Tensor4 he_init(Shape4 shape, std::size_t fan_in, std::uint64_t seed);

/// Uniform samples in [lo, hi); test and fixture helper.
Tensor4 uniform(Shape4 shape, double lo, double hi, std::uint64_t seed);

// Binary format: four little-endian u64 dims, then n*c*h*w little-endian
// f64 values.
void write_tensor(std::ostream& os, const Tensor4& t);
Tensor4 read_tensor(std::istream& is);

// Mixes a base seed with a stream index (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace r2seg
