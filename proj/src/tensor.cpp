#include "r2seg/tensor.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <random>

namespace r2seg {

namespace {

std::size_t checked_numel(const Shape4& s) {
  constexpr auto kMax = std::numeric_limits<std::size_t>::max();
  std::size_t total = 1;
  for (std::size_t d : {s.n, s.c, s.h, s.w}) {
    if (d != 0 && total > kMax / d / sizeof(double)) {
      throw ShapeError("tensor dims overflow: " + to_string(s));
    }
    total *= d;
  }
  return total;
}

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

void put_u64(std::ostream& os, std::uint64_t v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw FormatError("truncated tensor header");
  }
  return to_little(v);
}

}  // namespace

std::string to_string(const Shape4& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," +
         std::to_string(s.h) + "," + std::to_string(s.w) + ")";
}

Tensor4::Tensor4(Shape4 shape, double fill)
    : shape_(shape), data_(checked_numel(shape), fill) {}

Tensor4::Tensor4(Shape4 shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != checked_numel(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) +
                     " does not match shape " + to_string(shape_));
  }
}

bool Tensor4::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor4::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

Tensor4& Tensor4::operator+=(const Tensor4& other) {
  if (other.shape_ != shape_) {
    throw ShapeError("+=: shape mismatch " + to_string(shape_) + " vs " +
                     to_string(other.shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor4 zeros(Shape4 shape) {
  if (shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0) {
    throw ShapeError("zeros: every dim must be >= 1, got " + to_string(shape));
  }
  return Tensor4(shape, 0.0);
}

Tensor4 he_init(Shape4 shape, std::size_t fan_in, std::uint64_t seed) {
  if (fan_in == 0) throw std::invalid_argument("he_init: fan_in must be >= 1");
  Tensor4 t = zeros(shape);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0,
                                        std::sqrt(2.0 / double(fan_in)));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Tensor4 uniform(Shape4 shape, double lo, double hi, std::uint64_t seed) {
  Tensor4 t = zeros(shape);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

void write_tensor(std::ostream& os, const Tensor4& t) {
  const auto& s = t.shape();
  put_u64(os, s.n);
  put_u64(os, s.c);
  put_u64(os, s.h);
  put_u64(os, s.w);
  for (double v : t.data()) {
    auto bits = to_little(std::bit_cast<std::uint64_t>(v));
    os.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
  if (!os) throw FormatError("failed writing tensor");
}

Tensor4 read_tensor(std::istream& is) {
  Shape4 s;
  s.n = get_u64(is);
  s.c = get_u64(is);
  s.h = get_u64(is);
  s.w = get_u64(is);
  std::vector<double> data(checked_numel(s));
  for (double& v : data) {
    std::uint64_t bits = 0;
    if (!is.read(reinterpret_cast<char*>(&bits), sizeof bits)) {
      throw FormatError("truncated tensor payload for shape " + to_string(s));
    }
    v = std::bit_cast<double>(to_little(bits));
  }
  return Tensor4(s, std::move(data));
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace r2seg
