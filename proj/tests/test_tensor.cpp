#include "doctest.h"

#include <cmath>
#include <sstream>

#include "r2seg/errors.hpp"
#include "r2seg/tensor.hpp"

using namespace r2seg;

TEST_CASE("zeros") {
  const Tensor4 z = zeros(Shape4{1, 1, 2, 2});
  CHECK(z.shape() == Shape4{1, 1, 2, 2});
  for (double v : z.data()) CHECK(v == 0.0);
  CHECK(zeros(Shape4{2, 3, 4, 4}).size() == 96);

  Tensor4 x = uniform(Shape4{2, 3, 4, 4}, -1, 1, 5);
  Tensor4 y = zeros(x.shape());
  y += x;
  CHECK(y == x);

  CHECK_THROWS_AS(zeros(Shape4{1, 0, 2, 2}), ShapeError);
  const std::size_t huge = std::size_t(1) << 40;
  CHECK_THROWS_AS(zeros(Shape4{huge, huge, 1, 1}), ShapeError);
}

TEST_CASE("tensor construction checks length") {
  CHECK_THROWS_AS(Tensor4(Shape4{1, 1, 2, 2}, std::vector<double>(3)),
                  ShapeError);
  const Tensor4 t(Shape4{1, 2, 2, 3}, std::vector<double>{0, 1, 2,  3,  4,  5,
                                                          6, 7, 8, 9, 10, 11});
  CHECK(t.at(0, 1, 0, 2) == 8.0);
  CHECK(t.offset(0, 1, 1, 0) == 9);
}

TEST_CASE("he_init statistics and determinism") {
  const Shape4 s{1, 1, 1, 100000};
  const Tensor4 a = he_init(s, 2, 42);
  CHECK(a == he_init(s, 2, 42));
  CHECK_FALSE(a == he_init(s, 2, 43));

  double mean = 0.0;
  for (double v : a.data()) mean += v;
  mean /= double(a.size());
  double var = 0.0;
  for (double v : a.data()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / double(a.size() - 1));
  CHECK(sd == doctest::Approx(1.0).epsilon(0.05));
  CHECK_THROWS(he_init(s, 0, 1));
}

TEST_CASE("uniform stays in range") {
  const Tensor4 u = uniform(Shape4{2, 2, 8, 8}, -0.5, 0.25, 9);
  for (double v : u.data()) {
    CHECK(v >= -0.5);
    CHECK(v < 0.25);
  }
  CHECK(u.all_finite());
}

TEST_CASE("binary tensor round trip") {
  const Tensor4 x = uniform(Shape4{2, 3, 4, 5}, -10, 10, 3);
  std::stringstream ss;
  write_tensor(ss, x);
  const std::string bytes = ss.str();
  CHECK(read_tensor(ss) == x);

  std::stringstream cut(bytes.substr(0, bytes.size() - 8));
  CHECK_THROWS_AS(read_tensor(cut), FormatError);
  std::stringstream header_only(bytes.substr(0, 20));
  CHECK_THROWS_AS(read_tensor(header_only), FormatError);
}

TEST_CASE("all_finite and sum") {
  Tensor4 x(Shape4{1, 1, 1, 3}, std::vector<double>{1, 2, 3});
  CHECK(x.sum() == 6.0);
  CHECK(x.all_finite());
  x[1] = std::nan("");
  CHECK_FALSE(x.all_finite());
}

TEST_CASE("mix_seed separates streams") {
  CHECK(mix_seed(1, 0) != mix_seed(1, 1));
  CHECK(mix_seed(1, 0) != mix_seed(2, 0));
  CHECK(mix_seed(7, 3) == mix_seed(7, 3));
}
