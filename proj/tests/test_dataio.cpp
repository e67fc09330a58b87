#include "doctest.h"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "oracles.hpp"
#include "r2seg/dataio.hpp"
#include "r2seg/errors.hpp"

using namespace r2seg;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "r2seg_test_dataio" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary);
  os << bytes;
}

SampleSet numbered(std::size_t n) {
  SampleSet s;
  for (std::size_t i = 0; i < n; ++i) {
    s.add("id" + std::to_string(1000 + i), Tensor4(Shape4{1, 1, 2, 2}, 0.0),
          Tensor4(Shape4{1, 1, 2, 2}, 0.0));
  }
  return s;
}

}  // namespace

TEST_CASE("pgm round trip and normalisation") {
  const fs::path d = fresh_dir("pgm");
  Tensor4 img(Shape4{1, 1, 3, 5});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = double(i * 17) / 255.0;
  img[0] = 0.0;
  img[14] = 1.0;
  write_pgm(d / "a.pgm", img);
  const Tensor4 back = read_pgm(d / "a.pgm");
  CHECK(back.shape() == img.shape());
  CHECK(oracle::max_abs_diff(back, img) < 1e-15);
  CHECK(back[0] == 0.0);
  CHECK(back[14] == 1.0);

  // maxval 15: the top level maps to 1
  write_bytes(d / "m.pgm", std::string("P5\n# comment\n2 1\n15\n") + char(0) + char(15));
  CHECK(read_pgm(d / "m.pgm") == Tensor4(Shape4{1, 1, 1, 2}, std::vector<double>{0, 1}));
}

TEST_CASE("malformed pgm files") {
  const fs::path d = fresh_dir("bad");
  write_bytes(d / "p2.pgm", "P2\n2 2\n255\n0 0 0 0\n");
  CHECK_THROWS_AS(read_pgm(d / "p2.pgm"), DataError);
  write_bytes(d / "short.pgm", std::string("P5\n4 4\n255\n") + "abc");
  CHECK_THROWS_AS(read_pgm(d / "short.pgm"), DataError);
  write_bytes(d / "wide.pgm", "P5\n1 1\n65535\n\x01\x02");
  CHECK_THROWS_AS(read_pgm(d / "wide.pgm"), DataError);
  write_bytes(d / "hdr.pgm", "P5\nx 1\n255\n");
  CHECK_THROWS_AS(read_pgm(d / "hdr.pgm"), DataError);
  CHECK_THROWS_AS(read_pgm(d / "absent.pgm"), DataError);
}

TEST_CASE("dataset pairing") {
  const fs::path d = fresh_dir("pairs");
  fs::create_directories(d / "images");
  fs::create_directories(d / "masks");
  Tensor4 img(Shape4{1, 1, 2, 2}, std::vector<double>{0, 0.25, 0.5, 1});
  write_pgm(d / "images/b.pgm", img);
  write_pgm(d / "images/a.pgm", img);
  // 127 is background, 128 foreground
  write_bytes(d / "masks/a_mask.pgm",
              std::string("P5\n2 2\n255\n") + char(0) + char(127) + char(128) + char(255));
  write_bytes(d / "masks/b_mask.pgm", std::string("P5\n2 2\n255\n") + std::string(4, char(200)));
  const SampleSet s = load_dataset(d);
  REQUIRE(s.size() == 2);
  CHECK(s.ids == std::vector<std::string>{"a", "b"});
  CHECK(s.masks[0] == Tensor4(Shape4{1, 1, 2, 2}, std::vector<double>{0, 0, 1, 1}));
  CHECK(s.masks[1] == Tensor4(Shape4{1, 1, 2, 2}, 1.0));
  CHECK(oracle::max_abs_diff(s.images[0], img) < 1e-2);

  write_pgm(d / "images/c.pgm", img);
  try {
    load_dataset(d);
    FAIL("orphan accepted");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("'c'") != std::string::npos);
  }
  CHECK_THROWS_AS(load_dataset(d / "nowhere"), DataError);
}

TEST_CASE("resize") {
  const Tensor4 flat(Shape4{1, 1, 7, 5}, 0.3);
  for (const Interp k : {Interp::bilinear, Interp::nearest}) {
    const Tensor4 r = resize(flat, 4, 9, k);
    CHECK(r.shape() == Shape4{1, 1, 4, 9});
    for (double v : r.data()) CHECK(v == doctest::Approx(0.3).epsilon(1e-15));
  }
  const Tensor4 quad(Shape4{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  CHECK(resize(quad, 1, 1, Interp::bilinear)[0] == 2.5);

  const Tensor4 big = uniform(Shape4{1, 1, 512, 512}, 0, 1, 8);
  CHECK(oracle::max_abs_diff(resize(big, 256, 256, Interp::bilinear),
                             oracle::bilinear(big, 256, 256)) <= 1e-12);
  const Tensor4 odd = uniform(Shape4{2, 3, 9, 6}, 0, 1, 9);
  CHECK(oracle::max_abs_diff(resize(odd, 5, 13, Interp::bilinear),
                             oracle::bilinear(odd, 5, 13)) <= 1e-12);

  const SampleSet synth = synth_generate(1, 64, 4);
  const Tensor4 m = resize(synth.masks[0], 23, 41, Interp::nearest);
  for (double v : m.data()) CHECK((v == 0.0 || v == 1.0));

  Tensor4 smooth(Shape4{1, 1, 256, 256});
  for (std::size_t y = 0; y < 256; ++y)
    for (std::size_t x = 0; x < 256; ++x)
      smooth.at(0, 0, y, x) = 0.5 + 0.4 * std::sin(x / 20.0) * std::cos(y / 30.0);
  const Tensor4 there = resize(resize(smooth, 128, 128, Interp::bilinear), 256, 256,
                               Interp::bilinear);
  double mae = 0.0;
  for (std::size_t i = 0; i < smooth.size(); ++i) mae += std::abs(there[i] - smooth[i]);
  CHECK(mae / double(smooth.size()) < 0.05);
  CHECK_THROWS_AS(resize(flat, 0, 3, Interp::nearest), ShapeError);
}

TEST_CASE("split sizes and determinism") {
  const SampleSet s = numbered(100);
  const SplitIndices a = split(s, kDefaultSplit, 7);
  CHECK(a.train.size() == 64);
  CHECK(a.val.size() == 16);
  CHECK(a.test.size() == 20);
  const SplitIndices b = split(s, kDefaultSplit, 7);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.test == b.test);
  CHECK(split(s, kDefaultSplit, 8).train != a.train);
  CHECK_THROWS_AS(split(s, {0.5, 0.5, 0.5}, 1), ConfigError);
  CHECK_THROWS_AS(split(SampleSet{}, kDefaultSplit, 1), DataError);

  const SplitIndices c = split_from_json(to_json(a));
  CHECK(c.train == a.train);
  CHECK(c.seed == 7);
}

TEST_CASE("split is a partition") {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<std::size_t> size(1, 60);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const SampleSet s = numbered(size(rng));
    double f0 = u(rng), f1 = u(rng) * (1 - f0);
    const SplitIndices p = split(s, {f0, f1, 1 - f0 - f1}, rng());
    std::multiset<std::string> all(p.train.begin(), p.train.end());
    all.insert(p.val.begin(), p.val.end());
    all.insert(p.test.begin(), p.test.end());
    CHECK(all == std::multiset<std::string>(s.ids.begin(), s.ids.end()));
  }
}

TEST_CASE("synthetic data") {
  const auto t0 = std::chrono::steady_clock::now();
  const SampleSet a = synth_generate(16, 32, 3);
  CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < 1.0);
  const SampleSet b = synth_generate(16, 32, 3);
  CHECK(a.ids == b.ids);
  CHECK(a.images == b.images);
  CHECK(a.masks == b.masks);
  CHECK(synth_generate(16, 32, 4).images != a.images);
  CHECK(a.ids.front() == "synth_0000");

  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto ellipses = synth_ellipses(i, 32, 3);
    CHECK(ellipses.size() >= 1);
    CHECK(ellipses.size() <= 3);
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x) {
        bool inside = false;
        for (const auto& e : ellipses) inside |= e.eval(x + 0.5, y + 0.5) <= 1.0;
        CHECK(a.masks[i].at(0, 0, y, x) == (inside ? 1.0 : 0.0));
        CHECK(a.images[i].at(0, 0, y, x) >= 0.0);
        CHECK(a.images[i].at(0, 0, y, x) <= 1.0);
      }
  }

  const fs::path d = fresh_dir("synth");
  save_dataset(a, d);
  const SampleSet back = load_dataset(d);
  CHECK(back.ids == a.ids);
  CHECK(back.masks == a.masks);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(oracle::max_abs_diff(back.images[i], a.images[i]) <= 0.5 / 255.0 + 1e-12);
}

TEST_CASE("resize_set and subset") {
  const SampleSet a = synth_generate(3, 32, 1);
  const SampleSet r = resize_set(a, 16, 24);
  CHECK(r.images[2].shape() == Shape4{1, 1, 16, 24});
  for (double v : r.masks[1].data()) CHECK((v == 0.0 || v == 1.0));
  const SampleSet sub = a.subset({a.ids[2], a.ids[0]});
  CHECK(sub.ids == std::vector<std::string>{a.ids[2], a.ids[0]});
  CHECK(sub.images[0] == a.images[2]);
  CHECK_THROWS_AS(a.subset({"missing"}), DataError);
}
