#include "doctest.h"

#include "criteria.hpp"
#include "oracles.hpp"
#include "r2seg/blocks.hpp"
#include "r2seg/errors.hpp"

using namespace r2seg;

namespace {

ParamStore randomised(const BlockSpec& spec, std::uint64_t seed) {
  ParamStore store;
  declare_block(spec, "b", store, seed);
  for (auto& e : store.entries()) {
    e.value = uniform(e.value.shape(), -0.5, 0.5, mix_seed(seed, store.index_of(e.name)));
  }
  return store;
}

Tensor4 run_block(const BlockSpec& spec, const ParamStore& store, const Tensor4& x,
                  Mode mode, std::uint64_t dropout_seed = 0) {
  Tape tape;
  const BoundParams bound(tape, store, false);
  return tape.value(block_forward(tape, tape.constant(x), spec, "b", bound, mode,
                                  dropout_seed));
}

}  // namespace

TEST_CASE("rcl with zero recurrent weights is a conv layer") {
  CHECK(criteria::rcl_collapse_error() == 0.0);
}

TEST_CASE("rcl unroll matches explicit evaluation") {
  const Tensor4 x = uniform(Shape4{1, 2, 5, 5}, -1, 1, 1);
  const RclParams p{uniform(Shape4{3, 2, 3, 3}, -0.5, 0.5, 2),
                    uniform(Shape4{3, 3, 3, 3}, -0.5, 0.5, 3),
                    uniform(Shape4{1, 3, 1, 1}, -0.5, 0.5, 4), 2};
  const Tensor4 nob = zeros(Shape4{1, 3, 1, 1});
  const Tensor4 feed = oracle::conv(x, p.w_f, p.b, 1, 1);
  const Tensor4 y1 = add(feed, oracle::conv(relu(feed), p.w_r, nob, 1, 1));
  const Tensor4 y2 = add(feed, oracle::conv(relu(y1), p.w_r, nob, 1, 1));
  CHECK(oracle::max_abs_diff(rcl_forward(x, p), relu(y2)) < 1e-12);

  RclParams p0 = p;
  p0.t = 0;
  CHECK(oracle::max_abs_diff(rcl_forward(x, p0), relu(feed)) < 1e-12);
  p0.t = -1;
  CHECK_THROWS_AS(rcl_forward(x, p0), std::invalid_argument);
}

TEST_CASE("t changes values, never shape") {
  const Tensor4 x = uniform(Shape4{1, 2, 6, 6}, -1, 1, 5);
  RclParams p{uniform(Shape4{3, 2, 3, 3}, -0.5, 0.5, 6),
              uniform(Shape4{3, 3, 3, 3}, -0.5, 0.5, 7),
              uniform(Shape4{1, 3, 1, 1}, -0.5, 0.5, 8), 0};
  const Tensor4 base = rcl_forward(x, p);
  for (int t = 1; t <= 4; ++t) {
    p.t = t;
    const Tensor4 y = rcl_forward(x, p);
    CHECK(y.shape() == base.shape());
    CHECK_FALSE(y == base);
  }
}

TEST_CASE("zeroed branch makes the block an identity") {
  CHECK(criteria::zero_branch_identity_error() == 0.0);
}

TEST_CASE("residual block composition") {
  BlockSpec spec;
  spec.kind = BlockKind::residual;
  spec.c_in = 3;
  spec.c_out = 8;
  const ParamStore store = randomised(spec, 9);
  const Tensor4 x = uniform(Shape4{2, 3, 6, 6}, -1, 1, 10);
  const Tensor4 y = run_block(spec, store, x, Mode::eval);
  CHECK(y.shape() == Shape4{2, 8, 6, 6});

  // project(x) + F(x) assembled from separate calls.
  const Tensor4 proj = conv2d(x, store.get("b.proj.w"), store.get("b.proj.b"));
  const Tensor4 h = relu(conv2d(x, store.get("b.conv1.w"), store.get("b.conv1.b")));
  const Tensor4 f = relu(conv2d(h, store.get("b.conv2.w"), store.get("b.conv2.b")));
  CHECK(oracle::max_abs_diff(y, add(proj, f)) < 1e-12);
}

TEST_CASE("dense chain") {
  const auto r = criteria::dense_causality();
  CHECK(r.later_unit_invisible);
  CHECK(r.x_slice_isolation);
  CHECK(r.compress_width);
  CHECK(r.gradient_probe);

  // A single unit chain is rcl followed by the compression.
  const Tensor4 x = uniform(Shape4{1, 2, 5, 5}, -1, 1, 11);
  const RclParams u{uniform(Shape4{3, 2, 3, 3}, -0.5, 0.5, 12),
                    uniform(Shape4{3, 3, 3, 3}, -0.5, 0.5, 13),
                    uniform(Shape4{1, 3, 1, 1}, -0.5, 0.5, 14), 2};
  const Tensor4 cw = uniform(Shape4{4, 5, 1, 1}, -1, 1, 15);
  const Tensor4 cb = uniform(Shape4{1, 4, 1, 1}, -1, 1, 16);
  Tape tape;
  const VarId y = dense_rcl_forward(
      tape, tape.constant(x),
      {RclVars{tape.constant(u.w_f), tape.constant(u.w_r), tape.constant(u.b), 2}},
      ConvVars{tape.constant(cw), tape.constant(cb)});
  const Tensor4 want =
      conv2d(concat_channels(std::vector<Tensor4>{x, rcl_forward(x, u)}), cw, cb);
  CHECK(oracle::max_abs_diff(tape.value(y), want) < 1e-12);
}

TEST_CASE("dense block shapes and dropout modes") {
  BlockSpec spec;
  spec.kind = BlockKind::dense_r2;
  spec.c_in = 2;
  spec.c_out = 6;
  spec.dense_growth = 4;
  const ParamStore store = randomised(spec, 17);
  CHECK(store.get("b.compress.w").shape() == Shape4{6, 2 + 2 * 4, 1, 1});
  CHECK(store.get("b.rcl2.wf").shape() == Shape4{4, 6, 3, 3});
  const Tensor4 x = uniform(Shape4{1, 2, 8, 8}, -1, 1, 18);
  CHECK(run_block(spec, store, x, Mode::eval).shape() == Shape4{1, 6, 8, 8});

  spec.dropout_rate = 0.0;
  CHECK(run_block(spec, store, x, Mode::eval) == run_block(spec, store, x, Mode::train, 3));
  spec.dropout_rate = 0.5;
  CHECK_FALSE(run_block(spec, store, x, Mode::eval) == run_block(spec, store, x, Mode::train, 3));

  CHECK_THROWS_AS(run_block(spec, store, uniform(Shape4{1, 3, 8, 8}, 0, 1, 1), Mode::eval),
                  ShapeError);
}

TEST_CASE("default growth is half the output width, rounded up") {
  BlockSpec s;
  s.c_out = 8;
  CHECK(s.growth() == 4);
  s.c_out = 5;
  CHECK(s.growth() == 3);
  s.dense_growth = 7;
  CHECK(s.growth() == 7);
}

TEST_CASE("parameter counts") {
  BlockSpec conv;
  conv.kind = BlockKind::plain;
  conv.units = 1;
  CHECK(count_params(conv) == 10);

  BlockSpec rcl;
  rcl.kind = BlockKind::recurrent;
  rcl.units = 1;
  rcl.c_in = 2;
  rcl.c_out = 4;
  CHECK(count_params(rcl) == 2 * 4 * 9 + 4 * 4 * 9 + 4);

  BlockSpec dense;
  dense.kind = BlockKind::dense_r2;
  dense.c_in = 3;
  dense.c_out = 8;
  // Two units of growth 4, a 1x1 compression and a 1x1 projection.
  const std::size_t u1 = 4 * 3 * 9 + 4 * 4 * 9 + 4;
  const std::size_t u2 = 4 * 7 * 9 + 4 * 4 * 9 + 4;
  CHECK(count_params(dense) == u1 + u2 + (11 * 8 + 8) + (3 * 8 + 8));
}

TEST_CASE("r2_forward rejects non-residual kinds") {
  BlockSpec spec;
  spec.kind = BlockKind::plain;
  ParamStore store;
  declare_block(spec, "b", store, 0);
  Tape tape;
  const BoundParams bound(tape, store, false);
  CHECK_THROWS(r2_forward(tape, tape.constant(Tensor4(Shape4{1, 1, 4, 4})), spec, "b", bound));
}
