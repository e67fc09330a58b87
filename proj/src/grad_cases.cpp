#include "r2seg/grad_cases.hpp"

#include <algorithm>
#include <memory>

#include "r2seg/blocks.hpp"
#include "r2seg/models.hpp"

namespace r2seg {

namespace {

// Random projection so the scalar loss depends on every output entry.
VarId project(Tape& tape, VarId y, std::uint64_t seed) {
  return weighted_sum(tape, y, uniform(tape.shape(y), -1.0, 1.0, seed));
}

Tensor4 random_bias(std::size_t c, std::uint64_t seed) {
  return uniform(Shape4{1, c, 1, 1}, -0.1, 0.1, seed);
}

Tensor4 random_mask(Shape4 s, std::uint64_t seed) {
  Tensor4 t = uniform(s, 0.0, 1.0, seed);
  for (double& v : t.data()) v = v < 0.5 ? 0.0 : 1.0;
  return t;
}

GradCase conv_case(std::uint64_t seed) {
  GradCase c{"conv", {}, {}, 1e-6, {}};
  c.params = {{"x", uniform(Shape4{2, 3, 6, 6}, -1, 1, mix_seed(seed, 1))},
              {"w", he_init(Shape4{4, 3, 3, 3}, 27, mix_seed(seed, 2))},
              {"b", random_bias(4, mix_seed(seed, 3))}};
  c.loss = [seed](Tape& t, std::span<const VarId> p) {
    const VarId same = conv2d(t, p[0], p[1], p[2]);
    const VarId strided =
        conv2d(t, p[0], p[1], p[2], ConvOptions{Padding::valid, 2});
    return add(t, project(t, same, mix_seed(seed, 4)),
               project(t, strided, mix_seed(seed, 5)));
  };
  return c;
}

GradCase convt_case(std::uint64_t seed) {
  GradCase c{"convt", {}, {}, 1e-6, {}};
  c.params = {{"x", uniform(Shape4{1, 3, 4, 4}, -1, 1, mix_seed(seed, 11))},
              {"w", he_init(Shape4{3, 2, 3, 3}, 27, mix_seed(seed, 12))},
              {"b", random_bias(2, mix_seed(seed, 13))}};
  c.loss = [seed](Tape& t, std::span<const VarId> p) {
    return project(t, conv_transpose2d(t, p[0], p[1], p[2]),
                   mix_seed(seed, 14));
  };
  return c;
}

GradCase maxpool_case(std::uint64_t seed) {
  GradCase c{"maxpool", {}, {}, 1e-6, {}};
  c.params = {{"x", uniform(Shape4{1, 2, 8, 8}, -1, 1, mix_seed(seed, 21))}};
  c.loss = [seed](Tape& t, std::span<const VarId> p) {
    return project(t, maxpool2d(t, p[0]), mix_seed(seed, 22));
  };
  return c;
}

GradCase bce_case(std::uint64_t seed) {
  GradCase c{"bce", {}, {}, 1e-6, {}};
  const Shape4 s{2, 1, 5, 5};
  c.params = {{"z", uniform(s, -3, 3, mix_seed(seed, 31))}};
  auto target = std::make_shared<Tensor4>(random_mask(s, mix_seed(seed, 32)));
  c.loss = [seed, target](Tape& t, std::span<const VarId> p) {
    const VarId loss = bce_loss(t, p[0], t.constant(*target));
    return add(t, loss, project(t, sigmoid(t, p[0]), mix_seed(seed, 33)));
  };
  return c;
}

GradCase rcl_case(std::uint64_t seed) {
  GradCase c{"rcl", {}, {}, 1e-6, {}};
  c.params = {{"x", uniform(Shape4{1, 2, 8, 8}, -1, 1, mix_seed(seed, 41))},
              {"wf", he_init(Shape4{3, 2, 3, 3}, 18, mix_seed(seed, 42))},
              {"wr", he_init(Shape4{3, 3, 3, 3}, 27, mix_seed(seed, 43))},
              {"b", random_bias(3, mix_seed(seed, 44))}};
  c.loss = [seed](Tape& t, std::span<const VarId> p) {
    return project(t, rcl_forward(t, p[0], RclVars{p[1], p[2], p[3], 2}),
                   mix_seed(seed, 45));
  };
  return c;
}

// A block's parameters plus the input tensor "x" in front.
GradCase block_case(const std::string& name, const BlockSpec& spec,
                    std::uint64_t seed) {
  ParamStore store;
  declare_block(spec, "blk", store, mix_seed(seed, 51));
  for (auto& e : store.entries()) {
    if (e.name.ends_with(".b")) {
      e.value = random_bias(e.value.size(), mix_seed(seed, 52 + store.index_of(e.name)));
    }
  }
  GradCase c{name, {}, {}, 1e-6, {}};
  c.params.push_back(
      {"x", uniform(Shape4{1, spec.c_in, 8, 8}, -1, 1, mix_seed(seed, 50))});
  for (const auto& e : store.entries()) c.params.push_back(e);
  auto shared = std::make_shared<ParamStore>(std::move(store));
  c.loss = [seed, spec, shared](Tape& t, std::span<const VarId> p) {
    const BoundParams bound(*shared,
                            std::vector<VarId>(p.begin() + 1, p.end()));
    const VarId y = spec.kind == BlockKind::residual
                        ? r2_forward(t, p[0], spec, "blk", bound)
                        : block_forward(t, p[0], spec, "blk", bound,
                                        Mode::eval, 0);
    return project(t, y, mix_seed(seed, 59));
  };
  return c;
}

GradCase model_case(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.variant = Variant::dense_r2unet;
  cfg.depth = 2;
  cfg.base_width = 4;
  cfg.input_h = cfg.input_w = 16;
  cfg.seed = mix_seed(seed, 61);
  auto model = std::make_shared<Model>(build(cfg));
  for (auto& e : model->params.entries()) {
    if (e.name.ends_with(".b")) {
      e.value = random_bias(e.value.size(),
                            mix_seed(seed, 62 + model->params.index_of(e.name)));
    }
  }
  GradCase c{"model", {}, {}, 1e-5, {}};
  c.params = model->params.entries();
  const Shape4 s{1, 1, 16, 16};
  auto x = std::make_shared<Tensor4>(uniform(s, 0, 1, mix_seed(seed, 63)));
  auto target = std::make_shared<Tensor4>(random_mask(s, mix_seed(seed, 64)));
  c.loss = [model, x, target](Tape& t, std::span<const VarId> p) {
    const BoundParams bound(model->params,
                            std::vector<VarId>(p.begin(), p.end()));
    const VarId logits =
        forward_logits(t, *model, bound, t.constant(*x), Mode::eval);
    return bce_loss(t, logits, t.constant(*target));
  };
  // Large tensors are probed at a seeded subset of entries. Thousands of
  // relu units make a kink inside the step likely somewhere.
  c.options.max_entries = 48;
  c.options.resolve_tolerance = 1e-4;
  c.options.seed = mix_seed(seed, 65);
  return c;
}

}  // namespace

const std::vector<std::string>& grad_case_names() {
  static const std::vector<std::string> names{
      "conv", "convt", "maxpool", "bce", "rcl", "r2", "dense-r2", "model", "all"};
  return names;
}

std::vector<GradCase> make_grad_cases(const std::string& which,
                                      std::uint64_t seed) {
  const auto& names = grad_case_names();
  if (std::find(names.begin(), names.end(), which) == names.end()) {
    throw ConfigError("unknown gradcheck block '" + which + "'");
  }
  const bool all = which == "all";
  std::vector<GradCase> cases;
  if (all || which == "conv") cases.push_back(conv_case(seed));
  if (all || which == "convt") cases.push_back(convt_case(seed));
  if (all || which == "maxpool") cases.push_back(maxpool_case(seed));
  if (all || which == "bce") cases.push_back(bce_case(seed));
  if (all || which == "rcl") cases.push_back(rcl_case(seed));
  if (all || which == "r2") {
    BlockSpec s;
    s.kind = BlockKind::residual;
    s.c_in = 2;
    s.c_out = 3;
    cases.push_back(block_case("r2", s, seed));
  }
  if (all || which == "dense-r2") {
    BlockSpec s;
    s.kind = BlockKind::dense_r2;
    s.c_in = 2;
    s.c_out = 4;
    s.t = 2;
    cases.push_back(block_case("dense-r2", s, seed));
  }
  if (all || which == "model") cases.push_back(model_case(seed));
  return cases;
}

GradReport run_grad_case(const GradCase& c) {
  return grad_check(c.loss, c.params, c.step, c.options);
}

}  // namespace r2seg
