#include "r2seg/blocks.hpp"

#include <stdexcept>

namespace r2seg {

namespace {

Shape4 kernel_shape(std::size_t c_out, std::size_t c_in, std::size_t k) {
  return Shape4{c_out, c_in, k, k};
}

void declare_conv(ParamStore& store, const std::string& name, std::size_t c_in,
                  std::size_t c_out, std::size_t k, std::uint64_t seed) {
  store.add(name + ".w", he_init(kernel_shape(c_out, c_in, k), c_in * k * k,
                                 mix_seed(seed, store.size())));
  store.add(name + ".b", zeros(Shape4{1, c_out, 1, 1}));
}

void declare_rcl(ParamStore& store, const std::string& prefix,
                 std::size_t unit, std::size_t c_in, std::size_t c_out,
                 std::uint64_t seed) {
  store.add(rcl_name(prefix, unit, "wf"),
            he_init(kernel_shape(c_out, c_in, 3), c_in * 9,
                    mix_seed(seed, store.size())));
  store.add(rcl_name(prefix, unit, "wr"),
            he_init(kernel_shape(c_out, c_out, 3), c_out * 9,
                    mix_seed(seed, store.size())));
  store.add(rcl_name(prefix, unit, "b"), zeros(Shape4{1, c_out, 1, 1}));
}

std::string conv_name(const std::string& prefix, std::size_t unit) {
  return prefix + ".conv" + std::to_string(unit);
}

ConvVars bind_conv(const BoundParams& params, const std::string& name) {
  return ConvVars{params(name + ".w"), params(name + ".b")};
}

VarId conv_relu_stack(Tape& tape, VarId x, const BlockSpec& spec,
                      const std::string& prefix, const BoundParams& params) {
  VarId h = x;
  for (std::size_t u = 1; u <= spec.units; ++u) {
    const ConvVars c = bind_conv(params, conv_name(prefix, u));
    h = relu(tape, conv2d(tape, h, c.w, c.b));
  }
  return h;
}

void check_spec(const BlockSpec& spec) {
  if (spec.c_in == 0 || spec.c_out == 0) {
    throw ShapeError("BlockSpec: channel counts must be >= 1");
  }
  if (spec.units == 0) throw ShapeError("BlockSpec: units must be >= 1");
  if (spec.t < 0) throw std::invalid_argument("BlockSpec: t must be >= 0");
}

}  // namespace

std::string_view to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::plain: return "plain";
    case BlockKind::residual: return "residual";
    case BlockKind::recurrent: return "recurrent";
    case BlockKind::dense_r2: return "dense_r2";
  }
  return "unknown";
}

std::size_t BlockSpec::growth() const {
  return dense_growth != 0 ? dense_growth : (c_out + 1) / 2;
}

std::string rcl_name(const std::string& prefix, std::size_t unit,
                     std::string_view field) {
  return prefix + ".rcl" + std::to_string(unit) + "." + std::string(field);
}

RclVars bind_rcl(const BoundParams& params, const std::string& prefix,
                 std::size_t unit, int t) {
  return RclVars{params(rcl_name(prefix, unit, "wf")),
                 params(rcl_name(prefix, unit, "wr")),
                 params(rcl_name(prefix, unit, "b")), t};
}

VarId rcl_forward(Tape& tape, VarId x, const RclVars& p) {
  if (p.t < 0) throw std::invalid_argument("rcl_forward: t must be >= 0");
  const VarId feed = conv2d(tape, x, p.w_f, p.b);
  const std::size_t c_out = tape.shape(p.w_r).n;
  const VarId no_bias = tape.constant(zeros(Shape4{1, c_out, 1, 1}));
  VarId y = feed;
  for (int step = 1; step <= p.t; ++step) {
    y = add(tape, feed, conv2d(tape, relu(tape, y), p.w_r, no_bias));
  }
  return relu(tape, y);
}

Tensor4 rcl_forward(const Tensor4& x, const RclParams& p) {
  Tape tape;
  const RclVars vars{tape.constant(p.w_f), tape.constant(p.w_r),
                     tape.constant(p.b), p.t};
  return tape.value(rcl_forward(tape, tape.constant(x), vars));
}

VarId dense_rcl_forward(Tape& tape, VarId x, const std::vector<RclVars>& units,
                        const ConvVars& compress) {
  if (units.empty()) throw ShapeError("dense_rcl_forward: no units");
  std::vector<VarId> features{x};
  for (const RclVars& unit : units) {
    const VarId input =
        features.size() == 1 ? x : concat_channels(tape, features);
    if (tape.shape(input).c != tape.shape(unit.w_f).c) {
      throw ShapeError("dense_rcl_forward: unit expects " +
                       std::to_string(tape.shape(unit.w_f).c) +
                       " input channels, dense chain provides " +
                       std::to_string(tape.shape(input).c));
    }
    features.push_back(rcl_forward(tape, input, unit));
  }
  const VarId all = concat_channels(tape, features);
  return conv2d(tape, all, compress.w, compress.b);
}

void declare_block(const BlockSpec& spec, const std::string& prefix,
                   ParamStore& store, std::uint64_t seed) {
  check_spec(spec);
  switch (spec.kind) {
    case BlockKind::plain:
    case BlockKind::residual:
      for (std::size_t u = 1; u <= spec.units; ++u) {
        declare_conv(store, conv_name(prefix, u),
                     u == 1 ? spec.c_in : spec.c_out, spec.c_out, 3, seed);
      }
      break;
    case BlockKind::recurrent:
      for (std::size_t u = 1; u <= spec.units; ++u) {
        declare_rcl(store, prefix, u, u == 1 ? spec.c_in : spec.c_out,
                    spec.c_out, seed);
      }
      break;
    case BlockKind::dense_r2: {
      const std::size_t g = spec.growth();
      for (std::size_t u = 1; u <= spec.units; ++u) {
        declare_rcl(store, prefix, u, spec.c_in + (u - 1) * g, g, seed);
      }
      declare_conv(store, prefix + ".compress", spec.c_in + spec.units * g,
                   spec.c_out, 1, seed);
      break;
    }
  }
  const bool residual =
      spec.kind == BlockKind::residual || spec.kind == BlockKind::dense_r2;
  if (residual && spec.c_in != spec.c_out) {
    declare_conv(store, prefix + ".proj", spec.c_in, spec.c_out, 1, seed);
  }
}

VarId r2_forward(Tape& tape, VarId x, const BlockSpec& spec,
                 const std::string& prefix, const BoundParams& params) {
  check_spec(spec);
  VarId branch;
  if (spec.kind == BlockKind::residual) {
    branch = conv_relu_stack(tape, x, spec, prefix, params);
  } else if (spec.kind == BlockKind::dense_r2) {
    std::vector<RclVars> units;
    for (std::size_t u = 1; u <= spec.units; ++u) {
      units.push_back(bind_rcl(params, prefix, u, spec.t));
    }
    branch = dense_rcl_forward(tape, x, units,
                               bind_conv(params, prefix + ".compress"));
  } else {
    throw std::invalid_argument("r2_forward: block kind must be residual or "
                                "dense_r2");
  }
  VarId shortcut = x;
  if (spec.c_in != spec.c_out) {
    const ConvVars proj = bind_conv(params, prefix + ".proj");
    shortcut = conv2d(tape, x, proj.w, proj.b);
  }
  return add(tape, shortcut, branch);
}

VarId block_forward(Tape& tape, VarId x, const BlockSpec& spec,
                    const std::string& prefix, const BoundParams& params,
                    Mode mode, std::uint64_t dropout_seed) {
  check_spec(spec);
  if (tape.shape(x).c != spec.c_in) {
    throw ShapeError("block " + prefix + ": expected " +
                     std::to_string(spec.c_in) + " input channels, got " +
                     std::to_string(tape.shape(x).c));
  }
  VarId out;
  switch (spec.kind) {
    case BlockKind::plain:
      out = conv_relu_stack(tape, x, spec, prefix, params);
      break;
    case BlockKind::recurrent:
      out = x;
      for (std::size_t u = 1; u <= spec.units; ++u) {
        out = rcl_forward(tape, out, bind_rcl(params, prefix, u, spec.t));
      }
      break;
    case BlockKind::residual:
    case BlockKind::dense_r2:
      out = r2_forward(tape, x, spec, prefix, params);
      break;
  }
  return spatial_dropout(tape, out, spec.dropout_rate, mode, dropout_seed);
}

std::size_t count_params(const BlockSpec& spec) {
  ParamStore store;
  declare_block(spec, "block", store, 0);
  return store.count_scalars();
}

}  // namespace r2seg
