#include "r2seg/nnops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "r2seg/kernels.hpp"

namespace r2seg {

namespace {

const Shape4 kScalar{1, 1, 1, 1};

std::size_t resolve_pad(const Tensor4& w, Padding padding) {
  const auto& ws = w.shape();
  if (ws.h != ws.w) throw ShapeError("conv: only square kernels supported");
  if (padding == Padding::valid) return 0;
  if (ws.h % 2 == 0) throw ShapeError("conv: same padding needs an odd kernel");
  return ws.h / 2;
}

void check_bias(const Tensor4& b, std::size_t channels) {
  if (b.size() != channels) {
    throw ShapeError("bias has " + std::to_string(b.size()) +
                     " entries, expected " + std::to_string(channels));
  }
}

std::span<const double> sample_span(const Tensor4& t, std::size_t s) {
  const std::size_t len = t.shape().c * t.shape().plane();
  return t.data().subspan(s * len, len);
}

std::span<double> sample_span(Tensor4& t, std::size_t s) {
  const std::size_t len = t.shape().c * t.shape().plane();
  return t.data().subspan(s * len, len);
}

void add_bias(Tensor4& y, const Tensor4& b) {
  const auto& s = y.shape();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      double* p = y.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) p[i] += b[c];
    }
  }
}

void accumulate_bias_grad(const Tensor4& g, Tensor4& db) {
  const auto& s = g.shape();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* p = g.plane(n, c);
      double acc = 0.0;
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
      db[c] += acc;
    }
  }
}

// Forward cross-correlation of every sample: y_s = W * im2col(x_s).
Tensor4 conv_forward(const Tensor4& x, const Tensor4& w,
                     const kernels::ConvGeometry& g) {
  const std::size_t c_out = w.shape().n;
  Tensor4 y(Shape4{x.shape().n, c_out, g.out_h, g.out_w});
  std::vector<double> cols(g.col_rows() * g.col_cols());
  for (std::size_t s = 0; s < x.shape().n; ++s) {
    kernels::im2col(sample_span(x, s), g, cols);
    kernels::gemm_nn(c_out, g.col_cols(), g.col_rows(), w.data(), cols,
                     sample_span(y, s), false);
  }
  return y;
}

// dx_s = col2im(W^T * gout_s).
Tensor4 conv_backward_input(const Tensor4& grad_out, const Tensor4& w,
                            const Shape4& x_shape,
                            const kernels::ConvGeometry& g) {
  const std::size_t c_out = w.shape().n;
  Tensor4 dx(x_shape, 0.0);
  std::vector<double> cols(g.col_rows() * g.col_cols());
  for (std::size_t s = 0; s < x_shape.n; ++s) {
    kernels::gemm_tn(g.col_rows(), g.col_cols(), c_out, w.data(),
                     sample_span(grad_out, s), cols, false);
    kernels::col2im(cols, g, sample_span(dx, s));
  }
  return dx;
}

// dW += sum_s rows_s * im2col(img_s)^T, rows_s: (m x P).
void conv_backward_weight(const Tensor4& rows, const Tensor4& img,
                          const kernels::ConvGeometry& g, Tensor4& dw) {
  const std::size_t m = rows.shape().c;
  std::vector<double> cols(g.col_rows() * g.col_cols());
  for (std::size_t s = 0; s < img.shape().n; ++s) {
    kernels::im2col(sample_span(img, s), g, cols);
    kernels::gemm_nt(m, g.col_rows(), g.col_cols(), sample_span(rows, s), cols,
                     dw.data(), true);
  }
}

kernels::ConvGeometry conv_geometry(const Shape4& xs, const Tensor4& w,
                                    ConvOptions opt) {
  return kernels::ConvGeometry::make(xs.c, xs.h, xs.w, w.shape().h,
                                     resolve_pad(w, opt.padding), opt.stride);
}

kernels::ConvGeometry transpose_geometry(const Shape4& xs, const Tensor4& w) {
  const auto& ws = w.shape();
  if (ws.h != 3 || ws.w != 3) {
    throw ShapeError("conv_transpose2d: kernel must be 3x3");
  }
  if (ws.n != xs.c) {
    throw ShapeError("conv_transpose2d: channel mismatch, input has " +
                     std::to_string(xs.c) + " channels, weight expects " +
                     std::to_string(ws.n));
  }
  return kernels::ConvGeometry::make(ws.c, 2 * xs.h, 2 * xs.w, 3, 1, 2);
}

void check_same(const Shape4& a, const Shape4& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) +
                     " vs " + to_string(b));
  }
}

double stable_sigmoid(double z) {
  constexpr double kHi = 1.0 - std::numeric_limits<double>::epsilon() / 2;
  constexpr double kLo = std::numeric_limits<double>::min();
  double s;
  if (z >= 0) {
    s = 1.0 / (1.0 + std::exp(-z));
  } else {
    const double e = std::exp(z);
    s = e / (1.0 + e);
  }
  return std::clamp(s, kLo, kHi);
}

std::vector<double> dropout_scales(std::size_t planes, double rate,
                                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> scales(planes);
  for (double& s : scales) s = u(rng) < rate ? 0.0 : keep_scale;
  return scales;
}

void check_binary(const Tensor4& t) {
  for (double v : t.data()) {
    if (v != 0.0 && v != 1.0) {
      throw std::invalid_argument("bce_loss: target must be binary, found " +
                                  std::to_string(v));
    }
  }
}

}  // namespace

// ---------------------------------------------------------------- conv2d

Tensor4 conv2d(const Tensor4& x, const Tensor4& w, const Tensor4& b,
               ConvOptions opt) {
  if (w.shape().c != x.shape().c) {
    throw ShapeError("conv2d: channel mismatch, input has " +
                     std::to_string(x.shape().c) + " channels, weight expects " +
                     std::to_string(w.shape().c));
  }
  check_bias(b, w.shape().n);
  const auto g = conv_geometry(x.shape(), w, opt);
  Tensor4 y = conv_forward(x, w, g);
  add_bias(y, b);
  return y;
}

Tensor4 conv2d_input_grad(const Tensor4& grad_out, const Tensor4& w,
                          const Shape4& x_shape, ConvOptions opt) {
  const auto g = conv_geometry(x_shape, w, opt);
  return conv_backward_input(grad_out, w, x_shape, g);
}

VarId conv2d(Tape& tape, VarId x, VarId w, VarId b, ConvOptions opt) {
  Tensor4 y = conv2d(tape.value(x), tape.value(w), tape.value(b), opt);
  return tape.record(
      std::move(y), {x, w, b},
      [x, w, b, opt](const Tape& t, const Tensor4& g, GradSink& sink) {
        const Tensor4& xv = t.value(x);
        const Tensor4& wv = t.value(w);
        const auto geo = conv_geometry(xv.shape(), wv, opt);
        if (Tensor4* dx = sink.slot(x)) {
          *dx += conv_backward_input(g, wv, xv.shape(), geo);
        }
        if (Tensor4* dw = sink.slot(w)) conv_backward_weight(g, xv, geo, *dw);
        if (Tensor4* db = sink.slot(b)) accumulate_bias_grad(g, *db);
      });
}

// ------------------------------------------------------ conv_transpose2d

Tensor4 conv_transpose2d(const Tensor4& x, const Tensor4& w,
                         const Tensor4& b) {
  const auto g = transpose_geometry(x.shape(), w);
  check_bias(b, w.shape().c);
  const Shape4 out{x.shape().n, w.shape().c, 2 * x.shape().h,
                   2 * x.shape().w};
  Tensor4 y = conv_backward_input(x, w, out, g);
  add_bias(y, b);
  return y;
}

VarId conv_transpose2d(Tape& tape, VarId x, VarId w, VarId b) {
  Tensor4 y = conv_transpose2d(tape.value(x), tape.value(w), tape.value(b));
  return tape.record(
      std::move(y), {x, w, b},
      [x, w, b](const Tape& t, const Tensor4& g, GradSink& sink) {
        const Tensor4& xv = t.value(x);
        const Tensor4& wv = t.value(w);
        const auto geo = transpose_geometry(xv.shape(), wv);
        if (Tensor4* dx = sink.slot(x)) *dx += conv_forward(g, wv, geo);
        if (Tensor4* dw = sink.slot(w)) conv_backward_weight(xv, g, geo, *dw);
        if (Tensor4* db = sink.slot(b)) accumulate_bias_grad(g, *db);
      });
}

// ------------------------------------------------------------- maxpool2d

PoolResult maxpool2d(const Tensor4& x) {
  const auto& s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("maxpool2d: spatial dims must be even, got " +
                     to_string(s));
  }
  PoolResult r{Tensor4(Shape4{s.n, s.c, s.h / 2, s.w / 2}), {}};
  r.argmax.resize(r.value.size());
  std::size_t o = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t oy = 0; oy < s.h / 2; ++oy) {
        for (std::size_t ox = 0; ox < s.w / 2; ++ox, ++o) {
          std::size_t best = x.offset(n, c, 2 * oy, 2 * ox);
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = x.offset(n, c, 2 * oy + dy, 2 * ox + dx);
              if (x[idx] > x[best]) best = idx;
            }
          }
          r.value[o] = x[best];
          r.argmax[o] = best;
        }
      }
    }
  }
  return r;
}

VarId maxpool2d(Tape& tape, VarId x) {
  PoolResult r = maxpool2d(tape.value(x));
  return tape.record(
      std::move(r.value), {x},
      [x, argmax = std::move(r.argmax)](const Tape&, const Tensor4& g,
                                        GradSink& sink) {
        if (Tensor4* dx = sink.slot(x)) {
          for (std::size_t i = 0; i < argmax.size(); ++i) {
            (*dx)[argmax[i]] += g[i];
          }
        }
      });
}

// ------------------------------------------------------------ activations

Tensor4 relu(const Tensor4& x) {
  Tensor4 y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

VarId relu(Tape& tape, VarId x) {
  return tape.record(relu(tape.value(x)), {x},
                     [x](const Tape& t, const Tensor4& g, GradSink& sink) {
                       if (Tensor4* dx = sink.slot(x)) {
                         const Tensor4& xv = t.value(x);
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           if (xv[i] > 0.0) (*dx)[i] += g[i];
                         }
                       }
                     });
}

Tensor4 sigmoid(const Tensor4& x) {
  Tensor4 y = x;
  for (double& v : y.data()) v = stable_sigmoid(v);
  return y;
}

VarId sigmoid(Tape& tape, VarId x) {
  return tape.record(sigmoid(tape.value(x)), {x},
                     [x](const Tape& t, const Tensor4& g, GradSink& sink) {
                       if (Tensor4* dx = sink.slot(x)) {
                         const Tensor4& xv = t.value(x);
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           const double s = stable_sigmoid(xv[i]);
                           (*dx)[i] += g[i] * s * (1.0 - s);
                         }
                       }
                     });
}

// ---------------------------------------------------------------- concat

Tensor4 concat_channels(std::span<const Tensor4> xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape4 first = xs.front().shape();
  std::size_t channels = 0;
  for (const auto& t : xs) {
    const auto& s = t.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: spatial mismatch " + to_string(first) +
                       " vs " + to_string(s));
    }
    channels += s.c;
  }
  Tensor4 y(Shape4{first.n, channels, first.h, first.w});
  const std::size_t plane = first.plane();
  for (std::size_t n = 0; n < first.n; ++n) {
    std::size_t c0 = 0;
    for (const auto& t : xs) {
      const double* src = t.plane(n, 0);
      std::copy(src, src + t.shape().c * plane, y.plane(n, c0));
      c0 += t.shape().c;
    }
  }
  return y;
}

std::vector<Tensor4> split_channels(const Tensor4& x,
                                    std::span<const std::size_t> channels) {
  const auto& s = x.shape();
  std::size_t total = 0;
  for (std::size_t c : channels) total += c;
  if (total != s.c) {
    throw ShapeError("split_channels: channel counts sum to " +
                     std::to_string(total) + ", tensor has " +
                     std::to_string(s.c));
  }
  std::vector<Tensor4> parts;
  parts.reserve(channels.size());
  for (std::size_t c : channels) parts.emplace_back(Shape4{s.n, c, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    std::size_t c0 = 0;
    for (auto& p : parts) {
      const double* src = x.plane(n, c0);
      std::copy(src, src + p.shape().c * s.plane(), p.plane(n, 0));
      c0 += p.shape().c;
    }
  }
  return parts;
}

VarId concat_channels(Tape& tape, std::span<const VarId> xs) {
  std::vector<Tensor4> values;
  values.reserve(xs.size());
  for (VarId id : xs) values.push_back(tape.value(id));
  Tensor4 y = concat_channels(values);
  std::vector<VarId> inputs(xs.begin(), xs.end());
  return tape.record(
      std::move(y), inputs,
      [inputs](const Tape& t, const Tensor4& g, GradSink& sink) {
        const auto& s = g.shape();
        std::size_t c0 = 0;
        for (VarId id : inputs) {
          const std::size_t c = t.shape(id).c;
          if (Tensor4* dx = sink.slot(id)) {
            for (std::size_t n = 0; n < s.n; ++n) {
              const double* src = g.plane(n, c0);
              double* dst = dx->plane(n, 0);
              for (std::size_t i = 0; i < c * s.plane(); ++i) dst[i] += src[i];
            }
          }
          c0 += c;
        }
      });
}

// ----------------------------------------------------------- elementwise

Tensor4 add(const Tensor4& x, const Tensor4& y) {
  check_same(x.shape(), y.shape(), "add");
  Tensor4 z = x;
  z += y;
  return z;
}

VarId add(Tape& tape, VarId x, VarId y) {
  return tape.record(add(tape.value(x), tape.value(y)), {x, y},
                     [x, y](const Tape&, const Tensor4& g, GradSink& sink) {
                       if (Tensor4* dx = sink.slot(x)) *dx += g;
                       if (Tensor4* dy = sink.slot(y)) *dy += g;
                     });
}

VarId mul(Tape& tape, VarId x, VarId y) {
  const Tensor4& xv = tape.value(x);
  const Tensor4& yv = tape.value(y);
  check_same(xv.shape(), yv.shape(), "mul");
  Tensor4 z = xv;
  for (std::size_t i = 0; i < z.size(); ++i) z[i] *= yv[i];
  return tape.record(
      std::move(z), {x, y},
      [x, y](const Tape& t, const Tensor4& g, GradSink& sink) {
        const Tensor4& xv = t.value(x);
        const Tensor4& yv = t.value(y);
        if (Tensor4* dx = sink.slot(x)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*dx)[i] += g[i] * yv[i];
        }
        if (Tensor4* dy = sink.slot(y)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*dy)[i] += g[i] * xv[i];
        }
      });
}

// --------------------------------------------------------------- dropout

Tensor4 spatial_dropout(const Tensor4& x, double rate, Mode mode,
                        std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("spatial_dropout: rate must be in [0, 1), got " +
                                std::to_string(rate));
  }
  if (mode == Mode::eval || rate == 0.0) return x;
  const auto& s = x.shape();
  const auto scales = dropout_scales(s.n * s.c, rate, seed);
  Tensor4 y = x;
  for (std::size_t p = 0; p < scales.size(); ++p) {
    double* d = y.data().data() + p * s.plane();
    for (std::size_t i = 0; i < s.plane(); ++i) d[i] *= scales[p];
  }
  return y;
}

VarId spatial_dropout(Tape& tape, VarId x, double rate, Mode mode,
                      std::uint64_t seed) {
  Tensor4 y = spatial_dropout(tape.value(x), rate, mode, seed);
  if (mode == Mode::eval || rate == 0.0) return x;
  const auto& s = tape.shape(x);
  auto scales = dropout_scales(s.n * s.c, rate, seed);
  return tape.record(
      std::move(y), {x},
      [x, scales = std::move(scales)](const Tape&, const Tensor4& g,
                                      GradSink& sink) {
        if (Tensor4* dx = sink.slot(x)) {
          const std::size_t plane = g.shape().plane();
          for (std::size_t p = 0; p < scales.size(); ++p) {
            for (std::size_t i = 0; i < plane; ++i) {
              (*dx)[p * plane + i] += g[p * plane + i] * scales[p];
            }
          }
        }
      });
}

// ------------------------------------------------------------------ loss

double bce_loss(const Tensor4& logits, const Tensor4& target) {
  check_same(logits.shape(), target.shape(), "bce_loss");
  check_binary(target);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    total += std::max(z, 0.0) - z * target[i] + std::log1p(std::exp(-std::abs(z)));
  }
  return total / double(logits.size());
}

VarId bce_loss(Tape& tape, VarId logits, VarId target) {
  const double loss = bce_loss(tape.value(logits), tape.value(target));
  return tape.record(
      Tensor4(kScalar, std::vector<double>{loss}), {logits, target},
      [logits, target](const Tape& t, const Tensor4& g, GradSink& sink) {
        if (Tensor4* dz = sink.slot(logits)) {
          const Tensor4& z = t.value(logits);
          const Tensor4& y = t.value(target);
          const double scale = g[0] / double(z.size());
          for (std::size_t i = 0; i < z.size(); ++i) {
            (*dz)[i] += scale * (stable_sigmoid(z[i]) - y[i]);
          }
        }
      });
}

VarId sum(Tape& tape, VarId x) {
  return tape.record(Tensor4(kScalar, std::vector<double>{tape.value(x).sum()}),
                     {x}, [x](const Tape&, const Tensor4& g, GradSink& sink) {
                       if (Tensor4* dx = sink.slot(x)) {
                         for (double& v : dx->data()) v += g[0];
                       }
                     });
}

VarId weighted_sum(Tape& tape, VarId x, const Tensor4& weights) {
  const Tensor4& xv = tape.value(x);
  check_same(xv.shape(), weights.shape(), "weighted_sum");
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * weights[i];
  return tape.record(Tensor4(kScalar, std::vector<double>{s}), {x},
                     [x, weights](const Tape&, const Tensor4& g,
                                  GradSink& sink) {
                       if (Tensor4* dx = sink.slot(x)) {
                         for (std::size_t i = 0; i < weights.size(); ++i) {
                           (*dx)[i] += g[0] * weights[i];
                         }
                       }
                     });
}

}  // namespace r2seg
