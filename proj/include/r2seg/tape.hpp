#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "r2seg/tensor.hpp"

namespace r2seg {

/// Handle to a value recorded on a Tape.
struct VarId {
  std::size_t index = 0;
  friend bool operator==(VarId, VarId) = default;
};

class Tape;
class Gradients;
Gradients backward(const Tape& tape, VarId loss);

/// Gradient accumulator handed to backward rules.
class GradSink {
 public:
  explicit GradSink(const Tape& tape);

  // Gradient slot for `id`, zero-initialised on first access. Returns
  // nullptr when `id` does not require a gradient.
  Tensor4* slot(VarId id);
  const Tensor4* get(VarId id) const;
  bool has(VarId id) const;

 private:
  const Tape* tape_;
  std::vector<std::optional<Tensor4>> grads_;

  friend class Tape;
  friend class Gradients;
};

// A backward rule receives the gradient of its node's output and adds the
// contributions for its inputs into the sink.
using BackwardRule =
    std::function<void(const Tape&, const Tensor4& grad_out, GradSink&)>;

/// Define-by-run record of forward operations in topological order.
class Tape {
 public:
  VarId leaf(Tensor4 value, bool requires_grad = true);
  VarId constant(Tensor4 value) { return leaf(std::move(value), false); }

  // Records an op output. The rule is dropped when no input requires grad.
  VarId record(Tensor4 value, std::vector<VarId> inputs, BackwardRule rule);

  const Tensor4& value(VarId id) const;
  const Shape4& shape(VarId id) const { return value(id).shape(); }
  bool requires_grad(VarId id) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor4 value;
    std::vector<VarId> inputs;
    BackwardRule rule;
    bool requires_grad = false;
  };
  void check(VarId id) const;

  std::vector<Node> nodes_;

  friend class GradSink;
  friend class Gradients;
  friend Gradients backward(const Tape&, VarId);
};

/// Result of a backward pass.
class Gradients {
 public:
  // Gradient for `id`; zeros of the value's shape when `id` requires grad
  // but was not reached from the loss.
  Tensor4 of(VarId id) const;
  bool reached(VarId id) const { return sink_.has(id); }

 private:
  explicit Gradients(GradSink sink) : sink_(std::move(sink)) {}
  GradSink sink_;
  friend Gradients backward(const Tape&, VarId);
};

/// Reverse pass from a 1x1x1x1 loss. Throws ShapeError for a non-scalar
/// loss and std::out_of_range for an unknown id.
Gradients backward(const Tape& tape, VarId loss);

}  // namespace r2seg
