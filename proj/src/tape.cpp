#include "r2seg/tape.hpp"

#include <stdexcept>

namespace r2seg {

GradSink::GradSink(const Tape& tape)
    : tape_(&tape), grads_(tape.size()) {}

Tensor4* GradSink::slot(VarId id) {
  tape_->check(id);
  if (!tape_->requires_grad(id)) return nullptr;
  auto& g = grads_[id.index];
  if (!g) g.emplace(tape_->shape(id), 0.0);
  return &*g;
}

const Tensor4* GradSink::get(VarId id) const {
  if (id.index >= grads_.size() || !grads_[id.index]) return nullptr;
  return &*grads_[id.index];
}

bool GradSink::has(VarId id) const { return get(id) != nullptr; }

VarId Tape::leaf(Tensor4 value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, {}, requires_grad});
  return VarId{nodes_.size() - 1};
}

VarId Tape::record(Tensor4 value, std::vector<VarId> inputs,
                   BackwardRule rule) {
  bool needs = false;
  for (VarId in : inputs) {
    check(in);
    needs = needs || nodes_[in.index].requires_grad;
  }
  if (!needs) rule = nullptr;
  nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(rule),
                        needs});
  return VarId{nodes_.size() - 1};
}

const Tensor4& Tape::value(VarId id) const {
  check(id);
  return nodes_[id.index].value;
}

bool Tape::requires_grad(VarId id) const {
  check(id);
  return nodes_[id.index].requires_grad;
}

void Tape::check(VarId id) const {
  if (id.index >= nodes_.size()) {
    throw std::out_of_range("unknown tape id " + std::to_string(id.index));
  }
}

Tensor4 Gradients::of(VarId id) const {
  sink_.tape_->check(id);
  if (const Tensor4* g = sink_.get(id)) return *g;
  return Tensor4(sink_.tape_->shape(id), 0.0);
}

Gradients backward(const Tape& tape, VarId loss) {
  const Shape4 scalar{1, 1, 1, 1};
  if (tape.shape(loss) != scalar) {
    throw ShapeError("backward: loss must be 1x1x1x1, got " +
                     to_string(tape.shape(loss)));
  }
  GradSink sink(tape);
  if (Tensor4* seed = sink.slot(loss)) (*seed)[0] = 1.0;

  for (std::size_t i = loss.index + 1; i-- > 0;) {
    const auto& node = tape.nodes_[i];
    if (!node.rule) continue;
    const Tensor4* g = sink.get(VarId{i});
    if (!g) continue;
    node.rule(tape, *g, sink);
  }
  return Gradients(std::move(sink));
}

}  // namespace r2seg
