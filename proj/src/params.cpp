#include "r2seg/params.hpp"

#include <stdexcept>

namespace r2seg {

void ParamStore::add(std::string name, Tensor4 value) {
  if (index_.count(name)) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  index_.emplace(name, entries_.size());
  entries_.push_back(NamedTensor{std::move(name), std::move(value)});
}

bool ParamStore::contains(const std::string& name) const {
  return index_.count(name) != 0;
}

std::size_t ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::out_of_range("unknown parameter: " + name);
  }
  return it->second;
}

Tensor4& ParamStore::get(const std::string& name) {
  return entries_[index_of(name)].value;
}

const Tensor4& ParamStore::get(const std::string& name) const {
  return entries_[index_of(name)].value;
}

std::size_t ParamStore::count_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

BoundParams::BoundParams(Tape& tape, const ParamStore& store,
                         bool requires_grad)
    : store_(&store) {
  ids_.reserve(store.size());
  for (const auto& e : store.entries()) {
    ids_.push_back(tape.leaf(e.value, requires_grad));
  }
}

BoundParams::BoundParams(const ParamStore& store, std::vector<VarId> ids)
    : store_(&store), ids_(std::move(ids)) {
  if (ids_.size() != store.size()) {
    throw std::invalid_argument("BoundParams: id count does not match store");
  }
}

VarId BoundParams::operator()(const std::string& name) const {
  return ids_[store_->index_of(name)];
}

}  // namespace r2seg
