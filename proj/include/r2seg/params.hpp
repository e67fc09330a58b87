#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "r2seg/gradcheck.hpp"
#include "r2seg/tape.hpp"

namespace r2seg {

/// Named learnable tensors in definition order.
class ParamStore {
 public:
  void add(std::string name, Tensor4 value);
  bool contains(const std::string& name) const;
  Tensor4& get(const std::string& name);
  const Tensor4& get(const std::string& name) const;

  std::vector<NamedTensor>& entries() { return entries_; }
  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t index_of(const std::string& name) const;

  /// Total number of learnable scalars.
  std::size_t count_scalars() const;

 private:
  std::vector<NamedTensor> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Tape leaves for every entry of a ParamStore, looked up by name.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ParamStore& store, bool requires_grad = true);
  // Binds to already-created leaves (same order as the store).
  BoundParams(const ParamStore& store, std::vector<VarId> ids);

  VarId operator()(const std::string& name) const;
  const std::vector<VarId>& ids() const { return ids_; }

 private:
  const ParamStore* store_;
  std::vector<VarId> ids_;
};

}  // namespace r2seg
