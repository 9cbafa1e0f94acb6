// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include "ubt/errors.hpp"
#include "ubt/tensor.hpp"

namespace ubt {

// Named parameter collection with deterministic (lexicographic) iteration
// order. Names are unique and shapes are fixed after insertion.
class ParamSet {
 public:
  using Map = std::map<std::string, Tensor>;

  void insert(const std::string& name, Tensor value) {
    if (entries_.count(name)) {
      throw InvalidConfigError("duplicate parameter name: " + name);
    }
    entries_.emplace(name, std::move(value));
  }

  // Replaces the value of an existing parameter; the shape must match.
  void update(const std::string& name, Tensor value) {
    Tensor& cur = mutable_at(name);
    if (!cur.same_shape(value)) {
      throw ShapeMismatchError("parameter " + name + " shape is immutable");
    }
    cur = std::move(value);
  }

  const Tensor& at(const std::string& name) const {
    const auto it = entries_.find(name);
    if (it == entries_.end()) {
      throw InvalidConfigError("unknown parameter: " + name);
    }
    return it->second;
  }

  Tensor& mutable_at(const std::string& name) {
    const auto it = entries_.find(name);
    if (it == entries_.end()) {
      throw InvalidConfigError("unknown parameter: " + name);
    }
    return it->second;
  }

  bool contains(const std::string& name) const {
    return entries_.count(name) != 0;
  }

  std::size_t size() const { return entries_.size(); }
  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }

  bool operator==(const ParamSet& other) const {
    return entries_ == other.entries_;
  }

 private:
  Map entries_;
};

enum class Direction { kDescend, kAscend };

// One plain SGD update: p <- p -/+ lr * g depending on direction. Gradients
// must be finite and shape-compatible; parameters without a gradient entry
// are left unchanged.
void sgd_step(ParamSet& params, const ParamSet& grads, double lr,
              Direction direction);

}  // namespace ubt
