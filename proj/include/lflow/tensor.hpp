#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "lflow/errors.hpp"

namespace lflow::grad {

// Dense row-major array of doubles. By convention batched quantities keep the
// batch as the trailing axis, so per-sample vectors are contiguous and the
// hot loops vectorise.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s)
      : shape(std::move(s)), data(count(shape), 0.0) {}
  Tensor(std::vector<int> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != count(shape)) {
      throw ValidationError("tensor data does not match shape");
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static std::size_t count(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw ValidationError("tensor dimensions must be positive");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  // Negative axes count from the end.
  int dim(int axis) const {
    if (axis < 0) axis += rank();
    return shape[static_cast<std::size_t>(axis)];
  }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

inline bool same_shape(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape;
}

// Named, ordered collection of parameter arrays. Order is creation order and
// fixes the layout used by optimiser state and checkpoints.
class ParameterSet {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    if (has(name)) throw ValidationError("duplicate parameter name: " + name);
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
  }

  bool has(const std::string& name) const { return find(name) != nullptr; }

  Tensor& at(const std::string& name) {
    if (auto* t = find(name)) return *t;
    throw ValidationError("unknown parameter: " + name);
  }
  const Tensor& at(const std::string& name) const {
    if (auto* t = find(name)) return *t;
    throw ValidationError("unknown parameter: " + name);
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& [_, t] : items_) n += t.size();
    return n;
  }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  std::size_t count() const { return items_.size(); }

 private:
  Tensor* find(const std::string& name) {
    for (auto& [k, v] : items_) {
      if (k == name) return &v;
    }
    return nullptr;
  }
  const Tensor* find(const std::string& name) const {
    return const_cast<ParameterSet*>(this)->find(name);
  }

  std::vector<std::pair<std::string, Tensor>> items_;
};

// Loss value plus one gradient array per parameter, shape-matched.
struct GradientRecord {
  double loss = 0.0;
  std::vector<std::pair<std::string, Tensor>> grads;

  const Tensor& at(const std::string& name) const {
    for (const auto& [k, v] : grads) {
      if (k == name) return v;
    }
    throw ValidationError("no gradient recorded for: " + name);
  }
};

}  // namespace lflow::grad
