#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gpam/errors.hpp"

namespace gpam::ad {

// Dense row-major tensor. Precision is a template parameter: float for
// training, double for gradient checks.
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(size_t(numel_of(shape)), T(0));
  }
  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (int64_t(data.size()) != numel_of(shape))
      throw ShapeMismatch("tensor data length does not match shape");
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw ShapeMismatch("negative dimension");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return int64_t(data.size()); }
  int rank() const { return int(shape.size()); }
  int dim(int i) const { return shape[size_t(i)]; }

  // Size of the last axis and the product of the leading ones.
  int last_dim() const { return shape.empty() ? 1 : shape.back(); }
  int64_t rows() const { return last_dim() == 0 ? 0 : numel() / last_dim(); }

  T& at(std::initializer_list<int> idx) {
    return data[size_t(flat_index(idx))];
  }
  T at(std::initializer_list<int> idx) const {
    return data[size_t(flat_index(idx))];
  }

  int64_t flat_index(std::initializer_list<int> idx) const {
    if (int(idx.size()) != rank()) throw ShapeMismatch("index rank mismatch");
    int64_t flat = 0;
    int i = 0;
    for (int v : idx) {
      flat = flat * shape[size_t(i)] + v;
      ++i;
    }
    return flat;
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
  }
};

}  // namespace gpam::ad
