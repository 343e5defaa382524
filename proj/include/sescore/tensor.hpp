#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sescore/common.hpp"

namespace sescore {

// Dense row-major tensor of 64-bit floats. Rank 1 and 2 are all the model
// needs; shape is kept as a vector so error messages can print anything.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0)
      : shape(std::move(s)) {
    values.assign(numel_of(shape), fill);
  }

  static Tensor from(std::vector<std::size_t> s, std::vector<double> v) {
    if (numel_of(s) != v.size()) {
      throw ShapeError("tensor values do not match shape " + shape_str(s));
    }
    Tensor t;
    t.shape = std::move(s);
    t.values = std::move(v);
    return t;
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return s.empty() ? 0 : n;
  }

  std::size_t numel() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }

  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const {
    return values[r * cols() + c];
  }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  static std::string shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) os << "x";
      os << s[i];
    }
    os << "]";
    return os.str();
  }
  std::string shape_str() const { return shape_str(shape); }
};

// Glorot-uniform in +-sqrt(6/(fan_in+fan_out)). Matrices use (rows, cols)
// as (fan_in, fan_out); rank-1 tensors use fan_in = fan_out = n.
inline Tensor glorot_init(std::vector<std::size_t> shape, std::uint64_t seed) {
  std::size_t fan_in = 0, fan_out = 0;
  if (shape.size() >= 2) {
    fan_in = shape[0];
    fan_out = shape[1];
  } else {
    fan_in = fan_out = shape.empty() ? 1 : shape[0];
  }
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (double& v : t.values) v = rng.uniform(-limit, limit);
  return t;
}

}  // namespace sescore
