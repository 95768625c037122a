#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mgoe/common.hpp"

namespace mgoe {

inline std::size_t numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

// Dense row-major tensor of doubles. Rank 1 or 2 is all the model needs.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0)
      : shape(std::move(s)), v(numel(shape), fill) {}
  Tensor(std::vector<int> s, std::vector<double> data)
      : shape(std::move(s)), v(std::move(data)) {
    if (v.size() != numel(shape))
      throw ShapeError("tensor data size does not match shape " + shape_str(shape));
  }

  std::size_t size() const { return v.size(); }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols() + c]; }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

inline Tensor scalar_tensor(double x) { return Tensor({1}, {x}); }

// Xavier/Glorot uniform init: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
// Rank-2 shapes use the two dims as fans; rank-1 uses the length for both.
inline Tensor xavier_init(const std::vector<int>& shape, std::uint64_t seed) {
  if (shape.empty()) throw ShapeError("xavier_init: empty shape");
  double fan_in, fan_out;
  if (shape.size() >= 2) {
    fan_in = shape[1];
    fan_out = shape[0];
  } else {
    fan_in = fan_out = shape[0];
  }
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  std::mt19937_64 rng(seed);
  Tensor t(shape);
  for (double& x : t.v) x = detail::rand_range(rng, -a, a);
  return t;
}

}  // namespace mgoe
