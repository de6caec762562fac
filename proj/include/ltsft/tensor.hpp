#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "ltsft/common.hpp"

namespace ltsft {

// Dense row-major tensor. Real is float in the product; tests also
// instantiate double for tight finite-difference verification.
template <typename Real>
struct TensorT {
  std::vector<int64_t> shape;
  std::vector<Real> v;

  TensorT() = default;
  explicit TensorT(std::vector<int64_t> s) : shape(std::move(s)), v(static_cast<size_t>(count(shape)), Real(0)) {}
  TensorT(std::vector<int64_t> s, std::vector<Real> vals) : shape(std::move(s)), v(std::move(vals)) {
    if (static_cast<int64_t>(v.size()) != count(shape)) fail(Errc::internal, "tensor value count does not match shape");
  }

  static int64_t count(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) {
      if (d <= 0) fail(Errc::internal, "non-positive dimension");
      n *= d;
    }
    return n;
  }

  int64_t size() const { return static_cast<int64_t>(v.size()); }
  int64_t rows() const { return shape.empty() ? 1 : shape[0]; }
  int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  Real& at(int64_t r, int64_t c) { return v[static_cast<size_t>(r * cols() + c)]; }
  Real at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols() + c)]; }
};

using Tensor = TensorT<float>;

inline std::string shape_str(const std::vector<int64_t>& shape) {
  std::string s;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s.empty() ? "1" : s;
}

}  // namespace ltsft
