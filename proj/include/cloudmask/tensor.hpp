#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cloudmask/errors.hpp"

namespace cloudmask {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

// Dense row-major tensor; for 4-D data the layout is (batch, channel, row,
// col), channel-major within a sample. Degenerate ranks are allowed.
template <typename T>
struct TensorT {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;

  TensorT() = default;
  explicit TensorT(Shape s) : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), T(0)) {}
  TensorT(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
      throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
    }
  }

  static TensorT zeros(Shape s) { return TensorT(std::move(s)); }
  static TensorT full(Shape s, T v) {
    TensorT t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static TensorT scalar(T v) { return TensorT(Shape{1}, {v}); }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
  bool is_scalar() const { return numel() == 1; }

  // 4-D convenience accessor used by tests and reference loops.
  T& at4(int n, int c, int h, int w) {
    return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  T at4(int n, int c, int h, int w) const {
    return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }

  bool all_finite() const {
    for (T v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.requires_grad = requires_grad;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

template <typename T>
void require_rank(const TensorT<T>& t, int rank, const char* who) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(who) + ": expected rank " + std::to_string(rank) + " tensor, got shape " + shape_str(t.shape));
  }
}

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* who) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(who) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
}

}  // namespace cloudmask
