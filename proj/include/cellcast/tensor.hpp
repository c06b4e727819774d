#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "cellcast/dual.hpp"
#include "cellcast/errors.hpp"

namespace cellcast {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major tensor of 64-bit floats (or Dual for derivative passes).
// External data enters through from_data, which rejects NaN/Inf.
template <class T>
class TensorT {
 public:
  TensorT() = default;

  static TensorT zeros(Shape shape) {
    TensorT t;
    t.shape_ = std::move(shape);
    t.data_.assign(shape_size(t.shape_), from_real<T>(0.0));
    return t;
  }

  static TensorT full(Shape shape, double value) {
    TensorT t;
    t.shape_ = std::move(shape);
    t.data_.assign(shape_size(t.shape_), from_real<T>(value));
    return t;
  }

  static TensorT from_data(Shape shape, std::vector<double> data) {
    if (data.size() != shape_size(shape)) {
      throw ConfigError("tensor data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
    }
    for (double v : data) {
      if (!std::isfinite(v)) {
        throw NumericError("tensor construction rejects non-finite entries");
      }
    }
    TensorT t;
    t.shape_ = std::move(shape);
    t.data_.reserve(data.size());
    for (double v : data) t.data_.push_back(from_real<T>(v));
    return t;
  }

  static TensorT scalar(double value) { return full({}, value); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? (shape_.empty() ? 1 : shape_[0]) : shape_[1]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  T& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  TensorT reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw ConfigError("reshape size mismatch: " + shape_str(shape_) + " -> " + shape_str(shape));
    }
    TensorT t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  bool all_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(real_part(v))) return false;
    }
    return true;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<double>;

inline Tensor real_parts(const TensorT<Dual>& t) {
  Tensor out = Tensor::zeros(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i].v;
  return out;
}

inline Tensor deriv_parts(const TensorT<Dual>& t) {
  Tensor out = Tensor::zeros(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i].d;
  return out;
}

template <class T>
TensorT<T> widen(const Tensor& t) {
  TensorT<T> out = TensorT<T>::zeros(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = from_real<T>(t[i]);
  return out;
}

// Dual tensor whose derivative slots are seeded with a direction tensor.
inline TensorT<Dual> dual_seeded(const Tensor& value, const Tensor& direction) {
  if (!value.same_shape(direction)) {
    throw ConfigError("dual seed shape " + shape_str(direction.shape()) +
                      " does not mirror value shape " + shape_str(value.shape()));
  }
  TensorT<Dual> out = TensorT<Dual>::zeros(value.shape());
  for (std::size_t i = 0; i < value.size(); ++i) out[i] = Dual(value[i], direction[i]);
  return out;
}

}  // namespace cellcast
