#pragma once

#include <cmath>
#include <cstring>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "lce/core.hpp"

namespace lce {

using Shape = std::vector<index_t>;

inline index_t shape_numel(const Shape& s) {
  index_t n = 1;
  for (index_t e : s) {
    LCE_CHECK(e >= 0, "negative extent in shape");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::vector<T> grad;  // empty until a backward pass reaches this leaf
  // Tape registration. Valid only while tape_gen matches the live tape's
  // generation; a new tape (or a cleared one) invalidates all stale ids.
  std::uint64_t tape_gen = 0;
  std::int32_t node = -1;
};

// Dense tensor handle with shared storage (copies alias; clone() deep-copies).
// Row-major; image tensors are B x C x H x W.
template <class T>
class TensorT {
 public:
  TensorT() : impl_(std::make_shared<TensorImpl<T>>()) {}

  explicit TensorT(Shape shape, T fill = T(0)) : TensorT() {
    impl_->shape = std::move(shape);
    impl_->data.assign(shape_numel(impl_->shape), fill);
  }

  static TensorT zeros(Shape shape) { return TensorT(std::move(shape), T(0)); }
  static TensorT full(Shape shape, T v) { return TensorT(std::move(shape), v); }
  static TensorT ones(Shape shape) { return TensorT(std::move(shape), T(1)); }

  static TensorT from_data(Shape shape, std::vector<T> data) {
    TensorT t;
    LCE_CHECK(shape_numel(shape) == static_cast<index_t>(data.size()),
              "data length ", data.size(), " does not match shape ", shape_str(shape));
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    return t;
  }

  static TensorT scalar(T v) { return from_data({1}, {v}); }

  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  index_t dim(int i) const { return impl_->shape.at(static_cast<size_t>(i)); }
  index_t numel() const { return static_cast<index_t>(impl_->data.size()); }

  T* data() { return impl_->data.data(); }
  const T* data() const { return impl_->data.data(); }
  std::vector<T>& vec() { return impl_->data; }
  const std::vector<T>& vec() const { return impl_->data; }

  T& operator[](index_t i) { return impl_->data[static_cast<size_t>(i)]; }
  const T& operator[](index_t i) const { return impl_->data[static_cast<size_t>(i)]; }

  // 4-d convenience accessor (BCHW)
  T& at4(index_t b, index_t c, index_t h, index_t w) {
    const Shape& s = impl_->shape;
    return impl_->data[((b * s[1] + c) * s[2] + h) * s[3] + w];
  }
  const T& at4(index_t b, index_t c, index_t h, index_t w) const {
    const Shape& s = impl_->shape;
    return impl_->data[((b * s[1] + c) * s[2] + h) * s[3] + w];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  TensorT& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<T>& grad() const { return impl_->grad; }
  std::vector<T>& grad() { return impl_->grad; }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }
  void clear_grad() { impl_->grad.clear(); }

  TensorT clone() const {
    TensorT t;
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
  }

  TensorT reshaped(Shape s) const {  // shares nothing; plain value with new shape
    LCE_CHECK(shape_numel(s) == numel(), "reshape ", shape_str(impl_->shape), " -> ",
              shape_str(s), " changes element count");
    TensorT t = clone();
    t.impl_->shape = std::move(s);
    return t;
  }

  bool same_shape(const TensorT& o) const { return impl_->shape == o.impl_->shape; }

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

template <class T>
void check_finite(const TensorT<T>& t, const char* op) {
  const T* p = t.data();
  const index_t n = t.numel();
  for (index_t i = 0; i < n; ++i) {
    if (!std::isfinite(static_cast<double>(p[i])))
      throw Error(std::string("non-finite value produced by op '") + op + "'");
  }
}

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace lce
