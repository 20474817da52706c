#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ccgan/error.hpp"

namespace ccgan {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() {
  return DType::kFloat32;
}
template <>
constexpr DType dtype_of<double>() {
  return DType::kFloat64;
}

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a backward pass touches this tensor
  bool requires_grad = false;
  // Scratch flag owned by Tape::backward: true when this tensor depends on a
  // gradient target.
  bool active = false;
  std::int64_t node_id = -1;
};

}  // namespace detail

/// Dense row-major array (N x C x H x W for images) with optional gradient.
///
/// Copies are shallow handles onto the same storage, the way autodiff graphs
/// need them; use clone() for an independent deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Impl = detail::TensorImpl<T>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T& operator[](std::size_t i) { return impl_->data[i]; }
  const T& operator[](std::size_t i) const { return impl_->data[i]; }
  T item() const;

  bool has_grad() const { return defined() && !impl_->grad.empty(); }
  /// Gradient buffer; allocated (zero) on first access.
  std::span<T> grad();
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad();

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag) {
    impl_->requires_grad = flag;
    return *this;
  }
  std::int64_t node_id() const { return impl_->node_id; }

  /// Deep copy of the values, detached from any tape; requires_grad is kept.
  Tensor clone() const;
  /// Deep copy of the values as a constant.
  Tensor detach() const;
  /// Constant copy with another shape of equal size.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;

  Impl* impl() const noexcept { return impl_.get(); }
  const std::shared_ptr<Impl>& impl_ptr() const noexcept { return impl_; }

  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<Impl> impl_;
};

template <typename T>
bool same_values(const Tensor<T>& a, const Tensor<T>& b);

extern template class Tensor<float>;
extern template class Tensor<double>;

/// Converts between precisions; the result is a constant.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& src) {
  Tensor<To> out(src.shape());
  auto s = src.data();
  auto d = out.data();
  for (std::size_t i = 0; i < s.size(); ++i) d[i] = static_cast<To>(s[i]);
  return out;
}

}  // namespace ccgan
