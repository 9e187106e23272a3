// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors over f32/f64. Storage is shared so that tape
// closures can hold cheap handles; shapes are owned by value.

#ifndef CTCMT_TENSOR_HPP
#define CTCMT_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctcmt {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

[[noreturn]] inline void dim_error(const std::string& what) {
  throw std::invalid_argument("dimension error: " + what);
}

template <class T>
class Tensor {
  struct Storage {
    std::vector<T> value;
    std::vector<T> grad;  // allocated iff requires_grad
    bool requires_grad = false;
  };

 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : shape_(std::move(shape)), st_(std::make_shared<Storage>()) {
    for (int d : shape_)
      if (d <= 0) dim_error("non-positive dim in " + shape_str(shape_));
    st_->value.assign(static_cast<std::size_t>(numel(shape_)), fill);
    st_->requires_grad = requires_grad;
    if (requires_grad) st_->grad.assign(st_->value.size(), T(0));
  }

  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.st_ = std::make_shared<Storage>();
    if (static_cast<std::int64_t>(data.size()) != numel(t.shape_))
      dim_error("data size " + std::to_string(data.size()) + " vs shape " + shape_str(t.shape_));
    t.st_->value = std::move(data);
    t.st_->requires_grad = requires_grad;
    if (requires_grad) t.st_->grad.assign(t.st_->value.size(), T(0));
    return t;
  }

  bool defined() const { return static_cast<bool>(st_); }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i < 0 ? rank() + i : i)]; }
  std::int64_t size() const { return st_ ? static_cast<std::int64_t>(st_->value.size()) : 0; }
  bool requires_grad() const { return st_ && st_->requires_grad; }

  T* data() { return st_->value.data(); }
  const T* data() const { return st_->value.data(); }
  std::vector<T>& values() { return st_->value; }
  const std::vector<T>& values() const { return st_->value; }

  T* grad() { return st_->grad.data(); }
  const T* grad() const { return st_->grad.data(); }
  std::vector<T>& grad_values() { return st_->grad; }
  const std::vector<T>& grad_values() const { return st_->grad; }

  void set_requires_grad(bool rg) {
    st_->requires_grad = rg;
    if (rg && st_->grad.size() != st_->value.size()) st_->grad.assign(st_->value.size(), T(0));
    if (!rg) st_->grad.clear();
  }

  void zero_grad() {
    if (requires_grad()) std::fill(st_->grad.begin(), st_->grad.end(), T(0));
  }

  // Same storage, new shape; element count must match.
  Tensor reshaped(Shape shape) const {
    if (numel(shape) != size())
      dim_error("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
    Tensor t(*this);
    t.shape_ = std::move(shape);
    return t;
  }

  T item() const {
    if (size() != 1) throw std::invalid_argument("contract error: item() on non-scalar tensor");
    return st_->value[0];
  }

  bool all_finite() const {
    for (T v : st_->value)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  bool same_storage(const Tensor& o) const { return st_ == o.st_; }

 private:
  Shape shape_;
  std::shared_ptr<Storage> st_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <class T>
Tensor<T> full_like_shape(const Shape& s, T fill) {
  return Tensor<T>(s, fill);
}

// Uniform in [-limit, limit], Glorot-style when limit = sqrt(6/(fan_in+fan_out)).
template <class T>
Tensor<T> uniform_init(Shape shape, T limit, std::mt19937_64& rng, bool requires_grad = true) {
  Tensor<T> t(std::move(shape), T(0), requires_grad);
  std::uniform_real_distribution<double> dist(-static_cast<double>(limit),
                                              static_cast<double>(limit));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace ctcmt

#endif  // CTCMT_TENSOR_HPP
