// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff over a flat tape. Ops are free functions; passing a
// tape records a backward closure, passing nullptr runs the same forward as
// a pure function (the inference path). Reshape is not an op: reshaped
// tensors alias storage, so value and grad flow through untouched.

#ifndef CTCMT_AUTODIFF_HPP
#define CTCMT_AUTODIFF_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <utility>

#include "ctcmt/gemm.hpp"
#include "ctcmt/tensor.hpp"

namespace ctcmt {

template <class T>
class Tape {
 public:
  struct Entry {
    const char* op;
    std::function<void()> backward;
  };

  void record(const char* op, std::function<void()> fn) {
    entries_.push_back(Entry{op, std::move(fn)});
  }

  std::size_t size() const { return entries_.size(); }

  void clear() { entries_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays every entry once, newest first.
  void backward(Tensor<T>& loss) {
    if (loss.size() != 1)
      throw std::invalid_argument("contract error: backward requires a scalar loss");
    if (!loss.requires_grad())
      throw std::invalid_argument("contract error: loss was not produced on this tape");
    loss.grad()[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
  }

 private:
  std::vector<Entry> entries_;
};

namespace detail {

template <class T>
bool track(const Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs) {
  if (!tape) return false;
  for (const Tensor<T>* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

// (outer, n, inner) decomposition of a shape around `axis`.
inline void axis_split(const Shape& s, int axis, std::int64_t& outer, int& n,
                       std::int64_t& inner) {
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size())) dim_error("axis out of range");
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
  n = s[static_cast<std::size_t>(axis)];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i)
    inner *= s[static_cast<std::size_t>(i)];
}

}  // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    dim_error("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const bool rg = detail::track(tape, {&a, &b});
  Tensor<T> c({m, n}, T(0), rg);
  gemm_nn(m, k, n, a.data(), b.data(), c.data());
  if (rg) {
    tape->record("matmul", [a, b, c, m, k, n]() mutable {
      if (a.requires_grad()) gemm_nt(m, n, k, c.grad(), b.data(), a.grad(), true);
      if (b.requires_grad()) gemm_tn(k, m, n, a.data(), c.grad(), b.grad(), true);
    });
  }
  return c;
}

// Batched C[i] = A[i] * B[i], A:[B,m,k] B:[B,k,n]
template <class T>
Tensor<T> bmm_nn(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    dim_error("bmm_nn " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int nb = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  const bool rg = detail::track(tape, {&a, &b});
  Tensor<T> c({nb, m, n}, T(0), rg);
  for (int i = 0; i < nb; ++i)
    gemm_nn(m, k, n, a.data() + static_cast<std::size_t>(i) * m * k,
            b.data() + static_cast<std::size_t>(i) * k * n,
            c.data() + static_cast<std::size_t>(i) * m * n);
  if (rg) {
    tape->record("bmm_nn", [a, b, c, nb, m, k, n]() mutable {
      for (int i = 0; i < nb; ++i) {
        const std::size_t oa = static_cast<std::size_t>(i) * m * k;
        const std::size_t ob = static_cast<std::size_t>(i) * k * n;
        const std::size_t oc = static_cast<std::size_t>(i) * m * n;
        if (a.requires_grad()) gemm_nt(m, n, k, c.grad() + oc, b.data() + ob, a.grad() + oa, true);
        if (b.requires_grad()) gemm_tn(k, m, n, a.data() + oa, c.grad() + oc, b.grad() + ob, true);
      }
    });
  }
  return c;
}

// Batched C[i] = A[i] * B[i]^T, A:[B,m,k] B:[B,n,k]
template <class T>
Tensor<T> bmm_nt(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2))
    dim_error("bmm_nt " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int nb = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  const bool rg = detail::track(tape, {&a, &b});
  Tensor<T> c({nb, m, n}, T(0), rg);
  for (int i = 0; i < nb; ++i)
    gemm_nt(m, k, n, a.data() + static_cast<std::size_t>(i) * m * k,
            b.data() + static_cast<std::size_t>(i) * n * k,
            c.data() + static_cast<std::size_t>(i) * m * n);
  if (rg) {
    tape->record("bmm_nt", [a, b, c, nb, m, k, n]() mutable {
      for (int i = 0; i < nb; ++i) {
        const std::size_t oa = static_cast<std::size_t>(i) * m * k;
        const std::size_t ob = static_cast<std::size_t>(i) * n * k;
        const std::size_t oc = static_cast<std::size_t>(i) * m * n;
        // dA += dC * B ; dB += dC^T * A
        if (a.requires_grad()) gemm_nn(m, n, k, c.grad() + oc, b.data() + ob, a.grad() + oa, true);
        if (b.requires_grad()) gemm_tn(n, m, k, c.grad() + oc, a.data() + oa, b.grad() + ob, true);
      }
    });
  }
  return c;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  if (a.shape() != b.shape())
    dim_error("add " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const bool rg = detail::track(tape, {&a, &b});
  Tensor<T> c(a.shape(), T(0), rg);
  const std::int64_t n = a.size();
  for (std::int64_t i = 0; i < n; ++i) c.data()[i] = a.data()[i] + b.data()[i];
  if (rg) {
    tape->record("add", [a, b, c, n]() mutable {
      if (a.requires_grad())
        for (std::int64_t i = 0; i < n; ++i) a.grad()[i] += c.grad()[i];
      if (b.requires_grad())
        for (std::int64_t i = 0; i < n; ++i) b.grad()[i] += c.grad()[i];
    });
  }
  return c;
}

// x:[..., d] + bias:[d], the one broadcast this library supports.
template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias, Tape<T>* tape = nullptr) {
  if (bias.rank() != 1 || x.dim(-1) != bias.dim(0))
    dim_error("add_bias " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  const int d = bias.dim(0);
  const std::int64_t rows = x.size() / d;
  const bool rg = detail::track(tape, {&x, &bias});
  Tensor<T> y(x.shape(), T(0), rg);
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * d;
    T* yr = y.data() + r * d;
    for (int j = 0; j < d; ++j) yr[j] = xr[j] + bias.data()[j];
  }
  if (rg) {
    tape->record("add_bias", [x, bias, y, rows, d]() mutable {
      if (x.requires_grad())
        for (std::int64_t i = 0; i < rows * d; ++i) x.grad()[i] += y.grad()[i];
      if (bias.requires_grad())
        for (std::int64_t r = 0; r < rows; ++r)
          for (int j = 0; j < d; ++j) bias.grad()[j] += y.grad()[r * d + j];
    });
  }
  return y;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  if (a.shape() != b.shape())
    dim_error("mul " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const bool rg = detail::track(tape, {&a, &b});
  Tensor<T> c(a.shape(), T(0), rg);
  const std::int64_t n = a.size();
  for (std::int64_t i = 0; i < n; ++i) c.data()[i] = a.data()[i] * b.data()[i];
  if (rg) {
    tape->record("mul", [a, b, c, n]() mutable {
      if (a.requires_grad())
        for (std::int64_t i = 0; i < n; ++i) a.grad()[i] += c.grad()[i] * b.data()[i];
      if (b.requires_grad())
        for (std::int64_t i = 0; i < n; ++i) b.grad()[i] += c.grad()[i] * a.data()[i];
    });
  }
  return c;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s, Tape<T>* tape = nullptr) {
  const bool rg = detail::track(tape, {&a});
  Tensor<T> c(a.shape(), T(0), rg);
  const std::int64_t n = a.size();
  for (std::int64_t i = 0; i < n; ++i) c.data()[i] = a.data()[i] * s;
  if (rg) {
    tape->record("scale", [a, c, s, n]() mutable {
      if (a.requires_grad())
        for (std::int64_t i = 0; i < n; ++i) a.grad()[i] += c.grad()[i] * s;
    });
  }
  return c;
}

template <class T>
Tensor<T> relu(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  const bool rg = detail::track(tape, {&x});
  Tensor<T> y(x.shape(), T(0), rg);
  const std::int64_t n = x.size();
  for (std::int64_t i = 0; i < n; ++i) y.data()[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  if (rg) {
    tape->record("relu", [x, y, n]() mutable {
      if (x.requires_grad())
        for (std::int64_t i = 0; i < n; ++i)
          if (x.data()[i] > T(0)) x.grad()[i] += y.grad()[i];
    });
  }
  return y;
}

// Max-subtracted softmax along `axis`.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1, Tape<T>* tape = nullptr) {
  std::int64_t outer, inner;
  int n;
  detail::axis_split(x.shape(), axis, outer, n, inner);
  const bool rg = detail::track(tape, {&x});
  Tensor<T> y(x.shape(), T(0), rg);
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * n * inner + in;
      T mx = x.data()[base];
      for (int j = 1; j < n; ++j) mx = std::max(mx, x.data()[base + j * inner]);
      T sum = T(0);
      for (int j = 0; j < n; ++j) {
        const T e = std::exp(x.data()[base + j * inner] - mx);
        y.data()[base + j * inner] = e;
        sum += e;
      }
      const T inv = T(1) / sum;
      for (int j = 0; j < n; ++j) y.data()[base + j * inner] *= inv;
    }
  }
  if (rg) {
    tape->record("softmax", [x, y, outer, n, inner]() mutable {
      if (!x.requires_grad()) return;
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t base = o * n * inner + in;
          T dot = T(0);
          for (int j = 0; j < n; ++j)
            dot += y.grad()[base + j * inner] * y.data()[base + j * inner];
          for (int j = 0; j < n; ++j)
            x.grad()[base + j * inner] +=
                (y.grad()[base + j * inner] - dot) * y.data()[base + j * inner];
        }
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis = -1, Tape<T>* tape = nullptr) {
  std::int64_t outer, inner;
  int n;
  detail::axis_split(x.shape(), axis, outer, n, inner);
  const bool rg = detail::track(tape, {&x});
  Tensor<T> y(x.shape(), T(0), rg);
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * n * inner + in;
      T mx = x.data()[base];
      for (int j = 1; j < n; ++j) mx = std::max(mx, x.data()[base + j * inner]);
      T sum = T(0);
      for (int j = 0; j < n; ++j) sum += std::exp(x.data()[base + j * inner] - mx);
      const T lse = mx + std::log(sum);
      for (int j = 0; j < n; ++j) y.data()[base + j * inner] = x.data()[base + j * inner] - lse;
    }
  }
  if (rg) {
    tape->record("log_softmax", [x, y, outer, n, inner]() mutable {
      if (!x.requires_grad()) return;
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
          const std::int64_t base = o * n * inner + in;
          T gsum = T(0);
          for (int j = 0; j < n; ++j) gsum += y.grad()[base + j * inner];
          for (int j = 0; j < n; ++j)
            x.grad()[base + j * inner] +=
                y.grad()[base + j * inner] - std::exp(y.data()[base + j * inner]) * gsum;
        }
      }
    });
  }
  return y;
}

// Per-vector normalization over the last axis, then affine gain/bias.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5), Tape<T>* tape = nullptr) {
  const int d = x.dim(-1);
  if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != d || bias.dim(0) != d)
    dim_error("layer_norm gain/bias " + shape_str(gain.shape()));
  const std::int64_t rows = x.size() / d;
  const bool rg = detail::track(tape, {&x, &gain, &bias});
  Tensor<T> y(x.shape(), T(0), rg);
  Tensor<T> xhat({static_cast<int>(rows), d});
  std::vector<T> inv_sigma(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * d;
    T mean = T(0);
    for (int j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (int j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_sigma[static_cast<std::size_t>(r)] = inv;
    T* hr = xhat.data() + r * d;
    T* yr = y.data() + r * d;
    for (int j = 0; j < d; ++j) {
      hr[j] = (xr[j] - mean) * inv;
      yr[j] = gain.data()[j] * hr[j] + bias.data()[j];
    }
  }
  if (rg) {
    tape->record("layer_norm", [x, gain, bias, y, xhat, inv_sigma, rows, d]() mutable {
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* hr = xhat.data() + r * d;
        const T* gy = y.grad() + r * d;
        if (gain.requires_grad())
          for (int j = 0; j < d; ++j) gain.grad()[j] += gy[j] * hr[j];
        if (bias.requires_grad())
          for (int j = 0; j < d; ++j) bias.grad()[j] += gy[j];
        if (x.requires_grad()) {
          T mean_dh = T(0), mean_dhh = T(0);
          for (int j = 0; j < d; ++j) {
            const T dh = gy[j] * gain.data()[j];
            mean_dh += dh;
            mean_dhh += dh * hr[j];
          }
          mean_dh /= static_cast<T>(d);
          mean_dhh /= static_cast<T>(d);
          const T inv = inv_sigma[static_cast<std::size_t>(r)];
          T* gx = x.grad() + r * d;
          for (int j = 0; j < d; ++j) {
            const T dh = gy[j] * gain.data()[j];
            gx[j] += inv * (dh - mean_dh - hr[j] * mean_dhh);
          }
        }
      }
    });
  }
  return y;
}

// Row gather: out[i,:] = table[ids[i],:]
template <class T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<std::int32_t>& ids,
                    Tape<T>* tape = nullptr) {
  if (table.rank() != 2) dim_error("embedding table must be 2-D");
  const int v = table.dim(0), d = table.dim(1);
  for (std::int32_t id : ids)
    if (id < 0 || id >= v) throw std::out_of_range("token id " + std::to_string(id));
  const bool rg = detail::track(tape, {&table});
  Tensor<T> y({static_cast<int>(ids.size()), d}, T(0), rg);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.data() + static_cast<std::size_t>(ids[i]) * d, d, y.data() + i * d);
  if (rg) {
    tape->record("embedding", [table, y, ids, d]() mutable {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        T* tg = table.grad() + static_cast<std::size_t>(ids[i]) * d;
        const T* yg = y.grad() + i * d;
        for (int j = 0; j < d; ++j) tg[j] += yg[j];
      }
    });
  }
  return y;
}

namespace detail {

inline std::vector<std::int64_t> row_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[static_cast<std::size_t>(i)] =
        st[static_cast<std::size_t>(i) + 1] * s[static_cast<std::size_t>(i) + 1];
  return st;
}

}  // namespace detail

// out[idx] = x[perm applied to idx]; perm maps output axis -> input axis.
template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm, Tape<T>* tape = nullptr) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) dim_error("permute rank mismatch");
  Shape out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[static_cast<std::size_t>(i)] = x.dim(perm[static_cast<std::size_t>(i)]);
  const bool rg = detail::track(tape, {&x});
  Tensor<T> y(out_shape, T(0), rg);
  const auto in_st = detail::row_strides(x.shape());
  std::vector<std::int64_t> gather_st(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i)
    gather_st[static_cast<std::size_t>(i)] = in_st[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  const std::int64_t n = y.size();
  std::vector<int> idx(static_cast<std::size_t>(r), 0);
  for (std::int64_t flat = 0; flat < n; ++flat) {
    std::int64_t src = 0;
    for (int i = 0; i < r; ++i) src += idx[static_cast<std::size_t>(i)] * gather_st[static_cast<std::size_t>(i)];
    y.data()[flat] = x.data()[src];
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[static_cast<std::size_t>(i)] < out_shape[static_cast<std::size_t>(i)]) break;
      idx[static_cast<std::size_t>(i)] = 0;
    }
  }
  if (rg) {
    tape->record("permute", [x, y, out_shape, gather_st, r, n]() mutable {
      if (!x.requires_grad()) return;
      std::vector<int> idx(static_cast<std::size_t>(r), 0);
      for (std::int64_t flat = 0; flat < n; ++flat) {
        std::int64_t src = 0;
        for (int i = 0; i < r; ++i) src += idx[static_cast<std::size_t>(i)] * gather_st[static_cast<std::size_t>(i)];
        x.grad()[src] += y.grad()[flat];
        for (int i = r - 1; i >= 0; --i) {
          if (++idx[static_cast<std::size_t>(i)] < out_shape[static_cast<std::size_t>(i)]) break;
          idx[static_cast<std::size_t>(i)] = 0;
        }
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> sum(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  const bool rg = detail::track(tape, {&x});
  Tensor<T> y({1}, T(0), rg);
  T acc = T(0);
  for (std::int64_t i = 0; i < x.size(); ++i) acc += x.data()[i];
  y.data()[0] = acc;
  if (rg) {
    tape->record("sum", [x, y]() mutable {
      if (!x.requires_grad()) return;
      const T g = y.grad()[0];
      for (std::int64_t i = 0; i < x.size(); ++i) x.grad()[i] += g;
    });
  }
  return y;
}

// Weighted mean NLL: -(sum_i w_i * logp[i, ids[i]]) / sum_i w_i
template <class T>
Tensor<T> masked_nll(const Tensor<T>& log_probs, const std::vector<std::int32_t>& ids,
                     const std::vector<T>& weights, Tape<T>* tape = nullptr) {
  if (log_probs.rank() != 2 || static_cast<std::size_t>(log_probs.dim(0)) != ids.size() ||
      ids.size() != weights.size())
    dim_error("masked_nll rows vs ids/weights");
  const int v = log_probs.dim(1);
  T wsum = T(0);
  for (T w : weights) wsum += w;
  if (wsum <= T(0)) throw std::invalid_argument("contract error: masked_nll needs positive weight");
  const bool rg = detail::track(tape, {&log_probs});
  Tensor<T> y({1}, T(0), rg);
  T acc = T(0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= v) throw std::out_of_range("target id " + std::to_string(ids[i]));
    acc -= weights[i] * log_probs.data()[i * static_cast<std::size_t>(v) + static_cast<std::size_t>(ids[i])];
  }
  y.data()[0] = acc / wsum;
  if (rg) {
    tape->record("masked_nll", [log_probs, y, ids, weights, wsum, v]() mutable {
      if (!log_probs.requires_grad()) return;
      const T g = y.grad()[0] / wsum;
      for (std::size_t i = 0; i < ids.size(); ++i)
        log_probs.grad()[i * static_cast<std::size_t>(v) + static_cast<std::size_t>(ids[i])] -=
            g * weights[i];
    });
  }
  return y;
}

}  // namespace ctcmt

#endif  // CTCMT_AUTODIFF_HPP
