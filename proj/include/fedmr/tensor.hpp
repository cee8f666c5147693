/*
 * Copyright 2026 The FedMR Simulator Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Dense row-major 64-bit tensors and the forward kernels used by the tape.
// Every reduction sums left to right in index order so results are
// bit-reproducible for identical inputs.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fedmr/error.hpp"

namespace fedmr {

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) {
      throw ShapeError("tensor: data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor zeros(std::size_t rows, std::size_t cols) {
    return Tensor({rows, cols});
  }
  static Tensor filled(std::size_t rows, std::size_t cols, double v) {
    Tensor t({rows, cols});
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }
  static Tensor row_vector(std::vector<double> data) {
    const std::size_t n = data.size();
    return Tensor({1, n}, std::move(data));
  }
  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }
  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Matrix view; every kernel op works on rank-2 tensors.
  std::size_t rows() const { return rank() == 2 ? shape_[0] : 0; }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : 0; }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) {
    return {data_.data() + r * shape_[1], shape_[1]};
  }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * shape_[1], shape_[1]};
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  // Bitwise equality of shape and payload.
  friend bool operator==(const Tensor& a, const Tensor& b) {
    if (a.shape_ != b.shape_) return false;
    return std::equal(a.data_.begin(), a.data_.end(), b.data_.begin(),
                      [](double x, double y) {
                        return std::bit_cast<std::uint64_t>(x) ==
                               std::bit_cast<std::uint64_t>(y);
                      });
  }

  std::string shape_str() const { return shape_string(shape_); }

  static std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) os << 'x';
      os << shape[i];
    }
    os << ']';
    return os.str();
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + a.shape_str() + " vs " + b.shape_str());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

namespace kernel {

namespace detail {

inline void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " +
                     t.shape_str());
  }
}

[[noreturn]] inline void mismatch(const char* op, const Tensor& a,
                                  const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() +
                   " and " + b.shape_str());
}

inline void require_same(const char* op, const Tensor& a, const Tensor& b) {
  require_matrix(op, a);
  require_matrix(op, b);
  if (a.shape() != b.shape()) mismatch(op, a, b);
}

}  // namespace detail

// [n x k] * [k x m]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix("matmul", a);
  detail::require_matrix("matmul", b);
  if (a.cols() != b.rows()) detail::mismatch("matmul", a, b);
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out = Tensor::zeros(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.row(i).data();
    const double* ar = a.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      const double* br = b.row(p).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

// a^T * b: [k x n]^T * [k x m] -> [n x m]
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  detail::require_matrix("matmul_tn", a);
  detail::require_matrix("matmul_tn", b);
  if (a.rows() != b.rows()) detail::mismatch("matmul_tn", a, b);
  const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
  Tensor out = Tensor::zeros(n, m);
  for (std::size_t p = 0; p < k; ++p) {
    const double* ar = a.row(p).data();
    const double* br = b.row(p).data();
    for (std::size_t i = 0; i < n; ++i) {
      const double av = ar[i];
      double* o = out.row(i).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

// a * b^T: [n x k] * [m x k]^T -> [n x m]
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_matrix("matmul_nt", a);
  detail::require_matrix("matmul_nt", b);
  if (a.cols() != b.cols()) detail::mismatch("matmul_nt", a, b);
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  Tensor out = Tensor::zeros(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    const double* ar = a.row(i).data();
    for (std::size_t j = 0; j < m; ++j) {
      const double* br = b.row(j).data();
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      out.at(i, j) = s;
    }
  }
  return out;
}

// Adds a [1 x m] bias to every row of [n x m].
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  detail::require_matrix("add_bias", x);
  detail::require_matrix("add_bias", bias);
  if (bias.rows() != 1 || bias.cols() != x.cols())
    detail::mismatch("add_bias", x, bias);
  Tensor out = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same("add", a, b);
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same("mul", a, b);
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out = a;
  for (auto& v : out.storage()) v *= s;
  return out;
}

inline Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.storage()) v = v > 0.0 ? v : 0.0;
  return out;
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.storage()) v = sigmoid(v);
  return out;
}

inline Tensor softmax_rows(const Tensor& x) {
  detail::require_matrix("softmax_rows", x);
  Tensor out = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = out.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (auto& v : r) {
      v = std::exp(v - mx);
      s += v;
    }
    for (auto& v : r) v /= s;
  }
  return out;
}

inline Tensor concat_cols(std::span<const Tensor* const> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = parts.front()->rows();
  std::size_t width = 0;
  for (const Tensor* p : parts) {
    detail::require_matrix("concat_cols", *p);
    if (p->rows() != n) detail::mismatch("concat_cols", *parts.front(), *p);
    width += p->cols();
  }
  Tensor out = Tensor::zeros(n, width);
  for (std::size_t i = 0; i < n; ++i) {
    auto o = out.row(i);
    std::size_t off = 0;
    for (const Tensor* p : parts) {
      auto r = p->row(i);
      std::copy(r.begin(), r.end(), o.begin() + static_cast<long>(off));
      off += r.size();
    }
  }
  return out;
}

inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  detail::require_matrix("slice_cols", x);
  if (begin > end || end > x.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") out of " + x.shape_str());
  }
  Tensor out = Tensor::zeros(x.rows(), end - begin);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    std::copy(r.begin() + static_cast<long>(begin),
              r.begin() + static_cast<long>(end), out.row(i).begin());
  }
  return out;
}

// Column sums, [n x m] -> [1 x m].
inline Tensor sum_rows(const Tensor& x) {
  detail::require_matrix("sum_rows", x);
  Tensor out = Tensor::zeros(1, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j];
  }
  return out;
}

inline Tensor mean_rows(const Tensor& x) {
  detail::require_matrix("mean_rows", x);
  if (x.rows() == 0) throw ShapeError("mean_rows: zero rows");
  Tensor out = sum_rows(x);
  const double n = static_cast<double>(x.rows());
  for (auto& v : out.storage()) v /= n;
  return out;
}

inline Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
  detail::require_matrix("gather_rows", x);
  Tensor out = Tensor::zeros(idx.size(), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= x.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(idx[i]) +
                       " out of range for " + x.shape_str());
    }
    auto r = x.row(idx[i]);
    std::copy(r.begin(), r.end(), out.row(i).begin());
  }
  return out;
}

inline Tensor repeat_rows(const Tensor& x, std::size_t n) {
  detail::require_matrix("repeat_rows", x);
  if (x.rows() != 1) throw ShapeError("repeat_rows: expected [1 x m], got " +
                                      x.shape_str());
  Tensor out = Tensor::zeros(n, x.cols());
  for (std::size_t i = 0; i < n; ++i)
    std::copy(x.data().begin(), x.data().end(), out.row(i).begin());
  return out;
}

// y[i, :] = x[i, :] * g[i or 0, col]. g has either x.rows() rows or one row.
inline Tensor scale_by_column(const Tensor& x, const Tensor& g,
                              std::size_t col) {
  detail::require_matrix("scale_by_column", x);
  detail::require_matrix("scale_by_column", g);
  if (col >= g.cols() || (g.rows() != 1 && g.rows() != x.rows()))
    detail::mismatch("scale_by_column", x, g);
  Tensor out = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double s = g.at(g.rows() == 1 ? 0 : i, col);
    for (auto& v : out.row(i)) v *= s;
  }
  return out;
}

inline double sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return s;
}

// Numerically stable log(1 + exp(z)) - y * z.
inline double bce_with_logits(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

// Mean binary cross-entropy with logits over all entries.
inline double bce_with_logits_mean(const Tensor& logits,
                                   std::span<const double> labels) {
  if (logits.size() != labels.size()) {
    throw ShapeError("bce_with_logits: " + std::to_string(logits.size()) +
                     " logits vs " + std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw ShapeError("bce_with_logits: empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    s += bce_with_logits(logits[i], labels[i]);
  return s / static_cast<double>(labels.size());
}

}  // namespace kernel
}  // namespace fedmr
