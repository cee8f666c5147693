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

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include <quadmath.h>

#include "fedmr/error.hpp"
#include "fedmr/tape.hpp"

namespace fedmr {

// Builds a scalar loss on a fresh tape from the current parameter values.
using LossClosure = std::function<Var(Tape&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares tape gradients against central differences for every coordinate
// of every param. Relative error is |a - n| / (|n| + 1e-12).
inline GradCheckResult finite_diff_check_detailed(
    const LossClosure& closure, std::span<Param* const> params,
    double eps = 1e-6) {
  auto eval = [&] {
    Tape tape;
    const double v = tape.value(closure(tape))[0];
    if (!std::isfinite(v))
      throw RuntimeError("finite_diff_check: closure produced non-finite loss");
    return v;
  };

  for (Param* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss = closure(tape);
    if (!std::isfinite(tape.value(loss)[0]))
      throw RuntimeError("finite_diff_check: closure produced non-finite loss");
    tape.backward(loss);
  }

  GradCheckResult out;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = *params[pi];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + eps;
      const double up = eval();
      p.value[i] = orig - eps;
      const double down = eval();
      p.value[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p.grad[i];
      const double rel =
          std::abs(analytic - numeric) / (std::abs(numeric) + 1e-12);
      if (rel > out.max_rel_error || (pi == 0 && i == 0)) {
        out = {rel, pi, i, analytic, numeric};
      }
    }
  }
  return out;
}

inline double finite_diff_check(const LossClosure& closure,
                                std::span<Param* const> params,
                                double eps = 1e-6) {
  return finite_diff_check_detailed(closure, params, eps).max_rel_error;
}

namespace detail {

// Forward replay of a recorded tape in quad precision. Each primitive is
// re-implemented here independently of the 64-bit kernel.
class ExtendedReplay {
 public:
  using Ext = __float128;
  struct Mat {
    std::size_t rows = 0, cols = 0;
    std::vector<Ext> v;
    Ext& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    Ext at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
  };

  ExtendedReplay(const Tape& tape, Var loss) : tape_(tape), last_(loss.id) {
    base_.resize(last_ + 1);
    for (std::size_t id = 0; id <= last_; ++id) base_[id] = compute(id, base_);
    work_ = base_;
  }

  Ext loss() const { return base_[last_].v[0]; }

  // Loss with one coordinate of the leaf bound to `param` shifted by delta.
  // Returns the unperturbed loss when the param is not on the tape.
  Ext perturbed_loss(const Param* param, std::size_t index, Ext delta) {
    std::size_t leaf = kNone;
    for (std::size_t id = 0; id <= last_; ++id)
      if (tape_.node(id).kind == OpKind::kParam && tape_.node(id).param == param)
        leaf = id;
    if (leaf == kNone) return loss();
    std::vector<bool> dirty(last_ + 1, false);
    dirty[leaf] = true;
    for (std::size_t id = leaf + 1; id <= last_; ++id)
      for (auto in : tape_.node(id).inputs)
        if (dirty[in]) dirty[id] = true;
    work_[leaf].v[index] += delta;
    for (std::size_t id = leaf + 1; id <= last_; ++id)
      if (dirty[id]) work_[id] = compute(id, work_);
    const Ext out = work_[last_].v[0];
    for (std::size_t id = leaf; id <= last_; ++id)
      if (dirty[id]) work_[id] = base_[id];
    return out;
  }

 private:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  static Mat zeros(std::size_t r, std::size_t c) {
    return {r, c, std::vector<Ext>(r * c, Ext(0.0))};
  }

  Mat compute(std::size_t id, const std::vector<Mat>& vals) const {
    const Tape::Node& n = tape_.node(id);
    auto in = [&](std::size_t k) -> const Mat& { return vals[n.inputs[k]]; };
    switch (n.kind) {
      case OpKind::kConstant:
      case OpKind::kParam: {
        Mat m = zeros(n.value.rows(), n.value.cols());
        for (std::size_t i = 0; i < m.v.size(); ++i) m.v[i] = n.value[i];
        return m;
      }
      case OpKind::kMatMul: {
        const Mat &a = in(0), &b = in(1);
        Mat m = zeros(a.rows, b.cols);
        for (std::size_t i = 0; i < a.rows; ++i)
          for (std::size_t j = 0; j < b.cols; ++j) {
            Ext s = Ext(0.0);
            for (std::size_t k = 0; k < a.cols; ++k) s += a.at(i, k) * b.at(k, j);
            m.at(i, j) = s;
          }
        return m;
      }
      case OpKind::kAddBias: {
        Mat m = in(0);
        for (std::size_t i = 0; i < m.rows; ++i)
          for (std::size_t j = 0; j < m.cols; ++j) m.at(i, j) += in(1).v[j];
        return m;
      }
      case OpKind::kAdd:
      case OpKind::kMul: {
        Mat m = in(0);
        for (std::size_t i = 0; i < m.v.size(); ++i)
          m.v[i] = n.kind == OpKind::kAdd ? m.v[i] + in(1).v[i] : m.v[i] * in(1).v[i];
        return m;
      }
      case OpKind::kScale: {
        Mat m = in(0);
        for (auto& x : m.v) x *= static_cast<Ext>(n.scalar);
        return m;
      }
      case OpKind::kRelu: {
        Mat m = in(0);
        for (auto& x : m.v) x = x > Ext(0.0) ? x : Ext(0.0);
        return m;
      }
      case OpKind::kSigmoid: {
        Mat m = in(0);
        for (auto& x : m.v) {
          if (x >= Ext(0.0)) {
            x = Ext(1.0) / (Ext(1.0) + expq(-x));
          } else {
            const Ext e = expq(x);
            x = e / (Ext(1.0) + e);
          }
        }
        return m;
      }
      case OpKind::kSoftmaxRows: {
        Mat m = in(0);
        for (std::size_t i = 0; i < m.rows; ++i) {
          Ext hi = m.at(i, 0);
          for (std::size_t j = 1; j < m.cols; ++j) hi = fmaxq(hi, m.at(i, j));
          Ext total = Ext(0.0);
          for (std::size_t j = 0; j < m.cols; ++j) {
            m.at(i, j) = expq(m.at(i, j) - hi);
            total += m.at(i, j);
          }
          for (std::size_t j = 0; j < m.cols; ++j) m.at(i, j) /= total;
        }
        return m;
      }
      case OpKind::kConcatCols: {
        std::size_t cols = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) cols += in(k).cols;
        Mat m = zeros(in(0).rows, cols);
        for (std::size_t i = 0; i < m.rows; ++i) {
          std::size_t c = 0;
          for (std::size_t k = 0; k < n.inputs.size(); ++k)
            for (std::size_t j = 0; j < in(k).cols; ++j) m.at(i, c++) = in(k).at(i, j);
        }
        return m;
      }
      case OpKind::kSliceCols: {
        const std::size_t b = n.index[0], e = n.index[1];
        Mat m = zeros(in(0).rows, e - b);
        for (std::size_t i = 0; i < m.rows; ++i)
          for (std::size_t j = b; j < e; ++j) m.at(i, j - b) = in(0).at(i, j);
        return m;
      }
      case OpKind::kMeanRows: {
        Mat m = zeros(1, in(0).cols);
        for (std::size_t i = 0; i < in(0).rows; ++i)
          for (std::size_t j = 0; j < m.cols; ++j) m.v[j] += in(0).at(i, j);
        for (auto& x : m.v) x /= static_cast<Ext>(in(0).rows);
        return m;
      }
      case OpKind::kGatherRows: {
        Mat m = zeros(n.index.size(), in(0).cols);
        for (std::size_t i = 0; i < m.rows; ++i)
          for (std::size_t j = 0; j < m.cols; ++j) m.at(i, j) = in(0).at(n.index[i], j);
        return m;
      }
      case OpKind::kRepeatRows: {
        Mat m = zeros(n.value.rows(), in(0).cols);
        for (std::size_t i = 0; i < m.rows; ++i)
          for (std::size_t j = 0; j < m.cols; ++j) m.at(i, j) = in(0).v[j];
        return m;
      }
      case OpKind::kScaleByColumn: {
        Mat m = in(0);
        const Mat& g = in(1);
        const std::size_t col = n.index[0];
        for (std::size_t i = 0; i < m.rows; ++i)
          for (std::size_t j = 0; j < m.cols; ++j)
            m.at(i, j) *= g.at(g.rows == 1 ? 0 : i, col);
        return m;
      }
      case OpKind::kSum: {
        Mat m = zeros(1, 1);
        for (Ext x : in(0).v) m.v[0] += x;
        return m;
      }
      case OpKind::kBceWithLogits: {
        Mat m = zeros(1, 1);
        const Mat& z = in(0);
        for (std::size_t i = 0; i < z.v.size(); ++i) {
          const Ext x = z.v[i], y = n.labels[i];
          m.v[0] += fmaxq(x, Ext(0.0)) - x * y + log1pq(expq(-fabsq(x)));
        }
        m.v[0] /= static_cast<Ext>(z.v.size());
        return m;
      }
    }
    throw RuntimeError("extended replay: unsupported op");
  }

  const Tape& tape_;
  std::size_t last_;
  std::vector<Mat> base_;
  std::vector<Mat> work_;
};

}  // namespace detail

// As finite_diff_check_detailed, but the central differences are evaluated by
// replaying the recorded graph in quad precision (__float128, 113-bit
// significand). The analytic side is still the 64-bit tape. The rounding
// floor of the numeric derivative drops from about u*|loss|/eps in 64-bit
// arithmetic to far below the truncation error, so coordinates with small
// but nonzero gradients are resolved. Requires libquadmath.
inline GradCheckResult finite_diff_check_extended(
    const LossClosure& closure, std::span<Param* const> params,
    double eps = 1e-6) {
  for (Param* p : params) p->zero_grad();
  Tape tape;
  Var loss = closure(tape);
  if (!std::isfinite(tape.value(loss)[0]))
    throw RuntimeError("finite_diff_check: closure produced non-finite loss");
  tape.backward(loss);
  detail::ExtendedReplay replay(tape, loss);
  using Ext = detail::ExtendedReplay::Ext;
  const Ext h = static_cast<Ext>(eps);

  GradCheckResult out;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = *params[pi];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const Ext up = replay.perturbed_loss(&p, i, h);
      const Ext down = replay.perturbed_loss(&p, i, -h);
      if (!std::isfinite(static_cast<double>(up)) ||
          !std::isfinite(static_cast<double>(down)))
        throw RuntimeError("finite_diff_check: closure produced non-finite loss");
      const double numeric = static_cast<double>((up - down) / (Ext(2.0) * h));
      const double analytic = p.grad[i];
      const double rel =
          std::abs(analytic - numeric) / (std::abs(numeric) + 1e-12);
      if (rel > out.max_rel_error || (pi == 0 && i == 0)) {
        out = {rel, pi, i, analytic, numeric};
      }
    }
  }
  return out;
}

}  // namespace fedmr
