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

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedmr/error.hpp"
#include "fedmr/tensor.hpp"

namespace fedmr {

struct Param {
  Tensor value;
  Tensor grad;

  Param() = default;
  explicit Param(Tensor v) : value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(0.0); }
};

// Named, ordered parameter collection. Order is insertion order and defines
// iteration, serialization and aggregation order.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Param param;
  };

  Param& add(std::string name, Tensor init) {
    if (contains(name)) throw RuntimeError("duplicate parameter: " + name);
    entries_.push_back({std::move(name), Param(std::move(init))});
    return entries_.back().param;
  }

  bool contains(std::string_view name) const { return find(name) != nullptr; }

  Param& at(std::string_view name) {
    if (auto* p = find(name)) return *p;
    throw RuntimeError("unknown parameter: " + std::string(name));
  }
  const Param& at(std::string_view name) const {
    return const_cast<ParamStore*>(this)->at(name);
  }

  void zero_grads() {
    for (auto& e : entries_) e.param.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.param.value.size();
    return n;
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }

 private:
  Param* find(std::string_view name) {
    for (auto& e : entries_)
      if (e.name == name) return &e.param;
    return nullptr;
  }
  const Param* find(std::string_view name) const {
    return const_cast<ParamStore*>(this)->find(name);
  }

  std::vector<Entry> entries_;
};

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

enum class OpKind {
  kConstant,
  kParam,
  kMatMul,
  kAddBias,
  kAdd,
  kMul,
  kScale,
  kRelu,
  kSigmoid,
  kSoftmaxRows,
  kConcatCols,
  kSliceCols,
  kMeanRows,
  kGatherRows,
  kRepeatRows,
  kScaleByColumn,
  kSum,
  kBceWithLogits,
};

constexpr std::string_view op_name(OpKind k) {
  switch (k) {
    case OpKind::kConstant: return "constant";
    case OpKind::kParam: return "param";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAddBias: return "add-bias";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftmaxRows: return "softmax-row";
    case OpKind::kConcatCols: return "concat-cols";
    case OpKind::kSliceCols: return "slice-cols";
    case OpKind::kMeanRows: return "mean-rows";
    case OpKind::kGatherRows: return "gather-rows";
    case OpKind::kRepeatRows: return "repeat-rows";
    case OpKind::kScaleByColumn: return "scale-by-column";
    case OpKind::kSum: return "sum";
    case OpKind::kBceWithLogits: return "bce-with-logits";
  }
  return "?";
}

// Records primitive ops in execution order; backward() walks them in exact
// reverse order once. A Tape belongs to one worker at a time.
class Tape {
 public:
  Var constant(Tensor t) { return push(OpKind::kConstant, std::move(t), {}); }

  // One leaf per Param per tape, so repeated backward passes accumulate
  // each param's gradient with a single addition.
  Var param(Param& p) {
    for (const auto& [ptr, id] : param_leaves_)
      if (ptr == &p) return Var{id};
    Var v = push(OpKind::kParam, p.value, {});
    nodes_[v.id].param = &p;
    param_leaves_.emplace_back(&p, v.id);
    return v;
  }

  Var matmul(Var a, Var b) {
    return push(OpKind::kMatMul, guard(OpKind::kMatMul, [&] {
                  return kernel::matmul(value(a), value(b));
                }),
                {a, b});
  }
  Var add_bias(Var x, Var b) {
    return push(OpKind::kAddBias, guard(OpKind::kAddBias, [&] {
                  return kernel::add_bias(value(x), value(b));
                }),
                {x, b});
  }
  Var add(Var a, Var b) {
    return push(OpKind::kAdd,
                guard(OpKind::kAdd,
                      [&] { return kernel::add(value(a), value(b)); }),
                {a, b});
  }
  Var mul(Var a, Var b) {
    return push(OpKind::kMul,
                guard(OpKind::kMul,
                      [&] { return kernel::mul(value(a), value(b)); }),
                {a, b});
  }
  Var scale(Var a, double s) {
    Var v = push(OpKind::kScale, kernel::scale(value(a), s), {a});
    nodes_[v.id].scalar = s;
    return v;
  }
  Var relu(Var x) { return push(OpKind::kRelu, kernel::relu(value(x)), {x}); }
  Var sigmoid(Var x) {
    return push(OpKind::kSigmoid, kernel::sigmoid(value(x)), {x});
  }
  Var softmax_rows(Var x) {
    return push(OpKind::kSoftmaxRows,
                guard(OpKind::kSoftmaxRows,
                      [&] { return kernel::softmax_rows(value(x)); }),
                {x});
  }
  Var concat_cols(std::initializer_list<Var> parts) {
    return concat_cols(std::vector<Var>(parts));
  }
  Var concat_cols(const std::vector<Var>& parts) {
    std::vector<const Tensor*> ptrs;
    ptrs.reserve(parts.size());
    for (Var p : parts) ptrs.push_back(&value(p));
    return push(OpKind::kConcatCols, guard(OpKind::kConcatCols, [&] {
                  return kernel::concat_cols(ptrs);
                }),
                parts);
  }
  Var slice_cols(Var x, std::size_t begin, std::size_t end) {
    Var v = push(OpKind::kSliceCols, guard(OpKind::kSliceCols, [&] {
                   return kernel::slice_cols(value(x), begin, end);
                 }),
                 {x});
    nodes_[v.id].index = {begin, end};
    return v;
  }
  Var mean_rows(Var x) {
    return push(OpKind::kMeanRows,
                guard(OpKind::kMeanRows,
                      [&] { return kernel::mean_rows(value(x)); }),
                {x});
  }
  Var gather_rows(Var x, std::vector<std::size_t> idx) {
    Var v = push(OpKind::kGatherRows, guard(OpKind::kGatherRows, [&] {
                   return kernel::gather_rows(value(x), idx);
                 }),
                 {x});
    nodes_[v.id].index = std::move(idx);
    return v;
  }
  Var repeat_rows(Var x, std::size_t n) {
    return push(OpKind::kRepeatRows, guard(OpKind::kRepeatRows, [&] {
                  return kernel::repeat_rows(value(x), n);
                }),
                {x});
  }
  Var scale_by_column(Var x, Var g, std::size_t col) {
    Var v = push(OpKind::kScaleByColumn, guard(OpKind::kScaleByColumn, [&] {
                   return kernel::scale_by_column(value(x), value(g), col);
                 }),
                 {x, g});
    nodes_[v.id].index = {col};
    return v;
  }
  Var sum(Var x) {
    return push(OpKind::kSum, Tensor::scalar(kernel::sum_all(value(x))), {x});
  }
  // Mean BCE-with-logits against fixed labels; returns a scalar.
  Var bce_with_logits(Var logits, std::vector<double> labels) {
    const double loss = guard(OpKind::kBceWithLogits, [&] {
      return kernel::bce_with_logits_mean(value(logits), labels);
    });
    Var v = push(OpKind::kBceWithLogits, Tensor::scalar(loss), {logits});
    nodes_[v.id].labels = std::move(labels);
    return v;
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  // Gradient of the last backward() target w.r.t. v (zeros if unreached).
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
  }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  std::size_t size() const { return nodes_.size(); }

  // Accumulates d(loss)/d(param) into every Param reached from loss.
  void backward(Var loss);

  // Reverse-order visit log of the most recent backward(), for tests.
  const std::vector<std::size_t>& last_backward_order() const {
    return visit_order_;
  }

  struct Node {
    OpKind kind;
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    std::vector<std::size_t> index;
    std::vector<double> labels;
    double scalar = 0.0;
    Param* param = nullptr;
  };

  // Read-only access to the recorded graph, for independent replays.
  const Node& node(std::size_t id) const { return nodes_.at(id); }

 private:
  template <typename F>
  static auto guard(OpKind k, F&& f) -> decltype(f()) {
    try {
      return f();
    } catch (const ShapeError& e) {
      throw ShapeError("op " + std::string(op_name(k)) + ": " + e.what());
    }
  }

  Var push(OpKind k, Tensor value, const std::vector<Var>& inputs) {
    Node n;
    n.kind = k;
    n.value = std::move(value);
    n.inputs.reserve(inputs.size());
    for (Var in : inputs) {
      if (in.id >= nodes_.size())
        throw RuntimeError("op " + std::string(op_name(k)) +
                           ": input is not on this tape");
      n.inputs.push_back(in.id);
    }
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Tensor& grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  void accumulate(std::size_t id, const Tensor& g) {
    Tensor& slot = grad_slot(id);
    for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
  }

  void backward_node(std::size_t id);

  std::vector<Node> nodes_;
  std::vector<std::pair<Param*, std::size_t>> param_leaves_;
  std::vector<std::size_t> visit_order_;
};

inline void Tape::backward(Var loss) {
  if (loss.id >= nodes_.size()) throw RuntimeError("backward: unknown var");
  if (value(loss).size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " +
                     value(loss).shape_str());
  }
  for (auto& n : nodes_) n.grad = Tensor();
  visit_order_.clear();
  grad_slot(loss.id)[0] = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    if (nodes_[id].grad.empty()) continue;
    visit_order_.push_back(id);
    backward_node(id);
  }
}

inline void Tape::backward_node(std::size_t id) {
  Node& n = nodes_[id];
  const Tensor& g = n.grad;
  const auto& in = n.inputs;
  switch (n.kind) {
    case OpKind::kConstant:
      break;
    case OpKind::kParam: {
      Tensor& pg = n.param->grad;
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
      break;
    }
    case OpKind::kMatMul: {
      const Tensor& a = nodes_[in[0]].value;
      const Tensor& b = nodes_[in[1]].value;
      accumulate(in[0], kernel::matmul_nt(g, b));
      accumulate(in[1], kernel::matmul_tn(a, g));
      break;
    }
    case OpKind::kAddBias:
      accumulate(in[0], g);
      accumulate(in[1], kernel::sum_rows(g));
      break;
    case OpKind::kAdd:
      accumulate(in[0], g);
      accumulate(in[1], g);
      break;
    case OpKind::kMul: {
      const Tensor& a = nodes_[in[0]].value;
      const Tensor& b = nodes_[in[1]].value;
      accumulate(in[0], kernel::mul(g, b));
      accumulate(in[1], kernel::mul(g, a));
      break;
    }
    case OpKind::kScale:
      accumulate(in[0], kernel::scale(g, n.scalar));
      break;
    case OpKind::kRelu: {
      Tensor d = g;
      const Tensor& x = nodes_[in[0]].value;
      for (std::size_t i = 0; i < d.size(); ++i)
        if (!(x[i] > 0.0)) d[i] = 0.0;
      accumulate(in[0], d);
      break;
    }
    case OpKind::kSigmoid: {
      Tensor d = g;
      for (std::size_t i = 0; i < d.size(); ++i)
        d[i] *= n.value[i] * (1.0 - n.value[i]);
      accumulate(in[0], d);
      break;
    }
    case OpKind::kSoftmaxRows: {
      const Tensor& y = n.value;
      Tensor d = Tensor::zeros(y.rows(), y.cols());
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < y.cols(); ++c)
          dot += g.at(r, c) * y.at(r, c);
        for (std::size_t c = 0; c < y.cols(); ++c)
          d.at(r, c) = y.at(r, c) * (g.at(r, c) - dot);
      }
      accumulate(in[0], d);
      break;
    }
    case OpKind::kConcatCols: {
      std::size_t off = 0;
      for (std::size_t k = 0; k < in.size(); ++k) {
        const std::size_t w = nodes_[in[k]].value.cols();
        accumulate(in[k], kernel::slice_cols(g, off, off + w));
        off += w;
      }
      break;
    }
    case OpKind::kSliceCols: {
      const Tensor& x = nodes_[in[0]].value;
      Tensor d = Tensor::zeros(x.rows(), x.cols());
      const std::size_t begin = n.index[0];
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c)
          d.at(r, begin + c) = g.at(r, c);
      accumulate(in[0], d);
      break;
    }
    case OpKind::kMeanRows: {
      const Tensor& x = nodes_[in[0]].value;
      const double count = static_cast<double>(x.rows());
      Tensor d = Tensor::zeros(x.rows(), x.cols());
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) d.at(r, c) = g[c] / count;
      accumulate(in[0], d);
      break;
    }
    case OpKind::kGatherRows: {
      Tensor& slot = grad_slot(in[0]);
      for (std::size_t i = 0; i < n.index.size(); ++i) {
        auto dst = slot.row(n.index[i]);
        auto src = g.row(i);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
      }
      break;
    }
    case OpKind::kRepeatRows:
      accumulate(in[0], kernel::sum_rows(g));
      break;
    case OpKind::kScaleByColumn: {
      const Tensor& x = nodes_[in[0]].value;
      const Tensor& gate = nodes_[in[1]].value;
      const std::size_t col = n.index[0];
      accumulate(in[0], kernel::scale_by_column(g, gate, col));
      Tensor dg = Tensor::zeros(gate.rows(), gate.cols());
      for (std::size_t r = 0; r < x.rows(); ++r) {
        double s = 0.0;
        auto gr = g.row(r);
        auto xr = x.row(r);
        for (std::size_t c = 0; c < xr.size(); ++c) s += gr[c] * xr[c];
        dg.at(gate.rows() == 1 ? 0 : r, col) += s;
      }
      accumulate(in[1], dg);
      break;
    }
    case OpKind::kSum: {
      const Tensor& x = nodes_[in[0]].value;
      accumulate(in[0], Tensor::filled(x.rows(), x.cols(), g[0]));
      break;
    }
    case OpKind::kBceWithLogits: {
      const Tensor& z = nodes_[in[0]].value;
      Tensor d(z.shape());
      const double count = static_cast<double>(n.labels.size());
      for (std::size_t i = 0; i < z.size(); ++i)
        d[i] = g[0] * (kernel::sigmoid(z[i]) - n.labels[i]) / count;
      accumulate(in[0], d);
      break;
    }
  }
}

}  // namespace fedmr
