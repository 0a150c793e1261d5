/*
 * Copyright 2026 dmcm-lab authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace dmcm {

// Thrown when an operation produces NaN/Inf or a numeric contract is broken.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

class Tape;

// Dense real-valued tensor, 64-bit precision. Values are immutable and
// shared; copying a Tensor is cheap. A tensor may carry a handle into a
// Tape node, in which case it participates in differentiation.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);
  Tensor(Shape shape, std::shared_ptr<const std::vector<double>> values,
         Tape* tape, int node);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double v);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::int64_t size() const { return data_ ? std::int64_t(data_->size()) : 0; }
  bool is_scalar() const { return size() == 1; }
  int rows() const;
  int cols() const;

  const std::vector<double>& values() const;
  double item() const;                // scalar value
  double at(int r, int c) const;      // rank-2 access
  double operator[](std::int64_t i) const { return (*data_)[size_t(i)]; }
  std::shared_ptr<const std::vector<double>> data() const { return data_; }

  bool has_node() const { return node_ >= 0 && tape_ != nullptr; }
  int node() const { return node_; }
  Tape* tape() const { return tape_; }

  // Same values, no graph participation.
  Tensor detached() const { return Tensor(shape_, data_, nullptr, -1); }

  bool same_values(const Tensor& other) const;  // bitwise comparison

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  MatMul,
  MatMulBT,  // a * b^T without materializing the transpose
  MatMulTA,  // a^T * b without materializing the transpose
  Scale,
  Transpose,
  ConcatCols,
  SliceCols,
  Relu,
  Sin,
  Cos,
  Square,
  SumAll,
  SumRows,
  BroadcastRows,
  BroadcastScalar,
};

struct Node {
  Op op = Op::Leaf;
  int a = -1;        // first input node id
  int b = -1;        // second input node id
  double c = 0.0;    // scale factor
  int p0 = 0;        // aux: slice lo / concat split / broadcast rows
  int p1 = 0;        // aux: slice hi
  Shape shape;       // output shape
  std::shared_ptr<const std::vector<double>> value;  // output values
  // Constant operands of mul/matmul (their values are needed by the
  // backward rule but they live on no tape).
  Tensor const_a, const_b;
};

// Record of operations, topologically ordered (inputs always have smaller
// ids). Replayable: backward over the tape can itself be recorded, which is
// what makes gradients differentiable for nested (meta) differentiation.
// Single-threaded per training run.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers the tensor as a differentiable leaf (idempotent on this tape).
  void watch(Tensor& t);

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  std::size_t num_nodes() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_[size_t(id)]; }
  Tensor tensor_of(int id) const;

  void reset() { nodes_.clear(); }

  int append(Node n);

 private:
  std::vector<Node> nodes_;  // reserved in chunks by append()
  bool recording_ = true;
};

// Temporarily disables recording on a tape (used for first-order mode and
// for evaluation-time adaptation).
class NoRecord {
 public:
  explicit NoRecord(Tape& t) : tape_(t), prev_(t.recording()) {
    tape_.set_recording(false);
  }
  ~NoRecord() { tape_.set_recording(prev_); }

 private:
  Tape& tape_;
  bool prev_;
};

// Gradients keyed by leaf node id; every requested parameter appears
// exactly once with a gradient of identical shape.
class GradMap {
 public:
  void put(int node, Tensor grad) { grads_.emplace(node, std::move(grad)); }
  const Tensor& at(const Tensor& param) const;
  const Tensor& at_node(int node) const;
  bool contains(int node) const { return grads_.count(node) > 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<int, Tensor> grads_;
};

// ---- graph ops -------------------------------------------------------
// Every op validates operand shapes, checks the result for NaN/Inf, and
// records a backward rule whenever an operand participates in a graph.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // element-wise
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_bt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor matmul_ta(const Tensor& a, const Tensor& b);  // a^T * b
Tensor scale(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor transpose(const Tensor& a);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& a, int lo, int hi);
Tensor relu(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sum_all(const Tensor& a);                       // -> scalar
Tensor sum_rows(const Tensor& a);                      // (n,d) -> (1,d)
Tensor broadcast_rows(const Tensor& row, int n);       // (1,d) -> (n,d)
Tensor broadcast_scalar(const Tensor& s, const Shape& shape);
Tensor mean(const Tensor& a);                          // -> scalar

// Reverse-mode gradients of a scalar loss with respect to watched leaves.
// Parameters unreachable from the loss get zero gradients of their shape.
// With retain=true the adjoint computation is itself recorded, so the
// returned gradients are differentiable (needed for meta-gradients).
GradMap backward(const Tensor& loss, std::span<const Tensor> wrt,
                 bool retain = false);

// Second-level differentiation of a gradient produced by backward() with
// retain=true. grad must be scalar and carry a graph handle.
GradMap higher_order_backward(const Tensor& grad,
                              std::span<const Tensor> wrt);

}  // namespace dmcm
