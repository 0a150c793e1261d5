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
#include "dmcm/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <unordered_map>
#include <sstream>

namespace dmcm {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void fail_nonfinite(const char* op) {
  throw NumericalError(std::string("non-finite result in ") + op);
}

// Fast path: NaN/Inf propagate through addition, so a finite sum proves all
// elements finite. Overflowing-but-finite data trips the slow per-element
// confirmation instead of a false alarm.
void ensure_finite(const std::vector<double>& v, const char* op) {
  double acc = 0.0;
  for (const double x : v) acc += x;
  if (std::isfinite(acc)) return;
  for (const double x : v) {
    if (!std::isfinite(x)) fail_nonfinite(op);
  }
}

template <typename MakeMsg>
inline void require(bool cond, MakeMsg&& make_msg) {
  if (!cond) throw std::invalid_argument(make_msg());
}

// Thread-local freelist for the op result buffers. Training allocates and
// frees millions of identically-sized vectors per run; recycling them keeps
// the allocator out of the hot path. Buffers may be freed on a different
// thread than they were drawn from; each thread caches into its own pool.
class BufferPool {
 public:
  std::vector<double>* acquire(std::size_t n) {
    auto& bucket = buckets_[n];
    if (!bucket.empty()) {
      std::vector<double>* v = bucket.back();
      bucket.pop_back();
      return v;
    }
    return new std::vector<double>(n);
  }
  void release(std::vector<double>* v) {
    auto& bucket = buckets_[v->size()];
    if (bucket.size() < 512) {
      bucket.push_back(v);
    } else {
      delete v;
    }
  }
  ~BufferPool() {
    for (auto& [size, bucket] : buckets_) {
      for (std::vector<double>* v : bucket) delete v;
    }
  }

 private:
  std::unordered_map<std::size_t, std::vector<std::vector<double>*>> buckets_;
};

thread_local BufferPool t_pool;

struct PoolDeleter {
  void operator()(const std::vector<double>* v) const {
    t_pool.release(const_cast<std::vector<double>*>(v));
  }
};

using PoolHandle = std::unique_ptr<std::vector<double>, PoolDeleter>;

PoolHandle acquire_buffer(std::size_t n) {
  return PoolHandle(t_pool.acquire(n), PoolDeleter{});
}

Tape* common_tape(const Tensor& a, const Tensor& b) {
  Tape* ta = a.has_node() ? a.tape() : nullptr;
  Tape* tb = b.has_node() ? b.tape() : nullptr;
  if (ta && tb && ta != tb) {
    throw std::invalid_argument("operands belong to different tapes");
  }
  return ta ? ta : tb;
}

// Finalizes an op result: finite check, then optional recording.
Tensor finish(const char* name, Op op, Shape shape, PoolHandle out,
              const Tensor& a, const Tensor* b, double c = 0.0, int p0 = 0,
              int p1 = 0) {
  ensure_finite(*out, name);
  Tape* tape = b ? common_tape(a, *b) : (a.has_node() ? a.tape() : nullptr);
  std::shared_ptr<const std::vector<double>> data(std::move(out));
  if (tape == nullptr || !tape->recording()) {
    return Tensor(std::move(shape), data, nullptr, -1);
  }
  Node n;
  n.op = op;
  n.a = a.has_node() ? a.node() : -1;
  n.b = (b && b->has_node()) ? b->node() : -1;
  n.c = c;
  n.p0 = p0;
  n.p1 = p1;
  n.shape = shape;
  n.value = data;
  if (op == Op::Mul || op == Op::MatMul || op == Op::MatMulBT ||
      op == Op::MatMulTA) {
    if (n.a < 0) n.const_a = a.detached();
    if (b && n.b < 0) n.const_b = b->detached();
  }
  const int id = tape->append(std::move(n));
  return Tensor(std::move(shape), data, tape, id);
}

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  require(a.shape() == b.shape(), [&] {
    return std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
           " vs " + shape_str(b.shape());
  });
}

inline void require_rank2(const Tensor& a, const char* op) {
  require(a.shape().size() == 2, [&] {
    return std::string(op) + ": expected rank-2 tensor, got shape " +
           shape_str(a.shape());
  });
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (const int e : s) n *= e;
  return n;
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)),
      data_(std::make_shared<const std::vector<double>>(std::move(values))) {
  if (shape_numel(shape_) != std::int64_t(data_->size())) {
    throw std::invalid_argument("Tensor: values length " +
                                std::to_string(data_->size()) +
                                " does not match shape " + shape_str(shape_));
  }
  ensure_finite(*data_, "Tensor construction");
}

Tensor::Tensor(Shape shape, std::shared_ptr<const std::vector<double>> values,
               Tape* tape, int node)
    : shape_(std::move(shape)), data_(std::move(values)), tape_(tape),
      node_(node) {}

Tensor Tensor::zeros(const Shape& shape) {
  return Tensor(shape, std::vector<double>(size_t(shape_numel(shape)), 0.0));
}

Tensor Tensor::full(const Shape& shape, double v) {
  return Tensor(shape, std::vector<double>(size_t(shape_numel(shape)), v));
}

int Tensor::rows() const {
  if (shape_.size() == 2) return shape_[0];
  if (shape_.size() == 1) return 1;
  throw std::invalid_argument("rows(): tensor is not rank 1 or 2");
}

int Tensor::cols() const {
  if (shape_.size() == 2) return shape_[1];
  if (shape_.size() == 1) return shape_[0];
  throw std::invalid_argument("cols(): tensor is not rank 1 or 2");
}

const std::vector<double>& Tensor::values() const {
  if (!data_) throw std::invalid_argument("values(): undefined tensor");
  return *data_;
}

double Tensor::item() const {
  if (size() != 1) {
    throw std::invalid_argument("item(): tensor of shape " +
                                shape_str(shape_) + " is not scalar");
  }
  return (*data_)[0];
}

double Tensor::at(int r, int c) const {
  return (*data_)[size_t(r) * size_t(cols()) + size_t(c)];
}

bool Tensor::same_values(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  return std::memcmp(data_->data(), other.data_->data(),
                     data_->size() * sizeof(double)) == 0;
}

void Tape::watch(Tensor& t) {
  if (!t.defined()) throw std::invalid_argument("watch(): undefined tensor");
  if (t.has_node()) {
    if (t.tape() != this) {
      throw std::invalid_argument("watch(): tensor belongs to another tape");
    }
    return;
  }
  Node n;
  n.op = Op::Leaf;
  n.shape = t.shape();
  n.value = t.data();
  t.tape_ = this;
  t.node_ = append(std::move(n));
}

Tensor Tape::tensor_of(int id) const {
  const Node& n = nodes_[size_t(id)];
  return Tensor(n.shape, n.value, const_cast<Tape*>(this), id);
}

int Tape::append(Node n) {
  if (nodes_.size() == nodes_.capacity()) {
    nodes_.reserve(nodes_.empty() ? 4096 : nodes_.capacity() * 2);
  }
  nodes_.push_back(std::move(n));
  return int(nodes_.size()) - 1;
}

const Tensor& GradMap::at(const Tensor& param) const {
  if (!param.has_node()) {
    throw std::invalid_argument("GradMap::at: parameter is not watched");
  }
  return at_node(param.node());
}

const Tensor& GradMap::at_node(int node) const {
  auto it = grads_.find(node);
  if (it == grads_.end()) {
    throw std::invalid_argument("GradMap::at: no gradient for node " +
                                std::to_string(node));
  }
  return it->second;
}

// ---- op kernels ------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto& av = a.values();
  const auto& bv = b.values();
  PoolHandle out = acquire_buffer(av.size());
  double* o = out->data();
  for (std::size_t i = 0; i < av.size(); ++i) o[i] = av[i] + bv[i];
  return finish("add", Op::Add, a.shape(), std::move(out), a, &b);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto& av = a.values();
  const auto& bv = b.values();
  PoolHandle out = acquire_buffer(av.size());
  double* o = out->data();
  for (std::size_t i = 0; i < av.size(); ++i) o[i] = av[i] - bv[i];
  return finish("sub", Op::Sub, a.shape(), std::move(out), a, &b);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto& av = a.values();
  const auto& bv = b.values();
  PoolHandle out = acquire_buffer(av.size());
  double* o = out->data();
  for (std::size_t i = 0; i < av.size(); ++i) o[i] = av[i] * bv[i];
  return finish("mul", Op::Mul, a.shape(), std::move(out), a, &b);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  require(a.shape()[1] == b.shape()[0], [&] {
    return "matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
           shape_str(b.shape());
  });
  const int n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  PoolHandle out = acquire_buffer(size_t(n) * size_t(m));
  ConstMap ma(a.values().data(), n, k);
  ConstMap mb(b.values().data(), k, m);
  MutMap mo(out->data(), n, m);
  mo.noalias() = ma * mb;
  return finish("matmul", Op::MatMul, {n, m}, std::move(out), a, &b);
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_bt");
  require_rank2(b, "matmul_bt");
  require(a.shape()[1] == b.shape()[1], [&] {
    return "matmul_bt: inner extents differ, " + shape_str(a.shape()) +
           " x " + shape_str(b.shape()) + "^T";
  });
  const int n = a.shape()[0], k = a.shape()[1], m = b.shape()[0];
  PoolHandle out = acquire_buffer(size_t(n) * size_t(m));
  ConstMap ma(a.values().data(), n, k);
  ConstMap mb(b.values().data(), m, k);
  MutMap mo(out->data(), n, m);
  mo.noalias() = ma * mb.transpose();
  return finish("matmul_bt", Op::MatMulBT, {n, m}, std::move(out), a, &b);
}

Tensor matmul_ta(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_ta");
  require_rank2(b, "matmul_ta");
  require(a.shape()[0] == b.shape()[0], [&] {
    return "matmul_ta: inner extents differ, " + shape_str(a.shape()) +
           "^T x " + shape_str(b.shape());
  });
  const int n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  PoolHandle out = acquire_buffer(size_t(k) * size_t(m));
  ConstMap ma(a.values().data(), n, k);
  ConstMap mb(b.values().data(), n, m);
  MutMap mo(out->data(), k, m);
  mo.noalias() = ma.transpose() * mb;
  return finish("matmul_ta", Op::MatMulTA, {k, m}, std::move(out), a, &b);
}

Tensor scale(const Tensor& a, double c) {
  const auto& av = a.values();
  PoolHandle out = acquire_buffer(av.size());
  double* o = out->data();
  for (std::size_t i = 0; i < av.size(); ++i) o[i] = av[i] * c;
  return finish("scale", Op::Scale, a.shape(), std::move(out), a, nullptr, c);
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const int n = a.shape()[0], m = a.shape()[1];
  PoolHandle out = acquire_buffer(size_t(n) * size_t(m));
  ConstMap ma(a.values().data(), n, m);
  MutMap mo(out->data(), m, n);
  mo = ma.transpose();
  return finish("transpose", Op::Transpose, {m, n}, std::move(out), a,
                nullptr);
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_rank2(a, "concat_cols");
  require_rank2(b, "concat_cols");
  require(a.shape()[0] == b.shape()[0], [&] {
    return "concat_cols: row counts differ, " + shape_str(a.shape()) +
           " vs " + shape_str(b.shape());
  });
  const int n = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  PoolHandle out_h = acquire_buffer(size_t(n) * size_t(ca + cb));
  auto& out = *out_h;
  const auto& av = a.values();
  const auto& bv = b.values();
  for (int r = 0; r < n; ++r) {
    std::memcpy(&out[size_t(r) * size_t(ca + cb)], &av[size_t(r) * size_t(ca)],
                size_t(ca) * sizeof(double));
    std::memcpy(&out[size_t(r) * size_t(ca + cb) + size_t(ca)],
                &bv[size_t(r) * size_t(cb)], size_t(cb) * sizeof(double));
  }
  return finish("concat_cols", Op::ConcatCols, {n, ca + cb},
                std::move(out_h), a, &b, 0.0, ca);
}

Tensor slice_cols(const Tensor& a, int lo, int hi) {
  require_rank2(a, "slice_cols");
  require(0 <= lo && lo < hi && hi <= a.shape()[1], [&] {
    return "slice_cols: bad range [" + std::to_string(lo) + "," +
           std::to_string(hi) + ") for shape " + shape_str(a.shape());
  });
  const int n = a.shape()[0], w = a.shape()[1], m = hi - lo;
  PoolHandle out_h = acquire_buffer(size_t(n) * size_t(m));
  auto& out = *out_h;
  const auto& av = a.values();
  for (int r = 0; r < n; ++r) {
    std::memcpy(&out[size_t(r) * size_t(m)],
                &av[size_t(r) * size_t(w) + size_t(lo)],
                size_t(m) * sizeof(double));
  }
  return finish("slice_cols", Op::SliceCols, {n, m}, std::move(out_h), a,
                nullptr, 0.0, lo, hi);
}

Tensor relu(const Tensor& a) {
  const auto& av = a.values();
  PoolHandle out = acquire_buffer(av.size());
  double* o = out->data();
  for (std::size_t i = 0; i < av.size(); ++i) o[i] = av[i] > 0.0 ? av[i] : 0.0;
  return finish("relu", Op::Relu, a.shape(), std::move(out), a, nullptr);
}

Tensor sin(const Tensor& a) {
  const auto& av = a.values();
  PoolHandle out = acquire_buffer(av.size());
  double* o = out->data();
  for (std::size_t i = 0; i < av.size(); ++i) o[i] = std::sin(av[i]);
  return finish("sin", Op::Sin, a.shape(), std::move(out), a, nullptr);
}

Tensor cos(const Tensor& a) {
  const auto& av = a.values();
  PoolHandle out = acquire_buffer(av.size());
  double* o = out->data();
  for (std::size_t i = 0; i < av.size(); ++i) o[i] = std::cos(av[i]);
  return finish("cos", Op::Cos, a.shape(), std::move(out), a, nullptr);
}

Tensor square(const Tensor& a) {
  const auto& av = a.values();
  PoolHandle out = acquire_buffer(av.size());
  double* o = out->data();
  for (std::size_t i = 0; i < av.size(); ++i) o[i] = av[i] * av[i];
  return finish("square", Op::Square, a.shape(), std::move(out), a, nullptr);
}

Tensor sum_all(const Tensor& a) {
  const auto& av = a.values();
  double s = 0.0;
  for (const double x : av) s += x;
  PoolHandle out = acquire_buffer(1);
  (*out)[0] = s;
  return finish("sum_all", Op::SumAll, {1}, std::move(out), a, nullptr);
}

Tensor sum_rows(const Tensor& a) {
  require_rank2(a, "sum_rows");
  const int n = a.shape()[0], d = a.shape()[1];
  PoolHandle out_h = acquire_buffer(size_t(d));
  auto& out = *out_h;
  std::fill(out.begin(), out.end(), 0.0);
  const auto& av = a.values();
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < d; ++c) out[size_t(c)] += av[size_t(r) * d + c];
  }
  return finish("sum_rows", Op::SumRows, {1, d}, std::move(out_h), a, nullptr);
}

Tensor broadcast_rows(const Tensor& row, int n) {
  require_rank2(row, "broadcast_rows");
  require(row.shape()[0] == 1, [&] {
    return "broadcast_rows: expected shape (1,d), got " +
           shape_str(row.shape());
  });
  require(n >= 1, [] { return std::string("broadcast_rows: n must be >= 1"); });
  const int d = row.shape()[1];
  PoolHandle out_h = acquire_buffer(size_t(n) * size_t(d));
  auto& out = *out_h;
  const auto& rv = row.values();
  for (int r = 0; r < n; ++r) {
    std::memcpy(&out[size_t(r) * size_t(d)], rv.data(),
                size_t(d) * sizeof(double));
  }
  return finish("broadcast_rows", Op::BroadcastRows, {n, d}, std::move(out_h),
                row, nullptr, 0.0, n);
}

Tensor broadcast_scalar(const Tensor& s, const Shape& shape) {
  require(s.size() == 1,
          [] { return std::string("broadcast_scalar: source must be scalar"); });
  PoolHandle out = acquire_buffer(size_t(shape_numel(shape)));
  std::fill(out->begin(), out->end(), s.values()[0]);
  return finish("broadcast_scalar", Op::BroadcastScalar, shape,
                std::move(out), s, nullptr);
}

Tensor mean(const Tensor& a) {
  require(a.size() > 0, [] { return std::string("mean: empty tensor"); });
  return scale(sum_all(a), 1.0 / double(a.size()));
}

// ---- reverse pass ----------------------------------------------------

namespace {

// Derivative mask for relu, treated as a constant (relu'(0) = 0).
Tensor relu_mask(const Tensor& x) {
  const auto& xv = x.values();
  std::vector<double> m(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) m[i] = xv[i] > 0.0 ? 1.0 : 0.0;
  return Tensor(x.shape(), std::move(m));
}

// Per-op adjoint rules expressed through the public ops, so that a retained
// backward pass records differentiable adjoint computations.
void propagate(Tape& tape, const Node& node, const Tensor& g,
               const std::vector<char>& needed, int lo,
               const std::function<void(int, Tensor)>& accumulate) {
  const auto is_needed = [&](int id) {
    return id >= lo && needed[size_t(id - lo)];
  };
  const bool need_a = node.a >= 0 && is_needed(node.a);
  const bool need_b = node.b >= 0 && is_needed(node.b);
  if (!need_a && !need_b) return;
  // Operand tensors: from the tape when recorded, else the stored constant.
  const auto in_a = [&] {
    return node.a >= 0 ? tape.tensor_of(node.a) : node.const_a;
  };
  const auto in_b = [&] {
    return node.b >= 0 ? tape.tensor_of(node.b) : node.const_b;
  };
  switch (node.op) {
    case Op::Leaf:
      break;
    case Op::Add:
      if (need_a) accumulate(node.a, g);
      if (need_b) accumulate(node.b, g);
      break;
    case Op::Sub:
      if (need_a) accumulate(node.a, g);
      if (need_b) accumulate(node.b, neg(g));
      break;
    case Op::Mul:
      if (need_a) accumulate(node.a, mul(g, in_b()));
      if (need_b) accumulate(node.b, mul(g, in_a()));
      break;
    case Op::MatMul:
      if (need_a) accumulate(node.a, matmul_bt(g, in_b()));
      if (need_b) accumulate(node.b, matmul_ta(in_a(), g));
      break;
    case Op::MatMulBT:  // out = a b^T
      if (need_a) accumulate(node.a, matmul(g, in_b()));
      if (need_b) accumulate(node.b, matmul_ta(g, in_a()));
      break;
    case Op::MatMulTA:  // out = a^T b
      if (need_a) accumulate(node.a, matmul_bt(in_b(), g));
      if (need_b) accumulate(node.b, matmul(in_a(), g));
      break;
    case Op::Scale:
      if (need_a) accumulate(node.a, scale(g, node.c));
      break;
    case Op::Transpose:
      if (need_a) accumulate(node.a, transpose(g));
      break;
    case Op::ConcatCols:
      if (need_a) accumulate(node.a, slice_cols(g, 0, node.p0));
      if (need_b) accumulate(node.b, slice_cols(g, node.p0, node.shape[1]));
      break;
    case Op::SliceCols: {
      if (!need_a) break;
      // Embed the slice gradient back into the source width with zeros.
      const Node& src = tape.node(node.a);
      const int n = src.shape[0], w = src.shape[1];
      Tensor padded = g;
      if (node.p0 > 0) padded = concat_cols(Tensor::zeros({n, node.p0}), padded);
      if (node.p1 < w) padded = concat_cols(padded, Tensor::zeros({n, w - node.p1}));
      accumulate(node.a, padded);
      break;
    }
    case Op::Relu:
      if (need_a)
        accumulate(node.a, mul(g, relu_mask(tape.tensor_of(node.a))));
      break;
    case Op::Sin:
      if (need_a) accumulate(node.a, mul(g, cos(tape.tensor_of(node.a))));
      break;
    case Op::Cos:
      if (need_a)
        accumulate(node.a, neg(mul(g, sin(tape.tensor_of(node.a)))));
      break;
    case Op::Square:
      if (need_a)
        accumulate(node.a, mul(g, scale(tape.tensor_of(node.a), 2.0)));
      break;
    case Op::SumAll:
      if (need_a)
        accumulate(node.a, broadcast_scalar(g, tape.node(node.a).shape));
      break;
    case Op::SumRows:
      if (need_a)
        accumulate(node.a, broadcast_rows(g, tape.node(node.a).shape[0]));
      break;
    case Op::BroadcastRows:
      if (need_a) accumulate(node.a, sum_rows(g));
      break;
    case Op::BroadcastScalar:
      if (need_a) accumulate(node.a, sum_all(g));
      break;
  }
}

}  // namespace

GradMap backward(const Tensor& loss, std::span<const Tensor> wrt,
                 bool retain) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
  if (!loss.is_scalar()) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  }
  if (wrt.empty()) throw std::invalid_argument("backward: empty wrt set");
  for (const Tensor& p : wrt) {
    if (!p.has_node()) {
      throw std::invalid_argument(
          "backward: wrt parameter is not watched on any tape");
    }
  }

  GradMap out;
  if (!loss.has_node()) {
    // Loss is a constant: every parameter is unreachable.
    for (const Tensor& p : wrt) out.put(p.node(), Tensor::zeros(p.shape()));
    return out;
  }

  Tape& tape = *loss.tape();
  const int root = loss.node();

  // Adjoints can only flow to nodes in [lo, root]: a node reaches a wrt
  // leaf through its inputs only if its id is at least the leaf's id.
  int lo = root;
  for (const Tensor& p : wrt) {
    if (p.tape() == &tape && p.node() <= root) lo = std::min(lo, p.node());
  }
  const std::size_t window = size_t(root - lo) + 1;

  // needed[i - lo]: some wrt node is reachable from node i via its inputs.
  std::vector<char> needed(window, 0);
  for (const Tensor& p : wrt) {
    if (p.tape() == &tape && p.node() <= root) needed[size_t(p.node() - lo)] = 1;
  }
  for (int id = lo; id <= root; ++id) {
    if (needed[size_t(id - lo)]) continue;
    const Node& n = tape.node(id);
    if ((n.a >= lo && needed[size_t(n.a - lo)]) ||
        (n.b >= lo && needed[size_t(n.b - lo)])) {
      needed[size_t(id - lo)] = 1;
    }
  }

  std::vector<Tensor> adj(window);
  adj[size_t(root - lo)] = Tensor::full(loss.shape(), 1.0);

  {
    std::unique_ptr<NoRecord> guard;
    if (!retain) guard = std::make_unique<NoRecord>(tape);
    auto accumulate = [&](int id, Tensor g) {
      Tensor& slot = adj[size_t(id - lo)];
      slot = slot.defined() ? add(slot, g) : std::move(g);
    };
    for (int id = root; id >= lo; --id) {
      if (!adj[size_t(id - lo)].defined() || !needed[size_t(id - lo)]) continue;
      if (retain) {
        // Copy: recorded adjoint ops may reallocate the tape's node storage.
        const Node node = tape.node(id);
        propagate(tape, node, adj[size_t(id - lo)], needed, lo, accumulate);
      } else {
        propagate(tape, tape.node(id), adj[size_t(id - lo)], needed, lo,
                  accumulate);
      }
    }
  }

  for (const Tensor& p : wrt) {
    Tensor g;
    if (p.tape() == &tape && p.node() >= lo && p.node() <= root) {
      g = adj[size_t(p.node() - lo)];
    }
    out.put(p.node(), g.defined() ? g : Tensor::zeros(p.shape()));
  }
  return out;
}

GradMap higher_order_backward(const Tensor& grad,
                              std::span<const Tensor> wrt) {
  if (!grad.defined() || !grad.has_node()) {
    throw NumericalError(
        "higher_order_backward: gradient carries no graph handle "
        "(was the first backward run with retain=true?)");
  }
  return backward(grad, wrt, /*retain=*/false);
}

}  // namespace dmcm
