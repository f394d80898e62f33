// Copyright 2026 The dps Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Dense tensors with reverse-mode automatic differentiation.
//
// Tensors are immutable values: a shape plus a shared row-major buffer. Ops
// are free functions that record a backward rule on the thread-local active
// Tape whenever some input requires gradients. Gradients accumulate by
// summation, so a tensor consumed by several ops receives the sum of all
// incoming gradients. Kernels are single-threaded with a fixed reduction
// order, so results are bit-reproducible for fixed inputs.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "dps/error.hpp"

namespace dps {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

namespace detail {
inline std::atomic<int64_t>& tensor_id_counter() {
  static std::atomic<int64_t> c{0};
  return c;
}
}  // namespace detail

template <typename T>
class Tape;

template <typename T>
class Tensor {
 public:
  Tensor() : shape_{0}, data_(std::make_shared<std::vector<T>>()) {}

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(std::move(data))),
        requires_grad_(requires_grad) {
    if (numel(shape_) != static_cast<int64_t>(data_->size()))
      throw DimensionError("tensor data length " + std::to_string(data_->size()) +
                           " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<T> d(static_cast<size_t>(numel(shape)), T(0));
    return Tensor(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    std::vector<T> d(static_cast<size_t>(numel(shape)), v);
    return Tensor(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t i) const {
    if (i < 0) i += rank();
    return shape_[static_cast<size_t>(i)];
  }
  int64_t size() const { return static_cast<int64_t>(data_->size()); }

  std::span<const T> data() const { return {data_->data(), data_->size()}; }
  const std::vector<T>& vec() const { return *data_; }
  std::shared_ptr<const std::vector<T>> buffer() const { return data_; }

  T item() const {
    if (size() != 1) throw ContractError("item() on tensor of size " + std::to_string(size()));
    return (*data_)[0];
  }

  T at(std::initializer_list<int64_t> idx) const {
    int64_t off = 0;
    int64_t i = 0;
    for (int64_t v : idx) {
      off = off * shape_[static_cast<size_t>(i)] + v;
      ++i;
    }
    return (*data_)[static_cast<size_t>(off)];
  }

  bool requires_grad() const { return requires_grad_; }
  int64_t id() const { return id_; }

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<T>> data_;
  bool requires_grad_ = false;
  int64_t id_ = detail::tensor_id_counter()++;

  template <typename U>
  friend Tensor<U> make_op_output(Shape, std::vector<U>);
};

// Internal: constructs an op output that is tracked for gradients.
template <typename T>
Tensor<T> make_op_output(Shape shape, std::vector<T> data) {
  Tensor<T> t(std::move(shape), std::move(data));
  t.requires_grad_ = true;
  return t;
}

// Records primitive operations during a forward pass and replays their
// backward rules in reverse order. One tape is active per thread; reset it
// between training steps (no graph retention across steps).
template <typename T>
class Tape {
 public:
  // out_grad: gradient of the node output (flat). in_grads: one span per
  // recorded input, aligned with the inputs vector; an empty span means that
  // input does not need a gradient. Rules must ADD into the spans.
  using BackwardFn =
      std::function<void(const T* out_grad, const std::vector<std::span<T>>& in_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape*& active_slot() {
    thread_local Tape* active = nullptr;
    return active;
  }
  static Tape* active() { return active_slot(); }

  // RAII activation for the current thread.
  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(active_slot()) { active_slot() = &t; }
    ~Scope() { active_slot() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  struct InputRef {
    int64_t id;    // -1: value participates but needs no gradient
    int64_t size;  // element count, for grad buffer allocation
  };

  void record(std::vector<InputRef> inputs, int64_t out_id, BackwardFn fn) {
    if (consumed_)
      throw ContractError("tape already consumed by backward(); reset() before recording");
    nodes_.push_back(Node{out_id, std::move(inputs), std::move(fn)});
  }

  void backward(const Tensor<T>& loss) {
    if (loss.size() != 1)
      throw ContractError("backward() requires a scalar loss, got shape " +
                          shape_str(loss.shape()));
    if (consumed_) throw ContractError("tape already consumed by backward(); reset() first");
    grads_[loss.id()] = std::vector<T>{T(1)};
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      auto og = grads_.find(it->out_id);
      if (og == grads_.end()) continue;  // not on a path to the loss
      std::vector<std::span<T>> in_spans;
      in_spans.reserve(it->inputs.size());
      for (const InputRef& in : it->inputs) {
        if (in.id < 0) {
          in_spans.push_back({});
        } else {
          auto [slot, inserted] = grads_.try_emplace(in.id);
          if (inserted) slot->second.assign(static_cast<size_t>(in.size), T(0));
          in_spans.push_back({slot->second.data(), slot->second.size()});
        }
      }
      it->fn(og->second.data(), in_spans);
    }
    consumed_ = true;
  }

  std::span<const T> grad(const Tensor<T>& t) const {
    auto it = grads_.find(t.id());
    if (it == grads_.end()) return {};
    return {it->second.data(), it->second.size()};
  }

  bool has_grad(const Tensor<T>& t) const { return grads_.count(t.id()) > 0; }

  void reset() {
    nodes_.clear();
    grads_.clear();
    consumed_ = false;
  }

  size_t node_count() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    int64_t out_id;
    std::vector<InputRef> inputs;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  std::unordered_map<int64_t, std::vector<T>> grads_;
  bool consumed_ = false;
};

// Runs backward on the active tape.
template <typename T>
void backward(const Tensor<T>& loss) {
  Tape<T>* tape = Tape<T>::active();
  if (!tape) throw ContractError("backward() called with no active tape");
  tape->backward(loss);
}

// ---------------------------------------------------------------------------
// Broadcasting helpers (numpy rules: align right, each dim equal or 1).

namespace detail {

inline Shape pad_rank(const Shape& s, size_t rank) {
  Shape out(rank, 1);
  std::copy(s.begin(), s.end(), out.begin() + (rank - s.size()));
  return out;
}

inline Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  size_t rank = std::max(a.size(), b.size());
  Shape pa = pad_rank(a, rank), pb = pad_rank(b, rank), out(rank);
  for (size_t i = 0; i < rank; ++i) {
    if (pa[i] == pb[i] || pa[i] == 1 || pb[i] == 1) {
      out[i] = std::max(pa[i], pb[i]);
    } else {
      throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                           shape_str(b) + " are not broadcastable");
    }
  }
  return out;
}

// Row-major strides, with 0 on broadcast (size-1) dims relative to `full`.
inline std::vector<int64_t> broadcast_strides(const Shape& padded, const Shape& full) {
  std::vector<int64_t> st(padded.size());
  int64_t acc = 1;
  for (size_t i = padded.size(); i-- > 0;) {
    st[i] = (padded[i] == 1 && full[i] != 1) ? 0 : acc;
    acc *= padded[i];
  }
  return st;
}

// Sums `grad` (shaped `full`) down to `target` shape (for broadcast inputs).
template <typename T>
void reduce_grad_to(const T* grad, const Shape& full, const Shape& target, std::span<T> out) {
  if (out.empty()) return;
  Shape pt = pad_rank(target, full.size());
  std::vector<int64_t> st = broadcast_strides(pt, full);
  int64_t n = numel(full);
  size_t rank = full.size();
  std::vector<int64_t> coord(rank, 0);
  for (int64_t lin = 0; lin < n; ++lin) {
    int64_t off = 0;
    for (size_t i = 0; i < rank; ++i) off += coord[i] * st[i];
    out[static_cast<size_t>(off)] += grad[lin];
    for (size_t i = rank; i-- > 0;) {
      if (++coord[i] < full[i]) break;
      coord[i] = 0;
    }
  }
}

// Dense gemm kernels (row major).
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (+)= A(m,k) * B(n,k)^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C (+)= A(k,m)^T * B(k,n)
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  for (int64_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Offsets of each batch element into an operand whose batch dims may be 1.
inline std::vector<int64_t> batch_offsets(const Shape& full_batch, const Shape& op_batch,
                                          int64_t elem) {
  int64_t n = numel(full_batch);
  std::vector<int64_t> offs(static_cast<size_t>(n), 0);
  if (full_batch.empty()) return offs;
  Shape padded = pad_rank(op_batch, full_batch.size());
  std::vector<int64_t> st = broadcast_strides(padded, full_batch);
  size_t rank = full_batch.size();
  std::vector<int64_t> coord(rank, 0);
  for (int64_t lin = 0; lin < n; ++lin) {
    int64_t off = 0;
    for (size_t i = 0; i < rank; ++i) off += coord[i] * st[i];
    offs[static_cast<size_t>(lin)] = off * elem;
    for (size_t i = rank; i-- > 0;) {
      if (++coord[i] < full_batch[i]) break;
      coord[i] = 0;
    }
  }
  return offs;
}

template <typename T>
bool want_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (!Tape<T>::active()) return false;
  for (const Tensor<T>* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

template <typename T>
typename Tape<T>::InputRef ref_of(const Tensor<T>& t) {
  return {t.requires_grad() ? t.id() : -1, t.size()};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul: batched matrix product with broadcasting over leading dims.

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw DimensionError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  const int64_t m = a.dim(-2), k = a.dim(-1), kb = b.dim(-2), n = b.dim(-1);
  if (k != kb)
    throw DimensionError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const Shape abatch(a.shape().begin(), a.shape().end() - 2);
  const Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  const Shape batch = detail::broadcast_shapes(abatch, bbatch, "matmul");
  const int64_t nb = numel(batch);
  std::vector<int64_t> aoffs = detail::batch_offsets(batch, abatch, m * k);
  std::vector<int64_t> boffs = detail::batch_offsets(batch, bbatch, k * n);

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(static_cast<size_t>(nb * m * n));
  const T* ap = a.data().data();
  const T* bp = b.data().data();
  // An unbatched right operand shared by every batch row is one flat gemm
  // over the stacked rows of a.
  const bool flat = bbatch.empty();
  if (flat) {
    detail::gemm_nn(ap, bp, out.data(), nb * m, k, n, false);
  } else {
    for (int64_t i = 0; i < nb; ++i)
      detail::gemm_nn(ap + aoffs[static_cast<size_t>(i)], bp + boffs[static_cast<size_t>(i)],
                      out.data() + i * m * n, m, k, n, false);
  }

  if (!detail::want_record<T>({&a, &b})) return Tensor<T>(std::move(out_shape), std::move(out));
  Tensor<T> res = make_op_output(std::move(out_shape), std::move(out));
  auto abuf = a.buffer();
  auto bbuf = b.buffer();
  Tape<T>::active()->record(
      {detail::ref_of(a), detail::ref_of(b)}, res.id(),
      [=](const T* og, const std::vector<std::span<T>>& ig) {
        if (flat) {
          if (!ig[0].empty()) detail::gemm_nt(og, bbuf->data(), ig[0].data(), nb * m, n, k, true);
          if (!ig[1].empty()) detail::gemm_tn(abuf->data(), og, ig[1].data(), k, nb * m, n, true);
          return;
        }
        // Broadcast batch dims share a grad region; accumulating gemms
        // implement the reduction directly.
        std::vector<int64_t> ao = detail::batch_offsets(batch, abatch, m * k);
        std::vector<int64_t> bo = detail::batch_offsets(batch, bbatch, k * n);
        if (!ig[0].empty())  // grad_a = og . b^T
          for (int64_t i = 0; i < nb; ++i)
            detail::gemm_nt(og + i * m * n, bbuf->data() + bo[static_cast<size_t>(i)],
                            ig[0].data() + ao[static_cast<size_t>(i)], m, n, k, true);
        if (!ig[1].empty())  // grad_b = a^T . og
          for (int64_t i = 0; i < nb; ++i)
            detail::gemm_tn(abuf->data() + ao[static_cast<size_t>(i)], og + i * m * n,
                            ig[1].data() + bo[static_cast<size_t>(i)], k, m, n, true);
      });
  return res;
}

// ---------------------------------------------------------------------------
// Elementwise add / sub / mul with broadcasting.

enum class EwKind { kAdd, kSub, kMul };

template <typename T>
Tensor<T> elementwise(EwKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  const char* name = kind == EwKind::kAdd ? "add" : kind == EwKind::kSub ? "sub" : "mul";
  const Shape full = detail::broadcast_shapes(a.shape(), b.shape(), name);
  const size_t rank = full.size();
  const int64_t n = numel(full);
  std::vector<T> out(static_cast<size_t>(n));
  const T* ap = a.data().data();
  const T* bp = b.data().data();

  if (a.shape() == full && b.shape() == full) {
    switch (kind) {
      case EwKind::kAdd:
        for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = ap[i] + bp[i];
        break;
      case EwKind::kSub:
        for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = ap[i] - bp[i];
        break;
      case EwKind::kMul:
        for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = ap[i] * bp[i];
        break;
    }
  } else {
    std::vector<int64_t> sa = detail::broadcast_strides(detail::pad_rank(a.shape(), rank), full);
    std::vector<int64_t> sb = detail::broadcast_strides(detail::pad_rank(b.shape(), rank), full);
    std::vector<int64_t> coord(rank, 0);
    for (int64_t lin = 0; lin < n; ++lin) {
      int64_t oa = 0, ob = 0;
      for (size_t i = 0; i < rank; ++i) {
        oa += coord[i] * sa[i];
        ob += coord[i] * sb[i];
      }
      T va = ap[oa], vb = bp[ob];
      out[static_cast<size_t>(lin)] =
          kind == EwKind::kAdd ? va + vb : kind == EwKind::kSub ? va - vb : va * vb;
      for (size_t i = rank; i-- > 0;) {
        if (++coord[i] < full[i]) break;
        coord[i] = 0;
      }
    }
  }

  if (!detail::want_record<T>({&a, &b})) return Tensor<T>(full, std::move(out));
  Tensor<T> res = make_op_output(full, std::move(out));
  auto abuf = a.buffer();
  auto bbuf = b.buffer();
  Shape ashape = a.shape(), bshape = b.shape();
  Tape<T>::active()->record(
      {detail::ref_of(a), detail::ref_of(b)}, res.id(),
      [=](const T* og, const std::vector<std::span<T>>& ig) {
        const int64_t count = numel(full);
        const size_t rk = full.size();
        switch (kind) {
          case EwKind::kAdd:
            detail::reduce_grad_to(og, full, ashape, ig[0]);
            detail::reduce_grad_to(og, full, bshape, ig[1]);
            break;
          case EwKind::kSub: {
            detail::reduce_grad_to(og, full, ashape, ig[0]);
            if (!ig[1].empty()) {
              std::vector<T> neg(static_cast<size_t>(count));
              for (int64_t i = 0; i < count; ++i) neg[static_cast<size_t>(i)] = -og[i];
              detail::reduce_grad_to(neg.data(), full, bshape, ig[1]);
            }
            break;
          }
          case EwKind::kMul: {
            auto scaled = [&](const Shape& other_shape,
                              const std::shared_ptr<const std::vector<T>>& other) {
              std::vector<int64_t> st =
                  detail::broadcast_strides(detail::pad_rank(other_shape, rk), full);
              std::vector<T> g(static_cast<size_t>(count));
              std::vector<int64_t> coord(rk, 0);
              for (int64_t lin = 0; lin < count; ++lin) {
                int64_t off = 0;
                for (size_t i = 0; i < rk; ++i) off += coord[i] * st[i];
                g[static_cast<size_t>(lin)] = og[lin] * (*other)[static_cast<size_t>(off)];
                for (size_t i = rk; i-- > 0;) {
                  if (++coord[i] < full[i]) break;
                  coord[i] = 0;
                }
              }
              return g;
            };
            if (!ig[0].empty()) {
              std::vector<T> ga = scaled(bshape, bbuf);
              detail::reduce_grad_to(ga.data(), full, ashape, ig[0]);
            }
            if (!ig[1].empty()) {
              std::vector<T> gb = scaled(ashape, abuf);
              detail::reduce_grad_to(gb.data(), full, bshape, ig[1]);
            }
            break;
          }
        }
      });
  return res;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(EwKind::kAdd, a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(EwKind::kSub, a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(EwKind::kMul, a, b);
}

// Multiply by a scalar constant.
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.vec());
  for (T& v : out) v *= c;
  if (!detail::want_record<T>({&a})) return Tensor<T>(a.shape(), std::move(out));
  Tensor<T> res = make_op_output(a.shape(), std::move(out));
  const int64_t n = a.size();
  Tape<T>::active()->record({detail::ref_of(a)}, res.id(),
                            [=](const T* og, const std::vector<std::span<T>>& ig) {
                              if (ig[0].empty()) return;
                              for (int64_t i = 0; i < n; ++i)
                                ig[0][static_cast<size_t>(i)] += og[i] * c;
                            });
  return res;
}

// ---------------------------------------------------------------------------
// Pointwise activations.

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  const int64_t n = a.size();
  std::vector<T> out(static_cast<size_t>(n));
  const T* ap = a.data().data();
  for (int64_t i = 0; i < n; ++i) {
    T x = ap[i];
    // Evaluate on the side that keeps exp() bounded.
    out[static_cast<size_t>(i)] =
        x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
  }
  if (!detail::want_record<T>({&a})) return Tensor<T>(a.shape(), std::move(out));
  Tensor<T> res = make_op_output(a.shape(), std::move(out));
  auto ybuf = res.buffer();
  Tape<T>::active()->record({detail::ref_of(a)}, res.id(),
                            [=](const T* og, const std::vector<std::span<T>>& ig) {
                              if (ig[0].empty()) return;
                              for (int64_t i = 0; i < n; ++i) {
                                T y = (*ybuf)[static_cast<size_t>(i)];
                                ig[0][static_cast<size_t>(i)] += og[i] * y * (T(1) - y);
                              }
                            });
  return res;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  const int64_t n = a.size();
  std::vector<T> out(static_cast<size_t>(n));
  const T* ap = a.data().data();
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = ap[i] > T(0) ? ap[i] : T(0);
  if (!detail::want_record<T>({&a})) return Tensor<T>(a.shape(), std::move(out));
  Tensor<T> res = make_op_output(a.shape(), std::move(out));
  auto abuf = a.buffer();
  Tape<T>::active()->record({detail::ref_of(a)}, res.id(),
                            [=](const T* og, const std::vector<std::span<T>>& ig) {
                              if (ig[0].empty()) return;
                              for (int64_t i = 0; i < n; ++i)
                                if ((*abuf)[static_cast<size_t>(i)] > T(0))
                                  ig[0][static_cast<size_t>(i)] += og[i];
                            });
  return res;
}

// ---------------------------------------------------------------------------
// Softmax over the last dim, with an optional keep-mask (entries > 0.5 keep
// the position). Row-max subtraction for stability; masked entries exactly 0.

template <typename T>
Tensor<T> softmax_last_dim(const Tensor<T>& a, const Tensor<T>* mask = nullptr) {
  if (mask && mask->shape() != a.shape())
    throw DimensionError("softmax_last_dim: mask shape " + shape_str(mask->shape()) +
                         " does not match input " + shape_str(a.shape()));
  const int64_t cols = a.dim(-1);
  const int64_t rows = a.size() / cols;
  std::vector<T> out(static_cast<size_t>(a.size()));
  const T* ap = a.data().data();
  const T* mp = mask ? mask->data().data() : nullptr;
  for (int64_t r = 0; r < rows; ++r) {
    const T* x = ap + r * cols;
    const T* m = mp ? mp + r * cols : nullptr;
    T* y = out.data() + r * cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (int64_t j = 0; j < cols; ++j)
      if ((!m || m[j] > T(0.5)) && x[j] > mx) mx = x[j];
    if (mx == -std::numeric_limits<T>::infinity())
      throw InvalidMaskError("softmax_last_dim: fully masked row " + std::to_string(r));
    T sum = T(0);
    for (int64_t j = 0; j < cols; ++j) {
      if (m && m[j] <= T(0.5)) {
        y[j] = T(0);
      } else {
        y[j] = std::exp(x[j] - mx);
        sum += y[j];
      }
    }
    for (int64_t j = 0; j < cols; ++j) y[j] /= sum;
  }
  if (!detail::want_record<T>({&a})) return Tensor<T>(a.shape(), std::move(out));
  Tensor<T> res = make_op_output(a.shape(), std::move(out));
  auto ybuf = res.buffer();
  Tape<T>::active()->record(
      {detail::ref_of(a)}, res.id(),
      [=](const T* og, const std::vector<std::span<T>>& ig) {
        if (ig[0].empty()) return;
        for (int64_t r = 0; r < rows; ++r) {
          const T* y = ybuf->data() + r * cols;
          const T* g = og + r * cols;
          T dot = T(0);
          for (int64_t j = 0; j < cols; ++j) dot += g[j] * y[j];
          for (int64_t j = 0; j < cols; ++j)
            ig[0][static_cast<size_t>(r * cols + j)] += y[j] * (g[j] - dot);
        }
      });
  return res;
}

// Numerically stable log(softmax(x)) over the last dim.
template <typename T>
Tensor<T> log_softmax_last_dim(const Tensor<T>& a) {
  const int64_t cols = a.dim(-1);
  const int64_t rows = a.size() / cols;
  std::vector<T> out(static_cast<size_t>(a.size()));
  const T* ap = a.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* x = ap + r * cols;
    T* y = out.data() + r * cols;
    T mx = x[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    T sum = T(0);
    for (int64_t j = 0; j < cols; ++j) sum += std::exp(x[j] - mx);
    T lse = mx + std::log(sum);
    for (int64_t j = 0; j < cols; ++j) y[j] = x[j] - lse;
  }
  if (!detail::want_record<T>({&a})) return Tensor<T>(a.shape(), std::move(out));
  Tensor<T> res = make_op_output(a.shape(), std::move(out));
  auto ybuf = res.buffer();
  Tape<T>::active()->record(
      {detail::ref_of(a)}, res.id(),
      [=](const T* og, const std::vector<std::span<T>>& ig) {
        if (ig[0].empty()) return;
        for (int64_t r = 0; r < rows; ++r) {
          const T* y = ybuf->data() + r * cols;
          const T* g = og + r * cols;
          T gsum = T(0);
          for (int64_t j = 0; j < cols; ++j) gsum += g[j];
          for (int64_t j = 0; j < cols; ++j)
            ig[0][static_cast<size_t>(r * cols + j)] += g[j] - std::exp(y[j]) * gsum;
        }
      });
  return res;
}

// ---------------------------------------------------------------------------
// 1-d convolution over time. x: [batch, time, d_in], filter: [r*d_in, d_out],
// bias: [d_out]. `same` zero-pads (r-1)/2 on both sides (r odd); `causal`
// zero-pads r-1 on the left only, so out[t] depends on inputs <= t.

enum class PadMode { kSame, kCausal };

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& filter, const Tensor<T>& bias,
                 PadMode mode) {
  if (x.rank() != 3)
    throw DimensionError("conv1d: input must be [batch,time,d_in], got " + shape_str(x.shape()));
  if (filter.rank() != 2)
    throw DimensionError("conv1d: filter must be [r*d_in, d_out], got " +
                         shape_str(filter.shape()));
  const int64_t batch = x.dim(0), time = x.dim(1), din = x.dim(2);
  if (din == 0 || filter.dim(0) % din != 0)
    throw DimensionError("conv1d: filter rows " + std::to_string(filter.dim(0)) +
                         " not a multiple of d_in " + std::to_string(din));
  const int64_t r = filter.dim(0) / din;
  const int64_t dout = filter.dim(1);
  if (bias.size() != dout)
    throw DimensionError("conv1d: bias size " + std::to_string(bias.size()) +
                         " does not match d_out " + std::to_string(dout));
  if (mode == PadMode::kSame && r % 2 == 0)
    throw DimensionError("conv1d: `same` mode requires odd kernel, got r=" + std::to_string(r));
  const int64_t pad_left = mode == PadMode::kSame ? (r - 1) / 2 : r - 1;

  // One gemm per (batch row, filter tap) over the valid output range:
  // out[b, lo:hi, :] += x[b, lo+j-pad : hi+j-pad, :] . W_j.
  auto tap_range = [time, pad_left](int64_t j, int64_t& lo, int64_t& hi) {
    lo = std::max<int64_t>(0, pad_left - j);
    hi = std::min<int64_t>(time, time + pad_left - j);
  };
  std::vector<T> out(static_cast<size_t>(batch * time * dout));
  const T* xp = x.data().data();
  const T* wp = filter.data().data();
  const T* bp = bias.data().data();
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t t = 0; t < time; ++t)
      std::copy(bp, bp + dout, out.data() + (b * time + t) * dout);
  for (int64_t j = 0; j < r; ++j) {
    int64_t lo, hi;
    tap_range(j, lo, hi);
    if (lo >= hi) continue;
    const T* wblock = wp + j * din * dout;
    for (int64_t b = 0; b < batch; ++b)
      detail::gemm_nn(xp + (b * time + lo + j - pad_left) * din, wblock,
                      out.data() + (b * time + lo) * dout, hi - lo, din, dout, true);
  }
  if (!detail::want_record<T>({&x, &filter, &bias}))
    return Tensor<T>({batch, time, dout}, std::move(out));
  Tensor<T> res = make_op_output({batch, time, dout}, std::move(out));
  auto xbuf = x.buffer();
  auto wbuf = filter.buffer();
  Tape<T>::active()->record(
      {detail::ref_of(x), detail::ref_of(filter), detail::ref_of(bias)}, res.id(),
      [=](const T* og, const std::vector<std::span<T>>& ig) {
        for (int64_t j = 0; j < r; ++j) {
          int64_t lo, hi;
          tap_range(j, lo, hi);
          if (lo >= hi) continue;
          for (int64_t b = 0; b < batch; ++b) {
            const T* gsub = og + (b * time + lo) * dout;
            int64_t src_off = (b * time + lo + j - pad_left) * din;
            if (!ig[0].empty())  // grad_x += og . W_j^T
              detail::gemm_nt(gsub, wbuf->data() + j * din * dout, ig[0].data() + src_off,
                              hi - lo, dout, din, true);
            if (!ig[1].empty())  // grad_W_j += x^T . og
              detail::gemm_tn(xbuf->data() + src_off, gsub, ig[1].data() + j * din * dout,
                              din, hi - lo, dout, true);
          }
        }
        if (!ig[2].empty())
          for (int64_t row = 0; row < batch * time; ++row) {
            const T* grow = og + row * dout;
            for (int64_t o = 0; o < dout; ++o) ig[2][static_cast<size_t>(o)] += grow[o];
          }
      });
  return res;
}

// ---------------------------------------------------------------------------
// Concat / slice / transpose.

template <typename T>
Tensor<T> concat_last_dim(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank())
    throw DimensionError("concat_last_dim: rank mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  for (int64_t i = 0; i + 1 < a.rank(); ++i)
    if (a.dim(i) != b.dim(i))
      throw DimensionError("concat_last_dim: leading dims differ: " + shape_str(a.shape()) +
                           " vs " + shape_str(b.shape()));
  const int64_t ca = a.dim(-1), cb = b.dim(-1);
  const int64_t rows = a.size() / std::max<int64_t>(ca, 1);
  Shape out_shape = a.shape();
  out_shape.back() = ca + cb;
  std::vector<T> out(static_cast<size_t>(rows * (ca + cb)));
  const T* ap = a.data().data();
  const T* bp = b.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    std::copy(ap + r * ca, ap + (r + 1) * ca, out.data() + r * (ca + cb));
    std::copy(bp + r * cb, bp + (r + 1) * cb, out.data() + r * (ca + cb) + ca);
  }
  if (!detail::want_record<T>({&a, &b})) return Tensor<T>(std::move(out_shape), std::move(out));
  Tensor<T> res = make_op_output(std::move(out_shape), std::move(out));
  Tape<T>::active()->record(
      {detail::ref_of(a), detail::ref_of(b)}, res.id(),
      [=](const T* og, const std::vector<std::span<T>>& ig) {
        for (int64_t r = 0; r < rows; ++r) {
          if (!ig[0].empty())
            for (int64_t j = 0; j < ca; ++j)
              ig[0][static_cast<size_t>(r * ca + j)] += og[r * (ca + cb) + j];
          if (!ig[1].empty())
            for (int64_t j = 0; j < cb; ++j)
              ig[1][static_cast<size_t>(r * cb + j)] += og[r * (ca + cb) + ca + j];
        }
      });
  return res;
}

template <typename T>
Tensor<T> slice_last_dim(const Tensor<T>& a, int64_t start, int64_t len) {
  const int64_t cols = a.dim(-1);
  if (start < 0 || len < 0 || start + len > cols)
    throw DimensionError("slice_last_dim: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of " + std::to_string(cols));
  const int64_t rows = a.size() / cols;
  Shape out_shape = a.shape();
  out_shape.back() = len;
  std::vector<T> out(static_cast<size_t>(rows * len));
  const T* ap = a.data().data();
  for (int64_t r = 0; r < rows; ++r)
    std::copy(ap + r * cols + start, ap + r * cols + start + len, out.data() + r * len);
  if (!detail::want_record<T>({&a})) return Tensor<T>(std::move(out_shape), std::move(out));
  Tensor<T> res = make_op_output(std::move(out_shape), std::move(out));
  Tape<T>::active()->record({detail::ref_of(a)}, res.id(),
                            [=](const T* og, const std::vector<std::span<T>>& ig) {
                              if (ig[0].empty()) return;
                              for (int64_t r = 0; r < rows; ++r)
                                for (int64_t j = 0; j < len; ++j)
                                  ig[0][static_cast<size_t>(r * cols + start + j)] +=
                                      og[r * len + j];
                            });
  return res;
}

// Swap the last two dims.
template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
  if (a.rank() < 2)
    throw DimensionError("transpose_last2: rank >= 2 required, got " + shape_str(a.shape()));
  const int64_t m = a.dim(-2), n = a.dim(-1);
  const int64_t nb = a.size() / (m * n);
  Shape out_shape = a.shape();
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  std::vector<T> out(static_cast<size_t>(a.size()));
  const T* ap = a.data().data();
  for (int64_t b = 0; b < nb; ++b)
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j)
        out[static_cast<size_t>(b * m * n + j * m + i)] = ap[b * m * n + i * n + j];
  if (!detail::want_record<T>({&a})) return Tensor<T>(std::move(out_shape), std::move(out));
  Tensor<T> res = make_op_output(std::move(out_shape), std::move(out));
  Tape<T>::active()->record({detail::ref_of(a)}, res.id(),
                            [=](const T* og, const std::vector<std::span<T>>& ig) {
                              if (ig[0].empty()) return;
                              for (int64_t b = 0; b < nb; ++b)
                                for (int64_t i = 0; i < m; ++i)
                                  for (int64_t j = 0; j < n; ++j)
                                    ig[0][static_cast<size_t>(b * m * n + i * n + j)] +=
                                        og[b * m * n + j * m + i];
                            });
  return res;
}

// ---------------------------------------------------------------------------
// Reductions and lookups.

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  if (!detail::want_record<T>({&a})) return Tensor<T>({1}, {acc});
  Tensor<T> res = make_op_output<T>(Shape{1}, std::vector<T>{acc});
  const int64_t n = a.size();
  Tape<T>::active()->record({detail::ref_of(a)}, res.id(),
                            [=](const T* og, const std::vector<std::span<T>>& ig) {
                              if (ig[0].empty()) return;
                              for (int64_t i = 0; i < n; ++i)
                                ig[0][static_cast<size_t>(i)] += og[0];
                            });
  return res;
}

// Gathers rows of `table` [rows, width] by flat ids; output shape is
// prefix_shape + [width]. Backward scatter-adds into the table gradient.
template <typename T>
Tensor<T> embedding_rows(const Tensor<T>& table, std::span<const int32_t> ids,
                         Shape prefix_shape) {
  if (table.rank() != 2)
    throw DimensionError("embedding_rows: table must be 2-d, got " + shape_str(table.shape()));
  const int64_t rows = table.dim(0), width = table.dim(1);
  if (numel(prefix_shape) != static_cast<int64_t>(ids.size()))
    throw DimensionError("embedding_rows: prefix shape does not match id count");
  for (int32_t id : ids)
    if (id < 0 || id >= rows)
      throw VocabularyError("embedding_rows: id " + std::to_string(id) + " outside table of " +
                            std::to_string(rows) + " rows");
  Shape out_shape = prefix_shape;
  out_shape.push_back(width);
  std::vector<T> out(ids.size() * static_cast<size_t>(width));
  const T* tp = table.data().data();
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy(tp + ids[i] * width, tp + (ids[i] + 1) * width, out.data() + i * width);
  if (!detail::want_record<T>({&table})) return Tensor<T>(std::move(out_shape), std::move(out));
  Tensor<T> res = make_op_output(std::move(out_shape), std::move(out));
  std::vector<int32_t> ids_copy(ids.begin(), ids.end());
  Tape<T>::active()->record(
      {detail::ref_of(table)}, res.id(),
      [=, ids2 = std::move(ids_copy)](const T* og, const std::vector<std::span<T>>& ig) {
        if (ig[0].empty()) return;
        for (size_t i = 0; i < ids2.size(); ++i) {
          T* dst = ig[0].data() + ids2[i] * width;
          const T* src = og + i * width;
          for (int64_t j = 0; j < width; ++j) dst[j] += src[j];
        }
      });
  return res;
}

// Picks one entry per row along the last dim: out[..] = a[.., ids[..]].
template <typename T>
Tensor<T> pick_last_dim(const Tensor<T>& a, std::span<const int32_t> ids) {
  const int64_t cols = a.dim(-1);
  const int64_t rows = a.size() / cols;
  if (static_cast<int64_t>(ids.size()) != rows)
    throw DimensionError("pick_last_dim: need one id per row");
  for (int32_t id : ids)
    if (id < 0 || id >= cols)
      throw DimensionError("pick_last_dim: id " + std::to_string(id) + " out of " +
                           std::to_string(cols));
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<T> out(static_cast<size_t>(rows));
  const T* ap = a.data().data();
  for (int64_t r = 0; r < rows; ++r) out[static_cast<size_t>(r)] = ap[r * cols + ids[r]];
  if (!detail::want_record<T>({&a})) return Tensor<T>(std::move(out_shape), std::move(out));
  Tensor<T> res = make_op_output(std::move(out_shape), std::move(out));
  std::vector<int32_t> ids_copy(ids.begin(), ids.end());
  Tape<T>::active()->record(
      {detail::ref_of(a)}, res.id(),
      [=, ids2 = std::move(ids_copy)](const T* og, const std::vector<std::span<T>>& ig) {
        if (ig[0].empty()) return;
        for (int64_t r = 0; r < rows; ++r)
          ig[0][static_cast<size_t>(r * cols + ids2[static_cast<size_t>(r)])] += og[r];
      });
  return res;
}

// Standardizes the last dim to zero mean / unit variance (no affine part).
template <typename T>
Tensor<T> normalize_last_dim(const Tensor<T>& a, T eps) {
  const int64_t cols = a.dim(-1);
  const int64_t rows = a.size() / cols;
  std::vector<T> out(static_cast<size_t>(a.size()));
  std::vector<T> inv_std(static_cast<size_t>(rows));
  const T* ap = a.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* x = ap + r * cols;
    T mean = T(0);
    for (int64_t j = 0; j < cols; ++j) mean += x[j];
    mean /= static_cast<T>(cols);
    T var = T(0);
    for (int64_t j = 0; j < cols; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<T>(cols);
    T is = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = is;
    for (int64_t j = 0; j < cols; ++j)
      out[static_cast<size_t>(r * cols + j)] = (x[j] - mean) * is;
  }
  if (!detail::want_record<T>({&a})) return Tensor<T>(a.shape(), std::move(out));
  Tensor<T> res = make_op_output(a.shape(), std::move(out));
  auto ybuf = res.buffer();
  Tape<T>::active()->record(
      {detail::ref_of(a)}, res.id(),
      [=, istd = std::move(inv_std)](const T* og, const std::vector<std::span<T>>& ig) {
        if (ig[0].empty()) return;
        // dx = inv_std * (g - mean(g) - y * mean(g*y)), means over the row
        for (int64_t r = 0; r < rows; ++r) {
          const T* y = ybuf->data() + r * cols;
          const T* g = og + r * cols;
          T gmean = T(0), gymean = T(0);
          for (int64_t j = 0; j < cols; ++j) {
            gmean += g[j];
            gymean += g[j] * y[j];
          }
          gmean /= static_cast<T>(cols);
          gymean /= static_cast<T>(cols);
          T is = istd[static_cast<size_t>(r)];
          for (int64_t j = 0; j < cols; ++j)
            ig[0][static_cast<size_t>(r * cols + j)] += is * (g[j] - gmean - y[j] * gymean);
        }
      });
  return res;
}

}  // namespace dps
