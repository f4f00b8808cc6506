// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float64 tensors with reverse-mode autodiff.
//
// A Graph is a define-by-run tape: construct one, run the forward math, call
// backward(loss), let the Graph go out of scope.  Ops record themselves on
// the innermost live Graph whenever an input is tracked; with no live Graph
// they just compute values (cheap eval mode).
//
// backward() propagates adjoints through scratch buffers and then *adds* the
// result into each requires-grad tensor's .grad, so gradients accumulate
// across backward calls and a second backward on the same graph exactly
// doubles them.  Tensors the graph never saw are left untouched.
//
// Graph recording is single-threaded; parallelism lives inside the kernels.
// Concurrent forward passes are fine as long as they use disjoint Graphs and
// don't run backward at the same time over shared parameters.
#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "moelab/errors.hpp"
#include "moelab/rng.hpp"

namespace moelab {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);

class Graph;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // persistent accumulator; empty until first use
  std::vector<double> adj;   // scratch adjoints owned by the running backward
  bool requires_grad = false;
  Graph* tape = nullptr;  // graph that produced/recorded this tensor, if any

  int64_t numel() const { return static_cast<int64_t>(value.size()); }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(std::vector<double> data, Shape shape, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  // Normal(0, std) entries drawn from `rng`.
  static Tensor randn(Shape shape, Rng& rng, double std, bool requires_grad = true);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int64_t numel() const;
  bool requires_grad() const;

  std::span<double> data();
  std::span<const double> data() const;

  bool has_grad() const;
  std::span<double> grad();              // throws ContractError if absent
  std::span<const double> grad() const;  // throws ContractError if absent
  void ensure_grad();                    // allocate zero-filled grad if absent
  void zero_grad();

  double item() const;  // numel()==1 only
  double at(std::initializer_list<int64_t> idx) const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<detail::TensorImpl> handle() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend class Graph;
  friend Tensor make_tensor(Shape, bool);
};

Tensor make_tensor(Shape shape, bool requires_grad);

class Graph {
 public:
  Graph();
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  static Graph* active();

  // Number of recorded primitive operations.
  size_t size() const { return ops_.size(); }

  // Seeds d(loss)/d(loss)=1, walks the tape once in reverse, then adds the
  // resulting adjoints into .grad of every requires-grad tensor on the tape
  // (allocating zero-filled grads for untouched ones).
  void backward(const Tensor& loss);

  // Used by op implementations: records onto the active graph, if any input
  // is tracked there; otherwise a no-op.
  static void record(const char* name, std::initializer_list<Tensor> inputs, const Tensor& output,
                     std::function<void()> back);
  static bool tracked(const Tensor& t);

 private:
  struct Op {
    const char* name;
    std::function<void()> back;
  };
  void note(const std::shared_ptr<detail::TensorImpl>& t);

  std::vector<Op> ops_;
  std::vector<std::shared_ptr<detail::TensorImpl>> tensors_;  // every impl seen by this tape
};

// --- primitive ops -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

// add/mul broadcast b over a: same shape, scalar, [n]/[1 x n] row, [m x 1] column.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

Tensor silu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor reciprocal(const Tensor& x);

// Softmax along `axis` (negative counts from the back).  Rejects non-finite input.
Tensor softmax(const Tensor& x, int axis);

// Mean negative log-likelihood of `targets` under row-wise softmax of logits [T x V].
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);

Tensor sum(const Tensor& x);  // -> [1]

// Row-wise layer norm over the last axis of x [T x d]; gamma, beta: [d].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Rows of `table` [V x d] selected by ids; backward scatter-adds into the table.
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows);
Tensor gather_cols(const Tensor& x, const std::vector<int64_t>& cols);

// out = base; out[idx[j], :] += rows[j, :].  Duplicate indices accumulate.
Tensor add_rows_at(const Tensor& base, const Tensor& rows, const std::vector<int64_t>& idx);

// Runs backward on the graph that recorded `loss`.
void backward(const Tensor& loss);

}  // namespace moelab
