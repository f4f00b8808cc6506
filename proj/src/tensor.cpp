// SPDX-License-Identifier: Apache-2.0

#include "moelab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "moelab/kernels.hpp"

namespace moelab {

namespace {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

void check_shape(const Shape& s, const char* who) {
  if (s.empty()) throw DimensionError(std::string(who) + ": empty shape");
  for (int64_t d : s) {
    if (d <= 0) throw DimensionError(std::string(who) + ": non-positive extent in " + shape_str(s));
  }
}

const Shape& shape_of(const Tensor& t, const char* who) {
  if (!t.defined()) throw ContractError(std::string(who) + ": undefined tensor");
  return t.shape();
}

void require_rank2(const Tensor& t, const char* who) {
  if (shape_of(t, who).size() != 2) {
    throw DimensionError(std::string(who) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
  }
}

void require_finite(const Tensor& t, const char* who) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(who) + ": non-finite input");
  }
}

double* adj(detail::TensorImpl* t) { return t->adj.data(); }

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << " x ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

// --- Tensor ---------------------------------------------------------------

Tensor make_tensor(Shape shape, bool requires_grad) {
  check_shape(shape, "tensor");
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->value.assign(shape_numel(shape), 0.0);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return make_tensor(std::move(shape), requires_grad); }

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  Tensor t = make_tensor(std::move(shape), requires_grad);
  std::fill(t.data().begin(), t.data().end(), v);
  return t;
}

Tensor Tensor::from(std::vector<double> data, Shape shape, bool requires_grad) {
  check_shape(shape, "tensor");
  if (static_cast<int64_t>(data.size()) != shape_numel(shape)) {
    throw DimensionError("tensor: " + std::to_string(data.size()) + " values for shape " + shape_str(shape));
  }
  Tensor t = make_tensor(std::move(shape), requires_grad);
  std::copy(data.begin(), data.end(), t.data().begin());
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) { return full({1}, v, requires_grad); }

Tensor Tensor::randn(Shape shape, Rng& rng, double std, bool requires_grad) {
  Tensor t = make_tensor(std::move(shape), requires_grad);
  for (double& v : t.data()) v = rng.normal(0.0, std);
  return t;
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("shape(): undefined tensor");
  return impl_->shape;
}

int64_t Tensor::numel() const { return impl_ ? impl_->numel() : 0; }

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

std::span<double> Tensor::data() {
  if (!impl_) throw ContractError("data(): undefined tensor");
  return impl_->value;
}

std::span<const double> Tensor::data() const {
  if (!impl_) throw ContractError("data(): undefined tensor");
  return impl_->value;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<double> Tensor::grad() {
  if (!has_grad()) throw ContractError("grad(): no gradient present");
  return impl_->grad;
}

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("grad(): no gradient present");
  return impl_->grad;
}

void Tensor::ensure_grad() {
  if (!impl_) throw ContractError("ensure_grad(): undefined tensor");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->numel(), 0.0);
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item(): tensor has " + std::to_string(numel()) + " elements");
  return impl_->value[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size()) throw IndexError("at(): rank mismatch for " + shape_str(s));
  int64_t off = 0;
  size_t k = 0;
  for (int64_t i : idx) {
    if (i < 0 || i >= s[k]) throw IndexError("at(): index out of range for " + shape_str(s));
    off = off * s[k] + i;
    ++k;
  }
  return impl_->value[off];
}

// --- Graph ----------------------------------------------------------------

namespace {
thread_local std::vector<Graph*> g_active_graphs;
}

Graph::Graph() { g_active_graphs.push_back(this); }

Graph::~Graph() {
  // Pop our entry; tolerate out-of-order destruction of stack-scoped graphs.
  auto it = std::find(g_active_graphs.rbegin(), g_active_graphs.rend(), this);
  if (it != g_active_graphs.rend()) g_active_graphs.erase(std::next(it).base());
}

Graph* Graph::active() { return g_active_graphs.empty() ? nullptr : g_active_graphs.back(); }

bool Graph::tracked(const Tensor& t) {
  if (!t.defined()) return false;
  if (t.requires_grad()) return true;
  Graph* g = active();
  return g != nullptr && t.impl()->tape == g;
}

void Graph::note(const std::shared_ptr<detail::TensorImpl>& t) { tensors_.push_back(t); }

void Graph::record(const char* name, std::initializer_list<Tensor> inputs, const Tensor& output,
                   std::function<void()> back) {
  Graph* g = active();
  if (!g) return;
  bool any = false;
  for (const Tensor& t : inputs) {
    if (tracked(t)) {
      any = true;
      break;
    }
  }
  if (!any) return;
  for (const Tensor& t : inputs) g->note(t.handle());
  g->note(output.handle());
  output.impl()->tape = g;
  g->ops_.push_back(Op{name, std::move(back)});
}

void Graph::backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined loss tensor");
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  if (loss.impl()->tape != this) {
    throw ContractError("backward: loss was not recorded on this graph");
  }

  // The registry may hold duplicates; keep one entry per tensor.
  std::sort(tensors_.begin(), tensors_.end());
  tensors_.erase(std::unique(tensors_.begin(), tensors_.end()), tensors_.end());

  for (auto& t : tensors_) t->adj.assign(t->numel(), 0.0);
  loss.impl()->adj[0] = 1.0;

  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->back();

  for (auto& t : tensors_) {
    if (!t->requires_grad) continue;
    if (t->grad.empty()) t->grad.assign(t->numel(), 0.0);
    for (int64_t i = 0; i < t->numel(); ++i) t->grad[i] += t->adj[i];
  }
  for (auto& t : tensors_) {
    t->adj.clear();
    t->adj.shrink_to_fit();
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined loss tensor");
  Graph* g = loss.impl()->tape;
  if (!g) throw ContractError("backward: loss was not recorded on any graph");
  g->backward(loss);
}

// --- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const int64_t m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw DimensionError("matmul: inner extents disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  Tensor out = make_tensor({m, n}, false);
  kern::mm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n);

  auto* ai = a.impl();
  auto* bi = b.impl();
  auto* oi = out.impl();
  Graph::record("matmul", {a, b}, out, [ai, bi, oi, m, k, n] {
    kern::mm_nt_acc(adj(oi), bi->value.data(), adj(ai), m, k, n);
    kern::mm_tn_acc(ai->value.data(), adj(oi), adj(bi), m, k, n);
  });
  return out;
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const int64_t m = x.shape()[0], n = x.shape()[1];
  Tensor out = make_tensor({n, m}, false);
  const double* src = x.data().data();
  double* dst = out.data().data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];

  auto* xi = x.impl();
  auto* oi = out.impl();
  Graph::record("transpose", {x}, out, [xi, oi, m, n] {
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) xi->adj[i * n + j] += oi->adj[j * m + i];
  });
  return out;
}

namespace {

enum class Bcast { kSame, kScalar, kRow, kCol };

// How b broadcasts over a; throws if it can't.
Bcast classify_broadcast(const Shape& a, const Shape& b, const char* who) {
  if (a == b) return Bcast::kSame;
  if (shape_numel(b) == 1) return Bcast::kScalar;
  if (a.size() == 2) {
    if (b.size() == 1 && b[0] == a[1]) return Bcast::kRow;
    if (b.size() == 2 && b[0] == 1 && b[1] == a[1]) return Bcast::kRow;
    if (b.size() == 2 && b[0] == a[0] && b[1] == 1) return Bcast::kCol;
  }
  throw DimensionError(std::string(who) + ": shapes not broadcast-compatible: " + shape_str(a) +
                       " vs " + shape_str(b));
}

bool can_broadcast(const Shape& a, const Shape& b) {
  try {
    classify_broadcast(a, b, "probe");
    return true;
  } catch (const DimensionError&) {
    return false;
  }
}

// Reads b's element aligned with flat position (i, j) of a [m x n].
inline int64_t bcast_index(Bcast mode, int64_t i, int64_t j, int64_t n) {
  switch (mode) {
    case Bcast::kSame: return i * n + j;
    case Bcast::kScalar: return 0;
    case Bcast::kRow: return j;
    case Bcast::kCol: return i;
  }
  return 0;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  shape_of(a, "add");
  shape_of(b, "add");
  if (!can_broadcast(a.shape(), b.shape()) && can_broadcast(b.shape(), a.shape())) return add(b, a);
  const Bcast mode = classify_broadcast(a.shape(), b.shape(), "add");

  const int64_t rows = a.shape().size() == 2 ? a.shape()[0] : 1;
  const int64_t cols = a.shape().size() == 2 ? a.shape()[1] : a.numel();
  Tensor out = make_tensor(a.shape(), false);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) po[i * cols + j] = pa[i * cols + j] + pb[bcast_index(mode, i, j, cols)];

  auto* ai = a.impl();
  auto* bi = b.impl();
  auto* oi = out.impl();
  Graph::record("add", {a, b}, out, [ai, bi, oi, mode, rows, cols] {
    for (int64_t i = 0; i < rows * cols; ++i) ai->adj[i] += oi->adj[i];
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < cols; ++j) bi->adj[bcast_index(mode, i, j, cols)] += oi->adj[i * cols + j];
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  shape_of(a, "mul");
  shape_of(b, "mul");
  if (!can_broadcast(a.shape(), b.shape()) && can_broadcast(b.shape(), a.shape())) return mul(b, a);
  const Bcast mode = classify_broadcast(a.shape(), b.shape(), "mul");

  const int64_t rows = a.shape().size() == 2 ? a.shape()[0] : 1;
  const int64_t cols = a.shape().size() == 2 ? a.shape()[1] : a.numel();
  Tensor out = make_tensor(a.shape(), false);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) po[i * cols + j] = pa[i * cols + j] * pb[bcast_index(mode, i, j, cols)];

  auto* ai = a.impl();
  auto* bi = b.impl();
  auto* oi = out.impl();
  Graph::record("mul", {a, b}, out, [ai, bi, oi, mode, rows, cols] {
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < cols; ++j) {
        const int64_t bj = bcast_index(mode, i, j, cols);
        const int64_t f = i * cols + j;
        ai->adj[f] += oi->adj[f] * bi->value[bj];
        bi->adj[bj] += oi->adj[f] * ai->value[f];
      }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor scale(const Tensor& a, double c) {
  shape_of(a, "scale");
  Tensor out = make_tensor(a.shape(), false);
  const double* pa = a.data().data();
  double* po = out.data().data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;

  auto* ai = a.impl();
  auto* oi = out.impl();
  Graph::record("scale", {a}, out, [ai, oi, c, n] {
    for (int64_t i = 0; i < n; ++i) ai->adj[i] += oi->adj[i] * c;
  });
  return out;
}

namespace {

Tensor unary_op(const char* name, const Tensor& x, double (*f)(double), double (*df)(double)) {
  shape_of(x, name);
  Tensor out = make_tensor(x.shape(), false);
  const int64_t n = x.numel();
  kern::map_unary(x.data().data(), out.data().data(), n, f);

  auto* xi = x.impl();
  auto* oi = out.impl();
  Graph::record(name, {x}, out, [xi, oi, df, n] {
    for (int64_t i = 0; i < n; ++i) xi->adj[i] += oi->adj[i] * df(xi->value[i]);
  });
  return out;
}

double silu_f(double x) { return x / (1.0 + std::exp(-x)); }
double silu_df(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}
double gelu_f(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865476)); }
double gelu_df(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865476));
  const double pdf = 0.3989422804014327 * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}
double recip_f(double x) { return 1.0 / x; }
double recip_df(double x) { return -1.0 / (x * x); }

}  // namespace

Tensor silu(const Tensor& x) { return unary_op("silu", x, silu_f, silu_df); }
Tensor gelu(const Tensor& x) { return unary_op("gelu", x, gelu_f, gelu_df); }
Tensor reciprocal(const Tensor& x) { return unary_op("reciprocal", x, recip_f, recip_df); }

Tensor softmax(const Tensor& x, int axis) {
  const Shape& s = shape_of(x, "softmax");
  const int rank = static_cast<int>(s.size());
  if (axis < -rank || axis >= rank) {
    throw IndexError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(s));
  }
  if (axis < 0) axis += rank;
  require_finite(x, "softmax");

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < rank; ++i) inner *= s[i];
  const int64_t len = s[axis];

  Tensor out = make_tensor(s, false);
  const double* px = x.data().data();
  double* po = out.data().data();

  if (inner == 1) {
    kern::softmax_rows(px, po, outer, len);
  } else {
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = o * len * inner + in;
        double mx = px[base];
        for (int64_t j = 1; j < len; ++j) mx = std::max(mx, px[base + j * inner]);
        double z = 0.0;
        for (int64_t j = 0; j < len; ++j) {
          const double e = std::exp(px[base + j * inner] - mx);
          po[base + j * inner] = e;
          z += e;
        }
        const double invz = 1.0 / z;
        for (int64_t j = 0; j < len; ++j) po[base + j * inner] *= invz;
      }
  }

  auto* xi = x.impl();
  auto* oi = out.impl();
  Graph::record("softmax", {x}, out, [xi, oi, outer, len, inner] {
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = o * len * inner + in;
        double dot = 0.0;
        for (int64_t j = 0; j < len; ++j) dot += oi->adj[base + j * inner] * oi->value[base + j * inner];
        for (int64_t j = 0; j < len; ++j) {
          const int64_t f = base + j * inner;
          xi->adj[f] += oi->value[f] * (oi->adj[f] - dot);
        }
      }
  });
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  require_rank2(logits, "cross_entropy");
  const int64_t t_count = logits.shape()[0], vocab = logits.shape()[1];
  if (static_cast<int64_t>(targets.size()) != t_count) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         shape_str(logits.shape()));
  }
  for (int y : targets) {
    if (y < 0 || y >= vocab) {
      throw IndexError("cross_entropy: target " + std::to_string(y) + " outside vocab " +
                       std::to_string(vocab));
    }
  }
  require_finite(logits, "cross_entropy");

  // Keep the row softmax for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(t_count * vocab);
  kern::softmax_rows(logits.data().data(), probs->data(), t_count, vocab);

  const double* pl = logits.data().data();
  double nll = 0.0;
  for (int64_t t = 0; t < t_count; ++t) {
    const double* row = pl + t * vocab;
    double mx = row[0];
    for (int64_t v = 1; v < vocab; ++v) mx = std::max(mx, row[v]);
    double z = 0.0;
    for (int64_t v = 0; v < vocab; ++v) z += std::exp(row[v] - mx);
    nll += mx + std::log(z) - row[targets[t]];
  }
  Tensor out = Tensor::scalar(nll / static_cast<double>(t_count));

  auto* li = logits.impl();
  auto* oi = out.impl();
  auto tgt = targets;
  Graph::record("cross_entropy", {logits}, out, [li, oi, probs, tgt, t_count, vocab] {
    const double g = oi->adj[0] / static_cast<double>(t_count);
    for (int64_t t = 0; t < t_count; ++t)
      for (int64_t v = 0; v < vocab; ++v) {
        const double ind = (v == tgt[t]) ? 1.0 : 0.0;
        li->adj[t * vocab + v] += g * ((*probs)[t * vocab + v] - ind);
      }
  });
  return out;
}

Tensor sum(const Tensor& x) {
  shape_of(x, "sum");
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);

  auto* xi = x.impl();
  auto* oi = out.impl();
  const int64_t n = x.numel();
  Graph::record("sum", {x}, out, [xi, oi, n] {
    for (int64_t i = 0; i < n; ++i) xi->adj[i] += oi->adj[0];
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank2(x, "layer_norm");
  const int64_t rows = x.shape()[0], d = x.shape()[1];
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gamma/beta must be [" + std::to_string(d) + "], got " +
                         shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
  }

  auto xhat = std::make_shared<std::vector<double>>(rows * d);
  auto inv = std::make_shared<std::vector<double>>(rows);
  Tensor out = make_tensor(x.shape(), false);
  const double* px = x.data().data();
  const double* pg = gamma.data().data();
  const double* pb = beta.data().data();
  double* po = out.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = px + r * d;
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double iv = 1.0 / std::sqrt(var + eps);
    (*inv)[r] = iv;
    for (int64_t j = 0; j < d; ++j) {
      const double xh = (xr[j] - mu) * iv;
      (*xhat)[r * d + j] = xh;
      po[r * d + j] = pg[j] * xh + pb[j];
    }
  }

  auto* xi = x.impl();
  auto* gi = gamma.impl();
  auto* bi = beta.impl();
  auto* oi = out.impl();
  Graph::record("layer_norm", {x, gamma, beta}, out, [xi, gi, bi, oi, xhat, inv, rows, d] {
    for (int64_t r = 0; r < rows; ++r) {
      const double* g = oi->adj.data() + r * d;
      const double* xh = xhat->data() + r * d;
      double mean_dxh = 0.0, mean_dxh_xh = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        const double dxh = g[j] * gi->value[j];
        mean_dxh += dxh;
        mean_dxh_xh += dxh * xh[j];
        gi->adj[j] += g[j] * xh[j];
        bi->adj[j] += g[j];
      }
      mean_dxh /= static_cast<double>(d);
      mean_dxh_xh /= static_cast<double>(d);
      const double iv = (*inv)[r];
      for (int64_t j = 0; j < d; ++j) {
        const double dxh = g[j] * gi->value[j];
        xi->adj[r * d + j] += iv * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
      }
    }
  });
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  require_rank2(table, "embedding_lookup");
  const int64_t vocab = table.shape()[0], d = table.shape()[1];
  if (ids.empty()) throw DimensionError("embedding_lookup: empty id list");
  for (int id : ids) {
    if (id < 0 || id >= vocab) {
      throw IndexError("embedding_lookup: id " + std::to_string(id) + " outside table " +
                       shape_str(table.shape()));
    }
  }
  const int64_t t_count = static_cast<int64_t>(ids.size());
  Tensor out = make_tensor({t_count, d}, false);
  const double* pt = table.data().data();
  double* po = out.data().data();
  for (int64_t t = 0; t < t_count; ++t) {
    std::copy(pt + ids[t] * d, pt + (ids[t] + 1) * d, po + t * d);
  }

  auto* ti = table.impl();
  auto* oi = out.impl();
  auto idv = ids;
  Graph::record("embedding_lookup", {table}, out, [ti, oi, idv, d] {
    for (size_t t = 0; t < idv.size(); ++t)
      for (int64_t j = 0; j < d; ++j) ti->adj[idv[t] * d + j] += oi->adj[t * d + j];
  });
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows) {
  require_rank2(x, "gather_rows");
  const int64_t m = x.shape()[0], n = x.shape()[1];
  if (rows.empty()) throw DimensionError("gather_rows: empty index list");
  for (int64_t r : rows) {
    if (r < 0 || r >= m) throw IndexError("gather_rows: row " + std::to_string(r) + " outside " + shape_str(x.shape()));
  }
  const int64_t k = static_cast<int64_t>(rows.size());
  Tensor out = make_tensor({k, n}, false);
  const double* px = x.data().data();
  double* po = out.data().data();
  for (int64_t i = 0; i < k; ++i) std::copy(px + rows[i] * n, px + (rows[i] + 1) * n, po + i * n);

  auto* xi = x.impl();
  auto* oi = out.impl();
  auto idx = rows;
  Graph::record("gather_rows", {x}, out, [xi, oi, idx, n] {
    for (size_t i = 0; i < idx.size(); ++i)
      for (int64_t j = 0; j < n; ++j) xi->adj[idx[i] * n + j] += oi->adj[i * n + j];
  });
  return out;
}

Tensor gather_cols(const Tensor& x, const std::vector<int64_t>& cols) {
  require_rank2(x, "gather_cols");
  const int64_t m = x.shape()[0], n = x.shape()[1];
  if (cols.empty()) throw DimensionError("gather_cols: empty index list");
  for (int64_t c : cols) {
    if (c < 0 || c >= n) throw IndexError("gather_cols: col " + std::to_string(c) + " outside " + shape_str(x.shape()));
  }
  const int64_t k = static_cast<int64_t>(cols.size());
  Tensor out = make_tensor({m, k}, false);
  const double* px = x.data().data();
  double* po = out.data().data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < k; ++j) po[i * k + j] = px[i * n + cols[j]];

  auto* xi = x.impl();
  auto* oi = out.impl();
  auto idx = cols;
  Graph::record("gather_cols", {x}, out, [xi, oi, idx, m, n] {
    const int64_t k = static_cast<int64_t>(idx.size());
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < k; ++j) xi->adj[i * n + idx[j]] += oi->adj[i * k + j];
  });
  return out;
}

Tensor add_rows_at(const Tensor& base, const Tensor& rows, const std::vector<int64_t>& idx) {
  require_rank2(base, "add_rows_at");
  require_rank2(rows, "add_rows_at");
  const int64_t m = base.shape()[0], n = base.shape()[1];
  if (rows.shape()[1] != n) {
    throw DimensionError("add_rows_at: width mismatch: " + shape_str(base.shape()) + " vs " +
                         shape_str(rows.shape()));
  }
  if (static_cast<int64_t>(idx.size()) != rows.shape()[0]) {
    throw DimensionError("add_rows_at: " + std::to_string(idx.size()) + " indices for " +
                         shape_str(rows.shape()));
  }
  for (int64_t r : idx) {
    if (r < 0 || r >= m) throw IndexError("add_rows_at: row " + std::to_string(r) + " outside " + shape_str(base.shape()));
  }
  Tensor out = make_tensor(base.shape(), false);
  std::copy(base.data().begin(), base.data().end(), out.data().begin());
  const double* pr = rows.data().data();
  double* po = out.data().data();
  for (size_t i = 0; i < idx.size(); ++i)
    for (int64_t j = 0; j < n; ++j) po[idx[i] * n + j] += pr[i * n + j];

  auto* bi = base.impl();
  auto* ri = rows.impl();
  auto* oi = out.impl();
  auto iv = idx;
  Graph::record("add_rows_at", {base, rows}, out, [bi, ri, oi, iv, m, n] {
    for (int64_t i = 0; i < m * n; ++i) bi->adj[i] += oi->adj[i];
    for (size_t i = 0; i < iv.size(); ++i)
      for (int64_t j = 0; j < n; ++j) ri->adj[i * n + j] += oi->adj[iv[i] * n + j];
  });
  return out;
}

}  // namespace moelab
