#include "logos/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <limits>
#include <numeric>
#include <sstream>

#include "logos/error.hpp"
#include "logos/kernels.hpp"

namespace logos {

// --- Array -------------------------------------------------------------------

namespace {

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Array::Array(Shape shape, double fill) : shape_(std::move(shape)) {
  if (shape_.size() > 2) throw ShapeError("arrays of rank > 2 are not supported: " + logos::shape_str(shape_));
  data_.assign(product(shape_), fill);
}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.size() > 2) throw ShapeError("arrays of rank > 2 are not supported: " + logos::shape_str(shape_));
  if (data_.size() != product(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     logos::shape_str(shape_));
  }
}

Array Array::scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }

Array Array::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Array({rows, cols}, std::vector<double>(values));
}

Array Array::row(std::span<const double> values) {
  return Array({1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

std::size_t Array::rows() const { return shape_.size() == 2 ? shape_[0] : 1; }

std::size_t Array::cols() const {
  if (shape_.size() == 2) return shape_[1];
  if (shape_.size() == 1) return shape_[0];
  return 1;
}

void Array::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Array::shape_str() const { return logos::shape_str(shape_); }

// --- ParameterStore / Gradients ----------------------------------------------

Parameter& ParameterStore::add(std::string name, Array init) {
  if (by_name_.count(name)) throw ContractError("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = std::move(init);
  p->index = params_.size();
  by_name_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ContractError("unknown parameter: " + name);
  return *params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ContractError("unknown parameter: " + name);
  return *params_[it->second];
}

bool ParameterStore::contains(const std::string& name) const { return by_name_.count(name) != 0; }

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

Gradients::Gradients(const ParameterStore& store) {
  grads_.reserve(store.size());
  for (const auto& p : store) grads_.emplace_back(p->value.shape());
}

void Gradients::zero() {
  for (auto& g : grads_) g.fill(0.0);
}

void Gradients::scale(double s) {
  for (auto& g : grads_)
    for (double& v : g.data()) v *= s;
}

// --- Tape --------------------------------------------------------------------

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw ContractError("variable does not belong to this tape");
  return nodes_[v.id];
}

Tape::Node& Tape::node(Var v) {
  if (v.id >= nodes_.size()) throw ContractError("variable does not belong to this tape");
  return nodes_[v.id];
}

Var Tape::constant(Array value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::param(const Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var{it->second};
  Node n;
  n.param = &p;
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var{nodes_.size() - 1};
}

const Array& Tape::value(Var v) const {
  const Node& n = node(v);
  return n.param ? n.param->value : n.value;
}

Array& Tape::grad(Var v) {
  Node& n = node(v);
  if (!n.grad_ready) {
    n.grad = Array(value(v).shape());
    n.grad_ready = true;
  }
  return n.grad;
}

bool Tape::has_grad(Var v) const { return node(v).grad_ready; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Var Tape::push(Array value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::push(Array value, std::span<const Var> inputs, BackwardFn fn) {
  for (double x : value.data()) {
    if (!std::isfinite(x)) throw ContractError("operation produced a non-finite value");
  }
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (Var in : inputs) {
      if (in.valid() && node(in).requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
    if (n.requires_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

void Tape::backward(Var loss, double seed) {
  if (!record_) throw ContractError("backward on a tape that does not record gradients");
  if (value(loss).size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + value(loss).shape_str());
  }
  if (!node(loss).requires_grad) return;
  grad(loss)[0] += seed;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || !n.grad_ready) continue;
    n.backward(*this);
  }
}

void Tape::accumulate_into(Gradients& out) const {
  for (const auto& [p, id] : param_nodes_) {
    const Node& n = nodes_[id];
    if (!n.grad_ready) continue;
    Array& dst = out[p->index];
    if (!dst.same_shape(n.grad)) throw ShapeError("gradient buffer shape mismatch for " + p->name);
    kernels::active().axpy(1.0, n.grad.ptr(), dst.ptr(), dst.size());
  }
}

namespace diagnostics {
namespace {
std::atomic<bool> g_gelu_fault{false};
}
void set_gelu_grad_fault(bool enabled) { g_gelu_fault.store(enabled); }
bool gelu_grad_fault() { return g_gelu_fault.load(); }
}  // namespace diagnostics

AttentionMask AttentionMask::full(std::size_t n) {
  return AttentionMask{n, std::vector<std::uint8_t>(n * n, 1)};
}

// --- helpers -----------------------------------------------------------------

namespace {

const kernels::KernelTable& K() { return kernels::active(); }

[[noreturn]] void shape_fail(const char* op, const Array& a, const Array& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

Shape mat_shape(std::size_t r, std::size_t c) { return Shape{r, c}; }

void add_into(Array& dst, const Array& src) { K().axpy(1.0, src.ptr(), dst.ptr(), dst.size()); }

}  // namespace

Array matmul_values(const Array& a, const Array& b) {
  if (a.cols() != b.rows()) shape_fail("matmul", a, b);
  Array out(mat_shape(a.rows(), b.cols()));
  K().gemm_nn(a.rows(), b.cols(), a.cols(), a.ptr(), b.ptr(), out.ptr());
  return out;
}

Array softmax_row_values(std::span<const double> logits) {
  Array out({1, logits.size()});
  if (logits.empty()) return out;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = std::exp(logits[j] - mx);
    total += out[j];
  }
  for (double& v : out.data()) v /= total;
  return out;
}

// --- linear algebra ----------------------------------------------------------

Var matmul(Tape& t, Var a, Var b) {
  Array out = matmul_values(t.value(a), t.value(b));
  return t.push(std::move(out), {a, b}, [a, b, o = t.size()](Tape& tp) {
    const Var out{o};
    const Array& A = tp.value(a);
    const Array& B = tp.value(b);
    const Array& G = tp.grad(out);
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    if (tp.requires_grad(a)) K().gemm_nt(m, k, n, G.ptr(), B.ptr(), tp.grad(a).ptr());
    if (tp.requires_grad(b)) K().gemm_tn(k, n, m, A.ptr(), G.ptr(), tp.grad(b).ptr());
  });
}

Var matmul_nt(Tape& t, Var a, Var b) {
  const Array& A = t.value(a);
  const Array& B = t.value(b);
  if (A.cols() != B.cols()) shape_fail("matmul_nt", A, B);
  Array out(mat_shape(A.rows(), B.rows()));
  K().gemm_nt(A.rows(), B.rows(), A.cols(), A.ptr(), B.ptr(), out.ptr());
  return t.push(std::move(out), {a, b}, [a, b, o = t.size()](Tape& tp) {
    const Var out{o};
    const Array& A = tp.value(a);
    const Array& B = tp.value(b);
    const Array& G = tp.grad(out);
    const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
    if (tp.requires_grad(a)) K().gemm_nn(m, k, n, G.ptr(), B.ptr(), tp.grad(a).ptr());
    if (tp.requires_grad(b)) K().gemm_tn(n, k, m, G.ptr(), A.ptr(), tp.grad(b).ptr());
  });
}

Var linear(Tape& t, Var x, Var w, Var bias) {
  const Array& X = t.value(x);
  const Array& W = t.value(w);
  if (X.cols() != W.rows()) shape_fail("linear", X, W);
  Array out(mat_shape(X.rows(), W.cols()));
  if (bias.valid()) {
    const Array& B = t.value(bias);
    if (B.size() != W.cols()) shape_fail("linear bias", W, B);
    for (std::size_t r = 0; r < out.rows(); ++r) std::copy(B.data().begin(), B.data().end(), out.row_span(r).begin());
  }
  K().gemm_nn(X.rows(), W.cols(), X.cols(), X.ptr(), W.ptr(), out.ptr());
  return t.push(std::move(out), {x, w, bias}, [x, w, bias, o = t.size()](Tape& tp) {
    const Var out{o};
    const Array& X = tp.value(x);
    const Array& W = tp.value(w);
    const Array& G = tp.grad(out);
    const std::size_t m = X.rows(), k = X.cols(), n = W.cols();
    if (tp.requires_grad(x)) K().gemm_nt(m, k, n, G.ptr(), W.ptr(), tp.grad(x).ptr());
    if (tp.requires_grad(w)) K().gemm_tn(k, n, m, X.ptr(), G.ptr(), tp.grad(w).ptr());
    if (bias.valid() && tp.requires_grad(bias)) {
      Array& gb = tp.grad(bias);
      for (std::size_t r = 0; r < m; ++r) K().axpy(1.0, G.ptr() + r * n, gb.ptr(), n);
    }
  });
}

Var add(Tape& t, Var a, Var b) {
  const Array& A = t.value(a);
  const Array& B = t.value(b);
  if (!A.same_shape(B)) shape_fail("add", A, B);
  Array out = A;
  add_into(out, B);
  return t.push(std::move(out), {a, b}, [a, b, o = t.size()](Tape& tp) {
    const Array& G = tp.grad(Var{o});
    if (tp.requires_grad(a)) add_into(tp.grad(a), G);
    if (tp.requires_grad(b)) add_into(tp.grad(b), G);
  });
}

Var add_row(Tape& t, Var a, Var row) {
  const Array& A = t.value(a);
  const Array& R = t.value(row);
  if (R.size() != A.cols()) shape_fail("add_row", A, R);
  Array out = A;
  for (std::size_t r = 0; r < out.rows(); ++r) K().axpy(1.0, R.ptr(), out.ptr() + r * out.cols(), out.cols());
  return t.push(std::move(out), {a, row}, [a, row, o = t.size()](Tape& tp) {
    const Array& G = tp.grad(Var{o});
    if (tp.requires_grad(a)) add_into(tp.grad(a), G);
    if (tp.requires_grad(row)) {
      Array& gr = tp.grad(row);
      for (std::size_t r = 0; r < G.rows(); ++r) K().axpy(1.0, G.ptr() + r * G.cols(), gr.ptr(), G.cols());
    }
  });
}

Var mul(Tape& t, Var a, Var b) {
  const Array& A = t.value(a);
  const Array& B = t.value(b);
  if (!A.same_shape(B)) shape_fail("mul", A, B);
  Array out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return t.push(std::move(out), {a, b}, [a, b, o = t.size()](Tape& tp) {
    const Array& G = tp.grad(Var{o});
    const Array& A = tp.value(a);
    const Array& B = tp.value(b);
    if (tp.requires_grad(a)) {
      Array& ga = tp.grad(a);
      for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i] * B[i];
    }
    if (tp.requires_grad(b)) {
      Array& gb = tp.grad(b);
      for (std::size_t i = 0; i < G.size(); ++i) gb[i] += G[i] * A[i];
    }
  });
}

Var scale(Tape& t, Var a, double s) {
  Array out = t.value(a);
  for (double& v : out.data()) v *= s;
  return t.push(std::move(out), {a}, [a, s, o = t.size()](Tape& tp) {
    const Array& G = tp.grad(Var{o});
    K().axpy(s, G.ptr(), tp.grad(a).ptr(), G.size());
  });
}

Var sum(Tape& t, Var a) {
  const Array& A = t.value(a);
  double total = 0.0;
  for (double v : A.data()) total += v;
  return t.push(Array::scalar(total), {a}, [a, o = t.size()](Tape& tp) {
    const double g = tp.grad(Var{o})[0];
    for (double& v : tp.grad(a).data()) v += g;
  });
}

// --- nonlinearities ----------------------------------------------------------

Var gelu(Tape& t, Var x) {
  Array out = t.value(x);
  for (double& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return t.push(std::move(out), {x}, [x, o = t.size()](Tape& tp) {
    const Array& X = tp.value(x);
    const Array& G = tp.grad(Var{o});
    Array& gx = tp.grad(x);
    const bool fault = diagnostics::gelu_grad_fault();
    constexpr double kInvSqrt2Pi = 0.3989422804014327;
    for (std::size_t i = 0; i < X.size(); ++i) {
      const double v = X[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      // The faulty variant drops the x * pdf term and doubles the rest.
      const double d = fault ? 2.0 * cdf : cdf + v * pdf;
      gx[i] += G[i] * d;
    }
  });
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps) {
  const Array& X = t.value(x);
  const Array& Gn = t.value(gain);
  const Array& Bs = t.value(bias);
  const std::size_t m = X.rows(), n = X.cols();
  if (Gn.size() != n || Bs.size() != n) shape_fail("layer_norm", X, Gn);
  Array xhat(X.shape());
  std::vector<double> inv_std(m);
  Array out(X.shape());
  for (std::size_t r = 0; r < m; ++r) {
    auto row = X.row_span(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (row[c] - mean) * inv_std[r];
      xhat.at(r, c) = h;
      out.at(r, c) = h * Gn[c] + Bs[c];
    }
  }
  return t.push(std::move(out), {x, gain, bias},
                [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), o = t.size()](Tape& tp) {
                  const Array& G = tp.grad(Var{o});
                  const Array& Gn = tp.value(gain);
                  const std::size_t m = G.rows(), n = G.cols();
                  if (tp.requires_grad(gain)) {
                    Array& gg = tp.grad(gain);
                    for (std::size_t r = 0; r < m; ++r)
                      for (std::size_t c = 0; c < n; ++c) gg[c] += G.at(r, c) * xhat.at(r, c);
                  }
                  if (tp.requires_grad(bias)) {
                    Array& gb = tp.grad(bias);
                    for (std::size_t r = 0; r < m; ++r) K().axpy(1.0, G.ptr() + r * n, gb.ptr(), n);
                  }
                  if (tp.requires_grad(x)) {
                    Array& gx = tp.grad(x);
                    std::vector<double> dh(n);
                    for (std::size_t r = 0; r < m; ++r) {
                      double mean_dh = 0.0, mean_dh_h = 0.0;
                      for (std::size_t c = 0; c < n; ++c) {
                        dh[c] = G.at(r, c) * Gn[c];
                        mean_dh += dh[c];
                        mean_dh_h += dh[c] * xhat.at(r, c);
                      }
                      mean_dh /= static_cast<double>(n);
                      mean_dh_h /= static_cast<double>(n);
                      for (std::size_t c = 0; c < n; ++c) {
                        gx.at(r, c) += inv_std[r] * (dh[c] - mean_dh - xhat.at(r, c) * mean_dh_h);
                      }
                    }
                  }
                });
}

namespace {

// Shared backward for (masked) row softmax: dx = p * (g - <g, p>).
void softmax_backward(const Array& P, const Array& G, Array& gx) {
  const std::size_t m = P.rows(), n = P.cols();
  for (std::size_t r = 0; r < m; ++r) {
    const double* p = P.ptr() + r * n;
    const double* g = G.ptr() + r * n;
    const double inner = K().dot(p, g, n);
    double* d = gx.ptr() + r * n;
    for (std::size_t c = 0; c < n; ++c) d[c] += p[c] * (g[c] - inner);
  }
}

}  // namespace

Var softmax_rows(Tape& t, Var x) {
  const Array& X = t.value(x);
  Array out(X.shape());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    Array row = softmax_row_values(X.row_span(r));
    std::copy(row.data().begin(), row.data().end(), out.row_span(r).begin());
  }
  return t.push(std::move(out), {x}, [x, o = t.size()](Tape& tp) {
    softmax_backward(tp.value(Var{o}), tp.grad(Var{o}), tp.grad(x));
  });
}

namespace {

Array masked_softmax_values(const Array& X, const AttentionMask& mask) {
  const std::size_t m = X.rows(), n = X.cols();
  if (mask.n != n || m != n) throw ShapeError("attention mask of size " + std::to_string(mask.n) + " does not fit scores " + X.shape_str());
  Array out(X.shape());
  for (std::size_t r = 0; r < m; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c)
      if (mask.ok(r, c)) mx = std::max(mx, X.at(r, c));
    if (!std::isfinite(mx)) throw ContractError("attention row " + std::to_string(r) + " has no visible positions");
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      if (!mask.ok(r, c)) continue;
      const double e = std::exp(X.at(r, c) - mx);
      out.at(r, c) = e;
      total += e;
    }
    for (std::size_t c = 0; c < n; ++c) out.at(r, c) /= total;
  }
  return out;
}

}  // namespace

Var masked_softmax_rows(Tape& t, Var x, const AttentionMask& mask) {
  Array out = masked_softmax_values(t.value(x), mask);
  return t.push(std::move(out), {x}, [x, o = t.size()](Tape& tp) {
    softmax_backward(tp.value(Var{o}), tp.grad(Var{o}), tp.grad(x));
  });
}

// --- indexing / reshaping ----------------------------------------------------

Var embedding_lookup(Tape& t, Var table, std::span<const std::size_t> ids) {
  const Array& T = t.value(table);
  const std::size_t d = T.cols();
  Array out(mat_shape(ids.size(), d));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= T.rows()) {
      throw ContractError("embedding id " + std::to_string(ids[i]) + " out of range for table " + T.shape_str());
    }
    std::copy_n(T.ptr() + ids[i] * d, d, out.ptr() + i * d);
  }
  std::vector<std::size_t> saved(ids.begin(), ids.end());
  return t.push(std::move(out), {table}, [table, saved = std::move(saved), o = t.size()](Tape& tp) {
    const Array& G = tp.grad(Var{o});
    Array& gt = tp.grad(table);
    const std::size_t d = G.cols();
    for (std::size_t i = 0; i < saved.size(); ++i) K().axpy(1.0, G.ptr() + i * d, gt.ptr() + saved[i] * d, d);
  });
}

Var concat_last(Tape& t, std::span<const Var> xs) {
  if (xs.empty()) throw ContractError("concat_last of nothing");
  const std::size_t m = t.value(xs[0]).rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (Var v : xs) {
    const Array& A = t.value(v);
    if (A.rows() != m) shape_fail("concat_last", t.value(xs[0]), A);
    widths.push_back(A.cols());
    total += A.cols();
  }
  Array out(mat_shape(m, total));
  std::size_t off = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Array& A = t.value(xs[k]);
    for (std::size_t r = 0; r < m; ++r) std::copy_n(A.ptr() + r * widths[k], widths[k], out.ptr() + r * total + off);
    off += widths[k];
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  return t.push(std::move(out), xs, [inputs, widths = std::move(widths), total, o = t.size()](Tape& tp) {
    const Array& G = tp.grad(Var{o});
    std::size_t off = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (tp.requires_grad(inputs[k])) {
        Array& gk = tp.grad(inputs[k]);
        for (std::size_t r = 0; r < G.rows(); ++r)
          K().axpy(1.0, G.ptr() + r * total + off, gk.ptr() + r * widths[k], widths[k]);
      }
      off += widths[k];
    }
  });
}

Var concat_rows(Tape& t, std::span<const Var> xs) {
  if (xs.empty()) throw ContractError("concat_rows of nothing");
  const std::size_t n = t.value(xs[0]).cols();
  std::size_t rows = 0;
  for (Var v : xs) {
    const Array& A = t.value(v);
    if (A.cols() != n && A.size() != 0) shape_fail("concat_rows", t.value(xs[0]), A);
    rows += A.size() == 0 ? 0 : A.rows();
  }
  Array out(mat_shape(rows, n));
  std::size_t off = 0;
  for (Var v : xs) {
    const Array& A = t.value(v);
    std::copy(A.data().begin(), A.data().end(), out.ptr() + off);
    off += A.size();
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  return t.push(std::move(out), xs, [inputs, o = t.size()](Tape& tp) {
    const Array& G = tp.grad(Var{o});
    std::size_t off = 0;
    for (Var v : inputs) {
      const std::size_t len = tp.value(v).size();
      if (tp.requires_grad(v) && len) K().axpy(1.0, G.ptr() + off, tp.grad(v).ptr(), len);
      off += len;
    }
  });
}

Var slice_rows(Tape& t, Var x, std::size_t begin, std::size_t end) {
  const Array& X = t.value(x);
  if (begin > end || end > X.rows()) {
    throw ShapeError("slice_rows [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " + X.shape_str());
  }
  const std::size_t n = X.cols();
  Array out(mat_shape(end - begin, n));
  std::copy_n(X.ptr() + begin * n, (end - begin) * n, out.ptr());
  return t.push(std::move(out), {x}, [x, begin, o = t.size()](Tape& tp) {
    const Array& G = tp.grad(Var{o});
    Array& gx = tp.grad(x);
    K().axpy(1.0, G.ptr(), gx.ptr() + begin * G.cols(), G.size());
  });
}

// --- attention ---------------------------------------------------------------

namespace {

Array take_head(const Array& X, std::size_t h, std::size_t dh) {
  const std::size_t n = X.rows(), d = X.cols();
  Array out(mat_shape(n, dh));
  for (std::size_t r = 0; r < n; ++r) std::copy_n(X.ptr() + r * d + h * dh, dh, out.ptr() + r * dh);
  return out;
}

void put_head(Array& X, const Array& part, std::size_t h, std::size_t dh) {
  const std::size_t n = X.rows(), d = X.cols();
  for (std::size_t r = 0; r < n; ++r) K().axpy(1.0, part.ptr() + r * dh, X.ptr() + r * d + h * dh, dh);
}

}  // namespace

Var multi_head_attention(Tape& t, Var q, Var k, Var v, const AttentionMask& mask, std::size_t n_heads,
                         std::vector<Array>* probs_out) {
  const Array& Q = t.value(q);
  const Array& Kx = t.value(k);
  const Array& V = t.value(v);
  const std::size_t n = Q.rows(), d = Q.cols();
  if (!Q.same_shape(Kx) || !Q.same_shape(V)) shape_fail("multi_head_attention", Q, Kx);
  if (n_heads == 0 || d % n_heads != 0) {
    throw ShapeError("model width " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) + " heads");
  }
  if (mask.n != n) throw ShapeError("attention mask size " + std::to_string(mask.n) + " != sequence length " + std::to_string(n));
  const std::size_t dh = d / n_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Array> probs;
  probs.reserve(n_heads);
  Array out(mat_shape(n, d));
  for (std::size_t h = 0; h < n_heads; ++h) {
    Array qh = take_head(Q, h, dh), kh = take_head(Kx, h, dh), vh = take_head(V, h, dh);
    Array scores(mat_shape(n, n));
    K().gemm_nt(n, n, dh, qh.ptr(), kh.ptr(), scores.ptr());
    for (double& s : scores.data()) s *= inv_scale;
    Array p = masked_softmax_values(scores, mask);
    Array oh(mat_shape(n, dh));
    K().gemm_nn(n, dh, n, p.ptr(), vh.ptr(), oh.ptr());
    put_head(out, oh, h, dh);
    probs.push_back(std::move(p));
  }
  if (probs_out) probs_out->insert(probs_out->end(), probs.begin(), probs.end());
  return t.push(std::move(out), {q, k, v},
                [q, k, v, n_heads, dh, inv_scale, probs = std::move(probs), o = t.size()](Tape& tp) {
                  const Array& G = tp.grad(Var{o});
                  const Array& Q = tp.value(q);
                  const Array& Kx = tp.value(k);
                  const Array& V = tp.value(v);
                  const std::size_t n = Q.rows();
                  const bool need_q = tp.requires_grad(q), need_k = tp.requires_grad(k), need_v = tp.requires_grad(v);
                  for (std::size_t h = 0; h < n_heads; ++h) {
                    const Array& P = probs[h];
                    Array gh = take_head(G, h, dh);
                    Array vh = take_head(V, h, dh);
                    if (need_v) {
                      Array gv(mat_shape(n, dh));
                      K().gemm_tn(n, dh, n, P.ptr(), gh.ptr(), gv.ptr());
                      put_head(tp.grad(v), gv, h, dh);
                    }
                    if (!need_q && !need_k) continue;
                    Array gp(mat_shape(n, n));
                    K().gemm_nt(n, n, dh, gh.ptr(), vh.ptr(), gp.ptr());
                    Array gs(mat_shape(n, n));
                    softmax_backward(P, gp, gs);
                    for (double& s : gs.data()) s *= inv_scale;
                    if (need_q) {
                      Array kh = take_head(Kx, h, dh);
                      Array gq(mat_shape(n, dh));
                      K().gemm_nn(n, dh, n, gs.ptr(), kh.ptr(), gq.ptr());
                      put_head(tp.grad(q), gq, h, dh);
                    }
                    if (need_k) {
                      Array qh = take_head(Q, h, dh);
                      Array gk(mat_shape(n, dh));
                      K().gemm_tn(n, dh, n, gs.ptr(), qh.ptr(), gk.ptr());
                      put_head(tp.grad(k), gk, h, dh);
                    }
                  }
                });
}

// --- losses ------------------------------------------------------------------

Var soft_cross_entropy(Tape& t, Var logits, const Array& targets) {
  const Array& Z = t.value(logits);
  if (!Z.same_shape(targets) && !(Z.rows() == targets.rows() && Z.cols() == targets.cols())) {
    shape_fail("soft_cross_entropy", Z, targets);
  }
  const std::size_t m = Z.rows(), n = Z.cols();
  Array probs(mat_shape(m, n));
  std::vector<double> target_mass(m, 0.0);
  double loss = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    auto z = Z.row_span(r);
    const double mx = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double v : z) total += std::exp(v - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < n; ++c) {
      probs.at(r, c) = std::exp(z[c] - lse);
      const double w = targets.at(r, c);
      if (w != 0.0) {
        loss -= w * (z[c] - lse);
        target_mass[r] += w;
      }
    }
  }
  return t.push(Array::scalar(loss), {logits},
                [logits, targets, probs = std::move(probs), target_mass = std::move(target_mass), o = t.size()](Tape& tp) {
                  const double g = tp.grad(Var{o})[0];
                  Array& gz = tp.grad(logits);
                  for (std::size_t r = 0; r < probs.rows(); ++r) {
                    if (target_mass[r] == 0.0) continue;
                    for (std::size_t c = 0; c < probs.cols(); ++c) {
                      gz.at(r, c) += g * (target_mass[r] * probs.at(r, c) - targets.at(r, c));
                    }
                  }
                });
}

}  // namespace logos
