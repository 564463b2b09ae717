#pragma once

// Minimal reverse-mode differentiable array engine.
//
// Values are 64-bit, row-major arrays of rank 0..2. Every operation records a
// node on a Tape; Tape::backward replays the nodes in reverse creation order,
// which is a valid reverse topological order because inputs always precede
// their consumers. Parameters live in a ParameterStore and enter a tape as
// read-only leaves; their gradients are collected per tape and copied out by
// the caller, so a model can be evaluated from several threads at once.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace logos {

using Shape = std::vector<std::size_t>;

class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> data);

  static Array scalar(double v);
  static Array matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
  static Array row(std::span<const double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  // Rank-1 arrays are treated as a single row; rank-0 as 1x1.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  void fill(double v);
  bool same_shape(const Array& other) const { return shape_ == other.shape_; }
  std::string shape_str() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::string shape_str(const Shape& shape);

struct Parameter {
  std::string name;
  Array value;
  std::size_t index = 0;
};

// Owns named parameters with stable addresses, in registration order.
class ParameterStore {
 public:
  Parameter& add(std::string name, Array init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

// Gradient buffers aligned with a ParameterStore.
class Gradients {
 public:
  explicit Gradients(const ParameterStore& store);

  Array& operator[](std::size_t i) { return grads_[i]; }
  const Array& operator[](std::size_t i) const { return grads_[i]; }
  std::size_t size() const { return grads_.size(); }
  void zero();
  void scale(double s);

 private:
  std::vector<Array> grads_;
};

struct Var {
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::size_t id = kNone;
  bool valid() const { return id != kNone; }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Array value);
  // Read-only leaf bound to a parameter; repeated calls return the same node.
  Var param(const Parameter& p);

  const Array& value(Var v) const;
  // Gradient buffer of a node, zero-allocated on first use.
  Array& grad(Var v);
  bool has_grad(Var v) const;
  bool requires_grad(Var v) const;
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // Appends an operation result. `inputs` decide whether the node takes part
  // in differentiation; `fn` runs during backward with this node's gradient
  // available through grad(result).
  Var push(Array value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var push(Array value, std::span<const Var> inputs, BackwardFn fn);

  // Reverse sweep from a scalar loss. `seed` is dLoss_total/dloss.
  void backward(Var loss, double seed = 1.0);

  // Adds the gradient of every parameter leaf into `out`.
  void accumulate_into(Gradients& out) const;

 private:
  struct Node {
    Array value;
    const Parameter* param = nullptr;
    Array grad;
    bool grad_ready = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  const Node& node(Var v) const;
  Node& node(Var v);

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

// Diagnostic switch that corrupts the GELU derivative; used only to prove the
// gradient checker catches a broken backward pass.
namespace diagnostics {
void set_gelu_grad_fault(bool enabled);
bool gelu_grad_fault();
}  // namespace diagnostics

// Square attention mask; allowed[r * n + c] != 0 means row r may attend to c.
struct AttentionMask {
  std::size_t n = 0;
  std::vector<std::uint8_t> allowed;

  static AttentionMask full(std::size_t n);
  bool ok(std::size_t r, std::size_t c) const { return allowed[r * n + c] != 0; }
};

// --- operations --------------------------------------------------------------

Var matmul(Tape& t, Var a, Var b);
// a * b^T
Var matmul_nt(Tape& t, Var a, Var b);
// x * w + bias (bias broadcast over rows; pass an invalid Var for none)
Var linear(Tape& t, Var x, Var w, Var bias);
Var add(Tape& t, Var a, Var b);
// Adds a 1 x n row to every row of a.
Var add_row(Tape& t, Var a, Var row);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var sum(Tape& t, Var a);

Var gelu(Tape& t, Var x);
Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps = 1e-5);
Var softmax_rows(Tape& t, Var x);
// Softmax restricted to allowed entries; masked entries are exactly zero.
Var masked_softmax_rows(Tape& t, Var x, const AttentionMask& mask);

Var embedding_lookup(Tape& t, Var table, std::span<const std::size_t> ids);
Var concat_last(Tape& t, std::span<const Var> xs);
Var concat_rows(Tape& t, std::span<const Var> xs);
Var slice_rows(Tape& t, Var x, std::size_t begin, std::size_t end);

// Scaled dot-product attention over n_heads column groups of q, k, v. When
// `probs_out` is given, the per-head attention matrices are appended to it.
Var multi_head_attention(Tape& t, Var q, Var k, Var v, const AttentionMask& mask,
                         std::size_t n_heads, std::vector<Array>* probs_out = nullptr);

// Sum over rows of -sum_j target_ij * log_softmax(logits)_ij. Each target row
// must be a probability vector (or all zero, which contributes nothing).
Var soft_cross_entropy(Tape& t, Var logits, const Array& targets);

// Plain (non-recorded) helpers shared by model code and tests.
Array softmax_row_values(std::span<const double> logits);
Array matmul_values(const Array& a, const Array& b);

}  // namespace logos
