#pragma once

// Dense float64 tensors and a tape-based reverse-mode differentiator.
//
// Every value is a row-major 2-D tensor. Vectors are 1 x d rows and scalars
// are 1 x 1. A Tape records each primitive op together with a closure that
// propagates the output gradient into its inputs; Tape::backward walks the
// record in reverse insertion order, which is a valid reverse topological
// order because an op can only reference nodes created before it.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cmwm {

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor row(std::span<const double> values);
  static Tensor row(std::initializer_list<double> values);
  static Tensor scalar(double value) { return Tensor(1, 1, value); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool same_shape(const Tensor& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double* row_ptr(std::size_t r) noexcept { return data_.data() + r * cols_; }
  const double* row_ptr(std::size_t r) const noexcept { return data_.data() + r * cols_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  // Value of a 1 x 1 tensor.
  double item() const;
  bool all_finite() const noexcept;
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Named trainable tensors. Indices are stable for the lifetime of the store.
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor value);
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t parameter_count() const noexcept;
  std::optional<std::size_t> find(std::string_view name) const;

  Tensor& operator[](std::size_t i) { return values_[i]; }
  const Tensor& operator[](std::size_t i) const { return values_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const { return value().item(); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // With record_gradients = false no backward closures are kept, which is the
  // inference mode used by rollouts.
  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }

  Var constant(Tensor value);
  Var variable(Tensor value);

  // Parameters are referenced without copying; the store must outlive the
  // tape and must not be mutated while the tape is in use.
  void bind(const ParamStore& params);
  Var param(std::size_t index);

  // Reverse pass from a 1 x 1 node. Gradients accumulate additively, so
  // calling backward twice on one tape sums both passes.
  void backward(Var loss);

  // Gradient of a node after backward; a zero tensor if the node was unreached.
  Tensor grad(Var v) const;
  // One gradient per bound parameter, aligned with the store; zero for
  // parameters not on the path to the loss.
  std::vector<Tensor> param_grads() const;

  std::size_t node_count() const noexcept { return nodes_.size(); }

  // --- op authoring interface ---
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;
  Var push(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  Var push(Tensor value, std::span<const Var> parents, BackwardFn fn);
  const Tensor& value(std::size_t id) const;
  const Tensor& grad_ref(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of a node, zero-initialised on first use.
  Tensor& grad_buffer(std::size_t id);

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  bool record_;
  std::vector<Node> nodes_;
  const ParamStore* params_ = nullptr;
  std::vector<std::optional<std::size_t>> param_nodes_;
};

// --- primitives ---

// x (n x in) . W^T (in -> out) + b (1 x out), giving n x out.
Var affine(Var x, Var weight, Var bias);
// a (n x k) . b (k x m)
Var matmul(Var a, Var b);
// a (n x k) . b^T where b is (m x k)
Var matmul_nt(Var a, Var b);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var add_scalar(Var x, double offset);

Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
// Stacks row blocks with equal column count.
Var concat_rows(std::span<const Var> parts);

Var sigmoid(Var x);
Var tanh(Var x);
// Exact (erf-based) GELU.
Var gelu(Var x);
Var cos(Var x);
Var sin(Var x);
Var square(Var x);

Var sum(Var x);
Var mean(Var x);
// Column means over rows: n x m -> 1 x m.
Var mean_rows(Var x);

// Identity on the forward pass, blocks the gradient.
Var detach(Var x);

// Mean over entries of 0.5 r^2 / beta if |r| < beta, else |r| - 0.5 beta.
Var smooth_l1(Var residual, double beta = 1.0);
// Mean over entries of 0.5 r^2 if |r| <= delta, else delta (|r| - 0.5 delta).
Var huber(Var residual, double delta);
// Mean over entries of max(0, |r| - delta)^2.
Var hinge_squared(Var residual, double delta);

// Inverted dropout; identity when rate == 0.
Var dropout(Var x, double rate, std::mt19937_64& rng);

struct GruWeights {
  Var reset_w, reset_b;
  Var update_w, update_b;
  Var cand_w, cand_b;
};

// One GRU step:
//   r = sigmoid(W_r [in; h] + b_r), u = sigmoid(W_u [in; h] + b_u)
//   c = tanh(W_c [in; r*h] + b_c),  h' = (1 - u) * h + u * c
// computed as h + u * (c - h).
Var gru_step(Var h_prev, Var input, const GruWeights& w);

// Scalar closed forms mirroring the vector losses, for tests and reporting.
double smooth_l1_value(double r, double beta = 1.0);
double huber_value(double r, double delta);
double hinge_squared_value(double r, double delta);

}  // namespace cmwm
