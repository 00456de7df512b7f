#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace promos::ad {

/// Dense row-major tensor of doubles. Everything the model needs is rank 1 or 2;
/// a rank-1 tensor is treated as a single row by the matrix accessors.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor scalar(double v);
  static Tensor row(std::vector<double> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t rows() const;
  std::size_t cols() const;
  bool is_scalar() const { return data_.size() == 1; }
  double item() const;

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row_span(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_string() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  std::size_t cols_ = 0;
};

/// Bitwise equality (distinguishes -0.0 from 0.0 and compares NaN payloads).
bool bitwise_equal(const Tensor& a, const Tensor& b);

/// Square CSR matrix with real weights; used for graph propagation.
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> offsets;  // rows + 1
  std::vector<std::uint32_t> indices;
  std::vector<double> values;

  Tensor multiply(const Tensor& dense) const;
  Tensor transpose_multiply(const Tensor& dense) const;
};

/// A trainable tensor owned by a model. Gradients are keyed by its address.
struct Parameter {
  std::string name;
  Tensor value;
};

enum class OpKind {
  Constant,
  Parameter,
  StopGradient,
  MatMul,
  MatMulNT,
  Add,
  Sub,
  Mul,
  MulConst,
  AddBias,
  Scale,
  Relu,
  Exp,
  Log,
  Sigmoid,
  RowSoftmax,
  RowLogSoftmax,
  RowLogSumExp,
  Sum,
  RowSum,
  ColMean,
  MulCol,
  PairwiseSqDist,
  GatherRows,
  ScatterRows,
  Column,
  Propagate,
  RowNormalize,
};

const char* op_name(OpKind kind);

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Gradients {
 public:
  bool contains(const Parameter& p) const { return grads_.count(&p) != 0; }
  const Tensor& of(const Parameter& p) const;
  void set(const Parameter& p, Tensor g) { grads_[&p] = std::move(g); }
  std::size_t size() const { return grads_.size(); }
  double squared_norm() const;

 private:
  std::unordered_map<const Parameter*, Tensor> grads_;
};

/// Explicit tape: nodes are appended in forward order, so indices are already a
/// topological order and backward is a single reverse sweep.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  struct Node {
    OpKind kind = OpKind::Constant;
    std::vector<int> parents;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    const Parameter* param = nullptr;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(const Parameter& p);

  /// Reverse sweep from a scalar loss. Every parameter leaf on the tape gets an
  /// entry; leaves off the loss path get exact zeros.
  Gradients backward(Var loss);

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  // Op construction interface.
  Var push(OpKind kind, std::vector<int> parents, Tensor value, BackwardFn backward);
  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  Tensor& grad(int id);

 private:
  std::vector<Node> nodes_;
};

// Stop-gradient: identity forward, no contribution backward.
Var stop_gradient(Var a);

Var matmul(Var a, Var b);     // (n×k)(k×m)
Var matmul_nt(Var a, Var b);  // (n×k)(m×k)^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var mul_const(Var a, const Tensor& c);
Var add_bias(Var a, Var bias);  // bias is 1×m, added to every row
Var scale(Var a, double c);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);  // input clamped at kLogFloor
Var sigmoid(Var a);
Var row_softmax(Var a);
Var row_log_softmax(Var a);
Var row_logsumexp(Var a);  // n×1
Var sum(Var a);            // 1×1
Var mean(Var a);           // 1×1
Var row_sum(Var a);        // n×1
Var col_mean(Var a);       // 1×m
Var mul_col(Var a, Var c);  // row i of a scaled by c[i]; c is n×1
Var pairwise_sq_dist(Var a, Var b);  // n×m, entry (i,j) = ||a_i - b_j||^2
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var scatter_rows(Var a, std::span<const std::size_t> rows, std::size_t out_rows);
Var column(Var a, std::size_t j);  // n×1
Var propagate(std::shared_ptr<const SparseMatrix> s, Var h);
Var row_normalize(Var a);

inline constexpr double kLogFloor = 1e-30;

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double eps);

}  // namespace promos::ad
