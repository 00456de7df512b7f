#include "promos/autodiff.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "promos/error.hpp"

namespace promos::ad {

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  std::size_t n = 1;
  for (auto s : shape_) n *= s;
  data_.assign(n, fill);
  cols_ = shape_.empty() ? 1 : shape_.back();
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  std::size_t n = 1;
  for (auto s : shape_) n *= s;
  if (n != data_.size()) {
    throw std::invalid_argument("Tensor: shape " + shape_string() + " does not match " +
                                std::to_string(data_.size()) + " values");
  }
  cols_ = shape_.empty() ? 1 : shape_.back();
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
  return Tensor({rows, cols}, fill);
}

Tensor Tensor::scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw std::invalid_argument("Tensor::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t = matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.size() > 2) throw std::invalid_argument("Tensor: rank > 2 has no matrix view");
  return shape_.size() == 2 ? shape_[0] : 1;
}

std::size_t Tensor::cols() const {
  if (shape_.size() > 2) throw std::invalid_argument("Tensor: rank > 2 has no matrix view");
  return shape_.empty() ? 1 : shape_.back();
}

double Tensor::item() const {
  if (data_.size() != 1) throw std::invalid_argument("Tensor::item on " + shape_string());
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
  os << ']';
  return os.str();
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return a.size() == 0 ||
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

// ---------------------------------------------------------------- SparseMatrix

Tensor SparseMatrix::multiply(const Tensor& dense) const {
  if (dense.rows() != cols) throw std::invalid_argument("SparseMatrix::multiply: shape mismatch");
  const std::size_t m = dense.cols();
  Tensor out = Tensor::matrix(rows, m);
  for (std::size_t r = 0; r < rows; ++r) {
    auto dst = out.row_span(r);
    for (std::size_t e = offsets[r]; e < offsets[r + 1]; ++e) {
      const double w = values[e];
      auto src = dense.row_span(indices[e]);
      for (std::size_t j = 0; j < m; ++j) dst[j] += w * src[j];
    }
  }
  return out;
}

Tensor SparseMatrix::transpose_multiply(const Tensor& dense) const {
  if (dense.rows() != rows) {
    throw std::invalid_argument("SparseMatrix::transpose_multiply: shape mismatch");
  }
  const std::size_t m = dense.cols();
  Tensor out = Tensor::matrix(cols, m);
  for (std::size_t r = 0; r < rows; ++r) {
    auto src = dense.row_span(r);
    for (std::size_t e = offsets[r]; e < offsets[r + 1]; ++e) {
      const double w = values[e];
      auto dst = out.row_span(indices[e]);
      for (std::size_t j = 0; j < m; ++j) dst[j] += w * src[j];
    }
  }
  return out;
}

// ---------------------------------------------------------------- Var / Gradients

const Tensor& Var::value() const { return tape_->value(id_); }

bool Var::requires_grad() const { return tape_->needs_grad(id_); }

const Tensor& Gradients::of(const Parameter& p) const {
  auto it = grads_.find(&p);
  if (it == grads_.end()) throw std::out_of_range("Gradients: parameter '" + p.name + "' not on tape");
  return it->second;
}

double Gradients::squared_norm() const {
  double s = 0.0;
  for (const auto& [p, g] : grads_)
    for (double v : g.data()) s += v * v;
  return s;
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Parameter: return "parameter";
    case OpKind::StopGradient: return "stop_gradient";
    case OpKind::MatMul: return "matmul";
    case OpKind::MatMulNT: return "matmul_nt";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::MulConst: return "mul_const";
    case OpKind::AddBias: return "add_bias";
    case OpKind::Scale: return "scale";
    case OpKind::Relu: return "relu";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::RowSoftmax: return "row_softmax";
    case OpKind::RowLogSoftmax: return "row_log_softmax";
    case OpKind::RowLogSumExp: return "row_logsumexp";
    case OpKind::Sum: return "sum";
    case OpKind::RowSum: return "row_sum";
    case OpKind::ColMean: return "col_mean";
    case OpKind::MulCol: return "mul_col";
    case OpKind::PairwiseSqDist: return "pairwise_sq_dist";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::ScatterRows: return "scatter_rows";
    case OpKind::Column: return "column";
    case OpKind::Propagate: return "propagate";
    case OpKind::RowNormalize: return "row_normalize";
  }
  return "unknown";
}

// ---------------------------------------------------------------- Tape

Var Tape::constant(Tensor value) { return push(OpKind::Constant, {}, std::move(value), nullptr); }

Var Tape::parameter(const Parameter& p) {
  Var v = push(OpKind::Parameter, {}, p.value, nullptr);
  auto& node = nodes_.back();
  node.requires_grad = true;
  node.param = &p;
  return v;
}

Var Tape::push(OpKind kind, std::vector<int> parents, Tensor value, BackwardFn backward) {
  const int id = static_cast<int>(nodes_.size());
  bool needs = false;
  for (int p : parents) {
    if (p < 0 || p >= id) throw std::logic_error("Tape: parent does not precede node (cycle)");
    needs = needs || nodes_[static_cast<std::size_t>(p)].requires_grad;
  }
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op_name(kind) + " " +
                       value.shape_string());
  }
  Node node;
  node.kind = kind;
  node.parents = std::move(parents);
  node.value = std::move(value);
  node.requires_grad = needs;
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, id);
}

Tensor& Tape::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

Gradients Tape::backward(Var loss) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
  const auto root = static_cast<std::size_t>(loss.id());
  if (!nodes_[root].value.is_scalar()) {
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                nodes_[root].value.shape_string());
  }
  for (auto& n : nodes_) n.grad = Tensor();
  if (nodes_[root].requires_grad) grad(loss.id())[0] = 1.0;

  for (std::size_t k = root + 1; k-- > 0;) {
    Node& n = nodes_[k];
    for (int p : n.parents) {
      if (static_cast<std::size_t>(p) >= k) throw std::logic_error("backward: cycle detected");
    }
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, n.grad);
  }

  Gradients out;
  std::unordered_map<const Parameter*, Tensor> acc;
  std::vector<const Parameter*> order;
  for (auto& n : nodes_) {
    if (n.kind != OpKind::Parameter) continue;
    Tensor g = n.grad.empty() ? Tensor(n.value.shape(), 0.0) : n.grad;
    if (!g.all_finite()) throw NumericError("non-finite gradient for parameter '" + n.param->name + "'");
    auto it = acc.find(n.param);
    if (it == acc.end()) {
      acc.emplace(n.param, std::move(g));
      order.push_back(n.param);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
    }
  }
  for (const auto* p : order) out.set(*p, std::move(acc[p]));
  return out;
}

// ---------------------------------------------------------------- Helpers

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("op on invalid Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw std::invalid_argument("op mixes vars from different tapes");
  return t;
}

void require(bool cond, const char* op, const Tensor& a, const Tensor& b) {
  if (!cond) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                                b.shape_string());
  }
}

Tensor as_matrix(const Tensor& t) { return Tensor({t.rows(), t.cols()}, t.data()); }

// out += a * b
void gemm_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.data().data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      const double* br = b.data().data() + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
}

// out += a * b^T
void gemm_nt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const double* ar = a.data().data() + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* br = b.data().data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      out(i, j) += s;
    }
  }
}

// out += a^T * b
void gemm_tn_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const double* br = b.data().data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      double* o = out.data().data() + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
}

template <class F>
Var unary(OpKind kind, Var a, Tensor value, F&& backward_elem) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(kind, {ia}, std::move(value),
                [ia, backward_elem = std::forward<F>(backward_elem)](Tape& tp, const Tensor& g) {
                  if (!tp.needs_grad(ia)) return;
                  backward_elem(tp, g, tp.grad(ia));
                });
}

}  // namespace

// ---------------------------------------------------------------- Ops

Var stop_gradient(Var a) {
  Tape& t = tape_of(a);
  Var out = t.push(OpKind::StopGradient, {}, a.value(), nullptr);
  return out;
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.cols() == B.rows(), "matmul", A, B);
  Tensor out = Tensor::matrix(A.rows(), B.cols());
  gemm_acc(A, B, out);
  const int ia = a.id(), ib = b.id();
  return t.push(OpKind::MatMul, {ia, ib}, std::move(out), [ia, ib](Tape& tp, const Tensor& g) {
    if (tp.needs_grad(ia)) gemm_nt_acc(g, tp.value(ib), tp.grad(ia));
    if (tp.needs_grad(ib)) gemm_tn_acc(tp.value(ia), g, tp.grad(ib));
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.cols() == B.cols(), "matmul_nt", A, B);
  Tensor out = Tensor::matrix(A.rows(), B.rows());
  gemm_nt_acc(A, B, out);
  const int ia = a.id(), ib = b.id();
  return t.push(OpKind::MatMulNT, {ia, ib}, std::move(out), [ia, ib](Tape& tp, const Tensor& g) {
    if (tp.needs_grad(ia)) gemm_acc(g, tp.value(ib), tp.grad(ia));
    if (tp.needs_grad(ib)) gemm_tn_acc(g, tp.value(ia), tp.grad(ib));
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.value().same_shape(b.value()), "add", a.value(), b.value());
  Tensor out = a.value();
  const auto& bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const int ia = a.id(), ib = b.id();
  return t.push(OpKind::Add, {ia, ib}, std::move(out), [ia, ib](Tape& tp, const Tensor& g) {
    for (int id : {ia, ib}) {
      if (!tp.needs_grad(id)) continue;
      Tensor& d = tp.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.value().same_shape(b.value()), "sub", a.value(), b.value());
  Tensor out = a.value();
  const auto& bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const int ia = a.id(), ib = b.id();
  return t.push(OpKind::Sub, {ia, ib}, std::move(out), [ia, ib](Tape& tp, const Tensor& g) {
    if (tp.needs_grad(ia)) {
      Tensor& d = tp.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (tp.needs_grad(ib)) {
      Tensor& d = tp.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.value().same_shape(b.value()), "mul", a.value(), b.value());
  Tensor out = a.value();
  const auto& bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const int ia = a.id(), ib = b.id();
  return t.push(OpKind::Mul, {ia, ib}, std::move(out), [ia, ib](Tape& tp, const Tensor& g) {
    if (tp.needs_grad(ia)) {
      Tensor& d = tp.grad(ia);
      const Tensor& bv = tp.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (tp.needs_grad(ib)) {
      Tensor& d = tp.grad(ib);
      const Tensor& av = tp.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

Var mul_const(Var a, const Tensor& c) {
  require(a.value().size() == c.size() && a.rows() == c.rows(), "mul_const", a.value(), c);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
  auto cc = std::make_shared<Tensor>(c);
  return unary(OpKind::MulConst, a, std::move(out), [cc](Tape&, const Tensor& g, Tensor& d) {
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (*cc)[i];
  });
}

Var add_bias(Var a, Var bias) {
  Tape& t = tape_of(a, bias);
  const Tensor& A = a.value();
  const Tensor& B = bias.value();
  require(B.rows() == 1 && B.cols() == A.cols(), "add_bias", A, B);
  Tensor out = as_matrix(A);
  const std::size_t m = A.cols();
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t j = 0; j < m; ++j) out(r, j) += B[j];
  const int ia = a.id(), ib = bias.id();
  return t.push(OpKind::AddBias, {ia, ib}, std::move(out), [ia, ib, m](Tape& tp, const Tensor& g) {
    if (tp.needs_grad(ia)) {
      Tensor& d = tp.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (tp.needs_grad(ib)) {
      Tensor& d = tp.grad(ib);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t j = 0; j < m; ++j) d[j] += g(r, j);
    }
  });
}

Var scale(Var a, double c) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= c;
  return unary(OpKind::Scale, a, std::move(out), [c](Tape&, const Tensor& g, Tensor& d) {
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += c * g[i];
  });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  const int ia = a.id();
  return unary(OpKind::Relu, a, std::move(out), [ia](Tape& tp, const Tensor& g, Tensor& d) {
    const Tensor& x = tp.value(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) d[i] += g[i];
  });
}

Var exp(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::exp(v);
  Tape& t = tape_of(a);
  const int ia = a.id();
  const int self = static_cast<int>(t.size());
  return t.push(OpKind::Exp, {ia}, std::move(out), [ia, self](Tape& tp, const Tensor& g) {
    if (!tp.needs_grad(ia)) return;
    Tensor& d = tp.grad(ia);
    const Tensor& y = tp.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i];
  });
}

Var log(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::log(std::max(v, kLogFloor));
  const int ia = a.id();
  return unary(OpKind::Log, a, std::move(out), [ia](Tape& tp, const Tensor& g, Tensor& d) {
    const Tensor& x = tp.value(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > kLogFloor) d[i] += g[i] / x[i];
  });
}

Var sigmoid(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = 1.0 / (1.0 + std::exp(-v));
  Tape& t = tape_of(a);
  const int ia = a.id();
  const int self = static_cast<int>(t.size());
  return t.push(OpKind::Sigmoid, {ia}, std::move(out), [ia, self](Tape& tp, const Tensor& g) {
    if (!tp.needs_grad(ia)) return;
    Tensor& d = tp.grad(ia);
    const Tensor& y = tp.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

namespace {

Tensor softmax_rows(const Tensor& x) {
  Tensor out = as_matrix(x);
  const std::size_t m = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = out.row_span(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (std::size_t j = 0; j < m; ++j) row[j] /= s;
  }
  return out;
}

}  // namespace

Var row_softmax(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  const int self = static_cast<int>(t.size());
  return t.push(OpKind::RowSoftmax, {ia}, softmax_rows(a.value()), [ia, self](Tape& tp, const Tensor& g) {
    if (!tp.needs_grad(ia)) return;
    Tensor& d = tp.grad(ia);
    const Tensor& y = tp.value(self);
    const std::size_t m = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += g(r, j) * y(r, j);
      for (std::size_t j = 0; j < m; ++j) d(r, j) += y(r, j) * (g(r, j) - dot);
    }
  });
}

Var row_log_softmax(Var a) {
  const Tensor& x = a.value();
  Tensor out = as_matrix(x);
  const std::size_t m = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = out.row_span(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < m; ++j) row[j] -= lse;
  }
  Tape& t = tape_of(a);
  const int ia = a.id();
  const int self = static_cast<int>(t.size());
  return t.push(OpKind::RowLogSoftmax, {ia}, std::move(out), [ia, self](Tape& tp, const Tensor& g) {
    if (!tp.needs_grad(ia)) return;
    Tensor& d = tp.grad(ia);
    const Tensor& y = tp.value(self);
    const std::size_t m = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < m; ++j) gs += g(r, j);
      for (std::size_t j = 0; j < m; ++j) d(r, j) += g(r, j) - std::exp(y(r, j)) * gs;
    }
  });
}

Var row_logsumexp(Var a) {
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out = Tensor::matrix(n, 1);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = x.row_span(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += std::exp(row[j] - mx);
    out[r] = mx + std::log(s);
  }
  Tape& t = tape_of(a);
  const int ia = a.id();
  const int self = static_cast<int>(t.size());
  return t.push(OpKind::RowLogSumExp, {ia}, std::move(out), [ia, self](Tape& tp, const Tensor& g) {
    if (!tp.needs_grad(ia)) return;
    Tensor& d = tp.grad(ia);
    const Tensor& x = tp.value(ia);
    const Tensor& y = tp.value(self);
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t j = 0; j < x.cols(); ++j) d(r, j) += g[r] * std::exp(x(r, j) - y[r]);
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return unary(OpKind::Sum, a, Tensor::scalar(s), [](Tape&, const Tensor& g, Tensor& d) {
    const double gv = g[0];
    for (double& v : d.data()) v += gv;
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var row_sum(Var a) {
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out = Tensor::matrix(n, 1);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += x(r, j);
    out[r] = s;
  }
  return unary(OpKind::RowSum, a, std::move(out), [m](Tape&, const Tensor& g, Tensor& d) {
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t j = 0; j < m; ++j) d(r, j) += g[r];
  });
}

Var col_mean(Var a) {
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out = Tensor::matrix(1, m);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < m; ++j) out[j] += x(r, j);
  const double inv = 1.0 / static_cast<double>(n);
  for (double& v : out.data()) v *= inv;
  return unary(OpKind::ColMean, a, std::move(out), [n, m, inv](Tape&, const Tensor& g, Tensor& d) {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < m; ++j) d(r, j) += g[j] * inv;
  });
}

Var mul_col(Var a, Var c) {
  Tape& t = tape_of(a, c);
  const Tensor& A = a.value();
  const Tensor& C = c.value();
  require(C.rows() == A.rows() && C.cols() == 1, "mul_col", A, C);
  Tensor out = as_matrix(A);
  const std::size_t m = A.cols();
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t j = 0; j < m; ++j) out(r, j) *= C[r];
  const int ia = a.id(), ic = c.id();
  return t.push(OpKind::MulCol, {ia, ic}, std::move(out), [ia, ic, m](Tape& tp, const Tensor& g) {
    const Tensor& A = tp.value(ia);
    const Tensor& C = tp.value(ic);
    if (tp.needs_grad(ia)) {
      Tensor& d = tp.grad(ia);
      for (std::size_t r = 0; r < A.rows(); ++r)
        for (std::size_t j = 0; j < m; ++j) d(r, j) += g(r, j) * C[r];
    }
    if (tp.needs_grad(ic)) {
      Tensor& d = tp.grad(ic);
      for (std::size_t r = 0; r < A.rows(); ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += g(r, j) * A(r, j);
        d[r] += s;
      }
    }
  });
}

Var pairwise_sq_dist(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.cols() == B.cols(), "pairwise_sq_dist", A, B);
  const std::size_t n = A.rows(), m = B.rows(), k = A.cols();
  Tensor out = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    auto ai = A.row_span(i);
    for (std::size_t j = 0; j < m; ++j) {
      auto bj = B.row_span(j);
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double diff = ai[p] - bj[p];
        s += diff * diff;
      }
      out(i, j) = s;
    }
  }
  const int ia = a.id(), ib = b.id();
  return t.push(OpKind::PairwiseSqDist, {ia, ib}, std::move(out),
                [ia, ib, n, m, k](Tape& tp, const Tensor& g) {
                  const Tensor& A = tp.value(ia);
                  const Tensor& B = tp.value(ib);
                  const bool ga = tp.needs_grad(ia), gb = tp.needs_grad(ib);
                  Tensor* da = ga ? &tp.grad(ia) : nullptr;
                  Tensor* db = gb ? &tp.grad(ib) : nullptr;
                  for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < m; ++j) {
                      const double gij = 2.0 * g(i, j);
                      if (gij == 0.0) continue;
                      for (std::size_t p = 0; p < k; ++p) {
                        const double diff = gij * (A(i, p) - B(j, p));
                        if (da) (*da)(i, p) += diff;
                        if (db) (*db)(j, p) -= diff;
                      }
                    }
                  }
                });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& A = a.value();
  const std::size_t m = A.cols();
  Tensor out = Tensor::matrix(rows.size(), m);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= A.rows()) throw std::out_of_range("gather_rows: row index out of range");
    auto src = A.row_span(rows[r]);
    std::copy(src.begin(), src.end(), out.row_span(r).begin());
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  return unary(OpKind::GatherRows, a, std::move(out), [idx, m](Tape&, const Tensor& g, Tensor& d) {
    for (std::size_t r = 0; r < idx->size(); ++r) {
      auto dst = d.row_span((*idx)[r]);
      for (std::size_t j = 0; j < m; ++j) dst[j] += g(r, j);
    }
  });
}

Var scatter_rows(Var a, std::span<const std::size_t> rows, std::size_t out_rows) {
  const Tensor& A = a.value();
  if (rows.size() != A.rows()) throw std::invalid_argument("scatter_rows: index count mismatch");
  const std::size_t m = A.cols();
  Tensor out = Tensor::matrix(out_rows, m);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= out_rows) throw std::out_of_range("scatter_rows: row index out of range");
    auto dst = out.row_span(rows[r]);
    auto src = A.row_span(r);
    for (std::size_t j = 0; j < m; ++j) dst[j] += src[j];
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  return unary(OpKind::ScatterRows, a, std::move(out), [idx, m](Tape&, const Tensor& g, Tensor& d) {
    for (std::size_t r = 0; r < idx->size(); ++r) {
      auto src = g.row_span((*idx)[r]);
      for (std::size_t j = 0; j < m; ++j) d(r, j) += src[j];
    }
  });
}

Var column(Var a, std::size_t j) {
  const Tensor& A = a.value();
  if (j >= A.cols()) throw std::out_of_range("column: index out of range");
  Tensor out = Tensor::matrix(A.rows(), 1);
  for (std::size_t r = 0; r < A.rows(); ++r) out[r] = A(r, j);
  return unary(OpKind::Column, a, std::move(out), [j](Tape&, const Tensor& g, Tensor& d) {
    for (std::size_t r = 0; r < g.rows(); ++r) d(r, j) += g[r];
  });
}

Var propagate(std::shared_ptr<const SparseMatrix> s, Var h) {
  if (!s) throw std::invalid_argument("propagate: null matrix");
  Tensor out = s->multiply(h.value());
  return unary(OpKind::Propagate, h, std::move(out), [s](Tape&, const Tensor& g, Tensor& d) {
    Tensor back = s->transpose_multiply(g);
    for (std::size_t i = 0; i < back.size(); ++i) d[i] += back[i];
  });
}

Var row_normalize(Var a) {
  const Tensor& x = a.value();
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out = as_matrix(x);
  auto norms = std::make_shared<std::vector<double>>(n);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (double v : x.row_span(r)) s += v * v;
    const double nr = std::max(std::sqrt(s), 1e-12);
    (*norms)[r] = nr;
    for (double& v : out.row_span(r)) v /= nr;
  }
  Tape& t = tape_of(a);
  const int ia = a.id();
  const int self = static_cast<int>(t.size());
  return t.push(OpKind::RowNormalize, {ia}, std::move(out), [ia, self, norms, m](Tape& tp, const Tensor& g) {
    if (!tp.needs_grad(ia)) return;
    Tensor& d = tp.grad(ia);
    const Tensor& y = tp.value(self);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += g(r, j) * y(r, j);
      const double inv = 1.0 / (*norms)[r];
      for (std::size_t j = 0; j < m; ++j) d(r, j) += (g(r, j) - y(r, j) * dot) * inv;
    }
  });
}

// ---------------------------------------------------------------- grad_check

double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  Parameter p{"x", x};
  Tensor analytic;
  {
    Tape tape;
    Var loss = f(tape, tape.parameter(p));
    analytic = tape.backward(loss).of(p);
  }
  auto eval = [&](const Tensor& at) {
    Tape tape;
    Var loss = f(tape, tape.constant(at));
    const double v = loss.value().item();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite probe value");
    return v;
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = eval(probe);
    probe[i] = orig - eps;
    const double fm = eval(probe);
    probe[i] = orig;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace promos::ad
