#include "promos/students.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "promos/error.hpp"

namespace promos {

ad::Var Mlp::forward(ad::Tape& tape, ad::Var x) const {
  ad::Var h = ad::relu(ad::add_bias(ad::matmul(x, tape.parameter(w1)), tape.parameter(b1)));
  return ad::add_bias(ad::matmul(h, tape.parameter(w2)), tape.parameter(b2));
}

std::vector<ad::Parameter*> Mlp::parameters() { return {&w1, &b1, &w2, &b2}; }
std::vector<const ad::Parameter*> Mlp::parameters() const { return {&w1, &b1, &w2, &b2}; }

Mlp init_mlp(const std::string& name, std::size_t dim, std::size_t hidden, Rng rng) {
  Mlp m;
  m.w1 = {name + ".w1", Tensor::matrix(dim, hidden)};
  m.b1 = {name + ".b1", Tensor::matrix(1, hidden)};
  m.w2 = {name + ".w2", Tensor::matrix(hidden, dim)};
  m.b2 = {name + ".b2", Tensor::matrix(1, dim)};
  const double limit = 1.0 / std::sqrt(static_cast<double>(dim));
  for (double& v : m.w1.value.data()) v = rng.uniform(-limit, limit);
  for (double& v : m.b1.value.data()) v = rng.uniform(-limit, limit);
  return m;
}

void StudentEnsemble::validate() const {
  const std::size_t n = num_students();
  if (n == 0) throw ValidationError("students: pool must contain at least one student");
  if (top_k < 1 || top_k > n) {
    throw ValidationError("students: top_k must satisfy 1 <= K <= N (K=" + std::to_string(top_k) +
                          ", N=" + std::to_string(n) + ")");
  }
  if (!(mask_drop_rate >= 0.0 && mask_drop_rate < 1.0)) {
    throw ValidationError("students: mask_drop_rate must be in [0,1)");
  }
  const std::size_t d = dim();
  if (router.value.rows() != n) throw ValidationError("students: router rows must equal N");
  auto check = [d](const Mlp& m, const std::string& who) {
    if (m.in_dim() != d || m.out_dim() != d) {
      throw ValidationError("students: " + who + " must map d->d with d=" + std::to_string(d));
    }
  };
  check(shared, "shared student");
  for (std::size_t p = 0; p < n; ++p) check(personalized[p], "student " + std::to_string(p));
}

std::vector<ad::Parameter*> StudentEnsemble::parameters() {
  std::vector<ad::Parameter*> out = shared.parameters();
  for (auto& m : personalized)
    for (auto* p : m.parameters()) out.push_back(p);
  out.push_back(&router);
  return out;
}

std::vector<const ad::Parameter*> StudentEnsemble::parameters() const {
  std::vector<const ad::Parameter*> out = shared.parameters();
  for (const auto& m : personalized)
    for (const auto* p : m.parameters()) out.push_back(p);
  out.push_back(&router);
  return out;
}

StudentEnsemble init_students(std::size_t dim, std::size_t hidden, std::size_t num_students,
                              std::size_t top_k, double mask_drop_rate, Rng student_rng, Rng router_rng) {
  StudentEnsemble ens;
  ens.shared = init_mlp("students.shared", dim, hidden, student_rng.split("shared"));
  for (std::size_t p = 0; p < num_students; ++p) {
    ens.personalized.push_back(
        init_mlp("students.p" + std::to_string(p), dim, hidden, student_rng.split(static_cast<std::uint64_t>(p))));
  }
  ens.router.value = Tensor::matrix(num_students, dim);
  const double limit = 1.0 / std::sqrt(static_cast<double>(dim));
  for (double& v : ens.router.value.data()) v = router_rng.uniform(-limit, limit);
  ens.top_k = top_k;
  ens.mask_drop_rate = mask_drop_rate;
  ens.validate();
  return ens;
}

Mask sample_mask(std::size_t n, std::size_t d, double drop_rate, std::uint64_t seed) {
  if (!(drop_rate >= 0.0 && drop_rate < 1.0)) throw ValidationError("sample_mask: drop rate must be in [0,1)");
  Mask mask{Tensor::matrix(n, d, 1.0), seed, true};
  Rng rng = Rng::stream(seed, "mask");
  for (double& v : mask.m.data()) v = rng.bernoulli(1.0 - drop_rate) ? 1.0 : 0.0;
  return mask;
}

Mask inactive_mask(std::size_t n, std::size_t d) { return Mask{Tensor::matrix(n, d, 1.0), 0, false}; }

namespace {

void check_mask(ad::Var x, const Mask& mask) {
  if (mask.m.rows() != x.rows() || mask.m.cols() != x.cols()) {
    throw ValidationError("mask shape " + mask.m.shape_string() + " does not match input " +
                          x.value().shape_string());
  }
}

}  // namespace

ad::Var shared_forward(ad::Tape& tape, ad::Var x_tilde, const Mask& mask, const StudentEnsemble& ens) {
  check_mask(x_tilde, mask);
  if (x_tilde.cols() != ens.dim()) throw ValidationError("shared_forward: input dim mismatch");
  return ad::add(ens.shared.forward(tape, ad::mul_const(x_tilde, mask.m)), x_tilde);
}

std::vector<std::size_t> Routing::activation_histogram(std::size_t num_students) const {
  std::vector<std::size_t> hist(num_students, 0);
  for (const auto& sel : selected)
    for (auto p : sel) ++hist[p];
  return hist;
}

Routing route(ad::Tape& tape, ad::Var x_tilde, const StudentEnsemble& ens) {
  if (x_tilde.cols() != ens.dim()) throw ValidationError("route: input dim mismatch");
  const std::size_t n = x_tilde.rows(), num = ens.num_students(), k = ens.top_k;
  Routing r;
  r.logits = ad::matmul_nt(x_tilde, tape.parameter(ens.router));
  r.probs = ad::row_softmax(r.logits);
  const Tensor& probs = r.probs.value();
  Tensor keep = Tensor::matrix(n, num);
  r.selected.resize(n);
  std::vector<std::size_t> order(num);
  for (std::size_t i = 0; i < n; ++i) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return probs(i, a) > probs(i, b); });
    r.selected[i].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    for (auto p : r.selected[i]) keep(i, p) = 1.0;
  }
  r.gates = ad::mul_const(r.probs, keep);
  return r;
}

PersonalizedOutput personalized_forward(ad::Tape& tape, ad::Var x_tilde, const Mask& mask,
                                        const Routing& routing, const StudentEnsemble& ens) {
  check_mask(x_tilde, mask);
  const std::size_t n = x_tilde.rows(), num = ens.num_students();
  if (routing.num_nodes() != n) throw ValidationError("personalized_forward: routing/node count mismatch");
  PersonalizedOutput out;
  out.student_out.resize(num);
  out.student_nodes.resize(num);
  for (std::size_t i = 0; i < n; ++i)
    for (auto p : routing.selected[i]) out.student_nodes[p].push_back(i);
  for (auto& nodes : out.student_nodes) std::sort(nodes.begin(), nodes.end());

  ad::Var masked = ad::mul_const(x_tilde, mask.m);
  ad::Var acc;
  for (std::size_t p = 0; p < num; ++p) {
    const auto& nodes = out.student_nodes[p];
    if (nodes.empty()) continue;
    out.evaluated.push_back(p);
    ad::Var y = ens.personalized[p].forward(tape, ad::gather_rows(masked, nodes));
    out.student_out[p] = y;
    ad::Var g = ad::gather_rows(ad::column(routing.gates, p), nodes);
    ad::Var contrib = ad::scatter_rows(ad::mul_col(y, g), nodes, n);
    acc = acc.valid() ? ad::add(acc, contrib) : contrib;
  }
  out.h = acc.valid() ? ad::add(acc, x_tilde) : x_tilde;
  return out;
}

ad::Var ranked_student_output(ad::Tape& tape, ad::Var x_tilde, const Routing& routing,
                              const PersonalizedOutput& out, std::size_t rank) {
  const std::size_t n = x_tilde.rows();
  ad::Var acc;
  for (std::size_t p = 0; p < out.student_out.size(); ++p) {
    const auto& nodes = out.student_nodes[p];
    if (nodes.empty()) continue;
    std::vector<std::size_t> local, global;
    for (std::size_t j = 0; j < nodes.size(); ++j) {
      const auto& sel = routing.selected[nodes[j]];
      if (rank < sel.size() && sel[rank] == p) {
        local.push_back(j);
        global.push_back(nodes[j]);
      }
    }
    if (local.empty()) continue;
    ad::Var part = ad::scatter_rows(ad::gather_rows(out.student_out[p], local), global, n);
    acc = acc.valid() ? ad::add(acc, part) : part;
  }
  if (!acc.valid()) acc = tape.constant(Tensor::matrix(n, x_tilde.cols()));
  return ad::add(acc, x_tilde);
}

ad::Var load_balance_loss(const Routing& routing, std::size_t num_students) {
  const auto hist = routing.activation_histogram(num_students);
  double total = 0.0;
  for (auto h : hist) total += static_cast<double>(h);
  Tensor frac = Tensor::matrix(1, num_students);
  for (std::size_t p = 0; p < num_students; ++p) frac[p] = static_cast<double>(hist[p]) / total;
  return ad::scale(ad::sum(ad::mul_const(ad::col_mean(routing.probs), frac)),
                   static_cast<double>(num_students));
}

ad::Var router_z_loss(const Routing& routing) {
  ad::Var lse = ad::row_logsumexp(routing.logits);
  return ad::mean(ad::mul(lse, lse));
}

}  // namespace promos
