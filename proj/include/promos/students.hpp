#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "promos/autodiff.hpp"
#include "promos/rng.hpp"

namespace promos {

using ad::Tensor;

/// Two-layer perceptron d -> hidden -> d with ReLU.
struct Mlp {
  ad::Parameter w1, b1, w2, b2;

  std::size_t in_dim() const { return w1.value.rows(); }
  std::size_t out_dim() const { return w2.value.cols(); }
  ad::Var forward(ad::Tape& tape, ad::Var x) const;
  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
};

/// First layer uniform in ±1/sqrt(fan_in); final layer zero so the branch
/// starts as its identity skip.
Mlp init_mlp(const std::string& name, std::size_t dim, std::size_t hidden, Rng rng);

struct StudentEnsemble {
  Mlp shared;
  std::vector<Mlp> personalized;
  ad::Parameter router{"students.router", {}};  // N x d
  std::size_t top_k = 2;
  double mask_drop_rate = 0.1;

  std::size_t num_students() const { return personalized.size(); }
  std::size_t dim() const { return router.value.cols(); }
  void validate() const;
  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
};

StudentEnsemble init_students(std::size_t dim, std::size_t hidden, std::size_t num_students,
                              std::size_t top_k, double mask_drop_rate, Rng student_rng, Rng router_rng);

struct Mask {
  Tensor m;  // n x d, entries in {0, 1}
  std::uint64_t seed = 0;
  bool active = false;
};

Mask sample_mask(std::size_t n, std::size_t d, double drop_rate, std::uint64_t seed);
Mask inactive_mask(std::size_t n, std::size_t d);

/// h^g = f_g(x~ ⊙ m) + x~ (the skip uses the unmasked input).
ad::Var shared_forward(ad::Tape& tape, ad::Var x_tilde, const Mask& mask, const StudentEnsemble& ens);

struct Routing {
  ad::Var logits;  // n x N
  ad::Var probs;   // n x N, row softmax
  ad::Var gates;   // probs restricted to each row's top-K, zero elsewhere
  std::vector<std::vector<std::size_t>> selected;  // per node, top-K students by descending prob

  std::size_t num_nodes() const { return selected.size(); }
  /// Number of nodes routed to each student; sums to n*K.
  std::vector<std::size_t> activation_histogram(std::size_t num_students) const;
};

/// Ties in the top-K are broken toward the lower student index. Gates are not
/// renormalized after truncation.
Routing route(ad::Tape& tape, ad::Var x_tilde, const StudentEnsemble& ens);

struct PersonalizedOutput {
  ad::Var h;  // n x d
  std::vector<std::size_t> evaluated;  // students with at least one routed node
  // Raw f_p outputs for the nodes routed to each student (invalid Var when unused).
  std::vector<ad::Var> student_out;
  std::vector<std::vector<std::size_t>> student_nodes;
};

/// h^l_i = Σ_p g_{i,p} f_p(x~_i ⊙ m_i) + x~_i. Each student runs only on the
/// nodes routed to it.
PersonalizedOutput personalized_forward(ad::Tape& tape, ad::Var x_tilde, const Mask& mask,
                                        const Routing& routing, const StudentEnsemble& ens);

/// Outputs f_p(x~_i ⊙ m_i) + x~_i of each node's rank-th selected student (rank 0 = top-1).
ad::Var ranked_student_output(ad::Tape& tape, ad::Var x_tilde, const Routing& routing,
                              const PersonalizedOutput& out, std::size_t rank);

/// Switch-style load balancing N·Σ_p frac_p·meanprob_p, with frac counted from gates.
ad::Var load_balance_loss(const Routing& routing, std::size_t num_students);
/// Mean squared router log-partition.
ad::Var router_z_loss(const Routing& routing);

}  // namespace promos
