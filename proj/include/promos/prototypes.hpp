#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "promos/autodiff.hpp"

namespace promos {

using ad::Tensor;

enum class Branch { Shared, Personalized };

const char* branch_name(Branch b);

/// Learnable prototype matrix (M x d) for one student branch.
struct PrototypeCodebook {
  Branch branch = Branch::Shared;
  ad::Parameter prototypes;
  double temperature = 2.0;

  std::size_t size() const { return prototypes.value.rows(); }
  std::size_t dim() const { return prototypes.value.cols(); }
  void validate() const;
};

struct KMeansResult {
  Tensor centroids;
  double inertia = 0.0;
  std::size_t iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding. Stops after 100 iterations or when
/// no centroid moves more than 1e-6; empty clusters are re-seeded at the point
/// farthest from its centroid.
KMeansResult kmeans(const Tensor& points, std::size_t clusters, std::uint64_t seed);
Tensor kmeans_init(const Tensor& points, std::size_t clusters, std::uint64_t seed);

/// Row-wise softmax of -||z_i - p_m||^2 / tau.
ad::Var proto_distribution(ad::Var z, ad::Var prototypes, double temperature);
Tensor proto_distribution(const Tensor& z, const Tensor& prototypes, double temperature);

/// Per-row KL(p_i || q_i) with the clamped log; returns n x 1.
ad::Var kl_rows(ad::Var p, ad::Var q);

/// (1/|V|) Σ_i Σ_b KL(q_i^b || s_i^b). Teacher rows are detached targets.
ad::Var psd_loss(std::span<const ad::Var> teacher_probs, std::span<const ad::Var> student_probs);

struct Quantization {
  std::vector<std::size_t> indices;  // nearest prototype per row, lowest index on ties
  Tensor quantized;                  // prototypes[indices[i]]
};

Quantization quantize(const Tensor& z, const Tensor& prototypes);

/// Row-stochastic M x M matrix softmax_m'(-||p_m - p_m'||^2 / tau).
Tensor relation_matrix(const Tensor& prototypes, double temperature);

struct ReliabilityWeights {
  std::vector<double> raw;         // sigmoid(-beta * (KL - mu))
  std::vector<double> normalized;  // raw / (Σ raw + eps)
  std::vector<double> divergence;  // KL(q_i || Q[m*_i])
  double beta = 1.0;
  double mu = 0.6;
  double epsilon = 1e-8;
};

/// The normalizing sum runs over the nodes of the current graph.
ReliabilityWeights reliability_weights(const Tensor& teacher_probs, const Tensor& relation,
                                       std::span<const std::size_t> nearest, double beta, double mu,
                                       double epsilon);

/// One branch's contribution to the commitment/refinement objective.
struct DcrBranch {
  ad::Var prototypes;
  std::span<const std::size_t> nearest;
  std::span<const double> weights;
};

/// Σ_i Σ_b w_i^b (||z_i - sg[P_b[m*_i]]||^2 + ||sg[z_i] - P_b[m*_i]||^2).
/// Weights are constants: commitment reaches z only, refinement reaches P only.
ad::Var dcr_loss(ad::Var z, std::span<const DcrBranch> branches);

/// -(1/2|V|) Σ_i [KL(a_i||b_i) + KL(b_i||a_i)] where a, b are prototype
/// distributions of the two most-activated students' outputs.
ad::Var div_loss(ad::Var h_top1, ad::Var h_top2, ad::Var prototypes, double temperature);

}  // namespace promos
