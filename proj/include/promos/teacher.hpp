#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "promos/autodiff.hpp"
#include "promos/graph.hpp"
#include "promos/rng.hpp"

namespace promos {

/// Frozen two-layer GCN encoder plus the trainable affine adapter on top of it.
struct TeacherModel {
  ad::Parameter gcn_w1{"teacher.gcn_w1", {}};  // in_dim x hidden_dim
  ad::Parameter gcn_w2{"teacher.gcn_w2", {}};  // hidden_dim x out_dim
  ad::Parameter adapter_w{"teacher.adapter_w", {}};  // out_dim x adapter_dim
  ad::Parameter adapter_b{"teacher.adapter_b", {}};  // 1 x adapter_dim
  bool frozen = false;

  std::size_t in_dim() const { return gcn_w1.value.rows(); }
  std::size_t hidden_dim() const { return gcn_w1.value.cols(); }
  std::size_t out_dim() const { return gcn_w2.value.cols(); }
  std::size_t adapter_dim() const { return adapter_w.value.cols(); }

  /// Throws ValidationError when layer shapes do not chain.
  void validate() const;
};

/// Glorot-uniform encoder weights; the adapter starts as the identity when
/// out_dim == adapter_dim (Glorot otherwise) with zero bias.
TeacherModel init_teacher(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim,
                          std::size_t adapter_dim, Rng rng);

/// D^{-1/2}(A+I)D^{-1/2} over the given undirected edges.
std::shared_ptr<const ad::SparseMatrix> normalized_adjacency(
    std::size_t n, std::span<const std::pair<std::uint32_t, std::uint32_t>> edges);
std::shared_ptr<const ad::SparseMatrix> normalized_adjacency(const Graph& g);

/// U_T = Â·ReLU(Â·X·W1)·W2 on the tape. When the model is frozen the output is
/// cut with stop_gradient, so encoder weights never receive gradient.
ad::Var gcn_forward(ad::Tape& tape, const std::shared_ptr<const ad::SparseMatrix>& adj, ad::Var x,
                    const TeacherModel& model);
ad::Var gcn_forward(ad::Tape& tape, const Graph& g, const TeacherModel& model);
Tensor gcn_forward(const Graph& g, const TeacherModel& model);

/// Z_T = U_T·W_a + b_a.
ad::Var adapt(ad::Tape& tape, ad::Var u, const TeacherModel& model);

struct SSLConfig {
  double edge_drop_rate = 0.2;
  double feature_mask_rate = 0.2;
  double temperature = 0.5;
  std::size_t epochs = 20;
  double lr = 0.01;
  std::uint64_t seed = 0;
  std::size_t hidden_dim = 128;
  std::size_t out_dim = 64;

  void validate() const;
};

/// Two augmented views of a graph: edge-dropped adjacency and column-masked features.
struct AugmentedView {
  std::shared_ptr<const ad::SparseMatrix> adjacency;
  Tensor features;
};

AugmentedView augment(const Graph& g, double edge_drop_rate, double feature_mask_rate, Rng rng);

/// Symmetric inter-view InfoNCE over row-normalized embeddings.
ad::Var contrastive_loss(ad::Tape& tape, const AugmentedView& a, const AugmentedView& b,
                         const TeacherModel& model, double temperature);

/// Loss of the current weights on two views drawn from `rng` (no update).
double evaluate_contrastive(const Graph& g, const TeacherModel& model, const SSLConfig& cfg, Rng rng);

struct PretrainResult {
  TeacherModel model;
  std::vector<double> epoch_loss;  // mean over graphs, per epoch
};

/// Trains the encoder with Adam, visiting graphs sequentially within each epoch,
/// and returns it frozen. epochs == 0 yields the seeded random initialization.
PretrainResult ssl_pretrain(std::span<const Graph> graphs, const SSLConfig& cfg);

}  // namespace promos
