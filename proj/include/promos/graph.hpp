#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "promos/autodiff.hpp"

namespace promos {

using ad::Tensor;

/// Immutable undirected attributed graph. Adjacency is symmetric CSR with
/// sorted, duplicate-free neighbor lists and no self-loops.
class Graph {
 public:
  Graph() = default;

  /// Builds the CSR from an undirected edge list. Each pair is inserted in
  /// both directions; duplicates and self-loops are dropped.
  static Graph from_edges(std::string name, std::size_t num_nodes,
                          std::span<const std::pair<std::uint32_t, std::uint32_t>> edges,
                          Tensor features, std::optional<std::vector<int>> labels = std::nullopt);

  const std::string& name() const { return name_; }
  std::size_t num_nodes() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t num_directed_edges() const { return targets_.size(); }
  std::size_t num_edges() const { return targets_.size() / 2; }
  std::size_t feature_dim() const { return features_.cols(); }
  std::size_t degree(std::size_t v) const { return offsets_[v + 1] - offsets_[v]; }
  std::span<const std::uint32_t> neighbors(std::size_t v) const {
    return {targets_.data() + offsets_[v], degree(v)};
  }
  bool has_edge(std::size_t u, std::size_t v) const;

  const std::vector<std::size_t>& offsets() const { return offsets_; }
  const std::vector<std::uint32_t>& targets() const { return targets_; }
  const Tensor& features() const { return features_; }
  const std::optional<std::vector<int>>& labels() const { return labels_; }
  std::size_t anomaly_count() const;

  /// Undirected edges with u < v, in CSR order.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edge_list() const;

  Graph with_features(Tensor features) const;
  Graph with_labels(std::vector<int> labels) const;
  Graph with_name(std::string name) const;

 private:
  std::string name_;
  std::vector<std::size_t> offsets_;
  std::vector<std::uint32_t> targets_;
  Tensor features_;
  std::optional<std::vector<int>> labels_;
};

struct LoadResult {
  Graph graph;
  bool symmetrized = false;  // some edge was listed without its reverse
  std::vector<std::string> warnings;
};

/// Reads edges.tsv, features.csv and (optional) labels.csv from a directory.
/// Throws ValidationError naming the file and line on malformed input.
LoadResult load_graph(const std::filesystem::path& dir);

/// Writes the same layout load_graph reads. Doubles are printed round-trip exact.
void write_graph(const Graph& g, const std::filesystem::path& dir);

struct UnifiedFeatures {
  Tensor features;
  bool fallback = false;  // SVD failed; seeded random orthonormal projection used
};

/// Projects mean-centered X onto its top-d right singular vectors (or zero-pads
/// when X has fewer than d columns), without the final row normalization.
UnifiedFeatures project_features(const Tensor& x, std::size_t target_dim, std::uint64_t seed);

/// project_features followed by row L2 normalization (zero rows stay zero).
UnifiedFeatures unify_features(const Tensor& x, std::size_t target_dim, std::uint64_t seed);

Graph unify_graph(const Graph& g, std::size_t target_dim, std::uint64_t seed);

Tensor neighbor_mean(const Graph& g);

struct EnhancedFeatures {
  Tensor residual;
  Tensor enhanced;
};

EnhancedFeatures enhance(const Graph& g);

struct InjectionSpec {
  std::size_t clique_size = 15;    // p
  std::size_t clique_count = 1;    // q
  std::size_t feature_count = 15;  // attributive anomalies
  std::size_t candidates = 50;     // k
  std::uint64_t seed = 0;

  void validate(std::size_t num_nodes) const;
};

struct InjectionResult {
  Graph graph;
  std::vector<std::vector<std::size_t>> cliques;
  std::vector<std::size_t> feature_targets;
  std::vector<std::size_t> feature_sources;  // candidate row copied into each target
};

InjectionResult inject_structural(const Graph& g, const InjectionSpec& spec);
InjectionResult inject_feature(const Graph& g, const InjectionSpec& spec);
/// Structural then attributive injection with disjoint anomaly sets.
InjectionResult inject_anomalies(const Graph& g, const InjectionSpec& spec);

}  // namespace promos
