#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "promos/graph.hpp"

namespace promos {

/// Stochastic block model with Gaussian cluster features.
struct SbmSpec {
  std::size_t nodes = 300;
  std::size_t blocks = 2;
  double p_in = 0.05;
  double p_out = 0.005;
  std::size_t feature_dim = 32;
  double mean_scale = 1.0;    // norm of each block mean
  double noise = 0.35;        // total noise norm (per-coordinate sigma = noise / sqrt(dim))
  std::uint64_t mean_seed = 7;  // block means; shared across a family of graphs
  std::uint64_t seed = 0;       // edges and noise
  std::string name = "sbm";
};

/// Nodes are assigned to blocks round-robin. No labels are attached.
Graph generate_sbm(const SbmSpec& spec);

/// Block id of node i under generate_sbm's assignment.
inline std::size_t sbm_block(std::size_t node, std::size_t blocks) { return node % blocks; }

}  // namespace promos
