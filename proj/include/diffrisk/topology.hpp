#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "diffrisk/types.hpp"

namespace diffrisk {

using Adjacency = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Undirected connected graph. Every node is its own neighbor.
class Network {
 public:
  std::size_t size() const { return neighbors_.size(); }
  bool adjacent(std::size_t l, std::size_t k) const { return adjacency_(l, k); }
  /// N_k in increasing order, k included.
  std::span<const std::size_t> neighbors(std::size_t k) const { return neighbors_[k]; }
  /// |N_k|, counting k itself.
  std::size_t degree(std::size_t k) const { return neighbors_[k].size(); }
  const Adjacency& adjacency() const { return adjacency_; }

 private:
  friend Network build_network(const Adjacency& adjacency);
  Adjacency adjacency_;
  std::vector<std::vector<std::size_t>> neighbors_;
};

/// Validates symmetry, self-loops and connectivity (breadth-first reachability).
Network build_network(const Adjacency& adjacency);

/// Builds from an undirected edge list; self-loops are added.
Network network_from_edges(std::size_t n_nodes,
                           const std::vector<std::pair<std::size_t, std::size_t>>& edges);

Network ring_network(std::size_t n_nodes);
Network complete_network(std::size_t n_nodes);

/// Nodes uniform in the unit square, linked when closer than `radius`. Placements are
/// redrawn from the same seeded stream until the graph is connected (at most 1000 draws).
Network random_geometric_network(std::size_t n_nodes, double radius, std::uint64_t seed);

/// Random spanning tree plus independent extra edges with probability `edge_probability`.
Network random_connected_network(std::size_t n_nodes, double edge_probability, std::uint64_t seed);

/// Edge-list text: one `u v` pair per line, 0-indexed; `#` starts a comment.
Network read_edge_list(std::istream& in);
Network read_edge_list_file(const std::string& path);

/// `ring:N`, `complete:N`, `random-geometric:N:radius:seed`, or a path to an edge list.
Network parse_topology(std::string_view spec);

/// Metropolis rule: a_lk = min(1/(|N_l|-1), 1/(|N_k|-1)) off the diagonal, residual on it.
Matrix metropolis_weights(const Network& net);

enum class Variant { general_diffusion, atc, cta, non_cooperative, consensus, cfg, tha };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);

/// Matrices (A1, A2, C) of the general diffusion recursion. A1 and A2 are
/// left-stochastic (columns sum to one), C is right-stochastic (rows sum to one).
struct CombinationSet {
  Matrix a1;
  Matrix a2;
  Matrix c;

  std::size_t size() const { return static_cast<std::size_t>(a1.rows()); }
};

inline constexpr double kStochasticTolerance = 1e-10;

/// Throws StochasticityViolation naming the matrix and axis at fault.
void validate_combination(const CombinationSet& set, double tol = kStochasticTolerance);

/// Throws StochasticityViolation when an entry is nonzero outside N_k.
void validate_support(const CombinationSet& set, const Network& net);

/// ATC -> (I, A, I), CTA -> (A, I, I), non-cooperative -> (I, I, I).
CombinationSet preset_matrices(Variant variant, const Matrix& a);

/// Explicit (A1, A2, C), validated.
CombinationSet general_matrices(Matrix a1, Matrix a2, Matrix c);

/// Nonnegative with all row and column sums equal to one within `tol`.
bool check_doubly_stochastic(const Matrix& m, double tol = kStochasticTolerance);

}  // namespace diffrisk
