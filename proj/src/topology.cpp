#include "diffrisk/topology.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <queue>
#include <sstream>

#include "diffrisk/error.hpp"

namespace diffrisk {
namespace {

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos) {
      break;
    }
    start = pos + 1;
  }
  return parts;
}

template <typename T>
T parse_number(std::string_view text, std::string_view what) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ValidationError("topology: cannot parse " + std::string(what) + " from '" +
                          std::string(text) + "'");
  }
  return value;
}

bool is_connected(const Adjacency& adj) {
  const auto n = static_cast<std::size_t>(adj.rows());
  if (n == 0) {
    return false;
  }
  std::vector<bool> seen(n, false);
  std::queue<std::size_t> frontier;
  frontier.push(0);
  seen[0] = true;
  std::size_t reached = 1;
  while (!frontier.empty()) {
    const auto u = frontier.front();
    frontier.pop();
    for (std::size_t v = 0; v < n; ++v) {
      if (adj(u, v) && !seen[v]) {
        seen[v] = true;
        ++reached;
        frontier.push(v);
      }
    }
  }
  return reached == n;
}

Adjacency empty_with_loops(std::size_t n) {
  Adjacency adj = Adjacency::Constant(n, n, false);
  for (std::size_t k = 0; k < n; ++k) {
    adj(k, k) = true;
  }
  return adj;
}

void check_square(const Matrix& m, const char* name) {
  if (m.rows() != m.cols()) {
    throw DimensionMismatch(std::string("combination matrix ") + name + " is not square");
  }
}

}  // namespace

Network build_network(const Adjacency& adjacency) {
  const auto n = static_cast<std::size_t>(adjacency.rows());
  if (n == 0 || adjacency.cols() != adjacency.rows()) {
    throw InvalidAdjacency("adjacency must be a non-empty square matrix");
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (!adjacency(k, k)) {
      throw MissingSelfLoop("node " + std::to_string(k) + " is not its own neighbor");
    }
    for (std::size_t l = k + 1; l < n; ++l) {
      if (adjacency(l, k) != adjacency(k, l)) {
        throw AsymmetricAdjacency("adjacency differs at (" + std::to_string(l) + ", " +
                                  std::to_string(k) + ")");
      }
    }
  }
  if (!is_connected(adjacency)) {
    throw DisconnectedGraph("network is not connected");
  }
  Network net;
  net.adjacency_ = adjacency;
  net.neighbors_.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t l = 0; l < n; ++l) {
      if (adjacency(l, k)) {
        net.neighbors_[k].push_back(l);
      }
    }
  }
  return net;
}

Network network_from_edges(std::size_t n_nodes,
                           const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  if (n_nodes == 0) {
    throw InvalidAdjacency("network needs at least one node");
  }
  Adjacency adj = empty_with_loops(n_nodes);
  for (const auto& [u, v] : edges) {
    if (u >= n_nodes || v >= n_nodes) {
      throw InvalidAdjacency("edge (" + std::to_string(u) + ", " + std::to_string(v) +
                             ") references a node outside 0.." + std::to_string(n_nodes - 1));
    }
    adj(u, v) = true;
    adj(v, u) = true;
  }
  return build_network(adj);
}

Network ring_network(std::size_t n_nodes) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  if (n_nodes >= 2) {
    for (std::size_t k = 0; k < n_nodes; ++k) {
      edges.emplace_back(k, (k + 1) % n_nodes);
    }
  }
  return network_from_edges(n_nodes, edges);
}

Network complete_network(std::size_t n_nodes) {
  if (n_nodes == 0) {
    throw InvalidAdjacency("network needs at least one node");
  }
  return build_network(Adjacency::Constant(n_nodes, n_nodes, true));
}

Network random_geometric_network(std::size_t n_nodes, double radius, std::uint64_t seed) {
  if (n_nodes == 0 || !(radius > 0.0)) {
    throw ValidationError("random-geometric: need n_nodes >= 1 and radius > 0");
  }
  Rng rng = make_rng(seed, 0x70706f);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> x(n_nodes), y(n_nodes);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    for (std::size_t k = 0; k < n_nodes; ++k) {
      x[k] = unit(rng);
      y[k] = unit(rng);
    }
    Adjacency adj = empty_with_loops(n_nodes);
    for (std::size_t k = 0; k < n_nodes; ++k) {
      for (std::size_t l = k + 1; l < n_nodes; ++l) {
        if (std::hypot(x[k] - x[l], y[k] - y[l]) <= radius) {
          adj(k, l) = adj(l, k) = true;
        }
      }
    }
    if (is_connected(adj)) {
      return build_network(adj);
    }
  }
  throw DisconnectedGraph("random-geometric: no connected placement found in 1000 draws; "
                          "increase the radius");
}

Network random_connected_network(std::size_t n_nodes, double edge_probability,
                                 std::uint64_t seed) {
  if (n_nodes == 0) {
    throw InvalidAdjacency("network needs at least one node");
  }
  Rng rng = make_rng(seed, 0x74726565);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Adjacency adj = empty_with_loops(n_nodes);
  std::vector<std::size_t> order(n_nodes);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t j = 1; j < n_nodes; ++j) {
    std::uniform_int_distribution<std::size_t> pick(0, j - 1);
    const auto parent = order[pick(rng)];
    adj(order[j], parent) = adj(parent, order[j]) = true;
  }
  for (std::size_t k = 0; k < n_nodes; ++k) {
    for (std::size_t l = k + 1; l < n_nodes; ++l) {
      if (unit(rng) < edge_probability) {
        adj(k, l) = adj(l, k) = true;
      }
    }
  }
  return build_network(adj);
}

Network read_edge_list(std::istream& in) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::size_t n_nodes = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    std::istringstream fields(line);
    long long u = 0;
    long long v = 0;
    if (!(fields >> u)) {
      continue;
    }
    std::string rest;
    if (!(fields >> v) || (fields >> rest) || u < 0 || v < 0) {
      throw MalformedLine("edge list line " + std::to_string(line_no) +
                              ": expected two non-negative node indices",
                          line_no);
    }
    edges.emplace_back(static_cast<std::size_t>(u), static_cast<std::size_t>(v));
    n_nodes = std::max({n_nodes, static_cast<std::size_t>(u) + 1, static_cast<std::size_t>(v) + 1});
  }
  return network_from_edges(n_nodes, edges);
}

Network read_edge_list_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open edge list '" + path + "'");
  }
  return read_edge_list(in);
}

Network parse_topology(std::string_view spec) {
  const auto parts = split(spec, ':');
  const auto kind = parts.front();
  if (kind == "ring" && parts.size() == 2) {
    return ring_network(parse_number<std::size_t>(parts[1], "ring size"));
  }
  if (kind == "complete" && parts.size() == 2) {
    return complete_network(parse_number<std::size_t>(parts[1], "complete size"));
  }
  if (kind == "random-geometric" && parts.size() == 4) {
    return random_geometric_network(parse_number<std::size_t>(parts[1], "node count"),
                                    parse_number<double>(parts[2], "radius"),
                                    parse_number<std::uint64_t>(parts[3], "seed"));
  }
  if (kind == "ring" || kind == "complete" || kind == "random-geometric") {
    throw ValidationError("topology '" + std::string(spec) +
                          "': expected ring:N, complete:N or random-geometric:N:radius:seed");
  }
  return read_edge_list_file(std::string(spec));
}

Matrix metropolis_weights(const Network& net) {
  const auto n = net.size();
  if (n == 1) {
    return Matrix::Identity(1, 1);
  }
  Matrix a = Matrix::Zero(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    if (net.degree(k) < 2) {
      throw DegenerateNeighborhood("node " + std::to_string(k) + " has no neighbor besides itself");
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    double off_diagonal = 0.0;
    for (const auto l : net.neighbors(k)) {
      if (l == k) {
        continue;
      }
      const double w = std::min(1.0 / static_cast<double>(net.degree(l) - 1),
                                1.0 / static_cast<double>(net.degree(k) - 1));
      a(l, k) = w;
      off_diagonal += w;
    }
    // the residual is exactly zero in theory when the neighbor weights fill the column
    a(k, k) = std::max(0.0, 1.0 - off_diagonal);
  }
  return a;
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::general_diffusion:
      return "general";
    case Variant::atc:
      return "atc";
    case Variant::cta:
      return "cta";
    case Variant::non_cooperative:
      return "noncoop";
    case Variant::consensus:
      return "consensus";
    case Variant::cfg:
      return "cfg";
    case Variant::tha:
      return "tha";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  if (name == "general" || name == "general-diffusion") return Variant::general_diffusion;
  if (name == "atc") return Variant::atc;
  if (name == "cta") return Variant::cta;
  if (name == "noncoop" || name == "non-cooperative") return Variant::non_cooperative;
  if (name == "consensus") return Variant::consensus;
  if (name == "cfg") return Variant::cfg;
  if (name == "tha") return Variant::tha;
  throw ValidationError("unknown learner variant '" + std::string(name) + "'");
}

void validate_combination(const CombinationSet& set, double tol) {
  check_square(set.a1, "A1");
  check_square(set.a2, "A2");
  check_square(set.c, "C");
  if (set.a2.rows() != set.a1.rows() || set.c.rows() != set.a1.rows()) {
    throw DimensionMismatch("combination matrices differ in size");
  }
  const auto check = [tol](const Matrix& m, const char* name, bool columns) {
    if ((m.array() < 0.0).any()) {
      throw StochasticityViolation(std::string("matrix ") + name + " has negative entries");
    }
    const Vector sums = columns ? Vector(m.colwise().sum().transpose()) : Vector(m.rowwise().sum());
    for (Eigen::Index j = 0; j < sums.size(); ++j) {
      if (std::abs(sums(j) - 1.0) > tol) {
        throw StochasticityViolation(std::string("matrix ") + name + ": " +
                                     (columns ? "column " : "row ") + std::to_string(j) +
                                     " sums to " + std::to_string(sums(j)) + ", expected 1");
      }
    }
  };
  check(set.a1, "A1", true);
  check(set.a2, "A2", true);
  check(set.c, "C", false);
}

void validate_support(const CombinationSet& set, const Network& net) {
  if (set.size() != net.size()) {
    throw DimensionMismatch("combination matrices and network differ in size");
  }
  const std::pair<const Matrix*, const char*> all[] = {{&set.a1, "A1"}, {&set.a2, "A2"}, {&set.c, "C"}};
  for (const auto& [m, name] : all) {
    for (std::size_t k = 0; k < net.size(); ++k) {
      for (std::size_t l = 0; l < net.size(); ++l) {
        if (!net.adjacent(l, k) && (*m)(l, k) != 0.0) {
          throw StochasticityViolation(std::string("matrix ") + name + " links non-neighbors " +
                                       std::to_string(l) + " and " + std::to_string(k));
        }
      }
    }
  }
}

CombinationSet preset_matrices(Variant variant, const Matrix& a) {
  const auto n = a.rows();
  const Matrix eye = Matrix::Identity(n, n);
  CombinationSet set;
  switch (variant) {
    case Variant::atc:
      set = {eye, a, eye};
      break;
    case Variant::cta:
      set = {a, eye, eye};
      break;
    case Variant::non_cooperative:
      set = {eye, eye, eye};
      break;
    default:
      throw ValidationError("preset_matrices: variant '" + std::string(to_string(variant)) +
                            "' has no preset; supply (A1, A2, C) explicitly");
  }
  validate_combination(set);
  return set;
}

CombinationSet general_matrices(Matrix a1, Matrix a2, Matrix c) {
  CombinationSet set{std::move(a1), std::move(a2), std::move(c)};
  validate_combination(set);
  return set;
}

bool check_doubly_stochastic(const Matrix& m, double tol) {
  if (m.rows() != m.cols() || m.size() == 0) {
    return false;
  }
  if ((m.array() < 0.0).any()) {
    return false;
  }
  const bool rows = ((m.rowwise().sum().array() - 1.0).abs() <= tol).all();
  const bool cols = ((m.colwise().sum().array() - 1.0).abs() <= tol).all();
  return rows && cols;
}

}  // namespace diffrisk
