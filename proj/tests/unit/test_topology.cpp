#include <doctest.h>

#include <sstream>

#include "diffrisk/error.hpp"
#include "diffrisk/topology.hpp"

using namespace diffrisk;

namespace {

Adjacency with_self_loops(std::size_t n) {
  Adjacency adj = Adjacency::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n), false);
  for (std::size_t k = 0; k < n; ++k) adj(k, k) = true;
  return adj;
}

void expect_metropolis_properties(const Network& net) {
  const Matrix a = metropolis_weights(net);
  CHECK((a - a.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(check_doubly_stochastic(a, 1e-10));
  for (std::size_t l = 0; l < net.size(); ++l) {
    for (std::size_t k = 0; k < net.size(); ++k) {
      if (!net.adjacent(l, k)) CHECK(a(l, k) == 0.0);
    }
  }
}

}  // namespace

TEST_CASE("two-node complete graph is a valid network") {
  const auto net = complete_network(2);
  CHECK(net.size() == 2);
  CHECK(net.degree(0) == 2);
}

TEST_CASE("isolated node is rejected") {
  auto adj = with_self_loops(3);
  adj(0, 1) = adj(1, 0) = true;
  CHECK_THROWS_AS(build_network(adj), DisconnectedGraph);
}

TEST_CASE("asymmetric adjacency and missing self-loops are rejected") {
  auto adj = with_self_loops(2);
  adj(0, 1) = true;
  CHECK_THROWS_AS(build_network(adj), AsymmetricAdjacency);
  auto no_loop = with_self_loops(2);
  no_loop(0, 1) = no_loop(1, 0) = true;
  no_loop(1, 1) = false;
  CHECK_THROWS_AS(build_network(no_loop), MissingSelfLoop);
}

TEST_CASE("ring of 20 has three neighbors per node") {
  const auto net = ring_network(20);
  for (std::size_t k = 0; k < 20; ++k) {
    CHECK(net.degree(k) == 3);
    const auto nb = net.neighbors(k);
    CHECK(std::is_sorted(nb.begin(), nb.end()));
  }
}

TEST_CASE("metropolis on two nodes and one node") {
  const Matrix a2 = metropolis_weights(complete_network(2));
  CHECK(a2(0, 0) == 0.0);
  CHECK(a2(0, 1) == 1.0);
  CHECK(a2(1, 0) == 1.0);
  CHECK(a2(1, 1) == 0.0);
  const Matrix a1 = metropolis_weights(complete_network(1));
  CHECK(a1.rows() == 1);
  CHECK(a1(0, 0) == 1.0);
}

TEST_CASE("metropolis on a 4-ring matches the hand-evaluated rule") {
  // every node has two other neighbors: off-diagonal weight 1/2, residual 0
  Matrix expected(4, 4);
  expected << 0, 0.5, 0, 0.5,
              0.5, 0, 0.5, 0,
              0, 0.5, 0, 0.5,
              0.5, 0, 0.5, 0;
  const Matrix a = metropolis_weights(ring_network(4));
  CHECK((a - expected).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((a.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
  CHECK((a.colwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
}

TEST_CASE("metropolis on a star uses the smaller of the two degrees") {
  // hub 0 has three others; leaves have one other, so a_0l = min(1/3, 1) = 1/3
  const auto net = network_from_edges(4, {{0, 1}, {0, 2}, {0, 3}});
  const Matrix a = metropolis_weights(net);
  CHECK(a(1, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(a(0, 0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(a(1, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("metropolis properties hold on random connected graphs") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const std::size_t n = 2 + seed % 15;
    expect_metropolis_properties(random_connected_network(n, 0.3, seed));
    expect_metropolis_properties(random_geometric_network(n, 0.6, seed));
  }
}

TEST_CASE("powers of a doubly stochastic matrix stay doubly stochastic") {
  const Matrix a = metropolis_weights(random_connected_network(9, 0.25, 4));
  Matrix p = a;
  for (int j = 1; j <= 10; ++j) {
    CHECK(check_doubly_stochastic(p));
    p = p * a;
  }
}

TEST_CASE("preset matrices map variants onto (A1, A2, C)") {
  const Matrix a = metropolis_weights(ring_network(4));
  const Matrix id = Matrix::Identity(4, 4);
  const auto atc = preset_matrices(Variant::atc, a);
  CHECK(atc.a1 == id);
  CHECK(atc.a2 == a);
  CHECK(atc.c == id);
  const auto cta = preset_matrices(Variant::cta, a);
  CHECK(cta.a1 == a);
  CHECK(cta.a2 == id);
  const auto nc = preset_matrices(Variant::non_cooperative, a);
  CHECK(nc.a1 == id);
  CHECK(nc.a2 == id);
  CHECK(nc.c == id);
  for (const auto& set : {atc, cta, nc}) {
    CHECK((set.a1.colwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
    CHECK((set.a2.colwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
    CHECK((set.c.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("general matrices reject column sums of 0.9") {
  const Matrix id = Matrix::Identity(3, 3);
  CHECK_THROWS_AS(general_matrices(0.9 * id, id, id), StochasticityViolation);
  Matrix c = id;
  c(0, 1) = 0.5;
  CHECK_THROWS_AS(general_matrices(id, id, c), StochasticityViolation);
  CHECK_NOTHROW(general_matrices(id, id, id));
}

TEST_CASE("support outside the neighborhood is rejected") {
  const auto net = ring_network(5);
  Matrix a = metropolis_weights(net);
  a(0, 2) = 0.1;  // nodes 0 and 2 are not neighbors on a 5-ring
  a(2, 2) -= 0.1;
  const Matrix id = Matrix::Identity(5, 5);
  CHECK_THROWS_AS(validate_support(CombinationSet{id, a, id}, net), StochasticityViolation);
}

TEST_CASE("doubly stochastic check examples") {
  CHECK(check_doubly_stochastic(Matrix::Identity(3, 3)));
  Matrix half(2, 2);
  half << 0.5, 0.5, 0.5, 0.5;
  CHECK(check_doubly_stochastic(half));
  Matrix skew(2, 2);
  skew << 1, 0, 0.5, 0.5;
  CHECK_FALSE(check_doubly_stochastic(skew));
}

TEST_CASE("edge lists and topology strings") {
  std::istringstream in("# triangle plus tail\n0 1\n1 2\n2 0\n2 3\n");
  const auto net = read_edge_list(in);
  CHECK(net.size() == 4);
  CHECK(net.degree(2) == 4);
  CHECK(parse_topology("ring:6").size() == 6);
  CHECK(parse_topology("complete:3").degree(0) == 3);
  CHECK(parse_topology("random-geometric:12:0.5:3").size() == 12);
  CHECK_THROWS_AS(parse_topology("ring:x"), ValidationError);
  CHECK_THROWS(parse_topology("ring"));
}

TEST_CASE("variant names round-trip") {
  for (auto v : {Variant::general_diffusion, Variant::atc, Variant::cta, Variant::non_cooperative, Variant::consensus,
                 Variant::cfg, Variant::tha}) {
    CHECK(parse_variant(to_string(v)) == v);
  }
  CHECK_THROWS_AS(parse_variant("gossip"), ValidationError);
}
