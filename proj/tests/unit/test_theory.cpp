#include <doctest.h>

#include <cmath>

#include "diffrisk/drift.hpp"
#include "diffrisk/error.hpp"
#include "diffrisk/theory.hpp"
#include "diffrisk/topology.hpp"

using namespace diffrisk;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(r, c);
  for (auto& x : m.reshaped()) x = g(rng);
  return m;
}

Matrix random_psd(Rng& rng, Eigen::Index n) {
  const Matrix a = random_matrix(rng, n, n);
  return a * a.transpose() / static_cast<double>(n);
}

// Explicit sum_j Tr(T B^j Y B^j') for j < terms.
double truncated_series(const Matrix& b, const Matrix& y, const Matrix& t, int terms) {
  double sum = 0.0;
  Matrix bj = Matrix::Identity(b.rows(), b.cols());
  for (int j = 0; j < terms; ++j) {
    sum += (t * bj * y * bj.transpose()).trace();
    bj = b * bj;
  }
  return sum;
}

SteadyStateInputs network_inputs(const Matrix& a1, const Matrix& a2, const Matrix& c, const Matrix& h,
                                 const Matrix& node_rv, double mu) {
  const auto n = static_cast<std::size_t>(a1.rows());
  const auto m = static_cast<std::size_t>(h.rows());
  SteadyStateInputs in;
  in.a1 = a1;
  in.a2 = a2;
  in.c = c;
  in.hessians.assign(n, h);
  in.rv = rv_from_node_covariances(c, std::vector<Matrix>(n, node_rv));
  in.mu = mu;
  in.weighting = table1_weighting(Weighting::network_er, in.hessians, n, m);
  return in;
}

}  // namespace

TEST_CASE("kron and vec examples") {
  CHECK(kron(Matrix::Identity(2, 2), Matrix::Identity(2, 2)) == Matrix::Identity(4, 4));
  Matrix m(2, 2);
  m << 1, 3, 2, 4;
  Vector expected(4);
  expected << 1, 2, 3, 4;
  CHECK(vec(m) == expected);
  CHECK(unvec(vec(m), 2, 2) == m);
  Matrix a(1, 2), b(2, 1);
  a << 1, 2;
  b << 3, 4;
  Matrix k(2, 2);
  k << 3, 6, 4, 8;
  CHECK(kron(a, b) == k);
}

TEST_CASE("vec/kron trace identity") {
  Rng rng = make_rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix t = random_matrix(rng, 3, 3), b = random_matrix(rng, 3, 3), y = random_matrix(rng, 3, 3);
    Matrix bj = Matrix::Identity(3, 3);
    for (int j = 0; j <= 4; ++j) {
      const double lhs = (t.transpose() * bj * y * bj.transpose()).trace();
      const double rhs = vec(t).dot(kron(bj, bj) * vec(y));
      CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));
      CHECK((vec(bj * y * bj.transpose()) - kron(bj, bj) * vec(y)).norm() <= 1e-10 * std::max(1.0, y.norm()));
      bj = b * bj;
    }
  }
}

TEST_CASE("norms and spectral radius") {
  Matrix c(3, 3);
  c << 1.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.5, 0.0, 0.5;
  CHECK(norm1(c) == 2.0);
  CHECK(min_column_sum(c) == 0.5);
  Matrix rot(2, 2);
  rot << 0.0, -0.9, 0.9, 0.0;
  CHECK(spectral_radius(rot) == doctest::Approx(0.9).epsilon(1e-14));
}

TEST_CASE("gradient-noise covariance estimates") {
  Rng rng = make_rng(2);
  const Vector wo = Vector::Ones(2);

  SUBCASE("noiseless data gives a zero matrix") {
    const LinearModelSource env(Matrix::Identity(2, 2), wo, 0.0);
    const auto est = estimate_rv(RiskModel::square(2), wo, Matrix::Identity(3, 3), env, rng, 2000);
    CHECK(est.rv.cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("C = I: block diagonal with trace 4 M sigma_z^2") {
    const LinearModelSource env(Matrix::Identity(2, 2), wo, 1.0);
    const std::size_t draws = 100000;
    const auto est = estimate_rv(RiskModel::square(2), wo, Matrix::Identity(3, 3), env, rng, draws);
    CHECK((est.rv - est.rv.transpose()).norm() == 0.0);
    // off-diagonal block entries: products of independent v entries with variance 4 each
    const double off_sd = 4.0 / std::sqrt(static_cast<double>(draws));
    for (int k = 0; k < 3; ++k) {
      for (int l = 0; l < 3; ++l) {
        if (k == l) continue;
        CHECK(est.rv.block(2 * k, 2 * l, 2, 2).cwiseAbs().maxCoeff() <= 5.0 * off_sd);
      }
      // |v|^2 = 4 z^2 |h|^2 has variance 16 * 3 * (M^2 + 2M) - 64 = 320
      const double trace_sd = std::sqrt(320.0 / static_cast<double>(draws));
      CHECK(std::abs(est.rv.block(2 * k, 2 * k, 2, 2).trace() - 8.0) <= 4.0 * trace_sd);
    }
    CHECK(est.frobenius_stderr > 0.0);
  }

  SUBCASE("general C matches the block formula from node covariances") {
    const LinearModelSource env(Matrix::Identity(2, 2), wo, 1.0);
    Matrix c(2, 2);
    c << 0.7, 0.3, 0.4, 0.6;
    const auto est = estimate_rv(RiskModel::square(2), wo, c, env, rng, 200000);
    const Matrix exact = rv_from_node_covariances(c, {4.0 * Matrix::Identity(2, 2), 4.0 * Matrix::Identity(2, 2)});
    CHECK((est.rv - exact).cwiseAbs().maxCoeff() <= 0.05);
    // block (k, k') = sum_l c_lk c_lk' R_v,l
    CHECK(exact(0, 2) == doctest::Approx(4.0 * (0.7 * 0.3 + 0.4 * 0.6)));
  }
}

TEST_CASE("the four error weightings") {
  const std::size_t n = 3, m = 2;
  const std::vector<Matrix> two_i(n, 2.0 * Matrix::Identity(2, 2));
  CHECK(table1_weighting(Weighting::network_mse, {}, n, m).isApprox(Matrix::Identity(6, 6) / 3.0));
  Matrix ekk = Matrix::Zero(6, 6);
  ekk.block(2, 2, 2, 2) = Matrix::Identity(2, 2);
  CHECK(table1_weighting(Weighting::node_er, two_i, n, m, 1) == ekk);
  CHECK(table1_weighting(Weighting::node_mse, {}, n, m, 1) == ekk);

  Rng rng = make_rng(3);
  std::vector<Matrix> h;
  for (std::size_t k = 0; k < n; ++k) h.push_back(random_psd(rng, 2));
  Matrix avg = Matrix::Zero(6, 6);
  for (std::size_t k = 0; k < n; ++k) avg += table1_weighting(Weighting::node_er, h, n, m, k) / 3.0;
  CHECK((table1_weighting(Weighting::network_er, h, n, m) - avg).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK_THROWS_AS(table1_weighting(Weighting::node_er, h, n, m), MissingNodeIndex);
  CHECK_THROWS_AS(table1_weighting(Weighting::network_er, {}, n, m), MissingHessian);
}

TEST_CASE("steady-state ER: zero noise and the scalar case") {
  SteadyStateInputs in;
  in.a1 = in.a2 = in.c = Matrix::Identity(1, 1);
  in.hessians = {Matrix::Constant(1, 1, 1.5)};
  in.rv = Matrix::Zero(1, 1);
  in.mu = 0.1;
  in.weighting = Matrix::Constant(1, 1, 0.75);
  CHECK(steady_state_er(in).value == 0.0);

  for (double mu : {0.01, 0.1, 0.5}) {
    in.mu = mu;
    in.rv = Matrix::Constant(1, 1, 2.0);
    const double closed = mu * mu * 2.0 * 0.75 / (1.0 - (1.0 - mu * 1.5) * (1.0 - mu * 1.5));
    CHECK(scalar_steady_state_er(mu, 1.5, 2.0, 0.75) == doctest::Approx(closed).epsilon(1e-14));
    CHECK(steady_state_er(in, SolveMethod::dense).value == doctest::Approx(closed).epsilon(1e-12));
    CHECK(steady_state_er(in, SolveMethod::series).value == doctest::Approx(closed).epsilon(1e-9));
  }

  in.mu = 2.0;  // 1 - mu d = -2
  try {
    steady_state_er(in);
    FAIL("expected UnstableB");
  } catch (const UnstableB& e) {
    CHECK(e.spectral_radius() == doctest::Approx(2.0));
  }
}

TEST_CASE("steady-state ER: dense solve, doubling series and explicit sum agree") {
  Rng rng = make_rng(4);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto net = random_connected_network(5, 0.4, seed);
    const Matrix a = metropolis_weights(net);
    const Matrix h = random_psd(rng, 2) + 0.5 * Matrix::Identity(2, 2);
    const Matrix node_rv = random_psd(rng, 2);
    for (auto v : {Variant::atc, Variant::cta, Variant::non_cooperative}) {
      const auto set = preset_matrices(v, a);
      const auto in = network_inputs(set.a1, set.a2, set.c, h, node_rv, 0.05);
      const auto dense = steady_state_er(in, SolveMethod::dense);
      const auto series = steady_state_er(in, SolveMethod::series);
      CHECK(series.value == doctest::Approx(dense.value).epsilon(1e-9));
      CHECK(dense.value >= 0.0);
      const Matrix b = transfer_matrix(in);
      const Matrix y = in.mu * in.mu * kron(in.a2, Matrix::Identity(2, 2)).transpose() * in.rv *
                       kron(in.a2, Matrix::Identity(2, 2));
      CHECK(spectral_radius(b) == doctest::Approx(dense.spectral_radius).epsilon(1e-12));
      // rho(B) <= 1 - mu l_min ~ 0.975 here, so 400 terms leave a relative remainder near rho^800
      const double partial = truncated_series(b, y, in.weighting, 400);
      CHECK(partial <= dense.value * (1 + 1e-10));
      CHECK(partial == doctest::Approx(dense.value).epsilon(1e-7));
    }
  }
}

TEST_CASE("steady-state transfer matrix reduces to B = A2' (I - mu D) A1'") {
  Matrix a(2, 2);
  a << 0.6, 0.4, 0.4, 0.6;
  const auto in = network_inputs(a, a, Matrix::Identity(2, 2), 2.0 * Matrix::Identity(1, 1),
                                 Matrix::Identity(1, 1), 0.1);
  const Matrix expected = a.transpose() * (Matrix::Identity(2, 2) - 0.1 * 2.0 * Matrix::Identity(2, 2)) * a.transpose();
  CHECK((transfer_matrix(in) - expected).norm() <= 1e-15);
}

TEST_CASE("epsilon bound") {
  auto nc = make_noise_constants(0.0, 4.0, 0.0, Matrix::Identity(2, 2));
  CHECK(epsilon_bound(nc, 1.0, 1.0, 0.01).value == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(epsilon_bound(nc, 1.0, 1.0, 0.01).in_regime);
  CHECK(epsilon_bound(nc, 2.0, 4.0, 0.02).value == 2.0 * epsilon_bound(nc, 2.0, 4.0, 0.01).value);
  CHECK_FALSE(epsilon_bound(nc, 1.0, 1.0, 5.0).in_regime);
  nc.sigma_v2 = 0.0;
  CHECK(epsilon_bound(nc, 1.0, 3.0, 0.3).value == 0.0);
}

TEST_CASE("simplified ER") {
  CHECK(simplified_er(0.02, 0.0, 8) == 0.0);
  CHECK(simplified_er(0.02, 8.0, 8) == doctest::Approx(0.005).epsilon(1e-15));
  // N = 1: scalar closed form with d = 2 lambda, t = lambda, r = Tr(R_v) is mu r / (4 (1 - mu lambda))
  const double lambda = 1.5, r = 3.0;
  for (double mu : {0.1, 0.01, 0.001}) {
    const double full = scalar_steady_state_er(mu, 2 * lambda, r, lambda);
    const double simple = simplified_er(mu, r, 1);
    CHECK(std::abs(full - simple) / full <= 2.0 * mu * lambda);
  }
}

TEST_CASE("tracking bound") {
  const Matrix id = Matrix::Identity(3, 3);
  auto nc = make_noise_constants(0.0, 2.0, 0.0, id);
  const auto stationary = tracking_bound(nc, 1.0, 1.0, 0.01, 2);
  CHECK(stationary.tracking == 0.0);
  CHECK(stationary.constant == 0.0);
  CHECK(stationary.total == stationary.steady);
  // C = I, l_min = l_max: the steady term equals epsilon
  CHECK(stationary.total == doctest::Approx(epsilon_bound(nc, 1.0, 1.0, 0.01).value).epsilon(1e-14));

  nc.q_trace = 1e-3;
  const auto b1 = tracking_bound(nc, 1.0, 2.0, 0.01, 2);
  const auto b2 = tracking_bound(nc, 1.0, 2.0, 0.02, 2);
  CHECK(b2.steady == doctest::Approx(2.0 * b1.steady).epsilon(1e-14));
  CHECK(b2.tracking == doctest::Approx(0.5 * b1.tracking).epsilon(1e-14));
  CHECK(b1.constant == doctest::Approx(2.0 * 2.0 / 2.0 * 1e-3).epsilon(1e-14));
  CHECK(b1.total == doctest::Approx(b1.steady + b1.tracking + b1.constant).epsilon(1e-14));
}

TEST_CASE("optimal step size") {
  const Matrix id = Matrix::Identity(2, 2);
  CHECK(optimal_mu(make_noise_constants(0.0, 3.0, 3.0, id)) == doctest::Approx(1.0).epsilon(1e-15));
  const auto base = make_noise_constants(0.0, 2.0, 1e-3, id);
  const auto scaled = make_noise_constants(0.0, 2.0, 4e-3, id);
  CHECK(optimal_mu(scaled) == doctest::Approx(2.0 * optimal_mu(base)).epsilon(1e-14));
  CHECK_THROWS_AS(optimal_mu(make_noise_constants(0.0, 0.0, 1e-3, id)), ZeroNoise);

  // golden-section search on the bound
  Matrix c(3, 3);
  c << 1.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.5, 0.0, 0.5;
  const auto nc = make_noise_constants(0.1, 1.5, 2e-3, c);
  const auto f = [&](double mu) { return tracking_bound(nc, 0.5, 2.0, mu, 3).total; };
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = 1e-6, hi = 1.0;
  for (int i = 0; i < 200; ++i) {
    const double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
    (f(x1) < f(x2) ? hi : lo) = (f(x1) < f(x2) ? x2 : x1);
  }
  CHECK(std::abs(0.5 * (lo + hi) - optimal_mu(nc)) <= 1e-8);
}

TEST_CASE("recursion bound") {
  const Matrix id = Matrix::Identity(2, 2);
  const auto quiet = make_noise_constants(0.0, 0.0, 0.0, id);
  const auto r = recursion_bound_trace(quiet, 1.0, 2.0, 0.1, 3.0, 10);
  const double beta = 1.0 - 2.0 * 0.1 * 1.0 + 0.01 * 4.0;
  CHECK(r.beta == doctest::Approx(beta).epsilon(1e-15));
  CHECK(r.series.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(r.series[i] == doctest::Approx(std::pow(beta, static_cast<double>(i + 1)) * 3.0).epsilon(1e-13));
  }
  CHECK(r.convergent);
  CHECK(r.limit == 0.0);

  Matrix c(3, 3);
  c << 1.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.5, 0.0, 0.5;
  const auto nc = make_noise_constants(0.3, 1.0, 1e-3, c);
  const double edge = tracking_mu_limit(nc, 0.5, 2.0);
  CHECK(recursion_beta(nc, 0.5, 2.0, edge) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(2.0 * edge * 0.5 * nc.c_star ==
        doctest::Approx(edge * edge * (4.0 + nc.alpha) * nc.c_norm1 * nc.c_norm1).epsilon(1e-14));
  const auto noisy = recursion_bound_trace(nc, 0.5, 2.0, 0.5 * edge, 1.0, 5000);
  const double b = noisy.beta;
  const double drive = nc.c_norm1 * nc.c_norm1 * nc.sigma_v2 * std::pow(0.5 * edge, 2) + nc.q_trace;
  CHECK(noisy.limit == doctest::Approx(drive / (1.0 - b)).epsilon(1e-14));
  CHECK(noisy.series.back() == doctest::Approx(noisy.limit).epsilon(1e-6));
  const auto div = recursion_bound_trace(nc, 0.5, 2.0, 1.5 * edge, 1.0, 20);
  CHECK_FALSE(div.convergent);
  CHECK(std::isinf(div.limit));
}

TEST_CASE("ordering of ATC, CTA and non-cooperative") {
  Rng rng = make_rng(5);
  const Matrix h = 2.0 * Matrix::Identity(2, 2);

  SUBCASE("A = I: all three coincide") {
    const Matrix a = Matrix::Identity(3, 3);
    const std::vector<Matrix> hs(3, h);
    const Matrix rv = rv_from_node_covariances(a, std::vector<Matrix>(3, 4.0 * Matrix::Identity(2, 2)));
    const auto r = ordering_check(a, hs, rv, 0.05, table1_weighting(Weighting::network_er, hs, 3, 2));
    CHECK(r.atc == doctest::Approx(r.cta).epsilon(1e-14));
    CHECK(r.cta == doctest::Approx(r.independent).epsilon(1e-14));
    CHECK(r.holds);
  }

  SUBCASE("N = 2 complete graph: strict ordering") {
    const std::vector<Matrix> hs(2, h);
    const Matrix rv =
        rv_from_node_covariances(Matrix::Identity(2, 2), std::vector<Matrix>(2, 4.0 * Matrix::Identity(2, 2)));
    const Matrix t = table1_weighting(Weighting::network_er, hs, 2, 2);
    const auto r = ordering_check(Matrix::Constant(2, 2, 0.5), hs, rv, 0.05, t);
    CHECK(r.atc < r.cta);
    CHECK(r.cta < r.independent);
    CHECK(r.holds);
    // Metropolis on two nodes is a swap: identical nodes make the three coincide
    const auto swap = ordering_check(metropolis_weights(complete_network(2)), hs, rv, 0.05, t);
    CHECK(swap.atc == doctest::Approx(swap.independent).epsilon(1e-12));
    CHECK(swap.holds);
  }

  SUBCASE("the ATC/CTA gap shrinks with mu") {
    const Matrix a = metropolis_weights(ring_network(5));
    const std::vector<Matrix> hs(5, h);
    const Matrix rv = rv_from_node_covariances(Matrix::Identity(5, 5), std::vector<Matrix>(5, random_psd(rng, 2)));
    const Matrix t = table1_weighting(Weighting::network_er, hs, 5, 2);
    double prev = std::numeric_limits<double>::infinity();
    for (double mu : {0.08, 0.04, 0.02, 0.01}) {
      const auto r = ordering_check(a, hs, rv, mu, t);
      const double gap = (r.cta - r.atc) / r.atc;
      CHECK(gap >= 0.0);
      CHECK(gap < prev);
      prev = gap;
    }
  }

  SUBCASE("random compliant instances") {
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
      const std::size_t n = 2 + seed % 5;
      const Matrix a = metropolis_weights(random_connected_network(n, 0.5, seed));
      const Matrix hk = random_psd(rng, 2) + 0.2 * Matrix::Identity(2, 2);
      const std::vector<Matrix> hs(n, hk);
      const Matrix rv = random_psd(rng, static_cast<Eigen::Index>(2 * n));
      const double mu = 0.5 / spectral_radius(hk);
      const auto r = ordering_check(a, hs, rv, mu, table1_weighting(Weighting::network_er, hs, n, 2));
      CHECK(r.atc <= r.cta + kOrderingSlack);
      CHECK(r.cta <= r.independent + kOrderingSlack);
      CHECK(r.holds);
    }
  }

  SUBCASE("assumption violations") {
    Matrix skew(2, 2);
    skew << 0.9, 0.5, 0.1, 0.5;
    const std::vector<Matrix> hs(2, h);
    const Matrix rv = Matrix::Identity(4, 4);
    const Matrix t = table1_weighting(Weighting::network_mse, {}, 2, 2);
    CHECK_THROWS_AS(ordering_check(skew, hs, rv, 0.05, t), AssumptionViolation);
    std::vector<Matrix> differ = hs;
    differ[1](0, 0) += 1e-6;
    CHECK_THROWS_AS(ordering_check(metropolis_weights(complete_network(2)), differ, rv, 0.05, t),
                    AssumptionViolation);
  }
}

TEST_CASE("noise fit on an ADALINE source recovers the certified constants") {
  Matrix r = Matrix::Identity(2, 2);
  const Vector wo = Vector::Ones(2);
  const LinearModelSource env(r, wo, 1.0);
  Rng rng = make_rng(6);
  std::vector<Vector> points;
  for (double s : {0.0, 0.5, 1.0, 1.5, 2.0}) points.push_back(wo + s * Vector::Ones(2));
  const auto fit = fit_noise_constants(RiskModel::square(r, 1.0), wo, env, rng, points, 200000);
  // E|v(w)|^2 = 4 E|(R - hh')e|^2 + 4 sigma^2 Tr(R); for R = I, M = 2 the slope is 4 (M + 1) = 12
  CHECK(fit.sigma_v2 == doctest::Approx(8.0).epsilon(0.05));
  CHECK(fit.distance_sq.size() == 5);
  for (std::size_t j = 0; j < 5; ++j) CHECK(fit.noise_power[j] <= fit.alpha * fit.distance_sq[j] + fit.sigma_v2 + 1e-9);
  CHECK(fit.alpha == doctest::Approx(12.0).epsilon(0.1));
}
