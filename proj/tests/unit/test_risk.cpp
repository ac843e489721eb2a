#include <doctest.h>

#include <cmath>
#include <random>

#include "diffrisk/drift.hpp"
#include "diffrisk/error.hpp"
#include "diffrisk/risk.hpp"

using namespace diffrisk;

namespace {

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// Bisection on a decreasing scalar function; the oracle for 1-D stationarity conditions.
template <class F>
double bisect(F f, double lo, double hi) {
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

Vector random_vector(Rng& rng, Eigen::Index m, double scale) {
  std::normal_distribution<double> g(0.0, scale);
  Vector v(m);
  for (auto& x : v) x = g(rng);
  return v;
}

// h = (0, g1, g2): orthogonal to e1 almost surely.
class OrthogonalSource final : public DataSource {
 public:
  std::size_t dim() const override { return 3; }
  void draw(Rng& rng, Eigen::Ref<Vector> h, double& y) const override {
    std::normal_distribution<double> g;
    h << 0.0, g(rng), g(rng);
    y = std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0;
  }
};

// h = +/-1 with y = h w exactly: h h' = 1 = R always, no noise.
class SignSource final : public DataSource {
 public:
  std::size_t dim() const override { return 1; }
  void draw(Rng& rng, Eigen::Ref<Vector> h, double& y) const override {
    h(0) = std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0;
    y = 0.7 * h(0);
  }
  std::optional<LinearMoments> moments() const override {
    return LinearMoments{Matrix::Identity(1, 1), Vector::Constant(1, 0.7), 0.49};
  }
};

}  // namespace

TEST_CASE("loss examples") {
  const auto lg0 = RiskModel::logistic(2, 0.0);
  Sample s{Vector::Constant(2, 3.0), -1.0};
  CHECK(loss(lg0, Vector::Zero(2), s) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  const auto sq = RiskModel::square(2);
  Vector w(2);
  w << 1.0, 2.0;
  Sample fit{Vector::Ones(2), 3.0};
  CHECK(loss(sq, w, fit) == 0.0);

  const auto lg5 = RiskModel::logistic(3, 5.0);
  const Vector e1 = Vector::Unit(3, 0);
  CHECK(loss(lg5, e1, Sample{e1, 1.0}) == doctest::Approx(2.5 + std::log1p(std::exp(-1.0))).epsilon(1e-14));
}

TEST_CASE("logistic loss survives extreme margins") {
  const auto lg = RiskModel::logistic(1, 0.0);
  const Vector w = Vector::Constant(1, 1e4);
  CHECK(loss(lg, w, Sample{Vector::Ones(1), -1.0}) == doctest::Approx(1e4));
  CHECK(loss(lg, w, Sample{Vector::Ones(1), 1.0}) >= 0.0);
  CHECK(std::isfinite(stochastic_gradient(lg, w, Sample{Vector::Ones(1), -1.0})(0)));
}

TEST_CASE("dimension mismatch is reported") {
  const auto lg = RiskModel::logistic(3, 1.0);
  CHECK_THROWS_AS(loss(lg, Vector::Zero(2), Sample{Vector::Zero(3), 1.0}), DimensionMismatch);
  CHECK_THROWS_AS(stochastic_gradient(lg, Vector::Zero(3), Sample{Vector::Zero(2), 1.0}), DimensionMismatch);
}

TEST_CASE("square gradient examples") {
  const auto sq = RiskModel::square(2);
  Vector h(2);
  h << 1.5, -0.5;
  CHECK(stochastic_gradient(sq, Vector::Zero(2), Sample{h, 2.0}).isApprox(-2.0 * h * 2.0));
  Vector w(2);
  w << 2.0, 2.0;
  CHECK(stochastic_gradient(sq, w, Sample{h, h.dot(w)}).norm() == 0.0);
}

TEST_CASE("gradients match central differences of the loss") {
  Rng rng = make_rng(11);
  std::bernoulli_distribution coin(0.5);
  const double delta = 1e-5;
  for (const auto& model : {RiskModel::logistic(4, 0.3), RiskModel::square(4)}) {
    for (int trial = 0; trial < 100; ++trial) {
      const Vector w = random_vector(rng, 4, 1.0);
      const Sample s{random_vector(rng, 4, 1.0), coin(rng) ? 1.0 : -1.0};
      const Vector g = stochastic_gradient(model, w, s);
      for (Eigen::Index j = 0; j < 4; ++j) {
        const Vector e = Vector::Unit(4, j) * delta;
        const double fd = (loss(model, w + e, s) - loss(model, w - e, s)) / (2 * delta);
        CHECK(std::abs(fd - g(j)) <= 1e-6 * std::max(1.0, std::abs(g(j))));
      }
    }
  }
}

TEST_CASE("true gradient of the square loss from moments") {
  Matrix r = Matrix::Identity(2, 2);
  const LinearModelSource zero_cross(r, Vector::Zero(2), 1.0);
  const auto sq = RiskModel::square(2);
  Rng rng = make_rng(1);
  CHECK(true_gradient(sq, Vector::Unit(2, 0), zero_cross, rng).mean.isApprox(2.0 * Vector::Unit(2, 0)));

  r(1, 1) = 2.0;
  Vector wo(2);
  wo << 0.5, -1.5;
  const LinearModelSource env(r, wo, 0.3);
  CHECK(true_gradient(sq, wo, env, rng).mean.norm() <= 1e-14);

  const GaussianPairSource no_moments(Vector::Ones(2), 0.0);
  CHECK_THROWS_AS(true_gradient(sq, wo, no_moments, rng), NoMomentsAvailable);
}

TEST_CASE("logistic true gradient: large and small batches agree") {
  const GaussianPairSource env(Vector::Constant(3, 0.7), 0.1);
  const auto lg = RiskModel::logistic(3, 0.5);
  Vector w(3);
  w << 0.2, -0.4, 0.9;
  Rng a = make_rng(5, 1);
  Rng b = make_rng(6, 1);
  const auto big = true_gradient(lg, w, env, a, 1000000);
  const auto small = true_gradient(lg, w, env, b, 10000);
  for (Eigen::Index j = 0; j < 3; ++j) {
    const double se = std::hypot(big.standard_error(j), small.standard_error(j));
    CHECK(std::abs(big.mean(j) - small.mean(j)) <= 3.0 * se);
    CHECK(small.standard_error(j) > 0.0);
  }
}

TEST_CASE("logistic hessian equals the derivative of the Monte-Carlo gradient") {
  // common random numbers: the same seed gives the same draws in both estimators
  const GaussianPairSource env(Vector::Constant(3, 0.5), 0.05);
  const auto lg = RiskModel::logistic(3, 0.2);
  Vector w(3);
  w << 0.3, -0.1, 0.6;
  const std::size_t batch = 20000;
  Rng r0 = make_rng(21);
  const Matrix h = hessian(lg, w, env, r0, batch).mean;
  const double delta = 1e-4;
  for (Eigen::Index j = 0; j < 3; ++j) {
    const Vector e = Vector::Unit(3, j) * delta;
    Rng rp = make_rng(21);
    Rng rm = make_rng(21);
    const Vector col = (true_gradient(lg, w + e, env, rp, batch).mean - true_gradient(lg, w - e, env, rm, batch).mean) /
                       (2 * delta);
    CHECK((col - h.col(j)).cwiseAbs().maxCoeff() <= 1e-4);
  }
  CHECK((h - h.transpose()).norm() <= 1e-12);
}

TEST_CASE("logistic hessian when h is orthogonal to w") {
  const OrthogonalSource env;
  const auto lg = RiskModel::logistic(3, 0.4);
  Rng rng = make_rng(3);
  const auto est = hessian(lg, Vector::Unit(3, 0), env, rng, 200000);
  // expected rho I + E{hh'}/4 with E{hh'} = diag(0, 1, 1)
  Matrix expected = 0.4 * Matrix::Identity(3, 3);
  expected(1, 1) += 0.25;
  expected(2, 2) += 0.25;
  for (Eigen::Index i = 0; i < 3; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) {
      CHECK(std::abs(est.mean(i, j) - expected(i, j)) <= 4.0 * est.standard_error(i, j) + 1e-15);
    }
  }
}

TEST_CASE("square hessian is 2 R") {
  const auto sq = RiskModel::square(Matrix::Identity(2, 2), 1.0);
  const LinearModelSource env(Matrix::Identity(2, 2), Vector::Zero(2), 1.0);
  Rng rng = make_rng(1);
  CHECK(hessian(sq, Vector::Ones(2), env, rng).mean.isApprox(2.0 * Matrix::Identity(2, 2)));
}

TEST_CASE("hessian bounds examples") {
  const auto b1 = hessian_bounds(RiskModel::logistic(4, 5.0, 2.0));
  CHECK(b1.lambda_min == 5.0);
  CHECK(b1.lambda_max == 6.0);
  Matrix r = Matrix::Zero(2, 2);
  r.diagonal() << 1.0, 2.0;
  const auto b2 = hessian_bounds(RiskModel::square(r, 1.0));
  CHECK(b2.lambda_min == doctest::Approx(2.0));
  CHECK(b2.lambda_max == doctest::Approx(4.0));
  const auto b3 = hessian_bounds(RiskModel::logistic(3, 0.1), stagger_population(1, 0.1));
  CHECK(b3.lambda_min == 0.1);
  CHECK(b3.lambda_max == doctest::Approx(0.85).epsilon(1e-14));
  CHECK_THROWS_AS(hessian_bounds(RiskModel::logistic(3, 0.1)), UnboundedFeatures);
  CHECK_THROWS_AS(hessian_bounds(RiskModel::logistic(3, 0.0, 1.0)), AssumptionViolation);
}

TEST_CASE("hessian eigenvalues stay inside the certified bounds") {
  const auto population = stagger_population(2, 0.1);
  const auto lg = RiskModel::logistic(3, 0.1, std::sqrt(3.0));
  const auto bounds = hessian_bounds(lg);
  Rng rng = make_rng(9);
  std::uniform_real_distribution<double> radius(0.0, 10.0);
  for (int trial = 0; trial < 100; ++trial) {
    Vector w = random_vector(rng, 3, 1.0);
    w *= radius(rng) / w.norm();
    const Matrix h = empirical_hessian(lg, w, population);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(h);
    CHECK(eig.eigenvalues().minCoeff() >= bounds.lambda_min - 1e-8);
    CHECK(eig.eigenvalues().maxCoeff() <= bounds.lambda_max + 1e-8);
  }
}

TEST_CASE("batch minimizer recovers a noiseless linear model") {
  Matrix r = Matrix::Identity(3, 3);
  r(0, 1) = r(1, 0) = 0.3;
  Vector wo(3);
  wo << 1.0, -2.0, 0.5;
  const LinearModelSource env(r, wo, 0.0);
  Rng rng = make_rng(2);
  const auto data = env.draw_batch(rng, 500);
  const Vector w = batch_minimize(RiskModel::square(3), data);
  CHECK((w - wo).norm() <= 1e-6);
}

TEST_CASE("batch minimizer on separated 1-D data matches a bisection oracle") {
  // h = +-1 with y = sign(h): separable, so rho is what keeps the minimizer finite
  std::vector<Sample> samples;
  for (double h : {0.5, 1.0, 2.0, -0.7, -1.5}) samples.push_back({Vector::Constant(1, h), h > 0 ? 1.0 : -1.0});
  const double rho = 1.0;
  const auto stationarity = [&](double c) {
    double g = 0.0;
    for (const auto& s : samples) {
      const double yh = s.label * s.features(0);
      g -= yh * sigmoid(-yh * c);
    }
    return -(rho * c + g / static_cast<double>(samples.size()));
  };
  const double oracle = bisect(stationarity, -50.0, 50.0);
  const Vector w = batch_minimize(RiskModel::logistic(1, rho), samples, 1e-10);
  CHECK(w(0) == doctest::Approx(oracle).epsilon(1e-8));
  CHECK(empirical_gradient(RiskModel::logistic(1, rho), w, Dataset::from_samples(samples)).norm() <= 1e-10);
}

TEST_CASE("single sample logistic minimizer solves rho c = sigma(-c)") {
  const std::vector<Sample> one{{Vector::Unit(2, 0), 1.0}};
  const double c = bisect([](double x) { return sigmoid(-x) - x; }, 0.0, 1.0);
  const Vector w = batch_minimize(RiskModel::logistic(2, 1.0), one, 1e-12);
  CHECK(w(0) == doctest::Approx(c).epsilon(1e-10));
  CHECK(std::abs(w(1)) <= 1e-12);
}

TEST_CASE("batch minimizer reaches the normal equations") {
  Matrix r = Matrix::Zero(2, 2);
  r.diagonal() << 1.0, 2.0;
  Vector wo(2);
  wo << 1.0, -1.0;
  const LinearModelSource env(r, wo, 1.0);
  Rng rng = make_rng(8);
  const std::size_t n = 200000;
  const Vector w = batch_minimize(RiskModel::square(2), env.draw_batch(rng, n));
  // R_h^{-1} r_hy = w°; the least-squares error has covariance sigma^2 R^{-1} / n
  CHECK(std::abs(w(0) - wo(0)) <= 5.0 * std::sqrt(1.0 / n));
  CHECK(std::abs(w(1) - wo(1)) <= 5.0 * std::sqrt(0.5 / n));
}

TEST_CASE("batch minimizer is deterministic and reports non-convergence") {
  const auto pop = stagger_population(3, 0.1);
  const auto lg = RiskModel::logistic(3, 0.1);
  const Vector a = batch_minimize(lg, pop);
  const Vector b = batch_minimize(lg, pop);
  CHECK(a == b);
  BatchOptions tight;
  tight.max_iterations = 1;
  tight.tolerance = 1e-14;
  CHECK_THROWS_AS(batch_minimize(lg, pop, tight), NonConvergence);
  CHECK_THROWS_AS(batch_minimize(RiskModel::logistic(3, 0.0), pop), ValidationError);
}

TEST_CASE("adaline noise constants") {
  const SignSource sign;
  Rng rng = make_rng(4);
  const auto zero = adaline_noise_constants(RiskModel::square(Matrix::Identity(1, 1), 0.0), sign, rng, 1000);
  CHECK(zero.alpha == 0.0);
  CHECK(zero.sigma_v2 == 0.0);

  const LinearModelSource gauss(Matrix::Identity(2, 2), Vector::Ones(2), 1.0);
  const auto model = RiskModel::square(Matrix::Identity(2, 2), 1.0);
  Rng r1 = make_rng(100);
  Rng r2 = make_rng(200);
  const auto a = adaline_noise_constants(model, gauss, r1, 1000000);
  const auto b = adaline_noise_constants(model, gauss, r2, 1000000);
  CHECK(a.sigma_v2 == 8.0);
  CHECK(std::abs(a.alpha - b.alpha) <= 3.0 * std::hypot(a.alpha_standard_error, b.alpha_standard_error));
  CHECK(a.alpha_upper() > a.alpha);
}

TEST_CASE("adaline gradient noise: zero mean and bounded power") {
  Matrix r = Matrix::Zero(2, 2);
  r.diagonal() << 1.0, 2.0;
  Vector wo(2);
  wo << 1.0, 1.0;
  const LinearModelSource env(r, wo, 1.0);
  const auto model = RiskModel::square(r, 1.0);
  Rng rng = make_rng(31);
  const auto constants = adaline_noise_constants(model, env, rng, 200000);
  for (int point = 0; point < 20; ++point) {
    const Vector w = wo + random_vector(rng, 2, 1.0);
    const Vector g = true_gradient(model, w, env, rng).mean;
    const std::size_t draws = 100000;
    Vector mean = Vector::Zero(2);
    Vector sq = Vector::Zero(2);
    double power = 0.0;
    double power_sq = 0.0;
    for (std::size_t j = 0; j < draws; ++j) {
      const Vector v = stochastic_gradient(model, w, env.draw(rng)) - g;
      mean += v;
      sq += v.cwiseProduct(v);
      power += v.squaredNorm();
      power_sq += v.squaredNorm() * v.squaredNorm();
    }
    mean /= draws;
    const Vector se = ((sq / draws - mean.cwiseProduct(mean)) / draws).cwiseSqrt();
    CHECK(std::abs(mean(0)) <= 4.0 * se(0));
    CHECK(std::abs(mean(1)) <= 4.0 * se(1));
    // the bound holds in expectation; allow for the Monte-Carlo error of the power estimate
    const double power_mean = power / draws;
    const double power_se = std::sqrt((power_sq / draws - power_mean * power_mean) / draws);
    CHECK(power_mean <= constants.alpha_upper() * (wo - w).squaredNorm() + constants.sigma_v2 + 3.0 * power_se);
  }
}

TEST_CASE("empirical risk and gradient agree with per-sample sums") {
  Rng rng = make_rng(12);
  const GaussianPairSource env(Vector::Ones(2), 0.2);
  const auto data = env.draw_batch(rng, 50);
  const auto lg = RiskModel::logistic(2, 0.3);
  const Vector w = random_vector(rng, 2, 1.0);
  double risk = 0.0;
  Vector grad = Vector::Zero(2);
  for (std::size_t j = 0; j < data.size(); ++j) {
    risk += data.weights(j) * loss(lg, w, data.sample(j));
    grad += data.weights(j) * stochastic_gradient(lg, w, data.sample(j));
  }
  CHECK(empirical_risk(lg, w, data) == doctest::Approx(risk).epsilon(1e-13));
  CHECK((empirical_gradient(lg, w, data) - grad).norm() <= 1e-13);
}
