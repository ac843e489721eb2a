#include "diffrisk/risk.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Eigenvalues>

#include "diffrisk/error.hpp"

namespace diffrisk {

namespace {

// log(1 + e^z) without overflow.
double softplus(double z) {
  if (z > 0.0) {
    return z + std::log1p(std::exp(-z));
  }
  return std::log1p(std::exp(z));
}

// 1 / (1 + e^-z)
double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// e^t / (1 + e^t)^2, symmetric in t
double logistic_curvature(double t) {
  const double s = sigmoid(-std::abs(t));
  return s * (1.0 - s);
}

void check_dim(const RiskModel& model, Eigen::Index n, const char* what) {
  if (static_cast<std::size_t>(n) != model.dim()) {
    throw DimensionMismatch(std::string(what) + ": expected dimension " + std::to_string(model.dim()) +
                            ", got " + std::to_string(n));
  }
}

void check_dataset(const RiskModel& model, const Dataset& data, const char* what) {
  if (data.empty()) {
    throw ValidationError(std::string(what) + ": empty dataset");
  }
  check_dim(model, data.features.rows(), what);
}

const Matrix& require_covariance(const RiskModel& model, const DataSource* env, Matrix& scratch) {
  if (model.feature_covariance()) {
    return *model.feature_covariance();
  }
  if (env != nullptr) {
    if (auto m = env->moments()) {
      scratch = std::move(m->feature_covariance);
      return scratch;
    }
  }
  throw NoMomentsAvailable("square loss: feature covariance R_h is not available");
}

// Exact J(w + d) - J(w) over the dataset, free of the cancellation that plain
// differencing suffers once the decrease is below the loss's rounding level.
double risk_change(const RiskModel& model, VectorRef w, VectorRef d, const Dataset& data) {
  const Vector hw = data.features.transpose() * w;
  const Vector hd = data.features.transpose() * d;
  double change = 0.0;
  if (model.kind() == LossKind::logistic) {
    for (Eigen::Index j = 0; j < hw.size(); ++j) {
      const double y = data.labels(j);
      const double z = -y * hw(j);
      const double dz = -y * hd(j);
      // log(1+e^{z+dz}) - log(1+e^z) = log1p(sigma(z) expm1(dz))
      double term;
      if (dz > 30.0) {
        term = softplus(z + dz) - softplus(z);
      } else {
        term = std::log1p(sigmoid(z) * std::expm1(dz));
      }
      change += data.weights(j) * term;
    }
    change += model.rho() * (w.dot(d) + 0.5 * d.squaredNorm());
  } else {
    for (Eigen::Index j = 0; j < hw.size(); ++j) {
      const double r = data.labels(j) - hw(j);
      change += data.weights(j) * (hd(j) * hd(j) - 2.0 * r * hd(j));
    }
  }
  return change;
}

}  // namespace

Sample DataSource::draw(Rng& rng) const {
  Sample s{Vector(static_cast<Eigen::Index>(dim())), 0.0};
  draw(rng, s.features, s.label);
  return s;
}

Dataset DataSource::draw_batch(Rng& rng, std::size_t count) const {
  Matrix features(static_cast<Eigen::Index>(dim()), static_cast<Eigen::Index>(count));
  Vector labels(static_cast<Eigen::Index>(count));
  for (Eigen::Index j = 0; j < labels.size(); ++j) {
    double y = 0.0;
    draw(rng, features.col(j), y);
    labels(j) = y;
  }
  return Dataset::uniform(std::move(features), std::move(labels));
}

PopulationSource::PopulationSource(Dataset population) : population_(std::move(population)) {
  if (population_.empty()) {
    throw ValidationError("population source: empty population");
  }
  cumulative_.resize(population_.size());
  double acc = 0.0;
  for (std::size_t j = 0; j < population_.size(); ++j) {
    acc += population_.weights(static_cast<Eigen::Index>(j));
    cumulative_[j] = acc;
  }
  for (auto& c : cumulative_) {
    c /= acc;
  }
  cumulative_.back() = 1.0;
}

void PopulationSource::draw(Rng& rng, Eigen::Ref<Vector> features, double& label) const {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  const auto j = static_cast<Eigen::Index>(
      std::min<std::ptrdiff_t>(it - cumulative_.begin(), static_cast<std::ptrdiff_t>(cumulative_.size()) - 1));
  features = population_.features.col(j);
  label = population_.labels(j);
}

RiskModel RiskModel::logistic(std::size_t dim, double rho, std::optional<double> feature_norm_bound) {
  if (dim == 0) {
    throw ValidationError("logistic model: dimension must be positive");
  }
  if (!(rho >= 0.0) || !std::isfinite(rho)) {
    throw ValidationError("logistic model: rho must be a finite nonnegative number");
  }
  if (feature_norm_bound && !(*feature_norm_bound > 0.0 && std::isfinite(*feature_norm_bound))) {
    throw ValidationError("logistic model: feature norm bound must be positive and finite");
  }
  RiskModel m;
  m.kind_ = LossKind::logistic;
  m.dim_ = dim;
  m.rho_ = rho;
  m.feature_norm_bound_ = feature_norm_bound;
  return m;
}

RiskModel RiskModel::square(std::size_t dim) {
  if (dim == 0) {
    throw ValidationError("square model: dimension must be positive");
  }
  RiskModel m;
  m.kind_ = LossKind::square;
  m.dim_ = dim;
  return m;
}

RiskModel RiskModel::square(Matrix feature_covariance, double noise_variance) {
  if (feature_covariance.rows() == 0 || feature_covariance.rows() != feature_covariance.cols()) {
    throw DimensionMismatch("square model: R_h must be a nonempty square matrix");
  }
  if (!feature_covariance.isApprox(feature_covariance.transpose(), 1e-12)) {
    throw ValidationError("square model: R_h must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(feature_covariance, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() <= 0.0) {
    throw ValidationError("square model: R_h must be positive definite");
  }
  if (!(noise_variance >= 0.0)) {
    throw ValidationError("square model: noise variance must be nonnegative");
  }
  RiskModel m;
  m.kind_ = LossKind::square;
  m.dim_ = static_cast<std::size_t>(feature_covariance.rows());
  m.feature_covariance_ = std::move(feature_covariance);
  m.noise_variance_ = noise_variance;
  return m;
}

double loss(const RiskModel& model, VectorRef w, VectorRef features, double label) {
  check_dim(model, w.size(), "loss");
  check_dim(model, features.size(), "loss");
  const double hw = features.dot(w);
  if (model.kind() == LossKind::logistic) {
    return 0.5 * model.rho() * w.squaredNorm() + softplus(-label * hw);
  }
  const double e = label - hw;
  return e * e;
}

double loss(const RiskModel& model, VectorRef w, const Sample& s) {
  return loss(model, w, s.features, s.label);
}

void accumulate_gradient(const RiskModel& model, VectorRef w, VectorRef features, double label,
                         double scale, Eigen::Ref<Vector> out) {
  const double hw = features.dot(w);
  if (model.kind() == LossKind::logistic) {
    out.noalias() += (scale * model.rho()) * w;
    out.noalias() -= (scale * label * sigmoid(-label * hw)) * features;
  } else {
    out.noalias() -= (2.0 * scale * (label - hw)) * features;
  }
}

Vector stochastic_gradient(const RiskModel& model, VectorRef w, const Sample& s) {
  check_dim(model, w.size(), "stochastic_gradient");
  check_dim(model, s.features.size(), "stochastic_gradient");
  Vector g = Vector::Zero(w.size());
  accumulate_gradient(model, w, s.features, s.label, 1.0, g);
  return g;
}

double empirical_risk(const RiskModel& model, VectorRef w, const Dataset& data) {
  check_dataset(model, data, "empirical_risk");
  check_dim(model, w.size(), "empirical_risk");
  const Vector hw = data.features.transpose() * w;
  double acc = 0.0;
  if (model.kind() == LossKind::logistic) {
    for (Eigen::Index j = 0; j < hw.size(); ++j) {
      acc += data.weights(j) * softplus(-data.labels(j) * hw(j));
    }
    acc += 0.5 * model.rho() * w.squaredNorm();
  } else {
    acc = data.weights.dot((data.labels - hw).array().square().matrix());
  }
  return acc;
}

Vector empirical_gradient(const RiskModel& model, VectorRef w, const Dataset& data) {
  check_dataset(model, data, "empirical_gradient");
  check_dim(model, w.size(), "empirical_gradient");
  const Vector hw = data.features.transpose() * w;
  Vector coef(hw.size());
  if (model.kind() == LossKind::logistic) {
    for (Eigen::Index j = 0; j < hw.size(); ++j) {
      const double y = data.labels(j);
      coef(j) = -data.weights(j) * y * sigmoid(-y * hw(j));
    }
    return data.features * coef + model.rho() * w;
  }
  coef = -2.0 * data.weights.cwiseProduct(data.labels - hw);
  return data.features * coef;
}

Matrix empirical_hessian(const RiskModel& model, VectorRef w, const Dataset& data) {
  check_dataset(model, data, "empirical_hessian");
  check_dim(model, w.size(), "empirical_hessian");
  Vector coef(static_cast<Eigen::Index>(data.size()));
  if (model.kind() == LossKind::logistic) {
    const Vector hw = data.features.transpose() * w;
    for (Eigen::Index j = 0; j < hw.size(); ++j) {
      coef(j) = data.weights(j) * logistic_curvature(hw(j));
    }
  } else {
    coef = 2.0 * data.weights;
  }
  Matrix h = data.features * coef.asDiagonal() * data.features.transpose();
  if (model.kind() == LossKind::logistic) {
    h.diagonal().array() += model.rho();
  }
  return 0.5 * (h + h.transpose());
}

VectorEstimate true_gradient(const RiskModel& model, VectorRef w, const DataSource& env, Rng& rng,
                             std::size_t batch) {
  check_dim(model, w.size(), "true_gradient");
  check_dim(model, static_cast<Eigen::Index>(env.dim()), "true_gradient");
  const auto m = static_cast<Eigen::Index>(model.dim());
  if (model.kind() == LossKind::square) {
    auto moments = env.moments();
    if (!moments) {
      throw NoMomentsAvailable("true_gradient: square loss requires analytic moments R_h, r_hy");
    }
    return {2.0 * (moments->feature_covariance * w - moments->cross_covariance), Vector::Zero(m)};
  }
  if (batch < 2) {
    throw ValidationError("true_gradient: Monte-Carlo batch must hold at least two draws");
  }
  Vector mean = Vector::Zero(m);
  Vector m2 = Vector::Zero(m);
  Vector h(m);
  Vector g(m);
  double y = 0.0;
  // Welford accumulation per coordinate
  for (std::size_t n = 1; n <= batch; ++n) {
    env.draw(rng, h, y);
    g.setZero();
    accumulate_gradient(model, w, h, y, 1.0, g);
    const Vector delta = g - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta.cwiseProduct(g - mean);
  }
  const double nb = static_cast<double>(batch);
  return {mean, (m2 / (nb - 1.0) / nb).cwiseSqrt()};
}

MatrixEstimate hessian(const RiskModel& model, VectorRef w, const DataSource& env, Rng& rng,
                       std::size_t batch) {
  check_dim(model, w.size(), "hessian");
  check_dim(model, static_cast<Eigen::Index>(env.dim()), "hessian");
  const auto m = static_cast<Eigen::Index>(model.dim());
  if (model.kind() == LossKind::square) {
    Matrix scratch;
    const Matrix& r = require_covariance(model, &env, scratch);
    return {2.0 * r, Matrix::Zero(m, m)};
  }
  if (batch < 2) {
    throw ValidationError("hessian: Monte-Carlo batch must hold at least two draws");
  }
  Matrix mean = Matrix::Zero(m, m);
  Matrix m2 = Matrix::Zero(m, m);
  Vector h(m);
  double y = 0.0;
  for (std::size_t n = 1; n <= batch; ++n) {
    env.draw(rng, h, y);
    const Matrix x = logistic_curvature(h.dot(w)) * (h * h.transpose());
    const Matrix delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta.cwiseProduct(x - mean);
  }
  const double nb = static_cast<double>(batch);
  mean.diagonal().array() += model.rho();
  return {mean, (m2 / (nb - 1.0) / nb).cwiseSqrt()};
}

namespace {

HessianBounds logistic_bounds(double rho, double feature_bound) {
  if (!(rho > 0.0)) {
    throw AssumptionViolation("logistic model: rho must be positive for a positive lambda_min");
  }
  return {rho, rho + 0.25 * feature_bound * feature_bound};
}

HessianBounds square_bounds(const Matrix& r) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(2.0 * r, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  if (!(lo > 0.0)) {
    throw AssumptionViolation("square model: 2 R_h is not positive definite");
  }
  return {lo, eig.eigenvalues().maxCoeff()};
}

}  // namespace

HessianBounds hessian_bounds(const RiskModel& model) {
  if (model.kind() == LossKind::logistic) {
    if (!model.feature_norm_bound()) {
      throw UnboundedFeatures("logistic model: no feature-norm bound configured");
    }
    return logistic_bounds(model.rho(), *model.feature_norm_bound());
  }
  Matrix scratch;
  return square_bounds(require_covariance(model, nullptr, scratch));
}

HessianBounds hessian_bounds(const RiskModel& model, const Dataset& data) {
  if (model.kind() == LossKind::logistic) {
    if (model.feature_norm_bound()) {
      return logistic_bounds(model.rho(), *model.feature_norm_bound());
    }
    if (data.empty()) {
      throw UnboundedFeatures("logistic model: no feature-norm bound and no calibration data");
    }
    check_dim(model, data.features.rows(), "hessian_bounds");
    const double b = data.features.colwise().norm().maxCoeff();
    if (!std::isfinite(b)) {
      throw UnboundedFeatures("logistic model: calibration features are not finite");
    }
    return logistic_bounds(model.rho(), b);
  }
  if (model.feature_covariance()) {
    return square_bounds(*model.feature_covariance());
  }
  if (data.empty()) {
    throw NoMomentsAvailable("square model: neither R_h nor calibration data available");
  }
  check_dim(model, data.features.rows(), "hessian_bounds");
  const Matrix r = data.features * data.weights.asDiagonal() * data.features.transpose();
  return square_bounds(r);
}

Vector batch_minimize(const RiskModel& model, const Dataset& data, const BatchOptions& options) {
  check_dataset(model, data, "batch_minimize");
  if (model.kind() == LossKind::logistic && !(model.rho() > 0.0)) {
    throw ValidationError("batch_minimize: logistic risk needs rho > 0 for a unique minimizer");
  }
  const auto m = static_cast<Eigen::Index>(model.dim());
  Vector w = Vector::Zero(m);
  if (options.start) {
    check_dim(model, options.start->size(), "batch_minimize");
    w = *options.start;
  }
  Vector g = empirical_gradient(model, w, data);
  double gnorm = g.norm();
  double step = 1.0;
  constexpr double kArmijo = 0.5;
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    if (gnorm <= options.tolerance) {
      return w;
    }
    double t = std::min(2.0 * step, 1e8);
    const double g2 = gnorm * gnorm;
    bool accepted = false;
    while (t > 1e-30) {
      const Vector d = -t * g;
      if (risk_change(model, w, d, data) <= -kArmijo * t * g2) {
        w += d;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      break;
    }
    step = t;
    g = empirical_gradient(model, w, data);
    gnorm = g.norm();
  }
  if (gnorm <= options.tolerance) {
    return w;
  }
  throw NonConvergence("batch_minimize: gradient norm " + std::to_string(gnorm) + " above tolerance",
                       gnorm);
}

Vector batch_minimize(const RiskModel& model, const std::vector<Sample>& samples, double tolerance) {
  if (samples.empty()) {
    throw ValidationError("batch_minimize: empty sample list");
  }
  BatchOptions opts;
  opts.tolerance = tolerance;
  return batch_minimize(model, Dataset::from_samples(samples), opts);
}

AdalineNoise adaline_noise_constants(const RiskModel& model, const DataSource& env, Rng& rng,
                                     std::size_t draws) {
  if (model.kind() != LossKind::square) {
    throw ValidationError("adaline_noise_constants: square-loss model required");
  }
  Matrix scratch;
  const Matrix& r = require_covariance(model, &env, scratch);
  check_dim(model, static_cast<Eigen::Index>(env.dim()), "adaline_noise_constants");
  if (draws < 2) {
    throw ValidationError("adaline_noise_constants: need at least two draws");
  }
  const auto m = static_cast<Eigen::Index>(model.dim());
  Vector h(m);
  double y = 0.0;
  double mean = 0.0;
  double m2 = 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> eig;
  for (std::size_t n = 1; n <= draws; ++n) {
    env.draw(rng, h, y);
    // R - hh' is symmetric, so its largest singular value is the largest |eigenvalue|
    eig.compute(r - h * h.transpose(), Eigen::EigenvaluesOnly);
    const double s = eig.eigenvalues().cwiseAbs().maxCoeff();
    const double x = 4.0 * s * s;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  const double nd = static_cast<double>(draws);
  AdalineNoise out;
  out.alpha = mean;
  out.alpha_standard_error = std::sqrt(m2 / (nd - 1.0) / nd);
  out.sigma_v2 = 4.0 * r.trace() * model.noise_variance();
  return out;
}

}  // namespace diffrisk
