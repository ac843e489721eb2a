#pragma once

#include <cstddef>
#include <memory>
#include <optional>

#include "diffrisk/types.hpp"

namespace diffrisk {

/// Second-order moments of a linear-regression data model:
/// J(w) = E y^2 - 2 r_hy' w + w' R_h w.
struct LinearMoments {
  Matrix feature_covariance;  // R_h
  Vector cross_covariance;    // r_hy
  double label_second_moment = 0.0;
};

/// An i.i.d. sampler of labeled observations.
class DataSource {
 public:
  virtual ~DataSource() = default;
  virtual std::size_t dim() const = 0;
  virtual void draw(Rng& rng, Eigen::Ref<Vector> features, double& label) const = 0;
  /// Analytic moments when the distribution is a known linear model.
  virtual std::optional<LinearMoments> moments() const { return std::nullopt; }

  Sample draw(Rng& rng) const;
  Dataset draw_batch(Rng& rng, std::size_t count) const;
};

/// Draws from a finite weighted population.
class PopulationSource final : public DataSource {
 public:
  explicit PopulationSource(Dataset population);
  std::size_t dim() const override { return population_.dim(); }
  using DataSource::draw;
  void draw(Rng& rng, Eigen::Ref<Vector> features, double& label) const override;
  const Dataset& population() const { return population_; }

 private:
  Dataset population_;
  std::vector<double> cumulative_;
};

enum class LossKind { logistic, square };

/// Regularized log-loss (rho/2 |w|^2 + log(1 + exp(-y h'w))) or the ADALINE square
/// loss |y - h'w|^2. The square model may carry R_h and the noise variance for the
/// analytic formulas.
class RiskModel {
 public:
  static RiskModel logistic(std::size_t dim, double rho,
                            std::optional<double> feature_norm_bound = std::nullopt);
  static RiskModel square(std::size_t dim);
  static RiskModel square(Matrix feature_covariance, double noise_variance);

  LossKind kind() const { return kind_; }
  std::size_t dim() const { return dim_; }
  double rho() const { return rho_; }
  const std::optional<double>& feature_norm_bound() const { return feature_norm_bound_; }
  const std::optional<Matrix>& feature_covariance() const { return feature_covariance_; }
  double noise_variance() const { return noise_variance_; }

 private:
  RiskModel() = default;
  LossKind kind_ = LossKind::square;
  std::size_t dim_ = 0;
  double rho_ = 0.0;
  std::optional<double> feature_norm_bound_;
  std::optional<Matrix> feature_covariance_;
  double noise_variance_ = 0.0;
};

double loss(const RiskModel& model, VectorRef w, VectorRef features, double label);
double loss(const RiskModel& model, VectorRef w, const Sample& s);

Vector stochastic_gradient(const RiskModel& model, VectorRef w, const Sample& s);

/// out += scale * gradient of loss(model, ., (features, label)) at w. Hot path, no checks.
void accumulate_gradient(const RiskModel& model, VectorRef w, VectorRef features, double label,
                         double scale, Eigen::Ref<Vector> out);

/// Weighted-average risk and its derivatives over a dataset.
double empirical_risk(const RiskModel& model, VectorRef w, const Dataset& data);
Vector empirical_gradient(const RiskModel& model, VectorRef w, const Dataset& data);
Matrix empirical_hessian(const RiskModel& model, VectorRef w, const Dataset& data);

/// Monte-Carlo (or exact) expectation with per-entry standard errors.
struct VectorEstimate {
  Vector mean;
  Vector standard_error;
};
struct MatrixEstimate {
  Matrix mean;
  Matrix standard_error;
};

inline constexpr std::size_t kDefaultMonteCarloBatch = 20000;

/// Square loss: 2 (R_h w - r_hy) from the source moments. Logistic: Monte-Carlo mean of
/// the stochastic gradient over `batch` fresh draws.
VectorEstimate true_gradient(const RiskModel& model, VectorRef w, const DataSource& env, Rng& rng,
                             std::size_t batch = kDefaultMonteCarloBatch);

/// Square loss: 2 R_h. Logistic: rho I + mean of h h' s(h'w)(1 - s(h'w)).
MatrixEstimate hessian(const RiskModel& model, VectorRef w, const DataSource& env, Rng& rng,
                       std::size_t batch = kDefaultMonteCarloBatch);

struct HessianBounds {
  double lambda_min = 0.0;
  double lambda_max = 0.0;
};

/// Certified bounds. Logistic: (rho, rho + B^2/4) with B the configured feature-norm cap.
/// Square: extreme eigenvalues of 2 R_h.
HessianBounds hessian_bounds(const RiskModel& model);
/// As above; for logistic without a configured cap, B is the largest feature norm in `data`.
HessianBounds hessian_bounds(const RiskModel& model, const Dataset& data);

struct BatchOptions {
  double tolerance = 1e-8;
  std::size_t max_iterations = 100000;
  std::optional<Vector> start;
};

/// Minimizes the weighted empirical risk by full-gradient descent with backtracking.
/// Deterministic. Throws NonConvergence when the iteration cap is hit.
Vector batch_minimize(const RiskModel& model, const Dataset& data, const BatchOptions& options = {});
Vector batch_minimize(const RiskModel& model, const std::vector<Sample>& samples, double tolerance);

struct AdalineNoise {
  double alpha = 0.0;
  double alpha_standard_error = 0.0;
  double sigma_v2 = 0.0;

  /// alpha plus three standard errors; used where a bound must hold.
  double alpha_upper() const { return alpha + 3.0 * alpha_standard_error; }
};

/// alpha = 4 E{sigma_max(R_h - h h')^2} by Monte-Carlo over `draws` features of `env`,
/// sigma_v^2 = 4 Tr(R_h) sigma_z^2.
AdalineNoise adaline_noise_constants(const RiskModel& model, const DataSource& env, Rng& rng,
                                     std::size_t draws = 1000000);

}  // namespace diffrisk
