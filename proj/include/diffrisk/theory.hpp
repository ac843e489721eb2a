#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "diffrisk/metrics.hpp"
#include "diffrisk/risk.hpp"
#include "diffrisk/types.hpp"

namespace diffrisk {

Matrix kron(const Matrix& a, const Matrix& b);
/// Stacks the columns.
Vector vec(const Matrix& m);
Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols);

double spectral_radius(const Matrix& m);
/// Maximum absolute column sum.
double norm1(const Matrix& m);
/// Minimum absolute column sum.
double min_column_sum(const Matrix& m);

/// Gradient-noise covariance of the stacked vector g = sum_l col{c_l1 v_l, ..., c_lN v_l}.
struct RvEstimate {
  Matrix rv;
  double frobenius_stderr = 0.0;
};

/// Monte-Carlo estimate with v_l = stochastic gradient at w_ref minus the true gradient,
/// independent draws per node. The true gradient comes from `true_gradient` with
/// `gradient_batch` draws (exact for square loss).
RvEstimate estimate_rv(const RiskModel& model, VectorRef w_ref, const Matrix& c, const DataSource& env, Rng& rng,
                       std::size_t n_draws = 100000, std::size_t gradient_batch = kDefaultMonteCarloBatch);

/// Block (k, k') = sum_l c_lk c_lk' R_{v,l} from per-node noise covariances.
Matrix rv_from_node_covariances(const Matrix& c, const std::vector<Matrix>& node_rv);

/// MN x MN weighting with T_k = hessians[k] / 2.
Matrix table1_weighting(Weighting selector, const std::vector<Matrix>& hessians, std::size_t n_nodes,
                        std::size_t dim, std::optional<std::size_t> k = std::nullopt);

struct SteadyStateInputs {
  Matrix a1;
  Matrix a2;
  Matrix c;
  std::vector<Matrix> hessians;  // one per node, at w
  Matrix rv;                     // NM x NM
  double mu = 0.0;
  Matrix weighting;              // NM x NM
};

/// B = A2' (I - mu D) A1' with A = A (x) I_M and block k of D equal to sum_l c_lk H_l.
Matrix transfer_matrix(const SteadyStateInputs& in);

enum class SolveMethod { automatic, dense, series };

struct SteadyStateResult {
  double value = 0.0;
  double spectral_radius = 0.0;
  SolveMethod method = SolveMethod::automatic;
  std::size_t series_terms = 0;
  double tail_bound = 0.0;
};

inline constexpr std::size_t kDenseSolveLimit = 60;

/// ER = sum_j Tr(T B^j Y B^j') with Y = mu^2 A2' R_v A2, computed either as
/// vec(Y)' (I - B'(x)B')^{-1} vec(T) (dense, NM <= 60 in automatic mode) or by a doubling
/// evaluation of the series with a certified tail bound. Throws UnstableB when rho(B) >= 1.
SteadyStateResult steady_state_er(const SteadyStateInputs& in, SolveMethod method = SolveMethod::automatic);

/// Scalar closed form mu^2 r t / (1 - (1 - mu d)^2).
double scalar_steady_state_er(double mu, double d, double r, double t);

struct NoiseConstants {
  double alpha = 0.0;
  double sigma_v2 = 0.0;
  double q_trace = 0.0;
  double c_norm1 = 1.0;
  double c_star = 1.0;
};

/// Fills the column-sum constants from C.
NoiseConstants make_noise_constants(double alpha, double sigma_v2, double q_trace, const Matrix& c);

/// A value with the step-size condition it was derived under.
struct RegimeValue {
  double value = 0.0;
  bool in_regime = true;
  double mu_limit = 0.0;
};

/// min{2 l_max/(l_max^2 + a), 2 l_min/(l_min^2 + a)}
double steady_state_mu_limit(double lambda_min, double lambda_max, double alpha);
/// 2 l_min C_* / (|C|_1^2 (l_max^2 + a))
double tracking_mu_limit(const NoiseConstants& nc, double lambda_min, double lambda_max);

/// (sigma_v^2 / 4)(l_max / l_min) mu
RegimeValue epsilon_bound(const NoiseConstants& nc, double lambda_min, double lambda_max, double mu);

/// mu Tr(R_{v,k}) / (4N)
double simplified_er(double mu, double rv_trace, std::size_t n_nodes);

struct TrackingBound {
  double total = 0.0;
  double steady = 0.0;
  double tracking = 0.0;
  double constant = 0.0;
  bool in_regime = true;
  double mu_limit = 0.0;
};

TrackingBound tracking_bound(const NoiseConstants& nc, double lambda_min, double lambda_max, double mu,
                             std::size_t dim);

/// Minimizer of the steady plus tracking terms: sqrt(Tr(Q) / (|C|_1^2 sigma_v^2)).
double optimal_mu(const NoiseConstants& nc);

struct RecursionBound {
  double beta = 0.0;
  std::vector<double> series;  // entry i-1 bounds max-node MSE at tick i
  bool convergent = true;
  double limit = 0.0;          // infinity when beta >= 1
};

/// beta^i W0 + (|C|_1^2 sigma_v^2 mu^2 + Tr(Q)) sum_{j<i} beta^j for i = 1..horizon.
RecursionBound recursion_bound_trace(const NoiseConstants& nc, double lambda_min, double lambda_max, double mu,
                                     double w0_bound, std::size_t horizon);

double recursion_beta(const NoiseConstants& nc, double lambda_min, double lambda_max, double mu);

struct OrderingResult {
  double atc = 0.0;
  double cta = 0.0;
  double independent = 0.0;
  bool holds = false;
};

inline constexpr double kOrderingSlack = 1e-12;

/// Steady-state ER of ATC, CTA and non-cooperative learners on a common Hessian with C = I.
/// Throws AssumptionViolation unless `a` is doubly stochastic and the Hessians agree.
OrderingResult ordering_check(const Matrix& a, const std::vector<Matrix>& hessians, const Matrix& rv, double mu,
                              const Matrix& weighting);

/// Empirical (alpha, sigma_v^2) for a model without a closed form: least-squares fit of
/// E|v(w)|^2 = alpha |w_ref - w|^2 + sigma_v^2 over `points`, each from `draws` samples.
struct NoiseFit {
  double alpha = 0.0;
  double sigma_v2 = 0.0;
  std::vector<double> distance_sq;
  std::vector<double> noise_power;
};

NoiseFit fit_noise_constants(const RiskModel& model, VectorRef w_ref, const DataSource& env, Rng& rng,
                             const std::vector<Vector>& points, std::size_t draws = 20000,
                             std::size_t gradient_batch = kDefaultMonteCarloBatch);

}  // namespace diffrisk
