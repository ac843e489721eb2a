#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "diffrisk/risk.hpp"
#include "diffrisk/types.hpp"

namespace diffrisk {

/// Symmetric square root of a PSD matrix. Throws ValidationError when `m` is not PSD.
Matrix psd_sqrt(const Matrix& m, const char* what = "covariance");

/// Linear model y = h'w + z with h ~ N(0, R_h) and z ~ N(0, sigma_z^2).
class LinearModelSource final : public DataSource {
 public:
  LinearModelSource(Matrix feature_covariance, Vector optimizer, double noise_variance);
  std::size_t dim() const override { return static_cast<std::size_t>(optimizer_.size()); }
  using DataSource::draw;
  void draw(Rng& rng, Eigen::Ref<Vector> features, double& label) const override;
  std::optional<LinearMoments> moments() const override;

 private:
  Matrix covariance_;
  Matrix root_;
  Vector optimizer_;
  double noise_sd_;
};

/// Two equiprobable classes N(+m, I) and N(-m, I), labels flipped with probability `label_noise`.
class GaussianPairSource final : public DataSource {
 public:
  GaussianPairSource(Vector mean, double label_noise);
  std::size_t dim() const override { return static_cast<std::size_t>(mean_.size()); }
  using DataSource::draw;
  void draw(Rng& rng, Eigen::Ref<Vector> features, double& label) const override;
  const Vector& mean() const { return mean_; }

 private:
  Vector mean_;
  double label_noise_;
};

/// STAGGER concept (1, 2 or 3) applied to h in {0, 0.5, 1}^3 (color, shape, size).
bool stagger_rule(int concept_id, VectorRef h);

/// Features uniform over the 27-point grid, labelled by the concept, then flipped.
class StaggerSource final : public DataSource {
 public:
  StaggerSource(int concept_id, double label_noise);
  std::size_t dim() const override { return 3; }
  using DataSource::draw;
  void draw(Rng& rng, Eigen::Ref<Vector> features, double& label) const override;

 private:
  int concept_;
  double label_noise_;
};

/// The exact weighted support of StaggerSource: every grid point with each label that has
/// positive probability.
Dataset stagger_population(int concept_id, double label_noise);

/// Samples observed by the network at time i: column k of `features` belongs to node k.
struct Tick {
  std::size_t time = 0;
  Matrix features;  // M x N
  Vector labels;    // N
  std::optional<Vector> optimizer;

  std::size_t nodes() const { return static_cast<std::size_t>(labels.size()); }
  Sample sample(std::size_t k) const;
};

enum class DriftKind { stationary, random_walk_mean, random_walk_optimizer, stagger, dataset, replay };

std::string_view to_string(DriftKind kind);

/// A seeded, time-indexed environment shared by all nodes (common minimizer at every time).
/// Training, evaluation and drift draw from three independent streams of the seed.
class DriftProcess {
 public:
  virtual ~DriftProcess() = default;
  DriftProcess(const DriftProcess&) = delete;
  DriftProcess& operator=(const DriftProcess&) = delete;

  virtual DriftKind kind() const = 0;
  virtual std::size_t dim() const = 0;
  virtual bool classification() const = 0;

  std::size_t nodes() const { return nodes_; }
  std::size_t time() const { return time_; }

  /// Advances to time i+1 and draws one sample per node.
  const Tick& next();
  const Tick& current() const { return tick_; }

  /// Distribution at the current time.
  virtual std::shared_ptr<const DataSource> distribution() const = 0;
  /// Fresh evaluation draws from the current distribution, disjoint from training data.
  virtual Dataset draw_eval(std::size_t count);

  /// Exact finite support of the current distribution, when there is one.
  virtual std::optional<Dataset> population() const { return std::nullopt; }
  /// Exact w_i when analytically known.
  virtual std::optional<Vector> optimizer() const { return std::nullopt; }
  virtual std::optional<LinearMoments> moments() const { return distribution()->moments(); }
  /// Identifier that changes whenever the distribution changes.
  virtual std::uint64_t regime() const { return time_; }
  /// Q, the random-walk increment covariance (zero for non-walking processes).
  virtual Matrix drift_covariance() const { return Matrix::Zero(dim(), dim()); }

 protected:
  DriftProcess(std::size_t nodes, std::uint64_t seed);
  /// Moves the distribution from time i-1 to time i (time() already updated).
  virtual void evolve() = 0;
  /// Fills tick_.features and tick_.labels; defaults to one i.i.d. draw per node.
  virtual void fill_tick();

  Rng data_rng_;
  Rng eval_rng_;
  Rng drift_rng_;
  Tick tick_;

 private:
  std::size_t nodes_;
  std::size_t time_ = 0;
};

/// Two-Gaussian classification whose class mean follows m_i = m_{i-1} + n_i with
/// n_i ~ N(0, mean_walk_cov). A zero covariance gives the stationary problem.
std::unique_ptr<DriftProcess> gaussian_pair_stream(const Matrix& mean_walk_cov, std::size_t n_nodes,
                                                   double label_noise, std::uint64_t seed,
                                                   std::optional<Vector> m0 = std::nullopt);

/// ADALINE data y = h'w_i + z with w_i = w_{i-1} + q_i, q_i ~ N(0, Q). Q = 0 is stationary.
std::unique_ptr<DriftProcess> random_walk_optimizer(const Vector& base, const Matrix& q, std::uint64_t seed,
                                                    const Matrix& feature_covariance, double noise_variance,
                                                    std::size_t n_nodes);

/// STAGGER concepts switching every 40 ticks. Past tick 120 the schedule repeats when
/// `cycle` is set, otherwise next() throws TickBeyondHorizon.
std::unique_ptr<DriftProcess> stagger_stream(std::size_t n_nodes, double label_noise, std::uint64_t seed,
                                             bool cycle = false);

inline constexpr std::size_t kStaggerPeriod = 40;
inline constexpr std::size_t kStaggerHorizon = 120;
int stagger_concept(std::size_t time);

/// A fixed dataset shuffled and split evenly over the nodes; each node walks its shard in
/// order and wraps around. The population is the whole dataset.
std::unique_ptr<DriftProcess> dataset_stream(Dataset data, std::size_t n_nodes, std::uint64_t seed);

/// Ticks read back from a record file. Evaluation draws come from the tick's own samples.
std::unique_ptr<DriftProcess> replay_stream(std::vector<Tick> ticks);

/// w_i from pooled samples: the current tick plus up to `window` earlier ticks.
Vector reference_optimizer(std::span<const Tick> history, const RiskModel& model, double tol = 1e-8,
                           std::size_t window = 0, std::optional<Vector> start = std::nullopt);

/// One JSON object per line: {"tick", "labels", "features" (one array per node), "optimizer"?}.
void write_tick_record(std::ostream& out, const Tick& tick);
std::vector<Tick> read_tick_records(std::istream& in);

}  // namespace diffrisk
