#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "diffrisk/drift.hpp"
#include "diffrisk/metrics.hpp"
#include "diffrisk/risk.hpp"
#include "diffrisk/topology.hpp"

namespace diffrisk {

enum class StepSchedule { constant, inverse_sqrt };

struct LearnerSpec {
  std::string name;
  Variant variant = Variant::atc;
  /// (A1, A2, C) for the diffusion family; consensus reads A from a1. Unused by CFG and THA.
  CombinationSet combination;
  double step_size = 0.0;
  StepSchedule schedule = StepSchedule::constant;
  /// M x N starting weights; zero when absent.
  std::optional<Matrix> initial_weights;
};

/// Builds a learner of the given variant over combination matrix `a` (C = I).
LearnerSpec make_learner(std::string name, Variant variant, const Matrix& a, double step_size,
                         StepSchedule schedule = StepSchedule::constant);

/// Throws ValidationError (or StochasticityViolation) for an unusable spec.
void validate_learner(const LearnerSpec& spec, std::size_t nodes, std::size_t dim);

/// Step size at tick `time` (1-based).
double step_size_at(const LearnerSpec& spec, std::size_t time);

struct NetworkState {
  Matrix weights;  // M x N, column k is w_k
  Matrix phi;      // M x N scratch
  Matrix psi;      // M x N scratch
  std::size_t time = 0;
  Vector cfg_weight;
  Vector tha_average;
};

NetworkState initial_state(const LearnerSpec& spec, std::size_t dim, std::size_t nodes);

/// phi_k = sum_l a1_lk w_l; psi_k = phi_k - mu sum_l c_lk grad_l(phi_k); w_k = sum_l a2_lk psi_l,
/// where grad_l uses node l's sample of this tick.
void diffusion_step(NetworkState& state, const LearnerSpec& spec, const RiskModel& model, const Tick& tick);
/// w_k = sum_l a_lk w_l - mu_i grad_k(w_k), the gradient taken at the previous iterate.
void consensus_step(NetworkState& state, const LearnerSpec& spec, const RiskModel& model, const Tick& tick);
/// w = w - (mu/N) sum_k grad_k(w).
void cfg_step(NetworkState& state, const LearnerSpec& spec, const RiskModel& model, const Tick& tick);
/// Mean of the node weights; never written back.
Vector tha_average(const NetworkState& state);

/// Throws Divergence if any weight is non-finite or larger than 1e12 in magnitude.
void check_divergence(const Matrix& weights, std::size_t time, double step_size);

inline constexpr double kDivergenceThreshold = 1e12;

/// Compiled learner: sparse combination lists, scratch buffers and the per-variant update.
class Learner {
 public:
  Learner(LearnerSpec spec, const RiskModel& model, std::size_t dim, std::size_t nodes);
  /// Resumes from an existing state (weights fix N and M).
  Learner(LearnerSpec spec, const RiskModel& model, NetworkState state);

  void step(const Tick& tick);
  const NetworkState& state() const { return state_; }
  const LearnerSpec& spec() const { return spec_; }
  /// Estimates being scored: one column per node, or a single column for CFG and THA.
  Matrix estimates() const;
  std::size_t estimate_count() const;
  /// FNV-1a digest of every sample this learner consumed.
  std::uint64_t sample_digest() const { return digest_; }

 private:
  struct Column {
    std::vector<std::size_t> rows;
    std::vector<double> values;
  };
  using Sparse = std::vector<Column>;
  static Sparse compile(const Matrix& m);
  static bool is_identity(const Matrix& m);
  void combine(const Sparse& a, const Matrix& in, Matrix& out) const;

  LearnerSpec spec_;
  const RiskModel* model_;
  NetworkState state_;
  Sparse a1_;
  Sparse a2_;
  Sparse c_;
  bool a1_identity_ = false;
  bool a2_identity_ = false;
  bool c_identity_ = false;
  std::uint64_t digest_ = 1469598103934665603ULL;
};

/// Step-size conditions of the steady-state and tracking analyses. Advisory only.
struct StabilityReport {
  bool ok = true;
  double steady_state_limit = 0.0;  // mu < min{2 l_max/(l_max^2+a), 2 l_min/(l_min^2+a)}
  double tracking_limit = 0.0;      // mu < 2 l_min C_* / (|C|_1^2 (l_max^2 + a))
  bool steady_state_ok = true;
  bool tracking_ok = true;
  std::string warning;
};

StabilityReport stability_check(double step_size, const Matrix& c, const HessianBounds& bounds, double alpha);

using ProcessFactory = std::function<std::unique_ptr<DriftProcess>(std::uint64_t seed)>;

/// How the risk expectation is taken at each tick.
enum class EvalMode {
  automatic,  // analytic when possible, then exact population, then sampled
  analytic,   // quadratic form with R_h (square loss with known moments)
  exact,      // finite population of the process
  sampled,    // fresh evaluation batch
};

std::string_view to_string(EvalMode m);
EvalMode parse_eval_mode(std::string_view name);

struct ExperimentSpec {
  ProcessFactory make_process;
  RiskModel model = RiskModel::square(1);
  std::vector<LearnerSpec> learners;
  std::size_t horizon = 1;
  std::size_t repetitions = 1;
  std::uint64_t seed = 0;
  std::size_t eval_batch = 2000;
  EvalMode evaluation = EvalMode::automatic;
  /// Populations larger than this are sampled in automatic mode.
  std::size_t exact_population_limit = 5000;
  /// Earlier ticks pooled with the current one when w_i has to be computed from samples.
  std::size_t reference_window = 0;
  double reference_tolerance = 1e-8;
  std::vector<std::size_t> roc_ticks;
  std::size_t roc_node = 0;
  std::size_t threads = 1;
  double tail_fraction = 0.2;
};

/// Evaluation mode actually used for `process` (automatic resolved, explicit modes checked).
EvalMode resolve_eval_mode(const ExperimentSpec& spec, const DriftProcess& process);

/// One repetition: per-learner records, ROC pools and digests.
struct RepetitionResult {
  std::vector<RepetitionRecord> records;
  std::vector<std::map<std::size_t, RocAccumulator>> roc;
  std::vector<std::uint64_t> digests;
};

RepetitionResult run_repetition(const ExperimentSpec& spec, std::size_t index);

/// Runs every repetition (seed of repetition r derived from the master seed and r) and
/// averages. Repetitions are folded in index order, so results do not depend on `threads`.
MetricTrace run_experiment(const ExperimentSpec& spec);

}  // namespace diffrisk
