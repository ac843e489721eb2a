#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "diffrisk/risk.hpp"
#include "diffrisk/types.hpp"

namespace diffrisk {

/// Excess risk of each column of `weights` (one estimate per node) against `w_ref`.
struct ExcessRisk {
  Vector per_node;
  Vector per_node_stderr;
  double network = 0.0;
  double network_stderr = 0.0;
};

/// ER_k = sum_j p_j [loss(w_k, x_j) - loss(w_ref, x_j)] over the evaluation set. Standard
/// errors are zero for an exact population.
ExcessRisk excess_risk(const Matrix& weights, VectorRef w_ref, const RiskModel& model, const Dataset& eval);

/// Quadratic risk: ER_k = (w_k - w_ref)' R_h (w_k - w_ref), exact.
ExcessRisk excess_risk_quadratic(const Matrix& weights, VectorRef w_ref, const Matrix& feature_covariance);

/// The four weightings of the network error vector.
enum class Weighting {
  node_er,      // E_kk (x) T_k
  network_er,   // (1/N) diag{T_1, ..., T_N}
  node_mse,     // E_kk (x) I_M
  network_mse,  // (1/N) I_MN
};

std::string_view to_string(Weighting w);
Weighting parse_weighting(std::string_view name);

/// x' T x with x the stacked columns of `errors` (M x N), T chosen by `selector` with
/// T_k = hessians[k] / 2. Evaluated blockwise.
double weighted_mse(const Matrix& errors, Weighting selector, const std::vector<Matrix>& hessians = {},
                    std::optional<std::size_t> k = std::nullopt);
/// x' T x for an explicit MN x MN weighting.
double weighted_mse(const Matrix& errors, const Matrix& weighting);

/// Weighted fraction of samples with sign(h'w) == y, sign(0) = +1.
double accuracy(VectorRef w, const Dataset& batch);

struct RocPoint {
  double threshold = 0.0;
  double pfa = 0.0;
  double pd = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;
  /// Trapezoidal area, which equals P(s+ > s-) + P(s+ == s-)/2.
  double auc() const;
};

/// Sweeps b over every distinct score h'w, predicting +1 when h'w >= b. Starts at
/// (b = +inf, 0, 0) and ends at (1, 1).
RocCurve roc_curve(VectorRef w, const Dataset& batch);
RocCurve roc_curve(const Vector& scores, const Vector& labels, const Vector& weights);

/// Pools scored samples from several repetitions before building one curve.
class RocAccumulator {
 public:
  void add(VectorRef w, const Dataset& batch);
  void merge(const RocAccumulator& other);
  RocCurve curve() const;
  bool empty() const { return scores_.empty(); }

 private:
  std::vector<double> scores_;
  std::vector<double> labels_;
  std::vector<double> weights_;
};

enum class Metric { excess_risk, prediction_mse, filtering_mse, accuracy };
inline constexpr std::size_t kMetricCount = 4;
std::string_view to_string(Metric m);

struct Series {
  std::vector<double> mean;
  std::vector<double> std_error;
};

/// Per-tick values of one repetition for one learner.
struct RepetitionRecord {
  std::size_t horizon = 0;
  std::size_t estimates = 0;
  std::array<std::vector<double>, kMetricCount> network;
  Matrix node_er;         // estimates x horizon
  Matrix node_filtering;  // estimates x horizon
  bool has_accuracy = false;

  RepetitionRecord() = default;
  RepetitionRecord(std::size_t horizon, std::size_t estimates, bool has_accuracy);
};

/// Across-repetition accumulation of one learner's metrics. Merging is a sum, so the result
/// does not depend on how repetitions were grouped, only on the order they were added.
class VariantTrace {
 public:
  VariantTrace() = default;
  VariantTrace(std::size_t horizon, std::size_t estimates, double tail_fraction);

  void add(const RepetitionRecord& rep);
  void merge(const VariantTrace& other);

  std::size_t horizon() const { return horizon_; }
  std::size_t estimates() const { return estimates_; }
  std::size_t repetitions() const { return repetitions_; }
  bool has_accuracy() const { return has_accuracy_; }
  std::size_t tail_start() const { return tail_start_; }

  /// Mean and standard error over repetitions, per tick.
  Series series(Metric m) const;
  /// Per-node mean excess risk and filtering MSE, per tick.
  Vector node_er_mean(std::size_t tick) const;
  Vector node_filtering_mean(std::size_t tick) const;
  /// Per-node excess risk averaged over the tail window and all repetitions.
  Vector node_er_tail() const;

  /// Tail-window average with its standard error across repetitions (each repetition's
  /// tail mean is one observation).
  struct TailSummary {
    double mean = 0.0;
    double std_error = 0.0;
  };
  TailSummary tail(Metric m) const;
  const std::vector<double>& tail_values(Metric m) const { return tail_values_[static_cast<std::size_t>(m)]; }

 private:
  std::size_t horizon_ = 0;
  std::size_t estimates_ = 0;
  std::size_t repetitions_ = 0;
  std::size_t tail_start_ = 0;
  bool has_accuracy_ = false;
  std::array<std::vector<double>, kMetricCount> sum_;
  std::array<std::vector<double>, kMetricCount> sum_sq_;
  Matrix node_er_sum_;
  Matrix node_filtering_sum_;
  std::array<std::vector<double>, kMetricCount> tail_values_;
};

/// Averaged traces of every learner plus pooled ROC curves.
struct MetricTrace {
  std::uint64_t seed = 0;
  std::size_t horizon = 0;
  std::size_t repetitions = 0;
  std::vector<std::string> learners;
  std::map<std::string, VariantTrace> variants;
  std::map<std::string, std::map<std::size_t, RocAccumulator>> roc;
  /// Digest of the samples each learner consumed; equal across learners by construction.
  std::map<std::string, std::uint64_t> sample_digest;

  const VariantTrace& at(const std::string& learner) const { return variants.at(learner); }
};

}  // namespace diffrisk
