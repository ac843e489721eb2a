#include "diffrisk/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "diffrisk/error.hpp"

namespace diffrisk {

namespace {

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double pointwise_loss(const RiskModel& model, double score, double label) {
  if (model.kind() == LossKind::logistic) {
    return softplus(-label * score);
  }
  const double e = label - score;
  return e * e;
}

// Weighted mean and its standard error for the columns of `d` (samples x series).
void weighted_stats(const Matrix& d, const Vector& p, bool exact, Vector& mean, Vector& se) {
  mean = d.transpose() * p;
  se = Vector::Zero(d.cols());
  const auto n = d.rows();
  if (exact || n < 2) {
    return;
  }
  const double factor = static_cast<double>(n) / static_cast<double>(n - 1);
  for (Eigen::Index c = 0; c < d.cols(); ++c) {
    const Vector centered = d.col(c).array() - mean(c);
    se(c) = std::sqrt(factor * p.cwiseAbs2().dot(centered.cwiseAbs2()));
  }
}

}  // namespace

ExcessRisk excess_risk(const Matrix& weights, VectorRef w_ref, const RiskModel& model, const Dataset& eval) {
  if (eval.empty()) {
    throw EmptyEvalBatch("excess_risk: empty evaluation batch");
  }
  if (weights.rows() != w_ref.size() || eval.features.rows() != w_ref.size() ||
      static_cast<std::size_t>(w_ref.size()) != model.dim()) {
    throw DimensionMismatch("excess_risk: weight, reference and feature dimensions differ");
  }
  const Matrix scores = eval.features.transpose() * weights;  // n x K
  const Vector ref_scores = eval.features.transpose() * w_ref;
  const auto n = scores.rows();
  const auto k_count = scores.cols();
  Matrix d(n, k_count + 1);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const double reg = model.kind() == LossKind::logistic
                           ? 0.5 * model.rho() * (weights.col(k).squaredNorm() - w_ref.squaredNorm())
                           : 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double y = eval.labels(j);
      d(j, k) = pointwise_loss(model, scores(j, k), y) - pointwise_loss(model, ref_scores(j), y) + reg;
    }
  }
  d.col(k_count) = d.leftCols(k_count).rowwise().mean();
  Vector mean;
  Vector se;
  weighted_stats(d, eval.weights, eval.exact, mean, se);
  ExcessRisk out;
  out.per_node = mean.head(k_count);
  out.per_node_stderr = se.head(k_count);
  out.network = mean(k_count);
  out.network_stderr = se(k_count);
  return out;
}

ExcessRisk excess_risk_quadratic(const Matrix& weights, VectorRef w_ref, const Matrix& feature_covariance) {
  if (weights.rows() != w_ref.size() || feature_covariance.rows() != w_ref.size()) {
    throw DimensionMismatch("excess_risk_quadratic: dimensions differ");
  }
  const Matrix e = weights.colwise() - w_ref;
  ExcessRisk out;
  out.per_node = (e.transpose() * feature_covariance * e).diagonal();
  out.per_node_stderr = Vector::Zero(weights.cols());
  out.network = out.per_node.mean();
  return out;
}

std::string_view to_string(Weighting w) {
  switch (w) {
    case Weighting::node_er:
      return "node-er";
    case Weighting::network_er:
      return "network-er";
    case Weighting::node_mse:
      return "node-mse";
    case Weighting::network_mse:
      return "network-mse";
  }
  return "unknown";
}

Weighting parse_weighting(std::string_view name) {
  for (auto w : {Weighting::node_er, Weighting::network_er, Weighting::node_mse, Weighting::network_mse}) {
    if (name == to_string(w)) {
      return w;
    }
  }
  throw ValidationError("unknown weighting '" + std::string(name) + "'");
}

double weighted_mse(const Matrix& errors, Weighting selector, const std::vector<Matrix>& hessians,
                    std::optional<std::size_t> k) {
  const auto n = static_cast<std::size_t>(errors.cols());
  const bool per_node = selector == Weighting::node_er || selector == Weighting::node_mse;
  if (per_node) {
    if (!k) {
      throw MissingNodeIndex("weighted_mse: node index required for a per-node weighting");
    }
    if (*k >= n) {
      throw ValidationError("weighted_mse: node index out of range");
    }
  }
  const bool hessian_weighted = selector == Weighting::node_er || selector == Weighting::network_er;
  if (hessian_weighted) {
    if (hessians.size() != n) {
      throw MissingHessian("weighted_mse: one Hessian per node is required");
    }
    for (const auto& h : hessians) {
      if (h.rows() != errors.rows() || h.cols() != errors.rows()) {
        throw DimensionMismatch("weighted_mse: Hessian size differs from the weight dimension");
      }
    }
  }
  auto node_term = [&](std::size_t j) {
    const auto c = static_cast<Eigen::Index>(j);
    if (hessian_weighted) {
      return 0.5 * errors.col(c).dot(hessians[j] * errors.col(c));
    }
    return errors.col(c).squaredNorm();
  };
  if (per_node) {
    return node_term(*k);
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    acc += node_term(j);
  }
  return acc / static_cast<double>(n);
}

double weighted_mse(const Matrix& errors, const Matrix& weighting) {
  if (weighting.rows() != errors.size() || weighting.cols() != errors.size()) {
    throw DimensionMismatch("weighted_mse: weighting must be MN x MN");
  }
  const Eigen::Map<const Vector> x(errors.data(), errors.size());
  return x.dot(weighting * x);
}

double accuracy(VectorRef w, const Dataset& batch) {
  if (batch.empty()) {
    throw EmptyEvalBatch("accuracy: empty batch");
  }
  if (batch.features.rows() != w.size()) {
    throw DimensionMismatch("accuracy: feature and weight dimensions differ");
  }
  const Vector scores = batch.features.transpose() * w;
  double correct = 0.0;
  double total = 0.0;
  for (Eigen::Index j = 0; j < scores.size(); ++j) {
    const double predicted = scores(j) >= 0.0 ? 1.0 : -1.0;
    if (predicted == batch.labels(j)) {
      correct += batch.weights(j);
    }
    total += batch.weights(j);
  }
  return correct / total;
}

double RocCurve::auc() const {
  double area = 0.0;
  for (std::size_t j = 1; j < points.size(); ++j) {
    area += (points[j].pfa - points[j - 1].pfa) * 0.5 * (points[j].pd + points[j - 1].pd);
  }
  return area;
}

RocCurve roc_curve(const Vector& scores, const Vector& labels, const Vector& weights) {
  if (scores.size() == 0) {
    throw EmptyEvalBatch("roc_curve: empty batch");
  }
  double pos = 0.0;
  double neg = 0.0;
  for (Eigen::Index j = 0; j < labels.size(); ++j) {
    (labels(j) > 0.0 ? pos : neg) += weights(j);
  }
  if (pos <= 0.0 || neg <= 0.0) {
    throw SingleClassBatch("roc_curve: both classes must be present");
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores(a) > scores(b); });
  RocCurve curve;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  double tp = 0.0;
  double fp = 0.0;
  std::size_t j = 0;
  while (j < order.size()) {
    const double threshold = scores(order[j]);
    while (j < order.size() && scores(order[j]) == threshold) {
      const auto idx = order[j];
      (labels(idx) > 0.0 ? tp : fp) += weights(idx);
      ++j;
    }
    curve.points.push_back({threshold, std::min(1.0, fp / neg), std::min(1.0, tp / pos)});
  }
  // guard against rounding in the cumulative sums
  curve.points.back().pfa = 1.0;
  curve.points.back().pd = 1.0;
  return curve;
}

RocCurve roc_curve(VectorRef w, const Dataset& batch) {
  if (batch.empty()) {
    throw EmptyEvalBatch("roc_curve: empty batch");
  }
  if (batch.features.rows() != w.size()) {
    throw DimensionMismatch("roc_curve: feature and weight dimensions differ");
  }
  return roc_curve(batch.features.transpose() * w, batch.labels, batch.weights);
}

void RocAccumulator::add(VectorRef w, const Dataset& batch) {
  const Vector s = batch.features.transpose() * w;
  for (Eigen::Index j = 0; j < s.size(); ++j) {
    scores_.push_back(s(j));
    labels_.push_back(batch.labels(j));
    weights_.push_back(batch.weights(j));
  }
}

void RocAccumulator::merge(const RocAccumulator& other) {
  scores_.insert(scores_.end(), other.scores_.begin(), other.scores_.end());
  labels_.insert(labels_.end(), other.labels_.begin(), other.labels_.end());
  weights_.insert(weights_.end(), other.weights_.begin(), other.weights_.end());
}

RocCurve RocAccumulator::curve() const {
  const auto n = static_cast<Eigen::Index>(scores_.size());
  return roc_curve(Eigen::Map<const Vector>(scores_.data(), n), Eigen::Map<const Vector>(labels_.data(), n),
                   Eigen::Map<const Vector>(weights_.data(), n));
}

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::excess_risk:
      return "er";
    case Metric::prediction_mse:
      return "mse-prediction";
    case Metric::filtering_mse:
      return "mse-filtering";
    case Metric::accuracy:
      return "accuracy";
  }
  return "unknown";
}

RepetitionRecord::RepetitionRecord(std::size_t horizon_, std::size_t estimates_, bool has_accuracy_)
    : horizon(horizon_),
      estimates(estimates_),
      node_er(static_cast<Eigen::Index>(estimates_), static_cast<Eigen::Index>(horizon_)),
      node_filtering(static_cast<Eigen::Index>(estimates_), static_cast<Eigen::Index>(horizon_)),
      has_accuracy(has_accuracy_) {
  for (auto& s : network) {
    s.assign(horizon_, 0.0);
  }
  node_er.setZero();
  node_filtering.setZero();
}

VariantTrace::VariantTrace(std::size_t horizon, std::size_t estimates, double tail_fraction)
    : horizon_(horizon), estimates_(estimates) {
  if (!(tail_fraction > 0.0 && tail_fraction <= 1.0)) {
    throw ValidationError("tail fraction must lie in (0, 1]");
  }
  const auto tail = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(tail_fraction * static_cast<double>(horizon))));
  tail_start_ = horizon > tail ? horizon - tail : 0;
  for (std::size_t m = 0; m < kMetricCount; ++m) {
    sum_[m].assign(horizon, 0.0);
    sum_sq_[m].assign(horizon, 0.0);
  }
  node_er_sum_ = Matrix::Zero(static_cast<Eigen::Index>(estimates), static_cast<Eigen::Index>(horizon));
  node_filtering_sum_ = node_er_sum_;
}

void VariantTrace::add(const RepetitionRecord& rep) {
  if (rep.horizon != horizon_ || rep.estimates != estimates_) {
    throw DimensionMismatch("trace: repetition shape differs from the trace");
  }
  has_accuracy_ = rep.has_accuracy;
  for (std::size_t m = 0; m < kMetricCount; ++m) {
    const auto& v = rep.network[m];
    double tail_sum = 0.0;
    for (std::size_t t = 0; t < horizon_; ++t) {
      sum_[m][t] += v[t];
      sum_sq_[m][t] += v[t] * v[t];
      if (t >= tail_start_) {
        tail_sum += v[t];
      }
    }
    tail_values_[m].push_back(tail_sum / static_cast<double>(horizon_ - tail_start_));
  }
  node_er_sum_ += rep.node_er;
  node_filtering_sum_ += rep.node_filtering;
  ++repetitions_;
}

void VariantTrace::merge(const VariantTrace& other) {
  if (other.repetitions_ == 0) {
    return;
  }
  if (repetitions_ == 0) {
    *this = other;
    return;
  }
  if (other.horizon_ != horizon_ || other.estimates_ != estimates_) {
    throw DimensionMismatch("trace: cannot merge traces of different shapes");
  }
  for (std::size_t m = 0; m < kMetricCount; ++m) {
    for (std::size_t t = 0; t < horizon_; ++t) {
      sum_[m][t] += other.sum_[m][t];
      sum_sq_[m][t] += other.sum_sq_[m][t];
    }
    tail_values_[m].insert(tail_values_[m].end(), other.tail_values_[m].begin(), other.tail_values_[m].end());
  }
  node_er_sum_ += other.node_er_sum_;
  node_filtering_sum_ += other.node_filtering_sum_;
  repetitions_ += other.repetitions_;
  has_accuracy_ = has_accuracy_ || other.has_accuracy_;
}

Series VariantTrace::series(Metric m) const {
  const auto idx = static_cast<std::size_t>(m);
  Series s;
  s.mean.resize(horizon_);
  s.std_error.resize(horizon_);
  const double r = static_cast<double>(std::max<std::size_t>(repetitions_, 1));
  for (std::size_t t = 0; t < horizon_; ++t) {
    const double mean = sum_[idx][t] / r;
    s.mean[t] = mean;
    if (repetitions_ > 1) {
      const double var = std::max(0.0, (sum_sq_[idx][t] / r - mean * mean) * r / (r - 1.0));
      s.std_error[t] = std::sqrt(var / r);
    } else {
      s.std_error[t] = 0.0;
    }
  }
  return s;
}

Vector VariantTrace::node_er_mean(std::size_t tick) const {
  return node_er_sum_.col(static_cast<Eigen::Index>(tick)) / static_cast<double>(std::max<std::size_t>(repetitions_, 1));
}

Vector VariantTrace::node_filtering_mean(std::size_t tick) const {
  return node_filtering_sum_.col(static_cast<Eigen::Index>(tick)) /
         static_cast<double>(std::max<std::size_t>(repetitions_, 1));
}

Vector VariantTrace::node_er_tail() const {
  const auto first = static_cast<Eigen::Index>(tail_start_);
  const auto len = static_cast<Eigen::Index>(horizon_ - tail_start_);
  return node_er_sum_.middleCols(first, len).rowwise().sum() /
         (static_cast<double>(len) * static_cast<double>(std::max<std::size_t>(repetitions_, 1)));
}

VariantTrace::TailSummary VariantTrace::tail(Metric m) const {
  const auto& v = tail_values_[static_cast<std::size_t>(m)];
  TailSummary out;
  if (v.empty()) {
    return out;
  }
  const double n = static_cast<double>(v.size());
  out.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) {
      ss += (x - out.mean) * (x - out.mean);
    }
    out.std_error = std::sqrt(ss / (n - 1.0) / n);
  }
  return out;
}

}  // namespace diffrisk
