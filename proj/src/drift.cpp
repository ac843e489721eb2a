#include "diffrisk/drift.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "diffrisk/error.hpp"

namespace diffrisk {

namespace {

void fill_normal(Rng& rng, Eigen::Ref<Vector> out) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index j = 0; j < out.size(); ++j) {
    out(j) = n(rng);
  }
}

bool flip(Rng& rng, double p) {
  if (p <= 0.0) {
    return false;
  }
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

void check_probability(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ValidationError(std::string(what) + ": label noise must lie in [0, 1]");
  }
}

bool is_zero(const Matrix& m) { return m.cwiseAbs().maxCoeff() == 0.0; }

}  // namespace

Matrix psd_sqrt(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) {
    throw DimensionMismatch(std::string(what) + ": matrix must be square");
  }
  if (m.size() == 0) {
    return m;
  }
  if (!m.isApprox(m.transpose(), 1e-12) && !(m - m.transpose()).isZero(1e-14)) {
    throw ValidationError(std::string(what) + ": matrix must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m + m.transpose()));
  const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() < -1e-12 * scale) {
    throw ValidationError(std::string(what) + ": matrix must be positive semidefinite");
  }
  const Vector roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

LinearModelSource::LinearModelSource(Matrix feature_covariance, Vector optimizer, double noise_variance)
    : covariance_(std::move(feature_covariance)), optimizer_(std::move(optimizer)) {
  if (covariance_.rows() != optimizer_.size()) {
    throw DimensionMismatch("linear model: R_h and optimizer dimensions differ");
  }
  if (!(noise_variance >= 0.0)) {
    throw ValidationError("linear model: noise variance must be nonnegative");
  }
  root_ = psd_sqrt(covariance_, "feature covariance");
  noise_sd_ = std::sqrt(noise_variance);
}

void LinearModelSource::draw(Rng& rng, Eigen::Ref<Vector> features, double& label) const {
  Vector g(optimizer_.size());
  fill_normal(rng, g);
  features.noalias() = root_ * g;
  const double z = std::normal_distribution<double>(0.0, 1.0)(rng);
  label = features.dot(optimizer_) + noise_sd_ * z;
}

std::optional<LinearMoments> LinearModelSource::moments() const {
  LinearMoments m;
  m.feature_covariance = covariance_;
  m.cross_covariance = covariance_ * optimizer_;
  m.label_second_moment = optimizer_.dot(m.cross_covariance) + noise_sd_ * noise_sd_;
  return m;
}

GaussianPairSource::GaussianPairSource(Vector mean, double label_noise)
    : mean_(std::move(mean)), label_noise_(label_noise) {
  check_probability(label_noise, "gaussian pair");
}

void GaussianPairSource::draw(Rng& rng, Eigen::Ref<Vector> features, double& label) const {
  const bool positive = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  fill_normal(rng, features);
  if (positive) {
    features += mean_;
  } else {
    features -= mean_;
  }
  label = positive ? 1.0 : -1.0;
  if (flip(rng, label_noise_)) {
    label = -label;
  }
}

bool stagger_rule(int concept_id, VectorRef h) {
  const double color = h(0);
  const double shape = h(1);
  const double size = h(2);
  switch (concept_id) {
    case 1:
      return color == 1.0 && size == 0.0;  // red and small
    case 2:
      return color == 0.0 || shape == 0.5;  // green or circle
    case 3:
      return size == 0.5 || size == 1.0;  // medium or large
    default:
      throw ValidationError("stagger: concept must be 1, 2 or 3");
  }
}

StaggerSource::StaggerSource(int concept_id, double label_noise) : concept_(concept_id), label_noise_(label_noise) {
  if (concept_id < 1 || concept_id > 3) {
    throw ValidationError("stagger: concept must be 1, 2 or 3");
  }
  check_probability(label_noise, "stagger");
}

void StaggerSource::draw(Rng& rng, Eigen::Ref<Vector> features, double& label) const {
  std::uniform_int_distribution<int> level(0, 2);
  for (Eigen::Index j = 0; j < 3; ++j) {
    features(j) = 0.5 * level(rng);
  }
  label = stagger_rule(concept_, features) ? 1.0 : -1.0;
  if (flip(rng, label_noise_)) {
    label = -label;
  }
}

Dataset stagger_population(int concept_id, double label_noise) {
  check_probability(label_noise, "stagger");
  std::vector<Vector> feats;
  std::vector<double> labels;
  std::vector<double> weights;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      for (int c = 0; c < 3; ++c) {
        Vector h(3);
        h << 0.5 * a, 0.5 * b, 0.5 * c;
        const double y = stagger_rule(concept_id, h) ? 1.0 : -1.0;
        if (label_noise < 1.0) {
          feats.push_back(h);
          labels.push_back(y);
          weights.push_back((1.0 - label_noise) / 27.0);
        }
        if (label_noise > 0.0) {
          feats.push_back(h);
          labels.push_back(-y);
          weights.push_back(label_noise / 27.0);
        }
      }
    }
  }
  Dataset d;
  d.features.resize(3, static_cast<Eigen::Index>(feats.size()));
  d.labels.resize(static_cast<Eigen::Index>(feats.size()));
  d.weights.resize(static_cast<Eigen::Index>(feats.size()));
  for (std::size_t j = 0; j < feats.size(); ++j) {
    const auto c = static_cast<Eigen::Index>(j);
    d.features.col(c) = feats[j];
    d.labels(c) = labels[j];
    d.weights(c) = weights[j];
  }
  d.exact = true;
  return d;
}

Sample Tick::sample(std::size_t k) const {
  const auto c = static_cast<Eigen::Index>(k);
  return Sample{features.col(c), labels(c)};
}

std::string_view to_string(DriftKind kind) {
  switch (kind) {
    case DriftKind::stationary:
      return "stationary";
    case DriftKind::random_walk_mean:
      return "random-walk-mean";
    case DriftKind::random_walk_optimizer:
      return "random-walk-optimizer";
    case DriftKind::stagger:
      return "stagger";
    case DriftKind::dataset:
      return "dataset";
    case DriftKind::replay:
      return "replay";
  }
  return "unknown";
}

DriftProcess::DriftProcess(std::size_t nodes, std::uint64_t seed)
    : data_rng_(make_rng(seed, 0)), eval_rng_(make_rng(seed, 1)), drift_rng_(make_rng(seed, 2)), nodes_(nodes) {
  if (nodes == 0) {
    throw ValidationError("drift process: at least one node required");
  }
}

const Tick& DriftProcess::next() {
  ++time_;
  evolve();
  fill_tick();
  tick_.time = time_;
  tick_.optimizer = optimizer();
  return tick_;
}

void DriftProcess::fill_tick() {
  const auto source = distribution();
  const auto n = static_cast<Eigen::Index>(nodes_);
  tick_.features.resize(static_cast<Eigen::Index>(dim()), n);
  tick_.labels.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    double y = 0.0;
    source->draw(data_rng_, tick_.features.col(k), y);
    tick_.labels(k) = y;
  }
}

Dataset DriftProcess::draw_eval(std::size_t count) { return distribution()->draw_batch(eval_rng_, count); }

namespace {

class GaussianPairProcess final : public DriftProcess {
 public:
  GaussianPairProcess(const Matrix& walk_cov, std::size_t nodes, double label_noise, std::uint64_t seed, Vector m0)
      : DriftProcess(nodes, seed),
        walk_root_(psd_sqrt(walk_cov, "mean random-walk covariance")),
        walk_cov_(walk_cov),
        mean_(std::move(m0)),
        label_noise_(label_noise) {
    if (walk_cov.rows() != mean_.size()) {
      throw DimensionMismatch("gaussian pair: walk covariance and mean dimensions differ");
    }
    check_probability(label_noise, "gaussian pair");
    walking_ = !is_zero(walk_cov);
    source_ = std::make_shared<GaussianPairSource>(mean_, label_noise_);
  }

  DriftKind kind() const override { return walking_ ? DriftKind::random_walk_mean : DriftKind::stationary; }
  std::size_t dim() const override { return static_cast<std::size_t>(mean_.size()); }
  bool classification() const override { return true; }
  std::shared_ptr<const DataSource> distribution() const override { return source_; }
  std::uint64_t regime() const override { return walking_ ? time() : 0; }
  const Vector& mean() const { return mean_; }

 protected:
  void evolve() override {
    if (!walking_) {
      return;
    }
    Vector g(mean_.size());
    fill_normal(drift_rng_, g);
    mean_ += walk_root_ * g;
    source_ = std::make_shared<GaussianPairSource>(mean_, label_noise_);
  }

 private:
  Matrix walk_root_;
  Matrix walk_cov_;
  Vector mean_;
  double label_noise_;
  bool walking_ = false;
  std::shared_ptr<const DataSource> source_;
};

class LinearWalkProcess final : public DriftProcess {
 public:
  LinearWalkProcess(const Vector& base, const Matrix& q, std::uint64_t seed, const Matrix& r, double noise_variance,
                    std::size_t nodes)
      : DriftProcess(nodes, seed),
        q_(q),
        q_root_(psd_sqrt(q, "optimizer random-walk covariance")),
        r_(r),
        noise_variance_(noise_variance),
        optimizer_(base) {
    if (q.rows() != base.size() || r.rows() != base.size()) {
      throw DimensionMismatch("random-walk optimizer: Q, R_h and w0 dimensions differ");
    }
    walking_ = !is_zero(q);
    source_ = std::make_shared<LinearModelSource>(r_, optimizer_, noise_variance_);
  }

  DriftKind kind() const override {
    return walking_ ? DriftKind::random_walk_optimizer : DriftKind::stationary;
  }
  std::size_t dim() const override { return static_cast<std::size_t>(optimizer_.size()); }
  bool classification() const override { return false; }
  std::shared_ptr<const DataSource> distribution() const override { return source_; }
  std::optional<Vector> optimizer() const override { return optimizer_; }
  std::uint64_t regime() const override { return walking_ ? time() : 0; }
  Matrix drift_covariance() const override { return q_; }

 protected:
  void evolve() override {
    if (!walking_) {
      return;
    }
    Vector g(optimizer_.size());
    fill_normal(drift_rng_, g);
    optimizer_ += q_root_ * g;
    source_ = std::make_shared<LinearModelSource>(r_, optimizer_, noise_variance_);
  }

 private:
  Matrix q_;
  Matrix q_root_;
  Matrix r_;
  double noise_variance_;
  Vector optimizer_;
  bool walking_ = false;
  std::shared_ptr<const DataSource> source_;
};

class StaggerProcess final : public DriftProcess {
 public:
  StaggerProcess(std::size_t nodes, double label_noise, std::uint64_t seed, bool cycle)
      : DriftProcess(nodes, seed), label_noise_(label_noise), cycle_(cycle) {
    check_probability(label_noise, "stagger");
    for (int c = 1; c <= 3; ++c) {
      sources_.push_back(std::make_shared<StaggerSource>(c, label_noise));
      populations_.push_back(stagger_population(c, label_noise));
    }
  }

  DriftKind kind() const override { return DriftKind::stagger; }
  std::size_t dim() const override { return 3; }
  bool classification() const override { return true; }
  std::shared_ptr<const DataSource> distribution() const override { return sources_[index()]; }
  std::optional<Dataset> population() const override { return populations_[index()]; }
  std::uint64_t regime() const override { return static_cast<std::uint64_t>(concept_); }

 protected:
  void evolve() override {
    if (!cycle_ && time() > kStaggerHorizon) {
      throw TickBeyondHorizon("stagger: tick " + std::to_string(time()) + " is past the 120-tick schedule");
    }
    concept_ = stagger_concept(time());
  }

 private:
  std::size_t index() const { return static_cast<std::size_t>(std::max(concept_, 1) - 1); }

  double label_noise_;
  bool cycle_;
  int concept_ = 1;
  std::vector<std::shared_ptr<const DataSource>> sources_;
  std::vector<Dataset> populations_;
};

class DatasetProcess final : public DriftProcess {
 public:
  DatasetProcess(Dataset data, std::size_t nodes, std::uint64_t seed) : DriftProcess(nodes, seed) {
    if (data.size() < nodes) {
      throw ValidationError("dataset stream: fewer samples than nodes");
    }
    data.exact = true;
    data.weights = Vector::Constant(static_cast<Eigen::Index>(data.size()), 1.0 / static_cast<double>(data.size()));
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), drift_rng_);
    shards_.resize(nodes);
    for (std::size_t j = 0; j < order.size(); ++j) {
      shards_[j % nodes].push_back(order[j]);
    }
    cursor_.assign(nodes, 0);
    source_ = std::make_shared<PopulationSource>(data);
    data_ = std::move(data);
  }

  DriftKind kind() const override { return DriftKind::dataset; }
  std::size_t dim() const override { return data_.dim(); }
  bool classification() const override { return true; }
  std::shared_ptr<const DataSource> distribution() const override { return source_; }
  std::optional<Dataset> population() const override { return data_; }
  std::uint64_t regime() const override { return 0; }

  void fill_tick() override {
    tick_.features.resize(static_cast<Eigen::Index>(dim()), static_cast<Eigen::Index>(nodes()));
    tick_.labels.resize(static_cast<Eigen::Index>(nodes()));
    for (std::size_t k = 0; k < nodes(); ++k) {
      const auto& shard = shards_[k];
      const auto j = static_cast<Eigen::Index>(shard[cursor_[k]]);
      cursor_[k] = (cursor_[k] + 1) % shard.size();
      tick_.features.col(static_cast<Eigen::Index>(k)) = data_.features.col(j);
      tick_.labels(static_cast<Eigen::Index>(k)) = data_.labels(j);
    }
  }

 protected:
  void evolve() override {}

 private:
  Dataset data_;
  std::vector<std::vector<std::size_t>> shards_;
  std::vector<std::size_t> cursor_;
  std::shared_ptr<const DataSource> source_;
};

class ReplayProcess final : public DriftProcess {
 public:
  explicit ReplayProcess(std::vector<Tick> ticks)
      : DriftProcess(ticks.empty() ? 1 : ticks.front().nodes(), 0), ticks_(std::move(ticks)) {
    if (ticks_.empty()) {
      throw ValidationError("replay: no ticks recorded");
    }
    for (const auto& t : ticks_) {
      if (t.nodes() != nodes() || static_cast<std::size_t>(t.features.rows()) != dim()) {
        throw DimensionMismatch("replay: ticks disagree on node count or dimension");
      }
    }
    classification_ = std::all_of(ticks_.begin(), ticks_.end(), [](const Tick& t) {
      return (t.labels.array().abs() == 1.0).all();
    });
  }

  DriftKind kind() const override { return DriftKind::replay; }
  std::size_t dim() const override { return static_cast<std::size_t>(ticks_.front().features.rows()); }
  bool classification() const override { return classification_; }
  std::shared_ptr<const DataSource> distribution() const override { return source_; }
  std::optional<Vector> optimizer() const override {
    return cursor_ == 0 ? std::nullopt : ticks_[cursor_ - 1].optimizer;
  }

  std::uint64_t regime() const override { return time(); }

 protected:
  void evolve() override {
    if (cursor_ >= ticks_.size()) {
      throw TickBeyondHorizon("replay: recorded stream has only " + std::to_string(ticks_.size()) + " ticks");
    }
    ++cursor_;
    const Tick& t = ticks_[cursor_ - 1];
    source_ = std::make_shared<PopulationSource>(Dataset::uniform(t.features, t.labels));
  }
  void fill_tick() override {
    tick_.features = ticks_[cursor_ - 1].features;
    tick_.labels = ticks_[cursor_ - 1].labels;
  }

 private:
  std::vector<Tick> ticks_;
  std::size_t cursor_ = 0;
  bool classification_ = true;
  std::shared_ptr<const DataSource> source_;
};

}  // namespace

int stagger_concept(std::size_t time) {
  if (time == 0) {
    return 1;
  }
  return static_cast<int>(((time - 1) % kStaggerHorizon) / kStaggerPeriod) + 1;
}

std::unique_ptr<DriftProcess> gaussian_pair_stream(const Matrix& mean_walk_cov, std::size_t n_nodes,
                                                   double label_noise, std::uint64_t seed,
                                                   std::optional<Vector> m0) {
  Vector start = m0 ? *m0 : Vector::Ones(mean_walk_cov.rows());
  return std::make_unique<GaussianPairProcess>(mean_walk_cov, n_nodes, label_noise, seed, std::move(start));
}

std::unique_ptr<DriftProcess> random_walk_optimizer(const Vector& base, const Matrix& q, std::uint64_t seed,
                                                    const Matrix& feature_covariance, double noise_variance,
                                                    std::size_t n_nodes) {
  return std::make_unique<LinearWalkProcess>(base, q, seed, feature_covariance, noise_variance, n_nodes);
}

std::unique_ptr<DriftProcess> stagger_stream(std::size_t n_nodes, double label_noise, std::uint64_t seed,
                                             bool cycle) {
  return std::make_unique<StaggerProcess>(n_nodes, label_noise, seed, cycle);
}

std::unique_ptr<DriftProcess> dataset_stream(Dataset data, std::size_t n_nodes, std::uint64_t seed) {
  return std::make_unique<DatasetProcess>(std::move(data), n_nodes, seed);
}

std::unique_ptr<DriftProcess> replay_stream(std::vector<Tick> ticks) {
  return std::make_unique<ReplayProcess>(std::move(ticks));
}

Vector reference_optimizer(std::span<const Tick> history, const RiskModel& model, double tol, std::size_t window,
                           std::optional<Vector> start) {
  if (history.empty() || history.back().nodes() == 0) {
    throw ValidationError("reference_optimizer: no samples available");
  }
  const std::size_t used = std::min(history.size(), window + 1);
  const auto first = history.size() - used;
  std::size_t count = 0;
  for (std::size_t t = first; t < history.size(); ++t) {
    count += history[t].nodes();
  }
  Matrix features(history.back().features.rows(), static_cast<Eigen::Index>(count));
  Vector labels(static_cast<Eigen::Index>(count));
  Eigen::Index col = 0;
  for (std::size_t t = first; t < history.size(); ++t) {
    const auto n = static_cast<Eigen::Index>(history[t].nodes());
    features.middleCols(col, n) = history[t].features;
    labels.segment(col, n) = history[t].labels;
    col += n;
  }
  BatchOptions opts;
  opts.tolerance = tol;
  opts.start = std::move(start);
  return batch_minimize(model, Dataset::uniform(std::move(features), std::move(labels)), opts);
}

void write_tick_record(std::ostream& out, const Tick& tick) {
  nlohmann::json j;
  j["tick"] = tick.time;
  j["labels"] = std::vector<double>(tick.labels.data(), tick.labels.data() + tick.labels.size());
  auto feats = nlohmann::json::array();
  for (Eigen::Index k = 0; k < tick.features.cols(); ++k) {
    const Vector col = tick.features.col(k);
    feats.push_back(std::vector<double>(col.data(), col.data() + col.size()));
  }
  j["features"] = std::move(feats);
  if (tick.optimizer) {
    j["optimizer"] = std::vector<double>(tick.optimizer->data(), tick.optimizer->data() + tick.optimizer->size());
  }
  out << j.dump() << '\n';
}

std::vector<Tick> read_tick_records(std::istream& in) {
  std::vector<Tick> ticks;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      const auto j = nlohmann::json::parse(line);
      Tick t;
      t.time = j.at("tick").get<std::size_t>();
      const auto labels = j.at("labels").get<std::vector<double>>();
      const auto feats = j.at("features").get<std::vector<std::vector<double>>>();
      if (feats.size() != labels.size() || feats.empty()) {
        throw MalformedLine("record: label and feature counts differ", line_no);
      }
      const auto m = static_cast<Eigen::Index>(feats.front().size());
      t.features.resize(m, static_cast<Eigen::Index>(feats.size()));
      t.labels = Eigen::Map<const Vector>(labels.data(), static_cast<Eigen::Index>(labels.size()));
      for (std::size_t k = 0; k < feats.size(); ++k) {
        if (static_cast<Eigen::Index>(feats[k].size()) != m) {
          throw MalformedLine("record: ragged feature arrays", line_no);
        }
        t.features.col(static_cast<Eigen::Index>(k)) = Eigen::Map<const Vector>(feats[k].data(), m);
      }
      if (j.contains("optimizer")) {
        const auto w = j.at("optimizer").get<std::vector<double>>();
        t.optimizer = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
      }
      ticks.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw MalformedLine("record line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
  }
  return ticks;
}

}  // namespace diffrisk
