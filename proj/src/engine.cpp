#include "diffrisk/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <exception>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "diffrisk/error.hpp"
#include "diffrisk/theory.hpp"

namespace diffrisk {

namespace {

bool uses_combination(Variant v) {
  return v == Variant::general_diffusion || v == Variant::atc || v == Variant::cta ||
         v == Variant::non_cooperative || v == Variant::consensus;
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t j = 0; j < bytes; ++j) {
    h ^= p[j];
    h *= 1099511628211ULL;
  }
  return h;
}

void check_tick(const Tick& tick, std::size_t dim, std::size_t nodes) {
  if (static_cast<std::size_t>(tick.features.rows()) != dim || tick.nodes() != nodes ||
      static_cast<std::size_t>(tick.features.cols()) != nodes) {
    throw DimensionMismatch("tick shape " + std::to_string(tick.features.rows()) + "x" +
                            std::to_string(tick.features.cols()) + " does not match the learner (" +
                            std::to_string(dim) + "x" + std::to_string(nodes) + ")");
  }
}

}  // namespace

LearnerSpec make_learner(std::string name, Variant variant, const Matrix& a, double step_size,
                         StepSchedule schedule) {
  LearnerSpec spec;
  spec.name = std::move(name);
  spec.variant = variant;
  spec.step_size = step_size;
  spec.schedule = schedule;
  const auto n = a.rows();
  const Matrix id = Matrix::Identity(n, n);
  switch (variant) {
    case Variant::atc:
    case Variant::cta:
    case Variant::non_cooperative:
      spec.combination = preset_matrices(variant, a);
      break;
    case Variant::tha:
      spec.combination = preset_matrices(Variant::non_cooperative, a);
      break;
    case Variant::general_diffusion:
      spec.combination = general_matrices(id, a, id);
      break;
    case Variant::consensus:
      spec.combination = CombinationSet{a, id, id};
      validate_combination(spec.combination);
      break;
    case Variant::cfg:
      spec.combination = CombinationSet{id, id, id};
      break;
  }
  return spec;
}

void validate_learner(const LearnerSpec& spec, std::size_t nodes, std::size_t dim) {
  if (!(spec.step_size > 0.0) || !std::isfinite(spec.step_size)) {
    throw ValidationError("learner '" + spec.name + "': step size must be positive");
  }
  if (spec.schedule == StepSchedule::inverse_sqrt && spec.variant != Variant::consensus) {
    throw ValidationError("learner '" + spec.name + "': the inverse-sqrt schedule is only allowed for consensus");
  }
  if (uses_combination(spec.variant) || spec.variant == Variant::tha) {
    if (spec.combination.size() != nodes) {
      throw DimensionMismatch("learner '" + spec.name + "': combination matrices are not N x N");
    }
    validate_combination(spec.combination);
  }
  if (spec.initial_weights) {
    const auto& w = *spec.initial_weights;
    if (static_cast<std::size_t>(w.rows()) != dim || static_cast<std::size_t>(w.cols()) != nodes) {
      throw DimensionMismatch("learner '" + spec.name + "': initial weights must be M x N");
    }
  }
}

double step_size_at(const LearnerSpec& spec, std::size_t time) {
  if (spec.schedule == StepSchedule::inverse_sqrt) {
    return spec.step_size / std::sqrt(static_cast<double>(std::max<std::size_t>(time, 1)));
  }
  return spec.step_size;
}

NetworkState initial_state(const LearnerSpec& spec, std::size_t dim, std::size_t nodes) {
  NetworkState s;
  const auto m = static_cast<Eigen::Index>(dim);
  const auto n = static_cast<Eigen::Index>(nodes);
  s.weights = spec.initial_weights ? *spec.initial_weights : Matrix::Zero(m, n);
  s.phi = Matrix::Zero(m, n);
  s.psi = Matrix::Zero(m, n);
  s.cfg_weight = s.weights.col(0);
  s.tha_average = s.weights.rowwise().mean();
  return s;
}

void check_divergence(const Matrix& weights, std::size_t time, double step_size) {
  for (Eigen::Index k = 0; k < weights.cols(); ++k) {
    for (Eigen::Index j = 0; j < weights.rows(); ++j) {
      const double x = weights(j, k);
      if (!std::isfinite(x) || std::abs(x) > kDivergenceThreshold) {
        std::ostringstream msg;
        msg << "divergence at node " << k << ", tick " << time << " (step size " << step_size << "): weight "
            << x;
        throw Divergence(msg.str(), static_cast<std::size_t>(k), time, step_size);
      }
    }
  }
}

Learner::Sparse Learner::compile(const Matrix& m) {
  Sparse out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index k = 0; k < m.cols(); ++k) {
    for (Eigen::Index l = 0; l < m.rows(); ++l) {
      if (m(l, k) != 0.0) {
        out[static_cast<std::size_t>(k)].rows.push_back(static_cast<std::size_t>(l));
        out[static_cast<std::size_t>(k)].values.push_back(m(l, k));
      }
    }
  }
  return out;
}

bool Learner::is_identity(const Matrix& m) { return m.isIdentity(0.0); }

void Learner::combine(const Sparse& a, const Matrix& in, Matrix& out) const {
  for (std::size_t k = 0; k < a.size(); ++k) {
    auto col = out.col(static_cast<Eigen::Index>(k));
    col.setZero();
    const auto& c = a[k];
    for (std::size_t j = 0; j < c.rows.size(); ++j) {
      col.noalias() += c.values[j] * in.col(static_cast<Eigen::Index>(c.rows[j]));
    }
  }
}

Learner::Learner(LearnerSpec spec, const RiskModel& model, std::size_t dim, std::size_t nodes)
    : Learner(spec, model, initial_state(spec, dim, nodes)) {}

Learner::Learner(LearnerSpec spec, const RiskModel& model, NetworkState state)
    : spec_(std::move(spec)), model_(&model), state_(std::move(state)) {
  const auto dim = static_cast<std::size_t>(state_.weights.rows());
  const auto nodes = static_cast<std::size_t>(state_.weights.cols());
  if (model.dim() != dim) {
    throw DimensionMismatch("learner '" + spec_.name + "': model dimension differs from the stream");
  }
  validate_learner(spec_, nodes, dim);
  if (state_.phi.rows() != state_.weights.rows() || state_.phi.cols() != state_.weights.cols()) {
    state_.phi = Matrix::Zero(state_.weights.rows(), state_.weights.cols());
  }
  if (state_.cfg_weight.size() != state_.weights.rows()) {
    state_.cfg_weight = state_.weights.col(0);
  }
  if (uses_combination(spec_.variant) || spec_.variant == Variant::tha) {
    a1_ = compile(spec_.combination.a1);
    a2_ = compile(spec_.combination.a2);
    c_ = compile(spec_.combination.c);
    a1_identity_ = is_identity(spec_.combination.a1);
    a2_identity_ = is_identity(spec_.combination.a2);
    c_identity_ = is_identity(spec_.combination.c);
  }
}

void Learner::step(const Tick& tick) {
  const auto dim = static_cast<std::size_t>(state_.weights.rows());
  const auto nodes = static_cast<std::size_t>(state_.weights.cols());
  check_tick(tick, dim, nodes);
  digest_ = fnv1a(digest_, tick.features.data(), sizeof(double) * static_cast<std::size_t>(tick.features.size()));
  digest_ = fnv1a(digest_, tick.labels.data(), sizeof(double) * static_cast<std::size_t>(tick.labels.size()));

  const std::size_t time = state_.time + 1;
  const double mu = step_size_at(spec_, time);
  const RiskModel& model = *model_;
  auto& s = state_;

  switch (spec_.variant) {
    case Variant::general_diffusion:
    case Variant::atc:
    case Variant::cta:
    case Variant::non_cooperative:
    case Variant::tha: {
      if (!a1_identity_) {
        combine(a1_, s.weights, s.phi);
      }
      const Matrix& phi = a1_identity_ ? s.weights : s.phi;
      s.psi = phi;
      for (std::size_t k = 0; k < nodes; ++k) {
        const auto kc = static_cast<Eigen::Index>(k);
        if (c_identity_) {
          accumulate_gradient(model, phi.col(kc), tick.features.col(kc), tick.labels(kc), -mu, s.psi.col(kc));
          continue;
        }
        const auto& col = c_[k];
        for (std::size_t j = 0; j < col.rows.size(); ++j) {
          const auto l = static_cast<Eigen::Index>(col.rows[j]);
          accumulate_gradient(model, phi.col(kc), tick.features.col(l), tick.labels(l), -mu * col.values[j],
                              s.psi.col(kc));
        }
      }
      if (a2_identity_) {
        s.weights.swap(s.psi);
      } else {
        combine(a2_, s.psi, s.weights);
      }
      check_divergence(s.weights, time, mu);
      if (spec_.variant == Variant::tha) {
        s.tha_average = s.weights.rowwise().mean();
      }
      break;
    }
    case Variant::consensus: {
      if (a1_identity_) {
        s.phi = s.weights;
      } else {
        combine(a1_, s.weights, s.phi);
      }
      for (std::size_t k = 0; k < nodes; ++k) {
        const auto kc = static_cast<Eigen::Index>(k);
        accumulate_gradient(model, s.weights.col(kc), tick.features.col(kc), tick.labels(kc), -mu, s.phi.col(kc));
      }
      s.weights.swap(s.phi);
      check_divergence(s.weights, time, mu);
      break;
    }
    case Variant::cfg: {
      Vector next = s.cfg_weight;
      const double scale = -mu / static_cast<double>(nodes);
      for (std::size_t k = 0; k < nodes; ++k) {
        const auto kc = static_cast<Eigen::Index>(k);
        accumulate_gradient(model, s.cfg_weight, tick.features.col(kc), tick.labels(kc), scale, next);
      }
      s.cfg_weight.swap(next);
      check_divergence(s.cfg_weight, time, mu);
      break;
    }
  }
  s.time = time;
}

Matrix Learner::estimates() const {
  switch (spec_.variant) {
    case Variant::cfg:
      return state_.cfg_weight;
    case Variant::tha:
      return state_.tha_average;
    default:
      return state_.weights;
  }
}

std::size_t Learner::estimate_count() const {
  return spec_.variant == Variant::cfg || spec_.variant == Variant::tha
             ? 1
             : static_cast<std::size_t>(state_.weights.cols());
}

namespace {

void run_single(NetworkState& state, const LearnerSpec& spec, const RiskModel& model, const Tick& tick) {
  Learner learner(spec, model, std::move(state));
  learner.step(tick);
  state = learner.state();
}

}  // namespace

void diffusion_step(NetworkState& state, const LearnerSpec& spec, const RiskModel& model, const Tick& tick) {
  if (spec.variant == Variant::consensus || spec.variant == Variant::cfg) {
    throw ValidationError("diffusion_step: learner '" + spec.name + "' is not a diffusion variant");
  }
  run_single(state, spec, model, tick);
}

void consensus_step(NetworkState& state, const LearnerSpec& spec, const RiskModel& model, const Tick& tick) {
  if (spec.variant != Variant::consensus) {
    throw ValidationError("consensus_step: learner '" + spec.name + "' is not a consensus learner");
  }
  run_single(state, spec, model, tick);
}

void cfg_step(NetworkState& state, const LearnerSpec& spec, const RiskModel& model, const Tick& tick) {
  if (spec.variant != Variant::cfg) {
    throw ValidationError("cfg_step: learner '" + spec.name + "' is not a centralized learner");
  }
  run_single(state, spec, model, tick);
}

Vector tha_average(const NetworkState& state) { return state.weights.rowwise().mean(); }

StabilityReport stability_check(double step_size, const Matrix& c, const HessianBounds& bounds, double alpha) {
  StabilityReport r;
  const auto nc = make_noise_constants(alpha, 0.0, 0.0, c);
  r.steady_state_limit = steady_state_mu_limit(bounds.lambda_min, bounds.lambda_max, alpha);
  r.tracking_limit = tracking_mu_limit(nc, bounds.lambda_min, bounds.lambda_max);
  r.steady_state_ok = step_size > 0.0 && step_size < r.steady_state_limit;
  r.tracking_ok = step_size > 0.0 && step_size < r.tracking_limit;
  r.ok = r.steady_state_ok && r.tracking_ok;
  std::ostringstream msg;
  if (!r.steady_state_ok) {
    msg << "step size " << step_size << " violates the steady-state condition mu < min{2 l_max/(l_max^2+alpha), "
        << "2 l_min/(l_min^2+alpha)} = " << r.steady_state_limit;
  }
  if (!r.tracking_ok) {
    if (!r.steady_state_ok) {
      msg << "; ";
    }
    msg << "step size " << step_size << " violates the tracking condition mu < 2 l_min C_*/(|C|_1^2 (l_max^2+alpha)) = "
        << r.tracking_limit;
  }
  r.warning = msg.str();
  return r;
}

std::string_view to_string(EvalMode m) {
  switch (m) {
    case EvalMode::automatic:
      return "auto";
    case EvalMode::analytic:
      return "analytic";
    case EvalMode::exact:
      return "exact";
    case EvalMode::sampled:
      return "sampled";
  }
  return "unknown";
}

EvalMode parse_eval_mode(std::string_view name) {
  for (auto m : {EvalMode::automatic, EvalMode::analytic, EvalMode::exact, EvalMode::sampled}) {
    if (name == to_string(m)) {
      return m;
    }
  }
  throw ValidationError("unknown evaluation mode '" + std::string(name) + "'");
}

EvalMode resolve_eval_mode(const ExperimentSpec& spec, const DriftProcess& process) {
  const bool analytic_ok = spec.model.kind() == LossKind::square && process.moments().has_value() &&
                           process.optimizer().has_value();
  const auto population = process.population();
  EvalMode mode = spec.evaluation;
  if (mode == EvalMode::automatic) {
    if (analytic_ok) {
      mode = EvalMode::analytic;
    } else if (population && population->size() <= spec.exact_population_limit) {
      mode = EvalMode::exact;
    } else {
      mode = EvalMode::sampled;
    }
  }
  if (mode == EvalMode::analytic && !analytic_ok) {
    throw NoMomentsAvailable("experiment: analytic evaluation needs a square loss and an exact linear model");
  }
  if (mode == EvalMode::exact && !population) {
    throw ValidationError("experiment: exact evaluation needs a finite population");
  }
  return mode;
}

RepetitionResult run_repetition(const ExperimentSpec& spec, std::size_t index) {
  if (!spec.make_process) {
    throw ValidationError("experiment: no drift process configured");
  }
  if (spec.horizon == 0) {
    throw ValidationError("experiment: horizon must be at least one tick");
  }
  auto process = spec.make_process(derive_seed(spec.seed, index));
  const std::size_t dim = process->dim();
  const std::size_t nodes = process->nodes();
  const RiskModel& model = spec.model;
  if (model.dim() != dim) {
    throw DimensionMismatch("experiment: model dimension " + std::to_string(model.dim()) +
                            " differs from the stream dimension " + std::to_string(dim));
  }
  std::vector<Learner> learners;
  learners.reserve(spec.learners.size());
  for (const auto& l : spec.learners) {
    learners.emplace_back(l, model, dim, nodes);
  }

  const EvalMode mode = resolve_eval_mode(spec, *process);
  const bool classification = process->classification();
  const std::set<std::size_t> roc_ticks(spec.roc_ticks.begin(), spec.roc_ticks.end());

  RepetitionResult result;
  for (const auto& l : learners) {
    result.records.emplace_back(spec.horizon, l.estimate_count(), classification);
  }
  result.roc.resize(learners.size());

  std::deque<Tick> history;
  std::optional<Vector> reference;
  std::optional<std::uint64_t> reference_regime;
  std::optional<Dataset> population;
  std::optional<std::uint64_t> population_regime;

  for (std::size_t t = 1; t <= spec.horizon; ++t) {
    const Tick& tick = process->next();
    const std::uint64_t regime = process->regime();

    // w_i for this tick
    if (tick.optimizer) {
      reference = *tick.optimizer;
    } else if (auto pop = process->population()) {
      if (!reference_regime || *reference_regime != regime) {
        BatchOptions opts;
        opts.tolerance = spec.reference_tolerance;
        opts.start = reference;
        reference = batch_minimize(model, *pop, opts);
        reference_regime = regime;
      }
    } else {
      history.push_back(tick);
      while (history.size() > spec.reference_window + 1) {
        history.pop_front();
      }
      const std::vector<Tick> pooled(history.begin(), history.end());
      reference = reference_optimizer(pooled, model, spec.reference_tolerance, spec.reference_window, reference);
    }
    const Vector& w_ref = *reference;

    // evaluation set
    Dataset eval;
    Matrix covariance;
    if (mode == EvalMode::analytic) {
      covariance = process->moments()->feature_covariance;
    } else if (mode == EvalMode::exact) {
      if (!population_regime || *population_regime != regime) {
        population = process->population();
        population_regime = regime;
      }
      eval = *population;
    } else {
      eval = process->draw_eval(spec.eval_batch);
    }
    const bool have_eval = !eval.empty();

    for (std::size_t i = 0; i < learners.size(); ++i) {
      auto& learner = learners[i];
      auto& rec = result.records[i];
      const std::size_t col = t - 1;
      const Matrix before = learner.estimates();

      const ExcessRisk er = mode == EvalMode::analytic ? excess_risk_quadratic(before, w_ref, covariance)
                                                        : excess_risk(before, w_ref, model, eval);
      rec.network[static_cast<std::size_t>(Metric::excess_risk)][col] = er.network;
      rec.node_er.col(static_cast<Eigen::Index>(col)) = er.per_node;
      rec.network[static_cast<std::size_t>(Metric::prediction_mse)][col] =
          (before.colwise() - w_ref).colwise().squaredNorm().mean();
      if (classification && have_eval) {
        double acc = 0.0;
        for (Eigen::Index k = 0; k < before.cols(); ++k) {
          acc += accuracy(before.col(k), eval);
        }
        rec.network[static_cast<std::size_t>(Metric::accuracy)][col] = acc / static_cast<double>(before.cols());
      }
      if (classification && have_eval && roc_ticks.count(t) != 0) {
        const auto node = std::min<Eigen::Index>(static_cast<Eigen::Index>(spec.roc_node), before.cols() - 1);
        result.roc[i][t].add(before.col(node), eval);
      }

      try {
        learner.step(tick);
      } catch (const Divergence& e) {
        throw Divergence("learner '" + learner.spec().name + "', repetition " + std::to_string(index) + ": " +
                             e.what(),
                         e.node(), e.time(), e.step_size());
      }

      const Matrix after = learner.estimates();
      const Vector filt = (after.colwise() - w_ref).colwise().squaredNorm().transpose();
      rec.network[static_cast<std::size_t>(Metric::filtering_mse)][col] = filt.mean();
      rec.node_filtering.col(static_cast<Eigen::Index>(col)) = filt;
    }
  }
  for (const auto& l : learners) {
    result.digests.push_back(l.sample_digest());
  }
  return result;
}

MetricTrace run_experiment(const ExperimentSpec& spec) {
  if (spec.repetitions == 0) {
    throw ValidationError("experiment: at least one repetition required");
  }
  std::set<std::string> names;
  for (const auto& l : spec.learners) {
    if (!names.insert(l.name).second) {
      throw ValidationError("experiment: duplicate learner name '" + l.name + "'");
    }
  }
  MetricTrace trace;
  trace.seed = spec.seed;
  trace.horizon = spec.horizon;
  trace.repetitions = spec.repetitions;

  const std::size_t threads = std::max<std::size_t>(1, std::min(spec.threads, spec.repetitions));
  std::vector<RepetitionResult> round(threads);
  std::vector<std::exception_ptr> errors(threads);
  bool initialised = false;

  auto fold = [&](const RepetitionResult& r) {
    if (!initialised) {
      for (std::size_t i = 0; i < spec.learners.size(); ++i) {
        const auto& name = spec.learners[i].name;
        trace.learners.push_back(name);
        trace.variants.emplace(name, VariantTrace(spec.horizon, r.records[i].estimates, spec.tail_fraction));
        trace.sample_digest[name] = 1469598103934665603ULL;
      }
      initialised = true;
    }
    for (std::size_t i = 0; i < spec.learners.size(); ++i) {
      const auto& name = spec.learners[i].name;
      trace.variants.at(name).add(r.records[i]);
      for (const auto& [tick, acc] : r.roc[i]) {
        trace.roc[name][tick].merge(acc);
      }
      auto& d = trace.sample_digest[name];
      d = fnv1a(d, &r.digests[i], sizeof(std::uint64_t));
    }
  };

  for (std::size_t first = 0; first < spec.repetitions; first += threads) {
    const std::size_t count = std::min(threads, spec.repetitions - first);
    if (count == 1) {
      round[0] = run_repetition(spec, first);
    } else {
      std::vector<std::thread> workers;
      for (std::size_t j = 0; j < count; ++j) {
        workers.emplace_back([&, j] {
          try {
            round[j] = run_repetition(spec, first + j);
          } catch (...) {
            errors[j] = std::current_exception();
          }
        });
      }
      for (auto& w : workers) {
        w.join();
      }
      for (std::size_t j = 0; j < count; ++j) {
        if (errors[j]) {
          std::rethrow_exception(errors[j]);
        }
      }
    }
    for (std::size_t j = 0; j < count; ++j) {
      fold(round[j]);
    }
  }
  return trace;
}

}  // namespace diffrisk
