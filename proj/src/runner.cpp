#include "diffrisk/runner.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>

#include "diffrisk/error.hpp"
#include "diffrisk/libsvm.hpp"

#ifndef DIFFRISK_VERSION
#define DIFFRISK_VERSION "0.0.0"
#endif

namespace diffrisk {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Stream index of the process instance used for theory calibration; far from repetition indices.
constexpr std::uint64_t kTheoryStream = 0x7468656f7279ULL;
constexpr std::uint64_t kTheoryRng = 11;
constexpr std::size_t kCalibrationBatch = 20000;

std::string process_kind(const std::string& process) { return process.substr(0, process.find(':')); }

bool uses_constant_step(const LearnerSpec& l) { return l.schedule == StepSchedule::constant; }

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

std::string csv_series(const std::vector<double>& mean, const std::vector<double>& se) {
  std::string out = "tick,mean,stderr\n";
  for (std::size_t i = 0; i < mean.size(); ++i) {
    out += std::to_string(i + 1) + "," + format_double(mean[i]) + "," + format_double(se[i]) + "\n";
  }
  return out;
}

std::string csv_constant(double value, std::size_t horizon) {
  return csv_series(std::vector<double>(horizon, value), std::vector<double>(horizon, 0.0));
}

class OutputWriter {
 public:
  explicit OutputWriter(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

  void write(const std::string& relative, const std::string& content) {
    const auto path = root_ / relative;
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write '" + path.string() + "'");
    out << content;
    if (!out) throw ValidationError("failed writing '" + path.string() + "'");
    files_.push_back({relative, sha256_hex(content)});
  }

  const std::vector<OutputFile>& files() const { return files_; }
  const fs::path& root() const { return root_; }

 private:
  fs::path root_;
  std::vector<OutputFile> files_;
};

const LearnerSpec& find_learner(const ResolvedExperiment& r, const std::string& name) {
  for (const auto& l : r.spec.learners) {
    if (name.empty() ? has_steady_state_form(l) : l.name == name) return l;
  }
  if (name.empty()) throw ValidationError("predict: no learner with an (A1, A2, C) form; pass --learner");
  throw ValidationError("predict: no learner named '" + name + "'");
}

json regime_json(const RegimeValue& v) { return {{"in_regime", v.in_regime}, {"mu_limit", v.mu_limit}}; }

double finite_or_nan(double v) { return std::isfinite(v) ? v : std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  std::ostringstream s;
  for (unsigned int i = 0; i < length; ++i) s << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return s.str();
}

std::vector<double> smooth(const std::vector<double>& values, std::size_t window) {
  if (window <= 1) return values;
  const std::size_t half = window / 2;
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(values.size(), i + (window - half));
    double sum = 0.0;
    for (std::size_t j = lo; j < hi; ++j) sum += values[j];
    out[i] = sum / static_cast<double>(hi - lo);
  }
  return out;
}

bool has_steady_state_form(const LearnerSpec& l) {
  switch (l.variant) {
    case Variant::general_diffusion:
    case Variant::atc:
    case Variant::cta:
    case Variant::non_cooperative:
      return uses_constant_step(l);
    default:
      return false;
  }
}

TheoryContext build_theory_context(const ResolvedExperiment& r, const ExperimentConfig& cfg, std::size_t draws) {
  TheoryContext ctx;
  const auto kind = process_kind(cfg.process);
  ctx.stationary = kind == "stationary-gauss2d" || kind == "stationary-adaline" || kind == "dataset" ||
                   (kind == "rw-mean" && r.drift_covariance.isZero()) || (kind == "rw-opt" && r.drift_covariance.isZero());
  ctx.q_trace = r.drift_covariance.trace();
  const auto& model = r.spec.model;
  const auto n = r.network.size();
  const auto m = static_cast<Eigen::Index>(model.dim());

  auto process = r.spec.make_process(derive_seed(*cfg.seed, kTheoryStream));
  process->next();
  const auto dist = process->distribution();
  Rng rng = make_rng(*cfg.seed, kTheoryRng);

  Matrix h;
  if (r.adaline) {
    ctx.w_ref = *process->optimizer();
    h = 2.0 * r.feature_covariance;
    // at the optimizer the noise is -2 h z, so its covariance is exact
    ctx.node_rv = 4.0 * cfg.noise_variance * r.feature_covariance;
    const auto noise = adaline_noise_constants(model, *dist, rng, draws);
    ctx.alpha = noise.alpha_upper();
    ctx.sigma_v2 = noise.sigma_v2;
    ctx.bounds = hessian_bounds(model);
    ctx.noise_source = "adaline closed form, alpha by Monte Carlo plus three standard errors";
  } else {
    auto population = process->population();
    const Dataset calib = population && population->size() <= kCalibrationBatch
                              ? *population
                              : process->draw_eval(std::min(draws, kCalibrationBatch));
    ctx.w_ref = process->optimizer() ? *process->optimizer() : batch_minimize(model, calib);
    h = empirical_hessian(model, ctx.w_ref, calib);
    ctx.bounds = model.feature_norm_bound() ? hessian_bounds(model) : hessian_bounds(model, calib);
    const Matrix one = Matrix::Identity(1, 1);
    ctx.node_rv = estimate_rv(model, ctx.w_ref, one, *dist, rng, std::min<std::size_t>(draws, 50000)).rv;
    std::vector<Vector> points;
    const Vector u = Vector::Ones(m) / std::sqrt(static_cast<double>(m));
    for (const double radius : {0.0, 0.25, 0.5, 1.0, 2.0}) points.push_back(ctx.w_ref + radius * u);
    const auto fit = fit_noise_constants(model, ctx.w_ref, *dist, rng, points, kCalibrationBatch, kCalibrationBatch);
    ctx.alpha = fit.alpha;
    ctx.sigma_v2 = fit.sigma_v2;
    ctx.noise_source = "least-squares fit of gradient-noise power over five points";
  }
  ctx.hessians.assign(n, h);
  return ctx;
}

SteadyStateResult learner_steady_state(const TheoryContext& ctx, const LearnerSpec& l, std::size_t nodes,
                                       Weighting weighting) {
  if (!has_steady_state_form(l)) {
    throw ValidationError("learner '" + l.name + "' has no steady-state expression (variant " +
                          std::string(to_string(l.variant)) + ")");
  }
  SteadyStateInputs in;
  in.a1 = l.combination.a1;
  in.a2 = l.combination.a2;
  in.c = l.combination.c;
  in.hessians = ctx.hessians;
  in.rv = rv_from_node_covariances(in.c, std::vector<Matrix>(nodes, ctx.node_rv));
  in.mu = l.step_size;
  in.weighting = table1_weighting(weighting, ctx.hessians, nodes, static_cast<std::size_t>(ctx.node_rv.rows()));
  return steady_state_er(in);
}

std::vector<std::string> predict_formulas() {
  return {"steady-state-er", "simplified-er", "epsilon-bound", "tracking-bound",
          "optimal-mu",      "recursion-bound", "ordering",     "stability"};
}

std::string predict(const ExperimentConfig& cfg, const std::string& formula, const std::string& learner_name) {
  const auto formulas = predict_formulas();
  if (std::find(formulas.begin(), formulas.end(), formula) == formulas.end()) {
    std::string list;
    for (const auto& f : formulas) list += (list.empty() ? "" : ", ") + f;
    throw ValidationError("unknown formula '" + formula + "' (" + list + ")");
  }
  const auto r = resolve(cfg);
  const auto ctx = build_theory_context(r, cfg);
  const auto n = r.network.size();
  const auto dim = static_cast<std::size_t>(ctx.node_rv.rows());
  const auto lmin = ctx.bounds.lambda_min;
  const auto lmax = ctx.bounds.lambda_max;

  json out;
  out["formula"] = formula;
  out["noise"] = {{"alpha", ctx.alpha}, {"sigma_v2", ctx.sigma_v2}, {"q_trace", ctx.q_trace},
                  {"lambda_min", lmin},  {"lambda_max", lmax},      {"source", ctx.noise_source}};
  const bool needs_learner = formula != "ordering";
  const LearnerSpec* l = needs_learner ? &find_learner(r, learner_name) : nullptr;
  const auto nc = needs_learner ? make_noise_constants(ctx.alpha, ctx.sigma_v2, ctx.q_trace, l->combination.c)
                                : NoiseConstants{};
  if (l != nullptr) {
    out["learner"] = l->name;
    out["mu"] = l->step_size;
  }
  json regime;
  regime["stationary"] = ctx.stationary;

  if (formula == "steady-state-er") {
    try {
      const auto res = learner_steady_state(ctx, *l, n);
      out["value"] = res.value;
      out["spectral_radius"] = res.spectral_radius;
      out["method"] = res.method == SolveMethod::dense ? "dense" : "series";
      out["series_terms"] = res.series_terms;
      out["tail_bound"] = res.tail_bound;
      regime["stable"] = true;
    } catch (const UnstableB& e) {
      out["value"] = nullptr;
      out["spectral_radius"] = e.spectral_radius();
      regime["stable"] = false;
    }
    const auto limit = steady_state_mu_limit(lmin, lmax, ctx.alpha);
    regime["steady_state_condition"] = l->step_size < limit;
    regime["mu_limit"] = limit;
  } else if (formula == "simplified-er") {
    out["value"] = simplified_er(l->step_size, ctx.node_rv.trace(), n);
    regime["small_mu"] = l->step_size < steady_state_mu_limit(lmin, lmax, ctx.alpha);
  } else if (formula == "epsilon-bound") {
    const auto v = epsilon_bound(nc, lmin, lmax, l->step_size);
    out["value"] = v.value;
    regime.update(regime_json(v));
  } else if (formula == "tracking-bound") {
    const auto b = tracking_bound(nc, lmin, lmax, l->step_size, dim);
    out["value"] = b.total;
    out["steady"] = b.steady;
    out["tracking"] = b.tracking;
    out["constant"] = b.constant;
    regime["in_regime"] = b.in_regime;
    regime["mu_limit"] = b.mu_limit;
  } else if (formula == "optimal-mu") {
    out["value"] = optimal_mu(nc);
    regime["mu_limit"] = tracking_mu_limit(nc, lmin, lmax);
    regime["in_regime"] = optimal_mu(nc) < tracking_mu_limit(nc, lmin, lmax);
  } else if (formula == "recursion-bound") {
    Vector w0 = Vector::Zero(static_cast<Eigen::Index>(dim));
    if (l->initial_weights) w0 = l->initial_weights->col(0);
    const double start = (ctx.w_ref - w0).squaredNorm();
    const auto b = recursion_bound_trace(nc, lmin, lmax, l->step_size, start, cfg.horizon);
    out["value"] = b.series.empty() ? start : b.series.back();
    out["beta"] = b.beta;
    out["limit"] = finite_or_nan(b.limit);
    out["horizon"] = cfg.horizon;
    regime["convergent"] = b.convergent;
  } else if (formula == "ordering") {
    const double mu = cfg.mu;
    const auto weighting = table1_weighting(Weighting::network_er, ctx.hessians, n, dim);
    const auto rv = rv_from_node_covariances(Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)),
                                             std::vector<Matrix>(n, ctx.node_rv));
    const auto res = ordering_check(r.combination, ctx.hessians, rv, mu, weighting);
    out["mu"] = mu;
    out["value"] = {{"atc", res.atc}, {"cta", res.cta}, {"independent", res.independent}};
    regime["holds"] = res.holds;
  } else {
    const auto report = stability_check(l->step_size, l->combination.c, ctx.bounds, ctx.alpha);
    out["value"] = report.ok;
    regime["steady_state_limit"] = report.steady_state_limit;
    regime["tracking_limit"] = report.tracking_limit;
    regime["steady_state_ok"] = report.steady_state_ok;
    regime["tracking_ok"] = report.tracking_ok;
  }
  out["regime"] = regime;
  return out.dump();
}

RunResult run(const ExperimentConfig& cfg, const RunOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  const auto r = resolve(cfg);
  const auto n = r.network.size();

  std::string dir = options.output_dir;
  if (dir.empty()) {
    const char* env = std::getenv("DIFFRISK_OUT");
    dir = env != nullptr && *env != '\0' ? env : cfg.output;
  }
  OutputWriter writer(dir);
  RunResult result;
  result.output_dir = dir;

  // Noise constants drive the stability advisory and the overlays; failures only cost the overlays.
  std::optional<TheoryContext> ctx;
  try {
    ctx = build_theory_context(r, cfg);
  } catch (const Error& e) {
    result.warnings.push_back(std::string("theory calibration unavailable: ") + e.what());
  }
  if (ctx) {
    for (const auto& l : r.spec.learners) {
      if (l.variant == Variant::cfg || l.variant == Variant::tha || !uses_constant_step(l)) continue;
      const auto report = stability_check(l.step_size, l.combination.c, ctx->bounds, ctx->alpha);
      if (!report.ok) result.warnings.push_back("learner '" + l.name + "': " + report.warning);
    }
  }

  const auto eval_mode = [&] {
    auto p = r.spec.make_process(derive_seed(r.spec.seed, 0));
    return resolve_eval_mode(r.spec, *p);
  }();

  result.trace = run_experiment(r.spec);
  const auto& trace = result.trace;

  for (const auto& name : trace.learners) {
    const auto& v = trace.at(name);
    for (std::size_t mi = 0; mi < kMetricCount; ++mi) {
      const auto metric = static_cast<Metric>(mi);
      if (metric == Metric::accuracy && !v.has_accuracy()) continue;
      const auto s = v.series(metric);
      writer.write(std::string(to_string(metric)) + "/" + name + ".csv", csv_series(s.mean, s.std_error));
      if (metric == Metric::accuracy && cfg.accuracy_smoothing > 1) {
        writer.write("accuracy-smoothed/" + name + ".csv",
                     csv_series(smooth(s.mean, cfg.accuracy_smoothing), smooth(s.std_error, cfg.accuracy_smoothing)));
      }
    }
    const auto roc = trace.roc.find(name);
    if (roc != trace.roc.end()) {
      for (const auto& [tick, acc] : roc->second) {
        if (acc.empty()) continue;
        std::string csv = "threshold,pfa,pd\n";
        for (const auto& p : acc.curve().points) {
          csv += format_double(p.threshold) + "," + format_double(p.pfa) + "," + format_double(p.pd) + "\n";
        }
        writer.write("roc/" + name + "-t" + std::to_string(tick) + ".csv", csv);
      }
    }
  }

  json theory = nullptr;
  if (cfg.theory && ctx) {
    theory = json::object();
    const auto kind = process_kind(cfg.process);
    for (const auto& l : r.spec.learners) {
      if (!has_steady_state_form(l)) continue;
      try {
        if (ctx->stationary) {
          const auto ss = learner_steady_state(*ctx, l, n);
          writer.write("er/" + l.name + ":theory.csv", csv_constant(ss.value, cfg.horizon));
          theory[l.name] = {{"steady_state_er", ss.value}, {"spectral_radius", ss.spectral_radius}};
        } else if (kind == "rw-opt") {
          const auto nc = make_noise_constants(ctx->alpha, ctx->sigma_v2, ctx->q_trace, l.combination.c);
          const auto dim = static_cast<std::size_t>(ctx->node_rv.rows());
          const auto lmin = ctx->bounds.lambda_min;
          const auto lmax = ctx->bounds.lambda_max;
          const auto tb = tracking_bound(nc, lmin, lmax, l.step_size, dim);
          writer.write("er/" + l.name + ":theory.csv", csv_constant(tb.total, cfg.horizon));
          Vector w0 = Vector::Zero(static_cast<Eigen::Index>(dim));
          if (l.initial_weights) w0 = l.initial_weights->col(0);
          const auto rb = recursion_bound_trace(nc, lmin, lmax, l.step_size, (r.initial_optimizer - w0).squaredNorm(),
                                                cfg.horizon);
          writer.write("mse-filtering/" + l.name + ":theory.csv",
                       csv_series(rb.series, std::vector<double>(rb.series.size(), 0.0)));
          theory[l.name] = {{"tracking_bound", tb.total}, {"in_regime", tb.in_regime}, {"beta", rb.beta}};
        }
      } catch (const Error& e) {
        result.warnings.push_back("no overlay for learner '" + l.name + "': " + e.what());
      }
    }
    if (!ctx->stationary && kind != "rw-opt") {
      result.warnings.push_back("no closed-form overlay for process '" + kind + "'");
    }
  }

  const auto echo = echo_config(cfg);
  writer.write("config.ini", echo);

  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  json manifest;
  manifest["tool"] = "diffrisk";
  manifest["version"] = DIFFRISK_VERSION;
  manifest["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                      std::to_string(EIGEN_MINOR_VERSION);
  manifest["compiler"] = __VERSION__;
  manifest["origin"] = cfg.origin;
  manifest["config_sha256"] = sha256_hex(echo);
  manifest["seed"] = r.spec.seed;
  manifest["horizon"] = r.spec.horizon;
  manifest["repetitions"] = r.spec.repetitions;
  manifest["threads"] = r.spec.threads;
  manifest["nodes"] = n;
  manifest["evaluation"] = std::string(to_string(eval_mode));
  manifest["paired"] = "all learners consume identical per-tick samples within a repetition";
  json digests = json::object();
  for (const auto& [name, d] : trace.sample_digest) digests[name] = hex64(d);
  manifest["sample_digests"] = digests;
  if (ctx) {
    manifest["noise"] = {{"alpha", ctx->alpha},
                         {"sigma_v2", ctx->sigma_v2},
                         {"q_trace", ctx->q_trace},
                         {"lambda_min", ctx->bounds.lambda_min},
                         {"lambda_max", ctx->bounds.lambda_max},
                         {"source", ctx->noise_source}};
  }
  manifest["theory"] = theory;
  json files = json::array();
  for (const auto& f : writer.files()) files.push_back({{"path", f.path}, {"sha256", f.sha256}});
  manifest["files"] = files;
  manifest["warnings"] = result.warnings;
  manifest["wall_time_seconds"] = result.wall_seconds;
  const auto text = manifest.dump(2) + "\n";
  const auto path = writer.root() / "manifest.json";
  std::ofstream(path, std::ios::binary | std::ios::trunc) << text;
  result.files = writer.files();
  return result;
}

void generate_data(const ExperimentConfig& cfg, const std::string& format, std::ostream& out) {
  const auto r = resolve(cfg);
  auto process = r.spec.make_process(derive_seed(r.spec.seed, 0));
  if (format == "jsonl") {
    for (std::size_t t = 0; t < cfg.horizon; ++t) write_tick_record(out, process->next());
    return;
  }
  if (format != "libsvm") throw ValidationError("gen-data: format must be 'jsonl' or 'libsvm'");
  if (!r.classification) throw ValidationError("gen-data: LIBSVM output needs a classification process");
  std::vector<Sample> samples;
  for (std::size_t t = 0; t < cfg.horizon; ++t) {
    const auto& tick = process->next();
    for (std::size_t k = 0; k < tick.nodes(); ++k) samples.push_back(tick.sample(k));
  }
  write_libsvm(out, Dataset::from_samples(samples));
}

}  // namespace diffrisk
