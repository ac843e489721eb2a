#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "diffrisk/config.hpp"
#include "diffrisk/metrics.hpp"
#include "diffrisk/theory.hpp"

namespace diffrisk {

/// Quantities the closed-form predictors need, measured on the process at tick 1.
struct TheoryContext {
  bool stationary = false;
  Vector w_ref;
  std::vector<Matrix> hessians;  // one per node; equal because the distribution is shared
  Matrix node_rv;                // M x M gradient-noise covariance at w_ref
  double alpha = 0.0;
  double sigma_v2 = 0.0;
  double q_trace = 0.0;
  HessianBounds bounds;
  /// How alpha and sigma_v^2 were obtained.
  std::string noise_source;
};

/// Draw counts are the Monte-Carlo budgets of the noise estimates.
TheoryContext build_theory_context(const ResolvedExperiment& resolved, const ExperimentConfig& config,
                                   std::size_t draws = 200000);

/// Steady-state network excess risk of one diffusion-family learner.
SteadyStateResult learner_steady_state(const TheoryContext& ctx, const LearnerSpec& learner, std::size_t nodes,
                                       Weighting weighting = Weighting::network_er);

/// True when the learner has an (A1, A2, C) form the steady-state analysis covers.
bool has_steady_state_form(const LearnerSpec& learner);

/// Formulas accepted by `predict`.
std::vector<std::string> predict_formulas();

/// Evaluates one formula and renders a single-line JSON object with value and regime tags.
std::string predict(const ExperimentConfig& config, const std::string& formula, const std::string& learner = "");

struct RunOptions {
  /// Output directory; DIFFRISK_OUT and then the config's `output` are used when empty.
  std::string output_dir;
  bool quiet = false;
};

struct OutputFile {
  std::string path;  // relative to the output directory
  std::string sha256;
};

struct RunResult {
  MetricTrace trace;
  std::string output_dir;
  std::vector<OutputFile> files;
  std::vector<std::string> warnings;
  double wall_seconds = 0.0;
};

/// Resolves, runs and writes CSVs, overlays, ROC curves, the echoed config and manifest.json.
RunResult run(const ExperimentConfig& config, const RunOptions& options = {});

/// Hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);

/// Writes `horizon` ticks of the configured process (first repetition's seed) as JSON lines
/// or, flattened over nodes, as LIBSVM text.
void generate_data(const ExperimentConfig& config, const std::string& format, std::ostream& out);

/// Centered moving average over `window` ticks (shorter at the edges); window 0 or 1 is identity.
std::vector<double> smooth(const std::vector<double>& values, std::size_t window);

}  // namespace diffrisk
