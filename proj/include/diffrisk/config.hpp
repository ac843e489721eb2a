#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "diffrisk/engine.hpp"
#include "diffrisk/topology.hpp"

namespace diffrisk {

struct LearnerConfig {
  std::string name;
  Variant variant = Variant::atc;
  std::optional<double> mu;  // falls back to [learners] mu
  StepSchedule schedule = StepSchedule::constant;
  // Matrix specs: `metropolis`, `identity`, or rows separated by ';'.
  // `a` replaces the Metropolis matrix of atc/cta/consensus; a1, a2, c are for general diffusion.
  std::optional<std::string> a;
  std::optional<std::string> a1;
  std::optional<std::string> a2;
  std::optional<std::string> c;
};

/// Declarative description of one experiment, as read from an INI file or preset.
struct ExperimentConfig {
  // [experiment]
  std::optional<std::uint64_t> seed;
  std::size_t horizon = 0;
  std::size_t repetitions = 1;
  std::size_t eval_batch = 2000;
  EvalMode evaluation = EvalMode::automatic;
  std::vector<std::size_t> roc_ticks;
  std::size_t roc_node = 0;
  std::size_t threads = 1;
  std::string output = "results";
  bool theory = false;
  double tail_fraction = 0.2;
  std::size_t reference_window = 0;
  std::size_t accuracy_smoothing = 0;

  // [network]
  std::string topology;

  // [drift]
  std::string process;  // canonical `kind[:key=value...]`
  double label_noise = 0.0;
  std::size_t dim = 0;
  std::vector<double> feature_variances;
  double noise_variance = 1.0;
  std::vector<double> initial_optimizer;
  std::vector<double> m0;
  std::string data;

  // [risk]
  std::string model;
  std::optional<double> feature_norm_bound;

  // [learners]
  double mu = 0.0;
  std::vector<LearnerConfig> learners;

  /// File or preset the configuration came from.
  std::string origin;
};

/// Parses INI text. Throws ParseError (with line and field) for syntax and type errors
/// and ValidationError for constraint violations.
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "<string>");
ExperimentConfig parse_config_file(const std::string& path);

/// `paper:stagger` and friends. Searches DIFFRISK_PRESETS, then the built-in preset directory.
ExperimentConfig load_preset(std::string_view name, const std::string& preset_dir = "");
std::vector<std::string> list_presets(const std::string& preset_dir = "");

/// `section.key=value` overrides applied on top of a parsed config (re-validated).
ExperimentConfig apply_overrides(const ExperimentConfig& base, const std::vector<std::string>& assignments);

/// Keeps only the named learners, creating built-in ones (atc, cta, noncoop, consensus,
/// consensus-diminishing, cfg, tha) that are not declared.
ExperimentConfig select_learners(const ExperimentConfig& base, const std::vector<std::string>& names);

/// Throws ValidationError naming the violated constraint.
void validate_config(const ExperimentConfig& config);

/// Canonical INI rendering with every default resolved; stable across runs.
std::string echo_config(const ExperimentConfig& config);

/// Built-in learner of the given name, or nullopt.
std::optional<LearnerConfig> builtin_learner(std::string_view name);

/// Matrix spec against the network's Metropolis matrix `a`.
Matrix parse_matrix_spec(std::string_view spec, const Matrix& a);

/// Everything needed to run: the engine spec plus the objects it was derived from.
struct ResolvedExperiment {
  ExperimentSpec spec;
  Network network;
  Matrix combination;  // Metropolis matrix of the network
  bool adaline = false;         // linear-model process with known R_h
  bool classification = false;
  Matrix feature_covariance;    // ADALINE only
  Matrix drift_covariance;      // Q, zero when stationary
  Vector initial_optimizer;     // ADALINE only
};

ResolvedExperiment resolve(const ExperimentConfig& config);

/// Splits on commas, trimming blanks.
std::vector<std::string> split_list(std::string_view text);

}  // namespace diffrisk
