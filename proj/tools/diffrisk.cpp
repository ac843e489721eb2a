// diffrisk command-line front end: run, predict, validate-config, gen-data.
#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "diffrisk/config.hpp"
#include "diffrisk/error.hpp"
#include "diffrisk/runner.hpp"

namespace {

using namespace diffrisk;

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct Source {
  std::string config;
  std::string preset;
  std::vector<std::string> sets;
  std::string learners;
  std::optional<std::size_t> threads;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config, "INI configuration file");
    app->add_option("-p,--preset", preset, "shipped preset, e.g. paper:stagger");
    app->add_option("-s,--set", sets, "override as section.key=value (repeatable)");
    app->add_option("-l,--learners", learners, "comma-separated learner names");
    app->add_option("-t,--threads", threads, "worker threads for repetitions");
    app->add_option("--seed", seed, "master seed");
  }

  ExperimentConfig load() const {
    if (config.empty() == preset.empty()) throw ValidationError("give exactly one of --config or --preset");
    auto cfg = config.empty() ? load_preset(preset) : parse_config_file(config);
    auto assignments = sets;
    if (threads) assignments.push_back("experiment.threads=" + std::to_string(*threads));
    if (seed) assignments.push_back("experiment.seed=" + std::to_string(*seed));
    cfg = apply_overrides(cfg, assignments);
    if (!learners.empty()) cfg = select_learners(cfg, split_list(learners));
    return cfg;
  }
};

int report(const std::exception& e, int code) {
  std::cerr << "diffrisk: " << e.what() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion learners over networks: simulation, excess-risk metrics and closed-form predictors"};
  app.require_subcommand(1);
  app.set_version_flag("--version", DIFFRISK_CLI_VERSION);

  Source run_src;
  std::string out_dir;
  bool quiet = false;
  auto* run_cmd = app.add_subcommand("run", "simulate the configured learners and write CSVs plus manifest.json");
  run_src.attach(run_cmd);
  run_cmd->add_option("-o,--out", out_dir, "output directory (overrides DIFFRISK_OUT and experiment.output)");
  run_cmd->add_flag("-q,--quiet", quiet, "no summary on stdout");

  Source predict_src;
  std::string formula = "steady-state-er";
  std::string learner;
  auto* predict_cmd = app.add_subcommand("predict", "evaluate one closed-form expression; prints a JSON line");
  predict_src.attach(predict_cmd);
  predict_cmd->add_option("-f,--formula", formula, "formula name")
      ->check(CLI::IsMember(predict_formulas()));
  predict_cmd->add_option("--learner", learner, "learner to evaluate (default: first diffusion learner)");

  Source validate_src;
  bool list = false;
  auto* validate_cmd = app.add_subcommand("validate-config", "parse, validate and echo the resolved configuration");
  validate_src.attach(validate_cmd);
  validate_cmd->add_flag("--list-presets", list, "list shipped presets instead");

  Source gen_src;
  std::string format = "jsonl";
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen-data", "write the configured stream as JSON lines or LIBSVM text");
  gen_src.attach(gen_cmd);
  gen_cmd->add_option("--format", format, "jsonl or libsvm")->check(CLI::IsMember({"jsonl", "libsvm"}));
  gen_cmd->add_option("-o,--out", gen_out, "output file (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and --version come through here with code 0
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run_cmd) {
      RunOptions opts;
      opts.output_dir = out_dir;
      opts.quiet = quiet;
      const auto result = run(run_src.load(), opts);
      for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
      if (!quiet) {
        std::cout << "wrote " << result.files.size() + 1 << " files to " << result.output_dir << "\n";
        for (const auto& name : result.trace.learners) {
          const auto tail = result.trace.at(name).tail(Metric::excess_risk);
          std::cout << "  " << name << ": tail excess risk " << tail.mean << " +/- " << tail.std_error << "\n";
        }
      }
    } else if (*predict_cmd) {
      std::cout << predict(predict_src.load(), formula, learner) << "\n";
    } else if (*validate_cmd) {
      if (list) {
        for (const auto& p : list_presets()) std::cout << p << "\n";
      } else {
        std::cout << echo_config(validate_src.load());
      }
    } else if (*gen_cmd) {
      const auto cfg = gen_src.load();
      if (gen_out.empty()) {
        generate_data(cfg, format, std::cout);
      } else {
        std::ofstream out(gen_out, std::ios::binary);
        if (!out) throw ValidationError("cannot write '" + gen_out + "'");
        generate_data(cfg, format, out);
      }
    }
  } catch (const ParseError& e) {
    std::cerr << "diffrisk: parse error";
    if (e.line() > 0) std::cerr << " at line " << e.line();
    std::cerr << ": " << e.what() << "\n";
    return kExitConfig;
  } catch (const ValidationError& e) {
    return report(e, kExitConfig);
  } catch (const StochasticityViolation& e) {
    return report(e, kExitConfig);
  } catch (const InvalidAdjacency& e) {
    return report(e, kExitConfig);
  } catch (const DisconnectedGraph& e) {
    return report(e, kExitConfig);
  } catch (const DimensionMismatch& e) {
    return report(e, kExitConfig);
  } catch (const MalformedLine& e) {
    return report(e, kExitConfig);
  } catch (const LabelDomain& e) {
    return report(e, kExitConfig);
  } catch (const Divergence& e) {
    return report(e, kExitNumerical);
  } catch (const NonConvergence& e) {
    return report(e, kExitNumerical);
  } catch (const UnstableB& e) {
    return report(e, kExitNumerical);
  } catch (const std::exception& e) {
    return report(e, kExitOther);
  }
  return kExitOk;
}
