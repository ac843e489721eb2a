#include "diffrisk/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "diffrisk/error.hpp"
#include "diffrisk/libsvm.hpp"

#ifndef DIFFRISK_PRESET_DIR
#define DIFFRISK_PRESET_DIR "presets"
#endif

namespace diffrisk {
namespace {

namespace fs = std::filesystem;
using boost::property_tree::ptree;

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// Locates `key` inside `[section]` so type errors can point at a line.
class LineIndex {
 public:
  explicit LineIndex(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t number = 0;
    while (std::getline(in, line)) {
      ++number;
      const auto t = trim(line);
      if (t.empty() || t[0] == ';' || t[0] == '#') continue;
      if (t.front() == '[' && t.back() == ']') {
        section = trim(std::string_view(t).substr(1, t.size() - 2));
        lines_[section] = number;
        continue;
      }
      const auto eq = t.find('=');
      if (eq != std::string::npos) lines_[section + "." + trim(std::string_view(t).substr(0, eq))] = number;
    }
  }
  std::size_t find(const std::string& field) const {
    const auto it = lines_.find(field);
    return it == lines_.end() ? 0 : it->second;
  }

 private:
  std::map<std::string, std::size_t> lines_;
};

class Reader {
 public:
  Reader(const ptree& tree, const LineIndex* index) : tree_(tree), index_(index) {}

  [[noreturn]] void fail(const std::string& field, const std::string& message) const {
    const auto line = index_ != nullptr ? index_->find(field) : 0;
    throw ParseError(field + ": " + message, line, field);
  }

  const ptree* section(const std::string& name) const {
    for (const auto& [key, child] : tree_) {
      if (key == name) return &child;
    }
    return nullptr;
  }

  std::optional<std::string> raw(const std::string& sec, const std::string& key) const {
    const auto* s = section(sec);
    if (s == nullptr) return std::nullopt;
    for (const auto& [k, v] : *s) {
      if (k == key) return trim(v.data());
    }
    return std::nullopt;
  }

  template <class T>
  std::optional<T> number(const std::string& sec, const std::string& key) const {
    const auto text = raw(sec, key);
    if (!text) return std::nullopt;
    T value{};
    const auto* end = text->data() + text->size();
    const auto [ptr, ec] = std::from_chars(text->data(), end, value);
    if (ec != std::errc() || ptr != end || text->empty()) {
      fail(sec + "." + key, "expected a number, got '" + *text + "'");
    }
    return value;
  }

  std::optional<bool> boolean(const std::string& sec, const std::string& key) const {
    const auto text = raw(sec, key);
    if (!text) return std::nullopt;
    if (*text == "true" || *text == "yes" || *text == "1" || *text == "on") return true;
    if (*text == "false" || *text == "no" || *text == "0" || *text == "off") return false;
    fail(sec + "." + key, "expected true or false, got '" + *text + "'");
  }

  template <class T>
  std::optional<std::vector<T>> list(const std::string& sec, const std::string& key) const {
    const auto text = raw(sec, key);
    if (!text) return std::nullopt;
    std::vector<T> out;
    if (text->empty()) return out;
    for (const auto& item : split(*text, ',')) {
      T value{};
      const auto* end = item.data() + item.size();
      const auto [ptr, ec] = std::from_chars(item.data(), end, value);
      if (ec != std::errc() || ptr != end || item.empty()) {
        fail(sec + "." + key, "expected a comma-separated list of numbers, got '" + *text + "'");
      }
      out.push_back(value);
    }
    return out;
  }

  void check_keys(const std::string& sec, const std::set<std::string>& allowed) const {
    const auto* s = section(sec);
    if (s == nullptr) return;
    for (const auto& [k, v] : *s) {
      if (!allowed.count(k)) fail(sec + "." + k, "unknown key");
    }
  }

 private:
  const ptree& tree_;
  const LineIndex* index_;
};

const std::set<std::string> kExperimentKeys{"seed",  "horizon",       "repetitions",      "eval_batch",
                                            "evaluation", "roc_ticks", "roc_node",        "threads",
                                            "output", "theory",        "tail_fraction",   "reference_window",
                                            "accuracy_smoothing"};
const std::set<std::string> kDriftKeys{"process",        "label_noise",       "dim", "feature_variances",
                                       "noise_variance", "initial_optimizer", "m0",  "data"};
const std::set<std::string> kLearnerKeys{"variant", "mu", "schedule", "a", "a1", "a2", "c"};

const std::set<std::string> kProcessKinds{"stationary-gauss2d", "rw-mean",   "stationary-adaline", "rw-opt",
                                          "stagger",            "dataset",   "replay"};

struct ProcessSpec {
  std::string kind;
  std::map<std::string, std::string> params;
};

ProcessSpec parse_process(std::string_view text) {
  const auto parts = split(text, ':');
  ProcessSpec spec{parts.front(), {}};
  if (!kProcessKinds.count(spec.kind)) {
    throw ValidationError("drift.process: unknown process '" + spec.kind +
                          "' (stationary-gauss2d, rw-mean, stationary-adaline, rw-opt, stagger, dataset, replay)");
  }
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const auto eq = parts[i].find('=');
    if (eq == std::string::npos) {
      throw ValidationError("drift.process: expected key=value, got '" + parts[i] + "'");
    }
    spec.params[trim(std::string_view(parts[i]).substr(0, eq))] = trim(std::string_view(parts[i]).substr(eq + 1));
  }
  static const std::map<std::string, std::set<std::string>> allowed{
      {"stationary-gauss2d", {}}, {"rw-mean", {"cov"}},  {"stationary-adaline", {}}, {"rw-opt", {"trq"}},
      {"stagger", {"cycle"}},      {"dataset", {}},      {"replay", {}}};
  for (const auto& [k, v] : spec.params) {
    if (!allowed.at(spec.kind).count(k)) {
      throw ValidationError("drift.process: '" + spec.kind + "' takes no parameter '" + k + "'");
    }
  }
  return spec;
}

std::string canonical_process(const ProcessSpec& spec) {
  std::string out = spec.kind;
  for (const auto& [k, v] : spec.params) out += ":" + k + "=" + v;
  return out;
}

double process_number(const ProcessSpec& spec, const std::string& key, double fallback) {
  const auto it = spec.params.find(key);
  if (it == spec.params.end()) return fallback;
  double value = 0.0;
  const auto* end = it->second.data() + it->second.size();
  const auto [ptr, ec] = std::from_chars(it->second.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ValidationError("drift.process: parameter '" + key + "' is not a number");
  }
  return value;
}

bool process_flag(const ProcessSpec& spec, const std::string& key) {
  const auto it = spec.params.find(key);
  if (it == spec.params.end()) return false;
  if (it->second == "true") return true;
  if (it->second == "false") return false;
  throw ValidationError("drift.process: parameter '" + key + "' must be true or false");
}

bool is_adaline(const std::string& kind) { return kind == "stationary-adaline" || kind == "rw-opt"; }

struct ModelSpec {
  LossKind kind = LossKind::square;
  double rho = 0.0;
};

ModelSpec parse_model(std::string_view text) {
  const auto parts = split(text, ':');
  ModelSpec spec;
  if (parts.front() == "square" && parts.size() == 1) return spec;
  if (parts.front() == "logistic") {
    spec.kind = LossKind::logistic;
    bool have_rho = false;
    for (std::size_t i = 1; i < parts.size(); ++i) {
      if (parts[i].rfind("rho=", 0) != 0) throw ValidationError("risk.model: unknown parameter '" + parts[i] + "'");
      const auto v = std::string_view(parts[i]).substr(4);
      const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), spec.rho);
      if (ec != std::errc() || ptr != v.data() + v.size()) throw ValidationError("risk.model: rho is not a number");
      have_rho = true;
    }
    if (!have_rho) throw ValidationError("risk.model: logistic needs rho, e.g. logistic:rho=0.1");
    return spec;
  }
  throw ValidationError("risk.model: expected 'square' or 'logistic:rho=VALUE', got '" + std::string(text) + "'");
}

std::string join_numbers(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += format_double(values[i]);
  }
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(values[i]);
  }
  return out;
}

std::string_view to_string(StepSchedule s) { return s == StepSchedule::constant ? "constant" : "inverse-sqrt"; }

StepSchedule parse_schedule(const std::string& text) {
  if (text == "constant") return StepSchedule::constant;
  if (text == "inverse-sqrt") return StepSchedule::inverse_sqrt;
  throw ValidationError("schedule must be 'constant' or 'inverse-sqrt', got '" + text + "'");
}

// Turns library ValidationErrors raised on a known field into ParseErrors with a line.
template <class F>
auto at_field(const Reader& r, const std::string& field, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ValidationError& e) {
    r.fail(field, e.what());
  }
}

ExperimentConfig from_tree(const ptree& tree, const LineIndex* index, std::string origin) {
  const Reader r(tree, index);
  ExperimentConfig cfg;
  cfg.origin = std::move(origin);

  for (const auto& [name, child] : tree) {
    if (!child.data().empty()) r.fail(name, "key outside any section");
    if (name != "experiment" && name != "network" && name != "drift" && name != "risk" && name != "learners" &&
        name.rfind("learner.", 0) != 0) {
      r.fail(name, "unknown section");
    }
  }
  r.check_keys("experiment", kExperimentKeys);
  r.check_keys("network", {"topology"});
  r.check_keys("drift", kDriftKeys);
  r.check_keys("risk", {"model", "feature_norm_bound"});
  r.check_keys("learners", {"mu", "use"});

  cfg.seed = r.number<std::uint64_t>("experiment", "seed");
  cfg.horizon = r.number<std::size_t>("experiment", "horizon").value_or(cfg.horizon);
  cfg.repetitions = r.number<std::size_t>("experiment", "repetitions").value_or(cfg.repetitions);
  cfg.eval_batch = r.number<std::size_t>("experiment", "eval_batch").value_or(cfg.eval_batch);
  if (const auto e = r.raw("experiment", "evaluation")) {
    cfg.evaluation = at_field(r, "experiment.evaluation", [&] { return parse_eval_mode(*e); });
  }
  cfg.roc_ticks = r.list<std::size_t>("experiment", "roc_ticks").value_or(cfg.roc_ticks);
  cfg.roc_node = r.number<std::size_t>("experiment", "roc_node").value_or(cfg.roc_node);
  cfg.threads = r.number<std::size_t>("experiment", "threads").value_or(cfg.threads);
  cfg.output = r.raw("experiment", "output").value_or(cfg.output);
  cfg.theory = r.boolean("experiment", "theory").value_or(cfg.theory);
  cfg.tail_fraction = r.number<double>("experiment", "tail_fraction").value_or(cfg.tail_fraction);
  cfg.reference_window = r.number<std::size_t>("experiment", "reference_window").value_or(cfg.reference_window);
  cfg.accuracy_smoothing =
      r.number<std::size_t>("experiment", "accuracy_smoothing").value_or(cfg.accuracy_smoothing);

  cfg.topology = r.raw("network", "topology").value_or("");

  if (const auto p = r.raw("drift", "process")) {
    cfg.process = at_field(r, "drift.process", [&] { return canonical_process(parse_process(*p)); });
  }
  cfg.label_noise = r.number<double>("drift", "label_noise").value_or(cfg.label_noise);
  cfg.dim = r.number<std::size_t>("drift", "dim").value_or(cfg.dim);
  cfg.feature_variances = r.list<double>("drift", "feature_variances").value_or(cfg.feature_variances);
  cfg.noise_variance = r.number<double>("drift", "noise_variance").value_or(cfg.noise_variance);
  cfg.initial_optimizer = r.list<double>("drift", "initial_optimizer").value_or(cfg.initial_optimizer);
  cfg.m0 = r.list<double>("drift", "m0").value_or(cfg.m0);
  cfg.data = r.raw("drift", "data").value_or("");

  cfg.model = r.raw("risk", "model").value_or("");
  if (!cfg.model.empty()) at_field(r, "risk.model", [&] { return parse_model(cfg.model); });
  cfg.feature_norm_bound = r.number<double>("risk", "feature_norm_bound");

  cfg.mu = r.number<double>("learners", "mu").value_or(cfg.mu);

  std::map<std::string, LearnerConfig> declared;
  std::vector<std::string> order;
  for (const auto& [name, child] : tree) {
    if (name.rfind("learner.", 0) != 0) continue;
    r.check_keys(name, kLearnerKeys);
    LearnerConfig l;
    l.name = name.substr(8);
    if (l.name.empty()) r.fail(name, "learner section needs a name");
    const auto base = builtin_learner(l.name);
    if (base) l = *base;
    if (const auto v = r.raw(name, "variant")) {
      l.variant = at_field(r, name + ".variant", [&] { return parse_variant(*v); });
    } else if (!base) {
      r.fail(name, "learner '" + l.name + "' is not built in and has no variant");
    }
    l.mu = r.number<double>(name, "mu");
    if (const auto s = r.raw(name, "schedule")) {
      l.schedule = at_field(r, name + ".schedule", [&] { return parse_schedule(*s); });
    }
    l.a = r.raw(name, "a");
    l.a1 = r.raw(name, "a1");
    l.a2 = r.raw(name, "a2");
    l.c = r.raw(name, "c");
    declared[l.name] = l;
    order.push_back(l.name);
  }

  std::vector<std::string> use = order;
  if (const auto u = r.raw("learners", "use")) use = split_list(*u);
  for (const auto& name : use) {
    const auto it = declared.find(name);
    if (it != declared.end()) {
      cfg.learners.push_back(it->second);
    } else if (auto b = builtin_learner(name)) {
      cfg.learners.push_back(*b);
    } else {
      r.fail("learners.use", "unknown learner '" + name + "'");
    }
  }
  validate_config(cfg);
  return cfg;
}

ptree read_tree(const std::string& text) {
  ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ParseError(e.message(), e.line(), "");
  }
  return tree;
}

std::vector<fs::path> preset_dirs(const std::string& preset_dir) {
  std::vector<fs::path> dirs;
  if (!preset_dir.empty()) dirs.emplace_back(preset_dir);
  if (const char* env = std::getenv("DIFFRISK_PRESETS"); env != nullptr && *env != '\0') dirs.emplace_back(env);
  dirs.emplace_back(DIFFRISK_PRESET_DIR);
  return dirs;
}

std::string preset_file(std::string_view name) {
  std::string file(name);
  if (file.rfind("paper:", 0) == 0) file = "paper_" + file.substr(6);
  return file + ".ini";
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  for (auto& item : split(text, ',')) {
    if (!item.empty()) out.push_back(std::move(item));
  }
  return out;
}

std::optional<LearnerConfig> builtin_learner(std::string_view name) {
  LearnerConfig l;
  l.name = std::string(name);
  if (name == "atc") l.variant = Variant::atc;
  else if (name == "cta") l.variant = Variant::cta;
  else if (name == "noncoop") l.variant = Variant::non_cooperative;
  else if (name == "consensus") l.variant = Variant::consensus;
  else if (name == "consensus-diminishing") {
    l.variant = Variant::consensus;
    l.schedule = StepSchedule::inverse_sqrt;
  } else if (name == "cfg") l.variant = Variant::cfg;
  else if (name == "tha") l.variant = Variant::tha;
  else return std::nullopt;
  return l;
}

void validate_config(const ExperimentConfig& cfg) {
  const auto bad = [](const std::string& what) { throw ValidationError(what); };
  if (!cfg.seed) bad("experiment.seed is required");
  if (cfg.horizon < 1) bad("experiment.horizon must be at least 1");
  if (cfg.repetitions < 1) bad("experiment.repetitions must be at least 1");
  if (cfg.eval_batch < 1) bad("experiment.eval_batch must be at least 1");
  if (cfg.threads < 1) bad("experiment.threads must be at least 1");
  if (!(cfg.tail_fraction > 0.0 && cfg.tail_fraction <= 1.0)) bad("experiment.tail_fraction must lie in (0, 1]");
  for (const auto t : cfg.roc_ticks) {
    if (t < 1 || t > cfg.horizon) bad("experiment.roc_ticks: tick " + std::to_string(t) + " is outside 1..horizon");
  }
  if (cfg.topology.empty()) bad("network.topology is required");
  if (cfg.process.empty()) bad("drift.process is required");
  const auto process = parse_process(cfg.process);
  if (!(cfg.label_noise >= 0.0 && cfg.label_noise <= 1.0)) bad("drift.label_noise must lie in [0, 1]");
  if (!(cfg.noise_variance >= 0.0)) bad("drift.noise_variance must be nonnegative");
  for (const auto v : cfg.feature_variances) {
    if (!(v > 0.0)) bad("drift.feature_variances must be positive");
  }
  if (process.kind == "rw-mean" && !(process_number(process, "cov", 0.01) >= 0.0)) {
    bad("drift.process: rw-mean cov must be nonnegative");
  }
  if (process.kind == "rw-opt" && !(process_number(process, "trq", 0.0) >= 0.0)) {
    bad("drift.process: rw-opt trq must be nonnegative");
  }
  if (process.kind == "stagger") {
    if (cfg.horizon > kStaggerHorizon && !process_flag(process, "cycle")) {
      bad("experiment.horizon exceeds the 120-tick concept schedule; set drift.process = stagger:cycle=true");
    }
  }
  if ((process.kind == "dataset" || process.kind == "replay") && !cfg.data.empty() && !fs::exists(cfg.data)) {
    bad("drift.data: file '" + cfg.data + "' does not exist");
  }
  if (cfg.topology.find(':') == std::string::npos && !fs::exists(cfg.topology)) {
    bad("network.topology: edge-list file '" + cfg.topology + "' does not exist");
  }
  if (const auto colon = cfg.topology.find(':'); colon != std::string::npos && !fs::exists(cfg.topology)) {
    const auto kind = cfg.topology.substr(0, colon);
    if (kind != "ring" && kind != "complete" && kind != "random-geometric") {
      bad("network.topology: unknown kind '" + kind + "'");
    }
  }
  if (!cfg.model.empty()) {
    const auto model = parse_model(cfg.model);
    if (model.kind == LossKind::logistic && is_adaline(process.kind)) {
      bad("risk.model: logistic loss needs a classification process, not '" + process.kind + "'");
    }
    if (model.kind == LossKind::logistic && !(model.rho > 0.0)) bad("risk.model: rho must be positive");
  } else if (!is_adaline(process.kind)) {
    bad("risk.model is required for process '" + process.kind + "'");
  }
  if (cfg.feature_norm_bound && !(*cfg.feature_norm_bound > 0.0)) bad("risk.feature_norm_bound must be positive");
  if (cfg.learners.empty()) bad("no learners selected");
  std::set<std::string> names;
  for (const auto& l : cfg.learners) {
    if (!names.insert(l.name).second) bad("learner '" + l.name + "' listed twice");
    const double mu = l.mu.value_or(cfg.mu);
    if (!(mu > 0.0)) bad("learner '" + l.name + "': step size must be positive (learners.mu)");
    if (l.schedule == StepSchedule::inverse_sqrt && l.variant != Variant::consensus) {
      bad("learner '" + l.name + "': inverse-sqrt schedule is only allowed for consensus");
    }
    if ((l.a1 || l.a2 || l.c) && l.variant != Variant::general_diffusion) {
      bad("learner '" + l.name + "': a1, a2, c apply to general diffusion only");
    }
    if (l.a && l.variant == Variant::general_diffusion) {
      bad("learner '" + l.name + "': general diffusion takes a1, a2, c rather than a");
    }
  }
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
  const LineIndex index(text);
  return from_tree(read_tree(text), &index, origin);
}

ExperimentConfig parse_config_file(const std::string& path) {
  if (!fs::exists(path)) throw ValidationError("config file '" + path + "' does not exist");
  return parse_config_text(slurp(path), path);
}

ExperimentConfig load_preset(std::string_view name, const std::string& preset_dir) {
  const auto file = preset_file(name);
  for (const auto& dir : preset_dirs(preset_dir)) {
    const auto path = dir / file;
    if (fs::exists(path)) {
      auto cfg = parse_config_text(slurp(path.string()), std::string(name));
      return cfg;
    }
  }
  throw ValidationError("unknown preset '" + std::string(name) + "'");
}

std::vector<std::string> list_presets(const std::string& preset_dir) {
  std::set<std::string> names;
  for (const auto& dir : preset_dirs(preset_dir)) {
    if (!fs::is_directory(dir)) continue;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.path().extension() != ".ini") continue;
      auto stem = entry.path().stem().string();
      if (stem.rfind("paper_", 0) == 0) stem = "paper:" + stem.substr(6);
      names.insert(stem);
    }
  }
  return {names.begin(), names.end()};
}

ExperimentConfig apply_overrides(const ExperimentConfig& base, const std::vector<std::string>& assignments) {
  if (assignments.empty()) return base;
  auto tree = read_tree(echo_config(base));
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    const auto path = trim(std::string_view(a).substr(0, eq == std::string::npos ? a.size() : eq));
    const auto dot = path.rfind('.');
    if (eq == std::string::npos || dot == std::string::npos || dot == 0 || dot + 1 == path.size()) {
      throw ParseError("override '" + a + "': expected section.key=value", 0, path);
    }
    const auto section = path.substr(0, dot);
    const auto key = path.substr(dot + 1);
    ptree* sec = nullptr;
    for (auto& [name, child] : tree) {
      if (name == section) sec = &child;
    }
    if (sec == nullptr) sec = &tree.push_back({section, ptree()})->second;
    sec->erase(key);
    sec->push_back({key, ptree(trim(std::string_view(a).substr(eq + 1)))});
  }
  return from_tree(tree, nullptr, base.origin);
}

ExperimentConfig select_learners(const ExperimentConfig& base, const std::vector<std::string>& names) {
  ExperimentConfig cfg = base;
  cfg.learners.clear();
  for (const auto& name : names) {
    const auto it = std::find_if(base.learners.begin(), base.learners.end(),
                                 [&](const LearnerConfig& l) { return l.name == name; });
    if (it != base.learners.end()) {
      cfg.learners.push_back(*it);
    } else if (auto b = builtin_learner(name)) {
      cfg.learners.push_back(*b);
    } else {
      throw ValidationError("unknown learner '" + name + "'");
    }
  }
  validate_config(cfg);
  return cfg;
}

std::string echo_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "[experiment]\n";
  if (cfg.seed) out << "seed = " << *cfg.seed << "\n";
  out << "horizon = " << cfg.horizon << "\n"
      << "repetitions = " << cfg.repetitions << "\n"
      << "eval_batch = " << cfg.eval_batch << "\n"
      << "evaluation = " << to_string(cfg.evaluation) << "\n"
      << "roc_ticks = " << join_sizes(cfg.roc_ticks) << "\n"
      << "roc_node = " << cfg.roc_node << "\n"
      << "threads = " << cfg.threads << "\n"
      << "output = " << cfg.output << "\n"
      << "theory = " << (cfg.theory ? "true" : "false") << "\n"
      << "tail_fraction = " << format_double(cfg.tail_fraction) << "\n"
      << "reference_window = " << cfg.reference_window << "\n"
      << "accuracy_smoothing = " << cfg.accuracy_smoothing << "\n\n";
  out << "[network]\ntopology = " << cfg.topology << "\n\n";
  out << "[drift]\n"
      << "process = " << cfg.process << "\n"
      << "label_noise = " << format_double(cfg.label_noise) << "\n"
      << "dim = " << cfg.dim << "\n"
      << "feature_variances = " << join_numbers(cfg.feature_variances) << "\n"
      << "noise_variance = " << format_double(cfg.noise_variance) << "\n"
      << "initial_optimizer = " << join_numbers(cfg.initial_optimizer) << "\n"
      << "m0 = " << join_numbers(cfg.m0) << "\n";
  if (!cfg.data.empty()) out << "data = " << cfg.data << "\n";
  out << "\n[risk]\n";
  if (!cfg.model.empty()) out << "model = " << cfg.model << "\n";
  if (cfg.feature_norm_bound) out << "feature_norm_bound = " << format_double(*cfg.feature_norm_bound) << "\n";
  out << "\n[learners]\nmu = " << format_double(cfg.mu) << "\nuse = ";
  for (std::size_t i = 0; i < cfg.learners.size(); ++i) out << (i ? "," : "") << cfg.learners[i].name;
  out << "\n";
  for (const auto& l : cfg.learners) {
    out << "\n[learner." << l.name << "]\n"
        << "variant = " << to_string(l.variant) << "\n";
    if (l.mu) out << "mu = " << format_double(*l.mu) << "\n";
    out << "schedule = " << to_string(l.schedule) << "\n";
    if (l.a) out << "a = " << *l.a << "\n";
    if (l.a1) out << "a1 = " << *l.a1 << "\n";
    if (l.a2) out << "a2 = " << *l.a2 << "\n";
    if (l.c) out << "c = " << *l.c << "\n";
  }
  return out.str();
}

Matrix parse_matrix_spec(std::string_view spec, const Matrix& a) {
  const auto text = trim(spec);
  if (text == "metropolis") return a;
  if (text == "identity") return Matrix::Identity(a.rows(), a.cols());
  const auto rows = split(text, ';');
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::istringstream in(rows[i]);
    std::vector<double> values;
    std::string token;
    while (in >> token) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
      if (ec != std::errc() || ptr != token.data() + token.size()) {
        throw ValidationError("matrix entry '" + token + "' is not a number");
      }
      values.push_back(v);
    }
    if (values.size() != rows.size()) throw DimensionMismatch("matrix rows must have as many entries as there are rows");
    for (std::size_t j = 0; j < values.size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = values[j];
  }
  if (m.rows() != a.rows()) {
    throw DimensionMismatch("matrix is " + std::to_string(m.rows()) + "x" + std::to_string(m.rows()) +
                            " but the network has " + std::to_string(a.rows()) + " nodes");
  }
  return m;
}

ResolvedExperiment resolve(const ExperimentConfig& cfg) {
  validate_config(cfg);
  ResolvedExperiment out;
  out.network = parse_topology(cfg.topology);
  const auto n = out.network.size();
  out.combination = metropolis_weights(out.network);
  if (cfg.roc_node >= n) throw ValidationError("experiment.roc_node must be below the node count");

  const auto process = parse_process(cfg.process);
  const auto noise = cfg.label_noise;
  auto& spec = out.spec;

  if (process.kind == "stationary-gauss2d" || process.kind == "rw-mean") {
    const std::size_t m = cfg.dim ? cfg.dim : (cfg.m0.empty() ? 2 : cfg.m0.size());
    Vector m0 = Vector::Ones(static_cast<Eigen::Index>(m));
    if (!cfg.m0.empty()) {
      if (cfg.m0.size() != m) throw DimensionMismatch("drift.m0 length differs from drift.dim");
      m0 = Eigen::Map<const Vector>(cfg.m0.data(), static_cast<Eigen::Index>(m));
    }
    const double cov = process.kind == "rw-mean" ? process_number(process, "cov", 0.01) : 0.0;
    const Matrix walk = cov * Matrix::Identity(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    out.drift_covariance = walk;
    out.classification = true;
    spec.make_process = [walk, n, noise, m0](std::uint64_t seed) {
      return gaussian_pair_stream(walk, n, noise, seed, m0);
    };
  } else if (is_adaline(process.kind)) {
    std::size_t m = cfg.dim;
    if (m == 0) m = !cfg.feature_variances.empty() ? cfg.feature_variances.size()
                    : !cfg.initial_optimizer.empty() ? cfg.initial_optimizer.size() : 2;
    const auto mi = static_cast<Eigen::Index>(m);
    Vector variances = Vector::Ones(mi);
    if (!cfg.feature_variances.empty()) {
      if (cfg.feature_variances.size() != m) throw DimensionMismatch("drift.feature_variances length differs from drift.dim");
      variances = Eigen::Map<const Vector>(cfg.feature_variances.data(), mi);
    }
    Vector w0 = Vector::Ones(mi);
    if (!cfg.initial_optimizer.empty()) {
      if (cfg.initial_optimizer.size() != m) throw DimensionMismatch("drift.initial_optimizer length differs from drift.dim");
      w0 = Eigen::Map<const Vector>(cfg.initial_optimizer.data(), mi);
    }
    const double trq = process.kind == "rw-opt" ? process_number(process, "trq", 0.0) : 0.0;
    const Matrix q = (trq / static_cast<double>(m)) * Matrix::Identity(mi, mi);
    const Matrix r = variances.asDiagonal();
    const double sigma2 = cfg.noise_variance;
    out.adaline = true;
    out.feature_covariance = r;
    out.drift_covariance = q;
    out.initial_optimizer = w0;
    spec.make_process = [w0, q, r, sigma2, n](std::uint64_t seed) {
      return random_walk_optimizer(w0, q, seed, r, sigma2, n);
    };
  } else if (process.kind == "stagger") {
    const bool cycle = process_flag(process, "cycle");
    out.classification = true;
    out.drift_covariance = Matrix::Zero(3, 3);
    spec.make_process = [n, noise, cycle](std::uint64_t seed) { return stagger_stream(n, noise, seed, cycle); };
  } else if (process.kind == "dataset") {
    if (cfg.data.empty()) throw ValidationError("drift.data: a LIBSVM file path is required for the dataset process");
    std::optional<std::size_t> expected;
    if (cfg.dim) expected = cfg.dim;
    auto data = std::make_shared<const Dataset>(load_libsvm(cfg.data, expected));
    out.classification = true;
    out.drift_covariance = Matrix::Zero(static_cast<Eigen::Index>(data->dim()), static_cast<Eigen::Index>(data->dim()));
    spec.make_process = [data, n](std::uint64_t seed) { return dataset_stream(*data, n, seed); };
  } else {
    if (cfg.data.empty()) throw ValidationError("drift.data: a tick record file is required for the replay process");
    std::ifstream in(cfg.data);
    auto ticks = std::make_shared<const std::vector<Tick>>(read_tick_records(in));
    if (ticks->empty()) throw ValidationError("drift.data: tick record file is empty");
    if (ticks->front().nodes() != n) throw DimensionMismatch("replayed ticks have a different node count than the network");
    if (ticks->size() < cfg.horizon) throw ValidationError("experiment.horizon exceeds the number of recorded ticks");
    out.classification = ((ticks->front().labels.array().abs() - 1.0).abs() < 1e-12).all();
    const auto d = ticks->front().features.rows();
    out.drift_covariance = Matrix::Zero(d, d);
    spec.make_process = [ticks](std::uint64_t) { return replay_stream(*ticks); };
  }

  const auto dim = static_cast<std::size_t>(out.drift_covariance.rows());
  const auto model = cfg.model.empty() ? ModelSpec{} : parse_model(cfg.model);
  if (model.kind == LossKind::logistic) {
    spec.model = RiskModel::logistic(dim, model.rho, cfg.feature_norm_bound);
  } else if (out.adaline) {
    spec.model = RiskModel::square(out.feature_covariance, cfg.noise_variance);
  } else {
    spec.model = RiskModel::square(dim);
  }

  for (const auto& l : cfg.learners) {
    const double mu = l.mu.value_or(cfg.mu);
    LearnerSpec ls;
    if (l.variant == Variant::general_diffusion) {
      const Matrix id = Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
      ls.name = l.name;
      ls.variant = l.variant;
      ls.step_size = mu;
      ls.schedule = l.schedule;
      ls.combination = general_matrices(l.a1 ? parse_matrix_spec(*l.a1, out.combination) : id,
                                        l.a2 ? parse_matrix_spec(*l.a2, out.combination) : out.combination,
                                        l.c ? parse_matrix_spec(*l.c, out.combination) : id);
    } else {
      const Matrix a = l.a ? parse_matrix_spec(*l.a, out.combination) : out.combination;
      ls = make_learner(l.name, l.variant, a, mu, l.schedule);
    }
    validate_learner(ls, n, dim);
    if (l.variant != Variant::cfg) validate_support(ls.combination, out.network);
    spec.learners.push_back(std::move(ls));
  }

  spec.horizon = cfg.horizon;
  spec.repetitions = cfg.repetitions;
  spec.seed = *cfg.seed;
  spec.eval_batch = cfg.eval_batch;
  spec.evaluation = cfg.evaluation;
  spec.reference_window = cfg.reference_window;
  spec.roc_ticks = cfg.roc_ticks;
  spec.roc_node = cfg.roc_node;
  spec.threads = cfg.threads;
  spec.tail_fraction = cfg.tail_fraction;
  if (!spec.roc_ticks.empty() && !out.classification) {
    throw ValidationError("experiment.roc_ticks needs a classification process");
  }
  return out;
}

}  // namespace diffrisk
