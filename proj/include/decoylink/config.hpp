#pragma once

// Flat dotted-key configuration: `section.key = value` lines in a text file,
// overridable by `section.key=value` tokens on the command line. The resolved
// map is echoed to a manifest so every run is reproducible from its output
// directory alone.

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "decoylink/common.hpp"
#include "decoylink/dataset.hpp"
#include "decoylink/fdp.hpp"
#include "decoylink/simulate.hpp"

namespace decoylink {

class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    Config cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::string trimmed = trim(line);
      if (trimmed.empty() || trimmed[0] == '#') continue;
      auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path + ":" + std::to_string(line_no) + ": expected 'key = value'");
      std::string key = trim(trimmed.substr(0, eq));
      std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  void apply_override(const std::string& token) {
    auto eq = token.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("override '" + token + "' is not of the form key=value");
    values_[trim(token.substr(0, eq))] = trim(token.substr(eq + 1));
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required config key '" + key + "'");
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key) const { return to_double(key, get_string(key)); }
  double get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
  }

  std::int64_t get_int(const std::string& key) const { return to_int(key, get_string(key)); }
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    return has(key) ? get_int(key) : fallback;
  }

  std::uint64_t get_seed(const std::string& key) const {
    std::int64_t v = get_int(key);
    if (v < 0) throw ConfigError("config key '" + key + "' must be a non-negative seed");
    return static_cast<std::uint64_t>(v);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    std::string v = get_string(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "' must be a boolean, got '" + v + "'");
  }

  std::vector<std::string> get_list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(get_string(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  void write_manifest(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest: " + path);
    for (const auto& [key, value] : values_) out << key << " = " << value << "\n";
  }

 private:
  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static double to_double(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      double x = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' must be a number, got '" + v + "'");
    }
  }

  static std::int64_t to_int(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      std::int64_t x = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' must be an integer, got '" + v + "'");
    }
  }

  std::map<std::string, std::string> values_;
};

// schema.variables = name[:cardinality][, ...]
inline Schema schema_from_config(const Config& cfg) {
  Schema schema;
  for (const std::string& item : cfg.get_list("schema.variables")) {
    auto colon = item.find(':');
    Variable v;
    v.name = colon == std::string::npos ? item : item.substr(0, colon);
    v.cardinality = 1;
    if (colon != std::string::npos) {
      try {
        v.cardinality = std::stoi(item.substr(colon + 1));
      } catch (const std::exception&) {
        throw ConfigError("bad cardinality in schema entry '" + item + "'");
      }
    }
    schema.variables.push_back(std::move(v));
  }
  schema.validate();
  return schema;
}

// sim.* keys -> SimulationSpec; variables either from sim.vars entries of the
// form name:cardinality:shape or the standard 5-variable layout.
inline SimulationSpec simulation_spec_from_config(const Config& cfg) {
  SimulationSpec spec;
  spec.n_a = static_cast<std::size_t>(cfg.get_int("sim.n_a"));
  spec.n_b = static_cast<std::size_t>(cfg.get_int("sim.n_b"));
  spec.seed = cfg.get_seed("seed");
  double error_rate = cfg.get_double("sim.error_rate", 0.005);
  double missing_rate = cfg.get_double("sim.missing_rate", 0.002);
  if (cfg.has("sim.vars")) {
    for (const std::string& item : cfg.get_list("sim.vars")) {
      std::stringstream ss(item);
      std::string name, card, shape;
      std::getline(ss, name, ':');
      std::getline(ss, card, ':');
      std::string rest;
      std::getline(ss, rest);
      SimVariable v;
      v.name = name;
      try {
        v.cardinality = std::stoi(card);
      } catch (const std::exception&) {
        throw ConfigError("bad sim.vars entry '" + item + "' (want name:cardinality[:shape])");
      }
      v.shape = rest.empty() ? MarginalShape{} : parse_shape(rest);
      v.error_rate = error_rate;
      v.missing_rate = missing_rate;
      spec.variables.push_back(std::move(v));
    }
  } else {
    spec.variables =
        SimulationSpec::standard(spec.n_a, spec.n_b, spec.seed, error_rate, missing_rate)
            .variables;
  }
  for (auto& v : spec.variables) {
    if (cfg.has("sim.error_rate." + v.name)) v.error_rate = cfg.get_double("sim.error_rate." + v.name);
    if (cfg.has("sim.missing_rate." + v.name))
      v.missing_rate = cfg.get_double("sim.missing_rate." + v.name);
  }
  spec.overlap = cfg.get_double("sim.overlap", spec.overlap);
  if (!(spec.overlap >= 0.0 && spec.overlap <= 1.0))
    throw ConfigError("overlap must lie in [0, 1], got " + cfg.get_string("sim.overlap"));
  if (cfg.has("sim.discr_target")) spec.discr_target = cfg.get_double("sim.discr_target");
  std::string mech = cfg.get_string("sim.mechanism", "at_random");
  if (mech == "at_random") spec.mechanism = LinkMechanism::at_random;
  else if (mech == "depends_on_variables") spec.mechanism = LinkMechanism::depends_on_variables;
  else throw ConfigError("unknown sim.mechanism '" + mech + "'");
  spec.link_tilt = cfg.get_double("sim.link_tilt", spec.link_tilt);
  spec.duplicate_rate = cfg.get_double("sim.duplicate_rate", 0.0);
  spec.validate();
  return spec;
}

inline LinkerConfig linker_config_from_config(const Config& cfg) {
  LinkerConfig lc;
  lc.em.max_iter = static_cast<int>(cfg.get_int("linker.max_iter", 500));
  lc.em.rel_tol = cfg.get_double("linker.rel_tol", 1e-6);
  lc.score.floor = cfg.get_double("linker.score_floor", 0.01);
  if (lc.score.floor > 0.5) throw ConfigError("linker.score_floor must be <= 0.5");
  return lc;
}

inline SynthConfig synth_config_from_config(const Config& cfg) {
  SynthConfig sc;
  sc.gamma = cfg.get_double("synth.gamma", 0.5);
  sc.max_context = static_cast<int>(cfg.get_int("synth.max_context", 400));
  if (cfg.has("synth.variable_order")) sc.variable_order = cfg.get_list("synth.variable_order");
  return sc;
}

inline FdpConfig fdp_config_from_config(const Config& cfg) {
  FdpConfig fc;
  fc.alpha = cfg.get_double("fdp.alpha", 0.10);
  fc.repeats = static_cast<int>(cfg.get_int("fdp.repeats", 10));
  fc.seed_base = cfg.get_seed("seed");
  fc.rule = parse_aggregation(cfg.get_string("fdp.aggregation", "mean_min1"));
  fc.target_fdp = cfg.get_double("fdp.target", 0.10);
  if (cfg.has("fdp.xi_grid")) {
    fc.xi_grid.clear();
    for (const std::string& item : cfg.get_list("fdp.xi_grid"))
      fc.xi_grid.push_back(std::stod(item));
  } else if (cfg.has("fdp.xi_min") || cfg.has("fdp.xi_max") || cfg.has("fdp.xi_step")) {
    double lo = cfg.get_double("fdp.xi_min", 0.50);
    double hi = cfg.get_double("fdp.xi_max", 0.99);
    double step = cfg.get_double("fdp.xi_step", 0.01);
    if (step <= 0.0) throw ConfigError("fdp.xi_step must be positive");
    fc.xi_grid.clear();
    for (int i = 0;; ++i) {
      double xi = lo + i * step;
      if (xi > hi + 1e-12) break;
      fc.xi_grid.push_back(xi);
    }
  }
  fc.validate();
  return fc;
}

}  // namespace decoylink
