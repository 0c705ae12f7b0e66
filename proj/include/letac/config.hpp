#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "letac/controllers.hpp"
#include "letac/dataset.hpp"
#include "letac/scenario.hpp"
#include "letac/training.hpp"

namespace letac {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat key-value configuration: one `key = value` per line, `#` comments,
// later assignments override earlier ones. Insertion order is preserved so
// serialization (and the hash derived from it) is stable.
class Config {
 public:
  static Config parse_string(const std::string& text, const std::string& origin) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(lineno) +
                          ": expected 'key = value', got '" + trimmed + "'");
      }
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty()) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      }
      cfg.set(key, value);
    }
    return cfg;
  }

  static Config parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str(), path);
  }

  bool has(const std::string& key) const { return index_.count(key) != 0; }

  void set(const std::string& key, const std::string& value) {
    auto it = index_.find(key);
    if (it == index_.end()) {
      index_[key] = items_.size();
      items_.emplace_back(key, value);
    } else {
      items_[it->second].second = value;
    }
  }

  // Overlay: every entry of `other` overrides or extends this config.
  void merge(const Config& other) {
    for (const auto& [k, v] : other.items_) set(k, v);
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = index_.find(key);
    return it == index_.end() ? fallback : items_[it->second].second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = index_.find(key);
    if (it == index_.end()) return fallback;
    return parse_double(key, items_[it->second].second);
  }

  long get_int(const std::string& key, long fallback) const {
    auto it = index_.find(key);
    if (it == index_.end()) return fallback;
    const std::string& raw = items_[it->second].second;
    std::size_t pos = 0;
    long v = 0;
    try {
      v = std::stol(raw, &pos);
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': '" + raw + "' is not an integer");
    }
    if (pos != raw.size()) {
      throw ConfigError("config key '" + key + "': '" + raw + "' is not an integer");
    }
    return v;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = index_.find(key);
    if (it == index_.end()) return fallback;
    const std::string& raw = items_[it->second].second;
    if (raw == "true" || raw == "1" || raw == "on") return true;
    if (raw == "false" || raw == "0" || raw == "off") return false;
    throw ConfigError("config key '" + key + "': '" + raw + "' is not a boolean");
  }

  std::vector<std::string> keys_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : items_) {
      if (k.rfind(prefix, 0) == 0) out.push_back(k);
    }
    return out;
  }

  std::string serialize() const {
    std::string out;
    for (const auto& [k, v] : items_) {
      out += k;
      out += " = ";
      out += v;
      out += '\n';
    }
    return out;
  }

  std::uint64_t hash() const { return fnv1a(serialize()); }

  static std::uint64_t fnv1a(const std::string& data) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : data) {
      h ^= static_cast<std::uint64_t>(c);
      h *= 1099511628211ull;
    }
    return h;
  }

 private:
  static std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
  }

  static double parse_double(const std::string& key, const std::string& raw) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(raw, &pos);
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': '" + raw + "' is not a number");
    }
    if (pos != raw.size()) {
      throw ConfigError("config key '" + key + "': '" + raw + "' is not a number");
    }
    return v;
  }

  std::vector<std::pair<std::string, std::string>> items_;
  std::map<std::string, std::size_t> index_;
};

// Every tunable the CLI honors, with its default value. Parsing this text
// and overlaying a user config yields the effective run configuration whose
// serialization is hashed into dataset metadata and checkpoints.
inline std::string default_config_text() {
  return R"(# data collection
collect.trials_per_material = 60
collect.no_contact_samples = 1000
collect.impedance_stiffness = 0.15
collect.relax_velocity = 4.5
collect.frame_rate = 60
collect.recoil_threshold = 5
collect.post_slip_time = 0.2
collect.grip_margin = 3
collect.dx_max = 35
collect.dy_max = 21
collect.split_fraction = 0.8

# model dimensions
model.N = 15
model.M = 20
model.dt = 0.04
model.hidden = 64
model.eps = 0.0001
model.Q_v = 0.01
model.Q_a = 0.0001
model.P = 5

# training
train.P_tilde = 3
train.lr = 0.01
train.batch = 64
train.epochs = 40
train.grad_clip = 10
train.checkpoint_every = 10

# deployment
deploy.K_v = 100
deploy.K_a = 2
deploy.K_d = 0.02

# baselines
pd.c_ref = 900
pd.Q_d = 2
mpc.c_ref = 900
mpc.Q_d = 2
mpc.Q_c = 36
mpc.N = 10
mpc.P = 5
openloop.force_threshold = 2
openloop.close_speed = 2.5

# scenario runner
scenario.timing = false
)";
}

inline Config default_config() {
  return Config::parse_string(default_config_text(), "<defaults>");
}

// Defaults overlaid with the optional user file.
inline Config load_effective_config(const std::string& path) {
  Config cfg = default_config();
  if (!path.empty()) cfg.merge(Config::parse_file(path));
  return cfg;
}

inline CollectConfig collect_config_from(const Config& cfg) {
  CollectConfig c;
  c.trials_per_material = static_cast<int>(cfg.get_int("collect.trials_per_material", c.trials_per_material));
  c.no_contact_samples = static_cast<int>(cfg.get_int("collect.no_contact_samples", c.no_contact_samples));
  c.impedance_stiffness = cfg.get_double("collect.impedance_stiffness", c.impedance_stiffness);
  c.relax_velocity = cfg.get_double("collect.relax_velocity", c.relax_velocity);
  c.frame_rate = cfg.get_double("collect.frame_rate", c.frame_rate);
  c.recoil_threshold = cfg.get_double("collect.recoil_threshold", c.recoil_threshold);
  c.post_slip_time = cfg.get_double("collect.post_slip_time", c.post_slip_time);
  c.grip_margin = cfg.get_double("collect.grip_margin", c.grip_margin);
  c.dx_max = cfg.get_double("collect.dx_max", c.dx_max);
  c.dy_max = cfg.get_double("collect.dy_max", c.dy_max);
  c.split_fraction = cfg.get_double("collect.split_fraction", c.split_fraction);
  return c;
}

inline MpcDims dims_from(const Config& cfg) {
  MpcDims dims;
  dims.N = static_cast<int>(cfg.get_int("model.N", dims.N));
  dims.M = static_cast<int>(cfg.get_int("model.M", dims.M));
  dims.dt = cfg.get_double("model.dt", dims.dt);
  dims.validate();
  return dims;
}

inline TrainingConfig training_config_from(const Config& cfg, std::uint64_t seed) {
  TrainingConfig t;
  t.P_tilde = cfg.get_double("train.P_tilde", t.P_tilde);
  t.learning_rate = cfg.get_double("train.lr", t.learning_rate);
  t.batch_size = static_cast<int>(cfg.get_int("train.batch", t.batch_size));
  t.epochs = static_cast<int>(cfg.get_int("train.epochs", t.epochs));
  t.grad_clip = cfg.get_double("train.grad_clip", t.grad_clip);
  t.checkpoint_every = static_cast<int>(cfg.get_int("train.checkpoint_every", t.checkpoint_every));
  t.seed = seed;
  t.validate();
  return t;
}

inline DeploymentConfig deployment_config_from(const Config& cfg) {
  DeploymentConfig d;
  d.K_v = cfg.get_double("deploy.K_v", d.K_v);
  d.K_a = cfg.get_double("deploy.K_a", d.K_a);
  d.K_d = cfg.get_double("deploy.K_d", d.K_d);
  d.validate();
  return d;
}

inline PDConfig pd_config_from(const Config& cfg) {
  PDConfig p;
  p.c_ref = cfg.get_double("pd.c_ref", p.c_ref);
  p.Q_d = cfg.get_double("pd.Q_d", p.Q_d);
  return p;
}

inline MPCBaselineConfig mpc_config_from(const Config& cfg) {
  MPCBaselineConfig m;
  m.c_ref = cfg.get_double("mpc.c_ref", m.c_ref);
  m.Q_d = cfg.get_double("mpc.Q_d", m.Q_d);
  m.Q_c = cfg.get_double("mpc.Q_c", m.Q_c);
  m.N = static_cast<int>(cfg.get_int("mpc.N", m.N));
  m.P = cfg.get_double("mpc.P", m.P);
  return m;
}

inline OpenLoopConfig openloop_config_from(const Config& cfg) {
  OpenLoopConfig o;
  o.force_threshold = cfg.get_double("openloop.force_threshold", o.force_threshold);
  o.close_speed = cfg.get_double("openloop.close_speed", o.close_speed);
  return o;
}

// Scenario definition with optional per-scenario config overrides
// (object material, mass, disturbance strength, duration).
inline ScenarioConfig scenario_from(const Config& cfg, const std::string& name,
                                    std::uint64_t seed) {
  ScenarioConfig sc = make_scenario(name, seed);
  const std::string pfx = "scenario." + name + ".";
  const std::string mat = cfg.get_string(pfx + "object", "");
  if (!mat.empty()) {
    const double mass = sc.object.mass;
    sc.object = make_material(mat);
    sc.object.mass = mass;
  }
  sc.object.mass = cfg.get_double(pfx + "mass", sc.object.mass);
  sc.duration = cfg.get_double(pfx + "duration", sc.duration);
  sc.profile.peak_acceleration = cfg.get_double(pfx + "peak_acceleration", sc.profile.peak_acceleration);
  sc.profile.omega = cfg.get_double(pfx + "omega", sc.profile.omega);
  sc.profile.t_start = cfg.get_double(pfx + "t_start", sc.profile.t_start);
  sc.object.validate();
  sc.profile.validate();
  return sc;
}

}  // namespace letac
