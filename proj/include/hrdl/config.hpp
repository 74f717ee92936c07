#pragma once

// Experiment configuration: one JSON document, strictly validated. Every
// field has a default; a config file only needs the keys it changes.
// Reading and writing share one field list (visit_config), so the resolved
// config written to manifests is exactly what was parsed.

#include <cstdint>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hrdl/control.hpp"
#include "hrdl/features.hpp"
#include "hrdl/robosim.hpp"
#include "hrdl/trajgen.hpp"

namespace hrdl {

inline constexpr const char* kVersion = "1.0.0";

class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : Error(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string s = "invalid configuration:";
    for (const auto& x : p) s += "\n  " + x;
    return s;
  }
  std::vector<std::string> problems_;
};

struct DataConfig {
  double freq = 100.0;
  double filter_cutoff = 20.0;  // Hz, 0 disables the current filter
  double test_fraction = 0.2;   // of trajectories, per dataset
  std::array<JointLimit, kJoints> joint_limits{};
  Vec6 vel_limits{1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  std::size_t continuous_trajectories = 240;
  double continuous_duration = 20.0;
  bool stop_at_via = false;
  double min_segment = 0.5;
  std::size_t rich_trajectories = 360;
  double rich_duration = 20.0;
  double speed_lo = 0.05;
  double speed_hi = 0.5;
  double block_seconds = 3.0;
};

struct ModelConfig {
  std::size_t frames = 5;
  std::vector<Eigen::Index> hrdl_hidden{256, 256, 256};
  // Baselines: width 0 means "match the HRDL stack's parameter count".
  std::size_t mlp_frames = 1;
  std::size_t mlp_layers = 3;
  Eigen::Index mlp_width = 0;
  std::size_t rdl_blocks = 2;
  Eigen::Index rdl_width = 0;
  std::size_t lstm_window = 100;
  Eigen::Index lstm_encoder = 32;
  Eigen::Index lstm_hidden = 0;
  std::size_t lstm_stride = 10;
};

struct TrainSection {
  std::size_t epochs = 30;
  std::size_t lstm_epochs = 10;
  std::size_t batch = 256;
  double lr = 1e-3;
  std::size_t patience = 5;
  double val_fraction = 0.1;
};

struct EvalConfig {
  double static_gain = 0.2;            // RDL-MD static RMSE must be this much lower than RDL
  double hierarchy_tolerance = 0.01;   // relative increase allowed per added hierarchy
};

struct BenchConfig {
  std::size_t calls = 10000;
};

struct ComplianceConfig {
  Vec6 q0{0.0, 0.3, 0.4, 0.0, 0.3, 0.0};
  Vec6 approach_from{0.3, -0.2, 0.7, -0.4, 0.6, 0.3};
  double approach_seconds = 2.0;
  double idle_seconds = 60.0;
  double pulse_seconds = 15.0;
  std::size_t pulse_joint = 2;  // 1-based
  double pulse_use = 14.0;      // pulse size as a current equivalent (%Use)
  double pulse_start = 5.0;
  double pulse_end = 7.0;
  std::string torque_script;    // CSV path; replaces the pulse when set
  double filter_alpha = 0.1;
  bool noise = true;
  Vec6 vel_limits{0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
  std::array<JointLimit, kJoints> joint_limits{};
  std::string infer_mode = "sequential";
};

struct WrenchConfig {
  std::string residual_source = "hrdl-md";  // or "analytic"
  std::size_t train_samples = 20000;
  std::size_t test_samples = 5000;
  std::size_t hold_frames = 50;
  double move_seconds = 2.0;
  double zero_fraction = 0.1;
  double force_bound = 30.0;
  double moment_bound = 5.0;
  std::vector<Eigen::Index> hidden{128, 128, 128};
  std::size_t epochs = 100;
  std::size_t ideal_train_samples = 20000;
  std::size_t ideal_test_samples = 2000;
  std::size_t ideal_epochs = 200;
};

struct Config {
  std::uint64_t seed = 1;
  std::string output_dir = "hrdl_out";
  RobotParams robot;
  std::vector<double> friction_weights{1.0, 1.5, 2.0, 2.5};
  std::vector<double> friction_deltas{0.002, 0.005, 0.01, 0.02};
  DataConfig data;
  ThresholdSet thresholds = default_thresholds();
  ModelConfig model;
  TrainSection train;
  EvalConfig eval;
  BenchConfig bench;
  DeadzoneSpec deadzone;
  ComplianceConfig compliance;
  WrenchConfig wrench;

  Config() {
    data.joint_limits.fill({-1.0, 1.0});
    compliance.joint_limits.fill({-2.5, 2.5});
  }

  TrainSettings train_settings(std::size_t epochs) const {
    TrainSettings t;
    t.fit.epochs = epochs;
    t.fit.batch = train.batch;
    t.fit.adam.lr = train.lr;
    t.fit.patience = train.patience;
    t.val_fraction = train.val_fraction;
    t.seed = seed;
    return t;
  }
};

// ---------------------------------------------------------------------------

namespace detail {

template <class T>
struct is_std_vector : std::false_type {};
template <class T>
struct is_std_vector<std::vector<T>> : std::true_type {};

/// Reads fields from a JSON object, remembering which keys were consumed.
class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& j, std::string path, std::vector<std::string>& errors)
      : j_(j), path_(std::move(path)), errors_(errors) {
    if (!j_.is_object()) errors_.push_back(where() + ": expected an object");
  }

  template <class T>
  void item(const char* key, T& value) {
    if (!j_.is_object() || !j_.contains(key)) return;
    used_.insert(key);
    const auto& v = j_.at(key);
    try {
      read(v, value);
    } catch (const std::exception& e) {
      errors_.push_back(where(key) + ": " + e.what());
    }
  }

  template <class Fn>
  void group(const char* key, Fn&& fn) {
    if (!j_.is_object() || !j_.contains(key)) return;
    used_.insert(key);
    ConfigReader sub(j_.at(key), where(key), errors_);
    fn(sub);
    sub.finish();
  }

  void finish() {
    if (!j_.is_object()) return;
    for (const auto& [k, v] : j_.items())
      if (!used_.count(k)) errors_.push_back(where(k) + ": unknown key");
  }

 private:
  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  static void read(const nlohmann::json& v, double& out) {
    if (!v.is_number()) throw Error("expected a number");
    out = v.get<double>();
  }
  static void read(const nlohmann::json& v, bool& out) {
    if (!v.is_boolean()) throw Error("expected true or false");
    out = v.get<bool>();
  }
  static void read(const nlohmann::json& v, std::string& out) {
    if (!v.is_string()) throw Error("expected a string");
    out = v.get<std::string>();
  }
  template <class I>
    requires std::is_integral_v<I> && (!std::is_same_v<I, bool>)
  static void read(const nlohmann::json& v, I& out) {
    if (v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0)) {
      out = v.get<I>();
      return;
    }
    if (std::is_signed_v<I> && v.is_number_integer()) {
      out = v.get<I>();
      return;
    }
    throw Error("expected a non-negative integer");
  }
  static void read(const nlohmann::json& v, Vec6& out) {
    if (v.is_number()) {
      out.fill(v.get<double>());
      return;
    }
    if (!v.is_array() || v.size() != kJoints) throw Error("expected a number or 6 numbers");
    for (std::size_t k = 0; k < kJoints; ++k) read(v[k], out[k]);
  }
  static void read(const nlohmann::json& v, std::array<JointLimit, kJoints>& out) {
    auto pair = [](const nlohmann::json& p, JointLimit& l) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
        throw Error("expected [lo, hi] or 6 such pairs");
      l = {p[0].get<double>(), p[1].get<double>()};
    };
    if (v.is_array() && v.size() == 2 && v[0].is_number()) {
      JointLimit l;
      pair(v, l);
      out.fill(l);
      return;
    }
    if (!v.is_array() || v.size() != kJoints) throw Error("expected [lo, hi] or 6 such pairs");
    for (std::size_t k = 0; k < kJoints; ++k) pair(v[k], out[k]);
  }
  template <class T>
  static void read(const nlohmann::json& v, std::vector<T>& out) {
    if (!v.is_array()) throw Error("expected an array");
    std::vector<T> tmp(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) read(v[i], tmp[i]);
    out = std::move(tmp);
  }
  static void read(const nlohmann::json& v, ThresholdSet& out) {
    if (!v.is_object()) throw Error("expected {\"thresholds\": [...], \"groups\": [...]}");
    for (const auto& [k, x] : v.items())
      if (k != "thresholds" && k != "groups") throw Error("unknown key " + k);
    out = thresholds_from_json(v);
  }

  const nlohmann::json& j_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> used_;
};

class ConfigWriter {
 public:
  explicit ConfigWriter(nlohmann::json& j) : j_(j) { j_ = nlohmann::json::object(); }

  template <class T>
  void item(const char* key, const T& value) {
    j_[key] = write(value);
  }

  template <class Fn>
  void group(const char* key, Fn&& fn) {
    nlohmann::json sub;
    ConfigWriter w(sub);
    fn(w);
    j_[key] = std::move(sub);
  }

 private:
  template <class T>
  static nlohmann::json write(const T& v) {
    if constexpr (is_std_vector<T>::value) {
      nlohmann::json a = nlohmann::json::array();
      for (const auto& x : v) a.push_back(write(x));
      return a;
    } else {
      return v;
    }
  }
  static nlohmann::json write(const Vec6& v) { return std::vector<double>(v.begin(), v.end()); }
  static nlohmann::json write(const std::array<JointLimit, kJoints>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& l : v) a.push_back({l.lo, l.hi});
    return a;
  }
  static nlohmann::json write(const ThresholdSet& ts) { return hrdl::to_json(ts); }

  nlohmann::json& j_;
};

/// The single list of configuration fields. `V` is ConfigReader or
/// ConfigWriter; `C` is Config or const Config accordingly.
template <class V, class C>
void visit_config(V& v, C& c) {
  v.item("seed", c.seed);
  v.item("output_dir", c.output_dir);
  v.group("robot", [&](auto& r) {
    r.item("noise_sigma", c.robot.noise_sigma);
    r.item("coupling_decay", c.robot.coupling_decay);
    r.item("motion_eps", c.robot.motion_eps);
    r.item("viscous", c.robot.viscous);
    r.item("inertial", c.robot.inertial);
    r.item("torque_per_use", c.robot.torque_per_use);
    r.item("link_lengths", c.robot.link_lengths);
    r.group("gravity", [&](auto& g) {
      g.item("shoulder", c.robot.gravity.shoulder);
      g.item("elbow_on_shoulder", c.robot.gravity.elbow_on_shoulder);
      g.item("elbow", c.robot.gravity.elbow);
      g.item("wrist", c.robot.gravity.wrist);
    });
    r.group("friction", [&](auto& f) {
      f.item("weights", c.friction_weights);
      f.item("deltas", c.friction_deltas);
    });
  });
  v.group("data", [&](auto& d) {
    d.item("freq", c.data.freq);
    d.item("filter_cutoff", c.data.filter_cutoff);
    d.item("test_fraction", c.data.test_fraction);
    d.item("joint_limits", c.data.joint_limits);
    d.item("vel_limits", c.data.vel_limits);
    d.group("continuous", [&](auto& s) {
      s.item("trajectories", c.data.continuous_trajectories);
      s.item("duration", c.data.continuous_duration);
      s.item("stop_at_via", c.data.stop_at_via);
      s.item("min_segment", c.data.min_segment);
    });
    d.group("hysteresis_rich", [&](auto& s) {
      s.item("trajectories", c.data.rich_trajectories);
      s.item("duration", c.data.rich_duration);
      s.item("speed_lo", c.data.speed_lo);
      s.item("speed_hi", c.data.speed_hi);
      s.item("block_seconds", c.data.block_seconds);
    });
  });
  v.item("md_thresholds", c.thresholds);
  v.group("model", [&](auto& m) {
    m.item("frames", c.model.frames);
    m.group("hrdl", [&](auto& s) { s.item("hidden", c.model.hrdl_hidden); });
    m.group("mlp", [&](auto& s) {
      s.item("frames", c.model.mlp_frames);
      s.item("layers", c.model.mlp_layers);
      s.item("width", c.model.mlp_width);
    });
    m.group("rdl", [&](auto& s) {
      s.item("blocks", c.model.rdl_blocks);
      s.item("width", c.model.rdl_width);
    });
    m.group("lstm", [&](auto& s) {
      s.item("window", c.model.lstm_window);
      s.item("encoder", c.model.lstm_encoder);
      s.item("hidden", c.model.lstm_hidden);
      s.item("stride", c.model.lstm_stride);
    });
  });
  v.group("train", [&](auto& t) {
    t.item("epochs", c.train.epochs);
    t.item("lstm_epochs", c.train.lstm_epochs);
    t.item("batch", c.train.batch);
    t.item("lr", c.train.lr);
    t.item("patience", c.train.patience);
    t.item("val_fraction", c.train.val_fraction);
  });
  v.group("eval", [&](auto& e) {
    e.item("static_gain", c.eval.static_gain);
    e.item("hierarchy_tolerance", c.eval.hierarchy_tolerance);
  });
  v.group("bench", [&](auto& b) { b.item("calls", c.bench.calls); });
  v.group("deadzone", [&](auto& d) {
    d.item("boundary", c.deadzone.boundary);
    d.item("band", c.deadzone.band);
    d.item("kp", c.deadzone.Kp);
  });
  v.group("compliance", [&](auto& s) {
    s.item("q0", c.compliance.q0);
    s.item("approach_from", c.compliance.approach_from);
    s.item("approach_seconds", c.compliance.approach_seconds);
    s.item("idle_seconds", c.compliance.idle_seconds);
    s.item("pulse_seconds", c.compliance.pulse_seconds);
    s.item("pulse_joint", c.compliance.pulse_joint);
    s.item("pulse_use", c.compliance.pulse_use);
    s.item("pulse_start", c.compliance.pulse_start);
    s.item("pulse_end", c.compliance.pulse_end);
    s.item("torque_script", c.compliance.torque_script);
    s.item("filter_alpha", c.compliance.filter_alpha);
    s.item("noise", c.compliance.noise);
    s.item("vel_limits", c.compliance.vel_limits);
    s.item("joint_limits", c.compliance.joint_limits);
    s.item("infer_mode", c.compliance.infer_mode);
  });
  v.group("wrench", [&](auto& w) {
    w.item("residual_source", c.wrench.residual_source);
    w.item("train_samples", c.wrench.train_samples);
    w.item("test_samples", c.wrench.test_samples);
    w.item("hold_frames", c.wrench.hold_frames);
    w.item("move_seconds", c.wrench.move_seconds);
    w.item("zero_fraction", c.wrench.zero_fraction);
    w.item("force_bound", c.wrench.force_bound);
    w.item("moment_bound", c.wrench.moment_bound);
    w.item("hidden", c.wrench.hidden);
    w.item("epochs", c.wrench.epochs);
    w.item("ideal_train_samples", c.wrench.ideal_train_samples);
    w.item("ideal_test_samples", c.wrench.ideal_test_samples);
    w.item("ideal_epochs", c.wrench.ideal_epochs);
  });
}

inline void check_config(const Config& c, std::vector<std::string>& err) {
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) err.push_back(msg);
  };
  auto guard = [&](auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      err.push_back(e.what());
    }
  };
  guard([&] { c.robot.validate(); });
  guard([&] { c.thresholds.validate(); });
  guard([&] { c.deadzone.validate(); });
  need(!c.thresholds.groups.empty(), "md_thresholds: at least one group (one per hierarchy) needed");
  need(!c.thresholds.groups.empty() && c.thresholds.groups.back().end == c.thresholds.size(),
       "md_thresholds: groups must cover every threshold");
  need(!c.output_dir.empty(), "output_dir: must not be empty");
  need(c.data.freq > 0.0, "data.freq: must be > 0");
  need(c.data.filter_cutoff == 0.0 || (c.data.filter_cutoff > 0.0 && c.data.filter_cutoff < c.data.freq / 2),
       "data.filter_cutoff: must be 0 (off) or in (0, freq/2)");
  need(c.data.test_fraction > 0.0 && c.data.test_fraction < 1.0, "data.test_fraction: must lie in (0, 1)");
  need(c.data.continuous_trajectories >= 2, "data.continuous.trajectories: need >= 2 for a split");
  need(c.data.rich_trajectories >= 2, "data.hysteresis_rich.trajectories: need >= 2 for a split");
  need(c.data.continuous_duration > 0.0 && c.data.rich_duration > 0.0, "data: durations must be > 0");
  need(c.model.frames >= 1 && c.model.mlp_frames >= 1, "model: frame counts must be >= 1");
  need(!c.model.hrdl_hidden.empty(), "model.hrdl.hidden: need at least one hidden layer");
  for (auto h : c.model.hrdl_hidden) need(h > 0, "model.hrdl.hidden: widths must be > 0");
  for (auto h : c.wrench.hidden) need(h > 0, "wrench.hidden: widths must be > 0");
  need(c.model.mlp_layers >= 1, "model.mlp.layers: must be >= 1");
  need(c.model.mlp_width >= 0 && c.model.rdl_width >= 0 && c.model.lstm_hidden >= 0,
       "model: widths must be >= 0 (0 = parameter-matched)");
  need(c.model.lstm_window >= 1 && c.model.lstm_stride >= 1 && c.model.lstm_encoder >= 1,
       "model.lstm: window, stride and encoder must be >= 1");
  need(c.train.batch >= 1, "train.batch: must be >= 1");
  need(c.train.lr > 0.0, "train.lr: must be > 0");
  need(c.train.val_fraction >= 0.0 && c.train.val_fraction < 1.0, "train.val_fraction: must lie in [0, 1)");
  need(c.bench.calls >= 1, "bench.calls: must be >= 1");
  need(c.compliance.pulse_joint >= 1 && c.compliance.pulse_joint <= kJoints,
       "compliance.pulse_joint: must be 1..6");
  need(c.compliance.filter_alpha > 0.0 && c.compliance.filter_alpha <= 1.0,
       "compliance.filter_alpha: must lie in (0, 1]");
  need(c.compliance.idle_seconds > 0.0 && c.compliance.pulse_seconds > 0.0,
       "compliance: durations must be > 0");
  need(c.compliance.pulse_start >= 0.0 && c.compliance.pulse_start < c.compliance.pulse_end &&
           c.compliance.pulse_end <= c.compliance.pulse_seconds,
       "compliance: need 0 <= pulse_start < pulse_end <= pulse_seconds");
  need(c.compliance.approach_seconds >= 0.0, "compliance.approach_seconds: must be >= 0");
  need(c.compliance.infer_mode == "sequential" || c.compliance.infer_mode == "parallel",
       "compliance.infer_mode: sequential or parallel");
  need(c.wrench.residual_source == "hrdl-md" || c.wrench.residual_source == "analytic",
       "wrench.residual_source: hrdl-md or analytic");
  need(c.wrench.train_samples >= 1 && c.wrench.test_samples >= 1 && c.wrench.hold_frames >= 1 &&
           c.wrench.ideal_train_samples >= 1 && c.wrench.ideal_test_samples >= 1,
       "wrench: sample counts must be >= 1");
  need(c.wrench.zero_fraction >= 0.0 && c.wrench.zero_fraction <= 1.0,
       "wrench.zero_fraction: must lie in [0, 1]");
  need(c.wrench.force_bound >= 0.0 && c.wrench.moment_bound >= 0.0, "wrench: bounds must be >= 0");
  need(c.friction_weights.size() == c.friction_deltas.size() && !c.friction_weights.empty(),
       "robot.friction: weights and deltas must be non-empty and of equal length");
}

}  // namespace detail

/// Parses a config document; throws ConfigError listing every problem.
inline Config config_from_json(const nlohmann::json& j) {
  Config c;
  std::vector<std::string> err;
  detail::ConfigReader r(j, "", err);
  detail::visit_config(r, c);
  r.finish();
  if (err.empty() && c.friction_weights.size() == c.friction_deltas.size()) {
    try {
      const MSBank bank = make_bank(c.friction_weights, c.friction_deltas);
      c.robot.ms_banks.fill(bank);
    } catch (const std::exception& e) {
      err.push_back(std::string("robot.friction: ") + e.what());
    }
  }
  if (err.empty()) detail::check_config(c, err);
  if (!err.empty()) throw ConfigError(std::move(err));
  return c;
}

inline nlohmann::json config_to_json(const Config& c) {
  nlohmann::json j;
  detail::ConfigWriter w(j);
  detail::visit_config(w, c);
  return j;
}

/// `key.sub=value`; the value is parsed as JSON when possible, otherwise
/// taken as a string.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError({"--set " + assignment + ": expected key=value"});
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty()) throw ConfigError({"--set " + assignment + ": empty key component"});
    if (!node->is_object()) throw ConfigError({"--set " + key + ": parent is not an object"});
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string config_hash(const Config& c) { return hex64(fnv1a64(config_to_json(c).dump())); }

}  // namespace hrdl
