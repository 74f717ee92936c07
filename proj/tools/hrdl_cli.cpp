// hrdl: data generation, training, evaluation, benchmarking and the two
// compliance experiments, driven by one JSON config.

#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "hrdl/config.hpp"
#include "hrdl/control.hpp"
#include "hrdl/models.hpp"
#include "hrdl/nnet/gradcheck.hpp"
#include "hrdl/parallel.hpp"
#include "hrdl/trajgen.hpp"
#include "hrdl/wrench.hpp"

namespace fs = std::filesystem;
using namespace hrdl;

namespace {

struct MissingArtifact : Error {
  using Error::Error;
};
struct CheckFailed : Error {
  using Error::Error;
};

const std::vector<std::string> kTrainable{"mlp", "rdl", "rdl-md", "hrdl-md", "lstm"};
// Row order of the model comparison report.
const std::vector<std::string> kEvalOrder{"model-based", "mlp", "rdl", "lstm", "rdl-md", "hrdl-md"};

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream seeds: one tag per use, one index per item.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t i = 0) {
  return splitmix(splitmix(seed ^ splitmix(tag)) + i);
}

// ---------------------------------------------------------------------------
// Run bookkeeping

class Run {
 public:
  Run(std::string command, std::vector<std::string> args, Config cfg)
      : command_(std::move(command)), args_(std::move(args)), cfg_(std::move(cfg)) {
    fs::create_directories(out());
  }

  const Config& cfg() const { return cfg_; }
  fs::path out() const { return fs::path(cfg_.output_dir); }
  fs::path path(const std::string& rel) const { return out() / rel; }

  void note(const std::string& rel) { artifacts_.push_back(rel); }

  void write(const std::string& rel, const std::string& text) {
    const fs::path p = path(rel);
    fs::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary);
    os << text;
    if (!os) throw Error("cannot write " + p.string());
    note(rel);
  }

  template <class Fn>
  void write_with(const std::string& rel, Fn&& fn) {
    std::ostringstream os;
    fn(os);
    write(rel, os.str());
  }

  std::string read(const std::string& rel, const std::string& what) const {
    const fs::path p = path(rel);
    std::ifstream is(p, std::ios::binary);
    if (!is) throw MissingArtifact("missing " + what + ": " + p.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
  }

  /// manifests/<name>.json: everything needed to reproduce this run.
  void finish(const std::string& manifest_name) const {
    nlohmann::json m;
    m["command"] = command_;
    m["args"] = args_;
    m["seed"] = cfg_.seed;
    m["config_hash"] = "fnv1a64:" + config_hash(cfg_);
    m["versions"] = {{"hrdl", kVersion},
                     {"model_format", kFormatVersion},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                   "." + std::to_string(EIGEN_MINOR_VERSION)},
                     {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                     {"compiler", __VERSION__}};
    m["config"] = config_to_json(cfg_);
    m["artifacts"] = nlohmann::json::array();
    for (const auto& a : artifacts_) {
      std::ifstream is(path(a), std::ios::binary);
      std::ostringstream ss;
      ss << is.rdbuf();
      m["artifacts"].push_back({{"path", a}, {"fnv1a64", hex64(fnv1a64(ss.str()))}});
    }
    const fs::path p = out() / "manifests" / (manifest_name + ".json");
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << m.dump(2) << '\n';
  }

 private:
  std::string command_;
  std::vector<std::string> args_;
  Config cfg_;
  std::vector<std::string> artifacts_;
};

std::string fmt(double v) { return format_value(v); }

std::string vec_csv(const Vec6& v) {
  std::string s;
  for (std::size_t k = 0; k < kJoints; ++k) s += (k ? "," : "") + fmt(v[k]);
  return s;
}

// ---------------------------------------------------------------------------
// Data

Dataset make_corpus(const Config& c, TrajKind kind) {
  const bool cont = kind == TrajKind::continuous;
  Dataset all;
  all.freq = c.data.freq;
  all.label = cont ? "continuous" : "hysteresis-rich";
  const std::size_t n = cont ? c.data.continuous_trajectories : c.data.rich_trajectories;
  for (std::size_t i = 0; i < n; ++i) {
    TrajSpec s;
    s.kind = kind;
    s.duration = cont ? c.data.continuous_duration : c.data.rich_duration;
    s.freq = c.data.freq;
    s.joint_limits = c.data.joint_limits;
    s.vel_limits = c.data.vel_limits;
    s.seed = derive_seed(c.seed, cont ? 1 : 2, i);
    s.stop_at_via = c.data.stop_at_via;
    s.min_segment = c.data.min_segment;
    s.speed_lo = c.data.speed_lo;
    s.speed_hi = c.data.speed_hi;
    s.block_seconds = c.data.block_seconds;
    const Dataset traj = cont ? gen_continuous(s) : gen_hysteresis_rich(s);
    Dataset sim = simulate_currents(traj, c.robot, derive_seed(c.seed, cont ? 3 : 4, i));
    if (c.data.filter_cutoff > 0.0) filter_currents(sim, c.data.filter_cutoff);
    all.append(sim);
  }
  return quantized(std::move(all));
}

const char* kDataFiles[] = {"data/continuous.csv", "data/hysteresis_rich.csv"};

struct Corpus {
  Dataset train, test;
};

Corpus load_corpus(const Run& run) {
  Corpus c;
  c.train.freq = c.test.freq = run.cfg().data.freq;
  c.train.label = "train";
  c.test.label = "test";
  for (const char* f : kDataFiles) {
    std::istringstream is(run.read(f, "dataset (run gen-data first)"));
    const Dataset d = read_dataset(is);
    auto [tr, te] = split_by_trajectory(d, run.cfg().data.test_fraction, run.cfg().seed);
    c.train.append(tr);
    c.test.append(te);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Models

/// Smallest-error width for a parameter budget; count(w) must increase with w.
template <class Count>
Eigen::Index match_width(std::size_t target, Count&& count) {
  Eigen::Index lo = 1, hi = 8192;
  while (lo < hi) {
    const Eigen::Index mid = (lo + hi) / 2;
    if (count(mid) >= target) hi = mid;
    else lo = mid + 1;
  }
  if (lo > 1) {
    const auto a = static_cast<double>(count(lo - 1)), b = static_cast<double>(count(lo));
    if (std::abs(a - static_cast<double>(target)) <= std::abs(b - static_cast<double>(target))) return lo - 1;
  }
  return lo;
}

std::size_t hrdl_param_count(const Config& c) {
  std::size_t n = 0;
  for (const auto& g : c.thresholds.groups) {
    nn::Rng rng(0);
    n += nn::DenseNet(static_cast<Eigen::Index>(input_dim(c.model.frames, g.size())), c.model.hrdl_hidden, 6, rng)
             .param_count();
  }
  return n;
}

Eigen::Index mlp_width(const Config& c) {
  if (c.model.mlp_width > 0) return c.model.mlp_width;
  const auto in = static_cast<Eigen::Index>(input_dim(c.model.mlp_frames, 0));
  return match_width(hrdl_param_count(c), [&](Eigen::Index w) {
    nn::Rng rng(0);
    return nn::DenseNet(in, std::vector<Eigen::Index>(c.model.mlp_layers, w), 6, rng).param_count();
  });
}

Eigen::Index rdl_width(const Config& c, bool md) {
  if (c.model.rdl_width > 0) return c.model.rdl_width;
  const auto in = static_cast<Eigen::Index>(input_dim(c.model.frames, md ? c.thresholds.size() : 0));
  return match_width(hrdl_param_count(c), [&](Eigen::Index w) {
    nn::Rng rng(0);
    return nn::ResidualNet(in, w, c.model.rdl_blocks, 6, rng).param_count();
  });
}

Eigen::Index lstm_hidden(const Config& c) {
  if (c.model.lstm_hidden > 0) return c.model.lstm_hidden;
  return match_width(hrdl_param_count(c), [&](Eigen::Index h) {
    nn::Rng rng(0);
    return nn::LSTMStack(18, c.model.lstm_encoder, h, {h}, 6, rng).param_count();
  });
}

nlohmann::json wrap_estimator(const char* kind, const ThresholdSet& ts, const nlohmann::json& est) {
  return {{"format", "hrdl-model"}, {"version", kFormatVersion}, {"kind", kind},
          {"md_thresholds", to_json(ts)}, {"estimator", est}};
}

/// Any of the trained current estimators, loaded from its model file.
struct Model {
  std::string name;
  ThresholdSet ts;
  std::optional<MlpEstimator> mlp;
  std::optional<RdlEstimator> rdl;
  std::optional<HierarchyStack> stack;
  std::optional<LstmEstimator> lstm;

  std::size_t params() const {
    if (mlp) return mlp->net.param_count();
    if (rdl) return rdl->net.param_count();
    if (lstm) return lstm->net.param_count();
    std::size_t n = 0;
    for (const auto& h : stack->hierarchies) n += h.net.param_count();
    return n;
  }

  std::size_t frames() const {
    if (mlp) return mlp->features.frames;
    if (rdl) return rdl->features.frames;
    if (stack) return stack->frames();
    return 1;
  }

  Matrix predict(const Dataset& d) const {
    if (mlp) return mlp->predict(d, ts);
    if (rdl) return rdl->predict(d, ts);
    if (stack) return stack->predict(d);
    return lstm->predict(d);
  }
};

std::string model_file(const std::string& name) { return "models/" + name + ".json"; }

Model load_model(const Run& run, const std::string& name) {
  const auto text = run.read(model_file(name), "model file (run train --model " + name + ")");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw Error(model_file(name) + ": " + e.what());
  }
  Model m;
  m.name = name;
  if (name == "hrdl-md") {
    m.stack = HierarchyStack::from_json(j);
    m.ts = m.stack->thresholds;
  } else if (name == "lstm") {
    m.lstm = LstmEstimator::from_json(j);
  } else {
    if (j.at("format") != "hrdl-model" || j.at("version") != kFormatVersion)
      throw Error(model_file(name) + ": unsupported model format");
    m.ts = thresholds_from_json(j.at("md_thresholds"));
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "mlp") m.mlp = MlpEstimator::from_json(j.at("estimator"));
    else if (kind == "rdl") m.rdl = RdlEstimator::from_json(j.at("estimator"));
    else throw Error(model_file(name) + ": unknown model kind " + kind);
  }
  return m;
}

void write_train_log(std::ostream& os, const std::vector<nn::TrainLog>& logs) {
  os << "hierarchy,epoch,train_loss,val_loss\n";
  for (std::size_t h = 0; h < logs.size(); ++h)
    for (std::size_t e = 0; e < logs[h].train_loss.size(); ++e) {
      os << h << ',' << e << ',' << fmt(logs[h].train_loss[e]) << ',';
      if (e < logs[h].val_loss.size()) os << fmt(logs[h].val_loss[e]);
      os << '\n';
    }
}

/// Trains one model and writes its model file and training log.
void train_one(Run& run, const std::string& name, const Corpus& corpus) {
  const Config& c = run.cfg();
  const auto& ts = c.thresholds;
  const TrainSettings ff = c.train_settings(c.train.epochs);
  nlohmann::json out;
  std::vector<nn::TrainLog> logs;
  std::cerr << "train " << name << ": " << corpus.train.size() << " frames\n";
  if (name == "mlp") {
    HierarchySpec s;
    s.hidden.assign(c.model.mlp_layers, mlp_width(c));
    s.frames = c.model.mlp_frames;
    auto t = train_mlp(corpus.train, ts, s, ff);
    out = wrap_estimator("mlp", ts, t.model.to_json());
    logs.push_back(std::move(t.log));
  } else if (name == "rdl" || name == "rdl-md") {
    const bool md = name == "rdl-md";
    ResidualSpec s;
    s.width = rdl_width(c, md);
    s.blocks = c.model.rdl_blocks;
    s.frames = c.model.frames;
    s.md_subset = md ? ts.all() : IndexRange{};
    auto t = train_rdl(corpus.train, ts, s, ff);
    out = wrap_estimator("rdl", ts, t.model.to_json());
    logs.push_back(std::move(t.log));
  } else if (name == "hrdl-md") {
    std::vector<HierarchySpec> specs;
    for (const auto& g : ts.groups) {
      HierarchySpec s;
      s.hidden = c.model.hrdl_hidden;
      s.md_subset = g;
      s.frames = c.model.frames;
      specs.push_back(s);
    }
    auto t = train_hrdl(corpus.train, ts, specs, ff);
    out = t.stack.to_json();
    logs = std::move(t.logs);
  } else if (name == "lstm") {
    LstmSpec s;
    s.window = c.model.lstm_window;
    s.encoder = c.model.lstm_encoder;
    s.hidden = lstm_hidden(c);
    s.decoder_hidden = {s.hidden};
    s.stride = c.model.lstm_stride;
    auto t = train_lstm(corpus.train, s, c.train_settings(c.train.lstm_epochs));
    out = t.model.to_json();
    logs.push_back(std::move(t.log));
  } else {
    throw ConfigError({"unknown model " + name});
  }
  run.write(model_file(name), out.dump() + "\n");
  run.write_with("reports/train_" + name + ".csv", [&](std::ostream& os) { write_train_log(os, logs); });
}

// ---------------------------------------------------------------------------
// Commands

int cmd_gen_data(Run& run) {
  for (auto kind : {TrajKind::continuous, TrajKind::hysteresis_rich}) {
    const Dataset d = make_corpus(run.cfg(), kind);
    const std::string rel = kind == TrajKind::continuous ? kDataFiles[0] : kDataFiles[1];
    run.write_with(rel, [&](std::ostream& os) { write_dataset(os, d); });
    std::cerr << rel << ": " << d.trajectory_count() << " trajectories, " << d.size() << " frames\n";
  }
  return 0;
}

int cmd_train(Run& run, std::vector<std::string> models, int jobs) {
  if (models.empty() || (models.size() == 1 && models[0] == "all")) models = kTrainable;
  for (const auto& m : models)
    if (std::find(kTrainable.begin(), kTrainable.end(), m) == kTrainable.end())
      throw ConfigError({"--model " + m + ": expected one of mlp, rdl, rdl-md, hrdl-md, lstm, all"});
  const Corpus corpus = load_corpus(run);
  if (jobs <= 1 || models.size() == 1) {
    for (const auto& m : models) train_one(run, m, corpus);
    return 0;
  }
  // Independent trainings in child processes; each writes only its own files.
  std::size_t next = 0, running = 0;
  int status_all = 0;
  auto reap = [&] {
    int st = 0;
    if (wait(&st) > 0) {
      --running;
      if (!WIFEXITED(st) || WEXITSTATUS(st) != 0) status_all = 1;
    }
  };
  while (next < models.size() || running > 0) {
    if (next < models.size() && running < static_cast<std::size_t>(jobs)) {
      std::cout.flush();
      std::cerr.flush();
      const pid_t pid = fork();
      if (pid < 0) throw Error("fork failed");
      if (pid == 0) {
        int code = 0;
        try {
          train_one(run, models[next], corpus);
        } catch (const std::exception& e) {
          std::cerr << "error: " << e.what() << '\n';
          code = 1;
        }
        std::cerr.flush();
        _exit(code);
      }
      // The child wrote these; record them for the manifest.
      run.note(model_file(models[next]));
      run.note("reports/train_" + models[next] + ".csv");
      ++next;
      ++running;
    } else {
      reap();
    }
  }
  if (status_all != 0) throw Error("a training job failed");
  return 0;
}

double mean_rmse(const Vec6& v) { return mean6(v); }

int cmd_eval(Run& run, std::vector<std::string> models, bool assert_checks) {
  const Config& c = run.cfg();
  if (models.empty() || (models.size() == 1 && models[0] == "all")) models = kEvalOrder;
  std::vector<std::string> order;
  for (const auto& n : kEvalOrder)
    if (std::find(models.begin(), models.end(), n) != models.end()) order.push_back(n);
  for (const auto& m : models)
    if (std::find(kEvalOrder.begin(), kEvalOrder.end(), m) == kEvalOrder.end())
      throw ConfigError({"--model " + m + ": unknown model"});
  const Corpus corpus = load_corpus(run);
  const Dataset& test = corpus.test;

  std::map<std::string, EvalReport> rep;
  std::ostringstream csv, txt;
  csv << "model,long_term_info,params,regime,frames,j1,j2,j3,j4,j5,j6,mean\n";
  txt << "RMSE (%Use) on " << test.size() << " test frames (" << test.trajectory_count()
      << " trajectories)\n\n";
  txt << std::left << std::setw(13) << "model" << std::setw(9) << "regime";
  for (int k = 1; k <= 6; ++k) txt << std::right << std::setw(8) << ("J" + std::to_string(k));
  txt << std::setw(8) << "mean" << '\n';
  std::optional<Model> hrdl;
  for (const auto& name : order) {
    Matrix pred;
    std::size_t params = 0;
    if (name == "model-based") {
      pred = predict_analytic(test, c.robot);
    } else {
      Model m = load_model(run, name);
      pred = m.predict(test);
      params = m.params();
      if (name == "hrdl-md") hrdl = std::move(m);
    }
    const EvalReport r = evaluate(pred, test, c.robot.motion_eps);
    rep[name] = r;
    const bool lt = name == "lstm" || name == "rdl-md" || name == "hrdl-md";
    auto row = [&](const char* regime, std::size_t n, const Vec6& v) {
      csv << name << ',' << (lt ? "yes" : "no") << ',' << params << ',' << regime << ',' << n << ','
          << vec_csv(v) << ',' << fmt(mean_rmse(v)) << '\n';
      txt << std::left << std::setw(13) << name << std::setw(9) << regime << std::right << std::fixed
          << std::setprecision(3);
      for (double x : v) txt << std::setw(8) << x;
      txt << std::setw(8) << mean_rmse(v) << '\n';
      txt.unsetf(std::ios::fixed);
    };
    row("overall", test.size(), r.overall);
    row("static", r.n_static, r.static_frames);
    row("moving", r.n_moving, r.moving_frames);
  }
  run.write("reports/rmse.csv", csv.str());

  std::vector<double> test_cum;
  if (hrdl) {
    std::ostringstream h;
    h << "hierarchies,split,j1,j2,j3,j4,j5,j6,mean\n";
    txt << "\nHRDL-MD cumulative RMSE by hierarchy count\n";
    for (const auto* split : {&corpus.train, &corpus.test}) {
      const auto cum = hrdl->stack->predict_cumulative(*split);
      for (std::size_t j = 0; j < cum.size(); ++j) {
        const Vec6 v = evaluate(cum[j], *split, c.robot.motion_eps).overall;
        h << j + 1 << ',' << split->label << ',' << vec_csv(v) << ',' << fmt(mean_rmse(v)) << '\n';
        txt << "  " << split->label << " " << j + 1 << ": " << mean_rmse(v) << '\n';
        if (split == &corpus.test) test_cum.push_back(mean_rmse(v));
      }
    }
    run.write("reports/hierarchy_rmse.csv", h.str());
  }

  std::vector<std::string> failures;
  if (assert_checks) {
    std::ostringstream a;
    auto check = [&](bool ok, const std::string& what) {
      a << (ok ? "PASS " : "FAIL ") << what << '\n';
      if (!ok) failures.push_back(what);
    };
    for (const char* need : {"mlp", "rdl", "rdl-md", "hrdl-md"})
      if (!rep.count(need)) throw ConfigError({std::string("eval --assert needs model ") + need});
    const double s_rdl = mean_rmse(rep["rdl"].static_frames), s_md = mean_rmse(rep["rdl-md"].static_frames);
    check(s_md <= (1.0 - c.eval.static_gain) * s_rdl,
          "static RMSE rdl-md " + fmt(s_md) + " <= " + fmt(1.0 - c.eval.static_gain) + " x rdl " + fmt(s_rdl));
    const double o_md = mean_rmse(rep["rdl-md"].overall), o_rdl = mean_rmse(rep["rdl"].overall),
                 o_mlp = mean_rmse(rep["mlp"].overall);
    check(o_md <= o_rdl && o_rdl <= o_mlp,
          "overall RMSE rdl-md " + fmt(o_md) + " <= rdl " + fmt(o_rdl) + " <= mlp " + fmt(o_mlp));
    bool mono = true;
    for (std::size_t j = 1; j < test_cum.size(); ++j)
      mono = mono && test_cum[j] <= test_cum[j - 1] * (1.0 + c.eval.hierarchy_tolerance);
    std::string cum_text;
    for (double v : test_cum) cum_text += (cum_text.empty() ? "" : " ") + fmt(v);
    check(mono, "hrdl-md cumulative test RMSE non-increasing: " + cum_text);
    run.write("reports/eval_assert.txt", a.str());
    txt << '\n' << a.str();
  }
  run.write("reports/eval_summary.txt", txt.str());
  std::cout << txt.str();
  if (!failures.empty()) throw CheckFailed(std::to_string(failures.size()) + " evaluation check(s) failed");
  return 0;
}

/// Windows and MD states for the first `n` test frames (cycled).
struct BenchInputs {
  std::vector<std::vector<const JointFrame*>> windows;
  std::vector<MDState> md;
  std::vector<const JointFrame*> frame;
};

BenchInputs bench_inputs(const Dataset& d, const ThresholdSet& ts, std::size_t frames, std::size_t n) {
  BenchInputs b;
  for (std::size_t i = 0; i < d.trajectory_count() && b.md.size() < n; ++i) {
    const auto r = d.trajectory(i);
    MDState md(ts.size());
    for (std::size_t k = r.begin; k < r.end && b.md.size() < n; ++k) {
      md_update_inplace(md, d.frames[k].dq, ts);
      std::vector<const JointFrame*> w;
      window_at(d, k, frames, r.begin, w);
      b.windows.push_back(std::move(w));
      b.md.push_back(md);
      b.frame.push_back(&d.frames[k]);
    }
  }
  return b;
}

int cmd_bench(Run& run) {
  const Config& c = run.cfg();
  const Model hm = load_model(run, "hrdl-md");
  const Corpus corpus = load_corpus(run);
  const std::size_t calls = c.bench.calls;
  const std::size_t pool = std::min<std::size_t>(calls, corpus.test.size());

  std::vector<Model> others;
  std::size_t frames = hm.frames();
  for (const char* n : {"mlp", "rdl", "rdl-md", "lstm"})
    if (fs::exists(run.path(model_file(n)))) {
      others.push_back(load_model(run, n));
      frames = std::max(frames, others.back().frames());
    }
  const BenchInputs in = bench_inputs(corpus.test, hm.ts, frames, pool);
  auto win = [&](std::size_t i, std::size_t f) {
    const auto& w = in.windows[i % pool];
    return std::span<const JointFrame* const>(w).subspan(w.size() - f);
  };

  std::ostringstream csv;
  csv << "mode,median_us,p95_us,p99_us\n";
  auto row = [&](const std::string& mode, const LatencyStats& s) {
    csv << mode << ',' << fmt(s.median_us) << ',' << fmt(s.p95_us) << ',' << fmt(s.p99_us) << '\n';
  };
  std::vector<Vec6> seq_out(calls), par_out(calls);
  for (auto mode : {InferMode::sequential, InferMode::parallel}) {
    StackRunner runner(*hm.stack, mode);
    auto& out = mode == InferMode::sequential ? seq_out : par_out;
    row(std::string("hrdl-md-") + to_string(mode), bench_latency([&](std::size_t i) {
          out[i % calls] = runner.infer(win(i, hm.frames()), in.md[i % pool]);
        }, calls));
  }
  for (const auto& m : others) {
    if (m.lstm) {
      LstmStream stream(*m.lstm);
      row(m.name, bench_latency([&](std::size_t i) { stream.step(*in.frame[i % pool]); }, calls));
    } else if (m.mlp) {
      MlpEstimator::Scratch s;
      Vec6 y;
      row(m.name, bench_latency([&](std::size_t i) { m.mlp->infer(win(i, m.frames()), in.md[i % pool], s, y); },
                                calls));
    } else {
      RdlEstimator::Scratch s;
      Vec6 y;
      row(m.name, bench_latency([&](std::size_t i) { m.rdl->infer(win(i, m.frames()), in.md[i % pool], s, y); },
                                calls));
    }
  }
  run.write("reports/bench.csv", csv.str());
  std::ostringstream info;
  info << "calls " << calls << "\nwarmup " << kWarmupCalls << "\nhardware_threads "
       << std::thread::hardware_concurrency() << "\nhierarchies " << hm.stack->hierarchies.size()
       << "\nparallel_equals_sequential " << (seq_out == par_out ? "yes" : "no") << '\n';
  run.write("reports/bench_info.txt", info.str());
  std::cout << csv.str() << info.str();
  return 0;
}

ComplianceSetup compliance_setup(const Config& c, double duration) {
  ComplianceSetup s;
  s.q0 = c.compliance.q0;
  if (c.compliance.approach_seconds > 0.0) {
    const std::vector<Vec6> via{c.compliance.approach_from, c.compliance.q0};
    s.approach = rest_to_rest_path(via, c.compliance.approach_seconds, c.data.freq);
  }
  s.duration = duration;
  s.freq = c.data.freq;
  s.joint_limits = c.compliance.joint_limits;
  s.vel_limits = c.compliance.vel_limits;
  s.filter_alpha = c.compliance.filter_alpha;
  s.noise = c.compliance.noise;
  s.seed = derive_seed(c.seed, 5);
  return s;
}

TorqueScript pulse_script(const Config& c) {
  if (!c.compliance.torque_script.empty()) {
    std::ifstream is(c.compliance.torque_script);
    if (!is) throw MissingArtifact("missing torque script: " + c.compliance.torque_script);
    return read_torque_script(is);
  }
  const std::size_t j = c.compliance.pulse_joint - 1;
  return TorqueScript::pulse(j, c.compliance.pulse_use * c.robot.torque_per_use[j], c.compliance.pulse_start,
                             c.compliance.pulse_end);
}

int cmd_compliance(Run& run) {
  const Config& c = run.cfg();
  const Model hm = load_model(run, "hrdl-md");
  const InferMode mode = infer_mode_from_string(c.compliance.infer_mode);
  const TorqueScript pulse = pulse_script(c);
  struct Scenario {
    const char* name;
    ComplianceLog log;
  };
  std::vector<Scenario> runs;
  runs.push_back({"idle", compliance_sim(*hm.stack, c.robot, TorqueScript{}, c.deadzone,
                                         compliance_setup(c, c.compliance.idle_seconds), mode)});
  runs.push_back({"pulse", compliance_sim(*hm.stack, c.robot, pulse, c.deadzone,
                                          compliance_setup(c, c.compliance.pulse_seconds), mode)});
  runs.push_back({"analytic-idle", compliance_sim_analytic(c.robot, TorqueScript{}, c.deadzone,
                                                           compliance_setup(c, c.compliance.idle_seconds))});
  std::ostringstream sum;
  sum << "scenario,frames,moving_frames,max_abs_command,last_moving_t,limited_frames,"
         "final_residual_j1,final_residual_j2,final_residual_j3,final_residual_j4,final_residual_j5,"
         "final_residual_j6,final_hysteresis_j1,final_hysteresis_j2,final_hysteresis_j3,"
         "final_hysteresis_j4,final_hysteresis_j5,final_hysteresis_j6\n";
  for (const auto& s : runs) {
    run.write_with(std::string("reports/compliance_") + s.name + ".csv",
                   [&](std::ostream& os) { write_compliance_log(os, s.log); });
    std::size_t moving = 0, limited = 0;
    double max_cmd = 0.0, last_t = -1.0;
    for (std::size_t n = 0; n < s.log.size(); ++n) {
      if (s.log.command[n] != Vec6{}) {
        ++moving;
        last_t = s.log.t[n];
      }
      for (double v : s.log.command[n]) max_cmd = std::max(max_cmd, std::abs(v));
      limited += s.log.limited[n] ? 1 : 0;
    }
    sum << s.name << ',' << s.log.size() << ',' << moving << ',' << fmt(max_cmd) << ',' << fmt(last_t) << ','
        << limited << ',' << vec_csv(s.log.residual.back()) << ','
        << vec_csv(s.log.hysteresis.back()) << '\n';
  }
  run.write("reports/compliance_summary.csv", sum.str());
  std::cout << sum.str();
  return 0;
}

WrenchDataSpec wrench_spec(const Config& c, std::size_t n) {
  WrenchDataSpec s;
  s.n_samples = n;
  s.hold_frames = c.wrench.hold_frames;
  s.move_seconds = c.wrench.move_seconds;
  s.zero_wrench_fraction = c.wrench.zero_fraction;
  s.bounds = {c.wrench.force_bound, c.wrench.moment_bound};
  s.freq = c.data.freq;
  return s;
}

int cmd_wrench(Run& run) {
  const Config& c = run.cfg();
  std::optional<Model> hm;
  if (c.wrench.residual_source == "hrdl-md") hm = load_model(run, "hrdl-md");
  const HierarchyStack* stack = hm ? &*hm->stack : nullptr;
  const WrenchData train = gen_wrench_dataset(c.robot, wrench_spec(c, c.wrench.train_samples),
                                              derive_seed(c.seed, 6), stack);
  const WrenchData test = gen_wrench_dataset(c.robot, wrench_spec(c, c.wrench.test_samples),
                                             derive_seed(c.seed, 7), stack);
  run.write_with("data/wrench_train.csv", [&](std::ostream& os) { write_wrench_data(os, train); });
  run.write_with("data/wrench_test.csv", [&](std::ostream& os) { write_wrench_data(os, test); });

  WrenchTrainSpec spec;
  spec.hidden = c.wrench.hidden;
  spec.train = c.train_settings(c.wrench.epochs);
  std::ostringstream csv;
  csv << "mode,params,force_rmse,moment_rmse\n";
  for (auto mode : {WrenchMode::compound, WrenchMode::single}) {
    std::cerr << "train wrench " << to_string(mode) << '\n';
    const auto t = train_wrench(train, mode, spec);
    run.write("models/wrench_" + std::string(to_string(mode)) + ".json", t.model.to_json().dump() + "\n");
    const WrenchError e = evaluate_wrench(t.model, test);
    csv << to_string(mode) << ',' << t.model.net.param_count() << ',' << fmt(e.force_rmse) << ','
        << fmt(e.moment_rmse) << '\n';
  }
  run.write("reports/wrench_rmse.csv", csv.str());

  // Exact residuals: the learned compound map against the Jacobian oracle.
  const WrenchBounds bounds{c.wrench.force_bound, c.wrench.moment_bound};
  RobotParams quiet = c.robot;
  quiet.noise_sigma = 0.0;
  const WrenchData itrain =
      gen_ideal_wrench_samples(quiet, c.wrench.ideal_train_samples, bounds, {}, derive_seed(c.seed, 8));
  const WrenchData itest =
      gen_ideal_wrench_samples(quiet, c.wrench.ideal_test_samples, bounds, {}, derive_seed(c.seed, 9));
  WrenchTrainSpec ispec = spec;
  ispec.train = c.train_settings(c.wrench.ideal_epochs);
  std::cerr << "train wrench compound on exact residuals\n";
  const auto ideal = train_wrench(itrain, WrenchMode::compound, ispec);
  run.write("models/wrench_ideal.json", ideal.model.to_json().dump() + "\n");
  double fe = 0, fn = 0, me = 0, mn = 0, max_cond = 0;
  for (std::size_t n = 0; n < itest.size(); ++n) {
    double cond = 0;
    const WrenchSample oracle = jacobian_wrench_check(quiet, itest.frames[n].q, itest.ideal_residual[n], &cond);
    const WrenchSample est = estimate_wrench(ideal.model, WrenchMode::compound, itest.frames[n], itest.residual[n]);
    fe += (est.force - oracle.force).squaredNorm();
    fn += oracle.force.squaredNorm();
    me += (est.moment - oracle.moment).squaredNorm();
    mn += oracle.moment.squaredNorm();
    max_cond = std::max(max_cond, cond);
  }
  std::ostringstream o;
  o << "samples,force_rel_error,moment_rel_error,max_condition\n"
    << itest.size() << ',' << fmt(std::sqrt(fe / fn)) << ',' << fmt(std::sqrt(me / mn)) << ',' << fmt(max_cond)
    << '\n';
  run.write("reports/wrench_oracle.csv", o.str());
  std::cout << csv.str() << o.str();
  return 0;
}

Matrix randn(Eigen::Index r, Eigen::Index c, nn::Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

int cmd_gradcheck(Run& run, std::size_t instances) {
  std::ostringstream csv;
  csv << "layer,instance,max_rel_error,max_abs_error,checked,skipped_kinks,below_noise,passed\n";
  std::size_t failed = 0;
  for (std::size_t i = 0; i < instances; ++i) {
    nn::Rng rng(derive_seed(run.cfg().seed, 10, i));
    auto dim = [&](int lo, int hi) { return static_cast<Eigen::Index>(lo + static_cast<int>(rng() % (hi - lo + 1))); };
    const Eigen::Index in = dim(2, 8), out = dim(1, 4), batch = dim(1, 6);
    auto record = [&](const char* layer, const nn::GradCheckReport& r) {
      csv << layer << ',' << i << ',' << fmt(r.max_rel_error) << ',' << fmt(r.max_abs_error) << ',' << r.checked
          << ',' << r.skipped_kinks << ',' << r.below_noise << ',' << (r.passed ? "yes" : "no") << '\n';
      failed += r.passed ? 0 : 1;
    };
    {
      std::vector<Eigen::Index> hidden(static_cast<std::size_t>(dim(1, 3)));
      for (auto& h : hidden) h = dim(2, 12);
      nn::DenseNet net(in, hidden, out, rng);
      const Matrix x = randn(in, batch, rng), y = randn(out, batch, rng);
      record("dense", nn::grad_check(net, x, y));
    }
    {
      nn::ResidualNet net(in, dim(2, 12), static_cast<std::size_t>(dim(1, 3)), out, rng);
      const Matrix x = randn(in, batch, rng), y = randn(out, batch, rng);
      record("residual", nn::grad_check(net, x, y));
    }
    {
      nn::LSTMStack net(in, dim(2, 8), dim(2, 8), {dim(2, 8)}, out, rng);
      std::vector<Matrix> seq;
      const auto steps = dim(1, 6);
      for (Eigen::Index t = 0; t < steps; ++t) seq.push_back(randn(in, batch, rng));
      const Matrix y = randn(out, batch, rng);
      nn::GradCheckOptions opt;
      opt.tolerance = 1e-4;
      record("lstm", nn::grad_check(net, seq, y, opt));
    }
  }
  run.write("reports/gradcheck.csv", csv.str());
  std::cout << "gradcheck: " << 3 * instances - failed << "/" << 3 * instances << " passed\n";
  if (failed) throw CheckFailed(std::to_string(failed) + " gradient check(s) failed");
  return 0;
}

// ---------------------------------------------------------------------------

Config resolve_config(const std::string& path, const std::vector<std::string>& sets) {
  nlohmann::json doc = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw ConfigError({"cannot open config file " + path});
    try {
      doc = nlohmann::json::parse(is, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError({path + ": " + e.what()});
    }
  }
  for (const auto& s : sets) apply_override(doc, s);
  return config_from_json(doc);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint-current estimation experiments: data, training, evaluation and compliance."};
  app.set_version_flag("--version", std::string("hrdl ") + kVersion);
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  std::vector<std::string> models;
  bool assert_checks = false;
  int jobs = 1;
  std::size_t instances = 100;

  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "JSON config file (defaults apply to missing keys)");
    sub->add_option("--set", sets, "Override a config value, e.g. --set train.epochs=5")->allow_extra_args(false);
    return sub;
  };
  auto* gen = common(app.add_subcommand("gen-data", "Generate the continuous and hysteresis-rich datasets"));
  auto* train = common(app.add_subcommand("train", "Train current estimators"));
  train->add_option("-m,--model", models, "mlp, rdl, rdl-md, hrdl-md, lstm or all (default all)");
  train->add_option("-j,--jobs", jobs, "Train independent models in this many processes")->check(CLI::PositiveNumber);
  auto* eval = common(app.add_subcommand("eval", "Evaluate models on the test split"));
  eval->add_option("-m,--model", models, "Models to evaluate (default all)");
  eval->add_flag("--assert", assert_checks, "Exit 4 unless the expected model ordering holds");
  auto* bench = common(app.add_subcommand("bench", "Single-sample inference latency"));
  auto* comp = common(app.add_subcommand("compliance", "Closed-loop joint compliance runs"));
  auto* wrench = common(app.add_subcommand("wrench", "Train and evaluate wrench estimators"));
  auto* grad = common(app.add_subcommand("gradcheck", "Check layer gradients against finite differences"));
  grad->add_option("-n,--instances", instances, "Random instances per layer type");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    const Config cfg = resolve_config(config_path, sets);
    Run run(sub->get_name(), args, cfg);
    std::string manifest = sub->get_name();
    int rc = 0;
    try {
      if (sub == gen) rc = cmd_gen_data(run);
      else if (sub == train) {
        for (const auto& m : models) manifest += "-" + m;
        rc = cmd_train(run, models, jobs);
      } else if (sub == eval) rc = cmd_eval(run, models, assert_checks);
      else if (sub == bench) rc = cmd_bench(run);
      else if (sub == comp) rc = cmd_compliance(run);
      else if (sub == wrench) rc = cmd_wrench(run);
      else if (sub == grad) rc = cmd_gradcheck(run, instances);
    } catch (const CheckFailed& e) {
      run.finish(manifest);
      std::cerr << "check failed: " << e.what() << '\n';
      return 4;
    }
    run.finish(manifest);
    return rc;
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const MissingArtifact& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
