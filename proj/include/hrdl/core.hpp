#pragma once

// Shared domain types: joint frames, datasets, the CSV dataset format,
// trajectory-level splitting and per-joint error metrics.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hrdl {

inline constexpr std::size_t kJoints = 6;

using Vec6 = std::array<double, kJoints>;

inline Vec6 zeros6() { return Vec6{}; }

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline bool all_finite(const Vec6& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// One sample of the robot at the system frequency. `current` is in %Use,
/// the percentage of the motor's loading capacity.
struct JointFrame {
  double t = 0.0;
  Vec6 q{};
  Vec6 dq{};
  Vec6 ddq{};
  Vec6 current{};

  bool finite() const {
    return std::isfinite(t) && all_finite(q) && all_finite(dq) && all_finite(ddq) &&
           all_finite(current);
  }

  friend bool operator==(const JointFrame&, const JointFrame&) = default;
};

/// Half-open index range [begin, end).
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end > begin ? end - begin : 0; }
  bool empty() const { return size() == 0; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

/// An ordered set of frames partitioned into trajectories.
/// `trajectory_boundaries` holds the first frame index of every trajectory;
/// the first entry is always 0 for a non-empty dataset.
struct Dataset {
  std::vector<JointFrame> frames;
  double freq = 100.0;
  std::vector<std::size_t> trajectory_boundaries;
  std::string label;

  std::size_t size() const { return frames.size(); }
  bool empty() const { return frames.empty(); }
  std::size_t trajectory_count() const { return trajectory_boundaries.size(); }

  IndexRange trajectory(std::size_t i) const {
    const std::size_t b = trajectory_boundaries.at(i);
    const std::size_t e =
        i + 1 < trajectory_boundaries.size() ? trajectory_boundaries[i + 1] : frames.size();
    return {b, e};
  }

  /// Index of the trajectory containing frame `n`.
  std::size_t trajectory_of(std::size_t n) const {
    auto it = std::upper_bound(trajectory_boundaries.begin(), trajectory_boundaries.end(), n);
    return static_cast<std::size_t>(it - trajectory_boundaries.begin()) - 1;
  }

  /// Appends all frames of `traj` as a new trajectory.
  void append_trajectory(std::span<const JointFrame> traj) {
    if (traj.empty()) return;
    trajectory_boundaries.push_back(frames.size());
    frames.insert(frames.end(), traj.begin(), traj.end());
  }

  void append(const Dataset& other) {
    for (std::size_t i = 0; i < other.trajectory_count(); ++i) {
      const auto r = other.trajectory(i);
      append_trajectory(std::span(other.frames).subspan(r.begin, r.size()));
    }
  }

  /// Throws hrdl::Error describing the first violated invariant.
  void validate() const {
    if (!(freq > 0.0) || !std::isfinite(freq)) throw Error("dataset frequency must be positive");
    if (frames.empty()) {
      if (!trajectory_boundaries.empty()) throw Error("empty dataset with trajectory boundaries");
      return;
    }
    if (trajectory_boundaries.empty() || trajectory_boundaries.front() != 0)
      throw Error("trajectory boundaries must start at frame 0");
    for (std::size_t i = 1; i < trajectory_boundaries.size(); ++i)
      if (trajectory_boundaries[i] <= trajectory_boundaries[i - 1])
        throw Error("trajectory boundaries must be strictly increasing");
    if (trajectory_boundaries.back() >= frames.size())
      throw Error("trajectory boundary out of range");
    const double step = 1.0 / freq;
    for (std::size_t i = 0; i < trajectory_count(); ++i) {
      const auto r = trajectory(i);
      for (std::size_t n = r.begin; n < r.end; ++n) {
        if (!frames[n].finite()) throw Error("non-finite value in frame " + std::to_string(n));
        if (n == r.begin) continue;
        const double dt = frames[n].t - frames[n - 1].t;
        if (!(dt > 0.0)) throw Error("time not strictly increasing at frame " + std::to_string(n));
        if (std::abs(dt - step) > 1e-6 * std::max(1.0, std::abs(frames[n].t)))
          throw Error("time step differs from 1/freq at frame " + std::to_string(n));
      }
    }
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// ---------------------------------------------------------------------------
// CSV dataset format
//
//   # label: <text>              optional metadata lines before the header
//   # freq: <Hz>
//   t,q1,...,q6,dq1,...,dq6,ddq1,...,ddq6,i1,...,i6
//   <rows>
//                                one blank line separates trajectories
//
// Values are written with 9 significant digits.

inline const std::string& dataset_header() {
  static const std::string header = [] {
    std::string h = "t";
    for (const char* p : {"q", "dq", "ddq", "i"})
      for (std::size_t k = 1; k <= kJoints; ++k) h += "," + std::string(p) + std::to_string(k);
    return h;
  }();
  return header;
}

inline std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

/// Rounds a value through its 9-significant-digit text form.
inline double quantize_value(double v) { return std::strtod(format_value(v).c_str(), nullptr); }

inline Dataset quantized(Dataset d) {
  for (auto& f : d.frames) {
    f.t = quantize_value(f.t);
    for (auto* v : {&f.q, &f.dq, &f.ddq, &f.current})
      for (auto& x : *v) x = quantize_value(x);
  }
  return d;
}

inline void write_dataset(std::ostream& os, const Dataset& d) {
  d.validate();
  if (!d.label.empty()) os << "# label: " << d.label << '\n';
  os << "# freq: " << format_value(d.freq) << '\n';
  os << dataset_header() << '\n';
  std::string line;
  for (std::size_t i = 0; i < d.trajectory_count(); ++i) {
    if (i > 0) os << '\n';
    const auto r = d.trajectory(i);
    for (std::size_t n = r.begin; n < r.end; ++n) {
      const auto& f = d.frames[n];
      line = format_value(f.t);
      for (const auto* v : {&f.q, &f.dq, &f.ddq, &f.current})
        for (double x : *v) {
          line += ',';
          line += format_value(x);
        }
      os << line << '\n';
    }
  }
}

inline void write_dataset(const std::string& path, const Dataset& d) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open for writing: " + path);
  write_dataset(os, d);
  if (!os) throw Error("write failed: " + path);
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  if (!s.empty() && s.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, std::size_t line, const std::string& col) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || !std::isfinite(v))
    throw ParseError(line, "invalid number '" + s + "' in column " + col);
  return v;
}

inline std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && s[i] == ' ') ++i;
  return s.substr(i);
}

}  // namespace detail

inline Dataset read_dataset(std::istream& is) {
  Dataset d;
  d.freq = 0.0;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  const auto expected = detail::split_csv(dataset_header());
  bool new_traj = true;

  while (std::getline(is, line)) {
    ++lineno;
    line = detail::trim(line);
    if (!have_header) {
      if (line.empty()) continue;
      if (line.rfind('#', 0) == 0) {
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        const std::string key = detail::trim(line.substr(1, colon - 1));
        const std::string val = detail::trim(line.substr(colon + 1));
        if (key == "label") d.label = val;
        else if (key == "freq") d.freq = detail::parse_double(val, lineno, "freq");
        continue;
      }
      const auto cols = detail::split_csv(line);
      if (cols != expected) {
        std::string missing;
        for (const auto& c : expected)
          if (std::find(cols.begin(), cols.end(), c) == cols.end())
            missing += (missing.empty() ? "" : ",") + c;
        throw ParseError(lineno, "malformed header" +
                                     (missing.empty() ? std::string(" (column order)")
                                                      : "; missing columns: " + missing));
      }
      have_header = true;
      continue;
    }
    if (line.empty()) {
      new_traj = true;
      continue;
    }
    const auto cols = detail::split_csv(line);
    if (cols.size() != expected.size())
      throw ParseError(lineno, "ragged row: expected " + std::to_string(expected.size()) +
                                   " values, got " + std::to_string(cols.size()));
    JointFrame f;
    f.t = detail::parse_double(cols[0], lineno, expected[0]);
    std::size_t c = 1;
    for (auto* v : {&f.q, &f.dq, &f.ddq, &f.current})
      for (auto& x : *v) {
        x = detail::parse_double(cols[c], lineno, expected[c]);
        ++c;
      }
    if (new_traj) {
      d.trajectory_boundaries.push_back(d.frames.size());
      new_traj = false;
    } else if (!(f.t > d.frames.back().t)) {
      throw ParseError(lineno, "non-monotonic time " + cols[0]);
    }
    d.frames.push_back(f);
  }
  if (!have_header) throw ParseError(lineno, "missing header");
  if (d.freq == 0.0) {
    // Infer from the first time step when no metadata line is present.
    if (d.frames.size() >= 2 && d.trajectory(0).size() >= 2)
      d.freq = std::round(1.0 / (d.frames[1].t - d.frames[0].t) * 1e6) / 1e6;
    else
      d.freq = 100.0;
  }
  return d;
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open dataset: " + path);
  return read_dataset(is);
}

// ---------------------------------------------------------------------------

/// Splits whole trajectories into train/test sides. The number of test
/// trajectories is round(test_fraction * n), clamped to [1, n-1]. Both sides
/// keep the original trajectory order.
inline std::pair<Dataset, Dataset> split_by_trajectory(const Dataset& d, double test_fraction,
                                                       std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw Error("test_fraction must lie in (0, 1)");
  const std::size_t n = d.trajectory_count();
  if (n < 2) throw Error("split requires at least 2 trajectories");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(order[i], order[j]);
  }
  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
  std::vector<bool> is_test(n, false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;

  Dataset train, test;
  train.freq = test.freq = d.freq;
  train.label = test.label = d.label;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = d.trajectory(i);
    (is_test[i] ? test : train).append_trajectory(std::span(d.frames).subspan(r.begin, r.size()));
  }
  return {std::move(train), std::move(test)};
}

inline Vec6 rmse_per_joint(std::span<const Vec6> pred, std::span<const Vec6> truth) {
  if (pred.size() != truth.size()) throw Error("rmse: length mismatch");
  if (pred.empty()) throw Error("rmse: empty sequence");
  Vec6 acc{};
  for (std::size_t n = 0; n < pred.size(); ++n)
    for (std::size_t k = 0; k < kJoints; ++k) {
      const double e = pred[n][k] - truth[n][k];
      acc[k] += e * e;
    }
  for (auto& a : acc) a = std::sqrt(a / static_cast<double>(pred.size()));
  return acc;
}

inline std::vector<Vec6> currents_of(const Dataset& d) {
  std::vector<Vec6> out;
  out.reserve(d.size());
  for (const auto& f : d.frames) out.push_back(f.current);
  return out;
}

inline double mean6(const Vec6& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(kJoints);
}

}  // namespace hrdl
