#include <gtest/gtest.h>

#include <complex>
#include <numbers>

#include "hrdl/trajgen.hpp"

using namespace hrdl;

namespace {

TrajSpec continuous_spec(std::uint64_t seed, double duration = 60.0) {
  TrajSpec s;
  s.kind = TrajKind::continuous;
  s.duration = duration;
  s.seed = seed;
  s.joint_limits = {JointLimit{-2.0, 2.0}, {-1.0, 1.2}, {-0.5, 1.5}, {-2.0, 2.0}, {-1.5, 1.5}, {-2.5, 2.5}};
  s.vel_limits = {0.8, 0.6, 0.7, 1.0, 1.0, 1.2};
  return s;
}

TrajSpec rich_spec(std::uint64_t seed, double duration = 120.0) {
  TrajSpec s = continuous_spec(seed, duration);
  s.kind = TrajKind::hysteresis_rich;
  return s;
}

// Butterworth oracle: analog prototype poles, bilinear map, polynomial
// expansion in complex arithmetic, DC gain normalized to one.
std::pair<std::array<double, 4>, std::array<double, 4>> butter_oracle(double fc, double fs) {
  using C = std::complex<double>;
  const double wc = 2.0 * fs * std::tan(std::numbers::pi * fc / fs);
  std::vector<C> zp;
  for (int k = 1; k <= 3; ++k) {
    const C s = wc * std::exp(C(0.0, std::numbers::pi * (2.0 * k + 3.0 - 1.0) / 6.0));
    zp.push_back((1.0 + s / (2.0 * fs)) / (1.0 - s / (2.0 * fs)));
  }
  auto expand = [](const std::vector<C>& roots) {
    std::vector<C> c{1.0};
    for (const C& r : roots) {
      std::vector<C> n(c.size() + 1, 0.0);
      for (std::size_t i = 0; i < c.size(); ++i) {
        n[i] += c[i];
        n[i + 1] -= r * c[i];
      }
      c = n;
    }
    return c;
  };
  const auto a = expand(zp);
  const auto b = expand({C(-1.0), C(-1.0), C(-1.0)});
  C sa = 0, sb = 0;
  for (int i = 0; i < 4; ++i) {
    sa += a[i];
    sb += b[i];
  }
  std::array<double, 4> ba, aa;
  for (int i = 0; i < 4; ++i) {
    aa[i] = a[i].real();
    ba[i] = (b[i] * sa / sb).real();
  }
  return {ba, aa};
}

}  // namespace

TEST(Quintic, MidpointVelocity) {
  QuinticSegment s(0.0, 1.0, 0.0, 0.0, 2.0);
  EXPECT_DOUBLE_EQ(s.vel(1.0), 0.9375);
  EXPECT_DOUBLE_EQ(s.pos(0.0), 0.0);
  EXPECT_DOUBLE_EQ(s.pos(2.0), 1.0);
  EXPECT_NEAR(s.acc(0.0), 0.0, 1e-15);
  EXPECT_NEAR(s.acc(2.0), 0.0, 1e-12);
}

TEST(Quintic, BoundaryVelocities) {
  QuinticSegment s(0.2, -0.4, 0.3, -0.1, 1.5);
  EXPECT_NEAR(s.vel(0.0), 0.3, 1e-14);
  EXPECT_NEAR(s.vel(1.5), -0.1, 1e-12);
  EXPECT_NEAR(s.pos(1.5), -0.4, 1e-12);
}

TEST(ViaPath, IdenticalPointsGiveConstantTrajectory) {
  const Vec6 p{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  const std::vector<Vec6> via{p, p}, vel(2, Vec6{});
  const std::vector<double> dur{1.0};
  const auto frames = sample_via_path(via, vel, dur, 100.0);
  ASSERT_EQ(frames.size(), 101u);
  for (const auto& f : frames) {
    EXPECT_EQ(f.q, p);
    EXPECT_EQ(f.dq, Vec6{});
    EXPECT_EQ(f.ddq, Vec6{});
  }
}

TEST(GenContinuous, RespectsLimitsAndLength) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const TrajSpec spec = continuous_spec(seed);
    const Dataset d = gen_continuous(spec);
    ASSERT_EQ(d.size(), spec.frame_count());
    EXPECT_NO_THROW(d.validate());
    EXPECT_EQ(d.label, "continuous");
    for (const auto& f : d.frames)
      for (std::size_t k = 0; k < kJoints; ++k) {
        ASSERT_LE(std::abs(f.dq[k]), spec.vel_limits[k] + 1e-12);
        ASSERT_GE(f.q[k], spec.joint_limits[k].lo);
        ASSERT_LE(f.q[k], spec.joint_limits[k].hi);
      }
  }
}

TEST(GenContinuous, VelocitiesAreDerivativesOfPositions) {
  const Dataset d = gen_continuous(continuous_spec(3, 20.0));
  double worst = 0.0;
  for (std::size_t n = 1; n + 1 < d.size(); ++n)
    for (std::size_t k = 0; k < kJoints; ++k) {
      const double fd = (d.frames[n + 1].q[k] - d.frames[n - 1].q[k]) * 50.0;
      worst = std::max(worst, std::abs(fd - d.frames[n].dq[k]));
    }
  EXPECT_LT(worst, 0.01);
}

TEST(GenContinuous, StopAtViaStillWithinLimits) {
  TrajSpec spec = continuous_spec(9, 30.0);
  spec.stop_at_via = true;
  const Dataset d = gen_continuous(spec);
  for (const auto& f : d.frames)
    for (std::size_t k = 0; k < kJoints; ++k) ASSERT_LE(std::abs(f.dq[k]), spec.vel_limits[k] + 1e-12);
}

TEST(GenContinuous, DeterministicAndSeedSensitive) {
  EXPECT_EQ(gen_continuous(continuous_spec(4, 10)), gen_continuous(continuous_spec(4, 10)));
  EXPECT_NE(gen_continuous(continuous_spec(4, 10)), gen_continuous(continuous_spec(5, 10)));
}

TEST(GenContinuous, Errors) {
  TrajSpec s = continuous_spec(0);
  s.joint_limits[2] = {1.0, 1.0};
  EXPECT_THROW(gen_continuous(s), Error);
  s = continuous_spec(0);
  s.vel_limits[0] = 0.0;
  EXPECT_THROW(gen_continuous(s), Error);
  EXPECT_THROW(gen_continuous(rich_spec(0)), Error);
}

TEST(GenHysteresisRich, BlocksPausesAndArrival) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const TrajSpec spec = rich_spec(seed, 200.0);
    std::vector<std::size_t> cycles;
    const Dataset d = gen_hysteresis_rich(spec, &cycles);
    ASSERT_EQ(d.size(), spec.frame_count());
    EXPECT_EQ(d.label, "hysteresis-rich");
    ASSERT_GE(cycles.size(), 1u);
    const std::size_t block = 300;
    cycles.push_back(d.size());
    std::size_t pauses = 0;
    for (std::size_t c = 0; c + 1 < cycles.size(); ++c) {
      const std::size_t b = cycles[c], e = cycles[c + 1];
      const bool complete = e < d.size();
      for (std::size_t n = b; n < e; ++n) {
        const auto& f = d.frames[n];
        EXPECT_EQ(f.ddq, Vec6{});
        if (((n - b) / block) % 2 == 1) {
          ++pauses;
          ASSERT_EQ(f.dq, Vec6{}) << "frame " << n;
          ASSERT_EQ(f.q, d.frames[n - 1].q);
        }
      }
      if (!complete) continue;
      // A joint that reaches its final value holds it for the rest of the cycle.
      const Vec6 final_q = d.frames[e - 1].q;
      for (std::size_t k = 0; k < kJoints; ++k) {
        std::size_t first = e - 1;
        while (first > b && d.frames[first - 1].q[k] == final_q[k]) --first;
        for (std::size_t n = first; n < e; ++n) {
          ASSERT_EQ(d.frames[n].q[k], final_q[k]);
          if (n > first) ASSERT_EQ(d.frames[n].dq[k], 0.0);
        }
      }
    }
    EXPECT_GT(pauses, 0u);
    for (const auto& f : d.frames)
      for (std::size_t k = 0; k < kJoints; ++k) {
        ASSERT_LE(std::abs(f.dq[k]), std::min(spec.speed_hi, spec.vel_limits[k]) + 1e-12);
        ASSERT_GE(f.q[k], spec.joint_limits[k].lo);
        ASSERT_LE(f.q[k], spec.joint_limits[k].hi);
      }
  }
}

TEST(GenHysteresisRich, PositionsIntegrateVelocities) {
  const Dataset d = gen_hysteresis_rich(rich_spec(2, 60.0));
  for (std::size_t n = 1; n < d.size(); ++n)
    for (std::size_t k = 0; k < kJoints; ++k)
      ASSERT_NEAR(d.frames[n].q[k] - d.frames[n - 1].q[k], d.frames[n].dq[k] * 0.01, 1e-12);
}

TEST(GenHysteresisRich, Deterministic) {
  EXPECT_EQ(gen_hysteresis_rich(rich_spec(8, 30)), gen_hysteresis_rich(rich_spec(8, 30)));
}

TEST(Butterworth, CoefficientsMatchPoleOracle) {
  for (double fc : {10.0, 1.0, 5.0, 20.0, 45.0}) {
    const auto [b, a] = butter_oracle(fc, 100.0);
    Butterworth3 f(fc, 100.0);
    for (int i = 0; i < 4; ++i) {
      EXPECT_NEAR(f.b()[i], b[i], 1e-12) << "fc " << fc << " b" << i;
      EXPECT_NEAR(f.a()[i], a[i], 1e-12) << "fc " << fc << " a" << i;
    }
  }
}

TEST(Butterworth, DcGainAndImpulse) {
  std::vector<double> c(2000, 3.7);
  EXPECT_NEAR(butterworth3(c, 10.0, 100.0).back(), 3.7, 1e-12);
  std::vector<double> imp(2000, 0.0);
  imp[0] = 1.0;
  const auto h = butterworth3(imp, 10.0, 100.0);
  double s = 0.0;
  for (double v : h) s += v;
  EXPECT_NEAR(s, 1.0, 1e-9);
}

TEST(Butterworth, Linear) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> x(500), y(500), z(500);
  for (std::size_t i = 0; i < 500; ++i) {
    x[i] = n(rng);
    y[i] = n(rng);
    z[i] = 2.5 * x[i] - 0.75 * y[i];
  }
  const auto fx = butterworth3(x, 7.0, 100.0), fy = butterworth3(y, 7.0, 100.0), fz = butterworth3(z, 7.0, 100.0);
  for (std::size_t i = 0; i < 500; ++i) EXPECT_NEAR(fz[i], 2.5 * fx[i] - 0.75 * fy[i], 1e-9);
}

TEST(Butterworth, AttenuatesAtCutoffByThreeDecibels) {
  const double fc = 10.0, fs = 100.0;
  std::vector<double> x(4000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2 * std::numbers::pi * fc * static_cast<double>(i) / fs);
  const auto y = butterworth3(x, fc, fs);
  double peak = 0.0;
  for (std::size_t i = 2000; i < y.size(); ++i) peak = std::max(peak, std::abs(y[i]));
  EXPECT_NEAR(peak, 1.0 / std::sqrt(2.0), 0.01);
}

TEST(Butterworth, RangeErrors) {
  EXPECT_THROW(Butterworth3(0.0, 100.0), Error);
  EXPECT_THROW(Butterworth3(50.0, 100.0), Error);
  EXPECT_THROW(Butterworth3(-1.0, 100.0), Error);
}

TEST(FilterCurrents, PerTrajectoryState) {
  Dataset d;
  std::vector<JointFrame> tr(100);
  for (std::size_t i = 0; i < tr.size(); ++i) {
    tr[i].t = 0.01 * static_cast<double>(i);
    tr[i].current.fill(5.0);
  }
  d.append_trajectory(tr);
  d.append_trajectory(tr);
  filter_currents(d, 10.0);
  for (std::size_t n = 0; n < 100; ++n) EXPECT_EQ(d.frames[n].current, d.frames[n + 100].current);
}

TEST(FiniteDiff, Linear) {
  std::vector<Vec6> q;
  for (int i = 0; i < 50; ++i) {
    Vec6 v;
    v.fill(0.3 * i / 100.0);
    q.push_back(v);
  }
  const auto d = finite_diff_derivatives(q, 100.0);
  for (std::size_t i = 0; i < q.size(); ++i) {
    EXPECT_NEAR(d.dq[i][2], 0.3, 1e-12);
    EXPECT_NEAR(d.ddq[i][2], 0.0, 1e-9);
  }
}

TEST(FiniteDiff, Quadratic) {
  std::vector<Vec6> q;
  for (int i = 0; i < 50; ++i) {
    const double t = i / 100.0;
    Vec6 v;
    v.fill(t * t);
    q.push_back(v);
  }
  const auto d = finite_diff_derivatives(q, 100.0);
  for (std::size_t i = 1; i + 1 < q.size(); ++i) EXPECT_NEAR(d.ddq[i][0], 2.0, 1e-8);
  for (std::size_t i = 0; i < q.size(); ++i) EXPECT_NEAR(d.dq[i][0], 2.0 * i / 100.0, 1e-10);
}

// Central differences err by about h^2/6 |q'''| inside and h^2/3 |q'''| at
// the one-sided ends.
TEST(FiniteDiff, SineWithinTaylorBound) {
  const double h = 0.01, w = 2 * std::numbers::pi;
  for (double amp : {1.0, 0.1}) {
    std::vector<Vec6> q;
    for (int i = 0; i <= 200; ++i) {
      Vec6 v;
      v.fill(amp * std::sin(w * i * h));
      q.push_back(v);
    }
    const auto d = finite_diff_derivatives(q, 100.0);
    const double q3 = amp * w * w * w;
    double inner = 0.0, ends = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double err = std::abs(d.dq[i][0] - amp * w * std::cos(w * static_cast<double>(i) * h));
      (i == 0 || i + 1 == q.size() ? ends : inner) = std::max(i == 0 || i + 1 == q.size() ? ends : inner, err);
    }
    EXPECT_LE(inner, h * h / 6 * q3 * 1.0001);
    EXPECT_LE(ends, h * h / 3 * q3 * 1.01);
    if (amp == 0.1) EXPECT_LT(std::max(inner, ends), 2e-3);
  }
}

TEST(FiniteDiff, TooShort) {
  std::vector<Vec6> q(2);
  EXPECT_THROW(finite_diff_derivatives(q, 100.0), Error);
}
