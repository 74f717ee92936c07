#include <gtest/gtest.h>

#include <random>

#include "hrdl/features.hpp"
#include "hrdl/mssim.hpp"
#include "test_util.hpp"

using namespace hrdl;

namespace {

ThresholdSet one_threshold(double t) {
  const double v[] = {t};
  return ThresholdSet::broadcast(v, {{0, 1}});
}

Vec6 on_joint(std::size_t k, double v) {
  Vec6 out{};
  out[k] = v;
  return out;
}

Dataset random_motion(std::size_t n_traj, std::size_t len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.01);
  Dataset d;
  for (std::size_t i = 0; i < n_traj; ++i) {
    auto tr = test::static_frames(len, Vec6{});
    for (auto& f : tr)
      for (std::size_t k = 0; k < kJoints; ++k) {
        f.q[k] = n(rng);
        f.dq[k] = n(rng);
        f.ddq[k] = n(rng);
      }
    d.append_trajectory(tr);
  }
  return d;
}

}  // namespace

TEST(Thresholds, DefaultTableShape) {
  const ThresholdSet ts = default_thresholds();
  ASSERT_EQ(ts.size(), 15u);
  ASSERT_EQ(ts.groups.size(), 3u);
  EXPECT_EQ(ts.thresholds[0][3], 0.003);
  EXPECT_EQ(ts.groups[1].begin, 5u);
  EXPECT_EQ(ts.groups[2].end, 15u);
}

TEST(Thresholds, Validation) {
  const double bad[] = {0.0};
  EXPECT_THROW(ThresholdSet::broadcast(bad, {{0, 1}}), Error);
  const double v[] = {0.1, 0.2, 0.3};
  EXPECT_THROW(ThresholdSet::broadcast(v, {{0, 2}, {1, 3}}), Error);
  EXPECT_THROW(ThresholdSet::broadcast(v, {{0, 4}}), Error);
  EXPECT_THROW(ThresholdSet::broadcast(v, {{1, 3}}), Error);
  EXPECT_NO_THROW(ThresholdSet::broadcast(v, {{0, 1}, {1, 3}}));
}

TEST(MdUpdate, Examples) {
  const ThresholdSet ts = one_threshold(0.003);
  MDState md(1);
  md = md_update(md, on_joint(2, 0.002), ts);
  EXPECT_EQ(md.values[0][2], 0.0);
  EXPECT_FALSE(md.initialized[0][2]);
  md = md_update(md, on_joint(2, 0.010), ts);
  EXPECT_EQ(md.values[0][2], 0.010);
  EXPECT_TRUE(md.initialized[0][2]);

  MDState m2(1);
  m2 = md_update(m2, on_joint(0, 0.02), ts);
  m2 = md_update(m2, on_joint(0, 0.001), ts);
  EXPECT_EQ(m2.values[0][0], 0.02);
}

TEST(MdUpdate, ThresholdIsInclusive) {
  const ThresholdSet ts = one_threshold(0.25);
  const MDState md = md_update(MDState(1), on_joint(1, -0.25), ts);
  EXPECT_EQ(md.values[0][1], -0.25);
}

TEST(MdUpdate, PerJointOverride) {
  ThresholdSet ts = one_threshold(0.01);
  ts.thresholds[0][4] = 0.5;
  Vec6 dq;
  dq.fill(0.1);
  const MDState md = md_update(MDState(1), dq, ts);
  EXPECT_TRUE(md.initialized[0][3]);
  EXPECT_FALSE(md.initialized[0][4]);
}

TEST(MdUpdate, SizeMismatch) { EXPECT_THROW(md_update(MDState(2), Vec6{}, one_threshold(0.1)), Error); }

TEST(MdProperties, SubThresholdIdempotentAndNeverDeinitialized) {
  const ThresholdSet ts = default_thresholds();
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 0.01);
  MDState md(ts.size());
  for (int step = 0; step < 2000; ++step) {
    Vec6 dq;
    for (auto& v : dq) v = n(rng);
    const MDState next = md_update(md, dq, ts);
    for (std::size_t i = 0; i < ts.size(); ++i)
      for (std::size_t k = 0; k < kJoints; ++k) {
        if (md.initialized[i][k]) ASSERT_TRUE(next.initialized[i][k]);
        if (next.initialized[i][k]) ASSERT_GE(std::abs(next.values[i][k]), ts.thresholds[i][k]);
        else ASSERT_EQ(next.values[i][k], 0.0);
      }
    // A sub-threshold sample leaves the state alone.
    Vec6 small;
    small.fill(0.0009);
    ASSERT_EQ(md_update(next, small, ts), next);
    md = next;
  }
}

TEST(MdTrace, StaticTrajectoryStaysUninitialized) {
  Dataset d;
  d.append_trajectory(test::static_frames(50, Vec6{0.1, 0.2, 0.3, 0.4, 0.5, 0.6}));
  const auto tr = md_trace(d, default_thresholds());
  ASSERT_EQ(tr.size(), 50u);
  for (const auto& md : tr) EXPECT_EQ(md, MDState(15));
}

TEST(MdTrace, DecelerationRetainsLastSuprathresholdSample) {
  const double t = 0.012, fs = 100.0, a = -0.05;  // rad/s^2
  std::vector<JointFrame> fr;
  for (int n = 0; n < 200; ++n) {
    JointFrame f;
    f.t = n / fs;
    f.dq[0] = std::max(0.0, 0.05 + a * n / fs);
    f.ddq[0] = a;
    fr.push_back(f);
  }
  Dataset d;
  d.append_trajectory(fr);
  const auto tr = md_trace(d, one_threshold(t));
  const double v = tr.back().values[0][0];
  EXPECT_GE(v, t);
  EXPECT_LE(v, t + std::abs(a) / fs + 1e-12);
}

TEST(MdTrace, CausalAndRestartsPerTrajectory) {
  Dataset d = random_motion(2, 40, 3);
  const ThresholdSet ts = default_thresholds();
  const auto full = md_trace(d, ts);
  Dataset tail = d;
  for (std::size_t n = 25; n < 40; ++n) tail.frames[n].dq.fill(1.0);
  const auto alt = md_trace(tail, ts);
  for (std::size_t n = 0; n < 25; ++n) EXPECT_EQ(full[n], alt[n]);
  // Second trajectory starts from a fresh state.
  Dataset second;
  second.append_trajectory(std::vector<JointFrame>(d.frames.begin() + 40, d.frames.end()));
  const auto lone = md_trace(second, ts);
  for (std::size_t n = 0; n < 40; ++n) EXPECT_EQ(full[40 + n], lone[n]);
}

TEST(InputVector, Lengths) {
  const ThresholdSet ts = default_thresholds();
  std::vector<JointFrame> five(5), one(1);
  EXPECT_EQ(build_input_vector(five, MDState(15), ts.groups[0]).size(), 120u);
  EXPECT_EQ(build_input_vector(one, MDState(15), IndexRange{}).size(), 18u);
  for (std::size_t M = 1; M <= 12; ++M)
    for (std::size_t s = 0; s <= 15; s += 5) {
      std::vector<JointFrame> fr(M);
      EXPECT_EQ(build_input_vector(fr, MDState(15), IndexRange{0, s}).size(), 18 * M + 6 * s);
    }
  EXPECT_THROW(build_input_vector(std::vector<JointFrame>{}, MDState(15), {}), Error);
  EXPECT_THROW(build_input_vector(one, MDState(3), IndexRange{0, 5}), Error);
}

TEST(InputVector, OrderingAndIdenticalBlocks) {
  JointFrame f;
  for (std::size_t k = 0; k < kJoints; ++k) {
    f.q[k] = 1.0 + k;
    f.dq[k] = 10.0 + k;
    f.ddq[k] = 100.0 + k;
  }
  MDState md(3);
  md.values[1] = Vec6{-1, -2, -3, -4, -5, -6};
  md.values[2] = Vec6{7, 8, 9, 10, 11, 12};
  const std::vector<JointFrame> fr(3, f);
  const auto x = build_input_vector(fr, md, IndexRange{1, 3});
  ASSERT_EQ(x.size(), 18u * 3 + 12);
  for (std::size_t m = 0; m < 3; ++m)
    for (std::size_t j = 0; j < 18; ++j) EXPECT_EQ(x[m * 18 + j], x[j]);
  EXPECT_EQ(x[0], 1.0);
  EXPECT_EQ(x[6], 10.0);
  EXPECT_EQ(x[12], 100.0);
  EXPECT_EQ(x[54], -1.0);
  EXPECT_EQ(x[60], 7.0);
  EXPECT_EQ(build_input_vector(fr, md, IndexRange{1, 3}), x);
}

TEST(FeatureMatrix, MatchesPerFrameVectorsWithLeftPadding) {
  const Dataset d = random_motion(2, 12, 8);
  const ThresholdSet ts = default_thresholds();
  const FeatureSpec spec{5, ts.groups[1]};
  const Eigen::MatrixXd X = build_feature_matrix(d, ts, spec);
  ASSERT_EQ(X.rows(), 120);
  ASSERT_EQ(X.cols(), 24);
  const auto trace = md_trace(d, ts);
  for (std::size_t n = 0; n < d.size(); ++n) {
    const std::size_t b = n < 12 ? 0 : 12;
    std::vector<JointFrame> win;
    for (int m = 4; m >= 0; --m) {
      const long idx = static_cast<long>(n) - m;
      win.push_back(d.frames[static_cast<std::size_t>(std::max(idx, static_cast<long>(b)))]);
    }
    const auto x = build_input_vector(win, trace[n], spec.md_subset);
    for (std::size_t j = 0; j < x.size(); ++j)
      ASSERT_EQ(X(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(n)), x[j]);
  }
}

TEST(MsEquivalents, Examples) {
  const ThresholdSet ts = one_threshold(0.003);
  MDState md(1);
  const Vec6 q{0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
  auto e = md_ms_equivalents(md, q, ts, 100.0);
  EXPECT_EQ(e[0][0].zeta, 0.5);
  EXPECT_EQ(e[0][0].delta_signed, 0.0);
  md = md_update(md, on_joint(1, -0.01), ts);
  md = md_update(md, on_joint(2, 0.01), ts);
  e = md_ms_equivalents(md, q, ts, 100.0);
  EXPECT_DOUBLE_EQ(e[0][1].delta_signed, -3e-5);
  EXPECT_DOUBLE_EQ(e[0][1].zeta, 0.5 + 3e-5);
  EXPECT_DOUBLE_EQ(e[0][2].zeta, 0.5 - 3e-5);
  EXPECT_THROW(md_ms_equivalents(md, q, ts, 0.0), Error);
}

// On a monotone ramp that saturates an element of width t/f, the element's
// position is exactly the zeta implied by the discriminator.
TEST(MsEquivalents, MatchSaturatedElementOnRamp) {
  const double t = 0.009, fs = 100.0, speed = 0.05;
  const double delta = t / fs;
  const ThresholdSet ts = one_threshold(t);
  MSBank bank;
  bank.elements.push_back({1.0 / delta, 1.0, 0.0});
  MDState md(1);
  double q = 0.0;
  for (int n = 0; n < 100; ++n) {
    q += speed / fs;
    ms_step(bank, q);
    md = md_update(md, on_joint(0, speed), ts);
  }
  Vec6 qv{};
  qv[0] = q;
  const auto e = md_ms_equivalents(md, qv, ts, fs);
  EXPECT_NEAR(bank.elements[0].zeta, e[0][0].zeta, 1e-12);
}

TEST(Standardizer, FitApplyInvert) {
  Eigen::MatrixXd X(2, 4);
  X << 1, 2, 3, 4, 5, 5, 5, 5;
  const Standardizer s = Standardizer::fit(X);
  EXPECT_DOUBLE_EQ(s.mean(0), 2.5);
  EXPECT_DOUBLE_EQ(s.scale(1), 1.0);  // constant row
  Eigen::MatrixXd Y = X;
  s.apply(Y);
  EXPECT_NEAR(Y.row(0).mean(), 0.0, 1e-15);
  EXPECT_NEAR(Y.row(0).squaredNorm() / 4.0, 1.0, 1e-12);
  s.invert(Y);
  EXPECT_TRUE(Y.isApprox(X, 1e-15));
}
