#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "hrdl/core.hpp"
#include "test_util.hpp"

using namespace hrdl;

namespace {

JointFrame frame_at(double t, double base) {
  JointFrame f;
  f.t = t;
  for (std::size_t k = 0; k < kJoints; ++k) {
    f.q[k] = base + 0.1 * static_cast<double>(k);
    f.dq[k] = -base * 0.5 + static_cast<double>(k);
    f.ddq[k] = base * 1e-3;
    f.current[k] = 12.5 * base - static_cast<double>(k);
  }
  return f;
}

Dataset make_dataset(std::size_t n_traj, std::size_t len) {
  Dataset d;
  d.label = "mixed";
  for (std::size_t i = 0; i < n_traj; ++i) {
    std::vector<JointFrame> tr;
    for (std::size_t n = 0; n < len; ++n)
      tr.push_back(frame_at(static_cast<double>(n) * 0.01, static_cast<double>(i * len + n) * 1e-3));
    d.append_trajectory(tr);
  }
  return d;
}

}  // namespace

TEST(DatasetIo, TwoFrameRoundTrip) {
  const Dataset d = quantized(make_dataset(1, 2));
  std::stringstream ss;
  write_dataset(ss, d);
  const Dataset back = read_dataset(ss);
  EXPECT_EQ(back, d);
}

TEST(DatasetIo, HeaderIsExact) {
  EXPECT_EQ(dataset_header(),
            "t,q1,q2,q3,q4,q5,q6,dq1,dq2,dq3,dq4,dq5,dq6,ddq1,ddq2,ddq3,ddq4,ddq5,ddq6,"
            "i1,i2,i3,i4,i5,i6");
}

TEST(DatasetIo, LargeRoundTripKeepsCurrentChecksum) {
  Dataset d = make_dataset(4, 2500);
  test::fill_pseudo_random(d, 99);
  d = quantized(d);
  std::stringstream ss;
  write_dataset(ss, d);
  const Dataset back = read_dataset(ss);
  ASSERT_EQ(back.size(), 10000u);
  double a = 0.0, b = 0.0;
  for (std::size_t n = 0; n < d.size(); ++n)
    for (std::size_t k = 0; k < kJoints; ++k) {
      a += d.frames[n].current[k] * static_cast<double>(n + k);
      b += back.frames[n].current[k] * static_cast<double>(n + k);
    }
  EXPECT_EQ(a, b);
  EXPECT_EQ(back, d);
}

TEST(DatasetIo, QuantizationIsIdempotent) {
  Dataset d = make_dataset(2, 50);
  test::fill_pseudo_random(d, 3);
  const Dataset q1 = quantized(d);
  EXPECT_EQ(quantized(q1), q1);
}

TEST(DatasetIo, MissingColumnsAreNamed) {
  std::string header = "t,q1,q2,q3,q4,q5,q6,dq1,dq2,dq3,dq4,dq5,dq6,ddq1,ddq2,ddq3,ddq4,ddq5,ddq6,i1";
  std::stringstream ss(header + "\n");
  try {
    read_dataset(ss);
    FAIL() << "expected parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 1u);
    const std::string msg = e.what();
    for (const char* c : {"i2", "i3", "i4", "i5", "i6"}) EXPECT_NE(msg.find(c), std::string::npos) << msg;
  }
}

TEST(DatasetIo, RaggedRowReportsLine) {
  std::stringstream ss;
  ss << dataset_header() << "\n";
  ss << "0";
  for (int i = 0; i < 24; ++i) ss << ",0";
  ss << "\n0.01,1,2\n";
  try {
    read_dataset(ss);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("ragged"), std::string::npos);
  }
}

TEST(DatasetIo, NonMonotonicTimeRejected) {
  std::stringstream ss;
  ss << dataset_header() << "\n";
  for (double t : {0.0, 0.01, 0.005}) {
    ss << t;
    for (int i = 0; i < 24; ++i) ss << ",0";
    ss << "\n";
  }
  try {
    read_dataset(ss);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
  }
}

TEST(DatasetIo, BlankLineStartsTrajectory) {
  const Dataset d = quantized(make_dataset(3, 4));
  std::stringstream ss;
  write_dataset(ss, d);
  const Dataset back = read_dataset(ss);
  EXPECT_EQ(back.trajectory_boundaries, (std::vector<std::size_t>{0, 4, 8}));
  EXPECT_EQ(back.label, "mixed");
  EXPECT_DOUBLE_EQ(back.freq, 100.0);
}

TEST(Dataset, ValidateCatchesBadStep) {
  Dataset d = make_dataset(1, 5);
  EXPECT_NO_THROW(d.validate());
  d.frames[3].t += 0.003;
  EXPECT_THROW(d.validate(), Error);
}

TEST(Split, CountsTrajectories) {
  const Dataset d = make_dataset(10, 20);
  const auto [train, test] = split_by_trajectory(d, 0.3, 7);
  EXPECT_EQ(train.trajectory_count(), 7u);
  EXPECT_EQ(test.trajectory_count(), 3u);
}

TEST(Split, DeterministicAndLossless) {
  const Dataset d = make_dataset(10, 20);
  const auto a = split_by_trajectory(d, 0.3, 7);
  const auto b = split_by_trajectory(d, 0.3, 7);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  // Union of both sides is the input, trajectory by trajectory.
  std::vector<double> starts;
  for (const auto* side : {&a.first, &a.second})
    for (std::size_t i = 0; i < side->trajectory_count(); ++i) {
      const auto r = side->trajectory(i);
      EXPECT_EQ(r.size(), 20u);
      starts.push_back(side->frames[r.begin].q[0]);
    }
  std::vector<double> expect;
  for (std::size_t i = 0; i < d.trajectory_count(); ++i) expect.push_back(d.frames[d.trajectory(i).begin].q[0]);
  std::sort(starts.begin(), starts.end());
  EXPECT_EQ(starts, expect);
}

TEST(Split, HalfOfFourEqualTrajectories) {
  const Dataset d = make_dataset(4, 25);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto [train, test] = split_by_trajectory(d, 0.5, seed);
    EXPECT_EQ(train.size(), 50u);
    EXPECT_EQ(test.size(), 50u);
  }
}

TEST(Split, ClampsToAtLeastOneEachSide) {
  const Dataset d = make_dataset(3, 5);
  EXPECT_EQ(split_by_trajectory(d, 0.01, 1).second.trajectory_count(), 1u);
  EXPECT_EQ(split_by_trajectory(d, 0.99, 1).first.trajectory_count(), 1u);
}

TEST(Split, Errors) {
  EXPECT_THROW(split_by_trajectory(make_dataset(1, 10), 0.3, 0), Error);
  EXPECT_THROW(split_by_trajectory(Dataset{}, 0.3, 0), Error);
  EXPECT_THROW(split_by_trajectory(make_dataset(3, 10), 0.0, 0), Error);
  EXPECT_THROW(split_by_trajectory(make_dataset(3, 10), 1.0, 0), Error);
}

TEST(Rmse, Examples) {
  std::vector<Vec6> a(3, Vec6{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(rmse_per_joint(a, a), Vec6{});
  auto b = a;
  for (auto& v : b) v[0] += 2.0;
  const Vec6 r = rmse_per_joint(b, a);
  EXPECT_DOUBLE_EQ(r[0], 2.0);
  for (std::size_t k = 1; k < kJoints; ++k) EXPECT_EQ(r[k], 0.0);

  std::vector<Vec6> p{Vec6{3}, Vec6{-3}}, t{Vec6{}, Vec6{}};
  EXPECT_DOUBLE_EQ(rmse_per_joint(p, t)[0], 3.0);
}

TEST(Rmse, Errors) {
  std::vector<Vec6> a(2), b(3);
  EXPECT_THROW(rmse_per_joint(a, b), Error);
  EXPECT_THROW(rmse_per_joint(std::vector<Vec6>{}, std::vector<Vec6>{}), Error);
}

TEST(Rmse, PermutationInvariantAndNonNegative) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Vec6> p(17), t(17);
    for (auto* v : {&p, &t})
      for (auto& x : *v)
        for (auto& e : x) e = n(rng);
    const Vec6 r = rmse_per_joint(p, t);
    std::vector<std::size_t> perm(17);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Vec6> pp, tt;
    for (auto i : perm) {
      pp.push_back(p[i]);
      tt.push_back(t[i]);
    }
    const Vec6 r2 = rmse_per_joint(pp, tt);
    for (std::size_t k = 0; k < kJoints; ++k) {
      EXPECT_GT(r[k], 0.0);
      EXPECT_NEAR(r[k], r2[k], 1e-12);
    }
  }
}
