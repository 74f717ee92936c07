#include <gtest/gtest.h>

#include "hrdl/models.hpp"
#include "hrdl/parallel.hpp"
#include "hrdl/trajgen.hpp"
#include "test_util.hpp"

using namespace hrdl;

namespace {

RobotParams quiet_params(double sigma = 0.5) {
  RobotParams p;
  p.noise_sigma = sigma;
  return p;
}

Dataset rich_data(std::size_t n_traj, double seconds, std::uint64_t seed, const RobotParams& p) {
  Dataset all;
  all.label = "hysteresis-rich";
  for (std::size_t i = 0; i < n_traj; ++i) {
    TrajSpec s;
    s.kind = TrajKind::hysteresis_rich;
    s.duration = seconds;
    s.seed = seed * 1000 + i;
    s.block_seconds = 1.0;
    const Dataset d = simulate_currents(gen_hysteresis_rich(s), p, seed * 7919 + i);
    all.append_trajectory(d.frames);
  }
  return all;
}

TrainSettings quick(std::size_t epochs, std::uint64_t seed = 3) {
  TrainSettings t;
  t.fit.epochs = epochs;
  t.fit.batch = 128;
  t.fit.adam.lr = 3e-3;
  t.seed = seed;
  return t;
}

HierarchySpec small_spec(IndexRange md = {}, std::size_t frames = 5) {
  HierarchySpec h;
  h.hidden = {24, 24};
  h.md_subset = md;
  h.frames = frames;
  return h;
}

double mean_rmse(const Vec6& r) {
  double s = 0.0;
  for (double v : r) s += v;
  return s / 6.0;
}

std::vector<const JointFrame*> ptrs(const std::vector<JointFrame>& fr) {
  std::vector<const JointFrame*> p;
  for (const auto& f : fr) p.push_back(&f);
  return p;
}

}  // namespace

TEST(TrainMlp, ConstantCurrentIsLearned) {
  Dataset d;
  for (int i = 0; i < 4; ++i) {
    auto fr = test::static_frames(300, Vec6{0.1 * i, 0.2, -0.3, 0.0, 0.5, 0.1});
    for (std::size_t n = 0; n < fr.size(); ++n) {
      fr[n].dq.fill(0.01 * std::sin(0.1 * static_cast<double>(n + 50 * i)));
      fr[n].current = Vec6{3, -2, 7.5, 0, 1, -4};
    }
    d.append_trajectory(fr);
  }
  const auto t = train_mlp(d, default_thresholds(), small_spec(), quick(30));
  const Matrix P = t.model.predict(d, default_thresholds());
  const auto r = evaluate(P, d, 1e-3);
  for (double v : r.overall) EXPECT_LT(v, 0.1);
  EXPECT_FALSE(t.log.train_loss.empty());
}

TEST(TrainMlp, ZeroEpochsLeavesInitialNetwork) {
  const Dataset d = rich_data(2, 5, 1, quiet_params());
  const auto spec = small_spec(default_thresholds().groups[0]);
  const auto t = train_mlp(d, default_thresholds(), spec, quick(0, 42));
  nn::Rng rng(42);
  const nn::DenseNet fresh(120, spec.hidden, 6, rng);
  EXPECT_EQ(t.model.net.to_json(), fresh.to_json());
  EXPECT_TRUE(t.log.train_loss.empty());
  EXPECT_THROW(train_mlp(Dataset{}, default_thresholds(), spec, quick(1)), Error);
}

TEST(TrainMlp, DeterministicGivenSeed) {
  const Dataset d = rich_data(3, 6, 2, quiet_params());
  const auto a = train_mlp(d, default_thresholds(), small_spec(), quick(3));
  const auto b = train_mlp(d, default_thresholds(), small_spec(), quick(3));
  EXPECT_EQ(a.model.to_json(), b.model.to_json());
  EXPECT_EQ(a.log.train_loss, b.log.train_loss);
}

TEST(TrainMlp, MultiFrameNotWorseThanSingleFrame) {
  const RobotParams p = quiet_params(1.0);
  double m5 = 0.0, m1 = 0.0;
  for (std::uint64_t seed : {5u, 6u}) {
    const Dataset train = rich_data(6, 20, seed, p);
    const Dataset test = rich_data(2, 20, seed + 100, p);
    const auto a = train_mlp(train, default_thresholds(), small_spec({}, 5), quick(15, seed));
    const auto b = train_mlp(train, default_thresholds(), small_spec({}, 1), quick(15, seed));
    m5 += mean_rmse(evaluate(a.model.predict(test, default_thresholds()), test, p.motion_eps).overall);
    m1 += mean_rmse(evaluate(b.model.predict(test, default_thresholds()), test, p.motion_eps).overall);
  }
  EXPECT_LE(m5, m1 * 1.02) << "M=5 " << m5 / 2 << " vs M=1 " << m1 / 2;
}

TEST(TrainRdl, ZeroInitialisedBlocksPassStemThrough) {
  const Dataset d = rich_data(2, 4, 3, quiet_params());
  ResidualSpec spec;
  spec.width = 16;
  spec.zero_init_residual = true;
  const auto t = train_rdl(d, default_thresholds(), spec, quick(0));
  const Matrix X = build_feature_matrix(d, default_thresholds(), t.model.features);
  EXPECT_TRUE(t.model.net.forward(X).isApprox(t.model.net.forward_without_blocks(X), 1e-14));
}

TEST(TrainRdl, TrainsAndRoundTrips) {
  const Dataset d = rich_data(3, 8, 4, quiet_params());
  ResidualSpec spec;
  spec.width = 24;
  spec.md_subset = default_thresholds().all();
  const auto t = train_rdl(d, default_thresholds(), spec, quick(4));
  EXPECT_LT(t.log.train_loss.back(), t.log.train_loss.front());
  const auto back = RdlEstimator::from_json(nlohmann::json::parse(t.model.to_json().dump()));
  EXPECT_EQ(back.predict(d, default_thresholds()), t.model.predict(d, default_thresholds()));
}

TEST(TrainHrdl, SingleHierarchyEqualsMlp) {
  const Dataset d = rich_data(3, 6, 7, quiet_params());
  const auto ts = default_thresholds();
  const auto spec = small_spec(ts.groups[0]);
  const auto s = train_hrdl(d, ts, {spec}, quick(3, 9));
  const auto m = train_mlp(d, ts, spec, quick(3, 9));
  ASSERT_EQ(s.stack.hierarchies.size(), 1u);
  EXPECT_EQ(s.stack.hierarchies[0].to_json(), m.model.to_json());
}

TEST(TrainHrdl, CumulativeTrainingErrorDoesNotGrow) {
  const RobotParams p = quiet_params(0.5);
  const Dataset d = rich_data(6, 20, 8, p);
  const auto ts = default_thresholds();
  std::vector<HierarchySpec> specs;
  for (const auto& g : ts.groups) specs.push_back(small_spec(g));
  const auto s = train_hrdl(d, ts, specs, quick(8));
  ASSERT_EQ(s.logs.size(), 3u);
  const auto cum = s.stack.predict_cumulative(d);
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& P : cum) {
    const double r = mean_rmse(evaluate(P, d, p.motion_eps).overall);
    EXPECT_LE(r, prev * 1.01);
    prev = r;
  }
}

TEST(TrainHrdl, LaterStagesStartAsZeroCorrection) {
  const RobotParams p = quiet_params(0.5);
  const Dataset d = rich_data(3, 5, 8, p);
  const auto ts = default_thresholds();
  std::vector<HierarchySpec> specs;
  for (const auto& g : ts.groups) specs.push_back(small_spec(g));
  const auto s = train_hrdl(d, ts, specs, quick(0));
  const auto cum = s.stack.predict_cumulative(d);
  EXPECT_GT(cum[0].norm(), 0.0);
  EXPECT_EQ(cum[1], cum[0]);
  EXPECT_EQ(cum[2], cum[0]);
}

TEST(TrainHrdl, Errors) {
  const Dataset d = rich_data(2, 3, 9, quiet_params());
  EXPECT_THROW(train_hrdl(d, default_thresholds(), {}, quick(1)), Error);
  EXPECT_THROW(train_hrdl(d, default_thresholds(), {small_spec({}, 5), small_spec({}, 3)}, quick(1)),
               Error);
}

class StackFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new Dataset(rich_data(3, 8, 11, quiet_params()));
    const auto ts = default_thresholds();
    std::vector<HierarchySpec> specs;
    for (const auto& g : ts.groups) specs.push_back(small_spec(g));
    stack_ = new HierarchyStack(train_hrdl(*data_, ts, specs, quick(2)).stack);
  }
  static void TearDownTestSuite() {
    delete data_;
    delete stack_;
  }
  static Dataset* data_;
  static HierarchyStack* stack_;
};

Dataset* StackFixture::data_ = nullptr;
HierarchyStack* StackFixture::stack_ = nullptr;

TEST_F(StackFixture, ParallelEqualsSequentialBitwise) {
  const Matrix seq = predict_streaming(*stack_, *data_, InferMode::sequential);
  const Matrix par = predict_streaming(*stack_, *data_, InferMode::parallel);
  EXPECT_EQ(seq, par);
  EXPECT_TRUE(seq.isApprox(stack_->predict(*data_), 1e-10));
}

TEST_F(StackFixture, ZeroedUpperHierarchiesLeaveFirstAlone) {
  HierarchyStack s = *stack_;
  for (std::size_t j = 1; j < s.hierarchies.size(); ++j) {
    auto& last = s.hierarchies[j].net.layers().back();
    last.W.value.setZero();
    last.b.value.setZero();
    s.hierarchies[j].out_norm.mean.setZero();
  }
  HierarchyStack first = s;
  first.hierarchies.resize(1);
  EXPECT_EQ(predict_streaming(s, *data_, InferMode::parallel),
            predict_streaming(first, *data_, InferMode::sequential));
}

TEST_F(StackFixture, StaticInputGivesConstantOutput) {
  const auto fr = test::static_frames(5, Vec6{0.1, 0.4, 0.2, -0.3, 0.6, 0.0});
  MDState md(15);
  md = md_update(md, Vec6{0.02, -0.02, 0.011, 0.004, -0.03, 0.05}, stack_->thresholds);
  const auto w = ptrs(fr);
  for (InferMode mode : {InferMode::sequential, InferMode::parallel}) {
    StackRunner r(*stack_, mode);
    const Vec6 first = r.infer(w, md);
    for (int i = 0; i < 10000; ++i) ASSERT_EQ(r.infer(w, md), first);
  }
}

TEST_F(StackFixture, RunnerRejectsMismatchedInput) {
  StackRunner r(*stack_, InferMode::sequential);
  const auto fr = test::static_frames(4, Vec6{});
  EXPECT_THROW(r.infer(ptrs(fr), MDState(15)), Error);
  const auto fr5 = test::static_frames(5, Vec6{});
  EXPECT_THROW(r.infer(ptrs(fr5), MDState(10)), Error);
}

TEST_F(StackFixture, JsonRoundTripKeepsPredictions) {
  const std::string text = stack_->to_json().dump();
  const HierarchyStack back = HierarchyStack::from_json(nlohmann::json::parse(text));
  EXPECT_EQ(back.predict(*data_), stack_->predict(*data_));
  EXPECT_EQ(back.to_json().dump(), text);

  auto bad = stack_->to_json();
  bad["hierarchies"][1]["frames"] = 4;
  EXPECT_THROW(HierarchyStack::from_json(bad), Error);
  bad = stack_->to_json();
  bad["version"] = 99;
  EXPECT_THROW(HierarchyStack::from_json(bad), Error);
}

TEST(Lstm, WindowLongerThanTrajectoryIsRejected) {
  const Dataset d = rich_data(2, 0.5, 12, quiet_params());
  LstmSpec s;
  s.window = 100;
  EXPECT_THROW(train_lstm(d, s, quick(1)), Error);
  s.window = 0;
  EXPECT_THROW(train_lstm(d, s, quick(1)), Error);
}

TEST(Lstm, TrainsPredictsStreamsAndRoundTrips) {
  const Dataset d = rich_data(3, 6, 13, quiet_params());
  LstmSpec s;
  s.window = 10;
  s.encoder = 8;
  s.hidden = 8;
  s.decoder_hidden = {8};
  s.stride = 4;
  const auto t = train_lstm(d, s, quick(3));
  ASSERT_FALSE(t.log.train_loss.empty());
  const Matrix P = t.model.predict(d);
  ASSERT_EQ(P.cols(), static_cast<Eigen::Index>(d.size()));
  const auto back = LstmEstimator::from_json(nlohmann::json::parse(t.model.to_json().dump()));
  EXPECT_EQ(back.predict(d), P);

  // Streaming from the first frame of a trajectory equals the window
  // prediction while the window has not filled yet (padding aside, the
  // sequence is the same from zero state only at frame 0).
  LstmStream stream(t.model);
  const Vec6 y0 = stream.step(d.frames[0]);
  for (std::size_t k = 0; k < kJoints; ++k) EXPECT_TRUE(std::isfinite(y0[k]));
}

TEST(Lstm, WindowOneIsSingleStep) {
  const Dataset d = rich_data(2, 3, 14, quiet_params());
  LstmSpec s;
  s.window = 1;
  s.encoder = 6;
  s.hidden = 6;
  s.decoder_hidden = {};
  const auto t = train_lstm(d, s, quick(1));
  const Matrix P = t.model.predict(d);
  LstmStream fresh(t.model);
  const Vec6 y = fresh.step(d.frames[7]);
  for (std::size_t k = 0; k < kJoints; ++k)
    EXPECT_NEAR(y[k], P(static_cast<Eigen::Index>(k), 7), 1e-10);
}

TEST(Evaluate, IdenticalPredictionIsZero) {
  const Dataset d = rich_data(1, 3, 15, quiet_params());
  const auto r = evaluate(current_matrix(d), d, 1e-3);
  EXPECT_EQ(r.overall, Vec6{});
  EXPECT_EQ(r.n_static + r.n_moving, d.size());
  EXPECT_GT(r.n_static, 0u);
  EXPECT_GT(r.n_moving, 0u);
  EXPECT_THROW(evaluate(Matrix(6, 0), Dataset{}, 1e-3), Error);
  EXPECT_THROW(evaluate(Matrix(6, 3), d, 1e-3), Error);
}

TEST(Evaluate, SimulatorOracleScoresNoiseLevel) {
  const RobotParams p = quiet_params(1.0);
  TrajSpec s;
  s.kind = TrajKind::hysteresis_rich;
  s.duration = 400;
  s.seed = 16;
  const Dataset traj = gen_hysteresis_rich(s);
  Dataset measured = traj;
  Matrix ideal(6, static_cast<Eigen::Index>(traj.size()));
  RobotSimulator sim(p, 17);
  sim.reset(traj.frames[0].q);
  for (std::size_t n = 0; n < traj.size(); ++n) {
    measured.frames[n].current = sim.step(traj.frames[n]);
    for (std::size_t k = 0; k < kJoints; ++k)
      ideal(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n)) = sim.ideal_current()[k];
  }
  const auto r = evaluate(ideal, measured, p.motion_eps);
  for (double v : r.overall) EXPECT_NEAR(v, 1.0, 0.05);
}

TEST(Evaluate, ZeroModelAtRestShowsNoiseOnGravityFreeJoints) {
  Dataset traj;
  traj.append_trajectory(test::static_frames(40000, Vec6{0.3, 0.2, 0.1, -0.4, 0.2, 0.9}));
  const RobotParams p = quiet_params(1.0);
  const Dataset d = simulate_currents(traj, p, 18);
  const auto r = evaluate(Matrix::Zero(6, static_cast<Eigen::Index>(d.size())), d, p.motion_eps);
  ASSERT_EQ(r.n_static, d.size());
  for (std::size_t k : {0u, 3u, 5u}) EXPECT_NEAR(r.static_frames[k], 1.0, 0.05);
  EXPECT_GT(r.static_frames[1], 10.0);
}

TEST(Analytic, MatchesHysteresisFreeCurrent) {
  const Dataset d = rich_data(1, 2, 19, quiet_params());
  const Matrix P = predict_analytic(d, quiet_params());
  const Vec6 c = hysteresis_free_current(d.frames[10], quiet_params());
  for (std::size_t k = 0; k < kJoints; ++k) EXPECT_EQ(P(static_cast<Eigen::Index>(k), 10), c[k]);
}

TEST(BenchLatency, CountsAndOrdering) {
  std::size_t calls = 0;
  volatile double sink = 0.0;
  const auto s = bench_latency(
      [&](std::size_t i) {
        ++calls;
        for (std::size_t j = 0; j < 200 + (i % 7) * 50; ++j) sink = sink + std::sqrt(double(j));
      },
      500);
  EXPECT_EQ(calls, 500 + kWarmupCalls);
  EXPECT_GT(s.median_us, 0.0);
  EXPECT_LE(s.median_us, s.p95_us);
  EXPECT_LE(s.p95_us, s.p99_us);
}

TEST(Thresholds, JsonScalarAndRowForms) {
  const auto j = nlohmann::json::parse(R"({"thresholds": [0.01, [0.1,0.2,0.3,0.4,0.5,0.6]],
                                           "groups": [[0,1],[1,2]]})");
  const ThresholdSet ts = thresholds_from_json(j);
  EXPECT_EQ(ts.thresholds[0][5], 0.01);
  EXPECT_EQ(ts.thresholds[1][2], 0.3);
  const ThresholdSet back = thresholds_from_json(to_json(ts));
  EXPECT_EQ(back.thresholds, ts.thresholds);
  EXPECT_THROW(thresholds_from_json(nlohmann::json::parse(R"({"thresholds": [[1,2]]})")), Error);
}
