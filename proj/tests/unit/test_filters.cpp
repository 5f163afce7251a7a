#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "seqflow/dynamics/lorenz.hpp"
#include "seqflow/filters/autoregressive.hpp"
#include "seqflow/filters/filters.hpp"

using namespace seqflow;

namespace {

struct LinearCase {
  MatrixXd f, q, h, r;
  StateSpaceModel model;
  GaussianBelief prior;
  std::vector<float> obs;  // T x obs_dim
  std::vector<VectorXd> truth;
};

LinearCase make_linear_case(std::size_t steps, std::uint64_t seed) {
  LinearCase c;
  const double th = 0.1;
  c.f.resize(3, 3);
  c.f << 0.95 * std::cos(th), -0.95 * std::sin(th), 0.0,
         0.95 * std::sin(th), 0.95 * std::cos(th), 0.0,
         0.1, 0.0, 0.9;
  c.q = MatrixXd::Identity(3, 3) * 0.05;
  c.h.resize(2, 3);
  c.h << 1.0, 0.0, 0.5,
         0.0, 1.0, -0.3;
  c.r = MatrixXd::Identity(2, 2) * 0.2;
  c.model = linear_model(c.f, c.q, c.h, c.r);
  c.prior.mean = VectorXd::Zero(3);
  c.prior.cov = MatrixXd::Identity(3, 3);
  Rng rng(seed);
  VectorXd s(3);
  for (int k = 0; k < 3; ++k) s[k] = rng.normal();
  const MatrixXd lq = c.q.llt().matrixL(), lr = c.r.llt().matrixL();
  for (std::size_t t = 0; t < steps; ++t) {
    if (t > 0) s = c.f * s + lq * VectorXd::NullaryExpr(3, [&] { return rng.normal(); });
    const VectorXd z = c.h * s + lr * VectorXd::NullaryExpr(2, [&] { return rng.normal(); });
    c.truth.push_back(s);
    // Observations are stored in float, so the oracle reads the same rounded values.
    for (int k = 0; k < 2; ++k) c.obs.push_back(static_cast<float>(z[k]));
  }
  return c;
}

// Textbook Kalman filter: standard-form gain and covariance update.
std::vector<VectorXd> kalman_oracle(const LinearCase& c) {
  std::vector<VectorXd> out;
  VectorXd m = c.prior.mean;
  MatrixXd p = c.prior.cov;
  const std::size_t steps = c.obs.size() / 2;
  for (std::size_t t = 0; t < steps; ++t) {
    if (t > 0) {
      m = c.f * m;
      p = c.f * p * c.f.transpose() + c.q;
    }
    const VectorXd z = (VectorXd(2) << c.obs[2 * t], c.obs[2 * t + 1]).finished();
    const MatrixXd s = c.h * p * c.h.transpose() + c.r;
    const MatrixXd k = p * c.h.transpose() * s.inverse();
    m = m + k * (z - c.h * m);
    p = (MatrixXd::Identity(3, 3) - k * c.h) * p;
    out.push_back(m);
  }
  return out;
}

double max_mean_error(const std::vector<double>& flat, const std::vector<VectorXd>& ref) {
  double worst = 0.0;
  for (std::size_t t = 0; t < ref.size(); ++t) {
    for (Eigen::Index k = 0; k < ref[t].size(); ++k) worst = std::max(worst, std::abs(flat[t * 3 + k] - ref[t][k]));
  }
  return worst;
}

double rmse_between(const std::vector<double>& flat, const std::vector<VectorXd>& ref) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < ref.size(); ++t) {
    for (Eigen::Index k = 0; k < ref[t].size(); ++k, ++n) s += std::pow(flat[t * 3 + k] - ref[t][k], 2);
  }
  return std::sqrt(s / static_cast<double>(n));
}

double rms_of(const std::vector<VectorXd>& ref) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& v : ref) {
    s += v.squaredNorm();
    n += static_cast<std::size_t>(v.size());
  }
  return std::sqrt(s / static_cast<double>(n));
}

}  // namespace

TEST(Ekf, LinearSystemEqualsExactKalmanFilter) {
  const auto c = make_linear_case(50, 1);
  Rng rng(2);
  const auto ekf = run_filter(FilterKind::ekf, c.model, c.prior, c.obs, rng);
  EXPECT_LT(max_mean_error(ekf, kalman_oracle(c)), 1e-10);
}

TEST(Ukf, LinearSystemEqualsExactKalmanFilter) {
  const auto c = make_linear_case(50, 3);
  Rng rng(4);
  const auto ukf = run_filter(FilterKind::ukf, c.model, c.prior, c.obs, rng);
  EXPECT_LT(max_mean_error(ukf, kalman_oracle(c)), 1e-8);
}

TEST(Ukf, SigmaWeightsSumToOne) {
  for (std::size_t n : {1u, 3u, 7u}) {
    const auto w = sigma_weights(n);
    EXPECT_EQ(w.mean.size(), 2 * n + 1);
    EXPECT_NEAR(std::accumulate(w.mean.begin(), w.mean.end(), 0.0), 1.0, 1e-12);
    EXPECT_NEAR(w.cov[0] - w.mean[0], 1.0 - 0.01 + 2.0, 1e-12);
  }
}

TEST(Ekf, PreciseObservationPinsState) {
  auto sys = LorenzSystem::make(1e-6);
  const auto m = lorenz_model(sys);
  GaussianBelief b{Vec3(1.0, 2.0, 20.0), MatrixXd::Identity(3, 3) * 4.0};
  const Vec3 s(3.0, -1.0, 22.0);
  const VectorXd z = sys.rotation * s;
  const auto post = ekf_step(b, z, m);
  EXPECT_LT((post.mean - sys.rotation.transpose() * z).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Ekf, UninformativeObservationKeepsPrediction) {
  auto m = lorenz_model(LorenzSystem::make(0.0));
  m.r = MatrixXd::Identity(3, 3) * 1e12;
  GaussianBelief b{Vec3(1.0, 2.0, 20.0), MatrixXd::Identity(3, 3) * 0.01};
  const auto post = ekf_step(b, Vec3(100.0, -50.0, 0.0), m);
  const Vec3 pred = lorenz_drift(Vec3(1.0, 2.0, 20.0), 0.02);
  EXPECT_LT((post.mean - pred).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Ekf, JacobianOfLinearMapIsTheMatrix) {
  const auto c = make_linear_case(1, 5);
  Rng rng(6);
  const VectorXd x = VectorXd::NullaryExpr(3, [&] { return 10 * rng.normal(); });
  EXPECT_LT((numerical_jacobian(c.model.drift, x) - c.f).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Ukf, BeatsOpenLoopOnLorenzAtTwentyDecibels) {
  const auto sys = LorenzSystem::from_db(20.0);
  const auto m = lorenz_model(sys);
  double ukf_mse = 0.0, open_mse = 0.0;
  const int trials = 5;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(100, "lorenz", static_cast<std::uint64_t>(trial));
    Vec3 s = lorenz_initial_state(sys, rng);
    std::vector<float> obs;
    std::vector<Vec3> truth;
    for (int t = 0; t < 100; ++t) {
      s = lorenz_step(s, sys, rng);
      const Vec3 z = observe_lorenz(s, sys, rng);
      truth.push_back(s);
      for (int k = 0; k < 3; ++k) obs.push_back(static_cast<float>(z[k]));
    }
    // Both start from the same slightly wrong prior.
    GaussianBelief prior{truth[0] + Vec3(0.5, -0.5, 0.5), MatrixXd::Identity(3, 3)};
    Rng frng(7);
    const auto u = run_filter(FilterKind::ukf, m, prior, obs, frng);
    const auto o = run_filter(FilterKind::open_loop, m, prior, obs, frng);
    for (int t = 0; t < 100; ++t) {
      for (int k = 0; k < 3; ++k) {
        ukf_mse += std::pow(u[t * 3 + k] - truth[t][k], 2);
        open_mse += std::pow(o[t * 3 + k] - truth[t][k], 2);
      }
    }
  }
  const double ukf_db = 10 * std::log10(ukf_mse / (300.0 * trials));
  const double open_db = 10 * std::log10(open_mse / (300.0 * trials));
  EXPECT_TRUE(std::isfinite(ukf_db));
  EXPECT_LE(ukf_db, open_db - 3.0);
}

TEST(Filters, CovarianceStaysSymmetricPositiveDefinite) {
  const auto sys = LorenzSystem::from_db(0.0);
  const auto m = lorenz_model(sys);
  Rng rng(8);
  Vec3 s = lorenz_initial_state(sys, rng);
  GaussianBelief e{s, MatrixXd::Identity(3, 3)}, u = e;
  for (int t = 0; t < 1000; ++t) {
    s = lorenz_step(s, sys, rng);
    const VectorXd z = observe_lorenz(s, sys, rng);
    e = ekf_step(e, z, m);
    u = ukf_step(u, z, m);
    for (const auto* b : {&e, &u}) {
      ASSERT_LT((b->cov - b->cov.transpose()).cwiseAbs().maxCoeff(), 1e-10);
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(b->cov);
      ASSERT_GT(es.eigenvalues().minCoeff(), 0.0) << "step " << t;
    }
  }
}

TEST(Stabilize, RejectsHopelessCovariance) {
  GaussianBelief b{VectorXd::Zero(2), (MatrixXd(2, 2) << 1.0, 0.0, 0.0, -1.0).finished()};
  EXPECT_THROW(stabilize(b), NumericError);
  GaussianBelief nan{VectorXd::Constant(2, NAN), MatrixXd::Identity(2, 2)};
  EXPECT_THROW(stabilize(nan), NumericError);
}

TEST(ParticleFilter, UninformativeObservationKeepsUniformWeights) {
  auto m = lorenz_model(LorenzSystem::from_db(0.0));
  m.r = MatrixXd::Identity(3, 3) * 1e20;
  Rng rng(9);
  auto p = particles_from(GaussianBelief{Vec3(1, 1, 20), MatrixXd::Identity(3, 3)}, 500, rng);
  for (int t = 0; t < 5; ++t) {
    p = pf_step(p, Vec3(0.0, 0.0, 0.0), m, rng);
    EXPECT_FALSE(p.resampled);
    EXPECT_NEAR(p.ess, 500.0, 1e-6);
    EXPECT_LT((p.weights.array() - 1.0 / 500).abs().maxCoeff(), 1e-12);
  }
}

TEST(ParticleFilter, ResamplingResetsWeights) {
  const auto m = lorenz_model(LorenzSystem::from_db(20.0));
  Rng rng(10);
  auto p = particles_from(GaussianBelief{Vec3(1, 1, 20), MatrixXd::Identity(3, 3) * 25.0}, 400, rng);
  p = pf_update(p, Vec3(1.0, 1.0, 20.0), m, rng);
  ASSERT_TRUE(p.resampled);
  EXPECT_LT((p.weights.array() - 1.0 / 400).abs().maxCoeff(), 1e-15);
  EXPECT_NEAR(p.weights.sum(), 1.0, 1e-12);
}

TEST(ParticleFilter, WeightsNormalizedAndEssInRange) {
  const auto m = lorenz_model(LorenzSystem::from_db(10.0));
  Rng rng(11);
  auto p = particles_from(GaussianBelief{Vec3(1, 1, 20), MatrixXd::Identity(3, 3) * 2.0}, 300, rng);
  for (int t = 0; t < 20; ++t) {
    p = pf_step(p, Vec3(1.0 + 0.1 * t, 1.0, 20.0), m, rng);
    EXPECT_NEAR(p.weights.sum(), 1.0, 1e-12);
    EXPECT_GE(p.ess, 1.0);
    EXPECT_LE(p.ess, 300.0 + 1e-9);
    EXPECT_GE(p.weights.minCoeff(), 0.0);
  }
}

TEST(ParticleFilter, SystematicResampleCounts) {
  const VectorXd w = (VectorXd(4) << 0.5, 0.0, 0.25, 0.25).finished();
  EXPECT_EQ(systematic_resample(w, 0.5), (std::vector<std::size_t>{0, 0, 2, 3}));
  const VectorXd one_hot = (VectorXd(3) << 0.0, 1.0, 0.0).finished();
  EXPECT_EQ(systematic_resample(one_hot, 0.1), (std::vector<std::size_t>{1, 1, 1}));
}

TEST(ParticleFilter, UnderflowRaisesWithAdvice) {
  auto m = lorenz_model(LorenzSystem::from_db(0.0));
  Rng rng(12);
  auto p = particles_from(GaussianBelief{Vec3(1, 1, 20), MatrixXd::Identity(3, 3)}, 10, rng);
  p.weights.setZero();
  try {
    pf_update(p, Vec3(1, 1, 20), m, rng);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("particle count"), std::string::npos);
  }
  EXPECT_THROW(particles_from(GaussianBelief{Vec3(1, 1, 1), MatrixXd::Identity(3, 3)}, 1, rng), ValidationError);
}

TEST(ParticleFilter, TracksKalmanFilterOnLinearSystem) {
  const auto c = make_linear_case(100, 13);
  const auto kf = kalman_oracle(c);
  Rng rng(14);
  const auto pf = run_filter(FilterKind::pf, c.model, c.prior, c.obs, rng, 10000);
  EXPECT_LT(rmse_between(pf, kf), 0.05 * rms_of(kf));
}

TEST(ParticleFilter, MoreParticlesTrackKalmanFilterCloser) {
  const auto c = make_linear_case(100, 15);
  const auto kf = kalman_oracle(c);
  Rng a(16), b(16);
  const double small = rmse_between(run_filter(FilterKind::pf, c.model, c.prior, c.obs, a, 100), kf);
  const double large = rmse_between(run_filter(FilterKind::pf, c.model, c.prior, c.obs, b, 10000), kf);
  EXPECT_LT(large, small);
}

TEST(ParticleFilter, IndependentOfThreadCount) {
  const auto c = make_linear_case(10, 17);
  setenv("SEQFLOW_THREADS", "1", 1);
  Rng a(18);
  const auto serial = run_filter(FilterKind::pf, c.model, c.prior, c.obs, a, 5000);
  setenv("SEQFLOW_THREADS", "4", 1);
  Rng b(18);
  const auto threaded = run_filter(FilterKind::pf, c.model, c.prior, c.obs, b, 5000);
  unsetenv("SEQFLOW_THREADS");
  EXPECT_EQ(serial, threaded);
}

namespace {

TrainConfig ar_train(std::size_t epochs) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = 64;
  tc.lr = 3e-3;
  tc.lr_final = 1e-4;
  tc.hidden = {64, 64};
  return tc;
}

// Fully observed trajectories of s_t = A s_{t-1}, state dim 2.
TrajectorySet linear_trajectories(const Eigen::Matrix2d& a, std::size_t n, std::size_t steps, std::uint64_t seed) {
  TrajectorySet ts;
  ts.n_traj = n;
  ts.steps = steps;
  ts.state_dim = 2;
  ts.obs_dim = 2;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Vector2d s(2 * rng.uniform() - 1, 2 * rng.uniform() - 1);
    for (std::size_t t = 0; t < steps; ++t) {
      for (int k = 0; k < 2; ++k) {
        ts.states.push_back(static_cast<float>(s[k]));
        ts.observations.push_back(static_cast<float>(s[k]));
      }
      s = a * s;
    }
  }
  return ts;
}

}  // namespace

TEST(Autoregressive, LearnsConstantTrajectories) {
  TrajectorySet ts;
  ts.n_traj = 256;
  ts.steps = 10;
  ts.state_dim = 1;
  ts.obs_dim = 1;
  Rng rng(20);
  for (std::size_t i = 0; i < ts.n_traj; ++i) {
    const float v = static_cast<float>(2 * rng.uniform() - 1);
    for (std::size_t t = 0; t < ts.steps; ++t) {
      ts.states.push_back(v);
      ts.observations.push_back(v);
    }
  }
  ts.meta["episode_length"] = 5;
  const TaskSpec spec{FlowTask::forecast, 5, 2};
  const auto meta = make_model_meta(spec, ts, "toy", 0);
  const auto ck = train_ar_baseline(ar_dataset(spec, ts, meta), meta, ar_train(150));
  double se = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    const auto f = ar_forecast(ck, make_window(ts.obs_stream(i), 1, 3, 2), 5, prefix_observer(1));
    for (double v : f) {
      se += std::pow(v - ts.state(i, 0)[0], 2);
      ++n;
    }
  }
  EXPECT_LT(std::sqrt(se / static_cast<double>(n)), 1e-2);
}

TEST(Autoregressive, MatchesMatrixPowerOnLinearSystem) {
  Eigen::Matrix2d a;
  a << 0.9, -0.2, 0.2, 0.9;
  auto ts = linear_trajectories(a, 256, 12, 21);
  ts.meta["episode_length"] = 8;
  const TaskSpec spec{FlowTask::forecast, 4, 1};
  const auto meta = make_model_meta(spec, ts, "toy", 0);
  const auto ck = train_ar_baseline(ar_dataset(spec, ts, meta), meta, ar_train(150));
  const auto test = linear_trajectories(a, 20, 12, 22);
  double err = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < test.n_traj; ++i) {
    const auto f = ar_forecast(ck, make_window(test.obs_stream(i), 2, 2, 1), 4, prefix_observer(2));
    Eigen::Vector2d s(test.state(i, 2)[0], test.state(i, 2)[1]);
    for (std::size_t h = 0; h < 4; ++h) {
      s = a * s;
      for (int k = 0; k < 2; ++k) {
        err += std::pow(f[h * 2 + k] - s[k], 2);
        ref += s[k] * s[k];
      }
    }
  }
  EXPECT_LT(std::sqrt(err / ref), 0.05);
}

TEST(Autoregressive, StreamPredictionsCountHorizonEvaluations) {
  Eigen::Matrix2d a = Eigen::Matrix2d::Identity() * 0.5;
  auto ts = linear_trajectories(a, 4, 8, 23);
  ts.meta["episode_length"] = 5;
  const TaskSpec spec{FlowTask::forecast, 3, 2};
  const auto meta = make_model_meta(spec, ts, "toy", 0);
  auto tc = ar_train(1);
  tc.hidden = {4};
  const auto ck = train_ar_baseline(ar_dataset(spec, ts, meta), meta, tc);
  const auto p = ar_predict_streams(ck, ObservationBatch::from(ts, 5), 3, prefix_observer(2));
  EXPECT_EQ(p.evals_per_chain, 15u);
  EXPECT_EQ(p.x_dim, 6u);
  const auto direct = ar_forecast(ck, make_window(ts.obs_stream(2), 2, 4, 2), 3, prefix_observer(2));
  for (std::size_t k = 0; k < 6; ++k) EXPECT_FLOAT_EQ(p.at(2, 4)[k], static_cast<float>(direct[k]));
}

TEST(Autoregressive, AdvanceWindowSlides) {
  const std::vector<float> obs{1, 2, 3};
  auto w = make_window(obs, 1, 0, 3);
  EXPECT_EQ(w.padded, 2u);
  w = advance_window(w, {9.0});
  EXPECT_EQ(w.values, (std::vector<double>{0, 1, 9}));
  EXPECT_EQ(w.padded, 1u);
  EXPECT_THROW(advance_window(w, {1.0, 2.0}), DimensionError);
}
