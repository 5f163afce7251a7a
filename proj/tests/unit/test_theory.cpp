#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "seqflow/dynamics/lorenz.hpp"
#include "seqflow/theory/theory.hpp"

using namespace seqflow;

namespace {

// Joint with probabilities count / total so every marginal mass is a multiple
// of 1 / total. Returns the counts alongside the joint.
struct CountJoint {
  DiscreteJoint joint;
  Eigen::MatrixXi counts;
  int total = 0;
};

CountJoint random_count_joint(Rng& rng, std::size_t rows, std::size_t cols, int total) {
  CountJoint c;
  c.counts = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (int k = 0; k < total; ++k) ++c.counts(static_cast<Eigen::Index>(rng.below(rows)), static_cast<Eigen::Index>(rng.below(cols)));
  c.total = total;
  std::vector<double> x0(rows), x1(cols);
  for (auto& v : x0) v = 3 * rng.normal();
  for (auto& v : x1) v = rng.normal();
  c.joint = DiscreteJoint::make(x0, x1, c.counts.cast<double>() / static_cast<double>(total));
  return c;
}

// Exact W2^2 between the pushforward and the x0 marginal by splitting both
// measures into `total` equal atoms and solving the assignment problem.
double w2sq_by_assignment(const CountJoint& c) {
  MatrixD push(c.total, 1), target(c.total, 1);
  Eigen::Index a = 0, b = 0;
  for (Eigen::Index j = 0; j < c.counts.cols(); ++j) {
    const int nj = c.counts.col(j).sum();
    if (nj == 0) continue;
    double m = 0.0;
    for (Eigen::Index i = 0; i < c.counts.rows(); ++i) m += c.counts(i, j) * c.joint.x0_values[static_cast<std::size_t>(i)];
    m /= nj;
    for (int k = 0; k < nj; ++k) push(a++, 0) = m;
  }
  for (Eigen::Index i = 0; i < c.counts.rows(); ++i) {
    for (int k = 0; k < c.counts.row(i).sum(); ++k) target(b++, 0) = c.joint.x0_values[static_cast<std::size_t>(i)];
  }
  const double w = w2_exact_small(push, target);
  return w * w;
}

double pushforward_w2sq(const DiscreteJoint& j) {
  return std::pow(w2_1d_weighted(one_step_pushforward(j), j.x0_marginal()), 2);
}

// E Var(x0 | x1) straight from the definition, per column.
double expected_cond_var_oracle(const DiscreteJoint& j) {
  double out = 0.0;
  for (Eigen::Index c = 0; c < j.p.cols(); ++c) {
    const double pc = j.p.col(c).sum();
    if (pc == 0.0) continue;
    double m1 = 0.0, m2 = 0.0;
    for (Eigen::Index r = 0; r < j.p.rows(); ++r) {
      const double x = j.x0_values[static_cast<std::size_t>(r)];
      m1 += j.p(r, c) / pc * x;
      m2 += j.p(r, c) / pc * x * x;
    }
    out += pc * (m2 - m1 * m1);
  }
  return out;
}

GaussianChain random_chain(Rng& rng, Eigen::Index d) {
  auto spd = [&](double floor) {
    MatrixD l(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index k = 0; k < d; ++k) l(i, k) = rng.normal();
    }
    return MatrixD(l * l.transpose() + floor * MatrixD::Identity(d, d));
  };
  MatrixD a(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) a(i, k) = rng.normal();
  }
  return GaussianChain::make(rng.normal_vector<double>(static_cast<std::size_t>(d)), spd(0.1), a,
                             rng.normal_vector<double>(static_cast<std::size_t>(d)), spd(0.05));
}

}  // namespace

TEST(GaussianChain, UnitChainClosedForms) {
  const auto r = prop1_gaussian_report(GaussianChain::unit_ar1(0.9));
  EXPECT_NEAR(r.w2_gaussian_coupling, 1.0, 1e-12);
  EXPECT_NEAR(r.w2_bayes_coupling, 0.1, 1e-12);
  EXPECT_NEAR(r.bayes_bound, std::sqrt(1 - 0.81), 1e-12);
  EXPECT_NEAR(r.bayes_bound, 0.43589, 1e-5);
  EXPECT_NEAR(r.gap, 0.81, 1e-12);
  EXPECT_NEAR(r.lotv_gap, 0.81, 1e-12);
}

TEST(GaussianChain, NegativeCorrelationUsesAbsoluteValue) {
  const auto r = prop1_gaussian_report(GaussianChain::unit_ar1(-0.6));
  EXPECT_NEAR(r.w2_bayes_coupling, 0.4, 1e-12);
  EXPECT_NEAR(r.w2_gaussian_coupling, 1.0, 1e-12);
}

TEST(GaussianChain, UninformativePastGivesEqualErrors) {
  const auto r = prop1_gaussian_report(GaussianChain::unit_ar1(0.0));
  EXPECT_NEAR(r.w2_bayes_coupling, r.w2_gaussian_coupling, 1e-12);
  EXPECT_NEAR(r.w2_bayes_coupling, 1.0, 1e-12);
  EXPECT_NEAR(r.gap, 0.0, 1e-12);
}

TEST(GaussianChain, DeterministicDynamicsRecoverTarget) {
  const MatrixD a = (MatrixD(2, 2) << 0.5, 0.2, -0.3, 1.1).finished();
  const auto c = GaussianChain::make(VectorD::Ones(2), MatrixD::Identity(2, 2) * 2.0, a, VectorD::Zero(2), MatrixD::Zero(2, 2));
  EXPECT_LT(prop1_gaussian_report(c).w2_bayes_coupling, 1e-7);
  EXPECT_EQ(prop1_gaussian_report(c).bayes_bound, 0.0);
}

TEST(GaussianChain, RejectsInvalidInputs) {
  EXPECT_THROW(GaussianChain::unit_ar1(1.5), ValidationError);
  const MatrixD bad = (MatrixD(1, 1) << -1.0).finished();
  EXPECT_THROW(GaussianChain::make(VectorD::Zero(1), bad, MatrixD::Identity(1, 1), VectorD::Zero(1), MatrixD::Identity(1, 1)),
               ValidationError);
  EXPECT_THROW(GaussianChain::make(VectorD::Zero(2), MatrixD::Identity(1, 1), MatrixD::Identity(1, 1), VectorD::Zero(1),
                                   MatrixD::Identity(1, 1)),
               DimensionError);
}

TEST(GaussianChain, BayesCouplingStrictlyBetterWhenPastIsInformative) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto c = random_chain(rng, 1 + static_cast<Eigen::Index>(rng.below(3)));
    const auto r = prop1_gaussian_report(c);
    ASSERT_LT(r.w2_bayes_coupling, r.w2_gaussian_coupling) << "trial " << trial;
    // Squared bound E Var(x_t | x_{t-1}) and the variance decomposition.
    EXPECT_LE(r.w2_bayes_coupling * r.w2_bayes_coupling, r.bayes_bound * r.bayes_bound + 1e-9);
    EXPECT_NEAR(r.w2_gaussian_coupling * r.w2_gaussian_coupling, r.bayes_bound * r.bayes_bound + r.lotv_gap, 1e-9);
  }
  for (double rho : {-0.99, -0.5, 1e-3, 0.3, 0.9, 1.0}) {
    const auto r = prop1_gaussian_report(GaussianChain::unit_ar1(rho));
    EXPECT_LT(r.w2_bayes_coupling, r.w2_gaussian_coupling) << rho;
  }
}

TEST(GaussianChain, EmpiricalMatchesClosedFormAtOneHundredThousand) {
  const auto chain = GaussianChain::unit_ar1(0.9);
  Rng rng(2);
  const auto e = prop1_empirical_check(chain, 100000, rng);
  EXPECT_NEAR(e.w2_gaussian_coupling, 1.0, 0.02);
  EXPECT_NEAR(e.w2_bayes_coupling, 0.1, 0.002);
  EXPECT_LE(e.w2_bayes_coupling * e.w2_bayes_coupling, 0.19 + 3 * e.bound_sq_se);
  EXPECT_NEAR(e.bound_sq, 0.19, 5 * e.bound_sq_se);
}

TEST(GaussianChain, EmpiricalAcrossSeedsAndCorrelations) {
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    for (double rho : {0.5, 0.7, 0.9}) {
      Rng rng(seed);
      const auto chain = GaussianChain::unit_ar1(rho);
      const auto e = prop1_empirical_check(chain, 100000, rng);
      const double cf = 1.0 - rho;
      EXPECT_NEAR(e.w2_bayes_coupling, cf, 0.02 * cf) << "rho " << rho << " seed " << seed;
    }
  }
}

TEST(GaussianChain, EmpiricalTwoDimensionalUsesAssignmentBlocks) {
  const auto chain = GaussianChain::make(VectorD::Zero(2), MatrixD::Identity(2, 2), MatrixD::Identity(2, 2) * 0.9,
                                         VectorD::Zero(2), MatrixD::Identity(2, 2) * 0.19);
  const auto cf = prop1_gaussian_report(chain);
  EXPECT_NEAR(cf.w2_bayes_coupling, 0.1 * std::sqrt(2.0), 1e-12);
  Rng rng(6);
  const auto e = prop1_empirical_check(chain, 10240, rng);
  EXPECT_NEAR(e.w2_gaussian_coupling, std::sqrt(2.0), 0.02 * std::sqrt(2.0));
  // Finite blocks only add transport cost, so the estimate sits at or above
  // the closed form and well below the Gaussian coupling.
  EXPECT_GE(e.w2_bayes_coupling, 0.9 * cf.w2_bayes_coupling);
  EXPECT_LT(e.w2_bayes_coupling, 0.5 * e.w2_gaussian_coupling);
}

TEST(GaussianChain, EmpiricalRejectsTinySamples) {
  Rng rng(7);
  EXPECT_THROW(prop1_empirical_check(GaussianChain::unit_ar1(0.5), 1, rng), ValidationError);
}

TEST(DiscreteJoint, TwoByTwoExample) {
  const MatrixD p = (MatrixD(2, 2) << 0.4, 0.1, 0.1, 0.4).finished();
  const auto j = DiscreteJoint::make({0.0, 1.0}, {0.0, 1.0}, p);
  const auto atoms = one_step_pushforward(j);
  ASSERT_EQ(atoms.size(), 2u);
  EXPECT_NEAR(atoms[0].first, 0.2, 1e-15);
  EXPECT_NEAR(atoms[1].first, 0.8, 1e-15);
  EXPECT_NEAR(atoms[0].second, 0.5, 1e-15);
  // Monotone plan: 0.2 -> 0 and 0.8 -> 1, each with mass 1/2.
  EXPECT_NEAR(pushforward_w2sq(j), 0.04, 1e-12);
  EXPECT_NEAR(j.expected_conditional_variance(), 0.16, 1e-12);
  EXPECT_LE(pushforward_w2sq(j), j.expected_conditional_variance());
}

TEST(DiscreteJoint, DeterministicJointIsExact) {
  // x0 = f(x1) with f(x) = x^2 - 1; each column has a single atom.
  const std::vector<double> x1{-1.0, 0.5, 2.0, 3.0};
  std::vector<double> x0;
  for (double v : x1) x0.push_back(v * v - 1.0);
  MatrixD p = MatrixD::Zero(4, 4);
  const double w[4] = {0.1, 0.2, 0.3, 0.4};
  for (int k = 0; k < 4; ++k) p(k, k) = w[k];
  const auto j = DiscreteJoint::make(x0, x1, p);
  EXPECT_NEAR(pushforward_w2sq(j), 0.0, 1e-24);
  EXPECT_NEAR(j.expected_conditional_variance(), 0.0, 1e-15);
}

TEST(DiscreteJoint, VarianceBoundTightForIndependentJoints) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t r = 1 + rng.below(64), c = 1 + rng.below(64);
    VectorD pr(static_cast<Eigen::Index>(r)), pc(static_cast<Eigen::Index>(c));
    for (auto& v : pr) v = rng.uniform() + 1e-3;
    for (auto& v : pc) v = rng.uniform() + 1e-3;
    pr /= pr.sum();
    pc /= pc.sum();
    std::vector<double> x0(r), x1(c);
    for (auto& v : x0) v = 5 * rng.normal();
    for (auto& v : x1) v = rng.normal();
    const MatrixD p = pr * pc.transpose();
    MatrixD pn = p / p.sum();
    const auto j = DiscreteJoint::make(x0, x1, pn);
    double m = 0.0, var = 0.0;
    for (std::size_t i = 0; i < r; ++i) m += pn.row(static_cast<Eigen::Index>(i)).sum() * x0[i];
    for (std::size_t i = 0; i < r; ++i) var += pn.row(static_cast<Eigen::Index>(i)).sum() * (x0[i] - m) * (x0[i] - m);
    EXPECT_NEAR(pushforward_w2sq(j), var, 1e-12 * std::max(1.0, var)) << "trial " << trial;
  }
}

TEST(DiscreteJoint, VarianceBoundBoundOnRandomJoints) {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const auto c = random_count_joint(rng, 2 + rng.below(10), 2 + rng.below(10), 120);
    const double w2sq = pushforward_w2sq(c.joint);
    const double ecv = expected_cond_var_oracle(c.joint);
    EXPECT_NEAR(c.joint.expected_conditional_variance(), ecv, 1e-10);
    EXPECT_NEAR(w2sq, w2sq_by_assignment(c), 1e-9) << "trial " << trial;
    EXPECT_LE(w2sq, ecv + 1e-12) << "trial " << trial;
  }
}

TEST(DiscreteJoint, VarianceBoundBoundOnLargeDenseJoints) {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    MatrixD p(64, 64);
    for (auto& v : p.reshaped()) v = std::pow(rng.uniform(), 4);
    p /= p.sum();
    std::vector<double> x0(64), x1(64);
    for (auto& v : x0) v = rng.normal();
    for (auto& v : x1) v = rng.normal();
    const auto j = DiscreteJoint::make(x0, x1, p);
    EXPECT_LE(pushforward_w2sq(j), j.expected_conditional_variance() + 1e-12);
  }
}

TEST(DiscreteJoint, ZeroProbabilityColumnsAreSkipped) {
  const MatrixD p = (MatrixD(2, 3) << 0.5, 0.0, 0.0, 0.0, 0.0, 0.5).finished();
  const auto atoms = one_step_pushforward(DiscreteJoint::make({1.0, 3.0}, {0.0, 1.0, 2.0}, p));
  ASSERT_EQ(atoms.size(), 2u);
  EXPECT_EQ(atoms[0].first, 1.0);
  EXPECT_EQ(atoms[1].first, 3.0);
}

TEST(DiscreteJoint, RejectsInvalidTables) {
  EXPECT_THROW(DiscreteJoint::make({0.0}, {0.0}, MatrixD::Constant(1, 1, 0.9)), ValidationError);
  EXPECT_THROW(DiscreteJoint::make({0.0, 1.0}, {0.0}, (MatrixD(2, 1) << 1.5, -0.5).finished()), ValidationError);
  EXPECT_THROW(DiscreteJoint::make({0.0}, {0.0, 1.0}, MatrixD::Constant(1, 1, 1.0)), DimensionError);
  EXPECT_THROW(DiscreteJoint::make(std::vector<double>(65, 0.0), {0.0}, MatrixD::Constant(65, 1, 1.0 / 65)), ValidationError);
}

TEST(TotalVariance, GaussianChainClosedForm) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto r = lotv_check(random_chain(rng, 3));
    EXPECT_LT(r.residual, 1e-10);
  }
  const auto u = lotv_check(GaussianChain::unit_ar1(0.9));
  EXPECT_NEAR(u.total_var, 1.0, 1e-12);
  EXPECT_NEAR(u.expected_cond_var, 0.19, 1e-12);
  EXPECT_NEAR(u.var_cond_mean, 0.81, 1e-12);
}

TEST(TotalVariance, DiscreteJointExact) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = random_count_joint(rng, 8, 8, 200);
    const auto r = lotv_check(c.joint);
    EXPECT_LT(r.residual, 1e-12);
    double mean = 0.0;
    for (const auto& [x, w] : c.joint.x0_marginal()) mean += w * x;
    // Var E[x0 | x1] is the squared distance of the pushforward to a point mass at the mean.
    EXPECT_NEAR(r.var_cond_mean, std::pow(w2_1d_weighted(one_step_pushforward(c.joint), {{mean, 1.0}}), 2), 1e-10);
  }
}

TEST(TotalVariance, BinnedGaussianChain) {
  const std::size_t n = 100000;
  Rng rng(13);
  MatrixD prev(n, 1), next(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    prev(static_cast<Eigen::Index>(i), 0) = rng.normal();
    next(static_cast<Eigen::Index>(i), 0) = 0.9 * prev(static_cast<Eigen::Index>(i), 0) + std::sqrt(0.19) * rng.normal();
  }
  const auto r = lotv_check(prev, next);
  EXPECT_LT(r.residual, 1e-10);
  EXPECT_NEAR(r.total_var, 1.0, 0.02);
  EXPECT_NEAR(r.expected_cond_var, 0.19, 0.1 * 0.19);
}

TEST(TotalVariance, BinnedLorenzEnsembles) {
  for (double db : {0.0, 20.0}) {
    const auto sys = LorenzSystem::from_db(db);
    ASSERT_GT(sys.q, 0.0);
    Rng rng(14);
    const std::size_t n = 20000;
    MatrixD prev(n, 3), next(n, 3);
    Vec3 s = lorenz_initial_state(sys, rng);
    for (int k = 0; k < 200; ++k) s = lorenz_step(s, sys, rng);
    for (std::size_t i = 0; i < n; ++i) {
      s = lorenz_step(s, sys, rng);
      const Vec3 t = lorenz_step(s, sys, rng);
      prev.row(static_cast<Eigen::Index>(i)) = s.transpose();
      next.row(static_cast<Eigen::Index>(i)) = t.transpose();
    }
    const auto r = lotv_check(prev, next);
    EXPECT_LT(r.residual, 0.05 * r.total_var) << db;
    EXPECT_GT(r.expected_cond_var, 0.0);
    EXPECT_THROW(lotv_check(prev.topRows(10), next.topRows(10)), ValidationError);
    EXPECT_THROW(lotv_check(prev, next.topRows(10)), DimensionError);
  }
}

TEST(TheorySuite, AllRecordsPass) {
  const auto records = run_theory_suite(1);
  EXPECT_GE(records.size(), 12u);
  for (const auto& r : records) {
    EXPECT_TRUE(r.pass) << r.name;
    const auto j = to_json(r);
    EXPECT_EQ(j["case"], r.name);
    EXPECT_TRUE(j.contains("closed_form") && j.contains("empirical") && j.contains("bound"));
  }
}
