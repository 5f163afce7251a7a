#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <nlohmann/json.hpp>

#include "seqflow/core/error.hpp"
#include "seqflow/core/matrix.hpp"
#include "seqflow/core/rng.hpp"
#include "seqflow/metrics/metrics.hpp"

namespace seqflow {

// x_{t-1} ~ N(mu_prev, sigma_prev), x_t | x_{t-1} ~ N(A x_{t-1} + b, Q).
struct GaussianChain {
  VectorD mu_prev;
  MatrixD sigma_prev;
  MatrixD a;
  VectorD b;
  MatrixD q;

  std::size_t dim() const { return static_cast<std::size_t>(mu_prev.size()); }
  VectorD marginal_mean() const { return a * mu_prev + b; }
  MatrixD pushforward_cov() const { return a * sigma_prev * a.transpose(); }  // Var E[x_t | x_{t-1}]
  MatrixD marginal_cov() const { return pushforward_cov() + q; }

  static GaussianChain make(VectorD mu_prev, MatrixD sigma_prev, MatrixD a, VectorD b, MatrixD q) {
    GaussianChain c{std::move(mu_prev), std::move(sigma_prev), std::move(a), std::move(b), std::move(q)};
    const auto d = c.dim();
    require_dim("chain prior covariance", d, static_cast<std::size_t>(c.sigma_prev.rows()));
    require_dim("chain prior covariance", d, static_cast<std::size_t>(c.sigma_prev.cols()));
    require_dim("chain dynamics rows", d, static_cast<std::size_t>(c.a.rows()));
    require_dim("chain dynamics cols", d, static_cast<std::size_t>(c.a.cols()));
    require_dim("chain offset", d, static_cast<std::size_t>(c.b.size()));
    require_dim("chain noise covariance", d, static_cast<std::size_t>(c.q.rows()));
    require_dim("chain noise covariance", d, static_cast<std::size_t>(c.q.cols()));
    psd_sqrt(c.sigma_prev, "chain prior covariance");
    psd_sqrt(c.q, "chain noise covariance");
    // Total variance from the joint covariance block against the decomposition.
    MatrixD joint(2 * d, 2 * d);
    const auto n = static_cast<Eigen::Index>(d);
    joint.topLeftCorner(n, n) = c.sigma_prev;
    joint.topRightCorner(n, n) = c.sigma_prev * c.a.transpose();
    joint.bottomLeftCorner(n, n) = c.a * c.sigma_prev;
    joint.bottomRightCorner(n, n) = c.a * c.sigma_prev * c.a.transpose() + c.q;
    const double resid = (joint.bottomRightCorner(n, n) - (c.q + c.pushforward_cov())).cwiseAbs().maxCoeff();
    if (resid > 1e-12 * std::max(1.0, joint.cwiseAbs().maxCoeff())) throw NumericError("chain variance decomposition failed");
    return c;
  }

  // 1-D chain with unit marginal variance: A = rho, Q = 1 - rho^2.
  static GaussianChain unit_ar1(double rho) {
    if (!(std::abs(rho) <= 1.0)) throw ValidationError("rho must lie in [-1, 1]");
    return make(VectorD::Zero(1), MatrixD::Identity(1, 1), MatrixD::Constant(1, 1, rho), VectorD::Zero(1),
                MatrixD::Constant(1, 1, 1.0 - rho * rho));
  }
};

// Closed-form one-step errors of the two couplings against the marginal of x_t.
struct Prop1Report {
  double w2_gaussian_coupling = 0.0;  // pushforward is the Dirac at E[x_t]
  double w2_bayes_coupling = 0.0;     // pushforward is N(E x_t, A Sigma A^T)
  double bayes_bound = 0.0;           // sqrt(E Var(x_t | x_{t-1})) = sqrt(tr Q)
  double gap = 0.0;                   // w2_gaussian^2 - bayes_bound^2
  double lotv_gap = 0.0;              // tr Var E[x_t | x_{t-1}]
};

inline Prop1Report prop1_gaussian_report(const GaussianChain& c) {
  Prop1Report r;
  const MatrixD marginal = c.marginal_cov();
  const VectorD m = c.marginal_mean();
  r.w2_gaussian_coupling = std::sqrt(marginal.trace());
  r.w2_bayes_coupling = w2_gaussian(m, c.pushforward_cov(), m, marginal);
  r.bayes_bound = std::sqrt(c.q.trace());
  r.gap = marginal.trace() - c.q.trace();
  r.lotv_gap = c.pushforward_cov().trace();
  return r;
}

// Joint pmf over (x0, x1) with p(i, j) = P(x0 = x0_values[i], x1 = x1_values[j]).
struct DiscreteJoint {
  std::vector<double> x0_values;
  std::vector<double> x1_values;
  MatrixD p;

  static DiscreteJoint make(std::vector<double> x0, std::vector<double> x1, MatrixD p) {
    if (x0.empty() || x1.empty() || x0.size() > 64 || x1.size() > 64) throw ValidationError("joint support sizes must be in [1, 64]");
    require_dim("joint rows", x0.size(), static_cast<std::size_t>(p.rows()));
    require_dim("joint cols", x1.size(), static_cast<std::size_t>(p.cols()));
    if (p.minCoeff() < 0.0) throw ValidationError("joint probabilities must be nonnegative");
    if (std::abs(p.sum() - 1.0) > 1e-12) throw ValidationError("joint probabilities must sum to 1");
    return {std::move(x0), std::move(x1), std::move(p)};
  }

  std::vector<std::pair<double, double>> x0_marginal() const {
    std::vector<std::pair<double, double>> out;
    for (Eigen::Index i = 0; i < p.rows(); ++i) out.emplace_back(x0_values[static_cast<std::size_t>(i)], p.row(i).sum());
    return out;
  }

  double x0_variance() const {
    double m = 0.0, s = 0.0;
    for (const auto& [x, w] : x0_marginal()) m += w * x;
    for (const auto& [x, w] : x0_marginal()) s += w * (x - m) * (x - m);
    return s;
  }

  // E_{x1} Var(x0 | x1).
  double expected_conditional_variance() const {
    double total = 0.0;
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const double pj = p.col(j).sum();
      if (pj <= 0.0) continue;
      double m = 0.0, s = 0.0;
      for (Eigen::Index i = 0; i < p.rows(); ++i) m += p(i, j) * x0_values[static_cast<std::size_t>(i)];
      m /= pj;
      for (Eigen::Index i = 0; i < p.rows(); ++i) s += p(i, j) * std::pow(x0_values[static_cast<std::size_t>(i)] - m, 2);
      total += s;
    }
    return total;
  }
};

// Law of the one-step estimate E[x0 | x1]: one atom per x1 support point with
// positive probability.
inline std::vector<std::pair<double, double>> one_step_pushforward(const DiscreteJoint& joint) {
  std::vector<std::pair<double, double>> atoms;
  for (Eigen::Index j = 0; j < joint.p.cols(); ++j) {
    const double pj = joint.p.col(j).sum();
    if (pj <= 0.0) continue;
    double m = 0.0;
    for (Eigen::Index i = 0; i < joint.p.rows(); ++i) m += joint.p(i, j) * joint.x0_values[static_cast<std::size_t>(i)];
    atoms.emplace_back(m / pj, pj);
  }
  double total = 0.0;
  for (const auto& a : atoms) total += a.second;
  for (auto& a : atoms) a.second /= total;
  return atoms;
}

struct LotvReport {
  double total_var = 0.0;
  double expected_cond_var = 0.0;
  double var_cond_mean = 0.0;
  double residual = 0.0;
};

inline LotvReport lotv_check(const GaussianChain& c) {
  LotvReport r;
  r.total_var = c.marginal_cov().trace();
  r.expected_cond_var = c.q.trace();
  r.var_cond_mean = c.pushforward_cov().trace();
  r.residual = std::abs(r.total_var - (r.expected_cond_var + r.var_cond_mean));
  return r;
}

inline LotvReport lotv_check(const DiscreteJoint& joint) {
  LotvReport r;
  r.total_var = joint.x0_variance();
  r.expected_cond_var = joint.expected_conditional_variance();
  double mean = 0.0;
  for (const auto& [x, w] : joint.x0_marginal()) mean += w * x;
  for (const auto& [x, w] : one_step_pushforward(joint)) r.var_cond_mean += w * (x - mean) * (x - mean);
  r.residual = std::abs(r.total_var - (r.expected_cond_var + r.var_cond_mean));
  return r;
}

// Sampled version: conditional moments of x_t given x_{t-1} are estimated by
// binning the first coordinate of x_{t-1} into `bins` equal-count bins.
// Variances are traces over the coordinates of x_t.
inline LotvReport lotv_check(const MatrixD& x_prev, const MatrixD& x_next, std::size_t bins = 32) {
  require_dim("lotv sample counts", static_cast<std::size_t>(x_prev.rows()), static_cast<std::size_t>(x_next.rows()));
  const auto n = static_cast<std::size_t>(x_prev.rows());
  if (n < bins || bins < 1) throw ValidationError("lotv check needs at least one sample per bin");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return x_prev(static_cast<Eigen::Index>(i), 0) < x_prev(static_cast<Eigen::Index>(j), 0);
  });
  const Eigen::RowVectorXd mean = x_next.colwise().mean();
  LotvReport r;
  for (Eigen::Index i = 0; i < x_next.rows(); ++i) r.total_var += (x_next.row(i) - mean).squaredNorm();
  r.total_var /= static_cast<double>(n);
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t lo = b * n / bins;
    const std::size_t hi = (b + 1) * n / bins;
    Eigen::RowVectorXd bm = Eigen::RowVectorXd::Zero(x_next.cols());
    for (std::size_t k = lo; k < hi; ++k) bm += x_next.row(static_cast<Eigen::Index>(order[k]));
    bm /= static_cast<double>(hi - lo);
    double within = 0.0;
    for (std::size_t k = lo; k < hi; ++k) within += (x_next.row(static_cast<Eigen::Index>(order[k])) - bm).squaredNorm();
    r.expected_cond_var += within / static_cast<double>(n);
    r.var_cond_mean += static_cast<double>(hi - lo) / static_cast<double>(n) * (bm - mean).squaredNorm();
  }
  r.residual = std::abs(r.total_var - (r.expected_cond_var + r.var_cond_mean));
  return r;
}

struct Prop1Empirical {
  Prop1Report closed_form;
  double w2_gaussian_coupling = 0.0;
  double w2_bayes_coupling = 0.0;
  double bound_sq = 0.0;     // mean |x_t - E[x_t | x_{t-1}]|^2
  double bound_sq_se = 0.0;  // its standard error
};

// Samples the chain and measures both one-step rules. Prior draws are
// stratified normal quantiles and process noise comes in antithetic pairs,
// which keeps the Monte-Carlo error of the W2 estimates far below the 1/sqrt(n)
// rate of plain sampling. 1-D chains use the sorted estimator; higher
// dimensions average squared exact-assignment distances over 512-point blocks.
inline Prop1Empirical prop1_empirical_check(const GaussianChain& c, std::size_t n, Rng& rng) {
  if (n < 2) throw ValidationError("empirical check needs at least 2 samples");
  const auto d = static_cast<Eigen::Index>(c.dim());
  Prop1Empirical out;
  out.closed_form = prop1_gaussian_report(c);
  const MatrixD lp = psd_sqrt(c.sigma_prev, "chain prior covariance");
  const MatrixD lq = psd_sqrt(c.q, "chain noise covariance");
  const boost::math::normal_distribution<double> std_normal;
  MatrixD prev(static_cast<Eigen::Index>(n), d), next(static_cast<Eigen::Index>(n), d), pred(static_cast<Eigen::Index>(n), d);
  std::vector<std::size_t> perm(n);
  for (Eigen::Index k = 0; k < d; ++k) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    if (k > 0) std::shuffle(perm.begin(), perm.end(), rng.engine());
    for (std::size_t i = 0; i < n; ++i) {
      const double u = (static_cast<double>(perm[i]) + 0.5) / static_cast<double>(n);
      prev(static_cast<Eigen::Index>(i), k) = boost::math::quantile(std_normal, u);
    }
  }
  Eigen::VectorXd xi(d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const VectorD x = c.mu_prev + lp * prev.row(r).transpose();
    prev.row(r) = x.transpose();
    pred.row(r) = (c.a * x + c.b).transpose();
    if (i % 2 == 0) {
      for (Eigen::Index k = 0; k < d; ++k) xi[k] = rng.normal();
    } else {
      xi = -xi;
    }
    next.row(r) = pred.row(r) + (lq * xi).transpose();
  }
  const Eigen::RowVectorXd mean = c.marginal_mean().transpose();
  double g = 0.0;
  std::vector<double> resid(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    g += (next.row(r) - mean).squaredNorm();
    resid[i] = (next.row(r) - pred.row(r)).squaredNorm();
  }
  out.w2_gaussian_coupling = std::sqrt(g / static_cast<double>(n));
  const double rm = std::accumulate(resid.begin(), resid.end(), 0.0) / static_cast<double>(n);
  double rv = 0.0;
  for (double v : resid) rv += (v - rm) * (v - rm);
  out.bound_sq = rm;
  out.bound_sq_se = std::sqrt(rv / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
  if (d == 1) {
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = pred(static_cast<Eigen::Index>(i), 0);
      b[i] = next(static_cast<Eigen::Index>(i), 0);
    }
    out.w2_bayes_coupling = w2_1d(std::move(a), std::move(b));
  } else {
    const std::size_t block = std::min<std::size_t>(kAssignmentCap, n);
    const std::size_t blocks = n / block;
    double s = 0.0;
    for (std::size_t k = 0; k < blocks; ++k) {
      const auto lo = static_cast<Eigen::Index>(k * block);
      const auto len = static_cast<Eigen::Index>(block);
      const double w = w2_exact_small(pred.middleRows(lo, len), next.middleRows(lo, len));
      s += w * w;
    }
    out.w2_bayes_coupling = std::sqrt(s / static_cast<double>(blocks));
  }
  return out;
}

// One line of a verification report.
struct VerificationRecord {
  std::string name;
  double closed_form = 0.0;
  std::optional<double> empirical;
  std::optional<double> bound;
  bool pass = false;
};

inline nlohmann::json to_json(const VerificationRecord& r) {
  nlohmann::json j = {{"case", r.name}, {"closed_form", r.closed_form}, {"pass", r.pass}};
  j["empirical"] = r.empirical ? nlohmann::json(*r.empirical) : nlohmann::json(nullptr);
  j["bound"] = r.bound ? nlohmann::json(*r.bound) : nlohmann::json(nullptr);
  return j;
}

// The standard suite: Gaussian chain closed forms and sampled checks, the
// discrete bound cases and the variance decomposition.
inline std::vector<VerificationRecord> run_theory_suite(std::uint64_t seed, std::size_t n_samples = 100000) {
  std::vector<VerificationRecord> out;
  auto rel = [](double a, double b) { return std::abs(a - b) <= 0.02 * std::abs(b); };

  const auto chain = GaussianChain::unit_ar1(0.9);
  const auto cf = prop1_gaussian_report(chain);
  out.push_back({"ar1_rho0.9_w2_gaussian_closed_form", cf.w2_gaussian_coupling, std::nullopt, std::nullopt,
                 std::abs(cf.w2_gaussian_coupling - 1.0) < 1e-12});
  out.push_back({"ar1_rho0.9_w2_bayes_closed_form", cf.w2_bayes_coupling, std::nullopt, cf.bayes_bound,
                 std::abs(cf.w2_bayes_coupling - 0.1) < 1e-12 && cf.w2_bayes_coupling <= cf.bayes_bound});
  out.push_back({"ar1_rho0.9_squared_gap", cf.gap, std::nullopt, std::nullopt,
                 std::abs(cf.gap - 0.81) < 1e-12 && std::abs(cf.gap - cf.lotv_gap) < 1e-12});

  Rng rng(seed, "theory-empirical");
  const auto emp = prop1_empirical_check(chain, n_samples, rng);
  out.push_back({"ar1_rho0.9_w2_gaussian_empirical", cf.w2_gaussian_coupling, emp.w2_gaussian_coupling, std::nullopt,
                 rel(emp.w2_gaussian_coupling, cf.w2_gaussian_coupling)});
  out.push_back({"ar1_rho0.9_w2_bayes_empirical", cf.w2_bayes_coupling, emp.w2_bayes_coupling, std::nullopt,
                 rel(emp.w2_bayes_coupling, cf.w2_bayes_coupling)});
  const double bound_sq = cf.bayes_bound * cf.bayes_bound;
  out.push_back({"ar1_rho0.9_bayes_bound_empirical", bound_sq, emp.w2_bayes_coupling * emp.w2_bayes_coupling,
                 bound_sq + 3.0 * emp.bound_sq_se,
                 emp.w2_bayes_coupling * emp.w2_bayes_coupling <= bound_sq + 3.0 * emp.bound_sq_se});

  const auto flat = prop1_gaussian_report(GaussianChain::unit_ar1(0.0));
  out.push_back({"ar1_rho0_equal_errors", flat.w2_gaussian_coupling, flat.w2_bayes_coupling, std::nullopt,
                 std::abs(flat.w2_gaussian_coupling - flat.w2_bayes_coupling) < 1e-12});
  const auto det = prop1_gaussian_report(GaussianChain::make(VectorD::Zero(1), MatrixD::Identity(1, 1), MatrixD::Identity(1, 1),
                                                            VectorD::Zero(1), MatrixD::Zero(1, 1)));
  out.push_back({"deterministic_dynamics_exact_recovery", det.w2_bayes_coupling, std::nullopt, std::nullopt,
                 det.w2_bayes_coupling < 1e-12});

  MatrixD p(2, 2);
  p << 0.4, 0.1, 0.1, 0.4;
  const auto joint = DiscreteJoint::make({0.0, 1.0}, {0.0, 1.0}, p);
  const double w2sq = std::pow(w2_1d_weighted(one_step_pushforward(joint), joint.x0_marginal()), 2);
  const double ecv = joint.expected_conditional_variance();
  out.push_back({"discrete_2x2_variance_bound", ecv, w2sq, ecv, w2sq <= ecv + 1e-12});

  MatrixD ind(2, 2);
  ind << 0.25, 0.25, 0.25, 0.25;
  const auto indep = DiscreteJoint::make({0.0, 1.0}, {0.0, 1.0}, ind);
  const double w2i = std::pow(w2_1d_weighted(one_step_pushforward(indep), indep.x0_marginal()), 2);
  out.push_back({"discrete_independent_tight", indep.x0_variance(), w2i, indep.expected_conditional_variance(),
                 std::abs(w2i - indep.x0_variance()) < 1e-12});

  const auto lg = lotv_check(chain);
  out.push_back({"lotv_gaussian_chain", lg.total_var, lg.expected_cond_var + lg.var_cond_mean, std::nullopt, lg.residual < 1e-10});
  const auto ld = lotv_check(joint);
  out.push_back({"lotv_discrete_joint", ld.total_var, ld.expected_cond_var + ld.var_cond_mean, std::nullopt, ld.residual < 1e-12});
  return out;
}

}  // namespace seqflow
