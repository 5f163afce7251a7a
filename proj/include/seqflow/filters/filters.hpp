#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "seqflow/core/error.hpp"
#include "seqflow/core/parallel.hpp"
#include "seqflow/core/rng.hpp"
#include "seqflow/dynamics/lorenz.hpp"

namespace seqflow {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// s' = f(s) + w, w ~ N(0, Q);  z = H s + v, v ~ N(0, R).
struct StateSpaceModel {
  std::function<VectorXd(const VectorXd&)> drift;
  MatrixXd q;
  MatrixXd h;
  MatrixXd r;

  std::size_t state_dim() const { return static_cast<std::size_t>(q.rows()); }
  std::size_t obs_dim() const { return static_cast<std::size_t>(h.rows()); }
};

inline StateSpaceModel lorenz_model(const LorenzSystem& sys) {
  StateSpaceModel m;
  const double delta = sys.delta;
  m.drift = [delta](const VectorXd& s) -> VectorXd { return lorenz_drift(Vec3(s), delta); };
  m.q = MatrixXd::Identity(3, 3) * sys.q * sys.q;
  m.h = sys.rotation;
  m.r = MatrixXd::Identity(3, 3) * sys.r * sys.r;
  return m;
}

inline StateSpaceModel linear_model(const MatrixXd& f, const MatrixXd& q, const MatrixXd& h, const MatrixXd& r) {
  StateSpaceModel m;
  m.drift = [f](const VectorXd& s) -> VectorXd { return f * s; };
  m.q = q;
  m.h = h;
  m.r = r;
  return m;
}

struct GaussianBelief {
  VectorXd mean;
  MatrixXd cov;
};

// Symmetrizes, then adds the smallest diagonal jitter (from 1e-12 of the mean
// variance, growing tenfold) that makes the covariance positive definite.
inline void stabilize(GaussianBelief& b) {
  b.cov = 0.5 * (b.cov + b.cov.transpose());
  if (!b.cov.allFinite() || !b.mean.allFinite()) throw NumericError("filter belief became non-finite");
  const double base = std::max(b.cov.trace() / static_cast<double>(b.cov.rows()), 1e-300);
  double jitter = 0.0;
  for (int attempt = 0; attempt < 12; ++attempt) {
    Eigen::LLT<MatrixXd> llt(b.cov + jitter * MatrixXd::Identity(b.cov.rows(), b.cov.cols()));
    if (llt.info() == Eigen::Success) {
      if (jitter > 0.0) b.cov.diagonal().array() += jitter;
      return;
    }
    jitter = jitter == 0.0 ? 1e-12 * base : jitter * 10.0;
  }
  throw NumericError("filter covariance is not positive definite after jitter");
}

namespace detail {

// Linear-Gaussian measurement update in Joseph form.
inline GaussianBelief linear_update(const GaussianBelief& prior, const VectorXd& z, const StateSpaceModel& m) {
  require_dim("observation", m.obs_dim(), static_cast<std::size_t>(z.size()));
  const MatrixXd s = m.h * prior.cov * m.h.transpose() + m.r;
  const MatrixXd k = s.ldlt().solve(m.h * prior.cov).transpose();
  const MatrixXd ikh = MatrixXd::Identity(prior.cov.rows(), prior.cov.cols()) - k * m.h;
  GaussianBelief post;
  post.mean = prior.mean + k * (z - m.h * prior.mean);
  post.cov = ikh * prior.cov * ikh.transpose() + k * m.r * k.transpose();
  stabilize(post);
  return post;
}

}  // namespace detail

inline constexpr double kJacobianStep = 1e-6;

// Central differences with step h in every coordinate.
inline MatrixXd numerical_jacobian(const std::function<VectorXd(const VectorXd&)>& f, const VectorXd& x, double h = kJacobianStep) {
  const VectorXd f0 = f(x);
  MatrixXd j(f0.size(), x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    VectorXd xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    j.col(k) = (f(xp) - f(xm)) / (xp[k] - xm[k]);
  }
  return j;
}

inline GaussianBelief ekf_predict(const GaussianBelief& b, const StateSpaceModel& m) {
  const MatrixXd j = numerical_jacobian(m.drift, b.mean);
  GaussianBelief p;
  p.mean = m.drift(b.mean);
  p.cov = j * b.cov * j.transpose() + m.q;
  stabilize(p);
  return p;
}

inline GaussianBelief ekf_step(const GaussianBelief& b, const VectorXd& z, const StateSpaceModel& m) {
  return detail::linear_update(ekf_predict(b, m), z, m);
}

// Measurement update only, for the first observation.
inline GaussianBelief filter_update(const GaussianBelief& prior, const VectorXd& z, const StateSpaceModel& m) {
  return detail::linear_update(prior, z, m);
}

struct UkfParams {
  double alpha = 0.1;
  double beta = 2.0;
  double kappa = 0.0;
};

struct SigmaWeights {
  std::vector<double> mean;
  std::vector<double> cov;
  double lambda = 0.0;
};

inline SigmaWeights sigma_weights(std::size_t n, const UkfParams& p = {}) {
  const double nd = static_cast<double>(n);
  SigmaWeights w;
  w.lambda = p.alpha * p.alpha * (nd + p.kappa) - nd;
  w.mean.assign(2 * n + 1, 1.0 / (2.0 * (nd + w.lambda)));
  w.cov = w.mean;
  w.mean[0] = w.lambda / (nd + w.lambda);
  w.cov[0] = w.mean[0] + (1.0 - p.alpha * p.alpha + p.beta);
  return w;
}

// Unscented prediction through the drift; the measurement model is linear,
// so the update is the exact linear-Gaussian one.
inline GaussianBelief ukf_predict(const GaussianBelief& b, const StateSpaceModel& m, const UkfParams& p = {}) {
  const auto n = static_cast<std::size_t>(b.mean.size());
  const auto w = sigma_weights(n, p);
  Eigen::LLT<MatrixXd> llt((static_cast<double>(n) + w.lambda) * b.cov);
  if (llt.info() != Eigen::Success) throw NumericError("ukf: covariance is not positive definite");
  const MatrixXd l = llt.matrixL();
  std::vector<VectorXd> pts;
  pts.reserve(2 * n + 1);
  pts.push_back(m.drift(b.mean));
  for (std::size_t i = 0; i < n; ++i) pts.push_back(m.drift(b.mean + l.col(static_cast<Eigen::Index>(i))));
  for (std::size_t i = 0; i < n; ++i) pts.push_back(m.drift(b.mean - l.col(static_cast<Eigen::Index>(i))));
  GaussianBelief out;
  out.mean = VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < pts.size(); ++i) out.mean += w.mean[i] * pts[i];
  out.cov = m.q;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const VectorXd d = pts[i] - out.mean;
    out.cov += w.cov[i] * d * d.transpose();
  }
  stabilize(out);
  return out;
}

inline GaussianBelief ukf_step(const GaussianBelief& b, const VectorXd& z, const StateSpaceModel& m, const UkfParams& p = {}) {
  return detail::linear_update(ukf_predict(b, m, p), z, m);
}

struct ParticleBelief {
  MatrixXd particles;  // n x d
  VectorXd weights;    // sums to 1
  double ess = 0.0;
  bool resampled = false;

  std::size_t size() const { return static_cast<std::size_t>(particles.rows()); }
  VectorXd mean() const { return particles.transpose() * weights; }
};

inline ParticleBelief particles_from(const GaussianBelief& b, std::size_t n, Rng& rng) {
  if (n < 2) throw ValidationError("particle filter needs n >= 2");
  Eigen::LLT<MatrixXd> llt(b.cov);
  if (llt.info() != Eigen::Success) throw NumericError("initial particle covariance is not positive definite");
  const MatrixXd l = llt.matrixL();
  ParticleBelief p;
  p.particles.resize(static_cast<Eigen::Index>(n), b.mean.size());
  for (Eigen::Index i = 0; i < p.particles.rows(); ++i) {
    VectorXd e(b.mean.size());
    for (Eigen::Index k = 0; k < e.size(); ++k) e[k] = rng.normal();
    p.particles.row(i) = (b.mean + l * e).transpose();
  }
  p.weights = VectorXd::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n));
  p.ess = static_cast<double>(n);
  return p;
}

// Systematic resampling: one uniform offset, n evenly spaced positions.
inline std::vector<std::size_t> systematic_resample(const VectorXd& weights, double u) {
  const auto n = static_cast<std::size_t>(weights.size());
  std::vector<std::size_t> idx(n);
  double cum = weights[0];
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = (static_cast<double>(i) + u) / static_cast<double>(n);
    while (pos > cum && j + 1 < n) cum += weights[static_cast<Eigen::Index>(++j)];
    idx[i] = j;
  }
  return idx;
}

namespace detail {

// Reweights by the Gaussian observation likelihood in the log domain.
inline void reweight(ParticleBelief& p, const VectorXd& z, const StateSpaceModel& m) {
  require_dim("observation", m.obs_dim(), static_cast<std::size_t>(z.size()));
  const auto n = static_cast<Eigen::Index>(p.size());
  const Eigen::LDLT<MatrixXd> rl(m.r);
  VectorXd logw(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const VectorXd resid = z - m.h * p.particles.row(i).transpose();
    logw[i] = std::log(p.weights[i]) - 0.5 * resid.dot(rl.solve(resid));
  }
  const double mx = logw.maxCoeff();
  if (!std::isfinite(mx)) {
    throw NumericError("particle filter: all weights are zero; increase the particle count (log-weights are already used)");
  }
  p.weights = (logw.array() - mx).exp();
  p.weights /= p.weights.sum();
  p.ess = 1.0 / p.weights.squaredNorm();
}

}  // namespace detail

// Resamples when the effective sample size drops below n/2.
inline void maybe_resample(ParticleBelief& p, Rng& rng) {
  const auto n = static_cast<double>(p.size());
  p.resampled = false;
  if (p.ess >= 0.5 * n) return;
  const auto idx = systematic_resample(p.weights, rng.uniform());
  MatrixXd next(p.particles.rows(), p.particles.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) next.row(static_cast<Eigen::Index>(i)) = p.particles.row(static_cast<Eigen::Index>(idx[i]));
  p.particles = std::move(next);
  p.weights.setConstant(1.0 / n);
  p.ess = n;
  p.resampled = true;
}

// Measurement update and optional resampling, for the first observation.
inline ParticleBelief pf_update(ParticleBelief p, const VectorXd& z, const StateSpaceModel& m, Rng& rng) {
  detail::reweight(p, z, m);
  maybe_resample(p, rng);
  return p;
}

// Propagates every particle through the stochastic dynamics, reweights, and
// resamples if needed. Particle i uses substream (draw, "particle", i) with
// `draw` taken from rng, so the result does not depend on thread count.
inline ParticleBelief pf_step(const ParticleBelief& b, const VectorXd& z, const StateSpaceModel& m, Rng& rng) {
  const auto n = b.size();
  if (n < 2) throw ValidationError("particle filter needs n >= 2");
  Eigen::LLT<MatrixXd> ql(m.q);
  const bool noisy = m.q.cwiseAbs().maxCoeff() > 0.0;
  if (noisy && ql.info() != Eigen::Success) throw NumericError("process noise covariance is not positive definite");
  const MatrixXd lq = noisy ? MatrixXd(ql.matrixL()) : MatrixXd::Zero(m.q.rows(), m.q.cols());
  const std::uint64_t draw = rng.next_u64();
  ParticleBelief p = b;
  auto move = [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    VectorXd s = m.drift(b.particles.row(r).transpose());
    if (noisy) {
      Rng pr(draw, "particle", i);
      VectorXd e(s.size());
      for (Eigen::Index k = 0; k < e.size(); ++k) e[k] = pr.normal();
      s += lq * e;
    }
    p.particles.row(r) = s.transpose();
  };
  if (n >= 4096) {
    const std::size_t blocks = (n + 1023) / 1024;
    parallel_for(blocks, [&](std::size_t blk) {
      for (std::size_t i = blk * 1024; i < std::min(n, (blk + 1) * 1024); ++i) move(i);
    });
  } else {
    for (std::size_t i = 0; i < n; ++i) move(i);
  }
  return pf_update(std::move(p), z, m, rng);
}

enum class FilterKind { ekf, ukf, pf, open_loop };

inline const char* to_string(FilterKind k) {
  switch (k) {
    case FilterKind::ekf: return "EKF";
    case FilterKind::ukf: return "UKF";
    case FilterKind::pf: return "PF";
    case FilterKind::open_loop: return "open_loop";
  }
  return "?";
}

// Filters one observation stream (T x obs_dim, time-major) from `prior`, the
// belief about the first state before its observation. Returns the posterior
// means, T x state_dim row-major. open_loop propagates the prior mean through
// the drift and ignores observations.
inline std::vector<double> run_filter(FilterKind kind, const StateSpaceModel& m, const GaussianBelief& prior,
                                      std::span<const float> observations, Rng& rng, std::size_t particles = 1000) {
  const std::size_t od = m.obs_dim();
  const std::size_t sd = m.state_dim();
  if (observations.size() % od != 0) throw DimensionError("observation stream", od, observations.size() % od);
  const std::size_t steps = observations.size() / od;
  std::vector<double> out(steps * sd);
  auto obs = [&](std::size_t t) {
    VectorXd z(static_cast<Eigen::Index>(od));
    for (std::size_t k = 0; k < od; ++k) z[static_cast<Eigen::Index>(k)] = observations[t * od + k];
    return z;
  };
  auto store = [&](std::size_t t, const VectorXd& mean) {
    for (std::size_t k = 0; k < sd; ++k) out[t * sd + k] = mean[static_cast<Eigen::Index>(k)];
  };
  if (kind == FilterKind::pf) {
    ParticleBelief p = pf_update(particles_from(prior, particles, rng), obs(0), m, rng);
    store(0, p.mean());
    for (std::size_t t = 1; t < steps; ++t) {
      p = pf_step(p, obs(t), m, rng);
      store(t, p.mean());
    }
    return out;
  }
  if (kind == FilterKind::open_loop) {
    VectorXd s = prior.mean;
    for (std::size_t t = 0; t < steps; ++t) {
      if (t > 0) s = m.drift(s);
      store(t, s);
    }
    return out;
  }
  GaussianBelief b = filter_update(prior, obs(0), m);
  store(0, b.mean);
  for (std::size_t t = 1; t < steps; ++t) {
    b = kind == FilterKind::ekf ? ekf_step(b, obs(t), m) : ukf_step(b, obs(t), m);
    store(t, b.mean);
  }
  return out;
}

}  // namespace seqflow
