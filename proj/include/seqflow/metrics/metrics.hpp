#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "seqflow/core/error.hpp"
#include "seqflow/core/matrix.hpp"

namespace seqflow {

template <class T, class U>
double mse(std::span<const T> pred, std::span<const U> truth) {
  require_dim("mse shapes", truth.size(), pred.size());
  if (pred.empty()) throw ValidationError("mse of empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(truth[i]);
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

template <class T, class U>
double rmse(std::span<const T> pred, std::span<const U> truth) {
  return std::sqrt(mse(pred, truth));
}

inline double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
  return rmse(std::span<const double>(pred), std::span<const double>(truth));
}

// 10 log10(MSE); -infinity when the error is exactly zero.
inline double db_from_mse(double m) {
  if (m == 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(m);
}

template <class T, class U>
double log_mse_db(std::span<const T> pred, std::span<const U> truth) {
  return db_from_mse(mse(pred, truth));
}

// ES = E|X - y| - 1/2 E|X - X'| with |.| the L1 norm divided by the dimension.
// The second term averages over the m(m-1) ordered pairs with i != j.
// `samples` is m x d row-major.
template <class T, class U>
double energy_score(std::span<const T> samples, std::size_t m, std::span<const U> truth) {
  if (m < 2) throw ValidationError("energy score needs at least 2 samples");
  const std::size_t d = truth.size();
  require_dim("energy score samples", m * d, samples.size());
  double first = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < d; ++k) first += std::abs(static_cast<double>(samples[i * d + k]) - static_cast<double>(truth[k]));
  }
  first /= static_cast<double>(m * d);
  double pair = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      for (std::size_t k = 0; k < d; ++k) {
        pair += std::abs(static_cast<double>(samples[i * d + k]) - static_cast<double>(samples[j * d + k]));
      }
    }
  }
  pair = 2.0 * pair / static_cast<double>(m * (m - 1) * d);
  return first - 0.5 * pair;
}

inline double energy_score(const std::vector<double>& samples, std::size_t m, const std::vector<double>& truth) {
  return energy_score(std::span<const double>(samples), m, std::span<const double>(truth));
}

// Per lead index h: RMSE over all predictions. `preds` and `truths` hold
// n blocks of H x unit_dim values.
template <class T, class U>
std::vector<double> lead_time_curve(std::span<const T> preds, std::span<const U> truths, std::size_t horizon, std::size_t unit_dim) {
  require_dim("lead time shapes", truths.size(), preds.size());
  const std::size_t block = horizon * unit_dim;
  if (block == 0 || preds.size() % block != 0 || preds.empty()) {
    throw DimensionError("lead time input is not a whole number of H x d blocks", block, preds.size());
  }
  const std::size_t n = preds.size() / block;
  std::vector<double> out(horizon, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t h = 0; h < horizon; ++h) {
      for (std::size_t k = 0; k < unit_dim; ++k) {
        const std::size_t i = b * block + h * unit_dim + k;
        const double d = static_cast<double>(preds[i]) - static_cast<double>(truths[i]);
        out[h] += d * d;
      }
    }
  }
  for (auto& v : out) v = std::sqrt(v / static_cast<double>(n * unit_dim));
  return out;
}

// Sorted (quantile) coupling, exact in one dimension.
inline double w2_1d(std::vector<double> a, std::vector<double> b) {
  require_dim("w2_1d sample counts", a.size(), b.size());
  if (a.empty()) throw ValidationError("w2_1d of empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

// Exact W2 between two weighted atom sets on the line by merging their CDFs.
inline double w2_1d_weighted(std::vector<std::pair<double, double>> a, std::vector<std::pair<double, double>> b) {
  auto prepare = [](std::vector<std::pair<double, double>>& v, const char* what) {
    if (v.empty()) throw ValidationError(std::string(what) + " has no atoms");
    double total = 0.0;
    for (const auto& [x, w] : v) {
      if (!(w >= 0.0) || !std::isfinite(x)) throw ValidationError(std::string(what) + " has an invalid atom");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ValidationError(std::string(what) + " weights must sum to 1");
    std::sort(v.begin(), v.end());
  };
  prepare(a, "w2_1d_weighted first measure");
  prepare(b, "w2_1d_weighted second measure");
  std::size_t i = 0, j = 0;
  double ra = a[0].second, rb = b[0].second, s = 0.0;
  while (i < a.size() && j < b.size()) {
    const double m = std::min(ra, rb);
    s += m * (a[i].first - b[j].first) * (a[i].first - b[j].first);
    ra -= m;
    rb -= m;
    if (ra <= 1e-15 && ++i < a.size()) ra = a[i].second;
    if (rb <= 1e-15 && ++j < b.size()) rb = b[j].second;
  }
  return std::sqrt(s);
}

inline constexpr std::size_t kAssignmentCap = 512;

// Minimum-cost perfect matching on an n x n cost matrix (Hungarian method
// with potentials, O(n^3)). Returns the assignment row -> column.
inline std::vector<std::size_t> solve_assignment(const MatrixD& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  require_dim("assignment cost columns", n, static_cast<std::size_t>(cost.cols()));
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assign(n);
  for (std::size_t j = 1; j <= n; ++j) assign[p[j] - 1] = j - 1;
  return assign;
}

// Empirical W2 between equal-size point clouds (rows) by exact assignment.
inline double w2_exact_small(const MatrixD& a, const MatrixD& b) {
  require_dim("w2_exact_small point counts", static_cast<std::size_t>(a.rows()), static_cast<std::size_t>(b.rows()));
  require_dim("w2_exact_small dimensions", static_cast<std::size_t>(a.cols()), static_cast<std::size_t>(b.cols()));
  const auto n = static_cast<std::size_t>(a.rows());
  if (n == 0) throw ValidationError("w2_exact_small of empty point sets");
  if (n > kAssignmentCap) {
    throw ValidationError("w2_exact_small supports at most " + std::to_string(kAssignmentCap) + " points, got " + std::to_string(n));
  }
  MatrixD cost(a.rows(), a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) cost(i, j) = (a.row(i) - b.row(j)).squaredNorm();
  }
  const auto assign = solve_assignment(cost);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(assign[i]));
  return std::sqrt(s / static_cast<double>(n));
}

// Square root of a symmetric positive semidefinite matrix. Throws for
// asymmetric or indefinite input (tolerances relative to the largest entry).
inline MatrixD psd_sqrt(const MatrixD& m, const char* what) {
  if (m.rows() != m.cols()) throw DimensionError(std::string(what) + " must be square", static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  require_finite(m, what);
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) throw ValidationError(std::string(what) + " is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues();
  if (ev.minCoeff() < -1e-10 * scale) throw ValidationError(std::string(what) + " is not positive semidefinite");
  const Eigen::VectorXd root = ev.cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

// Bures-Wasserstein distance between N(mu1, s1) and N(mu2, s2).
inline double w2_gaussian(const VectorD& mu1, const MatrixD& s1, const VectorD& mu2, const MatrixD& s2) {
  const auto d = static_cast<std::size_t>(mu1.size());
  require_dim("w2_gaussian mean", d, static_cast<std::size_t>(mu2.size()));
  require_dim("w2_gaussian covariance", d, static_cast<std::size_t>(s1.rows()));
  require_dim("w2_gaussian covariance", d, static_cast<std::size_t>(s2.rows()));
  const MatrixD r2 = psd_sqrt(s2, "w2_gaussian second covariance");
  psd_sqrt(s1, "w2_gaussian first covariance");
  MatrixD cross = r2 * s1 * r2;
  cross = 0.5 * (cross + cross.transpose());
  const double tr_cross = psd_sqrt(cross, "w2_gaussian cross term").trace();
  const double w2sq = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * tr_cross;
  return std::sqrt(std::max(0.0, w2sq));
}

}  // namespace seqflow
