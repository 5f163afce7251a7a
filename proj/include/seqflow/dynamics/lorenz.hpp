#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "seqflow/core/error.hpp"
#include "seqflow/core/matrix.hpp"
#include "seqflow/core/rng.hpp"

namespace seqflow {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Measurement uncertainty expressed as 10 log10(1/r^2).
struct NoiseLevel {
  double db = 0.0;

  double r() const { return std::pow(10.0, -db / 20.0); }
  static NoiseLevel from_r(double r) {
    if (!(r > 0.0) || !std::isfinite(r)) throw ValidationError("observation noise std must be positive and finite");
    return {-20.0 * std::log10(r)};
  }
};

// Rotation by `deg` degrees about z (yaw), y (pitch) and x (roll), composed
// as Rz * Ry * Rx.
inline Mat3 yaw_pitch_roll(double yaw_deg, double pitch_deg, double roll_deg) {
  const double k = std::numbers::pi / 180.0;
  const Mat3 rz = Eigen::AngleAxisd(yaw_deg * k, Vec3::UnitZ()).toRotationMatrix();
  const Mat3 ry = Eigen::AngleAxisd(pitch_deg * k, Vec3::UnitY()).toRotationMatrix();
  const Mat3 rx = Eigen::AngleAxisd(roll_deg * k, Vec3::UnitX()).toRotationMatrix();
  return rz * ry * rx;
}

struct LorenzSystem {
  double delta = 0.02;
  double r = 1.0;
  double q = 0.1;
  Mat3 rotation = Mat3::Identity();

  // q is tied to r at construction.
  static LorenzSystem make(double r, double delta = 0.02, const Mat3& rotation = yaw_pitch_roll(10, 10, 10)) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw ValidationError("lorenz r must be finite and >= 0");
    if (!(delta >= 0.0) || !std::isfinite(delta)) throw ValidationError("lorenz delta must be finite and >= 0");
    if ((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-10 || rotation.determinant() < 0) {
      throw ValidationError("lorenz observation map must be a proper rotation");
    }
    return {delta, r, r / 10.0, rotation};
  }

  static LorenzSystem from_db(double db, double delta = 0.02) { return make(NoiseLevel{db}.r(), delta); }
};

inline Mat3 lorenz_generator(const Vec3& s) {
  Mat3 a;
  a << -10.0, 10.0, 0.0,
       28.0, -1.0, -s[0],
       0.0, s[0], -8.0 / 3.0;
  return a;
}

// exp(M) by scaling and squaring: the argument is halved until its 1-norm is
// at most 1/2, summed as a Taylor series to machine precision, then squared
// back up.
inline Mat3 expm(const Mat3& m) {
  const double norm = m.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const Mat3 x = m / std::ldexp(1.0, squarings);
  Mat3 sum = Mat3::Identity();
  Mat3 term = Mat3::Identity();
  for (int k = 1; k <= 30; ++k) {
    term = term * x / static_cast<double>(k);
    sum += term;
    if (term.cwiseAbs().maxCoeff() < 1e-18 * sum.cwiseAbs().maxCoeff()) break;
  }
  for (int i = 0; i < squarings; ++i) sum = sum * sum;
  return sum;
}

inline Mat3 lorenz_transition_matrix(const Vec3& s, double delta) {
  if (!s.allFinite()) throw NumericError("lorenz state is not finite");
  if (delta == 0.0) return Mat3::Identity();
  return expm(lorenz_generator(s) * delta);
}

// Noise-free part of the transition, F(s) s.
inline Vec3 lorenz_drift(const Vec3& s, double delta) { return lorenz_transition_matrix(s, delta) * s; }

inline Vec3 lorenz_step(const Vec3& s, const LorenzSystem& sys, Rng& rng) {
  Vec3 out = lorenz_drift(s, sys.delta);
  if (sys.q > 0.0) {
    for (int i = 0; i < 3; ++i) out[i] += sys.q * rng.normal();
  }
  return out;
}

inline Vec3 observe_lorenz(const Vec3& s, const LorenzSystem& sys, Rng& rng) {
  if (!s.allFinite()) throw NumericError("lorenz state is not finite");
  Vec3 z = sys.rotation * s;
  if (sys.r > 0.0) {
    for (int i = 0; i < 3; ++i) z[i] += sys.r * rng.normal();
  }
  return z;
}

// A point near the attractor: random start, then `burn_in` noisy steps.
inline Vec3 lorenz_initial_state(const LorenzSystem& sys, Rng& rng, int burn_in = 200) {
  Vec3 s(1.0 + 5.0 * rng.normal(), 1.0 + 5.0 * rng.normal(), 25.0 + 5.0 * rng.normal());
  for (int i = 0; i < burn_in; ++i) s = lorenz_step(s, sys, rng);
  return s;
}

}  // namespace seqflow
