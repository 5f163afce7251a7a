#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "seqflow/core/error.hpp"
#include "seqflow/core/matrix.hpp"
#include "seqflow/core/rng.hpp"

namespace seqflow {

// Viscous Burgers on [0,1] with zero Dirichlet boundaries:
//   du/dt = -u du/dx + nu d2u/dx2 + a(x, t).
struct BurgersSystem {
  double nu = 0.01;
  std::size_t grid = 64;
  double dt = 0.0;  // set by make()
  std::size_t substeps = 4;
  std::size_t forcing_modes = 2;
  std::size_t forcing_max_wavenumber = 4;
  double forcing_std = 0.1;
  std::size_t init_modes = 4;
  double init_scale = 0.5;
  std::size_t observed = 32;

  double dx() const { return 1.0 / static_cast<double>(grid - 1); }
  double stability_limit() const { return 0.4 * dx() * dx() / nu; }

  // dt = `fraction` of the diffusive limit dx^2/nu (default 0.25).
  static BurgersSystem make(double nu = 0.01, std::size_t grid = 64, std::size_t substeps = 4, double fraction = 0.25) {
    if (!(nu > 0.0)) throw ValidationError("burgers nu must be positive");
    if (grid < 3) throw ValidationError("burgers grid must have >= 3 points");
    if (substeps < 1) throw ValidationError("burgers substeps must be >= 1");
    BurgersSystem s;
    s.nu = nu;
    s.grid = grid;
    s.substeps = substeps;
    s.observed = grid / 2;
    s.dt = fraction * s.dx() * s.dx() / nu;
    if (s.dt > s.stability_limit()) throw ValidationError("burgers dt violates dt <= 0.4 dx^2 / nu");
    return s;
  }
};

namespace detail {

// Semi-discrete right-hand side: upwind convection, central diffusion,
// forcing; zero at the boundaries.
inline void burgers_rhs(const std::vector<double>& u, const std::vector<double>& a, const BurgersSystem& sys,
                        std::vector<double>& out) {
  const std::size_t n = sys.grid;
  const double dx = sys.dx();
  const double diff = sys.nu / (dx * dx);
  out[0] = 0.0;
  out[n - 1] = 0.0;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double ui = u[i];
    const double conv = ui >= 0.0 ? ui * (ui - u[i - 1]) / dx : ui * (u[i + 1] - ui) / dx;
    out[i] = -conv + diff * (u[i + 1] - 2.0 * ui + u[i - 1]) + a[i];
  }
}

// One strong-stability-preserving RK2 (Heun) step: the average of u and two
// chained forward-Euler steps.
inline void burgers_substep(std::vector<double>& u, std::vector<double>& stage, std::vector<double>& rhs,
                            const std::vector<double>& a, const BurgersSystem& sys, double dt) {
  const std::size_t n = sys.grid;
  burgers_rhs(u, a, sys, rhs);
  for (std::size_t i = 0; i < n; ++i) stage[i] = u[i] + dt * rhs[i];
  burgers_rhs(stage, a, sys, rhs);
  for (std::size_t i = 0; i < n; ++i) u[i] = 0.5 * u[i] + 0.5 * (stage[i] + dt * rhs[i]);
  u[0] = 0.0;
  u[n - 1] = 0.0;
}

}  // namespace detail

// Advances one observation frame: `substeps` explicit SSP-RK2 steps of size
// dt with forcing held fixed over the frame. `refine` > 1 splits each step
// into that many smaller ones over the same frame time.
inline std::vector<double> burgers_step(const std::vector<double>& u, const std::vector<double>& a, const BurgersSystem& sys,
                                        std::size_t refine = 1) {
  require_dim("burgers state", sys.grid, u.size());
  require_dim("burgers forcing", sys.grid, a.size());
  if (u.front() != 0.0 || u.back() != 0.0) throw ValidationError("burgers boundary values must be zero");
  if (refine < 1) throw ValidationError("burgers refinement factor must be >= 1");
  std::vector<double> cur = u;
  std::vector<double> stage(sys.grid, 0.0), rhs(sys.grid, 0.0);
  const double dt = sys.dt / static_cast<double>(refine);
  const std::size_t steps = sys.substeps * refine;
  for (std::size_t k = 0; k < steps; ++k) {
    detail::burgers_substep(cur, stage, rhs, a, sys, dt);
    for (std::size_t i = 0; i < sys.grid; ++i) {
      if (!(std::abs(cur[i]) <= 1e3)) throw NumericError("burgers integration became unstable", static_cast<std::ptrdiff_t>(i));
    }
  }
  return cur;
}

// Left half of the grid; the forcing is never observed.
inline std::vector<double> mask_burgers_observation(const std::vector<double>& u, const BurgersSystem& sys) {
  require_dim("burgers state", sys.grid, u.size());
  return {u.begin(), u.begin() + static_cast<std::ptrdiff_t>(sys.observed)};
}

inline std::vector<double> sine_mode(const BurgersSystem& sys, double wavenumber, double amplitude) {
  std::vector<double> out(sys.grid);
  for (std::size_t i = 0; i < sys.grid; ++i) {
    out[i] = amplitude * std::sin(wavenumber * std::numbers::pi * static_cast<double>(i) * sys.dx());
  }
  out.front() = 0.0;
  out.back() = 0.0;
  return out;
}

// Sum of `forcing_modes` sine modes with wavenumbers drawn from
// 1..forcing_max_wavenumber and N(0, forcing_std^2) amplitudes.
inline std::vector<double> burgers_forcing(const BurgersSystem& sys, Rng& rng) {
  std::vector<double> a(sys.grid, 0.0);
  for (std::size_t m = 0; m < sys.forcing_modes; ++m) {
    const double k = static_cast<double>(1 + rng.below(sys.forcing_max_wavenumber));
    const auto mode = sine_mode(sys, k, sys.forcing_std * rng.normal());
    for (std::size_t i = 0; i < sys.grid; ++i) a[i] += mode[i];
  }
  return a;
}

// sum_k c_k sin(k pi x), c_k ~ N(0, (init_scale / k)^2).
inline std::vector<double> burgers_initial_state(const BurgersSystem& sys, Rng& rng) {
  std::vector<double> u(sys.grid, 0.0);
  for (std::size_t k = 1; k <= sys.init_modes; ++k) {
    const auto mode = sine_mode(sys, static_cast<double>(k), sys.init_scale / static_cast<double>(k) * rng.normal());
    for (std::size_t i = 0; i < sys.grid; ++i) u[i] += mode[i];
  }
  return u;
}

}  // namespace seqflow
