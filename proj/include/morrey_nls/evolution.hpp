#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "morrey_nls/core.hpp"
#include "morrey_nls/field_grid.hpp"
#include "morrey_nls/function_spaces.hpp"
#include "morrey_nls/stationary_states.hpp"

// Split-step integrator for i u_t + Lap u = -|u|^{2a} u (focusing by default),
// scattering-size bookkeeping, an integral-equation residual, and classifier
// heuristics for the long-time behavior of a finished run.

namespace morrey_nls {

enum class FlowStatus { running, scattered_like, soliton_like, blowup_like, inconclusive };

inline const char* flow_status_name(FlowStatus s) {
  switch (s) {
    case FlowStatus::running: return "running";
    case FlowStatus::scattered_like: return "scattered-like";
    case FlowStatus::soliton_like: return "soliton-like";
    case FlowStatus::blowup_like: return "blowup-like";
    case FlowStatus::inconclusive: return "inconclusive";
  }
  return "unknown";
}

struct SolverConfig {
  double alpha = 1.0;
  double dt = 1e-3;
  double t_end = 1.0;
  int splitting_order = 2;  // Strang; the only supported order
  std::size_t snapshot_stride = 32;
  double blowup_amp_cap = 1e3;
  // plateau test threshold on the rooted cumulative scattering size over the
  // last third of the run
  double scatter_S_plateau_tol = 0.05;
  bool defocusing = false;
  bool disable_nonlinearity = false;
  // p >= 1 turns on the dyadic-size band check inside classify()
  MorreySpec size_spec{0.0, 0.0, 0.0, {0, 0, 0}};
};

struct Trajectory {
  std::vector<double> times;       // strictly increasing
  std::vector<GridField> fields;   // physical snapshots
  std::vector<double> mass;        // per snapshot
  std::vector<double> energy;      // per snapshot
  std::vector<double> S_cumulative;  // rooted, non-decreasing
  FlowStatus status = FlowStatus::running;
  SolverConfig cfg;
};

// e^{is Lap} as the frequency multiplier e^{-is|xi|^2}; preserves the
// representation of the input.
inline GridField free_propagate(const GridField& f, double s) {
  check_field(f);
  const bool physical_in = (f.space == Space::Physical);
  GridField F = physical_in ? to_fourier(f) : f;
  std::vector<std::size_t> idx(F.dim, 0);
  const std::size_t n = F.n_per_axis;
  for (std::size_t flat = 0; flat < F.total(); ++flat) {
    double xi2 = 0.0;
    for (int axis = 0; axis < F.dim; ++axis) xi2 += sq(F.coord(idx[axis]));
    F.values[flat] *= std::polar(1.0, -s * xi2);
    for (int axis = F.dim - 1; axis >= 0; --axis) {
      if (++idx[axis] < n) break;
      idx[axis] = 0;
    }
  }
  return physical_in ? to_physical(F) : F;
}

namespace detail {

inline double nonlinear_sign(const SolverConfig& cfg) {
  if (cfg.disable_nonlinearity) return 0.0;
  return cfg.defocusing ? -1.0 : 1.0;
}

// |u| is invariant under the pure nonlinear flow, so the phase rotation
// e^{i sgn tau |u|^{2a}} is its exact solution.
inline void nonlinear_phase(GridField& u, double tau, double alpha, double sgn) {
  if (sgn == 0.0) return;
  for (auto& v : u.values) v *= std::polar(1.0, sgn * tau * std::pow(std::norm(v), alpha));
}

inline double sup_abs(const GridField& u) {
  double m = 0.0;
  for (const auto& v : u.values) m = std::max(m, std::abs(v));
  return m;
}

// conserved energy of the flow actually being integrated
inline double flow_energy(const GridField& u, const SolverConfig& cfg) {
  const double p = 2.0 * cfg.alpha + 2.0;
  const double pot = std::pow(lp_norm(u, p), p);
  return 0.5 * gradient_norm_sq(u) - nonlinear_sign(cfg) * pot / p;
}

inline std::vector<double> xi_squared(const GridField& F) {
  std::vector<double> out(F.total());
  std::vector<std::size_t> idx(F.dim, 0);
  const std::size_t n = F.n_per_axis;
  for (std::size_t flat = 0; flat < F.total(); ++flat) {
    double xi2 = 0.0;
    for (int axis = 0; axis < F.dim; ++axis) xi2 += sq(F.coord(idx[axis]));
    out[flat] = xi2;
    for (int axis = F.dim - 1; axis >= 0; --axis) {
      if (++idx[axis] < n) break;
      idx[axis] = 0;
    }
  }
  return out;
}

}  // namespace detail

// One full Strang step: half nonlinear phase, full linear step, half phase.
inline GridField strang_step(GridField u, double dt, const SolverConfig& cfg) {
  const double sgn = detail::nonlinear_sign(cfg);
  detail::nonlinear_phase(u, 0.5 * dt, cfg.alpha, sgn);
  u = free_propagate(u, dt);
  detail::nonlinear_phase(u, 0.5 * dt, cfg.alpha, sgn);
  return u;
}

inline Trajectory evolve(const GridField& u0, const SolverConfig& cfg) {
  check_field(u0);
  if (u0.space != Space::Physical)
    throw std::invalid_argument("evolve: initial field must be physical");
  if (!(cfg.alpha > 0.0)) throw std::invalid_argument("evolve: alpha must be positive");
  if (!(cfg.dt > 0.0)) throw std::invalid_argument("evolve: dt must be positive");
  if (!(cfg.t_end >= 0.0)) throw std::invalid_argument("evolve: t_end must be non-negative");
  if (cfg.splitting_order != 2)
    throw std::invalid_argument("evolve: only Strang splitting (order 2) is supported");
  if (cfg.snapshot_stride == 0)
    throw std::invalid_argument("evolve: snapshot_stride must be positive");

  const double p_st = double(u0.dim + 2) * cfg.alpha;
  Trajectory traj;
  traj.cfg = cfg;

  double S_pow = 0.0;     // running integral of int |u|^{p_st} dx
  double I_prev = 0.0;
  double t_prev = 0.0;
  auto snapshot = [&](double t, const GridField& u) {
    const double I = std::pow(lp_norm(u, p_st), p_st);
    if (!traj.times.empty()) S_pow += 0.5 * (I_prev + I) * (t - t_prev);
    I_prev = I;
    t_prev = t;
    traj.times.push_back(t);
    traj.fields.push_back(u);
    traj.mass.push_back(sq(l2_norm(u)));
    traj.energy.push_back(detail::flow_energy(u, cfg));
    traj.S_cumulative.push_back(std::pow(S_pow, 1.0 / p_st));
  };

  GridField u = u0;
  snapshot(0.0, u);
  const long long nsteps = std::llround(cfg.t_end / cfg.dt);
  for (long long k = 1; k <= nsteps; ++k) {
    u = strang_step(std::move(u), cfg.dt, cfg);
    const double t = double(k) * cfg.dt;
    const double sup = detail::sup_abs(u);
    if (!std::isfinite(sup))
      throw std::runtime_error("evolve: integrator produced non-finite values");
    if (sup > cfg.blowup_amp_cap) {
      snapshot(t, u);
      traj.status = FlowStatus::blowup_like;
      return traj;
    }
    if (k % cfg.snapshot_stride == 0 || k == nsteps) snapshot(t, u);
  }
  return traj;
}

// Space-time size over [t0, t1] from the stored snapshots: trapezoid of the
// per-time integrand with linear interpolation at fractional ends, so the
// power-level value is exactly additive over abutting intervals.
inline double scattering_norm(const Trajectory& traj, double t0, double t1) {
  const auto& ts = traj.times;
  if (ts.size() < 2) throw std::invalid_argument("scattering_norm: need at least two snapshots");
  if (!(t0 <= t1)) throw std::invalid_argument("scattering_norm: need t0 <= t1");
  const double slack = 1e-9 * std::max(1.0, std::abs(ts.back()));
  if (t0 < ts.front() - slack || t1 > ts.back() + slack)
    throw std::invalid_argument("scattering_norm: interval outside trajectory");
  t0 = std::max(t0, ts.front());
  t1 = std::min(t1, ts.back());

  const double p_st = double(traj.fields.front().dim + 2) * traj.cfg.alpha;
  std::vector<double> I(ts.size(), -1.0);
  auto integrand = [&](std::size_t k) {
    if (I[k] < 0.0) I[k] = std::pow(lp_norm(traj.fields[k], p_st), p_st);
    return I[k];
  };

  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
    const double a = std::max(ts[k], t0), b = std::min(ts[k + 1], t1);
    if (!(a < b)) continue;
    const double span = ts[k + 1] - ts[k];
    const double Ia = integrand(k) + (integrand(k + 1) - integrand(k)) * (a - ts[k]) / span;
    const double Ib = integrand(k) + (integrand(k + 1) - integrand(k)) * (b - ts[k]) / span;
    acc += 0.5 * (Ia + Ib) * (b - a);
  }
  return std::pow(acc, 1.0 / p_st);
}

// L^2 residual of u(t1) = e^{i(t1-t0) Lap} u(t0) + i int_{t0}^{t1}
// e^{i(t1-s) Lap} |u|^{2a} u(s) ds, everything evaluated on the frequency
// side where the propagator is diagonal; the integral uses the trapezoid
// rule over the stored snapshots.
inline double duhamel_residual(const Trajectory& traj, double t0, double t1) {
  const auto& ts = traj.times;
  auto locate = [&](double t) -> std::size_t {
    for (std::size_t k = 0; k < ts.size(); ++k)
      if (std::abs(ts[k] - t) <= 1e-9 * std::max(1.0, std::abs(t))) return k;
    throw std::invalid_argument("duhamel_residual: endpoint is not a snapshot time");
  };
  const std::size_t i0 = locate(t0), i1 = locate(t1);
  if (i1 < i0 + 7) throw std::invalid_argument("duhamel_residual: need at least 8 snapshots");

  const double alpha = traj.cfg.alpha;
  const double sgn = detail::nonlinear_sign(traj.cfg);
  GridField R = to_fourier(traj.fields[i1]);
  const std::vector<double> xi2 = detail::xi_squared(R);

  {
    const GridField U0 = to_fourier(traj.fields[i0]);
    const double dt01 = ts[i1] - ts[i0];
    for (std::size_t f = 0; f < R.total(); ++f)
      R.values[f] -= std::polar(1.0, -dt01 * xi2[f]) * U0.values[f];
  }

  if (sgn != 0.0) {
    for (std::size_t k = i0; k <= i1; ++k) {
      const double lo = (k == i0) ? ts[i0] : ts[k - 1];
      const double hi = (k == i1) ? ts[i1] : ts[k + 1];
      const double w = 0.5 * (hi - lo);
      GridField Fnl = traj.fields[k];
      for (auto& v : Fnl.values) v *= std::pow(std::norm(v), alpha);
      Fnl = to_fourier(Fnl);
      const cplx iw = cplx(0.0, sgn * w);
      const double lag = ts[i1] - ts[k];
      for (std::size_t f = 0; f < R.total(); ++f)
        R.values[f] -= iw * std::polar(1.0, -lag * xi2[f]) * Fnl.values[f];
    }
  }
  return l2_norm(R);
}

// Heuristic long-time label. Precedence: the integrator's own blowup flag,
// then a soliton band test (sup and, when configured, the dyadic size stay
// within 5%), then a scattering test (rooted cumulative size plateaus over
// the last third and the sup norm decays). Never ground truth.
inline FlowStatus classify(const Trajectory& traj, const SolverConfig& cfg) {
  if (traj.status == FlowStatus::blowup_like) return FlowStatus::blowup_like;
  const std::size_t m = traj.times.size();
  if (m < 4) return FlowStatus::inconclusive;

  std::vector<double> sup(m);
  for (std::size_t k = 0; k < m; ++k) sup[k] = detail::sup_abs(traj.fields[k]);
  const double sup_max = *std::max_element(sup.begin(), sup.end());
  const double sup_min = *std::min_element(sup.begin(), sup.end());

  bool soliton = sup_max > 0.0 && (sup_max - sup_min) <= 0.05 * sup_max;
  if (soliton && cfg.size_spec.p >= 1.0) {
    // probe at most five snapshots; fall back to the sup test alone when the
    // grid is incompatible with exact dyadic tiling
    try {
      SizeFunctionConfig scfg;
      double lo = kInf, hi = 0.0;
      for (int s = 0; s < 5; ++s) {
        const std::size_t k = (m - 1) * std::size_t(s) / 4;
        const double v = size_function(traj.fields[k], cfg.size_spec, scfg).value;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (!(hi > 0.0) || (hi - lo) > 0.05 * hi) soliton = false;
    } catch (const std::invalid_argument&) {
    }
  }
  if (soliton) return FlowStatus::soliton_like;

  const double t_third = traj.times.front() + (traj.times.back() - traj.times.front()) * 2.0 / 3.0;
  std::size_t k3 = 0;
  while (k3 + 1 < m && traj.times[k3] < t_third) ++k3;
  const double S_last = traj.S_cumulative.back();
  const double S_at3 = traj.S_cumulative[k3];
  const bool plateau = S_last <= 0.0 || (S_last - S_at3) < cfg.scatter_S_plateau_tol * S_last;
  const bool decaying = sup.back() <= 0.6 * sup.front();
  if (plateau && decaying) return FlowStatus::scattered_like;
  return FlowStatus::inconclusive;
}

struct StrichartzRatio {
  double ratio = 0.0;
  bool defined = false;
  bool tail_converged = false;
};

// Free-flow space-time size over [-T, T] against the frequency-side dyadic
// norm of the data. The tail beyond T is estimated from the dispersive decay
// rate t^{-kappa}, kappa = d(p_st - 2)/2, and flagged when above 1%.
inline StrichartzRatio strichartz_ratio(const GridField& f, const MorreySpec& spec, double T) {
  check_field(f);
  require_hat_mode(spec);
  if (!(T > 0.0)) throw std::invalid_argument("strichartz_ratio: T must be positive");

  StrichartzRatio out;
  const double denom = hat_morrey_norm(f, spec);
  if (!(denom > 0.0) || !std::isfinite(denom)) return out;

  const int d = f.dim;
  const double p_st = double(d + 2) * spec.p / double(d);
  const GridField F = (f.space == Space::Fourier) ? f : to_fourier(f);

  const std::size_t half = 400;
  const double dt = T / double(half);
  double acc = 0.0, I_lo = 0.0, I_hi = 0.0;
  double I_prev = 0.0;
  for (std::size_t k = 0; k <= 2 * half; ++k) {
    const double t = -T + double(k) * dt;
    const GridField u = to_physical(free_propagate(F, t));
    const double I = std::pow(lp_norm(u, p_st), p_st);
    if (k > 0) acc += 0.5 * (I_prev + I) * dt;
    I_prev = I;
    if (k == 0) I_lo = I;
    if (k == 2 * half) I_hi = I;
  }

  const double kappa = 0.5 * double(d) * (p_st - 2.0);
  if (kappa > 1.0) {
    const double tail = (I_lo + I_hi) * T / (kappa - 1.0);
    out.tail_converged = tail <= 0.01 * acc;
  }
  out.ratio = std::pow(acc, 1.0 / p_st) / denom;
  out.defined = true;
  return out;
}

}  // namespace morrey_nls
