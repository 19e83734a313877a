// Deformation group: phase, dyadic dilation, frequency boost, free flow,
// spatial shift, in the normal order e^{i theta} D(h) P(b) U(s) T(a).
// Parameters are immutable values; every operation here is pure.
#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "morrey_nls/core.hpp"
#include "morrey_nls/field_grid.hpp"

namespace morrey_nls {

// h = 2^m is kept as the integer exponent so rescalings stay exact.
struct Deformation {
  double theta = 0.0;
  int m = 0;
  std::vector<double> b;  // frequency boost
  double s = 0.0;         // free-flow time
  std::vector<double> a;  // spatial shift
};

struct FamilyDivergence {
  double scale_gap = 0.0;
  double boost_gap = 0.0;
  double time_gap = 0.0;
  double shift_gap = 0.0;
  double total = 0.0;
};

inline Deformation identity_deformation(int dim) {
  return {0.0, 0, std::vector<double>(dim, 0.0), 0.0, std::vector<double>(dim, 0.0)};
}

inline Deformation dilation_deformation(int m, int dim) {
  auto g = identity_deformation(dim);
  g.m = m;
  return g;
}

inline Deformation boost_deformation(std::vector<double> b) {
  const int dim = int(b.size());
  auto g = identity_deformation(dim);
  g.b = std::move(b);
  return g;
}

inline Deformation free_flow_deformation(double s, int dim) {
  auto g = identity_deformation(dim);
  g.s = s;
  return g;
}

inline Deformation shift_deformation(std::vector<double> a) {
  const int dim = int(a.size());
  auto g = identity_deformation(dim);
  g.a = std::move(a);
  return g;
}

namespace detail {

inline void check_deformation(const Deformation& g) {
  if (g.b.size() != g.a.size()) throw std::invalid_argument("boost/shift dimension mismatch");
  if (g.b.empty()) throw std::invalid_argument("deformation has no dimension");
}

inline double euclid(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double dot(const std::vector<double>& x, const std::vector<double>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

}  // namespace detail

// Phase wrapped to (-pi, pi]; theta itself is stored unreduced.
inline double normalized_phase(const Deformation& g) {
  const double r = std::remainder(g.theta, 2.0 * kPi);
  return (r == -kPi) ? kPi : r;
}

// |log h| + |b| + |s| + |a|, the magnitude driving the vanishing criterion.
inline double deformation_magnitude(const Deformation& g) {
  detail::check_deformation(g);
  return std::abs(double(g.m)) * std::log(2.0) + detail::euclid(g.b) + std::abs(g.s) +
         detail::euclid(g.a);
}

// Normal form of G1 G2, from the commutation rules
//   T(c)D(h) = D(h)T(hc),  P(c)D(h) = D(h)P(c/h),  U(t)D(h) = D(h)U(h^2 t),
//   T(A)P(b) = e^{iA.b}P(b)T(A),  U(s)P(b) = e^{-is|b|^2}P(b)U(s)T(-2sb).
inline Deformation compose(const Deformation& g1, const Deformation& g2) {
  detail::check_deformation(g1);
  detail::check_deformation(g2);
  const std::size_t d = g1.b.size();
  if (g2.b.size() != d) throw std::invalid_argument("deformation dimension mismatch");

  Deformation out = identity_deformation(int(d));
  out.m = g1.m + g2.m;
  out.s = g2.s + std::ldexp(g1.s, 2 * g2.m);
  double cross = 0.0, bsq = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    out.b[i] = g2.b[i] + std::ldexp(g1.b[i], -g2.m);
    out.a[i] = g2.a[i] + std::ldexp(g1.a[i], g2.m) - 2.0 * std::ldexp(g1.s, 2 * g2.m) * g2.b[i];
    cross += std::ldexp(g1.a[i], g2.m) * g2.b[i];
    bsq += g2.b[i] * g2.b[i];
  }
  out.theta = g1.theta + g2.theta + cross - std::ldexp(g1.s, 2 * g2.m) * bsq;
  return out;
}

// G^{-1} = e^{i(-theta + a.b + s|b|^2)} D(1/h) P(-hb) U(-s/h^2) T(-(a + 2sb)/h).
inline Deformation invert(const Deformation& g) {
  detail::check_deformation(g);
  const std::size_t d = g.b.size();
  Deformation out = identity_deformation(int(d));
  out.m = -g.m;
  out.s = -std::ldexp(g.s, -2 * g.m);
  double cross = 0.0, bsq = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    out.b[i] = -std::ldexp(g.b[i], g.m);
    out.a[i] = -std::ldexp(g.a[i] + 2.0 * g.s * g.b[i], -g.m);
    cross += g.a[i] * g.b[i];
    bsq += g.b[i] * g.b[i];
  }
  out.theta = -g.theta + cross + g.s * bsq;
  return out;
}

// Action on a sampled field. T and U are frequency multipliers, P and the
// phase act pointwise in physical space, D rescales the extent in place;
// at most two transforms run. The result is always in physical space.
// The amplitude exponent of D is h^{1/alpha}, so alpha must be supplied.
inline GridField apply(const Deformation& g, const GridField& f, double alpha) {
  detail::check_deformation(g);
  if (int(g.b.size()) != f.dim) throw std::invalid_argument("deformation/field dimension mismatch");
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  if (std::abs(g.m) > 1020) throw std::invalid_argument("scale exponent out of range");

  bool freq_pass = (g.s != 0.0);
  bool phys_pass = (g.theta != 0.0);
  for (int i = 0; i < f.dim; ++i) {
    if (g.a[i] != 0.0) freq_pass = true;
    if (g.b[i] != 0.0) phys_pass = true;
  }

  GridField w = f;
  if (freq_pass) {
    w = to_fourier(w);
    const std::size_t n = w.n_per_axis;
    std::vector<std::size_t> idx(w.dim, 0);
    for (std::size_t flat = 0; flat < w.total(); ++flat) {
      double xi2 = 0.0, xa = 0.0;
      for (int axis = 0; axis < w.dim; ++axis) {
        const double xi = w.coord(idx[axis]);
        xi2 += xi * xi;
        xa += xi * g.a[axis];
      }
      w.values[flat] *= std::polar(1.0, -(g.s * xi2 + xa));
      for (int axis = w.dim - 1; axis >= 0; --axis) {
        if (++idx[axis] < n) break;
        idx[axis] = 0;
      }
    }
  }
  w = to_physical(w);
  if (phys_pass) {
    const std::size_t n = w.n_per_axis;
    std::vector<std::size_t> idx(w.dim, 0);
    for (std::size_t flat = 0; flat < w.total(); ++flat) {
      double xb = 0.0;
      for (int axis = 0; axis < w.dim; ++axis) xb += w.coord(idx[axis]) * g.b[axis];
      w.values[flat] *= std::polar(1.0, g.theta - xb);
      for (int axis = w.dim - 1; axis >= 0; --axis) {
        if (++idx[axis] < n) break;
        idx[axis] = 0;
      }
    }
  }
  if (g.m != 0) {
    const double amp = std::exp2(double(g.m) / alpha);
    for (auto& v : w.values) v *= amp;
    w.extent = std::ldexp(w.extent, -g.m);
  }
  return w;
}

// Relative-parameter magnitudes of the pair; the components equal the
// parameter magnitudes of compose(invert(g2), g1) in normal form.
inline FamilyDivergence orthogonality_divergence(const Deformation& g1, const Deformation& g2) {
  detail::check_deformation(g1);
  detail::check_deformation(g2);
  const std::size_t d = g1.b.size();
  if (g2.b.size() != d) throw std::invalid_argument("deformation dimension mismatch");

  FamilyDivergence out;
  const int dm = g1.m - g2.m;  // log2(h1/h2)
  out.scale_gap = std::abs(double(dm)) * std::log(2.0);
  double bgap2 = 0.0, sgap = 0.0, agap2 = 0.0;
  sgap = g1.s - std::ldexp(g2.s, 2 * dm);
  for (std::size_t i = 0; i < d; ++i) {
    const double db = g1.b[i] - std::ldexp(g2.b[i], -dm);
    bgap2 += db * db;
    const double da = g1.a[i] - std::ldexp(g2.a[i], dm) + 2.0 * std::ldexp(g2.s, 2 * dm) * db;
    agap2 += da * da;
  }
  out.boost_gap = std::sqrt(bgap2);
  out.time_gap = std::abs(sgap);
  out.shift_gap = std::sqrt(agap2);
  out.total = out.scale_gap + out.boost_gap + out.time_gap + out.shift_gap;
  return out;
}

// Finite-data stand-in for |log h_n| + |b_n| + |s_n| + |a_n| -> infinity:
// the last third of the magnitude sequence is strictly increasing and the
// final value dominates the whole sample. Diagnostics only.
inline bool is_vanishing_trajectory(const std::vector<Deformation>& params) {
  if (params.size() < 3) throw std::invalid_argument("need at least 3 deformations");
  std::vector<double> mag;
  mag.reserve(params.size());
  for (const auto& g : params) mag.push_back(deformation_magnitude(g));

  const std::size_t n = mag.size();
  const std::size_t start = (2 * n + 2) / 3;
  for (std::size_t i = start; i + 1 < n; ++i)
    if (!(mag[i + 1] > mag[i])) return false;

  std::vector<double> sorted = mag;
  std::sort(sorted.begin(), sorted.end());
  const double median =
      (n % 2) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  const double last = mag.back();
  if (last < sorted.back()) return false;
  return last > 1.5 * median;
}

}  // namespace morrey_nls
