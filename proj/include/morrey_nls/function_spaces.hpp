#pragma once

// Norms and space-level diagnostics: generalized Morrey norms over dyadic
// cubes, their hat (Fourier-side) variants, the hat-Lebesgue norm, the
// modulation-infimum size function, the duality pairing bound, the dyadic
// averaging projection, and compactness / almost-periodicity moduli.
//
// Norm engine model: a field is piecewise constant on its sample cells.
// Under that model, and when the cell step is a power of two, every cube
// mass at every dyadic scale is computed exactly: scales from the cell
// scale down to the quadrant scale are aggregated by exact child sums, and
// the remaining two infinite scale tails are geometric series summed in
// closed form.  Cubes never straddle the origin, so once only the 2^d
// quadrant cubes k in {-1,0}^d survive, their masses are constant in j.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "morrey_nls/core.hpp"
#include "morrey_nls/field_grid.hpp"

namespace morrey_nls {

struct MorreySpec {
  double p = 2.0;
  double q = 2.0;
  double r = kInf;
  // k_bound == 0 means "no truncation": the full scale range with exact
  // closed-form tails.
  FrequencyWindow window{0, 0, 0};
};

inline bool is_morrey_mode(const MorreySpec& s) {
  if (!(s.q >= 1.0 && s.q <= s.p && s.p <= s.r)) return false;
  if (s.r < kInf && !(s.q < s.p && s.p < s.r)) return false;
  return true;
}

inline bool is_hat_mode(const MorreySpec& s) {
  if (!(s.p >= 1.0 && s.p <= s.q && s.q <= kInf)) return false;
  const double pd = holder_dual(s.p), qd = holder_dual(s.q);
  if (!(s.r >= pd)) return false;
  if (s.r < kInf && !(qd < pd && pd < s.r)) return false;
  return true;
}

inline void require_morrey_mode(const MorreySpec& s) {
  if (!is_morrey_mode(s))
    throw std::invalid_argument("MorreySpec: need 1 <= q <= p <= r (strict q<p<r when r finite)");
}

inline void require_hat_mode(const MorreySpec& s) {
  if (!is_hat_mode(s))
    throw std::invalid_argument("MorreySpec: hat mode needs 1 <= p <= q, p' <= r (strict q'<p'<r when r finite)");
}

struct NormReport {
  double value = 0.0;       // norm over the requested window, tails included when untruncated
  double tail_bound = 0.0;  // exact mass outside the requested window, in norm units
  int j_lo = 0;             // enumerated scale range (quadrant scale .. cell scale)
  int j_hi = 0;
  bool estimate = false;    // true when a non-aligned fine-scale tail estimate entered
};

namespace detail {

constexpr int kMaxDim = 4;

struct CubeEntry {
  std::array<long long, kMaxDim> k{};
  double mass = 0.0;
};

inline bool key_less(const CubeEntry& a, const CubeEntry& b) { return a.k < b.k; }

// One aggregation step: parent index is floor(k/2) per axis; masses add
// (or take max when sup_mass is set).  Exact: children partition parents.
inline void aggregate_up(std::vector<CubeEntry>& cells, bool sup_mass) {
  for (auto& c : cells)
    for (auto& kk : c.k) kk >>= 1;  // arithmetic shift = floor division
  std::sort(cells.begin(), cells.end(), key_less);
  std::size_t w = 0;
  for (std::size_t i = 0; i < cells.size();) {
    std::size_t e = i;
    double m = 0.0;
    while (e < cells.size() && cells[e].k == cells[i].k) {
      m = sup_mass ? std::max(m, cells[e].mass) : m + cells[e].mass;
      ++e;
    }
    cells[w] = cells[i];
    cells[w].mass = m;
    ++w;
    i = e;
  }
  cells.resize(w);
}

inline bool quadrant_regime(const std::vector<CubeEntry>& cells, int dim) {
  for (const auto& c : cells)
    for (int a = 0; a < dim; ++a)
      if (c.k[a] != -1 && c.k[a] != 0) return false;
  return true;
}

// Does tau^j_k intersect the box [-K, K)^d?
inline bool cube_meets_band(const CubeEntry& c, int dim, int j, long long K) {
  if (K <= 0) return true;
  const double bound = double(K) * std::ldexp(1.0, j);  // K * 2^j, exact
  for (int a = 0; a < dim; ++a) {
    if (!(double(c.k[a]) < bound && double(c.k[a]) + 1.0 > -bound)) return false;
  }
  return true;
}

// Per-scale data produced by the aggregation sweep.
struct LevelData {
  int j = 0;
  double sum_pow = 0.0;       // sum over cubes of value^r (r < inf)
  double sum_pow_band = 0.0;  // same, restricted to the k_bound band
  double sup = 0.0;           // sup over cubes of value (r = inf)
  double sup_band = 0.0;
};

struct EngineOut {
  std::vector<LevelData> levels;  // j from cell scale down to quadrant scale
  double fine_ratio = 0.0;        // per-scale ratio of sum_pow for j > cell scale
  double coarse_ratio = 0.0;      // per-scale ratio for j < quadrant scale
  double coarse_sup_ratio = 0.0;  // per-scale value ratio (sup mode), <= 1
  double fine_sup_ratio = 0.0;    // per-scale value ratio below the cell scale
  double cell_sum_pow = 0.0;      // sum over cells of value^r at the cell scale
  double cell_sum_pow_band = 0.0;
  int j_cell = 0;
  int j_quad = 0;
  bool empty = true;
};

// Shared sweep over the exact dyadic hierarchy.  qc = Lebesgue exponent on
// cubes, pc = scaling exponent; the caller passes dual exponents for hat
// norms.  Requires a power-of-two step.
inline EngineOut dyadic_sweep(const GridField& f, double qc, double pc, double r,
                              long long k_band) {
  check_field(f);
  if (f.dim > kMaxDim) throw std::invalid_argument("cube norm: dim > 4 unsupported");
  const int d = f.dim;
  const int jc = cell_scale(f);
  const bool sup_mode = (r == kInf);
  const bool sup_mass = (qc == kInf);
  const double inv_q = sup_mass ? 0.0 : 1.0 / qc;
  const double inv_p = (pc == kInf) ? 0.0 : 1.0 / pc;
  const double gamma = inv_q - inv_p;
  if (gamma < 0.0)
    throw std::invalid_argument("cube norm: coarse scales diverge (need q-dual <= p-dual side)");
  if (gamma == 0.0 && !sup_mode)
    throw std::invalid_argument("cube norm: r < inf with equal exponents diverges over scales");
  if (!sup_mode && !(r > pc))
    throw std::invalid_argument("cube norm: fine scales diverge (need r > p' on the hat side)");

  EngineOut out;
  out.j_cell = jc;
  const double meas = cell_measure(f);

  std::vector<CubeEntry> cells;
  cells.reserve(1024);
  double cell_sum_pow = 0.0, cell_sum_pow_band = 0.0;
  {
    const std::size_t n = f.n_per_axis;
    for (std::size_t flat = 0; flat < f.total(); ++flat) {
      const double av = std::abs(f.values[flat]);
      if (av == 0.0) continue;
      CubeEntry e;
      const auto idx = unflatten(flat, d, n);
      for (int a = 0; a < d; ++a) e.k[a] = f.cell(idx[a]);
      e.mass = sup_mass ? av : std::pow(av, qc) * meas;
      if (!sup_mode) {
        const double vpow = std::pow(av, r);
        cell_sum_pow += vpow;
        if (cube_meets_band(e, d, jc, k_band)) cell_sum_pow_band += vpow;
      }
      cells.push_back(e);
    }
  }
  if (cells.empty()) return out;
  out.empty = false;

  // value^r per sub-cell cube carries |F_c|^r 2^{-j d r / pc}; the counts
  // 2^{(j-jc)d} give the per-scale ratio below.
  const double scale_cell = std::pow(std::ldexp(1.0, -jc * d), r * inv_p);
  out.cell_sum_pow = cell_sum_pow * scale_cell;
  out.cell_sum_pow_band = cell_sum_pow_band * scale_cell;
  out.fine_ratio = sup_mode ? 0.0 : std::pow(2.0, double(d) * (1.0 - r * inv_p));
  out.coarse_ratio = sup_mode ? 0.0 : std::pow(2.0, -double(d) * r * gamma);
  out.coarse_sup_ratio = std::pow(2.0, -double(d) * gamma);
  out.fine_sup_ratio = std::pow(2.0, -double(d) * inv_p);

  int j = jc;
  while (true) {
    LevelData lv;
    lv.j = j;
    const double weight = std::pow(std::ldexp(1.0, -j * d), inv_p - inv_q);  // |tau|^{1/pc-1/qc}
    for (const auto& c : cells) {
      const double val = weight * (sup_mass ? c.mass : std::pow(c.mass, inv_q));
      const bool inband = cube_meets_band(c, d, j, k_band);
      if (sup_mode) {
        lv.sup = std::max(lv.sup, val);
        if (inband) lv.sup_band = std::max(lv.sup_band, val);
      } else {
        const double vp = std::pow(val, r);
        lv.sum_pow += vp;
        if (inband) lv.sum_pow_band += vp;
      }
    }
    out.levels.push_back(lv);
    if (quadrant_regime(cells, d)) break;
    aggregate_up(cells, sup_mass);
    --j;
    if (j < jc - 4096) throw std::logic_error("cube norm: aggregation failed to terminate");
  }
  out.j_quad = j;
  return out;
}

inline double geometric_tail(double first_ratio_term, double ratio) {
  // first_ratio_term = V at the boundary level; returns sum over all
  // further levels: V * (ratio + ratio^2 + ...) = V * ratio / (1 - ratio).
  if (first_ratio_term == 0.0 || ratio == 0.0) return 0.0;
  return first_ratio_term * ratio / (1.0 - ratio);
}

inline double geometric_partial(double boundary, double ratio, long long count) {
  // boundary * (ratio + ... + ratio^count)
  if (boundary == 0.0 || count <= 0) return 0.0;
  if (count > 8192) return geometric_tail(boundary, ratio);
  return boundary * ratio * (1.0 - std::pow(ratio, double(count))) / (1.0 - ratio);
}

inline NormReport dyadic_cube_norm(const GridField& f, double qc, double pc, double r,
                                   const FrequencyWindow& win) {
  const bool truncated = (win.k_bound != 0);
  const auto sweep = dyadic_sweep(f, qc, pc, r, truncated ? win.k_bound : 0);
  NormReport rep;
  rep.j_lo = sweep.j_quad;
  rep.j_hi = sweep.j_cell;
  if (sweep.empty) return rep;

  if (r == kInf) {
    double full = 0.0;
    double windowed = 0.0;
    for (const auto& lv : sweep.levels) {
      full = std::max(full, lv.sup);
      if (!truncated || (lv.j >= win.j_min && lv.j <= win.j_max))
        windowed = std::max(windowed, truncated ? lv.sup_band : lv.sup);
    }
    if (truncated) {
      // Coarser than j_quad: per-cube values scale by coarse_sup_ratio <= 1
      // each level, so only the first extension level can matter.
      if (win.j_min < sweep.j_quad)
        windowed = std::max(windowed, sweep.levels.back().sup_band * sweep.coarse_sup_ratio);
      // Finer than the cell scale: values decay by 2^{-d/pc} per level, so a
      // window lying entirely below the cells peaks at its coarsest scale.
      if (win.j_min > sweep.j_cell && !sweep.levels.empty()) {
        windowed = std::max(windowed, sweep.levels.front().sup_band *
                                          std::pow(sweep.fine_sup_ratio,
                                                   double(win.j_min - sweep.j_cell)));
      }
    }
    rep.value = truncated ? windowed : full;
    rep.tail_bound = std::max(0.0, full - rep.value);
    return rep;
  }

  const double fine_full = geometric_tail(sweep.cell_sum_pow, sweep.fine_ratio);
  const auto& quad = sweep.levels.back();
  const double coarse_full = geometric_tail(quad.sum_pow, sweep.coarse_ratio);
  double full_pow = fine_full + coarse_full;
  for (const auto& lv : sweep.levels) full_pow += lv.sum_pow;

  double win_pow;
  if (!truncated) {
    win_pow = full_pow;
  } else {
    win_pow = 0.0;
    for (const auto& lv : sweep.levels)
      if (lv.j >= win.j_min && lv.j <= win.j_max) win_pow += lv.sum_pow_band;
    if (win.j_max > sweep.j_cell)
      win_pow += geometric_partial(sweep.cell_sum_pow_band, sweep.fine_ratio,
                                   (long long)win.j_max - sweep.j_cell);
    if (win.j_min < sweep.j_quad)
      win_pow += geometric_partial(quad.sum_pow_band, sweep.coarse_ratio,
                                   (long long)sweep.j_quad - win.j_min);
  }
  rep.value = std::pow(win_pow, 1.0 / r);
  rep.tail_bound = std::max(0.0, std::pow(full_pow, 1.0 / r) - rep.value);
  return rep;
}

// Argmax of |tau|^{1/pc-1/qc} ||f||_{L^{qc}(tau)} over all dyadic cubes.
// Sub-cell scales never win (values decay in j there), and values decay
// strictly below the quadrant scale, so the enumerated range suffices.
// Ties break toward the coarsest cube, then lexicographically smallest k.
struct CubeScore {
  DyadicCube cube;
  double score = 0.0;
};

inline CubeScore dyadic_best_cube(const GridField& f, double qc, double pc) {
  check_field(f);
  if (f.dim > kMaxDim) throw std::invalid_argument("best cube: dim > 4 unsupported");
  const int d = f.dim;
  const int jc = cell_scale(f);
  const bool sup_mass = (qc == kInf);
  const double inv_q = sup_mass ? 0.0 : 1.0 / qc;
  const double inv_p = (pc == kInf) ? 0.0 : 1.0 / pc;
  if (inv_q - inv_p < 0.0) throw std::invalid_argument("best cube: exponents diverge coarsely");

  std::vector<CubeEntry> cells;
  const std::size_t n = f.n_per_axis;
  const double meas = cell_measure(f);
  for (std::size_t flat = 0; flat < f.total(); ++flat) {
    const double av = std::abs(f.values[flat]);
    if (av == 0.0) continue;
    CubeEntry e;
    const auto idx = unflatten(flat, d, n);
    for (int a = 0; a < d; ++a) e.k[a] = f.cell(idx[a]);
    e.mass = sup_mass ? av : std::pow(av, qc) * meas;
    cells.push_back(e);
  }
  CubeScore best;
  best.cube.j = jc;
  best.cube.k.assign(d, 0);
  if (cells.empty()) return best;
  std::sort(cells.begin(), cells.end(), key_less);

  int j = jc;
  bool have = false;
  while (true) {
    const double weight = std::pow(std::ldexp(1.0, -j * d), inv_p - inv_q);
    for (const auto& c : cells) {
      const double val = weight * (sup_mass ? c.mass : std::pow(c.mass, inv_q));
      if (!have || val > best.score) {
        have = true;
        best.score = val;
        best.cube.j = j;
        best.cube.k.assign(c.k.begin(), c.k.begin() + d);
      } else if (val == best.score && j < best.cube.j) {
        best.cube.j = j;
        best.cube.k.assign(c.k.begin(), c.k.begin() + d);
      }
    }
    if (quadrant_regime(cells, d)) break;
    aggregate_up(cells, sup_mass);
    --j;
  }
  return best;
}

// Summed-area-table engine for physical grids whose step is not a power of
// two.  Exact for the piecewise-constant cell model at every enumerated
// scale; the sub-cell tail is a flagged estimate.
class SatMass {
 public:
  SatMass(const GridField& f, double q) : d_(f.dim), n_(f.n_per_axis), step_(f.step()) {
    x0_ = f.coord(0);
    if (d_ > 3) throw std::invalid_argument("physical cube norm: dim > 3 unsupported");
    const double meas = cell_measure(f);
    std::vector<std::size_t> dims(d_, n_ + 1);
    std::size_t tot = 1;
    for (int a = 0; a < d_; ++a) tot *= (n_ + 1);
    cum_.assign(tot, 0.0);
    // cum at corner (i0..): mass of cells strictly below in every axis.
    for (std::size_t flat = 0; flat < f.total(); ++flat) {
      const double av = std::abs(f.values[flat]);
      if (av == 0.0) continue;
      const auto idx = unflatten(flat, d_, n_);
      at(idx, 1) = std::pow(av, q) * meas;
    }
    // prefix-sum along each axis
    for (int a = 0; a < d_; ++a) {
      std::size_t stride = 1;
      for (int b = d_ - 1; b > a; --b) stride *= (n_ + 1);
      const std::size_t total = cum_.size();
      const std::size_t block = (n_ + 1) * stride;
      for (std::size_t base = 0; base < total; base += block) {
        for (std::size_t off = 0; off < stride; ++off) {
          for (std::size_t i = 1; i <= n_; ++i) {
            cum_[base + off + i * stride] += cum_[base + off + (i - 1) * stride];
          }
        }
      }
    }
  }

  // Exact integral of the cell-constant density over prod_a [lo_a, hi_a).
  double box_mass(const std::vector<double>& lo, const std::vector<double>& hi) const {
    double m = 0.0;
    std::vector<double> corner(d_);
    for (unsigned s = 0; s < (1u << d_); ++s) {
      int ones = 0;
      for (int a = 0; a < d_; ++a) {
        const bool hi_side = (s >> a) & 1u;
        corner[a] = hi_side ? hi[a] : lo[a];
        ones += hi_side;
      }
      const double sign = ((d_ - ones) % 2 == 0) ? 1.0 : -1.0;
      m += sign * eval(corner);
    }
    return std::max(0.0, m);
  }

 private:
  double& at(const std::vector<std::size_t>& idx, int shift) {
    std::size_t flat = 0;
    for (int a = 0; a < d_; ++a) flat = flat * (n_ + 1) + idx[a] + shift;
    return cum_[flat];
  }
  // Multilinear evaluation of the cumulative at a real point (clamped to
  // the table; the cumulative saturates outside the grid).
  double eval(const std::vector<double>& p) const {
    std::array<std::size_t, 3> i0{};
    std::array<double, 3> fr{};
    for (int a = 0; a < d_; ++a) {
      double t = (p[a] - x0_) / step_;
      t = std::clamp(t, 0.0, double(n_));
      double fl = std::floor(t);
      if (fl >= double(n_)) fl = double(n_) - 1.0;
      i0[a] = std::size_t(fl);
      fr[a] = t - fl;
    }
    double m = 0.0;
    for (unsigned s = 0; s < (1u << d_); ++s) {
      double w = 1.0;
      std::size_t flat = 0;
      for (int a = 0; a < d_; ++a) {
        const bool hi_side = (s >> a) & 1u;
        w *= hi_side ? fr[a] : (1.0 - fr[a]);
        flat = flat * (n_ + 1) + i0[a] + (hi_side ? 1 : 0);
      }
      m += w * cum_[flat];
    }
    return m;
  }

  int d_;
  std::size_t n_;
  double step_, x0_;
  std::vector<double> cum_;
};

inline NormReport sat_cube_norm(const GridField& f, double q, double p, double r,
                                const FrequencyWindow& win) {
  check_field(f);
  if (q == kInf || r == kInf)
    throw std::invalid_argument("physical cube norm: q or r = inf requires a power-of-two step");
  const int d = f.dim;
  const double inv_q = 1.0 / q, inv_p = (p == kInf) ? 0.0 : 1.0 / p;
  const double gamma = inv_q - inv_p;
  if (gamma <= 0.0) throw std::invalid_argument("physical cube norm: coarse scales diverge");
  if (!(r > p)) throw std::invalid_argument("physical cube norm: fine scales diverge (need r > p)");

  // support bounding box over nonzero cells
  double maxabs = 0.0, lo_s = kInf, hi_s = -kInf;
  double sum_pow_r = 0.0;
  const std::size_t n = f.n_per_axis;
  bool any = false;
  for (std::size_t flat = 0; flat < f.total(); ++flat) {
    const double av = std::abs(f.values[flat]);
    if (av == 0.0) continue;
    any = true;
    sum_pow_r += std::pow(av, r);
    const auto idx = unflatten(flat, d, n);
    for (int a = 0; a < d; ++a) {
      const double c0 = f.coord(idx[a]), c1 = c0 + f.step();
      lo_s = std::min(lo_s, c0);
      hi_s = std::max(hi_s, c1);
      maxabs = std::max(maxabs, std::max(std::abs(c0), std::abs(c1)));
    }
  }
  NormReport rep;
  if (!any) return rep;

  SatMass sat(f, q);
  const int j_hi = int(std::floor(std::log2(1.0 / f.step())));  // cube side >= step
  const int j_quad = -int(std::ceil(std::log2(maxabs))) - 1;
  rep.j_lo = j_quad;
  rep.j_hi = j_hi;

  const bool truncated = (win.k_bound != 0);
  std::vector<double> level_full, level_band;
  std::vector<int> level_j;
  double quad_full = 0.0, quad_band = 0.0;
  std::vector<double> clo(d), chi(d);
  for (int j = j_hi; j >= j_quad; --j) {
    const double side = std::ldexp(1.0, -j);
    const double weight = std::pow(std::ldexp(1.0, -j * d), inv_p - inv_q);
    std::vector<long long> kmin(d), kmax(d);
    double count = 1.0;
    for (int a = 0; a < d; ++a) {
      kmin[a] = (long long)std::floor(lo_s / side);
      kmax[a] = (long long)std::floor((hi_s - 1e-12 * side) / side);
      count *= double(kmax[a] - kmin[a] + 1);
    }
    if (count > 8e6) throw std::invalid_argument("physical cube norm: scale enumeration too large");
    double vfull = 0.0, vband = 0.0;
    std::vector<long long> k = kmin;
    while (true) {
      for (int a = 0; a < d; ++a) {
        clo[a] = double(k[a]) * side;
        chi[a] = clo[a] + side;
      }
      const double mass = sat.box_mass(clo, chi);
      if (mass > 0.0) {
        const double val = weight * std::pow(mass, inv_q);
        const double vp = std::pow(val, r);
        vfull += vp;
        if (!truncated) {
          vband = vfull;
        } else {
          bool inband = true;
          const double bound = double(win.k_bound);
          for (int a = 0; a < d; ++a) inband = inband && (clo[a] < bound && chi[a] > -bound);
          if (inband) vband += vp;
        }
      }
      int a = d - 1;
      for (; a >= 0; --a) {
        if (++k[a] <= kmax[a]) break;
        k[a] = kmin[a];
      }
      if (a < 0) break;
    }
    level_j.push_back(j);
    level_full.push_back(vfull);
    level_band.push_back(vband);
    if (j == j_quad) {
      quad_full = vfull;
      quad_band = vband;
    }
  }

  const double coarse_ratio = std::pow(2.0, -double(d) * r * gamma);
  const double fine_ratio = std::pow(2.0, double(d) * (1.0 - r * inv_p));
  // Sub-cell estimate: about step^d 2^{jd} cubes per cell, each worth
  // |f_c| 2^{-jd/p}; exact when the step is a power of two.
  const double meas = cell_measure(f);
  const int j1 = j_hi + 1;
  const double fine_first =
      sum_pow_r * meas * std::pow(2.0, double(j1 * d) * (1.0 - r * inv_p));
  const double fine_full = fine_first / (1.0 - fine_ratio);
  const double coarse_full = geometric_tail(quad_full, coarse_ratio);

  double full_pow = fine_full + coarse_full;
  for (double v : level_full) full_pow += v;

  double win_pow;
  if (!truncated) {
    win_pow = full_pow;
  } else {
    win_pow = 0.0;
    for (std::size_t t = 0; t < level_j.size(); ++t)
      if (level_j[t] >= win.j_min && level_j[t] <= win.j_max) win_pow += level_band[t];
    if (win.j_max > j_hi) {
      const double cnt = double(win.j_max - j_hi);
      win_pow += fine_first * (1.0 - std::pow(fine_ratio, cnt)) / (1.0 - fine_ratio);
    }
    if (win.j_min < j_quad)
      win_pow += geometric_partial(quad_band, coarse_ratio, (long long)j_quad - win.j_min);
  }
  rep.value = std::pow(win_pow, 1.0 / r);
  rep.tail_bound = std::max(0.0, std::pow(full_pow, 1.0 / r) - rep.value);
  rep.estimate = !dyadic_step(f);
  return rep;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Public norm entry points

inline NormReport morrey_norm_report(const GridField& f, const MorreySpec& spec) {
  require_morrey_mode(spec);
  check_field(f);
  if (f.space != Space::Physical)
    throw std::invalid_argument("morrey_norm: field must be in the physical representation");
  if (dyadic_step(f)) return detail::dyadic_cube_norm(f, spec.q, spec.p, spec.r, spec.window);
  return detail::sat_cube_norm(f, spec.q, spec.p, spec.r, spec.window);
}

inline double morrey_norm(const GridField& f, const MorreySpec& spec) {
  return morrey_norm_report(f, spec).value;
}

inline NormReport hat_morrey_norm_report(const GridField& f, const MorreySpec& spec) {
  require_hat_mode(spec);
  const GridField F = (f.space == Space::Fourier) ? f : to_fourier(f);
  if (!dyadic_step(F))
    throw std::invalid_argument(
        "hat_morrey_norm: frequency step must be a power of two (physical extent pi * 2^m)");
  return detail::dyadic_cube_norm(F, holder_dual(spec.q), holder_dual(spec.p), spec.r,
                                  spec.window);
}

inline double hat_morrey_norm(const GridField& f, const MorreySpec& spec) {
  return hat_morrey_norm_report(f, spec).value;
}

inline double hat_lebesgue_norm(const GridField& f, double p) {
  if (!(p >= 1.0)) throw std::invalid_argument("hat_lebesgue_norm: p must be >= 1");
  const GridField F = (f.space == Space::Fourier) ? f : to_fourier(f);
  return lp_norm(F, holder_dual(p));
}

// Window whose omitted scales provably carry less than tail_tol of the norm.
// Both scale tails decay geometrically (coarse rate 2^{-d r (1/q'-1/p')} per
// scale, fine rate 2^{-d(r/p'-1)}), so the enumerated range is extended in
// each direction until the closed-form remainder drops below tail_tol.
// Shrinking tail_tol never shrinks the window.
inline FrequencyWindow default_window(const GridField& f, double tail_tol,
                                      const MorreySpec& spec) {
  require_hat_mode(spec);
  if (!(tail_tol > 0.0)) throw std::invalid_argument("default_window: tail_tol must be > 0");
  const GridField F = (f.space == Space::Fourier) ? f : to_fourier(f);
  if (!dyadic_step(F))
    throw std::invalid_argument("default_window: frequency step must be a power of two");
  const double pd = holder_dual(spec.p);
  if (spec.r < kInf && !(spec.r > pd))
    throw std::invalid_argument("default_window: scale sum diverges for r <= p'");
  const long long coverage = std::max(1LL, (long long)std::llround(std::ceil(F.extent)));
  const auto sweep = detail::dyadic_sweep(F, holder_dual(spec.q), pd, spec.r, 0);
  if (sweep.empty) return FrequencyWindow{0, 0, coverage};
  FrequencyWindow w{sweep.j_quad, sweep.j_cell, coverage};
  if (spec.r == kInf) return w;  // sup mode: enumerated range is exact

  const double fine_full = detail::geometric_tail(sweep.cell_sum_pow, sweep.fine_ratio);
  const double coarse_full =
      detail::geometric_tail(sweep.levels.back().sum_pow, sweep.coarse_ratio);
  double total = fine_full + coarse_full;
  for (const auto& lv : sweep.levels) total += lv.sum_pow;
  if (total == 0.0) return w;
  const double norm_full = std::pow(total, 1.0 / spec.r);
  auto omitted_norm = [&](double om) {
    return norm_full - std::pow(std::max(0.0, total - om), 1.0 / spec.r);
  };
  double fine_rem = fine_full;
  while (omitted_norm(fine_rem) > 0.5 * tail_tol && w.j_max < sweep.j_cell + 600) {
    ++w.j_max;
    fine_rem *= sweep.fine_ratio;
  }
  double coarse_rem = coarse_full;
  while (omitted_norm(fine_rem + coarse_rem) > tail_tol && w.j_min > sweep.j_quad - 600) {
    --w.j_min;
    coarse_rem *= sweep.coarse_ratio;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Size function: inf over modulations xi of the hat-Morrey norm

struct SizeFunctionConfig {
  double xi_search_radius = 8.0;
  int coarse_grid_points = 17;
  int refine_iters = 3;
  double refine_tol = 1e-9;
};

struct SizeFunctionResult {
  double value = 0.0;
  std::vector<double> xi_star;
  bool radius_warning = false;
};

inline SizeFunctionResult size_function(const GridField& f, const MorreySpec& spec,
                                        const SizeFunctionConfig& cfg) {
  require_hat_mode(spec);
  if (spec.q != 2.0) throw std::invalid_argument("size_function: spec must have q = 2");
  if (!(cfg.xi_search_radius > 0.0) || !(cfg.refine_tol > 0.0))
    throw std::invalid_argument("size_function: bad config");
  check_field(f);
  if (f.space != Space::Physical)
    throw std::invalid_argument("size_function: field must be physical");
  const int d = f.dim;

  SizeFunctionResult res;
  res.xi_star.assign(d, 0.0);
  double max_abs = 0.0;
  for (const auto& v : f.values) max_abs = std::max(max_abs, std::abs(v));
  if (max_abs == 0.0) return res;

  auto objective = [&](const std::vector<double>& xi) {
    return hat_morrey_norm(phase_modulate(f, xi), spec);
  };

  // spectrum diameter check and centroid start
  const GridField F = to_fourier(f);
  double maxF2 = 0.0;
  for (const auto& v : F.values) maxF2 = std::max(maxF2, std::norm(v));
  std::vector<double> centroid(d, 0.0);
  double wsum = 0.0, lo = kInf, hi = -kInf;
  for (std::size_t flat = 0; flat < F.total(); ++flat) {
    const double w = std::norm(F.values[flat]);
    if (w == 0.0) continue;
    const auto idx = unflatten(flat, d, F.n_per_axis);
    for (int a = 0; a < d; ++a) {
      const double xi = F.coord(idx[a]);
      centroid[a] += w * xi;
      if (w > 1e-16 * maxF2) {
        lo = std::min(lo, xi);
        hi = std::max(hi, xi);
      }
    }
    wsum += w;
  }
  for (int a = 0; a < d; ++a) centroid[a] = wsum > 0 ? centroid[a] / wsum : 0.0;
  if (hi - lo > 2.0 * cfg.xi_search_radius) res.radius_warning = true;

  // coarse grid around the centroid, plus xi = 0
  struct Cand {
    std::vector<double> xi;
    double val;
  };
  std::vector<Cand> cands;
  auto push_cand = [&](std::vector<double> xi) { cands.push_back({std::move(xi), 0.0}); };
  push_cand(std::vector<double>(d, 0.0));
  push_cand(centroid);
  const int g = std::max(2, cfg.coarse_grid_points);
  const double h = 2.0 * cfg.xi_search_radius / double(g - 1);
  std::vector<int> gi(d, 0);
  while (true) {
    std::vector<double> xi(d);
    for (int a = 0; a < d; ++a) xi[a] = centroid[a] - cfg.xi_search_radius + h * gi[a];
    push_cand(xi);
    int a = d - 1;
    for (; a >= 0; --a) {
      if (++gi[a] < g) break;
      gi[a] = 0;
    }
    if (a < 0) break;
  }
  for (auto& c : cands) c.val = objective(c.xi);
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.val < b.val; });
  const std::size_t keep = std::min<std::size_t>(3, cands.size());

  // coordinate-wise golden-section refinement (objective is continuous but
  // kinked at cube boundaries, so derivative-free)
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  Cand best = cands[0];
  for (std::size_t s = 0; s < keep; ++s) {
    Cand cur = cands[s];
    double span = h;
    for (int sweep_i = 0; sweep_i < cfg.refine_iters; ++sweep_i) {
      for (int a = 0; a < d; ++a) {
        double lo_a = cur.xi[a] - span, hi_a = cur.xi[a] + span;
        double x1 = hi_a - gr * (hi_a - lo_a), x2 = lo_a + gr * (hi_a - lo_a);
        auto eval_at = [&](double t) {
          std::vector<double> xi = cur.xi;
          xi[a] = t;
          return objective(xi);
        };
        double f1 = eval_at(x1), f2 = eval_at(x2);
        for (int it = 0; it < 40 && (hi_a - lo_a) > cfg.refine_tol; ++it) {
          if (f1 < f2) {
            hi_a = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi_a - gr * (hi_a - lo_a);
            f1 = eval_at(x1);
          } else {
            lo_a = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo_a + gr * (hi_a - lo_a);
            f2 = eval_at(x2);
          }
        }
        const double t = 0.5 * (lo_a + hi_a);
        const double ft = eval_at(t);
        if (ft < cur.val) {
          cur.xi[a] = t;
          cur.val = ft;
        }
      }
      span *= 0.5;
    }
    if (cur.val < best.val) best = cur;
  }
  res.value = best.val;
  res.xi_star = best.xi;
  return res;
}

// ---------------------------------------------------------------------------
// Duality pairing bound

struct DualityBlock {
  cplx lambda;
  DyadicCube tau;
  GridField A;
};

struct DualityCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool pass = false;
};

inline DualityCheck duality_pairing_check(const GridField& f, std::vector<DualityBlock> blocks,
                                          const MorreySpec& spec) {
  require_morrey_mode(spec);
  check_field(f);
  const double qd = holder_dual(spec.q);
  const double pd = holder_dual(spec.p);
  const double rd = holder_dual(spec.r);
  GridField g = make_field(f.dim, f.n_per_axis, f.extent, Space::Physical);
  for (auto& blk : blocks) {
    check_field(blk.A);
    if (blk.A.total() != f.total())
      throw std::invalid_argument("duality check: block grid mismatch");
    // support validation: outside tau the block must vanish (tolerance on
    // stray numerical mass), and its L^{q'} size may not exceed the cap.
    double inside_max = 0.0, outside_max = 0.0;
    std::vector<double> x(f.dim);
    for (std::size_t flat = 0; flat < f.total(); ++flat) {
      const auto idx = unflatten(flat, f.dim, f.n_per_axis);
      for (int a = 0; a < f.dim; ++a) x[a] = blk.A.coord(idx[a]);
      const double av = std::abs(blk.A.values[flat]);
      if (blk.tau.contains(x)) {
        inside_max = std::max(inside_max, av);
      } else {
        outside_max = std::max(outside_max, av);
        blk.A.values[flat] = 0.0;
      }
    }
    if (outside_max > 1e-9 * std::max(1e-300, inside_max))
      throw std::invalid_argument("duality check: block supported outside its cube");
    const double cap =
        std::pow(blk.tau.volume(f.dim), (qd == kInf ? 0.0 : 1.0 / qd) - (pd == kInf ? 0.0 : 1.0 / pd));
    const double sz = lp_norm(blk.A, qd);
    if (sz > cap * (1.0 + 1e-9) && sz > 0.0) {
      const double scale = cap / sz;
      for (auto& v : blk.A.values) v *= scale;
    }
    for (std::size_t i = 0; i < g.total(); ++i) g.values[i] += blk.lambda * blk.A.values[i];
  }
  cplx pairing = 0.0;
  for (std::size_t i = 0; i < f.total(); ++i) pairing += f.values[i] * g.values[i];
  pairing *= cell_measure(f);

  double lam = 0.0;
  if (rd == kInf) {
    for (const auto& blk : blocks) lam = std::max(lam, std::abs(blk.lambda));
  } else {
    for (const auto& blk : blocks) lam += std::pow(std::abs(blk.lambda), rd);
    lam = std::pow(lam, 1.0 / rd);
  }
  DualityCheck out;
  out.lhs = std::abs(pairing);
  out.rhs = morrey_norm(f, spec) * lam;
  out.pass = out.lhs <= out.rhs * (1.0 + 1e-9);
  return out;
}

// ---------------------------------------------------------------------------
// Dyadic averaging projection: cell means over cubes tau^{j1}_k inside
// D0 = [-2^{-j0}, 2^{-j0})^d, zero outside.  Means are sample means, which
// makes the projection exactly idempotent on the grid.

inline GridField dyadic_average_projection(const GridField& f, int j0, int j1) {
  check_field(f);
  if (f.space != Space::Physical)
    throw std::invalid_argument("dyadic_average_projection: field must be physical");
  if (j1 < j0) throw std::invalid_argument("dyadic_average_projection: need j1 >= j0");
  const double side = std::ldexp(1.0, -j1);
  if (side < f.step())
    throw std::invalid_argument("dyadic_average_projection: cell smaller than grid spacing");
  const double d0 = std::ldexp(1.0, -j0);
  const int d = f.dim;
  const std::size_t n = f.n_per_axis;

  std::map<std::vector<long long>, std::pair<cplx, std::size_t>> acc;
  std::vector<long long> key(d);
  for (std::size_t flat = 0; flat < f.total(); ++flat) {
    bool inside = true;
    const auto idx = unflatten(flat, d, n);
    for (int a = 0; a < d; ++a) {
      const double x = f.coord(idx[a]);
      if (!(x >= -d0 && x < d0)) {
        inside = false;
        break;
      }
      key[a] = (long long)std::floor(x / side);
    }
    if (!inside) continue;
    auto& slot = acc[key];
    slot.first += f.values[flat];
    slot.second += 1;
  }
  GridField out = make_field(d, n, f.extent, Space::Physical);
  for (std::size_t flat = 0; flat < f.total(); ++flat) {
    bool inside = true;
    const auto idx = unflatten(flat, d, n);
    for (int a = 0; a < d; ++a) {
      const double x = f.coord(idx[a]);
      if (!(x >= -d0 && x < d0)) {
        inside = false;
        break;
      }
      key[a] = (long long)std::floor(x / side);
    }
    if (!inside) continue;
    const auto& slot = acc[key];
    out.values[flat] = slot.first / double(slot.second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Compactness modulus: spatial tail + sampled translation modulus.

struct CompactnessModulus {
  double tail = 0.0;
  double shift_mod = 0.0;  // lower bound for the sup (finite sample)
};

namespace detail {
inline std::vector<std::vector<double>> shift_directions(int d) {
  std::vector<std::vector<double>> dirs;
  for (int a = 0; a < d; ++a) {
    std::vector<double> e(d, 0.0);
    e[a] = 1.0;
    dirs.push_back(e);
    e[a] = -1.0;
    dirs.push_back(e);
  }
  std::vector<double> diag(d, 1.0 / std::sqrt(double(d)));
  dirs.push_back(diag);
  return dirs;  // 2d + 1 directions
}
}  // namespace detail

inline CompactnessModulus compactness_modulus(const GridField& f, const MorreySpec& spec,
                                              double C) {
  require_morrey_mode(spec);
  check_field(f);
  if (!(C > 0.0)) throw std::invalid_argument("compactness_modulus: C must be > 0");
  CompactnessModulus out;

  GridField tail_f = f;
  std::vector<double> x(f.dim);
  for (std::size_t flat = 0; flat < f.total(); ++flat) {
    const auto idx = unflatten(flat, f.dim, f.n_per_axis);
    double r2 = 0.0;
    for (int a = 0; a < f.dim; ++a) {
      x[a] = f.coord(idx[a]);
      r2 += x[a] * x[a];
    }
    if (r2 < C * C) tail_f.values[flat] = 0.0;
  }
  out.tail = morrey_norm(tail_f, spec);

  const auto dirs = detail::shift_directions(f.dim);
  for (const auto& dir : dirs) {
    for (double mag : {1.0, 0.5, 0.25, 0.125}) {
      std::vector<double> z(f.dim);
      for (int a = 0; a < f.dim; ++a) z[a] = dir[a] * mag / C;
      GridField shifted = translate(f, z);
      for (std::size_t i = 0; i < shifted.total(); ++i) shifted.values[i] -= f.values[i];
      out.shift_mod = std::max(out.shift_mod, morrey_norm(shifted, spec));
    }
  }
  return out;
}

// Almost-periodicity residual:
//   sup_{|w| <= N/C_eta} ||(e^{i w.(x-y)} - 1) u||_hat
//   + || F^{-1} 1_{|xi - z| >= C_eta N} F u ||_hat,
// the sup sampled over 2d+1 directions x 4 magnitudes (lower bound).
inline double almost_periodicity_residual(const GridField& u, double N,
                                          const std::vector<double>& y,
                                          const std::vector<double>& z, double C_eta,
                                          const MorreySpec& spec) {
  require_hat_mode(spec);
  check_field(u);
  if (!(N > 0.0) || !(C_eta > 0.0))
    throw std::invalid_argument("almost_periodicity_residual: N and C_eta must be > 0");
  const GridField phys = (u.space == Space::Physical) ? u : to_physical(u);
  const int d = phys.dim;
  if (y.size() != std::size_t(d) || z.size() != std::size_t(d))
    throw std::invalid_argument("almost_periodicity_residual: y/z dimension mismatch");

  double term1 = 0.0;
  const auto dirs = detail::shift_directions(d);
  std::vector<double> x(d);
  for (const auto& dir : dirs) {
    for (double mag : {1.0, 0.5, 0.25, 0.125}) {
      std::vector<double> w(d);
      for (int a = 0; a < d; ++a) w[a] = dir[a] * mag * N / C_eta;
      GridField g = phys;
      for (std::size_t flat = 0; flat < g.total(); ++flat) {
        const auto idx = unflatten(flat, d, g.n_per_axis);
        double phase = 0.0;
        for (int a = 0; a < d; ++a) phase += w[a] * (g.coord(idx[a]) - y[a]);
        g.values[flat] *= (std::polar(1.0, phase) - 1.0);
      }
      term1 = std::max(term1, hat_morrey_norm(g, spec));
    }
  }

  GridField F = to_fourier(phys);
  const double R = C_eta * N;
  for (std::size_t flat = 0; flat < F.total(); ++flat) {
    const auto idx = unflatten(flat, d, F.n_per_axis);
    double r2 = 0.0;
    for (int a = 0; a < d; ++a) r2 += sq(F.coord(idx[a]) - z[a]);
    if (r2 < R * R) F.values[flat] = 0.0;  // keep only |xi - z| >= C_eta N
  }
  const double term2 = hat_morrey_norm(F, spec);
  return term1 + term2;
}

}  // namespace morrey_nls
