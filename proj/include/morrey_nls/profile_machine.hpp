#pragma once

// Constructive decomposition stack on top of the hat-Morrey machinery:
//   - greedy_scale_decomposition: skim the best-scoring dyadic frequency
//     cube, amplitude-truncated, until the remainder norm drops to eps;
//   - extract_bubbles: matched-filter recovery of time/space-translated
//     copies of a common profile from a field sequence;
//   - profile_decompose: per-member greedy + cross-member family matching
//     + per-family bubble extraction, reassembled with explicit
//     deformation parameters and decoupling/orthogonality diagnostics;
//   - eta_lower_bound: empirical (m, M) -> beta lower-bound shape check;
//   - almost_periodicity_params / track_almost_periodicity: concentration
//     parameter extraction per field / per trajectory snapshot.
//
// All decompositions are subtractive: reconstruction is exact by
// construction and every loss (band drops, crop tails) lands in the
// reported remainder, never in the identity.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdlib>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "evolution.hpp"
#include "field_grid.hpp"
#include "function_spaces.hpp"
#include "symmetry_group.hpp"

namespace morrey_nls {

// ---------------------------------------------------------------------------
// Greedy dyadic scale decomposition

struct GreedyOptions {
  // abort when the remainder norm fails to drop by this relative factor
  // over stall_window consecutive iterations
  double delta_stall = 1e-3;
  int stall_window = 3;
  std::size_t max_pieces = 256;
  bool merge = true;
  // pieces are merged when their cube scales differ by at most
  // merge_scale_gap and their cube corners by at most merge_position_gap
  // coarser side lengths per axis
  int merge_scale_gap = 1;
  double merge_position_gap = 1.5;
};

struct ScalePiece {
  DyadicCube cube;
  // frequency representation; every sample either vanishes or equals the
  // corresponding sample of the input transform (entry-disjoint skimming)
  GridField field;
  double amp_cap = 0.0;    // C1 * |tau|^{-1/p'}; |field| <= amp_cap holds
  double local_mass = 0.0; // |tau|^{1/p'-1/2} L2 mass of the piece on tau
};

namespace detail {

// cube index of a frequency cell at scale j (j no finer than the cell
// scale, so cells never straddle cube boundaries)
inline long long cube_index_of_cell(long long cell, double step, int j) {
  return (long long)std::floor(std::ldexp(double(cell) * step, j));
}

inline double piece_local_mass(const GridField& ff, const DyadicCube& cube, double pd) {
  const int d = ff.dim;
  const double step = ff.step();
  double pow2 = 0.0;
  std::vector<std::size_t> idx(d, 0);
  const std::size_t n = ff.n_per_axis;
  for (std::size_t flat = 0; flat < ff.total(); ++flat) {
    bool in = true;
    for (int a = 0; a < d && in; ++a)
      in = cube_index_of_cell(ff.cell(idx[a]), step, cube.j) == cube.k[a];
    if (in) pow2 += std::norm(ff.values[flat]);
    for (int a = d - 1; a >= 0; --a) {
      if (++idx[a] < n) break;
      idx[a] = 0;
    }
  }
  const double vol = cube.volume(d);
  return std::pow(vol, 1.0 / pd - 0.5) * std::sqrt(pow2 * cell_measure(ff));
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  }
  void unite(std::size_t i, std::size_t j) {
    i = find(i);
    j = find(j);
    if (i != j) parent[std::max(i, j)] = std::min(i, j);  // earliest index wins
  }
};

inline bool cubes_comparable(const DyadicCube& c1, const DyadicCube& c2,
                             const GreedyOptions& opt) {
  if (std::abs(c1.j - c2.j) > opt.merge_scale_gap) return false;
  const double side = std::max(c1.side(), c2.side());
  for (std::size_t a = 0; a < c1.k.size(); ++a)
    if (std::abs(c1.lower(int(a)) - c2.lower(int(a))) > opt.merge_position_gap * side)
      return false;
  return true;
}

}  // namespace detail

// Repeatedly select the dyadic frequency cube tau maximizing
// |tau|^{1/p'-1/q'} ||F u||_{L^{q'}(tau)}, remove its samples of magnitude
// at most C1 |tau|^{-1/p'}, and stop once the remainder's hat-Morrey norm
// is at most eps.  Samples are taken at most once, so the pieces and the
// remainder have pairwise disjoint frequency supports and
// u = sum(pieces) + q holds at FFT roundoff; disjointness makes the
// r-power decoupling ||u||^r >= sum ||f^j||^r + ||q||^r exact per cube.
// Comparable-cube pieces are merged at the end (earliest-selected cube is
// the representative).  Throws on stall: a spectrum whose peaks exceed
// every cap at the winning scale cannot make progress.
inline std::pair<std::vector<ScalePiece>, GridField> greedy_scale_decomposition(
    const GridField& u, double eps, const MorreySpec& spec, double C1 = 1.0,
    const GreedyOptions& opt = {}) {
  require_hat_mode(spec);
  check_field(u);
  if (!(eps > 0.0)) throw std::invalid_argument("greedy: eps must be positive");
  if (!(C1 > 0.0)) throw std::invalid_argument("greedy: C1 must be positive");
  if (opt.stall_window < 1) throw std::invalid_argument("greedy: stall_window must be >= 1");

  const int d = u.dim;
  const double pd = holder_dual(spec.p);
  const double qd = holder_dual(spec.q);

  std::vector<ScalePiece> pieces;
  double qnorm = hat_morrey_norm(u, spec);
  if (qnorm <= eps) return {std::move(pieces), u};

  GridField fq = to_fourier(u);
  const double step = fq.step();
  const std::size_t n = fq.n_per_axis;
  std::vector<double> history{qnorm};

  while (qnorm > eps) {
    if (pieces.size() >= opt.max_pieces)
      throw std::runtime_error("greedy: piece budget exhausted before reaching eps");

    const detail::CubeScore best = detail::dyadic_best_cube(fq, qd, pd);

    ScalePiece piece;
    piece.field = fq;
    for (auto& v : piece.field.values) v = 0.0;

    // skim every in-cube cell at or below the amplitude cap; returns the
    // number of cells moved and tracks the strongest cell left behind
    std::size_t hot = 0;
    double hot_v = 0.0;
    auto skim = [&](const DyadicCube& cube, double cap) -> double {
      double got = 0.0;
      std::vector<std::size_t> idx(d, 0);
      for (std::size_t flat = 0; flat < fq.total(); ++flat) {
        bool in = true;
        for (int a = 0; a < d && in; ++a)
          in = detail::cube_index_of_cell(fq.cell(idx[a]), step, cube.j) == cube.k[a];
        if (in && fq.values[flat] != cplx(0.0)) {
          const double v = std::abs(fq.values[flat]);
          if (v <= cap) {
            piece.field.values[flat] = fq.values[flat];
            fq.values[flat] = 0.0;
            got += 1.0;
          } else if (v > hot_v) {
            hot_v = v;
            hot = flat;
          }
        }
        for (int a = d - 1; a >= 0; --a) {
          if (++idx[a] < n) break;
          idx[a] = 0;
        }
      }
      return got;
    };

    piece.cube = best.cube;
    piece.amp_cap = C1 * std::pow(best.cube.volume(d), -1.0 / pd);
    double taken = skim(best.cube, piece.amp_cap);

    if (taken == 0.0 && hot_v > 0.0) {
      // the cap bites every remaining cell of the winning cube; zoom toward
      // the strongest cell one scale at a time (caps grow like |tau|^{-1/p'}
      // under refinement) and take the first nonempty skim, so that every
      // intermediate scale leaves a piece and merge chains stay connected
      const int jc = cell_scale(fq);
      const auto hidx = unflatten(hot, d, n);
      for (int j2 = best.cube.j + 1; j2 <= jc && taken == 0.0; ++j2) {
        DyadicCube sub;
        sub.j = j2;
        sub.k.resize(d);
        for (int a = 0; a < d; ++a)
          sub.k[a] = detail::cube_index_of_cell(fq.cell(hidx[a]), step, j2);
        const double cap2 = C1 * std::pow(sub.volume(d), -1.0 / pd);
        piece.cube = sub;
        piece.amp_cap = cap2;
        taken = skim(sub, cap2);
      }
    }

    if (taken > 0.0) {
      piece.local_mass = detail::piece_local_mass(piece.field, piece.cube, pd);
      pieces.push_back(std::move(piece));
      qnorm = hat_morrey_norm(fq, spec);
    }
    history.push_back(qnorm);

    const std::size_t h = history.size();
    if (h > std::size_t(opt.stall_window)) {
      const double before = history[h - 1 - opt.stall_window];
      if (qnorm > (1.0 - opt.delta_stall) * before)
        throw std::runtime_error(
            "greedy stall: remainder norm " + std::to_string(qnorm) +
            " did not drop by factor " + std::to_string(opt.delta_stall) + " over " +
            std::to_string(opt.stall_window) +
            " iterations (spectral peaks above every amplitude cap?)");
    }
  }

  if (opt.merge && pieces.size() > 1) {
    detail::UnionFind uf(pieces.size());
    for (std::size_t i = 0; i < pieces.size(); ++i)
      for (std::size_t j = i + 1; j < pieces.size(); ++j)
        if (detail::cubes_comparable(pieces[i].cube, pieces[j].cube, opt)) uf.unite(i, j);

    std::vector<ScalePiece> merged;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      if (uf.find(i) != i) continue;
      ScalePiece group = pieces[i];
      for (std::size_t j = i + 1; j < pieces.size(); ++j) {
        if (uf.find(j) != i) continue;
        for (std::size_t t = 0; t < group.field.total(); ++t)
          group.field.values[t] += pieces[j].field.values[t];  // disjoint entries
        group.amp_cap = std::max(group.amp_cap, pieces[j].amp_cap);
      }
      group.local_mass = detail::piece_local_mass(group.field, group.cube, pd);
      merged.push_back(std::move(group));
    }
    pieces = std::move(merged);
  }

  GridField q = (u.space == Space::Physical) ? to_physical(fq) : fq;
  return {std::move(pieces), std::move(q)};
}

// ---------------------------------------------------------------------------
// Spectral resampling between commensurate dyadic grids

// Re-represents f on the (extent_t, n_t) grid with the same physical
// content: inside f's box the target samples follow the band-limited
// interpolant, outside they vanish.  Both the step ratio and the extent
// ratio must be powers of two.  Content above the target band or outside
// the target box is dropped; its L2 mass is added to *dropped_l2 when
// given.  Exact (up to FFT roundoff) whenever nothing is dropped.
inline GridField resample_field(const GridField& f, double extent_t, std::size_t n_t,
                                double* dropped_l2 = nullptr) {
  check_field(f);
  if (f.space != Space::Physical)
    throw std::invalid_argument("resample_field: field must be physical");
  if (n_t < 2 || n_t % 2 != 0) throw std::invalid_argument("resample_field: bad target n");
  if (!(extent_t > 0.0)) throw std::invalid_argument("resample_field: bad target extent");

  const double dx_s = f.step();
  const double dx_t = 2.0 * extent_t / double(n_t);
  const double ratio = dx_t / dx_s;
  int e = 0;
  if (std::frexp(ratio, &e) != 0.5)
    throw std::invalid_argument("resample_field: step ratio is not a power of two");
  const int sigma = e - 1;  // dx_t = dx_s * 2^sigma

  double drop_pow = 0.0;
  GridField g = f;

  if (sigma > 0) {
    // coarser target step: band-truncate, then stride-subsample
    GridField F = to_fourier(g);
    const double band_t = kPi / dx_t;
    const std::size_t n = F.n_per_axis;
    std::vector<std::size_t> idx(F.dim, 0);
    for (std::size_t flat = 0; flat < F.total(); ++flat) {
      bool in = true;
      for (int a = 0; a < F.dim && in; ++a) {
        const double xi = F.coord(idx[a]);
        in = (xi >= -band_t && xi < band_t);
      }
      if (!in) {
        drop_pow += std::norm(F.values[flat]) * cell_measure(F);
        F.values[flat] = 0.0;
      }
      for (int a = F.dim - 1; a >= 0; --a) {
        if (++idx[a] < n) break;
        idx[a] = 0;
      }
    }
    g = to_physical(F);
    const std::size_t stride = std::size_t(1) << sigma;
    const std::size_t n_mid = g.n_per_axis / stride;
    if (n_mid < 2 || n_mid % 2 != 0)
      throw std::invalid_argument("resample_field: target step too coarse for source grid");
    GridField sub = make_field(g.dim, n_mid, g.extent, Space::Physical);
    const std::size_t nsrc = g.n_per_axis;
    std::vector<std::size_t> tid(g.dim, 0);
    for (std::size_t flat = 0; flat < sub.total(); ++flat) {
      std::vector<std::size_t> sid(g.dim);
      for (int a = 0; a < g.dim; ++a)
        sid[a] = std::size_t((long long)(nsrc / 2) +
                             ((long long)tid[a] - (long long)(n_mid / 2)) *
                                 (long long)stride);
      sub.values[flat] = g.values[flatten(sid, nsrc)];
      for (int a = g.dim - 1; a >= 0; --a) {
        if (++tid[a] < n_mid) break;
        tid[a] = 0;
      }
    }
    g = std::move(sub);
  } else if (sigma < 0) {
    // finer target step: zero-pad the spectrum (band-limited refinement)
    const std::size_t factor = std::size_t(1) << (-sigma);
    const std::size_t n_new = g.n_per_axis * factor;
    if (n_new > (std::size_t(1) << 22))
      throw std::invalid_argument("resample_field: refinement factor too large");
    GridField F = to_fourier(g);
    GridField Fw = make_field(F.dim, n_new, kPi * double(n_new) / (2.0 * g.extent),
                              Space::Fourier);
    // same frequency step; central embed
    const std::size_t n = F.n_per_axis;
    std::vector<std::size_t> idx(F.dim, 0);
    for (std::size_t flat = 0; flat < F.total(); ++flat) {
      std::vector<std::size_t> tid(F.dim);
      for (int a = 0; a < F.dim; ++a)
        tid[a] = std::size_t((long long)idx[a] - (long long)(n / 2) +
                             (long long)(n_new / 2));
      Fw.values[flatten(tid, n_new)] = F.values[flat];
      for (int a = F.dim - 1; a >= 0; --a) {
        if (++idx[a] < n) break;
        idx[a] = 0;
      }
    }
    g = to_physical(Fw);
    g.extent = f.extent;  // partner-extent roundoff guard: box is unchanged
  }

  // step now matches dx_t; crop or zero-extend the box to extent_t
  const std::size_t n_now = g.n_per_axis;
  GridField out = make_field(f.dim, n_t, extent_t, Space::Physical);
  const long long off = (long long)(n_now / 2) - (long long)(n_t / 2);
  std::vector<std::size_t> tid(f.dim, 0);
  if (n_t <= n_now) {
    // crop: account for the discarded tail mass
    std::vector<std::size_t> sid(f.dim, 0);
    for (std::size_t flat = 0; flat < g.total(); ++flat) {
      bool in = true;
      for (int a = 0; a < f.dim && in; ++a) {
        const long long t = (long long)sid[a] - off;
        in = (t >= 0 && t < (long long)n_t);
      }
      if (!in) drop_pow += std::norm(g.values[flat]) * cell_measure(g);
      for (int a = f.dim - 1; a >= 0; --a) {
        if (++sid[a] < n_now) break;
        sid[a] = 0;
      }
    }
  }
  for (std::size_t flat = 0; flat < out.total(); ++flat) {
    bool in = true;
    std::vector<std::size_t> sid(f.dim);
    for (int a = 0; a < f.dim && in; ++a) {
      const long long s = (long long)tid[a] + off;
      in = (s >= 0 && s < (long long)n_now);
      if (in) sid[a] = std::size_t(s);
    }
    if (in) out.values[flat] = g.values[flatten(sid, n_now)];
    for (int a = f.dim - 1; a >= 0; --a) {
      if (++tid[a] < n_t) break;
      tid[a] = 0;
    }
  }
  if (dropped_l2) *dropped_l2 += std::sqrt(drop_pow);
  return out;
}

// ---------------------------------------------------------------------------
// Bubble extraction

struct BubbleOptions {
  double corr_tol = 0.05;   // mean normalized correlation to accept a bubble
  double s_max = 16.0;      // initial half-range of the time search grid
  double s_hard_cap = 1e6;  // extension limit before failing
  int refine_rounds = 2;
  int newton_iters = 8;
  double window_width = 1.0;    // Gaussian window std dev
  double min_mass_frac = 1e-3;  // bubble L2 mass floor, relative to the input
  // alternating re-fit sweeps over all extracted bubbles: each bubble is
  // restored into the residual and fitted again without the others, which
  // removes the cross-talk bias of the one-shot sequential extraction
  int refine_sweeps = 3;
};

struct Bubble {
  std::vector<double> s;                // per member
  std::vector<std::vector<double>> a;   // per member
  std::vector<double> theta;            // per-member phase of the aligned copy
  GridField phi;                        // physical, on the common grid
  double mean_correlation = 0.0;        // Cauchy-Schwarz normalized, in [0,1]
};

struct BubbleExtraction {
  std::vector<Bubble> bubbles;
  std::vector<GridField> residual;
};

namespace detail {

inline GridField gaussian_window(const GridField& proto, double width) {
  GridField w = make_field(proto.dim, proto.n_per_axis, proto.extent, Space::Physical);
  std::vector<std::size_t> idx(w.dim, 0);
  for (std::size_t flat = 0; flat < w.total(); ++flat) {
    double r2 = 0.0;
    for (int a = 0; a < w.dim; ++a) r2 += sq(w.coord(idx[a]));
    w.values[flat] = std::exp(-r2 / (2.0 * width * width));
    for (int a = w.dim - 1; a >= 0; --a) {
      if (++idx[a] < w.n_per_axis) break;
      idx[a] = 0;
    }
  }
  const double nn = l2_norm(w);
  for (auto& v : w.values) v /= nn;
  return w;
}

// c(s, a) = <U(-s) T(-a) res, ref> evaluated through the frequency side:
// c = sum_xi Fres(xi) conj(Fref(xi)) e^{i s |xi|^2} e^{i xi.a} dxi^d.
struct CorrSearch {
  GridField prod;               // Fres * conj(Fref), Fourier representation
  std::vector<double> xi2;      // |xi|^2 per sample
  std::vector<std::vector<double>> xiax;  // xi per axis per sample
  double measure = 0.0;

  CorrSearch(const GridField& res, const GridField& ref) {
    GridField fr = to_fourier(res);
    const GridField fw = to_fourier(ref);
    prod = fr;
    for (std::size_t i = 0; i < prod.total(); ++i)
      prod.values[i] = fr.values[i] * std::conj(fw.values[i]);
    measure = cell_measure(prod);
    const std::size_t n = prod.n_per_axis;
    xi2.assign(prod.total(), 0.0);
    xiax.assign(prod.dim, std::vector<double>(prod.total(), 0.0));
    std::vector<std::size_t> idx(prod.dim, 0);
    for (std::size_t flat = 0; flat < prod.total(); ++flat) {
      double s2 = 0.0;
      for (int a = 0; a < prod.dim; ++a) {
        const double xi = prod.coord(idx[a]);
        xiax[a][flat] = xi;
        s2 += xi * xi;
      }
      xi2[flat] = s2;
      for (int a = prod.dim - 1; a >= 0; --a) {
        if (++idx[a] < n) break;
        idx[a] = 0;
      }
    }
  }

  cplx value(double s, const std::vector<double>& a) const {
    cplx acc = 0.0;
    for (std::size_t i = 0; i < prod.total(); ++i) {
      if (prod.values[i] == cplx(0.0)) continue;
      double ph = s * xi2[i];
      for (int ax = 0; ax < prod.dim; ++ax) ph += xiax[ax][i] * a[ax];
      acc += prod.values[i] * std::polar(1.0, ph);
    }
    return acc * measure;
  }

  // grid argmax of |c(s, .)| over all spatial offsets at fixed s
  std::pair<double, std::vector<double>> spatial_argmax(double s) const {
    GridField W = prod;
    for (std::size_t i = 0; i < W.total(); ++i)
      W.values[i] *= std::polar(1.0, s * xi2[i]);
    const GridField P = to_physical(W);
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < P.total(); ++i) {
      const double v = std::abs(P.values[i]);
      if (v > best) {
        best = v;
        arg = i;
      }
    }
    const auto idx = unflatten(arg, P.dim, P.n_per_axis);
    std::vector<double> a(P.dim);
    for (int ax = 0; ax < P.dim; ++ax) a[ax] = P.coord(idx[ax]);
    return {best, a};
  }

  // one damped Newton step on |c|^2 along coordinate k (k == -1: time)
  double newton_coord(double s, std::vector<double>& a, int k, double max_step) const {
    cplx c = 0.0, c1 = 0.0, c2 = 0.0;
    for (std::size_t i = 0; i < prod.total(); ++i) {
      if (prod.values[i] == cplx(0.0)) continue;
      double ph = s * xi2[i];
      for (int ax = 0; ax < prod.dim; ++ax) ph += xiax[ax][i] * a[ax];
      const double w = (k < 0) ? xi2[i] : xiax[k][i];
      const cplx term = prod.values[i] * std::polar(1.0, ph);
      c += term;
      c1 += cplx(0.0, w) * term;
      c2 += -w * w * term;
    }
    c *= measure;
    c1 *= measure;
    c2 *= measure;
    const double g1 = 2.0 * (std::conj(c) * c1).real();
    const double g2 = 2.0 * (std::norm(c1) + (std::conj(c) * c2).real());
    double delta;
    if (g2 < 0.0) {
      delta = -g1 / g2;
    } else {
      delta = (g1 > 0.0 ? 1.0 : -1.0) * 0.25 * max_step;  // ascend away from a valley
    }
    delta = std::clamp(delta, -max_step, max_step);
    const double before = std::norm(c);
    for (int trial = 0; trial < 6; ++trial) {
      double s_try = s;
      std::vector<double> a_try = a;
      if (k < 0)
        s_try += delta;
      else
        a_try[k] += delta;
      if (std::norm(value(s_try, a_try)) >= before) {
        if (k < 0) return s_try;
        a = a_try;
        return s;
      }
      delta *= 0.5;
    }
    return s;  // no improving step
  }
};

// time search grid: 0, +-g0, +-2 g0, ... doubling up to s_max
inline std::vector<double> time_grid(double g0, double s_max) {
  std::vector<double> g{0.0};
  for (double v = g0; v <= s_max * (1.0 + 1e-12); v *= 2.0) {
    g.push_back(v);
    g.push_back(-v);
  }
  std::sort(g.begin(), g.end());
  return g;
}

struct PeakFit {
  double s = 0.0;
  std::vector<double> a;
  double theta = 0.0;
  double corr = 0.0;  // normalized |c| against ||res|| ||ref||
};

// full search for one member against one reference
inline PeakFit locate_peak(const GridField& res, const GridField& ref,
                           const BubbleOptions& opt) {
  const CorrSearch cs(res, ref);
  double s_range = opt.s_max;
  const double g0 = 0.25;

  double best_s = 0.0;
  std::vector<double> best_a(res.dim, 0.0);
  while (true) {
    const auto grid = time_grid(g0, s_range);
    double best_v = -1.0;
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const auto [v, a] = cs.spatial_argmax(grid[i]);
      if (v > best_v) {
        best_v = v;
        best_i = i;
        best_s = grid[i];
        best_a = a;
      }
    }
    if (best_i != 0 && best_i != grid.size() - 1) {
      // refine: shrink the bracket around the winning node
      double lo = grid[best_i - 1], hi = grid[best_i + 1];
      for (int round = 0; round < opt.refine_rounds; ++round) {
        const int pts = 17;
        double rb = -1.0;
        double rs = best_s;
        std::vector<double> ra = best_a;
        for (int p = 0; p < pts; ++p) {
          const double s = lo + (hi - lo) * double(p) / double(pts - 1);
          const auto [v, a] = cs.spatial_argmax(s);
          if (v > rb) {
            rb = v;
            rs = s;
            ra = a;
          }
        }
        const double span = (hi - lo) / double(pts - 1);
        best_s = rs;
        best_a = ra;
        lo = rs - span;
        hi = rs + span;
      }
      break;
    }
    if (best_i == 0 && best_i == grid.size() - 1) break;  // degenerate single node
    s_range *= 2.0;
    if (s_range > opt.s_hard_cap)
      throw std::runtime_error(
          "bubble search: correlation peak stayed at the time-grid boundary up to "
          "half-range " +
          std::to_string(s_range / 2.0) + "; grid too coarse for this sequence");
  }

  // joint sub-cell polish
  const double cell_t = 0.25;
  const double cell_x = res.step();
  double s = best_s;
  std::vector<double> a = best_a;
  for (int it = 0; it < opt.newton_iters; ++it) {
    s = cs.newton_coord(s, a, -1, cell_t);
    for (int ax = 0; ax < res.dim; ++ax) cs.newton_coord(s, a, ax, cell_x);
  }

  PeakFit fit;
  fit.s = s;
  fit.a = a;
  const cplx c = cs.value(s, a);
  fit.theta = std::arg(c);
  const double denom = l2_norm(res) * l2_norm(ref);
  fit.corr = (denom > 0.0) ? std::abs(c) / denom : 0.0;
  return fit;
}

// coordinatewise median across members.  After alignment the shared profile
// sits at the origin in every member while leftover mass (the other bubbles,
// earlier subtraction errors) lands at member-dependent offsets, so at any
// fixed sample at most one member is polluted and the median rejects it.
// Exact on identical copies.
// Robust average of aligned copies: coordinatewise median of the real and
// imaginary parts, except where the magnitudes reveal sparse pollution
// (median magnitude above twice the smallest).  Leakage from other bubbles
// sits at member-dependent offsets after alignment, so a majority of
// members can be polluted at one point while some member stays clean
// there; the profile is the structure common to every copy, so the
// cleanest member is trusted in that regime.
inline GridField robust_profile_average(const std::vector<GridField>& A) {
  GridField out = A[0];
  const std::size_t N = A.size();
  std::vector<double> re(N), im(N), mag(N);
  for (std::size_t i = 0; i < out.total(); ++i) {
    std::size_t nmin = 0;
    for (std::size_t n = 0; n < N; ++n) {
      re[n] = A[n].values[i].real();
      im[n] = A[n].values[i].imag();
      mag[n] = std::abs(A[n].values[i]);
      if (mag[n] < mag[nmin]) nmin = n;
    }
    std::sort(mag.begin(), mag.end());
    const std::size_t h = N / 2;
    const double med_mag = (N & 1) ? mag[h] : 0.5 * (mag[h - 1] + mag[h]);
    if (med_mag > 2.0 * mag[0]) {
      out.values[i] = A[nmin].values[i];
      continue;
    }
    std::sort(re.begin(), re.end());
    std::sort(im.begin(), im.end());
    if (N & 1)
      out.values[i] = cplx(re[h], im[h]);
    else
      out.values[i] = cplx(0.5 * (re[h - 1] + re[h]), 0.5 * (im[h - 1] + im[h]));
  }
  return out;
}

inline GridField aligned_copy(const GridField& res, const PeakFit& fit) {
  std::vector<double> na(fit.a.size());
  for (std::size_t i = 0; i < na.size(); ++i) na[i] = -fit.a[i];
  GridField A = free_propagate(translate(res, na), -fit.s);
  const cplx rot = std::polar(1.0, -fit.theta);
  for (auto& v : A.values) v *= rot;
  return A;
}

}  // namespace detail

// Matched-filter extraction of common-profile bubbles from a sequence of
// same-grid physical fields.  Per bubble: locate the per-member (s, a)
// correlation peak against a unit-width Gaussian window (grid scan over a
// doubling time grid and all spatial offsets, bracket refinement, damped
// Newton polish), average the aligned phase-corrected members, then redo
// the search matched against that average and subtract
// U(s_n) T(a_n) e^{i theta_n} phi.  Stops when the mean normalized
// correlation falls below corr_tol or max_bubbles is reached.  The peak
// escaping every extension of the time grid is an error.
inline BubbleExtraction extract_bubbles(const std::vector<GridField>& R,
                                        const GridField& F_cap, int max_bubbles,
                                        const BubbleOptions& opt = {}) {
  if (R.size() < 3)
    throw std::invalid_argument("extract_bubbles: need a sequence of at least 3 fields");
  for (const auto& f : R) {
    check_field(f);
    if (f.space != Space::Physical)
      throw std::invalid_argument("extract_bubbles: fields must be physical");
    if (f.dim != R[0].dim || f.n_per_axis != R[0].n_per_axis ||
        std::abs(f.extent - R[0].extent) > 1e-12 * R[0].extent)
      throw std::invalid_argument("extract_bubbles: fields must share one grid");
  }
  check_field(F_cap);
  if (F_cap.space != Space::Fourier)
    throw std::invalid_argument("extract_bubbles: cap must be a frequency-side field");
  const double pext = fourier_partner_extent(R[0]);
  if (F_cap.dim != R[0].dim || F_cap.n_per_axis != R[0].n_per_axis ||
      std::abs(F_cap.extent - pext) > 1e-9 * pext)
    throw std::invalid_argument("extract_bubbles: cap grid does not match the sequence");
  double cap_sup = 0.0;
  for (const auto& v : F_cap.values) cap_sup = std::max(cap_sup, std::abs(v));
  for (std::size_t n = 0; n < R.size(); ++n) {
    const GridField fr = to_fourier(R[n]);
    for (std::size_t i = 0; i < fr.total(); ++i)
      if (std::abs(fr.values[i]) > std::abs(F_cap.values[i]) + 1e-9 * (1.0 + cap_sup))
        throw std::invalid_argument(
            "extract_bubbles: member " + std::to_string(n) +
            " exceeds the frequency cap (|F R| = " + std::to_string(std::abs(fr.values[i])) +
            " > " + std::to_string(std::abs(F_cap.values[i])) + ")");
  }

  BubbleExtraction out;
  out.residual = R;
  if (max_bubbles <= 0) return out;

  const std::size_t N = R.size();
  double input_scale = 0.0;
  for (const auto& f : R) input_scale = std::max(input_scale, l2_norm(f));
  const GridField w0 = detail::gaussian_window(R[0], opt.window_width);

  // add (sign +1) or subtract (sign -1) one bubble's modeled contribution
  auto apply_bubble = [&](const Bubble& bub, double sign) {
    for (std::size_t n = 0; n < N; ++n) {
      GridField contrib = free_propagate(translate(bub.phi, bub.a[n]), bub.s[n]);
      const cplx rot = sign * std::polar(1.0, bub.theta[n]);
      for (std::size_t i = 0; i < contrib.total(); ++i)
        out.residual[n].values[i] += rot * contrib.values[i];
    }
  };

  // one matched round: fit every member against ref, median the aligned copies
  auto fit_round = [&](const GridField& ref, std::vector<detail::PeakFit>& fits) {
    for (std::size_t n = 0; n < N; ++n)
      fits[n] = detail::locate_peak(out.residual[n], ref, opt);
    std::vector<GridField> aligned;
    aligned.reserve(N);
    for (std::size_t n = 0; n < N; ++n)
      aligned.push_back(detail::aligned_copy(out.residual[n], fits[n]));
    return detail::robust_profile_average(aligned);
  };

  // fix the overall phase so that <phi, gaussian window> is real positive
  auto anchor_phase = [&](GridField& phi, std::vector<detail::PeakFit>& fits) {
    const cplx anchor = inner_product(phi, w0);
    if (std::abs(anchor) > 0.0) {
      const double zeta = std::arg(anchor);
      const cplx rot = std::polar(1.0, -zeta);
      for (auto& v : phi.values) v *= rot;
      for (auto& f : fits) f.theta += zeta;
    }
  };

  auto agreement = [&](const GridField& phi, const std::vector<detail::PeakFit>& fits) {
    const double phin = l2_norm(phi);
    if (phin == 0.0) return 0.0;
    double mean_corr = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double rn = l2_norm(out.residual[n]);
      const cplx c = inner_product(detail::aligned_copy(out.residual[n], fits[n]), phi);
      mean_corr += (rn > 0.0) ? std::abs(c) / (rn * phin) : 0.0;
    }
    return mean_corr / double(N);
  };

  auto store = [&](Bubble& bub, const GridField& phi,
                   const std::vector<detail::PeakFit>& fits, double corr) {
    bub.phi = phi;
    bub.mean_correlation = corr;
    bub.s.clear();
    bub.a.clear();
    bub.theta.clear();
    for (std::size_t n = 0; n < N; ++n) {
      bub.s.push_back(fits[n].s);
      bub.a.push_back(fits[n].a);
      bub.theta.push_back(fits[n].theta);
    }
  };

  for (int b = 0; b < max_bubbles; ++b) {
    double res_scale = 0.0;
    for (const auto& f : out.residual) res_scale = std::max(res_scale, l2_norm(f));
    if (res_scale <= 1e-14 * (1.0 + input_scale)) break;

    // pass 1: Gaussian window; pass 2: matched against the running estimate
    std::vector<detail::PeakFit> fits(N);
    GridField phi = fit_round(w0, fits);
    if (l2_norm(phi) > 0.0) phi = fit_round(phi, fits);

    // reject numerically coherent dust left by earlier subtractions
    const double phin = l2_norm(phi);
    if (phin < opt.min_mass_frac * (input_scale > 0.0 ? input_scale : 1.0)) break;

    anchor_phase(phi, fits);
    const double mean_corr = agreement(phi, fits);
    if (mean_corr < opt.corr_tol) break;

    Bubble bub;
    store(bub, phi, fits, mean_corr);
    apply_bubble(bub, -1.0);
    out.bubbles.push_back(std::move(bub));

    // alternating refinement: restore one bubble at a time and fit it again
    // without the others, removing the sequential cross-talk bias
    if (out.bubbles.size() > 1) {
      for (int sweep = 0; sweep < opt.refine_sweeps; ++sweep) {
        for (auto& cur : out.bubbles) {
          apply_bubble(cur, +1.0);
          std::vector<detail::PeakFit> rf(N);
          GridField rphi = fit_round(cur.phi, rf);
          if (l2_norm(rphi) > 0.0) {
            anchor_phase(rphi, rf);
            store(cur, rphi, rf, agreement(rphi, rf));
          }
          apply_bubble(cur, -1.0);
        }
      }
    }
  }
  return out;
}

// per-member separation |s^A - s^B| + |a^A - a^B|_1 of two bubbles
inline std::vector<double> bubble_separation(const Bubble& A, const Bubble& B) {
  if (A.s.size() != B.s.size())
    throw std::invalid_argument("bubble_separation: member count mismatch");
  std::vector<double> sep(A.s.size(), 0.0);
  for (std::size_t n = 0; n < sep.size(); ++n) {
    sep[n] = std::abs(A.s[n] - B.s[n]);
    for (std::size_t ax = 0; ax < A.a[n].size(); ++ax)
      sep[n] += std::abs(A.a[n][ax] - B.a[n][ax]);
  }
  return sep;
}

// ---------------------------------------------------------------------------
// Assembled profile decomposition

struct DecomposeOptions {
  GreedyOptions greedy;
  BubbleOptions bubble;
  double C1 = 1.0;
  int max_bubbles = 4;
  double family_match_tol = 0.7;  // cosine similarity of |F| shape probes
  double strichartz_T = 8.0;      // remainder free-flow report window
  int strichartz_steps = 65;
};

struct ProfileEntry {
  std::vector<Deformation> deformations;  // one per sequence member
  GridField phi;                          // physical, family common grid
  double size = 0.0;                      // hat-Morrey norm of phi
};

struct ProfileDecomposition {
  std::vector<ProfileEntry> profiles;
  std::vector<GridField> remainder;  // per member, on the input grid
  double decoupling_residual = 0.0;
  // orthogonality diagnostics between profile deformations at the last member
  std::vector<std::vector<FamilyDivergence>> pairwise_divergence;
  // free-flow space-time size of the remainder: largest member and the
  // least-squares trend over the member index
  double remainder_S_max = 0.0;
  double remainder_S_slope = 0.0;
  std::vector<std::size_t> piece_counts;  // greedy pieces per member
  double max_input_norm = 0.0;
};

namespace detail {

// free-flow space-time size (int_{-T}^{T} ||e^{it Lap} f||_{p}^{p} dt)^{1/p}
// with p = (d+2) spec.p / d, trapezoid in t
inline double free_flow_size(const GridField& f, const MorreySpec& spec, double T,
                             int steps) {
  if (steps < 2) throw std::invalid_argument("free_flow_size: need at least 2 steps");
  const double p_st = (double(f.dim) + 2.0) * spec.p / double(f.dim);
  const GridField F = to_fourier(f);
  double acc = 0.0;
  const double dt = 2.0 * T / double(steps - 1);
  for (int k = 0; k < steps; ++k) {
    const double t = -T + dt * double(k);
    const GridField u = to_physical(free_propagate(F, t));
    double I = 0.0;
    for (const auto& v : u.values) I += std::pow(std::abs(v), p_st);
    I *= cell_measure(u);
    acc += I * dt * ((k == 0 || k == steps - 1) ? 0.5 : 1.0);
  }
  return std::pow(acc, 1.0 / p_st);
}

// |F| sampled at a fixed probe lattice inside the piece's cube; the scale
// and position cancel, so the statistic is deformation-blind
inline std::vector<double> shape_probe(const ScalePiece& piece) {
  const int d = piece.field.dim;
  const int per_axis = 8;
  const double step = piece.field.step();
  const std::size_t n = piece.field.n_per_axis;
  std::size_t count = 1;
  for (int a = 0; a < d; ++a) count *= per_axis;
  std::vector<double> probe(count, 0.0);
  std::vector<int> c(d, 0);
  for (std::size_t p = 0; p < count; ++p) {
    std::vector<std::size_t> idx(d);
    bool ok = true;
    for (int a = 0; a < d && ok; ++a) {
      const double xi = piece.cube.lower(a) + (double(c[a]) + 0.5) / double(per_axis) *
                                                  piece.cube.side();
      const long long cell = (long long)std::floor(xi / step);
      const long long i = cell + (long long)(n / 2);
      ok = (i >= 0 && i < (long long)n);
      if (ok) idx[a] = std::size_t(i);
    }
    if (ok) probe[p] = std::abs(piece.field.values[flatten(idx, n)]);
    for (int a = d - 1; a >= 0; --a) {
      if (++c[a] < per_axis) break;
      c[a] = 0;
    }
  }
  double nn = 0.0;
  for (double v : probe) nn += v * v;
  nn = std::sqrt(nn);
  if (nn > 0.0)
    for (double& v : probe) v /= nn;
  return probe;
}

inline double cosine(const std::vector<double>& x, const std::vector<double>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

// the deformation whose normal form carries the unit frequency cube onto
// the piece's cube (with the norm-preserving mass renormalization)
inline Deformation cube_deformation(const DyadicCube& cube, int dim) {
  Deformation g = identity_deformation(dim);
  g.m = -cube.j;
  for (int a = 0; a < dim; ++a) g.b[a] = -double(cube.k[a]);
  return g;
}

}  // namespace detail

// Per-member greedy decomposition, cross-member family matching by the
// deformation-blind |F| shape statistic, per-family renormalization onto a
// common grid and bubble extraction, reassembled as explicit profiles
// u_n ~= sum apply(G_n^{j,l}, phi^{j,l}) + R_n with
// G = e^{i theta} D(2^m) P(b) U(s) T(a) read directly off the pipeline.
// The remainder is computed subtractively, so reconstruction is an
// identity; decoupling, pairwise divergence, and the remainder's free-flow
// size are reported as diagnostics.  Families that fail to appear in every
// member are folded back into the remainder.
inline ProfileDecomposition profile_decompose(const std::vector<GridField>& u_seq,
                                              double eps, const MorreySpec& spec,
                                              const DecomposeOptions& opt = {}) {
  require_hat_mode(spec);
  if (u_seq.size() < 3)
    throw std::invalid_argument("profile_decompose: need a sequence of at least 3 fields");
  for (const auto& u : u_seq) {
    check_field(u);
    if (u.space != Space::Physical)
      throw std::invalid_argument("profile_decompose: fields must be physical");
    if (u.dim != u_seq[0].dim || u.n_per_axis != u_seq[0].n_per_axis ||
        std::abs(u.extent - u_seq[0].extent) > 1e-12 * u_seq[0].extent)
      throw std::invalid_argument("profile_decompose: fields must share one grid");
  }
  const std::size_t N = u_seq.size();
  const int d = u_seq[0].dim;
  const double alpha_renorm = spec.p / double(d);
  const double pd = holder_dual(spec.p);

  ProfileDecomposition out;
  out.remainder = u_seq;
  for (const auto& u : u_seq) {
    const double nn = hat_morrey_norm(u, spec);
    if (!std::isfinite(nn))
      throw std::invalid_argument("profile_decompose: input norm is not finite");
    out.max_input_norm = std::max(out.max_input_norm, nn);
  }

  // per-member greedy
  std::vector<std::vector<ScalePiece>> pieces(N);
  for (std::size_t n = 0; n < N; ++n) {
    pieces[n] = greedy_scale_decomposition(u_seq[n], eps, spec, opt.C1, opt.greedy).first;
    out.piece_counts.push_back(pieces[n].size());
  }

  // family matching across members by shape similarity
  struct Family {
    std::vector<int> member_piece;  // piece index per member, -1 when absent
    std::vector<double> probe;      // representative shape
  };
  std::vector<Family> families;
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<char> used(pieces[n].size(), 0);
    for (auto& fam : families) {
      double best = -1.0;
      int arg = -1;
      for (std::size_t p = 0; p < pieces[n].size(); ++p) {
        if (used[p]) continue;
        const double sim = detail::cosine(fam.probe, detail::shape_probe(pieces[n][p]));
        if (sim > best) {
          best = sim;
          arg = int(p);
        }
      }
      if (arg >= 0 && best >= opt.family_match_tol) {
        fam.member_piece.push_back(arg);
        used[std::size_t(arg)] = 1;
      } else {
        fam.member_piece.push_back(-1);
      }
    }
    for (std::size_t p = 0; p < pieces[n].size(); ++p) {
      if (used[p]) continue;
      Family fam;
      fam.member_piece.assign(n, -1);
      fam.member_piece.push_back(int(p));
      fam.probe = detail::shape_probe(pieces[n][p]);
      families.push_back(std::move(fam));
    }
  }

  // per-family renormalization + bubble extraction; partial families are
  // left inside the remainder
  for (const auto& fam : families) {
    bool full = true;
    for (int mp : fam.member_piece) full = full && (mp >= 0);
    if (!full) continue;

    std::vector<GridField> Rs;
    std::vector<Deformation> cube_defs;
    double min_extent = kInf;
    for (std::size_t n = 0; n < N; ++n) {
      const ScalePiece& pc = pieces[n][std::size_t(fam.member_piece[n])];
      const Deformation g = detail::cube_deformation(pc.cube, d);
      cube_defs.push_back(g);
      GridField Rn = apply(invert(g), to_physical(pc.field), alpha_renorm);
      min_extent = std::min(min_extent, Rn.extent);
      Rs.push_back(std::move(Rn));
    }
    const std::size_t n_common = u_seq[0].n_per_axis;
    for (auto& Rn : Rs)
      if (std::abs(Rn.extent - min_extent) > 1e-12 * min_extent ||
          Rn.n_per_axis != n_common)
        Rn = resample_field(Rn, min_extent, n_common);

    // merged pieces may hold cells skimmed under a finer cube's larger cap;
    // every cell obeys the recorded per-piece cap, so after renormalization
    // by the representative cube the exact certificate is the cap ratio
    double cap_slack = 1.0;
    for (std::size_t n = 0; n < N; ++n) {
      const ScalePiece& pc = pieces[n][std::size_t(fam.member_piece[n])];
      const double rep_cap = opt.C1 * std::pow(pc.cube.volume(d), -1.0 / pd);
      cap_slack = std::max(cap_slack, pc.amp_cap / rep_cap);
    }
    GridField cap = make_field(d, n_common, fourier_partner_extent(Rs[0]), Space::Fourier);
    for (auto& v : cap.values) v = opt.C1 * cap_slack * (1.0 + 1e-6);
    const BubbleExtraction ext = extract_bubbles(Rs, cap, opt.max_bubbles, opt.bubble);

    for (const auto& bub : ext.bubbles) {
      ProfileEntry prof;
      prof.phi = bub.phi;
      prof.size = hat_morrey_norm(bub.phi, spec);
      for (std::size_t n = 0; n < N; ++n) {
        Deformation g = cube_defs[n];
        g.s = bub.s[n];
        g.a = bub.a[n];
        g.theta = bub.theta[n];
        prof.deformations.push_back(g);

        // contribution on the member's grid; resampling losses stay in the
        // remainder by construction
        const double pre_extent = std::ldexp(u_seq[n].extent, g.m);
        GridField pre = resample_field(bub.phi, pre_extent, n_common);
        const GridField contrib = apply(g, pre, alpha_renorm);
        for (std::size_t i = 0; i < out.remainder[n].total(); ++i)
          out.remainder[n].values[i] -= contrib.values[i];
      }
      out.profiles.push_back(std::move(prof));
    }
  }

  // diagnostics
  double sum_pow = 0.0;
  for (const auto& prof : out.profiles) sum_pow += std::pow(prof.size, spec.r);
  double rem_max = 0.0;
  std::vector<double> remS(N, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    rem_max = std::max(rem_max, hat_morrey_norm(out.remainder[n], spec));
    remS[n] = detail::free_flow_size(out.remainder[n], spec, opt.strichartz_T,
                                     opt.strichartz_steps);
  }
  out.decoupling_residual = std::max(
      0.0, sum_pow + std::pow(rem_max, spec.r) - std::pow(out.max_input_norm, spec.r));

  out.remainder_S_max = *std::max_element(remS.begin(), remS.end());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    sx += double(n);
    sy += remS[n];
    sxx += double(n) * double(n);
    sxy += double(n) * remS[n];
  }
  const double det = double(N) * sxx - sx * sx;
  out.remainder_S_slope = (det > 0.0) ? (double(N) * sxy - sx * sy) / det : 0.0;

  out.pairwise_divergence.assign(out.profiles.size(),
                                 std::vector<FamilyDivergence>(out.profiles.size()));
  for (std::size_t i = 0; i < out.profiles.size(); ++i)
    for (std::size_t j = 0; j < out.profiles.size(); ++j)
      out.pairwise_divergence[i][j] = orthogonality_divergence(
          out.profiles[i].deformations.back(), out.profiles[j].deformations.back());
  return out;
}

// ---------------------------------------------------------------------------
// Concentration lower bound

struct EtaBound {
  double m = 0.0;                 // min over members of the free-flow size
  double M = 0.0;                 // max over members of the hat-Morrey norm
  double beta_shape = 0.0;        // (1/2) (m^{p_st} / M^r)^{1/(p_st - r)}
  double max_profile_size = 0.0;  // largest extracted-profile norm
};

inline double beta_shape(double m, double M, const MorreySpec& spec, int dim) {
  if (!(m > 0.0) || !(M > 0.0)) return 0.0;
  const double p_st = (double(dim) + 2.0) * spec.p / double(dim);
  if (!(p_st > spec.r))
    throw std::invalid_argument("beta_shape: needs (d+2) p / d > r");
  return 0.5 * std::pow(std::pow(m, p_st) / std::pow(M, spec.r), 1.0 / (p_st - spec.r));
}

// Empirical form of the concentration dichotomy: a sequence with free-flow
// size bounded below must produce at least one profile.  Reports the
// (m, M) pair, the candidate lower-bound shape, and the largest extracted
// profile; throws when m is positive but the decomposition finds nothing.
inline EtaBound eta_lower_bound(const std::vector<GridField>& u_seq,
                                const MorreySpec& spec, const DecomposeOptions& opt = {}) {
  require_hat_mode(spec);
  if (u_seq.empty()) throw std::invalid_argument("eta_lower_bound: empty sequence");
  EtaBound out;
  for (const auto& u : u_seq) {
    out.M = std::max(out.M, hat_morrey_norm(u, spec));
  }
  out.m = kInf;
  for (const auto& u : u_seq)
    out.m = std::min(out.m, detail::free_flow_size(u, spec, opt.strichartz_T,
                                                   opt.strichartz_steps));
  out.beta_shape = beta_shape(out.m, out.M, spec, u_seq[0].dim);

  const double eps = std::max(1e-6, 0.1 * out.M);
  const ProfileDecomposition dec = profile_decompose(u_seq, eps, spec, opt);
  for (const auto& prof : dec.profiles)
    out.max_profile_size = std::max(out.max_profile_size, prof.size);

  if (out.m > 1e-9 && !(out.max_profile_size > 0.0))
    throw std::runtime_error(
        "eta_lower_bound: free-flow size " + std::to_string(out.m) +
        " is positive but no profile was extracted");
  return out;
}

// ---------------------------------------------------------------------------
// Almost-periodicity parameter extraction

struct APOptions {
  double check_T = 8.0;  // window for the free-flow size gate
  int check_steps = 65;
  double tile_T = 8.0;   // half-range of the space-time tiling
  double tile_dt = 0.25;
  GreedyOptions greedy;
  double C1 = 1.0;
};

struct APParams {
  double lambda = 1.0;          // dyadic scale of the selected cube
  std::vector<long long> b;     // cube index (frequency position = lambda * b)
  std::vector<double> a;        // spatial center of the winning unit tile
  double local_mass = 0.0;      // rooted space-time mass of the winning tile
  double floor_value = 0.0;     // qualification floor delta / (2 J)
  double piece_S = 0.0;         // free-flow size of the selected piece
  int piece_index = -1;
  std::size_t piece_count = 0;
};

// Select the scale/position/center witnessing concentration: greedy
// decomposition at eps = delta/3, pick the piece of largest free-flow size
// among those reaching the floor delta/(2J), read (lambda, b) off its
// cube, renormalize, and take a as the mass centroid of the unit
// space-time tile maximizing the local flow mass of the renormalized
// piece.  Gate: the field's own free-flow size must reach delta.
inline APParams almost_periodicity_params(const GridField& u, double delta,
                                          const MorreySpec& spec,
                                          const APOptions& opt = {}) {
  require_hat_mode(spec);
  check_field(u);
  if (u.space != Space::Physical)
    throw std::invalid_argument("almost_periodicity_params: field must be physical");
  if (!(delta > 0.0)) throw std::invalid_argument("almost_periodicity_params: delta <= 0");

  const double S_u = detail::free_flow_size(u, spec, opt.check_T, opt.check_steps);
  if (S_u < delta)
    throw std::invalid_argument("almost_periodicity_params: free-flow size " +
                                std::to_string(S_u) + " below delta = " +
                                std::to_string(delta));

  auto [pieces, q] = greedy_scale_decomposition(u, delta / 3.0, spec, opt.C1, opt.greedy);
  if (pieces.empty())
    throw std::runtime_error("almost_periodicity_params: no pieces at eps = delta/3");

  APParams out;
  out.piece_count = pieces.size();
  out.floor_value = delta / (2.0 * double(pieces.size()));

  double best_S = -1.0;
  double best_mass = -1.0;
  for (std::size_t p = 0; p < pieces.size(); ++p) {
    const double S_p = detail::free_flow_size(to_physical(pieces[p].field), spec,
                                              opt.check_T, opt.check_steps);
    if (S_p < out.floor_value) continue;
    const bool better =
        (S_p > best_S) ||
        (S_p == best_S && pieces[p].local_mass > best_mass);
    if (better) {
      best_S = S_p;
      best_mass = pieces[p].local_mass;
      out.piece_index = int(p);
    }
  }
  if (out.piece_index < 0) {
    double achieved = 0.0;
    for (const auto& pc : pieces)
      achieved = std::max(achieved, detail::free_flow_size(to_physical(pc.field), spec,
                                                           opt.check_T, opt.check_steps));
    throw std::runtime_error(
        "almost_periodicity_params: no piece reaches the floor " +
        std::to_string(out.floor_value) + " (best " + std::to_string(achieved) + " of " +
        std::to_string(pieces.size()) + " pieces)");
  }
  out.piece_S = best_S;

  const ScalePiece& sel = pieces[std::size_t(out.piece_index)];
  out.lambda = sel.cube.side();
  out.b = sel.cube.k;

  const int d = u.dim;
  const Deformation g_cube = detail::cube_deformation(sel.cube, d);
  const GridField g = apply(invert(g_cube), to_physical(sel.field), spec.p / double(d));

  // unit space-time tiling of the free flow; trapezoid inside each tile
  const double p_st = (double(d) + 2.0) * spec.p / double(d);
  const int per_tile = std::max(1, int(std::lround(1.0 / opt.tile_dt)));
  const double dt = 1.0 / double(per_tile);
  const long long t_tiles = (long long)std::llround(2.0 * opt.tile_T);
  const GridField G = to_fourier(g);

  std::map<std::pair<long long, std::vector<long long>>, double> tile_mass;
  std::map<std::pair<long long, std::vector<long long>>, std::vector<double>> tile_moment;
  const double meas = cell_measure(g);
  for (long long tt = 0; tt <= t_tiles; ++tt) {
    for (int sub = 0; sub < (tt == t_tiles ? 1 : per_tile); ++sub) {
      const double t = -opt.tile_T + double(tt) + dt * double(sub);
      const GridField ut = to_physical(free_propagate(G, t));
      // endpoint samples carry half weight inside each tile; a tile's
      // closing endpoint is the next tile's opening sample
      std::vector<std::pair<long long, double>> owners;
      if (sub == 0) {
        if (tt > 0) owners.push_back({tt - 1, 0.5 * dt});
        if (tt < t_tiles) owners.push_back({tt, 0.5 * dt});
      } else {
        owners.push_back({tt, dt});
      }
      std::vector<std::size_t> idx(d, 0);
      for (std::size_t flat = 0; flat < ut.total(); ++flat) {
        const double m = std::pow(std::abs(ut.values[flat]), p_st) * meas;
        if (m > 0.0) {
          std::vector<long long> box(d);
          std::vector<double> center(d);
          for (int a = 0; a < d; ++a) {
            const double x = ut.coord(idx[a]);
            box[a] = (long long)std::floor(x);
            center[a] = x + 0.5 * ut.step();
          }
          for (const auto& [ot, wt] : owners) {
            const auto key = std::make_pair(ot, box);
            tile_mass[key] += wt * m;
            auto& mom = tile_moment[key];
            if (mom.empty()) mom.assign(d, 0.0);
            for (int a = 0; a < d; ++a) mom[a] += wt * m * center[a];
          }
        }
        for (int a = d - 1; a >= 0; --a) {
          if (++idx[a] < ut.n_per_axis) break;
          idx[a] = 0;
        }
      }
    }
  }
  if (tile_mass.empty())
    throw std::runtime_error("almost_periodicity_params: renormalized piece vanishes");
  auto best = tile_mass.begin();
  for (auto it = tile_mass.begin(); it != tile_mass.end(); ++it)
    if (it->second > best->second) best = it;
  const auto& mom = tile_moment[best->first];
  out.a.assign(d, 0.0);
  for (int a = 0; a < d; ++a) out.a[a] = mom[a] / best->second;
  out.local_mass = std::pow(best->second, 1.0 / p_st);
  return out;
}

struct APTrack {
  std::vector<double> times;
  std::vector<APParams> params;
  std::vector<double> N;                // frequency scale lambda(t)
  std::vector<std::vector<double>> y;   // spatial center a(t) / lambda(t)
  std::vector<std::vector<double>> z;   // frequency center lambda(t) b(t)
  std::vector<double> residual;         // compactness residual per snapshot
  double eta = 0.0;
};

// Parameter extraction plus compactness residual for every snapshot of a
// trajectory.  No thresholding is applied here: the caller compares the
// residual series against eta.
inline APTrack track_almost_periodicity(const Trajectory& traj, double delta, double eta,
                                        double C_eta, const MorreySpec& spec,
                                        const APOptions& opt = {}) {
  if (traj.fields.empty())
    throw std::invalid_argument("track_almost_periodicity: empty trajectory");
  if (!(C_eta > 0.0))
    throw std::invalid_argument("track_almost_periodicity: C_eta must be positive");
  APTrack out;
  out.eta = eta;
  for (std::size_t i = 0; i < traj.fields.size(); ++i) {
    const GridField& u = traj.fields[i];
    APParams p = almost_periodicity_params(u, delta, spec, opt);
    const int d = u.dim;
    std::vector<double> y(d), z(d);
    for (int a = 0; a < d; ++a) {
      y[a] = p.a[a] / p.lambda;
      z[a] = p.lambda * double(p.b[a]);
    }
    const double res = almost_periodicity_residual(u, p.lambda, y, z, C_eta, spec);
    out.times.push_back(traj.times[i]);
    out.N.push_back(p.lambda);
    out.y.push_back(std::move(y));
    out.z.push_back(std::move(z));
    out.residual.push_back(res);
    out.params.push_back(std::move(p));
  }
  return out;
}

}  // namespace morrey_nls
