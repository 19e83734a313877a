#pragma once

// Complex fields on uniform periodic grids, the unitary Fourier transform
// between the physical and frequency representations, and dyadic frequency
// cubes.
//
// Conventions, used everywhere downstream:
//   * extent E is a half-width: samples live on [-E, E)^d, step = 2E/n,
//     coord(i) = (i - n/2) * step.  This holds in both spaces.
//   * the transform is unitary, (Ff)(xi) = (2pi)^{-d/2} \int f e^{-i x.xi} dx,
//     discretized so that Parseval holds exactly on the grid.
//   * a frequency sample at xi represents the cell [xi, xi + dxi)^d; dyadic
//     cube operations are exact in this piecewise-constant model whenever
//     dxi is a power of two, i.e. the physical extent is pi * 2^m.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "morrey_nls/core.hpp"
#include "morrey_nls/fft.hpp"

namespace morrey_nls {

enum class Space { Physical, Fourier };

struct GridField {
  int dim = 1;
  std::size_t n_per_axis = 0;
  double extent = 0.0;  // half-width
  Space space = Space::Physical;
  std::vector<cplx> values;  // row-major, last axis fastest

  double step() const { return 2.0 * extent / double(n_per_axis); }
  double coord(std::size_t i) const {
    return (double(i) - 0.5 * double(n_per_axis)) * step();
  }
  // Integer cell coordinate: coord(i) = cell(i) * step exactly.
  long long cell(std::size_t i) const {
    return static_cast<long long>(i) - static_cast<long long>(n_per_axis / 2);
  }
  std::size_t total() const { return values.size(); }
};

inline std::size_t pow_n(std::size_t n, int d) {
  std::size_t t = 1;
  for (int a = 0; a < d; ++a) t *= n;
  return t;
}

inline void check_field(const GridField& f) {
  if (f.dim < 1) throw std::invalid_argument("field: dim must be >= 1");
  if (f.n_per_axis < 2 || f.n_per_axis % 2 != 0)
    throw std::invalid_argument("field: n_per_axis must be even and >= 2");
  if (!(f.extent > 0.0)) throw std::invalid_argument("field: extent must be positive");
  if (f.values.size() != pow_n(f.n_per_axis, f.dim))
    throw std::invalid_argument("field: values size does not match n^dim");
}

inline GridField make_field(int dim, std::size_t n, double extent, Space space) {
  GridField f{dim, n, extent, space, std::vector<cplx>(pow_n(n, dim))};
  check_field(f);
  return f;
}

inline std::vector<std::size_t> unflatten(std::size_t flat, int dim, std::size_t n) {
  std::vector<std::size_t> idx(dim);
  for (int a = dim - 1; a >= 0; --a) {
    idx[a] = flat % n;
    flat /= n;
  }
  return idx;
}

inline std::size_t flatten(const std::vector<std::size_t>& idx, std::size_t n) {
  std::size_t flat = 0;
  for (std::size_t v : idx) flat = flat * n + v;
  return flat;
}

inline GridField sample_physical(int dim, std::size_t n, double extent,
                                 const std::function<cplx(const std::vector<double>&)>& fn) {
  GridField f = make_field(dim, n, extent, Space::Physical);
  std::vector<double> x(dim);
  for (std::size_t flat = 0; flat < f.total(); ++flat) {
    const auto idx = unflatten(flat, dim, n);
    for (int a = 0; a < dim; ++a) x[a] = f.coord(idx[a]);
    f.values[flat] = fn(x);
  }
  return f;
}

namespace detail {

// Multiplies values[idx] by (-1)^{sum of multi-index digits}.
inline void alternate_sign_pass(GridField& f) {
  const std::size_t n = f.n_per_axis;
  std::vector<std::size_t> idx(f.dim, 0);
  int parity = 0;
  for (std::size_t flat = 0; flat < f.total(); ++flat) {
    if (parity) f.values[flat] = -f.values[flat];
    // odometer increment, tracking digit-sum parity
    for (int a = f.dim - 1; a >= 0; --a) {
      if (++idx[a] < n) {
        parity ^= 1;
        break;
      }
      idx[a] = 0;
      parity ^= (n - 1) & 1;
    }
  }
}

inline void fft_all_axes(GridField& f, bool inverse) {
  const std::size_t n = f.n_per_axis;
  if (!is_pow2(n)) throw std::invalid_argument("transform: n_per_axis must be a power of two");
  std::vector<cplx> line(n);
  std::size_t stride = 1;
  for (int a = f.dim - 1; a >= 0; --a) {
    const std::size_t block = n * stride;
    const std::size_t nblocks = f.total() / block;
    for (std::size_t blk = 0; blk < nblocks; ++blk) {
      for (std::size_t off = 0; off < stride; ++off) {
        const std::size_t base = blk * block + off;
        for (std::size_t t = 0; t < n; ++t) line[t] = f.values[base + t * stride];
        fft::transform(line, inverse);
        for (std::size_t t = 0; t < n; ++t) f.values[base + t * stride] = line[t];
      }
    }
    stride *= n;
  }
}

// Per-axis scalar for the unitary discrete transform:
//   F(xi_k) = c * (-1)^k DFT[(-1)^i f_i]_k,  c = dx * sigma / sqrt(2pi),
// with sigma = (-1)^{n/2} absorbing the centered-grid cross phase.
inline double forward_scalar(const GridField& phys) {
  const double sigma = ((phys.n_per_axis / 2) & 1) ? -1.0 : 1.0;
  return phys.step() * sigma / std::sqrt(2.0 * kPi);
}

}  // namespace detail

inline double fourier_partner_extent(const GridField& f) {
  // E' = pi n / (2 E): the transform swaps (step, extent) via step' = pi/E.
  return kPi * double(f.n_per_axis) / (2.0 * f.extent);
}

inline GridField to_fourier(const GridField& f) {
  check_field(f);
  if (f.space == Space::Fourier) return f;
  GridField g = f;
  detail::alternate_sign_pass(g);
  detail::fft_all_axes(g, /*inverse=*/false);
  detail::alternate_sign_pass(g);
  double c = 1.0;
  for (int a = 0; a < f.dim; ++a) c *= detail::forward_scalar(f);
  for (auto& v : g.values) v *= c;
  g.space = Space::Fourier;
  g.extent = fourier_partner_extent(f);
  return g;
}

inline GridField to_physical(const GridField& f) {
  check_field(f);
  if (f.space == Space::Physical) return f;
  GridField g = f;
  const double pe = fourier_partner_extent(f);
  GridField phys_proto = g;
  phys_proto.extent = pe;
  double c = 1.0;
  for (int a = 0; a < f.dim; ++a) c *= detail::forward_scalar(phys_proto);
  for (auto& v : g.values) v /= c;
  detail::alternate_sign_pass(g);
  detail::fft_all_axes(g, /*inverse=*/true);
  detail::alternate_sign_pass(g);
  g.space = Space::Physical;
  g.extent = pe;
  return g;
}

// Grid measure of one sample cell in the field's own space.
inline double cell_measure(const GridField& f) {
  double m = 1.0;
  for (int a = 0; a < f.dim; ++a) m *= f.step();
  return m;
}

inline double l2_norm(const GridField& f) {
  double s = 0.0;
  for (const auto& v : f.values) s += std::norm(v);
  return std::sqrt(s * cell_measure(f));
}

inline double lp_norm(const GridField& f, double p) {
  if (p == kInf) {
    double m = 0.0;
    for (const auto& v : f.values) m = std::max(m, std::abs(v));
    return m;
  }
  double s = 0.0;
  for (const auto& v : f.values) s += std::pow(std::abs(v), p);
  return std::pow(s * cell_measure(f), 1.0 / p);
}

inline cplx inner_product(const GridField& f, const GridField& g) {
  if (f.total() != g.total() || f.space != g.space)
    throw std::invalid_argument("inner_product: mismatched fields");
  cplx s = 0.0;
  for (std::size_t i = 0; i < f.total(); ++i) s += std::conj(g.values[i]) * f.values[i];
  return s * cell_measure(f);
}

// Pointwise multiplication by e^{-i x.xi}; exact modulation on the torus.
inline GridField phase_modulate(const GridField& f, const std::vector<double>& xi) {
  check_field(f);
  if (f.space != Space::Physical)
    throw std::invalid_argument("phase_modulate: field must be physical");
  if (xi.size() != std::size_t(f.dim))
    throw std::invalid_argument("phase_modulate: xi dimension mismatch");
  GridField g = f;
  for (std::size_t flat = 0; flat < g.total(); ++flat) {
    const auto idx = unflatten(flat, g.dim, g.n_per_axis);
    double phase = 0.0;
    for (int a = 0; a < g.dim; ++a) phase += g.coord(idx[a]) * xi[a];
    g.values[flat] *= std::polar(1.0, -phase);
  }
  return g;
}

// f(x - z) for arbitrary real z, via the frequency-side phase e^{-i xi.z}.
// Exact on the torus (shifts wrap periodically).
inline GridField translate(const GridField& f, const std::vector<double>& z) {
  check_field(f);
  if (f.space != Space::Physical)
    throw std::invalid_argument("translate: field must be physical");
  if (z.size() != std::size_t(f.dim))
    throw std::invalid_argument("translate: z dimension mismatch");
  GridField F = to_fourier(f);
  for (std::size_t flat = 0; flat < F.total(); ++flat) {
    const auto idx = unflatten(flat, F.dim, F.n_per_axis);
    double phase = 0.0;
    for (int a = 0; a < F.dim; ++a) phase += F.coord(idx[a]) * z[a];
    F.values[flat] *= std::polar(1.0, -phase);
  }
  return to_physical(F);
}

// Dyadic cube tau^j_k = 2^{-j}([0,1)^d + k), half-open.
struct DyadicCube {
  int j = 0;
  std::vector<long long> k;

  double side() const { return std::ldexp(1.0, -j); }
  double lower(int axis) const { return std::ldexp(double(k[axis]), -j); }
  double upper(int axis) const { return std::ldexp(double(k[axis]) + 1.0, -j); }
  double volume(int dim) const { return std::ldexp(1.0, -j * dim); }
  bool contains(const std::vector<double>& x) const {
    for (std::size_t a = 0; a < k.size(); ++a) {
      if (!(x[a] >= lower(int(a)) && x[a] < upper(int(a)))) return false;
    }
    return true;
  }
};

// Scale truncation bounds plus the per-scale index bound induced by the
// Nyquist band: at scale j, cube indices satisfy -k_bound*2^j <= k < k_bound*2^j.
struct FrequencyWindow {
  int j_min = 0;
  int j_max = 0;
  long long k_bound = 0;
};

// True when the frequency step is an exact power of two, which makes every
// sample cell a dyadic cube.  Requires physical extent = pi * 2^m.
inline bool dyadic_step(const GridField& f) {
  int e = 0;
  return std::frexp(f.step(), &e) == 0.5;
}

// -log2(step) for a dyadic-step field: the scale whose cubes are the cells.
inline int cell_scale(const GridField& f) {
  if (!dyadic_step(f)) throw std::invalid_argument("cell_scale: step is not a power of two");
  int e = 0;
  std::frexp(f.step(), &e);
  return 1 - e;  // step = 2^{e-1} = 2^{-(1-e)}
}

// Zeroes every frequency sample whose cell origin lies outside the cube.
inline GridField restrict_to_cube(const GridField& f, const DyadicCube& cube) {
  check_field(f);
  if (f.space != Space::Fourier)
    throw std::invalid_argument("restrict_to_cube: field must be in the Fourier representation");
  if (cube.k.size() != std::size_t(f.dim))
    throw std::invalid_argument("restrict_to_cube: cube dimension mismatch");
  const std::size_t n = f.n_per_axis;
  std::vector<std::vector<char>> keep(f.dim, std::vector<char>(n));
  for (int a = 0; a < f.dim; ++a) {
    const double lo = cube.lower(a), hi = cube.upper(a);
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = f.coord(i);
      keep[a][i] = (xi >= lo && xi < hi) ? 1 : 0;
    }
  }
  GridField g = f;
  for (std::size_t flat = 0; flat < f.total(); ++flat) {
    const auto idx = unflatten(flat, f.dim, n);
    bool in = true;
    for (int a = 0; a < f.dim; ++a) in = in && keep[a][idx[a]];
    if (!in) g.values[flat] = 0.0;
  }
  return g;
}

}  // namespace morrey_nls
