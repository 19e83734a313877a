#pragma once

// Iterative radix-2 FFT.  Twiddle factors come from a per-size table filled
// with std::polar per entry, so no rounding error accumulates along a stage.
// Forward is the plain DFT sum; inverse carries the 1/n factor.
// Not thread safe (shared twiddle cache).

#include <cstddef>
#include <map>
#include <memory>
#include <stdexcept>
#include <vector>

#include "morrey_nls/core.hpp"

namespace morrey_nls::fft {

namespace detail {

inline const std::vector<cplx>& roots_for(std::size_t n) {
  static std::map<std::size_t, std::unique_ptr<std::vector<cplx>>> cache;
  auto it = cache.find(n);
  if (it == cache.end()) {
    auto tab = std::make_unique<std::vector<cplx>>(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      (*tab)[k] = std::polar(1.0, -2.0 * kPi * double(k) / double(n));
    }
    it = cache.emplace(n, std::move(tab)).first;
  }
  return *it->second;
}

inline void bit_reverse_permute(cplx* a, std::size_t n) {
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
}

}  // namespace detail

// In-place transform of a contiguous buffer; n must be a power of two.
inline void transform(cplx* a, std::size_t n, bool inverse) {
  if (!is_pow2(n)) throw std::invalid_argument("fft: length must be a power of two");
  if (n == 1) return;
  const auto& roots = detail::roots_for(n);
  detail::bit_reverse_permute(a, n);
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t step = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        cplx w = roots[k * step];
        if (inverse) w = std::conj(w);
        const cplx u = a[i + k];
        const cplx v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
  if (inverse) {
    const double s = 1.0 / double(n);
    for (std::size_t i = 0; i < n; ++i) a[i] *= s;
  }
}

inline void transform(std::vector<cplx>& buf, bool inverse) {
  transform(buf.data(), buf.size(), inverse);
}

}  // namespace morrey_nls::fft
