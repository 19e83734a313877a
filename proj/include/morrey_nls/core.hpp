#pragma once

// Shared scalar types, exponent arithmetic, exact admissibility checks,
// quadrature, and a seeded RNG wrapper.

#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace morrey_nls {

using cplx = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// 2^m as a double; exact for |m| < 1023.
inline double pow2d(int m) { return std::ldexp(1.0, m); }

inline double sq(double x) { return x * x; }

// Holder dual: 1/p + 1/p' = 1, with 1' = inf and inf' = 1.
inline double holder_dual(double p) {
  if (p < 1.0) throw std::invalid_argument("holder_dual: p < 1");
  if (p == 1.0) return kInf;
  if (p == kInf) return 1.0;
  return p / (p - 1.0);
}

// a^* = min(a, 2a/(a-2)); the second branch binds only for a > 4.
inline double star_exponent(double a) {
  if (a <= 2.0) return a;
  return std::min(a, 2.0 * a / (a - 2.0));
}

// Exact decomposition x = mant * 2^exp with integral mant, |mant| < 2^53.
struct DyadicRational {
  std::int64_t mant = 0;
  int exp = 0;
};

inline DyadicRational decompose_double(double x) {
  if (!std::isfinite(x)) throw std::invalid_argument("decompose_double: non-finite");
  if (x == 0.0) return {0, 0};
  int e = 0;
  double m = std::frexp(x, &e);  // x = m * 2^e, |m| in [0.5, 1)
  return {static_cast<std::int64_t>(std::ldexp(m, 53)), e - 53};
}

struct AdmissibilityResult {
  bool ok = false;
  std::string reason;
};

// Decides the exponent window
//     2(d+3)/(d(d+3)+2) < alpha < 2/d,   (d*alpha)' < r < ((d+2)*alpha)^*
// exactly.  Doubles are binary rationals, so after range clamps every
// inequality reduces to an integer comparison that fits in __int128.
inline AdmissibilityResult admissible_exponents(int d, double alpha, double r) {
  if (d < 1) return {false, "dimension must be >= 1"};
  if (d > 4096) return {false, "dimension above supported range"};
  if (!(alpha > 0.0) || !std::isfinite(alpha)) return {false, "alpha must be a positive finite real"};
  if (!(r > 1.0) || !std::isfinite(r)) return {false, "r must be a finite real > 1"};
  // Outside these brackets the strict bounds below fail by a wide margin,
  // so plain double comparisons already decide the answer.
  if (alpha <= 1.0 / 1024.0) return {false, "alpha below the admissible window"};
  if (alpha >= 1024.0) return {false, "alpha above the admissible window"};
  if (r >= 1024.0) return {false, "r above the admissible window"};

  const auto [A, a] = decompose_double(alpha);  // alpha = A * 2^a, a in [-63, 10]
  const auto [R, b] = decompose_double(r);      // r     = R * 2^b
  using I = __int128;
  const I dd = d;
  // pow2(t) for t >= 0 as __int128; exponents here stay below 75.
  auto p2 = [](int t) { return I(1) << t; };

  // alpha * (d(d+3)+2) > 2(d+3)  <=>  A*(d(d+3)+2) > 2(d+3)*2^-a (a <= 0 here)
  {
    const I lhs_num = I(A) * (dd * (dd + 3) + 2);
    const I rhs_num = I(2) * (dd + 3);
    // compare A*(...)*2^a vs 2(d+3): shift whichever side has the power.
    const bool gt = (a >= 0) ? (lhs_num * p2(a) > rhs_num) : (lhs_num > rhs_num * p2(-a));
    if (!gt) return {false, "alpha at or below the lower admissibility bound 2(d+3)/(d(d+3)+2)"};
  }
  // alpha * d < 2
  {
    const I lhs = I(A) * dd;
    const bool lt = (a >= 0) ? (lhs * p2(a) < 2) : (lhs < I(2) * p2(-a));
    if (!lt) return {false, "alpha must lie strictly below 2/d"};
  }
  // d*alpha > 1 is implied by the lower bound; needed for (d*alpha)' below.
  // r > (d*alpha)'  <=>  r(d*alpha - 1) > d*alpha
  // With alpha = A*2^a < 2 and A >= 2^52, frexp forces a <= -51 < 0, so
  // (d*alpha - 1)*2^-a = d*A - 2^-a is integral:
  //   R*2^b * (d*A - 2^-a) > d*A.
  {
    if (a > 0) return {false, "r bound check: alpha out of expected range"};
    const I core = dd * I(A) - p2(-a);  // (d*alpha - 1) * 2^-a
    if (core <= 0) return {false, "d*alpha must exceed 1"};
    const I lhs = I(R) * core;
    const I rhs = dd * I(A);
    const bool gt = (b >= 0) ? (lhs * p2(b) > rhs) : (lhs > rhs * p2(-b));
    if (!gt) return {false, "r must lie strictly above (d*alpha)'"};
  }
  // r < (d+2)*alpha  and, when (d+2)*alpha > 4 is moot, the cap
  // r((d+2)*alpha - 2) < 2(d+2)*alpha.  Both are required since
  // ((d+2)*alpha)^* = min of the two branch values and > 2 always holds here.
  {
    const I M = (dd + 2) * I(A);  // (d+2)*alpha = M * 2^a, a <= 0
    // r < (d+2)*alpha  <=>  R*2^b < M*2^a  <=>  R*2^{b-a} < M
    const int s = b - a;  // |s| small
    const bool lt1 = (s >= 0) ? (I(R) * p2(s) < M) : (I(R) < M * p2(-s));
    if (!lt1) return {false, "r must lie strictly below (d+2)*alpha"};
    // r(A2 - 2) < 2*A2 with A2 = M*2^a:
    // R*2^b*(M*2^a - 2) < 2*M*2^a  <=>  R*(M - 2^{1-a})*2^{a+b} < M*2^{1+a}
    // <=>  R*(M - 2^{1-a})*2^b < M*2.
    const I core = M - p2(1 - a);  // A2 - 2, scaled by 2^-a
    if (core > 0) {
      const I lhs = I(R) * core;
      const I rhs = I(2) * M;
      const bool lt2 = (b >= 0) ? (lhs * p2(b) < rhs) : (lhs < rhs * p2(-b));
      if (!lt2) return {false, "r must lie strictly below 2(d+2)alpha/((d+2)alpha-2)"};
    }
  }
  return {true, ""};
}

// Seeded RNG wrapper; all stochastic tests and experiments draw from this.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform(double a, double b) {
    std::uniform_real_distribution<double> d(a, b);
    return d(gen_);
  }
  double normal() {
    std::normal_distribution<double> d(0.0, 1.0);
    return d(gen_);
  }
  cplx cgauss() { return {normal(), normal()}; }
  std::uint64_t integer(std::uint64_t lo, std::uint64_t hi) {
    std::uniform_int_distribution<std::uint64_t> d(lo, hi);
    return d(gen_);
  }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

namespace detail {
inline double simpson(double a, double b, double fa, double fm, double fb) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double fa, double fm, double fb, double whole, double tol,
                               int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = simpson(a, m, fa, flm, fm);
  const double right = simpson(m, b, fm, frm, fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol) {
    return left + right + (left + right - whole) / 15.0;
  }
  return adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}
}  // namespace detail

// Adaptive Simpson quadrature on [a, b].
inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double tol = 1e-12) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = detail::simpson(a, b, fa, fm, fb);
  return detail::adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 48);
}

}  // namespace morrey_nls
