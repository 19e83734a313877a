#include <catch2/catch_amalgamated.hpp>

#include "morrey_nls/function_spaces.hpp"
#include "morrey_nls/stationary_states.hpp"

using namespace morrey_nls;

namespace {

// integral of sech^c over the line
double isech(double c) {
  return std::sqrt(kPi) * std::tgamma(0.5 * c) / std::tgamma(0.5 * (c + 1.0));
}

GridField closed_form_soliton(double alpha, std::size_t n, double extent) {
  const double amp = std::pow(alpha + 1.0, 0.5 / alpha);
  return sample_physical(1, n, extent, [&](const std::vector<double>& x) {
    return cplx(amp * std::pow(1.0 / std::cosh(alpha * x[0]), 1.0 / alpha), 0.0);
  });
}

}  // namespace

TEST_CASE("cubic line soliton matches sqrt(2) sech") {
  const auto gs = ground_state(1, 1.0, 1024, 8.0 * kPi);
  REQUIRE(gs.method == "closed-form-1d");
  // the sampled profile is exact; the residual floor is FFT roundoff
  // amplified by xi^2 across the frequency band
  REQUIRE(gs.residual_linf <= 1e-8);
  for (std::size_t i = 0; i < gs.field.total(); i += 37) {
    const double x = gs.field.coord(i);
    REQUIRE(gs.field.values[i].real() ==
            Catch::Approx(std::sqrt(2.0) / std::cosh(x)).margin(1e-13));
    REQUIRE(gs.field.values[i].imag() == 0.0);
  }
}

TEST_CASE("ground state integrals match the sech closed forms") {
  const double alpha = 1.5;
  const auto gs = ground_state(1, alpha, 1024, 8.0 * kPi);
  const auto& Q = gs.field;
  const std::size_t center = Q.n_per_axis / 2;
  REQUIRE(Q.coord(center) == 0.0);
  REQUIRE(Q.values[center].real() == Catch::Approx(std::cbrt(2.5)).epsilon(1e-13));

  const double amp2 = std::pow(alpha + 1.0, 1.0 / alpha);
  const double mass_oracle = amp2 / alpha * isech(2.0 / alpha);
  const double grad_oracle = amp2 / alpha * (isech(2.0 / alpha) - isech(2.0 / alpha + 2.0));
  REQUIRE(sq(l2_norm(Q)) == Catch::Approx(mass_oracle).epsilon(1e-10));
  REQUIRE(gradient_norm_sq(Q) == Catch::Approx(grad_oracle).epsilon(1e-10));

  const auto [r1, r2] = pohozaev_check(gs, alpha);
  REQUIRE(r1 <= 1e-10 * mass_oracle);
  REQUIRE(r2 <= 1e-10 * mass_oracle);
}

TEST_CASE("shooting reproduces the d=1 closed form") {
  const double alpha = 1.0;
  const auto gs = ground_state_via_shooting(1, alpha, 1024, 8.0 * kPi);
  REQUIRE(gs.method == "radial-shooting");
  const auto exact = closed_form_soliton(alpha, 1024, 8.0 * kPi);
  double worst = 0.0;
  for (std::size_t i = 0; i < exact.total(); ++i)
    worst = std::max(worst, std::abs(gs.field.values[i] - exact.values[i]));
  // accuracy is pinned by the height error drifting like e^{+rho} up to the
  // tail splice; the bound leaves a ~5x margin over the observed drift
  REQUIRE(worst <= 5e-8);
}

TEST_CASE("planar ground state by shooting") {
  const double alpha = 0.8;
  const auto gs = ground_state(2, alpha, 256, 20.0);
  REQUIRE(gs.method == "radial-shooting");
  REQUIRE(gs.residual_linf <= 1e-6);

  // positivity everywhere, monotone decay along the positive x-axis
  const std::size_t n = gs.field.n_per_axis;
  for (std::size_t i = 0; i < gs.field.total(); i += 11)
    REQUIRE(gs.field.values[i].real() > 0.0);
  double prev = kInf;
  for (std::size_t i = n / 2; i < n; ++i) {
    const double v = gs.field.values[(n / 2) * n + i].real();
    REQUIRE(v <= prev + 1e-15);
    prev = v;
  }

  const double mass = sq(l2_norm(gs.field));
  const auto [r1, r2] = pohozaev_check(gs, alpha);
  REQUIRE(r1 <= 1e-5 * mass);
  REQUIRE(r2 <= 1e-5 * mass);
}

TEST_CASE("rescaled soliton solves the rescaled equation") {
  const double alpha = 1.5, lambda = 2.0;
  const double amp = std::pow(alpha + 1.0, 0.5 / alpha);
  auto scaled = sample_physical(1, 1024, 8.0 * kPi, [&](const std::vector<double>& x) {
    const double z = lambda * x[0];
    return cplx(std::pow(lambda, 1.0 / alpha) * amp *
                    std::pow(1.0 / std::cosh(alpha * z), 1.0 / alpha),
                0.0);
  });
  REQUIRE(stationary_residual_linf(scaled, alpha, lambda * lambda) <= 1e-6);
}

TEST_CASE("critical bubble") {
  SECTION("explicit values") {
    auto w4 = aubin_talenti(4, 16, 6.0);
    const std::size_t c = 8;  // center index along each axis
    const std::size_t flat0 = ((c * 16 + c) * 16 + c) * 16 + c;
    REQUIRE(w4.values[flat0].real() == 1.0);
    for (std::size_t i = 0; i < w4.total(); i += 97) {
      std::vector<std::size_t> idx(4);
      std::size_t rem = i;
      for (int ax = 3; ax >= 0; --ax) {
        idx[ax] = rem % 16;
        rem /= 16;
      }
      double r2 = 0.0;
      for (int ax = 0; ax < 4; ++ax) r2 += sq(w4.coord(idx[ax]));
      REQUIRE(w4.values[i].real() == Catch::Approx(1.0 / (1.0 + r2 / 8.0)).epsilon(1e-14));
    }
  }

  SECTION("d=3 formula and monotone radial decay") {
    auto w3 = aubin_talenti(3, 32, 8.0);
    const std::size_t n = 32, c = 16;
    double prev = kInf;
    for (std::size_t i = c; i < n; ++i) {
      const double x = w3.coord(i);
      const double v = w3.values[(c * n + c) * n + i].real();
      REQUIRE(v == Catch::Approx(1.0 / std::sqrt(1.0 + x * x / 3.0)).epsilon(1e-14));
      REQUIRE(v <= prev);
      prev = v;
    }
  }

  SECTION("radial equation residual") {
    REQUIRE(aubin_talenti_radial_residual(3) <= 1e-6);
    REQUIRE(aubin_talenti_radial_residual(4) <= 1e-6);
    REQUIRE(aubin_talenti_radial_residual(5) <= 1e-6);
  }

  SECTION("d >= 3 required") {
    REQUIRE_THROWS_AS(aubin_talenti(2, 16, 4.0), std::invalid_argument);
  }
}

TEST_CASE("energy functional") {
  const double alpha = 1.5;

  SECTION("zero field") {
    auto z = make_field(1, 64, 8.0, Space::Physical);
    REQUIRE(energy(z, alpha) == 0.0);
  }

  SECTION("gaussian closed form") {
    auto g = sample_physical(1, 512, 16.0, [](const std::vector<double>& x) {
      return cplx(std::exp(-0.5 * x[0] * x[0]), 0.0);
    });
    const double oracle =
        std::sqrt(kPi) / 4.0 - std::sqrt(kPi / (alpha + 1.0)) / (2.0 * alpha + 2.0);
    REQUIRE(energy(g, alpha) == Catch::Approx(oracle).epsilon(1e-12));
  }

  SECTION("sign change along the soliton ray") {
    const auto gs = ground_state(1, alpha, 1024, 8.0 * kPi);
    auto scaled = [&](double cc) {
      auto u = gs.field;
      for (auto& v : u.values) v *= cc;
      return u;
    };
    REQUIRE(energy(scaled(0.5), alpha) > 0.0);
    REQUIRE(energy(scaled(3.0), alpha) < 0.0);
  }
}

TEST_CASE("critical thresholds") {
  const auto t3 = critical_thresholds(3);
  const auto t4 = critical_thresholds(4);
  const auto t5 = critical_thresholds(5);

  // independent closed form: E2^2 = omega_{d-1} c^{(d+2)/2} B(d/2+1, d/2-1) / (2 d^2)
  auto beta_oracle = [](int d) {
    const double c = double(d) * (d - 2);
    const double omega = 2.0 * std::pow(kPi, 0.5 * d) / std::tgamma(0.5 * d);
    const double B =
        std::tgamma(0.5 * d + 1.0) * std::tgamma(0.5 * d - 1.0) / std::tgamma(double(d));
    return std::sqrt(omega * std::pow(c, 0.5 * (d + 2)) * B / (2.0 * d * d));
  };
  REQUIRE(t3.E2 == Catch::Approx(beta_oracle(3)).epsilon(1e-11));
  REQUIRE(t4.E2 == Catch::Approx(beta_oracle(4)).epsilon(1e-11));
  REQUIRE(t5.E2 == Catch::Approx(beta_oracle(5)).epsilon(1e-11));

  REQUIRE(t3.E2 == Catch::Approx(3.5806413119676099).epsilon(1e-9));
  REQUIRE(t4.E2 == Catch::Approx(10.260398641294913).epsilon(1e-9));
  REQUIRE(t5.E2 == Catch::Approx(29.057877843413455).epsilon(1e-9));

  REQUIRE(t4.E1 / t4.E2 == Catch::Approx(0.7071067811865476).epsilon(1e-15));
  REQUIRE(t3.E1 / t3.E2 == Catch::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-15));

  // d=4 admits a fully closed answer: E2^2 = 32 pi^2 / 3
  REQUIRE(sq(t4.E2) == Catch::Approx(32.0 * kPi * kPi / 3.0).epsilon(1e-11));

  // critical energy identity at d=4: E[W] = (1/d) |W|^2_{H1-dot}, using the
  // radial potential integral int W^4 = omega_3 * 32 * B(2,2) scaled
  const double pot = 2.0 * kPi * kPi *
                     integrate([](double rho) { return rho * rho * rho /
                                                        std::pow(1.0 + rho * rho / 8.0, 4.0); },
                               0.0, 400.0, 1e-13);
  const double ew = 0.5 * sq(t4.E2) - 0.25 * pot;
  REQUIRE(ew == Catch::Approx(0.25 * sq(t4.E2)).epsilon(1e-5));

  REQUIRE_THROWS_AS(critical_thresholds(2), std::invalid_argument);
}

TEST_CASE("soliton size is finite, positive, homogeneous") {
  const auto gs = ground_state(1, 1.5, 512, 8.0 * kPi);
  MorreySpec spec{1.5, 2.0, 3.5, {0, 0, 0}};
  SizeFunctionConfig cfg;
  const auto base = size_function(gs.field, spec, cfg);
  REQUIRE(base.value > 0.0);
  REQUIRE(std::isfinite(base.value));

  auto doubled = gs.field;
  for (auto& v : doubled.values) v *= 2.0;
  const auto twice = size_function(doubled, spec, cfg);
  REQUIRE(twice.value == Catch::Approx(2.0 * base.value).epsilon(1e-10));
}
