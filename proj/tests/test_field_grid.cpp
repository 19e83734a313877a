#include <catch2/catch_amalgamated.hpp>

#include "morrey_nls/field_grid.hpp"

using namespace morrey_nls;

TEST_CASE("gaussian is a fixed point of the unitary transform") {
  const std::size_t n = 256;
  const double L = 16.0;
  auto f = sample_physical(1, n, L, [](const std::vector<double>& x) {
    return cplx(std::exp(-0.5 * x[0] * x[0]), 0.0);
  });
  auto F = to_fourier(f);
  REQUIRE(F.space == Space::Fourier);
  REQUIRE(F.extent == Catch::Approx(kPi * double(n) / (2.0 * L)));
  double max_err = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double xi = F.coord(k);
    max_err = std::max(max_err, std::abs(F.values[k] - cplx(std::exp(-0.5 * xi * xi), 0.0)));
  }
  REQUIRE(max_err < 1e-12);
}

TEST_CASE("2-d separable gaussian transforms to itself") {
  const std::size_t n = 128;
  const double L = 16.0;
  auto f = sample_physical(2, n, L, [](const std::vector<double>& x) {
    return cplx(std::exp(-0.5 * (x[0] * x[0] + x[1] * x[1])), 0.0);
  });
  auto F = to_fourier(f);
  double max_err = 0.0;
  for (std::size_t flat = 0; flat < F.total(); ++flat) {
    const auto idx = unflatten(flat, 2, n);
    const double xi0 = F.coord(idx[0]), xi1 = F.coord(idx[1]);
    max_err = std::max(max_err,
                       std::abs(F.values[flat] - cplx(std::exp(-0.5 * (xi0 * xi0 + xi1 * xi1)), 0.0)));
  }
  REQUIRE(max_err < 1e-11);
}

TEST_CASE("transform round trip restores field and extent") {
  Rng rng(21);
  auto f = make_field(2, 32, kPi * 4.0, Space::Physical);
  for (auto& v : f.values) v = rng.cgauss();
  auto g = to_physical(to_fourier(f));
  REQUIRE(g.extent == f.extent);  // exact for extent = pi * 2^m
  for (std::size_t i = 0; i < f.total(); ++i) REQUIRE(std::abs(g.values[i] - f.values[i]) < 1e-12);
}

TEST_CASE("grid Parseval identity is exact") {
  Rng rng(22);
  auto f = make_field(2, 64, 7.3, Space::Physical);
  for (auto& v : f.values) v = rng.cgauss();
  auto F = to_fourier(f);
  REQUIRE(l2_norm(F) == Catch::Approx(l2_norm(f)).epsilon(1e-13));
}

TEST_CASE("constant field concentrates at the zero frequency bin") {
  const std::size_t n = 64;
  const double L = 5.0, c = 0.7;
  auto f = sample_physical(1, n, L, [&](const std::vector<double>&) { return cplx(c, 0.0); });
  auto F = to_fourier(f);
  const double expected = c * 2.0 * L / std::sqrt(2.0 * kPi);
  for (std::size_t k = 0; k < n; ++k) {
    if (k == n / 2) {
      REQUIRE(std::abs(F.values[k] - cplx(expected, 0.0)) < 1e-12 * expected);
    } else {
      REQUIRE(std::abs(F.values[k]) < 1e-12 * expected);
    }
  }
}

TEST_CASE("dyadic cube restriction partitions the field") {
  Rng rng(23);
  // Physical extent pi*2^3 -> frequency step 1/8, frequency half-width 8.
  auto f = make_field(1, 128, 8.0, Space::Fourier);
  for (auto& v : f.values) v = rng.cgauss();
  REQUIRE(dyadic_step(f));
  REQUIRE(cell_scale(f) == 3);

  double sum_sq = 0.0;
  for (long long k = -8; k < 8; ++k) {
    auto piece = restrict_to_cube(f, DyadicCube{0, {k}});
    sum_sq += sq(l2_norm(piece));
  }
  REQUIRE(sum_sq == Catch::Approx(sq(l2_norm(f))).epsilon(1e-13));

  SECTION("2-d partition") {
    auto g = make_field(2, 16, 4.0, Space::Fourier);  // step 1/2, half-width 4
    for (auto& v : g.values) v = rng.cgauss();
    double s = 0.0;
    for (long long k0 = -4; k0 < 4; ++k0)
      for (long long k1 = -4; k1 < 4; ++k1) s += sq(l2_norm(restrict_to_cube(g, DyadicCube{0, {k0, k1}})));
    REQUIRE(s == Catch::Approx(sq(l2_norm(g))).epsilon(1e-13));
  }
}

TEST_CASE("child cubes reassemble their parent exactly") {
  Rng rng(24);
  auto f = make_field(1, 64, 4.0, Space::Fourier);  // step 1/8
  for (auto& v : f.values) v = rng.cgauss();
  auto parent = restrict_to_cube(f, DyadicCube{0, {0}});
  auto c0 = restrict_to_cube(f, DyadicCube{1, {0}});
  auto c1 = restrict_to_cube(f, DyadicCube{1, {1}});
  for (std::size_t i = 0; i < f.total(); ++i) {
    REQUIRE(parent.values[i] == c0.values[i] + c1.values[i]);
  }
}

TEST_CASE("cubes below the cell scale select single samples") {
  auto f = make_field(1, 64, 4.0, Space::Fourier);  // step 1/8, cell scale 3
  for (auto& v : f.values) v = 1.0;
  auto one = restrict_to_cube(f, DyadicCube{5, {0}});  // [0, 1/32) holds only xi = 0
  std::size_t nonzero = 0;
  for (const auto& v : one.values) nonzero += (v != 0.0);
  REQUIRE(nonzero == 1);
  auto none = restrict_to_cube(f, DyadicCube{5, {1}});  // [1/32, 2/32) holds no sample
  for (const auto& v : none.values) REQUIRE(v == 0.0);
}

TEST_CASE("restriction requires the Fourier representation") {
  auto f = make_field(1, 8, 4.0, Space::Physical);
  REQUIRE_THROWS_AS(restrict_to_cube(f, DyadicCube{0, {0}}), std::invalid_argument);
}

TEST_CASE("cell coordinates are exact integer multiples of the step") {
  auto f = make_field(1, 64, 4.0, Space::Fourier);
  for (std::size_t i = 0; i < f.n_per_axis; ++i) {
    REQUIRE(f.coord(i) == double(f.cell(i)) * f.step());
  }
  auto g = make_field(1, 64, 5.0, Space::Fourier);  // step 5/32 is not a power of two
  REQUIRE(dyadic_step(f));
  REQUIRE_FALSE(dyadic_step(g));
  REQUIRE_THROWS_AS(cell_scale(g), std::invalid_argument);
}
