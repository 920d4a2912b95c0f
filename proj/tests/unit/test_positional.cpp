#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "qkalign/error.hpp"
#include "qkalign/positional.hpp"

using namespace qkalign;

namespace {

// Direct evaluation of the 2-D sinusoid layout for one cell.
std::vector<double> sinusoid(std::size_t row, std::size_t col, std::size_t dim) {
  std::vector<double> out(dim);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; 2 * i < half; ++i) {
    const double freq = std::pow(10000.0, -4.0 * static_cast<double>(i) / static_cast<double>(dim));
    out[2 * i] = std::sin(static_cast<double>(row) * freq);
    out[2 * i + 1] = std::cos(static_cast<double>(row) * freq);
    out[half + 2 * i] = std::sin(static_cast<double>(col) * freq);
    out[half + 2 * i + 1] = std::cos(static_cast<double>(col) * freq);
  }
  return out;
}

std::vector<double> row_of(const PosEncoding& pe, std::size_t r, std::size_t c) {
  auto d = pe.table.data();
  const std::size_t i = r * pe.grid.width + c;
  return {d.begin() + static_cast<std::ptrdiff_t>(i * pe.dim), d.begin() + static_cast<std::ptrdiff_t>((i + 1) * pe.dim)};
}

double dist(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) d[j] = a[j] - b[j];
  return oracle::norm(d);
}

}  // namespace

TEST_CASE("sinusoidal table matches direct evaluation") {
  auto pe = build_sinusoidal_2d({5, 6}, 16);
  CHECK(pe.kind == PeKind::FixedSinusoidal);
  CHECK(pe.table.rows() == 30);
  CHECK_FALSE(pe.table.requires_grad());
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 6; ++c) {
      auto got = row_of(pe, r, c);
      auto ref = sinusoid(r, c, 16);
      for (std::size_t j = 0; j < 16; ++j) CHECK(std::abs(got[j] - ref[j]) < 1e-15);
    }
}

TEST_CASE("origin encodes as sin 0 / cos 1") {
  auto pe = build_sinusoidal_2d({3, 3}, 8);
  auto r = row_of(pe, 0, 0);
  for (std::size_t j = 0; j < 8; ++j) CHECK(r[j] == (j % 2 == 0 ? 0.0 : 1.0));
}

TEST_CASE("same row differs only in the column half") {
  auto pe = build_sinusoidal_2d({4, 5}, 12);
  auto a = row_of(pe, 2, 1), b = row_of(pe, 2, 4);
  for (std::size_t j = 0; j < 6; ++j) CHECK(a[j] == b[j]);
  bool differs = false;
  for (std::size_t j = 6; j < 12; ++j) differs |= a[j] != b[j];
  CHECK(differs);
}

TEST_CASE("sinusoidal distances depend only on the offset") {
  auto pe = build_sinusoidal_2d({7, 7}, 16);
  CHECK(std::abs(dist(row_of(pe, 0, 0), row_of(pe, 0, 1)) - dist(row_of(pe, 5, 3), row_of(pe, 5, 4))) < 1e-12);
  double worst = 0.0;
  for (std::size_t r1 = 0; r1 < 7; ++r1)
    for (std::size_t c1 = 0; c1 < 7; ++c1)
      for (std::size_t r2 = r1; r2 < 7; ++r2)
        for (std::size_t c2 = c1; c2 < 7; ++c2) {
          const std::size_t dr = r2 - r1, dc = c2 - c1;
          const double base = dist(row_of(pe, 0, 0), row_of(pe, dr, dc));
          worst = std::max(worst, std::abs(dist(row_of(pe, r1, c1), row_of(pe, r2, c2)) - base));
        }
  CHECK(worst < 1e-9);
}

TEST_CASE("every sinusoidal row has squared norm D/2") {
  auto pe = build_sinusoidal_2d({6, 9}, 24);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 9; ++c) {
      const double n = oracle::norm(row_of(pe, r, c));
      CHECK(std::abs(n * n - 12.0) < 1e-9);
    }
}

TEST_CASE("sinusoidal width must be a multiple of 4") {
  CHECK_THROWS_AS(build_sinusoidal_2d({3, 3}, 6), ContractError);
  CHECK_NOTHROW(build_sinusoidal_2d({3, 3}, 4));
}

TEST_CASE("add_positional") {
  auto pe = build_sinusoidal_2d({2, 3}, 8);
  auto zero = Tensor::zeros({6, 8});
  auto in = add_positional(zero, pe);
  for (std::size_t i = 0; i < 48; ++i) CHECK(in.query.data()[i] == pe.table.data()[i]);

  std::mt19937_64 rng(1);
  auto x = oracle::random_tensor({6, 8}, rng, 1.0, false);
  PosEncoding none{PeKind::Learnable, {2, 3}, 8, Tensor::zeros({6, 8})};
  auto id = add_positional(x, none);
  for (std::size_t i = 0; i < 48; ++i) CHECK(id.key.data()[i] == x.data()[i]);

  auto both = add_positional(x, pe);
  for (std::size_t i = 0; i < 48; ++i) {
    CHECK(both.query.data()[i] - x.data()[i] == doctest::Approx(pe.table.data()[i]).epsilon(1e-15));
    CHECK(both.key.data()[i] == both.query.data()[i]);
  }
  CHECK_THROWS_AS(add_positional(Tensor::zeros({5, 8}), pe), DimensionError);
}

TEST_CASE("learnable encoding init") {
  std::mt19937_64 rng(4);
  auto pe = make_learnable_encoding({10, 10}, 32, rng);
  CHECK(pe.table.requires_grad());
  double s = 0.0, s2 = 0.0;
  for (double v : pe.table.data()) {
    s += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(pe.table.numel());
  CHECK(std::abs(s / n) < 0.002);
  CHECK(std::sqrt(s2 / n) == doctest::Approx(0.02).epsilon(0.05));
}

TEST_CASE("distance maps") {
  auto pe = build_sinusoidal_2d({5, 5}, 16);
  auto m = pe_distance_map(pe, {0, 0});
  CHECK(m.at(0, 0) == 0.0);
  auto m22 = pe_distance_map(pe, {2, 2});
  CHECK(m22.at(2, 2) == 0.0);
  for (std::size_t dr = 0; dr < 3; ++dr)
    for (std::size_t dc = 0; dc < 3; ++dc) CHECK(std::abs(m.at(dr, dc) - m22.at(2 + dr, 2 + dc)) < 1e-12);
  // Monotone growth along each axis near the anchor; the fastest
  // frequencies wrap further out.
  for (std::size_t k = 1; k < 4; ++k) {
    CHECK(m.at(0, k) > m.at(0, k - 1));
    CHECK(m.at(k, 0) > m.at(k - 1, 0));
  }
  CHECK_THROWS_AS(pe_distance_map(pe, {5, 0}), ContractError);
}

TEST_CASE("orthogonal learnable rows give a flat map") {
  // Rows are scaled unit vectors: every off-anchor distance is sqrt(2)*scale.
  const GridSize g{3, 4};
  const std::size_t dim = 12;
  std::vector<double> t(g.count() * dim, 0.0);
  for (std::size_t i = 0; i < g.count(); ++i) t[i * dim + i] = 0.5;
  PosEncoding pe{PeKind::Learnable, g, dim, Tensor({g.count(), dim}, t)};
  auto m = pe_distance_map(pe, {1, 2});
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) {
      if (r == 1 && c == 2) continue;
      CHECK(m.at(r, c) == doctest::Approx(0.5 * std::sqrt(2.0)).epsilon(1e-14));
    }
  auto ac = axis_contrast(m);
  CHECK(ac.on_axis_mean == doctest::Approx(ac.off_axis_mean));
}

TEST_CASE("axis contrast of a hand-made map") {
  DistanceMap m{{2, 2}, {0, 0}, {0.0, 1.0, 2.0, 5.0}};
  auto ac = axis_contrast(m);
  CHECK(ac.on_axis_mean == 1.5);
  CHECK(ac.off_axis_mean == 5.0);
}

TEST_CASE("grid and kind parsing") {
  CHECK(parse_grid("7x14") == GridSize{7, 14});
  CHECK(to_string(GridSize{3, 5}) == "3x5");
  CHECK_THROWS_AS(parse_grid("7"), ConfigError);
  CHECK_THROWS_AS(parse_grid("0x3"), ConfigError);
  CHECK(parse_pe_kind("fixed") == PeKind::FixedSinusoidal);
  CHECK(parse_pe_kind("learnable") == PeKind::Learnable);
  CHECK_THROWS_AS(parse_pe_kind("rotary"), ConfigError);
}
