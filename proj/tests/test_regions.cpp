#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>

#include "screenfb/regions.hpp"
#include "screenfb/screening.hpp"

using namespace screenfb;

namespace {

struct Setup {
  Polygon poly;
  std::shared_ptr<Grid> grid;
  Setup(double a, double h)
      : poly(make_square(a)), grid(std::make_shared<Grid>(build_grid(poly, h))) {}
};

}  // namespace

TEST_CASE("hessian of (3/4)|x|^2 is diag(3/2, 3/2)") {
  Setup s(1.0, 1.0 / 16.0);
  ScalarField u(s.grid);
  u.fill([](Vec2 p) { return 0.75 * (p.x * p.x + p.y * p.y); });
  HessianField H = hessian_field(u);
  for (int j = 0; j < s.grid->ny; ++j)
    for (int i = 0; i < s.grid->nx; ++i) {
      if (!s.grid->has_interior_ring(i, j)) continue;
      int id = s.grid->idx(i, j);
      CHECK(H.defined[id] == 1);
      CHECK(H.uxx[id] == doctest::Approx(1.5).epsilon(1e-10));
      CHECK(H.uyy[id] == doctest::Approx(1.5).epsilon(1e-10));
      CHECK(std::fabs(H.uxy[id]) <= 1e-10);
      CHECK(H.lam_min[id] == doctest::Approx(1.5).epsilon(1e-10));
      CHECK(H.lam_max[id] == doctest::Approx(1.5).epsilon(1e-10));
    }
}

TEST_CASE("hessian of an affine function vanishes") {
  Setup s(1.0, 0.125);
  ScalarField u(s.grid);
  u.fill([](Vec2 p) { return 2.0 * p.x - 0.5 * p.y + 3.0; });
  HessianField H = hessian_field(u);
  for (int id = 0; id < s.grid->nx * s.grid->ny; ++id) {
    if (!H.defined[id]) continue;
    CHECK(std::fabs(H.uxx[id]) <= 1e-10);
    CHECK(std::fabs(H.uyy[id]) <= 1e-10);
    CHECK(std::fabs(H.uxy[id]) <= 1e-10);
  }
}

TEST_CASE("central differences are second order on x^4") {
  double prev = 0.0;
  for (int k = 0; k < 3; ++k) {
    double h = 1.0 / (16 << k);
    Setup s(1.0, h);
    ScalarField u(s.grid);
    u.fill([](Vec2 p) { return p.x * p.x * p.x * p.x; });
    HessianField H = hessian_field(u);
    double emax = 0.0;
    for (int j = 0; j < s.grid->ny; ++j)
      for (int i = 0; i < s.grid->nx; ++i) {
        if (!s.grid->has_interior_ring(i, j)) continue;
        double x = s.grid->node(i, j).x;
        emax = std::max(emax, std::fabs(H.uxx[s.grid->idx(i, j)] - 12.0 * x * x));
      }
    CHECK(emax <= 3.0 * h * h);
    if (k > 0) CHECK(emax < 0.3 * prev);  // ~4x reduction per halving
    prev = emax;
  }
}

TEST_CASE("eigenpairs satisfy H q = lambda q on a random smooth field") {
  Setup s(1.0, 1.0 / 24.0);
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  double a = d(rng), b = d(rng), c = d(rng), e = d(rng), f = d(rng);
  ScalarField u(s.grid);
  u.fill([&](Vec2 p) {
    return a * p.x * p.x + b * p.x * p.y + c * p.y * p.y + e * std::sin(p.x) * std::cos(p.y) +
           f * p.x * p.y * p.y;
  });
  HessianField H = hessian_field(u);
  for (int id = 0; id < s.grid->nx * s.grid->ny; ++id) {
    if (!H.defined[id]) continue;
    CHECK(H.lam_min[id] <= H.lam_max[id]);
    // residual of both eigenpairs
    double rx = H.uxx[id] * H.vmin_x[id] + H.uxy[id] * H.vmin_y[id] - H.lam_min[id] * H.vmin_x[id];
    double ry = H.uxy[id] * H.vmin_x[id] + H.uyy[id] * H.vmin_y[id] - H.lam_min[id] * H.vmin_y[id];
    CHECK(std::hypot(rx, ry) <= 1e-10 * (1.0 + std::fabs(H.lam_max[id])));
    rx = H.uxx[id] * H.vmax_x[id] + H.uxy[id] * H.vmax_y[id] - H.lam_max[id] * H.vmax_x[id];
    ry = H.uxy[id] * H.vmax_x[id] + H.uyy[id] * H.vmax_y[id] - H.lam_max[id] * H.vmax_y[id];
    CHECK(std::hypot(rx, ry) <= 1e-10 * (1.0 + std::fabs(H.lam_max[id])));
    // unit eigenvectors, orthogonal pair
    CHECK(std::hypot(H.vmin_x[id], H.vmin_y[id]) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::fabs(H.vmin_x[id] * H.vmax_x[id] + H.vmin_y[id] * H.vmax_y[id]) <= 1e-12);
  }
}

TEST_CASE("segment_regions: zero field is all exclusion") {
  Setup s(1.0, 0.125);
  ScalarField u(s.grid);
  HessianField H = hessian_field(u);
  RegionLabelField lab = segment_regions(u, H, s.grid->h * s.grid->h, s.grid->h);
  CHECK(lab.count(RegionLabel::Exclusion) == s.grid->count_inside());
  CHECK(lab.count(RegionLabel::Bunching) == 0);
  CHECK(lab.count(RegionLabel::Customization) == 0);
}

TEST_CASE("segment_regions: strictly convex interior is customization") {
  Setup s(1.0, 1.0 / 16.0);
  ScalarField u(s.grid);
  u.fill([](Vec2 p) { return 0.75 * (p.x * p.x + p.y * p.y); });
  HessianField H = hessian_field(u);
  RegionLabelField lab = segment_regions(u, H, s.grid->h * s.grid->h, s.grid->h);
  for (int j = 0; j < s.grid->ny; ++j)
    for (int i = 0; i < s.grid->nx; ++i) {
      if (!s.grid->inside(i, j)) continue;
      RegionLabel l = lab.labels[s.grid->idx(i, j)];
      if (s.grid->has_interior_ring(i, j))
        CHECK(l == RegionLabel::Customization);
      else
        CHECK(l == RegionLabel::Boundary);
    }
}

TEST_CASE("segment_regions rejects nonpositive tolerances") {
  Setup s(1.0, 0.25);
  ScalarField u(s.grid);
  HessianField H = hessian_field(u);
  CHECK_THROWS_AS(segment_regions(u, H, 0.0, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(segment_regions(u, H, 0.1, -1.0), std::invalid_argument);
}

TEST_CASE("exclusion count is monotone in u_tol and labels partition the mask") {
  Setup s(1.0, 1.0 / 20.0);
  ScalarField u(s.grid);
  u.fill([](Vec2 p) { return std::max(0.0, 0.75 * (p.x * p.x + p.y * p.y) - 2.0); });
  HessianField H = hessian_field(u);
  int prev = -1;
  for (double tol : {1e-6, 1e-3, 1e-1, 1.0}) {
    RegionLabelField lab = segment_regions(u, H, tol, s.grid->h);
    int ex = lab.count(RegionLabel::Exclusion);
    if (prev >= 0) CHECK(ex >= prev);
    prev = ex;
    int total = ex + lab.count(RegionLabel::Bunching) + lab.count(RegionLabel::Customization) +
                lab.count(RegionLabel::Boundary);
    CHECK(total == s.grid->count_inside());
    for (int j = 0; j < s.grid->ny; ++j)
      for (int i = 0; i < s.grid->nx; ++i)
        if (!s.grid->inside(i, j))
          CHECK(lab.labels[s.grid->idx(i, j)] == RegionLabel::Outside);
  }
}

TEST_CASE("solved square at h = 1/64: regions and diagnostics") {
  Polygon sq = make_square(1.0);
  const double h = 1.0 / 64.0;
  auto [u, rep] = solve_monopolist(sq, h);
  REQUIRE(rep.converged);

  HessianField H = hessian_field(u);
  RegionLabelField lab = segment_regions(u, H, h * h, h);
  CHECK(lab.count(RegionLabel::Exclusion) > 0);
  CHECK(lab.count(RegionLabel::Bunching) > 0);
  CHECK(lab.count(RegionLabel::Customization) > 0);

  // exclusion holds at the node nearest the domain corner (1, 1)
  CHECK(lab.labels[u.grid->idx(0, 0)] == RegionLabel::Exclusion);

  BoundaryChart chart = boundary_chart(sq, h / 2.0);
  RegionDiagnostics diag = region_diagnostics(u, lab, sq, chart);
  CHECK(diag.lap_present);
  CHECK(diag.lap_dev_median <= 0.25);
  CHECK(diag.exclusion_present);
  CHECK(diag.convexity_defect_cells <= 2.0);
  CHECK(diag.distortion_present);
  CHECK(diag.min_boundary_distortion >= -1e-3);
}
