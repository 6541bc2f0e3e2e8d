#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "screenfb/obstacle.hpp"
#include "screenfb/rays.hpp"
#include "screenfb/regions.hpp"
#include "screenfb/screening.hpp"

using namespace screenfb;

namespace {

constexpr double kPi = 3.14159265358979323846;

Polygon disk(double rad, int nv) {
  std::vector<Vec2> v;
  for (int k = 0; k < nv; ++k) {
    const double th = 2 * kPi * k / nv;
    v.push_back({rad * std::cos(th), rad * std::sin(th)});
  }
  return Polygon(v);
}

// Closed-form radial obstacle solution for f == 1 with contact disk of
// radius a: v = (rho^2 - a^2)/4 - (a^2/2) log(rho/a) outside, 0 inside.
double radial_exact(double rho, double a) {
  if (rho <= a) return 0.0;
  return (rho * rho - a * a) / 4.0 - (a * a / 2.0) * std::log(rho / a);
}

// Circular-arc fan with constant leaf length; see the ray tests for the
// orientation conventions.
FanProfile radial_profile(double rho, double R, double theta0) {
  FanProfile prof;
  prof.gamma = [=](double t) {
    const double phi = theta0 - t / rho;
    return Vec2{rho * std::cos(phi), rho * std::sin(phi)};
  };
  prof.xi = [=](double t) {
    const double phi = theta0 - t / rho;
    return Vec2{-std::cos(phi), -std::sin(phi)};
  };
  prof.R = [=](double) { return R; };
  prof.b = [](double) { return 2.0; };
  prof.m = [](double) { return -1.0; };
  return prof;
}

FanProfile parallel_profile() {
  FanProfile prof;
  prof.gamma = [](double t) { return Vec2{t, 0.0}; };
  prof.xi = [](double) { return Vec2{0.0, 1.0}; };
  prof.R = [](double) { return 0.25; };
  prof.b = [](double) { return 0.0; };
  prof.m = [](double) { return 1.0; };
  return prof;
}

}  // namespace

TEST_CASE("radial obstacle instance matches the closed form") {
  const double a = 0.5;
  double prev_err = 0.0;
  for (double h : {1.0 / 32, 1.0 / 64}) {
    ObstacleInstance inst{disk(1.0, 96), h, [](Vec2) { return 1.0; },
                          [&](Vec2 p) { return radial_exact(norm(p), a); }};
    GapSolution sol = solve_obstacle(inst);
    const Grid& g = *sol.v.grid;
    double maxerr = 0.0, contact_r = 0.0;
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        if (!g.inside(i, j)) continue;
        const int id = g.idx(i, j);
        maxerr = std::max(maxerr, std::fabs(sol.v.values[id] - radial_exact(norm(g.node(i, j)), a)));
        if (sol.contact[id]) contact_r = std::max(contact_r, norm(g.node(i, j)));
      }
    CHECK(maxerr <= 1e-2);
    CHECK(std::fabs(contact_r - a) <= 2 * h);
    if (prev_err > 0.0) {
      const double order = std::log2(prev_err / maxerr);
      CHECK(order >= 1.0);  // asymptotic rate is checked on finer grids elsewhere
    }
    prev_err = maxerr;
  }
}

TEST_CASE("half-plane quadratic data reproduces the one-dimensional solution") {
  const double h = 1.0 / 64;
  auto exact = [](Vec2 p) {
    const double s = std::max(0.0, p.x - 1.5);
    return 0.5 * s * s;
  };
  ObstacleInstance inst{make_square(1.0), h, [](Vec2) { return 1.0; }, exact};
  GapSolution sol = solve_obstacle(inst);
  const Grid& g = *sol.v.grid;
  double maxerr = 0.0;
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i)
      if (g.inside(i, j))
        maxerr = std::max(maxerr, std::fabs(sol.v.values[g.idx(i, j)] - exact(g.node(i, j))));
  CHECK(maxerr <= 5 * h * h);
  // the free boundary of the discrete solution tracks the contour v = h^2,
  // a vertical line at x = 1.5 + h sqrt(2)
  const double xstar = 1.5 + h * std::sqrt(2.0);
  REQUIRE(!sol.free_boundary.empty());
  for (const Vec2& p : sol.free_boundary) CHECK(std::fabs(p.x - xstar) <= 2 * h);
}

TEST_CASE("raising the boundary data raises the solution pointwise") {
  const double h = 1.0 / 32;
  const double a = 0.5;
  auto g1 = [&](Vec2 p) { return radial_exact(norm(p), a); };
  ObstacleInstance i1{disk(1.0, 96), h, [](Vec2) { return 1.0; }, g1};
  ObstacleInstance i2{disk(1.0, 96), h, [](Vec2) { return 1.0; },
                      [&](Vec2 p) { return g1(p) + 0.01; }};
  GapSolution s1 = solve_obstacle(i1);
  GapSolution s2 = solve_obstacle(i2);
  for (std::size_t id = 0; id < s1.v.values.size(); ++id) {
    if (!std::isfinite(s1.v.values[id]) || !std::isfinite(s2.v.values[id])) continue;
    CHECK(s2.v.values[id] >= s1.v.values[id] - 1e-7);
  }
}

TEST_CASE("iteration cap throws and carries the best iterate") {
  const double h = 1.0 / 64;
  ObstacleInstance inst{disk(1.0, 96), h, [](Vec2) { return 1.0; },
                        [&](Vec2 p) { return radial_exact(norm(p), 0.5); }};
  inst.max_iters = 10;
  CHECK_THROWS_AS(solve_obstacle(inst), ObstacleMaxIters);
  try {
    solve_obstacle(inst);
  } catch (const ObstacleMaxIters& e) {
    CHECK(e.residual > 0.0);
    CHECK(e.best.grid != nullptr);
    double vmax = 0.0;
    for (double x : e.best.values)
      if (std::isfinite(x)) vmax = std::max(vmax, std::fabs(x));
    CHECK(vmax > 0.0);
  }
}

TEST_CASE("contact partition splits at the tolerance contour") {
  const double h = 1.0 / 64;
  Polygon sq = make_square(1.0);
  auto grid = std::make_shared<Grid>(build_grid(sq, h));

  SUBCASE("kinked quadratic: vertical contour line") {
    ScalarField v(grid);
    v.fill([](Vec2 p) {
      const double s = std::max(0.0, p.x - 1.5);
      return 0.5 * s * s;
    });
    const double tol = 1e-4;
    ContactPartition part = contact_partition(v, tol);
    const double xstar = 1.5 + std::sqrt(2 * tol);
    REQUIRE(!part.free_boundary.empty());
    for (const Vec2& p : part.free_boundary) CHECK(std::fabs(p.x - xstar) <= h);
    // every inside node lands on exactly one side
    const Grid& g = *grid;
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        if (!g.inside(i, j)) continue;
        const int id = g.idx(i, j);
        CHECK((part.contact[id] != 0) != (part.noncontact[id] != 0));
      }
  }

  SUBCASE("radial field: circular contour") {
    ScalarField v(grid);
    v.fill([](Vec2 p) { return radial_exact(norm(p - Vec2{1.5, 1.5}), 0.25); });
    ContactPartition part = contact_partition(v, h * h);
    REQUIRE(!part.free_boundary.empty());
    for (const Vec2& p : part.free_boundary)
      CHECK(std::fabs(norm(p - Vec2{1.5, 1.5}) - 0.25) <= 2 * h);
  }

  SUBCASE("identically zero field: no free boundary") {
    ScalarField v(grid);
    v.fill([](Vec2) { return 0.0; });
    ContactPartition part = contact_partition(v, h * h);
    CHECK(part.free_boundary.empty());
  }
}

TEST_CASE("extension Laplacian formula: exact zero and sign change at r = 2R/3") {
  const double h = 1.0 / 64;
  auto [u, fan] = synth_fan(radial_profile(1.0, 0.3, kPi / 2), 0.0, 0.5, 33, h);
  const int k = static_cast<int>(fan.leaves.size()) / 2;
  const double t = fan.t[k];
  const double R = fan.leaves[k].length;
  CHECK(u1_laplacian_formula(fan, 2.0 * R / 3.0, t) == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(u1_laplacian_formula(fan, R / 3.0, t) > 3.0);
  CHECK(u1_laplacian_formula(fan, R, t) < 3.0);
}

TEST_CASE("parallel rays make the Laplacian formula degenerate") {
  const double h = 1.0 / 64;
  auto [u, fan] = synth_fan(parallel_profile(), 0.0, 0.5, 33, h);
  CHECK_THROWS_AS(u1_laplacian_formula(fan, 0.1, fan.t[fan.t.size() / 2]), DegenerateFan);
}

TEST_CASE("minimal convex extension reproduces the generating affine data") {
  const double h = 1.0 / 64;

  SUBCASE("circular-arc fan") {
    auto [u, fan] = synth_fan(radial_profile(1.0, 0.3, kPi / 2), 0.0, 0.5, 33, h);
    ChartWindow win{fan.t.front() + 0.05, fan.t.back() - 0.05, 0.02, 0.28};
    ScalarField u1 = minimal_convex_extension(fan, win, u.grid);
    const Grid& g = *u.grid;
    int n = 0;
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        const int id = g.idx(i, j);
        if (!std::isfinite(u1.values[id])) continue;
        const double r = 1.0 - norm(g.node(i, j));  // distance inward from the foot circle
        CHECK(u1.values[id] == doctest::Approx(2.0 - r).epsilon(1e-7));
        ++n;
      }
    CHECK(n > 50);
  }

  SUBCASE("parallel fan: extension is the perpendicular height") {
    auto [u, fan] = synth_fan(parallel_profile(), 0.0, 0.5, 33, h);
    ChartWindow win{fan.t.front() + 0.05, fan.t.back() - 0.05, 0.02, 0.24};
    ScalarField u1 = minimal_convex_extension(fan, win, u.grid);
    const Grid& g = *u.grid;
    int n = 0;
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        const int id = g.idx(i, j);
        if (!std::isfinite(u1.values[id])) continue;
        CHECK(u1.values[id] == doctest::Approx(g.node(i, j).y).epsilon(1e-8));
        ++n;
      }
    CHECK(n > 50);
  }
}

TEST_CASE("gap of a synthetic fan field vanishes on the bunching segments") {
  const double h = 1.0 / 64;
  auto [u, fan] = synth_fan(radial_profile(1.0, 0.3, kPi / 2), 0.0, 0.5, 33, h);
  HessianField H = hessian_field(u);
  RegionLabelField labels = segment_regions(u, H, h * h, h);
  ChartWindow win{fan.t.front() + 0.05, fan.t.back() - 0.05, 0.02, 0.28};
  GapSolution gap = build_gap(u, labels, fan, win);
  CHECK(gap.report.min_v >= -1e-9);
  CHECK(gap.report.max_abs_v_contact <= 10 * h * h);
  int ncontact = 0;
  for (unsigned char c : gap.contact) ncontact += c;
  CHECK(ncontact > 0);
}

TEST_CASE("measure stability: identical cases give zero symmetric difference") {
  const double h = 1.0 / 32;
  Polygon sq = make_square(1.0);
  auto grid = std::make_shared<Grid>(build_grid(sq, h));
  ScalarField v(grid), f(grid);
  v.fill([](Vec2 p) { return radial_exact(norm(p - Vec2{1.5, 1.5}), 0.25); });
  f.fill([](Vec2) { return 1.0; });
  StabilityCase c{&v, &f, &v, &f};
  StabilityReport rep = measure_stability_experiment({c}, h * h);
  REQUIRE(rep.sym_diff.size() == 1);
  CHECK(rep.sym_diff[0] == 0.0);
  CHECK(rep.rhs[0] == 0.0);
}

TEST_CASE("measure stability: contact-area difference of two radial fields") {
  const double h = 1.0 / 64;
  Polygon sq = make_square(1.0);
  auto grid = std::make_shared<Grid>(build_grid(sq, h));
  const double a1 = 0.20, a2 = 0.30;
  ScalarField v1(grid), v2(grid), f(grid);
  v1.fill([&](Vec2 p) { return radial_exact(norm(p - Vec2{1.5, 1.5}), a1); });
  v2.fill([&](Vec2 p) { return radial_exact(norm(p - Vec2{1.5, 1.5}), a2); });
  f.fill([](Vec2) { return 1.0; });
  StabilityCase c{&v1, &f, &v2, &f};
  StabilityReport rep = measure_stability_experiment({c}, 1e-12);
  const double expected = kPi * std::fabs(a1 * a1 - a2 * a2);
  CHECK(rep.sym_diff[0] == doctest::Approx(expected).epsilon(0.10));
}

TEST_CASE("measure stability rejects mismatched grids") {
  const double h = 1.0 / 32;
  Polygon sq = make_square(1.0);
  auto g1 = std::make_shared<Grid>(build_grid(sq, h));
  auto g2 = std::make_shared<Grid>(build_grid(sq, h / 2));
  ScalarField a(g1), b(g2);
  StabilityCase c{&a, &a, &b, &b};
  CHECK_THROWS_AS(measure_stability_experiment({c}, 1e-8), std::invalid_argument);
  StabilityCase null_case;
  CHECK_THROWS_AS(measure_stability_experiment({null_case}, 1e-8), std::invalid_argument);
}
