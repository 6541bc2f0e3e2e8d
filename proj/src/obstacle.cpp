#include "screenfb/obstacle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "screenfb/kernels.hpp"

namespace screenfb {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// Leaf data interpolated across samples by a local Lagrange cubic (linear
// near the arc ends when fewer than four samples are available). The foot
// curve and direction of a discrete fan are smooth in t, so cubic
// interpolation keeps the chart inversion error far below the sample spacing.
struct ChartInterp {
  const RayFan& fan;
  int K;

  explicit ChartInterp(const RayFan& f) : fan(f), K(static_cast<int>(f.leaves.size())) {}

  int segment(double t) const {
    int k = 0;
    while (k + 2 < K && fan.t[k + 1] <= t) ++k;
    return k;
  }

  template <class Get>
  double lagrange(double t, Get&& get) const {
    const int k = segment(t);
    const int i0 = std::clamp(k - 1, 0, std::max(0, K - 4));
    const int n = std::min(4, K - i0);
    double s = 0.0;
    for (int a = 0; a < n; ++a) {
      double w = 1.0;
      for (int b2 = 0; b2 < n; ++b2) {
        if (b2 == a) continue;
        w *= (t - fan.t[i0 + b2]) / (fan.t[i0 + a] - fan.t[i0 + b2]);
      }
      s += w * get(i0 + a);
    }
    return s;
  }

  Vec2 foot(double t) const {
    return {lagrange(t, [&](int k) { return fan.leaves[k].foot.x; }),
            lagrange(t, [&](int k) { return fan.leaves[k].foot.y; })};
  }
  Vec2 direction(double t) const {
    return normalized(Vec2{lagrange(t, [&](int k) { return fan.leaves[k].direction.x; }),
                           lagrange(t, [&](int k) { return fan.leaves[k].direction.y; })});
  }
  double length(double t) const {
    return lagrange(t, [&](int k) { return fan.leaves[k].length; });
  }
  double b(double t) const {
    return lagrange(t, [&](int k) { return fan.leaves[k].b; });
  }
  double m(double t) const {
    return lagrange(t, [&](int k) { return fan.leaves[k].m; });
  }

  // perpendicular residual of p against the leaf at t; r is the coordinate
  // along the interpolated direction
  double perp(double t, const Vec2& p, double& r) const {
    const Vec2 gm = foot(t);
    const Vec2 xi = direction(t);
    r = dot(p - gm, xi);
    return dist(p, gm + r * xi);
  }

  // invert the chart at p: nearest sample leaf, then golden-section over the
  // neighbouring t-interval
  bool locate(const Vec2& p, double& r, double& t) const {
    if (K == 0) return false;
    int kbest = 0;
    double ebest = std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k) {
      const Leaf& lf = fan.leaves[k];
      const double rk = dot(p - lf.foot, lf.direction);
      const double ek = dist(p, lf.foot + rk * lf.direction);
      if (ek < ebest) {
        ebest = ek;
        kbest = k;
      }
    }
    double a = fan.t[std::max(0, kbest - 1)], b2 = fan.t[std::min(K - 1, kbest + 1)];
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b2 - gr * (b2 - a), d = a + gr * (b2 - a), rr;
    double fc = perp(c, p, rr), fd = perp(d, p, rr);
    for (int it = 0; it < 80 && b2 - a > 1e-14; ++it) {
      if (fc < fd) {
        b2 = d;
        d = c;
        fd = fc;
        c = b2 - gr * (b2 - a);
        fc = perp(c, p, rr);
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + gr * (b2 - a);
        fd = perp(d, p, rr);
      }
    }
    t = 0.5 * (a + b2);
    return perp(t, p, r) <= std::numeric_limits<double>::infinity();
  }
};

double percentile(std::vector<double> vals, double q) {
  if (vals.empty()) return 0.0;
  const std::size_t k =
      std::min(vals.size() - 1, static_cast<std::size_t>(q * static_cast<double>(vals.size())));
  std::nth_element(vals.begin(), vals.begin() + k, vals.end());
  return vals[k];
}

}  // namespace

ChartWindow default_window(const RayFan& fan, const RegionLabelField& labels,
                           const Polygon& polygon, double h) {
  ChartWindow win;
  // trim two sample spacings from each arc end: the smoothed t-derivatives
  // are one-sided there and the chart inversion would extrapolate past the
  // last leaf
  const double dt = fan.leaves.size() >= 2
                        ? (fan.t.back() - fan.t.front()) /
                              static_cast<double>(fan.leaves.size() - 1)
                        : 0.0;
  win.tmin = fan.t.front() + 2.0 * dt;
  win.tmax = fan.t.back() - 2.0 * dt;
  win.rmin = fan.r0;
  // the reach beyond R_max must survive the 2h contact erosion plus the
  // Laplacian stencil ring, so the margin is wider than the minimum the
  // reduction itself would need
  win.rmax = fan.R_max + std::max(16.0 * h, 0.5 * fan.R_max);

  const Grid& g = *labels.grid;
  ChartInterp interp(fan);
  const int n_probe = 4 * static_cast<int>(fan.leaves.size());
  // shrink the outer reach until its rim stays inside the domain and clear of
  // the exclusion region
  for (int attempt = 0; attempt < 200 && win.rmax > 1.01 * fan.R_max; ++attempt) {
    bool ok = true;
    for (int k = 0; k <= n_probe && ok; ++k) {
      const double t = win.tmin + (win.tmax - win.tmin) * k / n_probe;
      const Vec2 p = interp.foot(t) + win.rmax * interp.direction(t);
      if (polygon.signed_distance(p) > -h) {
        ok = false;
        break;
      }
      const int i = static_cast<int>(std::lround((p.x - g.node(0, 0).x) / g.h));
      const int j = static_cast<int>(std::lround((p.y - g.node(0, 0).y) / g.h));
      if (i < 0 || j < 0 || i >= g.nx || j >= g.ny || !g.inside(i, j) ||
          labels.labels[g.idx(i, j)] == RegionLabel::Exclusion)
        ok = false;
    }
    if (ok) break;
    win.rmax = std::max(1.01 * fan.R_max, 0.97 * win.rmax);
  }
  return win;
}

ScalarField minimal_convex_extension(const RayFan& fan, const ChartWindow& window,
                                     const std::shared_ptr<const Grid>& grid) {
  ChartInterp interp(fan);
  ScalarField u1(grid);
  std::fill(u1.values.begin(), u1.values.end(), kNan);
  const double tol = grid->h;  // chart points hit their leaf to high accuracy
  // quick rejection box around the swept window
  double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
  for (const Leaf& lf : fan.leaves)
    for (double r : {window.rmin, window.rmax}) {
      const Vec2 q = lf.foot + r * lf.direction;
      xlo = std::min(xlo, q.x);
      xhi = std::max(xhi, q.x);
      ylo = std::min(ylo, q.y);
      yhi = std::max(yhi, q.y);
    }
  xlo -= grid->h;
  ylo -= grid->h;
  xhi += grid->h;
  yhi += grid->h;
  for (int j = 0; j < grid->ny; ++j) {
    for (int i = 0; i < grid->nx; ++i) {
      if (!grid->inside(i, j)) continue;
      const Vec2 p = grid->node(i, j);
      if (p.x < xlo || p.x > xhi || p.y < ylo || p.y > yhi) continue;
      double r, t;
      if (!interp.locate(p, r, t)) continue;
      if (t < window.tmin - 1e-12 || t > window.tmax + 1e-12) continue;
      if (r < window.rmin - 1e-12 || r > window.rmax + 1e-12) continue;
      double rr;
      if (interp.perp(t, p, rr) > tol) continue;
      u1.values[grid->idx(i, j)] = interp.b(t) + r * interp.m(t);
    }
  }
  return u1;
}

double u1_laplacian_formula(const RayFan& fan, double r, double t) {
  const int K = static_cast<int>(fan.leaves.size());
  if (K < 2) throw std::invalid_argument("u1_laplacian_formula: need at least 2 samples");
  const FanDerivatives der = fan_derivatives(fan);

  int k = 0;
  while (k + 2 < K && fan.t[k + 1] <= t) ++k;
  const double span = fan.t[k + 1] - fan.t[k];
  const double s = span > 0.0 ? std::clamp((t - fan.t[k]) / span, 0.0, 1.0) : 0.0;
  auto lerp = [&](double a, double b) { return (1.0 - s) * a + s * b; };

  const double R = lerp(fan.leaves[k].length, fan.leaves[k + 1].length);
  const double xd = lerp(norm(der.xi_dot[k]), norm(der.xi_dot[k + 1]));
  const double cr = lerp(cross(fan.leaves[k].direction, der.gamma_dot[k]),
                         cross(fan.leaves[k + 1].direction, der.gamma_dot[k + 1]));
  if (xd < 1e-10)
    throw DegenerateFan("u1_laplacian_formula: |xi'| below 1e-10 (parallel rays)");
  return 3.0 - (3.0 * r - 2.0 * R) / (r + cr / xd);
}

ContactPartition contact_partition(const ScalarField& v, double contact_tol) {
  const Grid& g = *v.grid;
  ContactPartition part;
  part.contact.assign(v.values.size(), 0);
  part.noncontact.assign(v.values.size(), 0);
  auto def = [&](int i, int j) {
    return g.inside(i, j) && std::isfinite(v.values[g.idx(i, j)]);
  };
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      if (!def(i, j)) continue;
      const int id = g.idx(i, j);
      (v.values[id] <= contact_tol ? part.contact : part.noncontact)[id] = 1;
    }
  // subcell contour of v = contact_tol on edges joining the two sides
  auto edge_point = [&](int i0, int j0, int i1, int j1) {
    const double v0 = v.values[g.idx(i0, j0)], v1 = v.values[g.idx(i1, j1)];
    const double s = std::clamp((contact_tol - v0) / (v1 - v0), 0.0, 1.0);
    const Vec2 p0 = g.node(i0, j0), p1 = g.node(i1, j1);
    part.free_boundary.push_back(p0 + s * (p1 - p0));
  };
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      if (!def(i, j)) continue;
      const int id = g.idx(i, j);
      if (i + 1 < g.nx && def(i + 1, j) &&
          part.contact[id] != part.contact[g.idx(i + 1, j)])
        edge_point(i, j, i + 1, j);
      if (j + 1 < g.ny && def(i, j + 1) &&
          part.contact[id] != part.contact[g.idx(i, j + 1)])
        edge_point(i, j, i, j + 1);
    }
  return part;
}

GapSolution build_gap(const ScalarField& u, const RegionLabelField& labels, const RayFan& fan,
                      const ChartWindow& window) {
  const auto& grid = u.grid;
  const Grid& g = *grid;
  const double h = g.h;
  ScalarField u1 = minimal_convex_extension(fan, window, grid);

  GapSolution gap;
  gap.contact_tol = h * h;
  gap.v = ScalarField(grid);
  std::fill(gap.v.values.begin(), gap.v.values.end(), kNan);

  double min_raw = std::numeric_limits<double>::infinity();
  for (std::size_t id = 0; id < gap.v.values.size(); ++id) {
    if (!std::isfinite(u1.values[id]) || !std::isfinite(u.values[id])) continue;
    const double raw = u.values[id] - u1.values[id];
    min_raw = std::min(min_raw, raw);
    gap.v.values[id] = std::max(raw, -1e-9);
  }
  gap.report.min_v_raw = std::isfinite(min_raw) ? min_raw : 0.0;

  ContactPartition part = contact_partition(gap.v, gap.contact_tol);
  gap.contact = std::move(part.contact);
  gap.noncontact = std::move(part.noncontact);
  gap.free_boundary = std::move(part.free_boundary);

  double min_v = std::numeric_limits<double>::infinity();
  double max_contact = 0.0;
  std::vector<double> laps;
  auto defined = [&](int i, int j) {
    return g.inside(i, j) && std::isfinite(gap.v.values[g.idx(i, j)]);
  };
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      if (!defined(i, j)) continue;
      const int id = g.idx(i, j);
      const double vv = gap.v.values[id];
      min_v = std::min(min_v, vv);
      if (labels.labels[id] == RegionLabel::Bunching)
        max_contact = std::max(max_contact, std::fabs(vv));
      // discrete Laplacian on the noncontact set eroded by 2h
      if (!gap.noncontact[id]) continue;
      // erode 2h away from the contact set; the stencil itself only needs
      // the four neighbours defined
      if (i < 1 || j < 1 || i + 1 >= g.nx || j + 1 >= g.ny) continue;
      bool interior = defined(i - 1, j) && defined(i + 1, j) && defined(i, j - 1) &&
                      defined(i, j + 1);
      for (int dj = -2; dj <= 2 && interior; ++dj)
        for (int di = -2; di <= 2 && interior; ++di) {
          const int ii = i + di, jj = j + dj;
          if (ii < 0 || jj < 0 || ii >= g.nx || jj >= g.ny) continue;
          if (defined(ii, jj) && gap.contact[g.idx(ii, jj)]) interior = false;
        }
      if (!interior) continue;
      laps.push_back((gap.v.values[g.idx(i - 1, j)] + gap.v.values[g.idx(i + 1, j)] +
                      gap.v.values[g.idx(i, j - 1)] + gap.v.values[g.idx(i, j + 1)] - 4.0 * vv) /
                     (h * h));
    }
  gap.report.min_v = std::isfinite(min_v) ? min_v : 0.0;
  gap.report.max_abs_v_contact = max_contact;
  gap.report.min_lap_noncontact =
      laps.empty() ? 0.0 : *std::min_element(laps.begin(), laps.end());
  gap.report.c0_est = percentile(laps, 0.05);
  gap.report.reduction_failed = gap.report.min_v < -1e-9 ||
                                gap.report.max_abs_v_contact > 10.0 * h * h ||
                                !(gap.report.c0_est > 0.0);
  return gap;
}

GapSolution solve_obstacle(const ObstacleInstance& instance) {
  const double h = instance.h;
  auto grid = std::make_shared<Grid>(build_grid(instance.domain, h));
  const Grid& g = *grid;
  const std::size_t n = static_cast<std::size_t>(g.nx) * g.ny;

  std::vector<double> v(n, 0.0), f(n, 0.0);
  std::vector<unsigned char> active(n, 0);
  double fmax = 0.0;
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      if (!g.inside(i, j)) continue;
      const int id = g.idx(i, j);
      const Vec2 p = g.node(i, j);
      f[id] = instance.f(p);
      fmax = std::max(fmax, std::fabs(f[id]));
      if (g.has_interior_ring(i, j)) {
        active[id] = 1;
      } else {
        v[id] = std::max(0.0, instance.g(p));  // Dirichlet band
      }
    }
  const double tol = instance.ob_tol > 0.0 ? instance.ob_tol : 1e-8 * fmax;
  const double h2 = h * h;

  auto residual = [&]() {
    double res = 0.0;
    for (int j = 1; j < g.ny - 1; ++j)
      for (int i = 1; i < g.nx - 1; ++i) {
        const int id = g.idx(i, j);
        if (!active[id]) continue;
        const double lap = (v[id - 1] + v[id + 1] + v[id - g.nx] + v[id + g.nx] - 4.0 * v[id]) / h2;
        res = std::max(res, std::fabs(std::min(v[id], f[id] - lap)));
      }
    return res;
  };

  int it = 0;
  double res = std::numeric_limits<double>::infinity();
  for (; it < instance.max_iters; ++it) {
    kernels::psor_sweep(v.data(), f.data(), active.data(), g.nx, g.ny, h2, instance.omega, 0);
    kernels::psor_sweep(v.data(), f.data(), active.data(), g.nx, g.ny, h2, instance.omega, 1);
    if (it % 50 == 49 || it + 1 == instance.max_iters) {
      res = residual();
      if (res <= tol) break;
    }
  }

  GapSolution gap;
  gap.contact_tol = h * h;
  gap.v = ScalarField(grid);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i)
      if (g.inside(i, j)) gap.v.values[g.idx(i, j)] = v[g.idx(i, j)];
  gap.iterations = it + 1;
  gap.residual = res;
  if (res > tol)
    throw ObstacleMaxIters("solve_obstacle: iteration cap reached", std::move(gap.v), res);

  ContactPartition part = contact_partition(gap.v, gap.contact_tol);
  gap.contact = std::move(part.contact);
  gap.noncontact = std::move(part.noncontact);
  gap.free_boundary = std::move(part.free_boundary);
  double min_v = std::numeric_limits<double>::infinity();
  for (double x : gap.v.values)
    if (std::isfinite(x)) min_v = std::min(min_v, x);
  gap.report.min_v = gap.report.min_v_raw = std::isfinite(min_v) ? min_v : 0.0;
  return gap;
}

StabilityReport measure_stability_experiment(const std::vector<StabilityCase>& cases,
                                             double contact_tol) {
  StabilityReport rep;
  for (const StabilityCase& c : cases) {
    if (!c.v1 || !c.v2 || !c.f1 || !c.f2)
      throw std::invalid_argument("measure_stability_experiment: null field");
    const Grid& g = *c.v1->grid;
    if (c.v2->grid->nx != g.nx || c.v2->grid->ny != g.ny || c.f1->grid->nx != g.nx ||
        c.f2->grid->nx != g.nx)
      throw std::invalid_argument("measure_stability_experiment: grid mismatch");
    long sym = 0;
    double df = 0.0, dv = 0.0;
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        if (!g.inside(i, j)) continue;
        const int id = g.idx(i, j);
        const double a = c.v1->values[id], b = c.v2->values[id];
        if (!std::isfinite(a) || !std::isfinite(b)) continue;
        if ((a <= contact_tol) != (b <= contact_tol)) ++sym;
        dv = std::max(dv, std::fabs(a - b));
        df = std::max(df, std::fabs(c.f1->values[id] - c.f2->values[id]));
      }
    rep.sym_diff.push_back(static_cast<double>(sym) * g.h * g.h);
    rep.rhs.push_back(df + std::sqrt(dv));
  }
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < rep.rhs.size(); ++k) {
    num += rep.sym_diff[k] * rep.rhs[k];
    den += rep.rhs[k] * rep.rhs[k];
  }
  rep.fitted_c = den > 0.0 ? num / den : 0.0;
  return rep;
}

}  // namespace screenfb
