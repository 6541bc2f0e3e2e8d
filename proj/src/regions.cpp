#include "screenfb/regions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "screenfb/screening.hpp"

namespace screenfb {

namespace {
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
}  // namespace

void symmetric_eigenpairs(double a, double b, double c, double& lmin, double& lmax, double& vminx,
                          double& vminy, double& vmaxx, double& vmaxy) {
  const double tr = a + c;
  const double disc = std::sqrt((a - c) * (a - c) + 4.0 * b * b);
  lmin = 0.5 * (tr - disc);
  lmax = 0.5 * (tr + disc);
  // Eigenvector of lmax: pick the better-conditioned of the two candidate
  // expressions, falling back to the axes for (near-)isotropic matrices.
  double x1 = b, y1 = lmax - a;
  double x2 = lmax - c, y2 = b;
  double n1 = std::hypot(x1, y1), n2 = std::hypot(x2, y2);
  if (std::max(n1, n2) <= 1e-300 * std::max(1.0, std::fabs(tr))) {
    vmaxx = 1.0;
    vmaxy = 0.0;
  } else if (n1 >= n2) {
    vmaxx = x1 / n1;
    vmaxy = y1 / n1;
  } else {
    vmaxx = x2 / n2;
    vmaxy = y2 / n2;
  }
  vminx = -vmaxy;
  vminy = vmaxx;
}

bool sample_hessian(const HessianField& H, const Polygon& polygon, const Vec2& p, double& uxx,
                    double& uyy, double& uxy) {
  CellLocation loc;
  try {
    loc = locate(*H.grid, polygon, p);
  } catch (const GeometryError&) {
    return false;
  }
  const int ii[4] = {loc.i, loc.i + 1, loc.i, loc.i + 1};
  const int jj[4] = {loc.j, loc.j, loc.j + 1, loc.j + 1};
  double sxx = 0.0, syy = 0.0, sxy = 0.0, wsum = 0.0;
  for (int k = 0; k < 4; ++k) {
    if (!H.grid->inside(ii[k], jj[k])) continue;
    const int id = H.grid->idx(ii[k], jj[k]);
    if (!H.defined[id]) continue;
    sxx += loc.w[k] * H.uxx[id];
    syy += loc.w[k] * H.uyy[id];
    sxy += loc.w[k] * H.uxy[id];
    wsum += loc.w[k];
  }
  if (wsum <= 1e-12) return false;
  uxx = sxx / wsum;
  uyy = syy / wsum;
  uxy = sxy / wsum;
  return true;
}

int RegionLabelField::count(RegionLabel l) const {
  int c = 0;
  for (RegionLabel v : labels)
    if (v == l) ++c;
  return c;
}

HessianField hessian_field(const ScalarField& u) {
  const Grid& g = *u.grid;
  const int n = g.nx * g.ny;
  HessianField H;
  H.grid = u.grid;
  H.uxx.assign(n, kNan);
  H.uyy.assign(n, kNan);
  H.uxy.assign(n, kNan);
  H.lam_min.assign(n, kNan);
  H.lam_max.assign(n, kNan);
  H.vmin_x.assign(n, kNan);
  H.vmin_y.assign(n, kNan);
  H.vmax_x.assign(n, kNan);
  H.vmax_y.assign(n, kNan);
  H.defined.assign(n, 0);

  const double h2 = g.h * g.h;
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      if (!g.has_interior_ring(i, j)) continue;
      const int id = g.idx(i, j);
      const double c = u.at(i, j);
      const double uxx = (u.at(i + 1, j) + u.at(i - 1, j) - 2.0 * c) / h2;
      const double uyy = (u.at(i, j + 1) + u.at(i, j - 1) - 2.0 * c) / h2;
      const double uxy = (u.at(i + 1, j + 1) + u.at(i - 1, j - 1) - u.at(i + 1, j - 1) -
                          u.at(i - 1, j + 1)) /
                         (4.0 * h2);
      H.uxx[id] = uxx;
      H.uyy[id] = uyy;
      H.uxy[id] = uxy;
      symmetric_eigenpairs(uxx, uxy, uyy, H.lam_min[id], H.lam_max[id], H.vmin_x[id],
                           H.vmin_y[id], H.vmax_x[id], H.vmax_y[id]);
      H.defined[id] = 1;
    }
  }
  bool any = false;
  for (unsigned char f : H.defined) any = any || f;
  if (!any) throw GeometryError("hessian_field: no node has a full interior ring");
  return H;
}

RegionLabelField segment_regions(const ScalarField& u, const HessianField& H, double u_tol,
                                 double lam_tol) {
  if (u_tol <= 0.0 || lam_tol <= 0.0)
    throw std::invalid_argument("segment_regions: tolerances must be positive");
  const Grid& g = *u.grid;
  const int n = g.nx * g.ny;
  RegionLabelField out;
  out.grid = u.grid;
  out.u_tol = u_tol;
  out.lam_tol = lam_tol;
  out.labels.assign(n, RegionLabel::Outside);
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      if (!g.inside(i, j)) continue;
      const int id = g.idx(i, j);
      if (u.at(i, j) <= u_tol) {
        out.labels[id] = RegionLabel::Exclusion;
      } else if (!H.defined[id]) {
        out.labels[id] = RegionLabel::Boundary;
      } else if (H.lam_min[id] >= lam_tol) {
        out.labels[id] = RegionLabel::Customization;
      } else {
        out.labels[id] = RegionLabel::Bunching;
      }
    }
  }
  return out;
}

namespace {

// Convex hull by monotone chain; returns CCW vertices.
std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Vec2& a, const Vec2& b) { return a.x == b.x && a.y == b.y; }),
            pts.end());
  const std::size_t n = pts.size();
  if (n < 3) return pts;
  std::vector<Vec2> hull(2 * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0) --k;
    hull[k++] = pts[i];
  }
  const std::size_t lower = k + 1;
  for (std::size_t i = n - 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

bool in_hull(const std::vector<Vec2>& hull, Vec2 p, double tol) {
  if (hull.size() < 3) {
    for (const Vec2& q : hull)
      if (dist(p, q) <= tol) return true;
    if (hull.size() == 2) {
      Vec2 d = hull[1] - hull[0];
      double t = dot(p - hull[0], d) / dot(d, d);
      t = std::clamp(t, 0.0, 1.0);
      return dist(p, hull[0] + Vec2{t * d.x, t * d.y}) <= tol;
    }
    return false;
  }
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Vec2 a = hull[i], b = hull[(i + 1) % hull.size()];
    if (cross(b - a, p - a) < -tol) return false;
  }
  return true;
}

}  // namespace

RegionDiagnostics region_diagnostics(const ScalarField& u, const RegionLabelField& labels,
                                     const Polygon& polygon, const BoundaryChart& chart) {
  const Grid& g = *u.grid;
  RegionDiagnostics d;
  d.n_exclusion = labels.count(RegionLabel::Exclusion);
  d.n_bunching = labels.count(RegionLabel::Bunching);
  d.n_customization = labels.count(RegionLabel::Customization);
  d.n_boundary = labels.count(RegionLabel::Boundary);

  // (i) |laplacian(u) - 3| over the customization region eroded by 3h.
  auto is_custom = [&](int i, int j) {
    return i >= 0 && j >= 0 && i < g.nx && j < g.ny &&
           labels.labels[g.idx(i, j)] == RegionLabel::Customization;
  };
  const double h2 = g.h * g.h;
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      if (!is_custom(i, j)) continue;
      bool core = true;
      for (int dj = -3; dj <= 3 && core; ++dj)
        for (int di = -3; di <= 3 && core; ++di)
          if (di * di + dj * dj <= 9 && !is_custom(i + di, j + dj)) core = false;
      if (!core) continue;
      const double lap = (u.at(i + 1, j) + u.at(i - 1, j) + u.at(i, j + 1) + u.at(i, j - 1) -
                          4.0 * u.at(i, j)) /
                         h2;
      d.lap_dev.push_back(std::fabs(lap - 3.0));
    }
  }
  if (!d.lap_dev.empty()) {
    d.lap_present = true;
    std::vector<double> tmp = d.lap_dev;
    const std::size_t mid = tmp.size() / 2;
    std::nth_element(tmp.begin(), tmp.begin() + mid, tmp.end());
    d.lap_dev_median = tmp[mid];
  }

  // (ii) convexity defect of the exclusion region.
  std::vector<Vec2> ex_nodes;
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i)
      if (g.inside(i, j) && labels.labels[g.idx(i, j)] == RegionLabel::Exclusion)
        ex_nodes.push_back(g.node(i, j));
  if (!ex_nodes.empty()) {
    d.exclusion_present = true;
    const std::vector<Vec2> hull = convex_hull(ex_nodes);
    int inside_hull = 0;
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i)
        if (g.inside(i, j) && in_hull(hull, g.node(i, j), 1e-9 * g.h)) ++inside_hull;
    d.convexity_defect_cells = static_cast<double>(inside_hull - static_cast<int>(ex_nodes.size()));
  }

  // (iii) minimum outward normal distortion (grad u - x) . n over the chart.
  auto [gx, gy] = nodal_gradient(u);
  double min_dist = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < chart.samples.size(); ++k) {
    // Nudge the sample inward so bilinear interpolation stays in-domain.
    const Vec2 p = chart.samples[k] - Vec2{chart.normals[k].x * 1e-9, chart.normals[k].y * 1e-9};
    double gxv, gyv;
    try {
      gxv = gx.sample(polygon, p);
      gyv = gy.sample(polygon, p);
    } catch (const GeometryError&) {
      continue;
    }
    if (std::isnan(gxv) || std::isnan(gyv)) continue;
    const double dist_n =
        (gxv - chart.samples[k].x) * chart.normals[k].x + (gyv - chart.samples[k].y) * chart.normals[k].y;
    if (dist_n < min_dist) {
      min_dist = dist_n;
      d.distortion_present = true;
    }
  }
  if (d.distortion_present) d.min_boundary_distortion = min_dist;
  return d;
}

}  // namespace screenfb
