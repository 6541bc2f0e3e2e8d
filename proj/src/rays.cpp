#include "screenfb/rays.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "screenfb/screening.hpp"

namespace screenfb {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// A leaf shorter than this many cells cannot have its length measured by the
// eigenvalue crossing, and a band whose minimum eigenvalue bias exceeds this
// multiple of the convexity tolerance is below the grid's resolution of the
// null direction; both cases are rejected as unresolved rather than tame.
constexpr double kMinLeafCells = 8.0;
constexpr double kBandBiasFactor = 15.0;

struct EigSample {
  double lam_min = 0.0, lam_max = 0.0;
  Vec2 vmin;
  bool ok = false;
};

EigSample eig_at(const HessianField& H, const Polygon& polygon, const Vec2& p) {
  EigSample e;
  double uxx, uyy, uxy;
  if (!sample_hessian(H, polygon, p, uxx, uyy, uxy)) return e;
  double vmaxx, vmaxy;
  symmetric_eigenpairs(uxx, uxy, uyy, e.lam_min, e.lam_max, e.vmin.x, e.vmin.y, vmaxx, vmaxy);
  e.ok = true;
  return e;
}

struct March {
  std::vector<Vec2> pts;  // marched points, excluding the start
  std::vector<double> lam;  // lambda_min at the marched points (NaN if unsampled)
  Vec2 end;
  bool hit_boundary = false;
  bool hit_crossing = false;
  double end_slope = 0.0;  // d(lambda_min)/dr at the crossing, if any
};

// Follow the null-eigenvector field from p0 until the polygon boundary or the
// strictly convex region is reached; crossings are refined by bisection.
March march_null_direction(const HessianField& H, const RegionLabelField& labels,
                           const Polygon& polygon, Vec2 p0, Vec2 v0) {
  const double h = H.grid->h;
  const double step = 0.5 * h;
  const double lam_tol = labels.lam_tol;
  March out;
  Vec2 p = p0, v = v0;
  const int cap = static_cast<int>(4.0 * polygon.perimeter() / step) + 64;
  for (int it = 0; it < cap; ++it) {
    Vec2 next = p + step * v;
    if (!polygon.contains(next)) {
      // bisect the boundary crossing
      Vec2 a = p, b = next;
      for (int k = 0; k < 30; ++k) {
        Vec2 mid = 0.5 * (a + b);
        (polygon.contains(mid) ? a : b) = mid;
      }
      out.end = a;
      out.hit_boundary = true;
      return out;
    }
    EigSample e = eig_at(H, polygon, next);
    // the crossing test is suppressed within h of the rim, where the
    // second-difference Hessian mixes in boundary effects, and a crossing
    // only counts when sustained ahead (pointwise spikes are noise)
    bool crossing = e.ok && e.lam_min >= lam_tol && polygon.signed_distance(next) < -h;
    if (crossing) {
      for (int j = 1; j <= 3; ++j) {
        const Vec2 ahead = next + (j * step) * v;
        if (!polygon.contains(ahead)) break;
        EigSample ea = eig_at(H, polygon, ahead);
        if (ea.ok && ea.lam_min < lam_tol) {
          crossing = false;
          break;
        }
      }
    }
    if (crossing) {
      // bisect the lambda_min crossing down to h/8
      Vec2 a = p, b = next;
      for (int k = 0; k < 3; ++k) {
        Vec2 mid = 0.5 * (a + b);
        EigSample em = eig_at(H, polygon, mid);
        ((em.ok && em.lam_min >= lam_tol) ? b : a) = mid;
      }
      out.end = a;
      out.hit_crossing = true;
      // local lambda ramp slope just behind the crossing
      EigSample e1 = eig_at(H, polygon, a - step * v);
      if (e1.ok) out.end_slope = (lam_tol - e1.lam_min) / step;
      return out;
    }
    if (e.ok) {
      Vec2 vn = e.vmin;
      if (dot(vn, v) < 0.0) vn = -vn;
      v = vn;
    }
    p = next;
    out.pts.push_back(p);
    out.lam.push_back(e.ok ? e.lam_min : kNan);
  }
  out.end = p;
  return out;
}

// The leaf start just inside a boundary sample must sit on (or next to) the
// bunching region: nearest node not exclusion/customization, and some node of
// the surrounding 3x3 patch labelled as bunching.
bool bunching_adjacent(const Grid& g, const RegionLabelField& labels, const Vec2& s,
                       const Vec2& n) {
  const double h = g.h;
  const Vec2 q = s - (0.5 * h) * n;
  const int ic = static_cast<int>(std::lround((q.x - g.origin.x) / h));
  const int jc = static_cast<int>(std::lround((q.y - g.origin.y) / h));
  bool any_bunching = false;
  RegionLabel nearest = RegionLabel::Outside;
  double best = std::numeric_limits<double>::infinity();
  for (int dj = -1; dj <= 1; ++dj)
    for (int di = -1; di <= 1; ++di) {
      const int i = ic + di, j = jc + dj;
      if (!g.inside(i, j)) continue;
      const RegionLabel lab = labels.labels[g.idx(i, j)];
      if (lab == RegionLabel::Bunching) any_bunching = true;
      const double d = dist(q, g.node(i, j));
      if (d < best) {
        best = d;
        nearest = lab;
      }
    }
  return any_bunching &&
         (nearest == RegionLabel::Bunching || nearest == RegionLabel::Boundary);
}

double segment_distance(const Vec2& a0, const Vec2& a1, const Vec2& b0, const Vec2& b1) {
  auto point_seg = [](const Vec2& p, const Vec2& s0, const Vec2& s1) {
    const Vec2 d = s1 - s0;
    const double dd = dot(d, d);
    double t = dd > 0.0 ? dot(p - s0, d) / dd : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return dist(p, s0 + t * d);
  };
  const Vec2 da = a1 - a0, db = b1 - b0;
  const double denom = cross(da, db);
  if (std::fabs(denom) > 1e-14) {
    const double s = cross(b0 - a0, db) / denom;
    const double t = cross(b0 - a0, da) / denom;
    if (s >= 0.0 && s <= 1.0 && t >= 0.0 && t <= 1.0) return 0.0;
  }
  return std::min(std::min(point_seg(a0, b0, b1), point_seg(a1, b0, b1)),
                  std::min(point_seg(b0, a0, a1), point_seg(b1, a0, a1)));
}

// 5-point binomial smoothing with replicated ends.
std::vector<double> smooth5(const std::vector<double>& f) {
  const int n = static_cast<int>(f.size());
  std::vector<double> out(n);
  static const double w[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int k = -2; k <= 2; ++k) s += w[k + 2] * f[std::clamp(i + k, 0, n - 1)];
    out[i] = s;
  }
  return out;
}

}  // namespace

Leaf trace_leaf(const ScalarField& u, const HessianField& H, const RegionLabelField& labels,
                const Polygon& polygon, Vec2 start, Vec2 hint) {
  const Grid& g = *u.grid;
  const double h = g.h;

  // label at the node nearest the start (searching the 3x3 patch when the
  // rounded node itself is outside)
  {
    const int ic = static_cast<int>(std::lround((start.x - g.origin.x) / h));
    const int jc = static_cast<int>(std::lround((start.y - g.origin.y) / h));
    RegionLabel lab = RegionLabel::Outside;
    double best = std::numeric_limits<double>::infinity();
    for (int dj = -1; dj <= 1; ++dj)
      for (int di = -1; di <= 1; ++di) {
        const int i = ic + di, j = jc + dj;
        if (!g.inside(i, j)) continue;
        const double d = dist(start, g.node(i, j));
        if (d < best) {
          best = d;
          lab = labels.labels[g.idx(i, j)];
        }
      }
    if (lab == RegionLabel::Customization)
      throw NotInBunching("trace_leaf: start lies in the strictly convex region");
    if (lab == RegionLabel::Exclusion)
      throw NotInBunching("trace_leaf: start lies in the zero region");
    if (lab == RegionLabel::Outside) throw GeometryError("trace_leaf: start outside the domain");
  }

  Leaf leaf;
  EigSample e0 = eig_at(H, polygon, start);
  if (!e0.ok) throw GeometryError("trace_leaf: no Hessian support at the start");
  leaf.direction_ambiguous = e0.lam_max < labels.lam_tol;
  Vec2 v0 = e0.vmin;
  if (norm(hint) > 0.0) {
    if (dot(v0, hint) < 0.0) v0 = -v0;
  } else if (v0.y < 0.0 || (v0.y == 0.0 && v0.x < 0.0)) {
    v0 = -v0;
  }

  March fwd = march_null_direction(H, labels, polygon, start, v0);
  March back = march_null_direction(H, labels, polygon, start, -v0);

  // the foot is the boundary-hitting side, searched against the hint first
  Vec2 foot, far;
  bool swapped = false;
  if (back.hit_boundary) {
    foot = back.end;
    far = fwd.end;
    leaf.endpoint_on_boundary = fwd.hit_boundary;
  } else if (fwd.hit_boundary) {
    foot = fwd.end;
    far = back.end;
    leaf.endpoint_on_boundary = false;
    swapped = true;
  } else {
    leaf.foot_on_boundary = false;
    foot = back.end;
    far = fwd.end;
  }
  if (!leaf.endpoint_on_boundary && polygon.signed_distance(far) > -h)
    leaf.endpoint_on_boundary = true;

  leaf.foot = foot;
  const Vec2 chord = far - foot;
  const double R = norm(chord);
  leaf.length = R;
  leaf.direction = R > 0.0 ? normalized(chord) : v0;

  // When the far side ended at a lambda crossing, back-project the lambda
  // ramp to the band's baseline lambda level: the in-band discrete Hessian
  // carries a (typically negative) bias, so the first crossing of lam_tol
  // overshoots the elbow of the ramp by (lam_tol - baseline)/slope.
  const March& far_side = swapped ? back : fwd;
  if (R > 0.0) {
    std::vector<double> band;
    auto collect = [&](const March& mm) {
      for (std::size_t k = 0; k < mm.lam.size(); ++k) {
        if (std::isnan(mm.lam[k])) continue;
        const double r = dot(mm.pts[k] - foot, leaf.direction);
        if (r > 0.25 * R && r < 0.75 * R) band.push_back(mm.lam[k]);
      }
    };
    collect(fwd);
    collect(back);
    if (!band.empty()) {
      std::nth_element(band.begin(), band.begin() + band.size() / 2, band.end());
      leaf.band_bias = std::min(band[band.size() / 2], 0.0);
      if (far_side.hit_crossing && far_side.end_slope > 0.0) {
        const double dr = (labels.lam_tol - leaf.band_bias) / far_side.end_slope;
        leaf.length = R - std::min(dr, 0.4 * R);
      }
    }
  }
  for (const Vec2& vtx : polygon.vertices)
    if (dist(foot, vtx) <= h) leaf.foot_is_corner = true;

  // least-squares affine fit u ~ b + m r along the traversed points
  std::vector<Vec2> pts;
  pts.push_back(foot);
  if (swapped) {
    for (auto it = fwd.pts.rbegin(); it != fwd.pts.rend(); ++it) pts.push_back(*it);
    pts.push_back(start);
    for (const Vec2& p : back.pts) pts.push_back(p);
  } else {
    for (auto it = back.pts.rbegin(); it != back.pts.rend(); ++it) pts.push_back(*it);
    pts.push_back(start);
    for (const Vec2& p : fwd.pts) pts.push_back(p);
  }
  pts.push_back(far);
  double sr = 0.0, srr = 0.0, su = 0.0, sru = 0.0;
  std::vector<double> rs, us;
  for (const Vec2& p : pts) {
    double uv;
    try {
      uv = u.sample(polygon, p);
    } catch (const GeometryError&) {
      continue;
    }
    const double r = dot(p - foot, leaf.direction);
    rs.push_back(r);
    us.push_back(uv);
    sr += r;
    srr += r * r;
    su += uv;
    sru += r * uv;
  }
  const double nfit = static_cast<double>(rs.size());
  const double det = nfit * srr - sr * sr;
  if (nfit >= 2 && std::fabs(det) > 1e-30) {
    leaf.m = (nfit * sru - sr * su) / det;
    leaf.b = (su * srr - sr * sru) / det;
  } else if (nfit >= 1) {
    leaf.b = su / nfit;
  }
  for (std::size_t k = 0; k < rs.size(); ++k)
    leaf.affine_dev = std::max(leaf.affine_dev, std::fabs(us[k] - leaf.b - leaf.m * rs[k]));
  return leaf;
}

RayFan build_tame_fan(const ScalarField& u, const HessianField& H, const RegionLabelField& labels,
                      const Polygon& polygon, const BoundaryChart& chart, int arc_begin,
                      int arc_end) {
  if (arc_begin < 0 || arc_end >= static_cast<int>(chart.samples.size()) || arc_end < arc_begin)
    throw std::invalid_argument("build_tame_fan: bad arc range");
  const Grid& g = *u.grid;
  const double h = g.h;
  auto [gx, gy] = nodal_gradient(u);

  RayFan fan;
  for (int k = arc_begin; k <= arc_end; ++k) {
    if (chart.is_corner[k]) throw NotTame(k, "corner");
    const Vec2 s = chart.samples[k];
    const Vec2 n = chart.normals[k];

    if (!bunching_adjacent(g, labels, s, n)) throw NotTame(k, "not_adjacent");

    double d;
    try {
      const Vec2 q = s - (1e-9 * h) * n;
      d = (gx.sample(polygon, q) - s.x) * n.x + (gy.sample(polygon, q) - s.y) * n.y;
    } catch (const GeometryError&) {
      throw NotTame(k, "distortion");
    }
    if (!(d > 0.0)) throw NotTame(k, "distortion");

    Leaf leaf;
    try {
      leaf = trace_leaf(u, H, labels, polygon, s - (0.5 * h) * n, -n);
    } catch (const NotInBunching&) {
      throw NotTame(k, "not_adjacent");
    }
    if (leaf.foot_is_corner) throw NotTame(k, "foot_is_corner");
    if (leaf.endpoint_on_boundary) throw NotTame(k, "endpoint_on_boundary");
    // Resolution gates: the leaf must span enough cells for its length to be
    // measurable, and the in-band minimum eigenvalue must stay close to zero
    // (a large negative bias means the null direction is not resolved).
    if (!(leaf.length >= kMinLeafCells * h)) throw NotTame(k, "length");
    if (leaf.band_bias < -kBandBiasFactor * labels.lam_tol) throw NotTame(k, "unresolved");

    // Refine the ray direction from boundary data: on the ray the Hessian has
    // null direction xi, and its tangential row gives xi ∝ -u_tn tau - u_tt n
    // using only edge values and one-sided normal derivatives. The marched
    // chord accumulates transverse drift; this estimator does not.
    {
      const Vec2 tau{-n.y, n.x};
      const double dlt = 4.0 * h;  // wide baseline: bilinear sampling noise
                                   // would swamp an h-scale stencil
      auto un = [&](const Vec2& p) {
        const Vec2 q = p - (1e-9 * h) * n;
        return gx.sample(polygon, q) * n.x + gy.sample(polygon, q) * n.y;
      };
      try {
        const Vec2 sm = s - dlt * tau, sp = s + dlt * tau;
        const double u0 = u.sample(polygon, s - (1e-9 * h) * n);
        const double um = u.sample(polygon, sm - (1e-9 * h) * n);
        const double up = u.sample(polygon, sp - (1e-9 * h) * n);
        const double utt = (up - 2.0 * u0 + um) / (dlt * dlt);
        const double utn = (un(sp) - un(sm)) / (2.0 * dlt);
        if (utt > 0.0) {
          const Vec2 xi_b = normalized(utn * tau - utt * n);
          if (dot(xi_b, leaf.direction) > 0.5) leaf.direction = xi_b;
        }
      } catch (const GeometryError&) {
        // near a corner the stencil leaves the edge; keep the marched chord
      }
    }

    // refit the affine data along the straight refined ray: the marched
    // polyline drifts transversally, so the least-squares fit recorded by
    // trace_leaf is offset from the values on the ray itself
    {
      double sr = 0.0, srr = 0.0, su = 0.0, sru = 0.0;
      std::vector<double> rs, us;
      for (double r = 0.0; r <= leaf.length + 0.25 * h; r += 0.5 * h) {
        const double rc = std::min(r, leaf.length);
        try {
          const double uv = u.sample(polygon, leaf.foot + rc * leaf.direction + (1e-9 * h) * -n);
          rs.push_back(rc);
          us.push_back(uv);
          sr += rc;
          srr += rc * rc;
          su += uv;
          sru += rc * uv;
        } catch (const GeometryError&) {
        }
      }
      const double nfit = static_cast<double>(rs.size());
      const double det = nfit * srr - sr * sr;
      if (nfit >= 2 && det > 0.0) {
        leaf.m = (nfit * sru - sr * su) / det;
        leaf.b = (su * srr - sr * sru) / det;
        leaf.affine_dev = 0.0;
        for (std::size_t q = 0; q < rs.size(); ++q)
          leaf.affine_dev =
              std::max(leaf.affine_dev, std::fabs(us[q] - leaf.b - leaf.m * rs[q]));
      }
    }

    fan.t.push_back(chart.arclength[k]);
    fan.leaves.push_back(std::move(leaf));
    fan.distortion.push_back(d);
  }

  // orient t so that cross(xi, gamma') > 0 along the fan
  const std::size_t K = fan.leaves.size();
  if (K >= 2) {
    double orient = 0.0;
    for (std::size_t k = 0; k + 1 < K; ++k) {
      const Vec2 gdot = fan.leaves[k + 1].foot - fan.leaves[k].foot;
      orient += cross(fan.leaves[k].direction, gdot);
    }
    if (orient < 0.0) {
      std::reverse(fan.leaves.begin(), fan.leaves.end());
      std::reverse(fan.distortion.begin(), fan.distortion.end());
      const double tmax = fan.t.back();
      std::reverse(fan.t.begin(), fan.t.end());
      for (double& t : fan.t) t = tmax - t;
    }
  }

  fan.r0 = std::numeric_limits<double>::infinity();
  fan.eta0 = std::numeric_limits<double>::infinity();
  fan.R_max = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    fan.r0 = std::min(fan.r0, fan.leaves[k].length);
    fan.eta0 = std::min(fan.eta0, fan.distortion[k]);
    fan.R_max = std::max(fan.R_max, fan.leaves[k].length);
  }

  // consecutive leaves must not cross within r <= R_max
  for (std::size_t k = 0; k + 1 < K; ++k) {
    const Leaf& a = fan.leaves[k];
    const Leaf& b = fan.leaves[k + 1];
    const double ra = std::min(a.length, fan.R_max), rb = std::min(b.length, fan.R_max);
    if (segment_distance(a.foot, a.foot + ra * a.direction, b.foot, b.foot + rb * b.direction) ==
        0.0)
      throw NotTame(static_cast<int>(k) + arc_begin, "crossing");
  }
  return fan;
}

std::pair<int, int> largest_tame_arc(const ScalarField& u, const HessianField& H,
                                     const RegionLabelField& labels, const Polygon& polygon,
                                     const BoundaryChart& chart) {
  const Grid& g = *u.grid;
  const double h = g.h;
  auto [gx, gy] = nodal_gradient(u);
  const int K = static_cast<int>(chart.samples.size());
  std::vector<char> ok(K, 0);
  for (int k = 0; k < K; ++k) {
    if (chart.is_corner[k]) continue;
    const Vec2 s = chart.samples[k];
    const Vec2 n = chart.normals[k];
    if (!bunching_adjacent(g, labels, s, n)) continue;
    try {
      const Vec2 qq = s - (1e-9 * h) * n;
      const double d = (gx.sample(polygon, qq) - s.x) * n.x + (gy.sample(polygon, qq) - s.y) * n.y;
      if (!(d > 0.0)) continue;
      const Leaf leaf = trace_leaf(u, H, labels, polygon, s - (0.5 * h) * n, -n);
      if (!leaf.endpoint_on_boundary && !leaf.foot_is_corner &&
          leaf.length >= kMinLeafCells * h && leaf.band_bias >= -kBandBiasFactor * labels.lam_tol)
        ok[k] = 1;
    } catch (const GeometryError&) {
    } catch (const NotInBunching&) {
    }
  }
  int best_b = 0, best_e = -1, run_b = 0;
  for (int k = 0; k <= K; ++k) {
    if (k < K && ok[k]) continue;
    if (k - run_b > best_e - best_b + 1) {
      best_b = run_b;
      best_e = k - 1;
    }
    run_b = k + 1;
  }
  if (best_e < best_b) throw GeometryError("largest_tame_arc: no eligible boundary samples");
  return {best_b, best_e};
}

FanDerivatives fan_derivatives(const RayFan& fan) {
  const int K = static_cast<int>(fan.leaves.size());
  if (K < 2) throw std::invalid_argument("fan_derivatives: need at least 2 samples");

  std::vector<double> gxv(K), gyv(K), xxv(K), xyv(K);
  for (int k = 0; k < K; ++k) {
    gxv[k] = fan.leaves[k].foot.x;
    gyv[k] = fan.leaves[k].foot.y;
    xxv[k] = fan.leaves[k].direction.x;
    xyv[k] = fan.leaves[k].direction.y;
  }
  gxv = smooth5(gxv);
  gyv = smooth5(gyv);
  xxv = smooth5(xxv);
  xyv = smooth5(xyv);

  auto ddt = [&](const std::vector<double>& f, int k) {
    const int lo = std::max(0, k - 1), hi = std::min(K - 1, k + 1);
    return (f[hi] - f[lo]) / (fan.t[hi] - fan.t[lo]);
  };

  FanDerivatives der;
  for (int k = 0; k < K; ++k) {
    der.gamma_dot.push_back({ddt(gxv, k), ddt(gyv, k)});
    der.xi_dot.push_back({ddt(xxv, k), ddt(xyv, k)});
  }
  return der;
}

FanIdentityReport fan_identities(const RayFan& fan) {
  const int K = static_cast<int>(fan.leaves.size());
  if (K < 5) throw std::invalid_argument("fan_identities: need at least 5 samples");
  const FanDerivatives der = fan_derivatives(fan);

  FanIdentityReport rep;
  rep.min_orientation = std::numeric_limits<double>::infinity();
  for (int k = 0; k < K; ++k) {
    const Vec2& gdot = der.gamma_dot[k];
    const Vec2& xdot = der.xi_dot[k];
    const double R = fan.leaves[k].length;
    const double lhs = R * R * norm(xdot);
    const double rhs = 2.0 * norm(gdot) * fan.distortion[k];
    rep.residual.push_back(std::fabs(lhs - rhs) / std::max({lhs, rhs, 1e-300}));
    rep.min_orientation =
        std::min(rep.min_orientation, cross(fan.leaves[k].direction, gdot));
  }
  std::vector<double> tmp = rep.residual;
  const std::size_t mid = tmp.size() / 2;
  std::nth_element(tmp.begin(), tmp.begin() + mid, tmp.end());
  rep.median_residual = tmp[mid];

  rep.min_separation = std::numeric_limits<double>::infinity();
  for (int k = 0; k < K; ++k)
    for (int l = k + 1; l < K; ++l) {
      const Leaf& a = fan.leaves[k];
      const Leaf& b = fan.leaves[l];
      const double ra = std::min(a.length, fan.R_max), rb = std::min(b.length, fan.R_max);
      rep.min_separation =
          std::min(rep.min_separation, segment_distance(a.foot, a.foot + ra * a.direction, b.foot,
                                                        b.foot + rb * b.direction));
    }
  return rep;
}

std::pair<ScalarField, RayFan> synth_fan(const FanProfile& prof, double t0, double t1,
                                         int samples, double h) {
  if (samples < 2 || !(t1 > t0)) throw std::invalid_argument("synth_fan: bad parameter window");

  RayFan fan;
  const double eps = 1e-6 * (t1 - t0);
  for (int k = 0; k < samples; ++k) {
    const double t = t0 + (t1 - t0) * k / (samples - 1);
    Leaf leaf;
    leaf.foot = prof.gamma(t);
    leaf.direction = normalized(prof.xi(t));
    leaf.length = prof.R(t);
    leaf.b = prof.b(t);
    leaf.m = prof.m(t);
    fan.t.push_back(t);
    fan.leaves.push_back(leaf);
    // distortion chosen to satisfy the length identity exactly
    const Vec2 gdot = (1.0 / (2.0 * eps)) * (prof.gamma(t + eps) - prof.gamma(t - eps));
    const Vec2 xdot = (1.0 / (2.0 * eps)) *
                      (normalized(prof.xi(t + eps)) - normalized(prof.xi(t - eps)));
    fan.distortion.push_back(leaf.length * leaf.length * norm(xdot) / (2.0 * norm(gdot)));
  }
  fan.r0 = std::numeric_limits<double>::infinity();
  fan.eta0 = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < fan.leaves.size(); ++k) {
    fan.r0 = std::min(fan.r0, fan.leaves[k].length);
    fan.eta0 = std::min(fan.eta0, fan.distortion[k]);
    fan.R_max = std::max(fan.R_max, fan.leaves[k].length);
  }

  // grid covering the swept window, padded by 2h
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  const int dense_n = 4 * samples;
  for (int k = 0; k <= dense_n; ++k) {
    const double t = t0 + (t1 - t0) * k / dense_n;
    const Vec2 gm = prof.gamma(t);
    const Vec2 xi = normalized(prof.xi(t));
    for (double f : {0.0, 0.5, 1.0, 1.2}) {
      const Vec2 p = gm + (f * prof.R(t)) * xi;
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
  }
  xmin -= 2 * h;
  ymin -= 2 * h;
  xmax += 2 * h;
  ymax += 2 * h;
  Polygon box({{xmin, ymin}, {xmax, ymin}, {xmax, ymax}, {xmin, ymax}});
  auto grid = std::make_shared<Grid>(build_grid(box, h));

  const int scan_n = 8 * samples;
  auto perp = [&](double t, const Vec2& p, double& r) {
    const Vec2 gm = prof.gamma(t);
    const Vec2 xi = normalized(prof.xi(t));
    r = dot(p - gm, xi);
    return dist(p, gm + r * xi);
  };

  ScalarField u(grid);
  for (int j = 0; j < grid->ny; ++j) {
    for (int i = 0; i < grid->nx; ++i) {
      if (!grid->inside(i, j)) continue;
      const Vec2 p = grid->node(i, j);
      // coarse scan of the perpendicular residual over t
      std::vector<double> ev(scan_n + 1), rv(scan_n + 1);
      int kbest = 0;
      for (int k = 0; k <= scan_n; ++k) {
        const double t = t0 + (t1 - t0) * k / scan_n;
        ev[k] = perp(t, p, rv[k]);
        if (ev[k] < ev[kbest]) kbest = k;
      }
      // fold detection: two separated near-zero minima over the leaf window
      std::vector<int> minima;
      for (int k = 1; k < scan_n; ++k)
        if (ev[k] <= ev[k - 1] && ev[k] <= ev[k + 1] && ev[k] < 0.25 * h && rv[k] > -2.0 * h &&
            rv[k] < 1.2 * fan.R_max)
          minima.push_back(k);
      if (!minima.empty() && minima.back() - minima.front() > scan_n / 20)
        throw GeometryError("synth_fan: chart fold (two (r,t) pairs map to one point)");
      // golden-section refinement of the best t
      double a = t0 + (t1 - t0) * std::max(0, kbest - 1) / scan_n;
      double b = t0 + (t1 - t0) * std::min(scan_n, kbest + 1) / scan_n;
      const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
      double c = b - gr * (b - a), d = a + gr * (b - a), rr;
      double fc = perp(c, p, rr), fd = perp(d, p, rr);
      for (int it = 0; it < 120 && b - a > 1e-15 * (t1 - t0); ++it) {
        if (fc < fd) {
          b = d;
          d = c;
          fd = fc;
          c = b - gr * (b - a);
          fc = perp(c, p, rr);
        } else {
          a = c;
          c = d;
          fc = fd;
          d = a + gr * (b - a);
          fd = perp(d, p, rr);
        }
      }
      double tstar = 0.5 * (a + b), rstar;
      perp(tstar, p, rstar);
      const double over = std::max(0.0, rstar - prof.R(tstar));
      u.at(i, j) = prof.b(tstar) + rstar * prof.m(tstar) + 1.5 * over * over;
    }
  }
  return {std::move(u), std::move(fan)};
}

bool fan_locate(const RayFan& fan, const Vec2& p, double& r, double& t) {
  const int K = static_cast<int>(fan.leaves.size());
  if (K == 0) return false;
  int kbest = 0;
  double ebest = std::numeric_limits<double>::infinity(), rbest = 0.0;
  for (int k = 0; k < K; ++k) {
    const Leaf& lf = fan.leaves[k];
    const double rk = dot(p - lf.foot, lf.direction);
    const double ek = dist(p, lf.foot + rk * lf.direction);
    if (ek < ebest) {
      ebest = ek;
      rbest = rk;
      kbest = k;
    }
  }
  // golden-section refinement across the neighbouring samples, interpolating
  // the foot and the (renormalized) direction linearly in t
  const int lo = std::max(0, kbest - 1), hi = std::min(K - 1, kbest + 1);
  auto perp = [&](double tt, double& rr) {
    int k = kbest;
    if (tt < fan.t[kbest] && kbest > 0) k = kbest - 1;
    if (tt > fan.t[kbest] && kbest < K - 1) k = kbest;
    k = std::min(k, K - 2);
    const double span = fan.t[k + 1] - fan.t[k];
    const double s = span > 0.0 ? std::clamp((tt - fan.t[k]) / span, 0.0, 1.0) : 0.0;
    const Leaf& a = fan.leaves[k];
    const Leaf& b = fan.leaves[k + 1];
    const Vec2 gm = (1.0 - s) * a.foot + s * b.foot;
    const Vec2 xi = normalized((1.0 - s) * a.direction + s * b.direction);
    rr = dot(p - gm, xi);
    return dist(p, gm + rr * xi);
  };
  double a = fan.t[lo], b = fan.t[hi];
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - gr * (b - a), d = a + gr * (b - a), rr;
  double fc = perp(c, rr), fd = perp(d, rr);
  for (int it = 0; it < 60 && b - a > 1e-14; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = perp(c, rr);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = perp(d, rr);
    }
  }
  t = 0.5 * (a + b);
  const double e = perp(t, r);
  (void)rbest;
  const double spacing =
      K >= 2 ? (fan.t.back() - fan.t.front()) / static_cast<double>(K - 1) : ebest + 1.0;
  return e <= 2.0 * spacing;
}

double fan_affine_value(const RayFan& fan, const Vec2& p) {
  double r, t;
  if (!fan_locate(fan, p, r, t)) return kNan;
  const int K = static_cast<int>(fan.leaves.size());
  int k = 0;
  while (k + 2 < K && fan.t[k + 1] <= t) ++k;
  const double span = fan.t[k + 1] - fan.t[k];
  const double s = span > 0.0 ? std::clamp((t - fan.t[k]) / span, 0.0, 1.0) : 0.0;
  const double b = (1.0 - s) * fan.leaves[k].b + s * fan.leaves[k + 1].b;
  const double m = (1.0 - s) * fan.leaves[k].m + s * fan.leaves[k + 1].m;
  return b + r * m;
}

}  // namespace screenfb
