#include "screenfb/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace screenfb {

double norm(const Vec2& v) { return std::hypot(v.x, v.y); }
double dist(const Vec2& a, const Vec2& b) { return norm(a - b); }

Vec2 normalized(const Vec2& v) {
  double n = norm(v);
  if (n == 0.0) throw GeometryError("cannot normalize zero vector");
  return {v.x / n, v.y / n};
}

Polygon::Polygon(std::vector<Vec2> verts, double corner_threshold)
    : vertices(std::move(verts)), corner_angle_threshold(corner_threshold) {
  const std::size_t n = vertices.size();
  if (n < 3) throw GeometryError("polygon needs at least 3 vertices");
  for (std::size_t k = 0; k < n; ++k) {
    const Vec2& a = vertices[k];
    const Vec2& b = vertices[(k + 1) % n];
    if (dist(a, b) <= 1e-12)
      throw GeometryError("degenerate polygon: consecutive vertices coincide at index " +
                          std::to_string(k));
  }
  for (std::size_t k = 0; k < n; ++k) {
    const Vec2 e1 = vertices[(k + 1) % n] - vertices[k];
    const Vec2 e2 = vertices[(k + 2) % n] - vertices[(k + 1) % n];
    if (cross(e1, e2) <= 0.0)
      throw GeometryError("polygon not strictly convex counterclockwise at vertex " +
                          std::to_string((k + 1) % n));
  }
}

double Polygon::shortest_edge() const {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < vertices.size(); ++k)
    best = std::min(best, dist(vertices[k], vertices[(k + 1) % vertices.size()]));
  return best;
}

double Polygon::perimeter() const {
  double total = 0.0;
  for (std::size_t k = 0; k < vertices.size(); ++k)
    total += dist(vertices[k], vertices[(k + 1) % vertices.size()]);
  return total;
}

bool Polygon::contains(const Vec2& p, double tol) const {
  for (std::size_t k = 0; k < vertices.size(); ++k) {
    const Vec2& a = vertices[k];
    const Vec2& b = vertices[(k + 1) % vertices.size()];
    const Vec2 e = b - a;
    // Left of every edge (with tolerance) for a CCW convex polygon.
    if (cross(e, p - a) < -tol * norm(e)) return false;
  }
  return true;
}

double Polygon::signed_distance(const Vec2& p) const {
  double sd = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < vertices.size(); ++k) {
    const Vec2& a = vertices[k];
    const Vec2& b = vertices[(k + 1) % vertices.size()];
    const Vec2 e = normalized(b - a);
    sd = std::max(sd, -cross(e, p - a));
  }
  return sd;
}

Polygon make_square(double a, double side) {
  return Polygon({{a, a}, {a + side, a}, {a + side, a + side}, {a, a + side}});
}

int Grid::count_inside() const {
  int c = 0;
  for (char m : inside_mask) c += (m != 0);
  return c;
}

bool Grid::has_interior_ring(int i, int j) const {
  for (int dj = -1; dj <= 1; ++dj)
    for (int di = -1; di <= 1; ++di)
      if (!inside(i + di, j + dj)) return false;
  return true;
}

Grid build_grid(const Polygon& polygon, double h) {
  if (h <= 0.0) throw GeometryError("grid spacing must be positive");
  if (h > 0.5 * polygon.shortest_edge())
    throw GeometryError("grid spacing too large for shortest polygon edge");

  double xmin = std::numeric_limits<double>::infinity(), ymin = xmin;
  double xmax = -xmin, ymax = -xmin;
  for (const Vec2& v : polygon.vertices) {
    xmin = std::min(xmin, v.x);
    xmax = std::max(xmax, v.x);
    ymin = std::min(ymin, v.y);
    ymax = std::max(ymax, v.y);
  }
  Grid g;
  g.origin = {xmin, ymin};
  g.h = h;
  g.nx = static_cast<int>(std::round((xmax - xmin) / h)) + 1;
  g.ny = static_cast<int>(std::round((ymax - ymin) / h)) + 1;
  if (g.nx < 3 || g.ny < 3) throw GeometryError("grid spacing yields fewer than 3 nodes per axis");
  g.inside_mask.assign(static_cast<std::size_t>(g.nx) * g.ny, 0);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i)
      g.inside_mask[g.idx(i, j)] = polygon.contains(g.node(i, j), 1e-9 * h) ? 1 : 0;
  return g;
}

BoundaryChart boundary_chart(const Polygon& polygon, double spacing) {
  if (spacing <= 0.0) throw GeometryError("boundary sampling spacing must be positive");
  if (spacing > polygon.shortest_edge() / 4.0 + 1e-15)
    throw GeometryError("boundary sampling spacing must be at most shortest edge / 4");

  BoundaryChart chart;
  const std::size_t n = polygon.size();
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const Vec2& a = polygon.vertices[k];
    const Vec2& b = polygon.vertices[(k + 1) % n];
    const double len = dist(a, b);
    const Vec2 tang = normalized(b - a);
    const Vec2 nrm = {tang.y, -tang.x};  // outward for CCW orientation
    const Vec2 tang_prev = normalized(a - polygon.vertices[(k + n - 1) % n]);
    const Vec2 nrm_prev = {tang_prev.y, -tang_prev.x};
    const double turn = std::atan2(cross(tang_prev, tang), dot(tang_prev, tang));
    const int m = std::max(1, static_cast<int>(std::ceil(len / spacing)));
    for (int q = 0; q < m; ++q) {
      const double r = len * q / m;
      chart.samples.push_back(a + r * tang);
      // The vertex sample gets the averaged normal of its two edges.
      chart.normals.push_back(q == 0 ? normalized(nrm + nrm_prev) : nrm);
      chart.is_corner.push_back(q == 0 && std::fabs(turn) > polygon.corner_angle_threshold ? 1
                                                                                           : 0);
      chart.arclength.push_back(s + r);
    }
    s += len;
  }
  chart.total_length = s;
  return chart;
}

CellLocation locate(const Grid& grid, const Polygon& polygon, const Vec2& p) {
  if (!polygon.contains(p, 1e-9 * grid.h)) throw GeometryError("point outside polygon");
  CellLocation loc;
  double fx = (p.x - grid.origin.x) / grid.h;
  double fy = (p.y - grid.origin.y) / grid.h;
  loc.i = std::clamp(static_cast<int>(std::floor(fx)), 0, grid.nx - 2);
  loc.j = std::clamp(static_cast<int>(std::floor(fy)), 0, grid.ny - 2);
  const double ax = fx - loc.i;
  const double ay = fy - loc.j;
  loc.w[0] = (1 - ax) * (1 - ay);
  loc.w[1] = ax * (1 - ay);
  loc.w[2] = (1 - ax) * ay;
  loc.w[3] = ax * ay;
  return loc;
}

}  // namespace screenfb
