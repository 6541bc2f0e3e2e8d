#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace screenfb {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2() = default;
  Vec2(double x_, double y_) : x(x_), y(y_) {}

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2 operator-() const { return {-x, -y}; }
};

inline Vec2 operator*(double s, const Vec2& v) { return v * s; }
inline double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
inline double cross(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }
double norm(const Vec2& v);
double dist(const Vec2& a, const Vec2& b);
Vec2 normalized(const Vec2& v);

class GeometryError : public std::runtime_error {
 public:
  explicit GeometryError(const std::string& msg) : std::runtime_error(msg) {}
};

// Convex polygonal domain, vertices counterclockwise.
struct Polygon {
  std::vector<Vec2> vertices;
  double corner_angle_threshold = 1e-3;

  Polygon(std::vector<Vec2> verts, double corner_threshold = 1e-3);

  std::size_t size() const { return vertices.size(); }
  double shortest_edge() const;
  double perimeter() const;
  // Closed-domain convention: points on the boundary count as inside.
  bool contains(const Vec2& p, double tol = 1e-12) const;
  // Signed distance to the boundary, negative inside.
  double signed_distance(const Vec2& p) const;
};

Polygon make_square(double a, double side = 1.0);

struct Grid {
  Vec2 origin;
  double h = 0.0;
  int nx = 0;
  int ny = 0;
  std::vector<char> inside_mask;  // row-major, index j*nx+i

  int idx(int i, int j) const { return j * nx + i; }
  bool inside(int i, int j) const {
    return i >= 0 && i < nx && j >= 0 && j < ny && inside_mask[idx(i, j)] != 0;
  }
  Vec2 node(int i, int j) const { return {origin.x + i * h, origin.y + j * h}; }
  int count_inside() const;
  // True when the node and its full 8-neighbour ring are inside.
  bool has_interior_ring(int i, int j) const;
};

struct BoundaryChart {
  std::vector<Vec2> samples;
  std::vector<Vec2> normals;     // unit outward
  std::vector<char> is_corner;
  std::vector<double> arclength;  // cumulative, arclength[0] == 0
  double total_length = 0.0;
};

struct CellLocation {
  int i = 0, j = 0;        // lower-left node of the cell
  double w[4] = {0, 0, 0, 0};  // bilinear weights: (i,j),(i+1,j),(i,j+1),(i+1,j+1)
};

Grid build_grid(const Polygon& polygon, double h);
BoundaryChart boundary_chart(const Polygon& polygon, double spacing);
CellLocation locate(const Grid& grid, const Polygon& polygon, const Vec2& p);

}  // namespace screenfb
