#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "screenfb/field.hpp"
#include "screenfb/geometry.hpp"
#include "screenfb/rays.hpp"
#include "screenfb/regions.hpp"

namespace screenfb {

// The Laplacian formula needs |xi'| > 0; parallel rays make it inapplicable.
class DegenerateFan : public std::runtime_error {
 public:
  explicit DegenerateFan(const std::string& msg) : std::runtime_error(msg) {}
};

// Obstacle-solver iteration cap, with the best iterate and its residual.
class ObstacleMaxIters : public std::runtime_error {
 public:
  ObstacleMaxIters(const std::string& msg, ScalarField best_in, double residual_in)
      : std::runtime_error(msg), best(std::move(best_in)), residual(residual_in) {}
  ScalarField best;
  double residual;
};

// Rectangular (r,t) window of a fan chart: t along the boundary arc, r the
// distance along the leaves from the foot curve.
struct ChartWindow {
  double tmin = 0.0, tmax = 0.0;
  double rmin = 0.0, rmax = 0.0;  // rmax plays the role of the extended reach
};

// Default window of a fan: the full arc, r from the shortest leaf length out
// to R_max + max(4h, 0.1 R_max), shrunk until every point of the outer rim
// stays strictly inside the domain and away from the exclusion region.
ChartWindow default_window(const RayFan& fan, const RegionLabelField& labels,
                           const Polygon& polygon, double h);

// Rasterizes b(t) + r m(t) on the window nodes of `grid` by inverting the
// chart per node (nearest-leaf search, then a golden-section refinement with
// cubic interpolation of the leaf data across samples). Nodes outside the
// window keep NaN. Values extend affinely along the rays beyond r = R(t).
ScalarField minimal_convex_extension(const RayFan& fan, const ChartWindow& window,
                                     const std::shared_ptr<const Grid>& grid);

// Laplacian of the extension by the closed formula
//   3 - Lap(u1) = (3r - 2R(t)) / (r + cross(xi, gamma') / |xi'|),
// with the t-derivatives taken from the fan's smoothed differences and the
// sample data interpolated linearly at t.
double u1_laplacian_formula(const RayFan& fan, double r, double t);

struct ReductionReport {
  double min_v = 0.0;               // over the stored (clipped) gap
  double min_v_raw = 0.0;           // before clipping
  double max_abs_v_contact = 0.0;   // over bunching-labeled window nodes
  double min_lap_noncontact = 0.0;  // discrete Laplacian, 2h-eroded
  double c0_est = 0.0;              // 5th percentile of the same Laplacian
  bool reduction_failed = false;
};

struct GapSolution {
  ScalarField v;
  std::vector<unsigned char> contact;     // per node: v <= contact_tol
  std::vector<unsigned char> noncontact;  // per node: v > contact_tol
  std::vector<Vec2> free_boundary;        // subcell contour of v = contact_tol
  ReductionReport report;
  double contact_tol = 0.0;
  int iterations = 0;       // obstacle solver only
  double residual = 0.0;    // complementarity residual at exit
};

// v = u - u1 on the window, clipped below at -1e-9, with the contact
// partition and the numerical check of the reduction bullets: v >= 0,
// v = 0 on the bunching part of the window, and Lap v >= c0 > 0 on the
// noncontact part eroded by 2h. Violations set report.reduction_failed.
GapSolution build_gap(const ScalarField& u, const RegionLabelField& labels, const RayFan& fan,
                      const ChartWindow& window);

// Reference obstacle problem Lap v = f on {v > 0}, v >= 0, with Dirichlet
// data g on the boundary band of the domain.
struct ObstacleInstance {
  Polygon domain;
  double h = 0.0;
  std::function<double(Vec2)> f;  // rhs, must have a positive floor
  std::function<double(Vec2)> g;  // boundary data, >= 0
  double ob_tol = -1.0;           // complementarity tolerance; < 0 = 1e-8 * max |f|
  int max_iters = 200000;
  double omega = 1.8;             // PSOR relaxation factor
};

// Projected SOR (red-black, via the shared kernels) on the complementarity
// system v >= 0, Lap_h v <= f, v (f - Lap_h v) = 0.
GapSolution solve_obstacle(const ObstacleInstance& instance);

struct ContactPartition {
  std::vector<unsigned char> contact, noncontact;
  std::vector<Vec2> free_boundary;
};

// Node partition at v = contact_tol plus the subcell-interpolated contour
// points on lattice edges joining the two sides.
ContactPartition contact_partition(const ScalarField& v, double contact_tol);

// One comparison for the measure-stability experiment; all fields share a grid.
struct StabilityCase {
  const ScalarField* v1 = nullptr;
  const ScalarField* f1 = nullptr;
  const ScalarField* v2 = nullptr;
  const ScalarField* f2 = nullptr;
};

struct StabilityReport {
  std::vector<double> sym_diff;  // |contact(v1) xor contact(v2)| * h^2
  std::vector<double> rhs;       // ||f1-f2||_inf + sqrt(||v1-v2||_inf)
  double fitted_c = 0.0;         // least-squares slope through the origin
};

StabilityReport measure_stability_experiment(const std::vector<StabilityCase>& cases,
                                             double contact_tol);

}  // namespace screenfb
