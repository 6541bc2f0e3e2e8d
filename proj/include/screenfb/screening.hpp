#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "screenfb/field.hpp"
#include "screenfb/geometry.hpp"
#include "screenfb/kernels.hpp"

namespace screenfb {

class ProjectionStalled : public std::runtime_error {
 public:
  explicit ProjectionStalled(const std::string& msg) : std::runtime_error(msg) {}
};

// Direction stencil for the discrete convexity cone. Only the positive half is
// stored; the cone is symmetric under negation by construction.
struct ConvexityCone {
  std::vector<std::pair<int, int>> directions;

  static ConvexityCone standard8();  // (1,0),(0,1),(1,1),(1,-1) and negations
  static ConvexityCone wide16();     // adds (2,1),(1,2),(2,-1),(1,-2)
};

// Second-difference constraint rows u(x+he) + u(x-he) - 2u(x) >= 0, one per
// direction and admissible node. All three referenced nodes are inside.
struct ConeRows {
  std::vector<int> plus, minus, center;
  std::size_t size() const { return center.size(); }
};

ConeRows build_cone_rows(const Grid& grid, const ConvexityCone& cone);

// Discrete gradient sampled at edge midpoints (difference of the two edge
// endpoints), its stored transpose, and the quadrature weights. One row of
// dx/dy per weighted edge; the resulting Dirichlet energy is the standard
// compact 5-point one, so it has no odd/even sublattice null mode and the
// stationarity density of the profit is the compact Laplacian.
struct GradientOperator {
  std::shared_ptr<const Grid> grid;
  kernels::Csr dx, dy;    // edge rows over node columns
  kernels::Csr dxT, dyT;  // node rows over edge columns
  std::vector<double> wx, xq;  // per x-edge: quadrature weight, midpoint x
  std::vector<double> wy, yq;  // per y-edge: quadrature weight, midpoint y
  std::vector<double> w;       // per node: bilinear mass for the -int u term
  std::vector<double> xs, ys;  // node coordinates
  std::vector<unsigned char> mask;

  static GradientOperator build(std::shared_ptr<const Grid> grid);
};

double discrete_profit(const GradientOperator& op, const ScalarField& u);
ScalarField profit_gradient(const GradientOperator& op, const ScalarField& u);

// Nodal gradient samples for diagnostics: centered differences in the
// interior, one-sided first order at the mask edge, NaN where neither
// neighbour is inside.
std::pair<ScalarField, ScalarField> nodal_gradient(const ScalarField& u);

// Dykstra correction state; reusing it across calls warm-starts the cycles.
struct ProjectionWorkspace {
  std::vector<double> nonneg;
  std::vector<double> cone;
};

ScalarField project_feasible(const ScalarField& u, const ConeRows& rows,
                             double projection_tol = 1e-10, int max_proj_iters = 100000,
                             ProjectionWorkspace* ws = nullptr);

struct SolverConfig {
  double kkt_tol = 1e-4;  // threshold is kkt_tol * h^2
  double feas_tol = 1e-9;
  double projection_tol = 1e-10;
  int max_iters = 50000;
  int max_proj_iters = 5000000;
  int cone_directions = 8;  // 8 or 16
  bool cascade_init = true;  // coarse-to-fine initial guess
  bool ipm_init = true;      // interior-point warm start on the finest level
  unsigned seed = 0;
};

struct SolveReport {
  int iterations = 0;
  std::vector<double> objective_trace;
  double kkt_residual = 0.0;
  double feasibility_residual = 0.0;
  double wall_time = 0.0;
  bool converged = false;
};

// Thrown when the ascent loop hits its iteration cap; carries the best
// iterate and its residuals so callers can still inspect the run.
class MaxItersExceeded : public std::runtime_error {
 public:
  MaxItersExceeded(const std::string& msg, ScalarField best_in, SolveReport report_in)
      : std::runtime_error(msg), best(std::move(best_in)), report(std::move(report_in)) {}
  ScalarField best;
  SolveReport report;
};

std::pair<ScalarField, SolveReport> solve_monopolist(const Polygon& polygon, double h,
                                                     const SolverConfig& config = {});

// Direct high-accuracy solve of the same discrete concave QP on tiny grids
// (interior point on the explicit KKT system, with an active-set polish).
ScalarField brute_force_oracle(const Polygon& polygon, double h,
                               const ConvexityCone& cone = ConvexityCone::standard8());

// Multiplier estimates for the constraint blocks, indexed like the grid nodes
// and the cone rows respectively. They certify stationarity of a candidate
// solution through the standard KKT residual.
struct DualEstimate {
  std::vector<double> nonneg;
  std::vector<double> cone;
};

// Sparse interior-point solve of the discrete QP at any grid size; used as a
// warm start for the projected-ascent loop. Optionally reports the dual
// multipliers it converged to.
ScalarField monopolist_ipm(std::shared_ptr<const Grid> grid, const ConvexityCone& cone,
                           double tol = 1e-12, int max_iters = 100,
                           DualEstimate* dual = nullptr);

}  // namespace screenfb
