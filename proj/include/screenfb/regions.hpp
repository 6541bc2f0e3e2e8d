#pragma once

#include <memory>
#include <vector>

#include "screenfb/field.hpp"
#include "screenfb/geometry.hpp"

namespace screenfb {

// Discrete Hessian by central second differences, with per-node eigenpairs.
// Entries are defined on nodes whose full 8-neighbour ring lies inside.
struct HessianField {
  std::shared_ptr<const Grid> grid;
  std::vector<double> uxx, uyy, uxy;
  std::vector<double> lam_min, lam_max;
  std::vector<double> vmin_x, vmin_y;  // unit eigenvector of lam_min
  std::vector<double> vmax_x, vmax_y;  // unit eigenvector of lam_max
  std::vector<unsigned char> defined;
};

enum class RegionLabel : unsigned char {
  Outside = 0,
  Boundary = 1,  // inside node too close to the rim for a Hessian test
  Exclusion = 2,   // u = 0 region
  Bunching = 3,    // remainder: rays / flat directions
  Customization = 4  // strictly convex region
};

struct RegionLabelField {
  std::shared_ptr<const Grid> grid;
  std::vector<RegionLabel> labels;
  double u_tol = 0.0;
  double lam_tol = 0.0;
  int count(RegionLabel l) const;
};

struct RegionDiagnostics {
  // |laplacian(u) - 3| samples over the customization region eroded by 3h.
  std::vector<double> lap_dev;
  double lap_dev_median = 0.0;
  bool lap_present = false;

  // Convexity defect of the exclusion region: inside nodes lying in the
  // convex hull of its nodes but not labelled with it, in cell units.
  double convexity_defect_cells = 0.0;
  bool exclusion_present = false;

  // min over boundary samples of (grad u - x) . n
  double min_boundary_distortion = 0.0;
  bool distortion_present = false;

  int n_exclusion = 0, n_bunching = 0, n_customization = 0, n_boundary = 0;
};

HessianField hessian_field(const ScalarField& u);

// Eigenpairs of the symmetric matrix [[a, b], [b, c]]; lmin <= lmax and the
// eigenvectors are unit and mutually orthogonal.
void symmetric_eigenpairs(double a, double b, double c, double& lmin, double& lmax, double& vmin_x,
                          double& vmin_y, double& vmax_x, double& vmax_y);

// Bilinear sample of the Hessian entries over the nodes where they are
// defined, with renormalized weights; false when p has no defined support.
bool sample_hessian(const HessianField& H, const Polygon& polygon, const Vec2& p, double& uxx,
                    double& uyy, double& uxy);

RegionLabelField segment_regions(const ScalarField& u, const HessianField& H, double u_tol,
                                 double lam_tol);

RegionDiagnostics region_diagnostics(const ScalarField& u, const RegionLabelField& labels,
                                     const Polygon& polygon, const BoundaryChart& chart);

}  // namespace screenfb
