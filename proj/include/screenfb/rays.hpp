#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "screenfb/field.hpp"
#include "screenfb/geometry.hpp"
#include "screenfb/regions.hpp"

namespace screenfb {

class NotInBunching : public std::runtime_error {
 public:
  explicit NotInBunching(const std::string& msg) : std::runtime_error(msg) {}
};

// Tameness rejection; identifies the offending boundary sample and which
// condition failed ("corner", "distortion", "not_adjacent",
// "endpoint_on_boundary", "foot_is_corner", "orientation", "crossing").
class NotTame : public std::runtime_error {
 public:
  NotTame(int sample_in, std::string reason_in)
      : std::runtime_error("build_tame_fan: sample " + std::to_string(sample_in) + ": " +
                           reason_in),
        sample(sample_in),
        reason(std::move(reason_in)) {}
  int sample;
  std::string reason;
};

// One segment of the bunching region: the function is affine along it.
struct Leaf {
  Vec2 foot;                    // boundary point gamma
  Vec2 direction;               // unit xi, pointing into the domain
  double length = 0.0;          // R
  double b = 0.0, m = 0.0;      // value at the foot / slope along xi
  double affine_dev = 0.0;      // max |u - (b + r m)| over the march
  double band_bias = 0.0;       // median in-band lambda_min (<= 0); large
                                // magnitude means the null direction is not
                                // resolved by the grid along this leaf
  bool endpoint_on_boundary = false;  // far endpoint within h of the rim
  bool foot_is_corner = false;
  bool foot_on_boundary = true;       // false when no march direction exits
  bool direction_ambiguous = false;   // both Hessian eigenvalues below tol
};

struct RayFan {
  std::vector<double> t;          // arc-length parameter, increasing
  std::vector<Leaf> leaves;
  std::vector<double> distortion;  // d_k = (grad u(gamma) - gamma) . n
  double r0 = 0.0;                 // min leaf length
  double eta0 = 0.0;               // min distortion
  double R_max = 0.0;              // max leaf length
};

struct FanIdentityReport {
  std::vector<double> residual;  // per-sample relative residual of the
                                 // length identity R^2 |xi'| = 2 |gamma'| d
  double median_residual = 0.0;
  double min_separation = 0.0;   // min pairwise leaf distance within r <= R_max
  double min_orientation = 0.0;  // min cross(xi, gamma')
};

// Marches from `start` along the null-eigenvector field of H until the
// boundary or the strictly convex region is reached (step h/2, crossing
// refined to h/8 by bisection), then fits the affine data by least squares.
// `hint`, when nonzero, orients the march: the foot is searched against it.
Leaf trace_leaf(const ScalarField& u, const HessianField& H, const RegionLabelField& labels,
                const Polygon& polygon, Vec2 start, Vec2 hint = {0.0, 0.0});

// Traces one leaf per boundary sample of chart indices [arc_begin, arc_end]
// and checks the tameness conditions; t is oriented so cross(xi, gamma') > 0.
RayFan build_tame_fan(const ScalarField& u, const HessianField& H, const RegionLabelField& labels,
                      const Polygon& polygon, const BoundaryChart& chart, int arc_begin,
                      int arc_end);

// Longest contiguous chart range passing the per-sample tameness tests:
// non-corner, positive boundary distortion, adjacent to the bunching region,
// and a traced leaf with positive length whose far endpoint stays interior.
std::pair<int, int> largest_tame_arc(const ScalarField& u, const HessianField& H,
                                     const RegionLabelField& labels, const Polygon& polygon,
                                     const BoundaryChart& chart);

// Per-sample t-derivatives of the foot curve and the leaf direction, taken
// by centered differences after a 5-point smoothing window (one-sided at the
// arc ends).
struct FanDerivatives {
  std::vector<Vec2> gamma_dot, xi_dot;
};
FanDerivatives fan_derivatives(const RayFan& fan);

// Residuals of the ray-length identity R^2 |xi'| - 2 |gamma'| d with the
// t-derivatives taken by centered differences after 5-point smoothing, plus
// the chart injectivity diagnostics.
FanIdentityReport fan_identities(const RayFan& fan);

// Analytic fan description for the synthetic generator.
struct FanProfile {
  std::function<Vec2(double)> gamma;   // foot curve, arc-length parameter
  std::function<Vec2(double)> xi;      // unit leaf direction, into the fan
  std::function<double(double)> R, b, m;
};

// Rasterizes u(x(r,t)) = b(t) + r m(t) (plus a strictly convex cap beyond
// r = R(t), so leaf-length detection has a crossing to find) on a grid
// covering the fan, and returns the exact fan. Throws GeometryError when the
// chart folds (two (r,t) pairs map within h/4 of one point).
std::pair<ScalarField, RayFan> synth_fan(const FanProfile& prof, double t0, double t1,
                                         int samples, double h);

// Approximate chart inversion on a discrete fan: nearest leaf segment with
// parabolic refinement across neighbours. Returns false outside the fan.
bool fan_locate(const RayFan& fan, const Vec2& p, double& r, double& t);

// b(t) + r m(t) through fan_locate; NaN outside the fan window.
double fan_affine_value(const RayFan& fan, const Vec2& p);

}  // namespace screenfb
