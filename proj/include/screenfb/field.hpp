#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "screenfb/geometry.hpp"

namespace screenfb {

// Grid function; values at nodes outside the mask are NaN and never read.
struct ScalarField {
  std::shared_ptr<const Grid> grid;
  std::vector<double> values;

  ScalarField() = default;
  explicit ScalarField(std::shared_ptr<const Grid> g)
      : grid(std::move(g)),
        values(static_cast<std::size_t>(grid->nx) * grid->ny,
               std::numeric_limits<double>::quiet_NaN()) {
    for (int j = 0; j < grid->ny; ++j)
      for (int i = 0; i < grid->nx; ++i)
        if (grid->inside(i, j)) values[grid->idx(i, j)] = 0.0;
  }

  double& at(int i, int j) { return values[grid->idx(i, j)]; }
  double at(int i, int j) const { return values[grid->idx(i, j)]; }

  template <class F>
  void fill(F&& f) {
    for (int j = 0; j < grid->ny; ++j)
      for (int i = 0; i < grid->nx; ++i)
        if (grid->inside(i, j)) at(i, j) = f(grid->node(i, j));
  }

  // Bilinear value at an arbitrary point of the closed domain.
  double sample(const Polygon& polygon, const Vec2& p) const {
    CellLocation loc = locate(*grid, polygon, p);
    const int ii[4] = {loc.i, loc.i + 1, loc.i, loc.i + 1};
    const int jj[4] = {loc.j, loc.j, loc.j + 1, loc.j + 1};
    double v = 0.0, wsum = 0.0;
    for (int k = 0; k < 4; ++k) {
      if (!grid->inside(ii[k], jj[k])) continue;
      v += loc.w[k] * at(ii[k], jj[k]);
      wsum += loc.w[k];
    }
    if (wsum <= 0.0) throw GeometryError("sample point has no inside support");
    return v / wsum;
  }

  double min_inside() const {
    double m = std::numeric_limits<double>::infinity();
    for (int j = 0; j < grid->ny; ++j)
      for (int i = 0; i < grid->nx; ++i)
        if (grid->inside(i, j)) m = std::min(m, at(i, j));
    return m;
  }

  double max_abs_inside() const {
    double m = 0.0;
    for (int j = 0; j < grid->ny; ++j)
      for (int i = 0; i < grid->nx; ++i)
        if (grid->inside(i, j)) m = std::max(m, std::fabs(at(i, j)));
    return m;
  }
};

}  // namespace screenfb
