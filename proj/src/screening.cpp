#include "screenfb/screening.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace screenfb {

ConvexityCone ConvexityCone::standard8() {
  return ConvexityCone{{{1, 0}, {0, 1}, {1, 1}, {1, -1}}};
}

ConvexityCone ConvexityCone::wide16() {
  return ConvexityCone{{{1, 0}, {0, 1}, {1, 1}, {1, -1}, {2, 1}, {1, 2}, {2, -1}, {1, -2}}};
}

ConeRows build_cone_rows(const Grid& grid, const ConvexityCone& cone) {
  ConeRows rows;
  for (const auto& [ex, ey] : cone.directions) {
    for (int j = 0; j < grid.ny; ++j) {
      for (int i = 0; i < grid.nx; ++i) {
        if (!grid.inside(i, j) || !grid.inside(i + ex, j + ey) || !grid.inside(i - ex, j - ey))
          continue;
        rows.plus.push_back(grid.idx(i + ex, j + ey));
        rows.minus.push_back(grid.idx(i - ex, j - ey));
        rows.center.push_back(grid.idx(i, j));
      }
    }
  }
  return rows;
}

namespace {

struct Triplets {
  std::vector<int> row, col;
  std::vector<double> val;
  void add(int r, int c, double v) {
    row.push_back(r);
    col.push_back(c);
    val.push_back(v);
  }
};

kernels::Csr to_csr(const Triplets& t, int rows) {
  kernels::Csr m;
  m.rows = rows;
  m.ptr.assign(rows + 1, 0);
  for (int r : t.row) ++m.ptr[r + 1];
  for (int r = 0; r < rows; ++r) m.ptr[r + 1] += m.ptr[r];
  m.col.resize(t.row.size());
  m.val.resize(t.row.size());
  std::vector<int> fill(m.ptr.begin(), m.ptr.end() - 1);
  for (std::size_t k = 0; k < t.row.size(); ++k) {
    const int pos = fill[t.row[k]]++;
    m.col[pos] = t.col[k];
    m.val[pos] = t.val[k];
  }
  return m;
}

kernels::Csr transpose_of(const Triplets& t, int rows) {
  Triplets tt;
  tt.row = t.col;
  tt.col = t.row;
  tt.val = t.val;
  return to_csr(tt, rows);
}

}  // namespace

GradientOperator GradientOperator::build(std::shared_ptr<const Grid> grid_in) {
  GradientOperator op;
  op.grid = std::move(grid_in);
  const Grid& g = *op.grid;
  const int n = g.nx * g.ny;
  op.w.assign(n, 0.0);
  op.xs.assign(n, 0.0);
  op.ys.assign(n, 0.0);
  op.mask.assign(n, 0);

  const double h = g.h;
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const int id = g.idx(i, j);
      const Vec2 p = g.node(i, j);
      op.xs[id] = p.x;
      op.ys[id] = p.y;
      if (g.inside(i, j)) op.mask[id] = 1;
    }
  }

  // Cell (i, j) spans nodes i..i+1, j..j+1; only fully-inside cells carry
  // quadrature weight, each spreading h^2/2 over its two parallel edges.
  auto cell_in = [&](int i, int j) {
    return i >= 0 && j >= 0 && i + 1 < g.nx && j + 1 < g.ny && g.inside(i, j) &&
           g.inside(i + 1, j) && g.inside(i, j + 1) && g.inside(i + 1, j + 1);
  };
  const double half = h * h / 2.0;
  Triplets tx, ty;
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i + 1 < g.nx; ++i) {  // x-edge (i,j)-(i+1,j)
      double wgt = (cell_in(i, j - 1) ? half : 0.0) + (cell_in(i, j) ? half : 0.0);
      if (wgt == 0.0) continue;
      const int r = static_cast<int>(op.wx.size());
      tx.add(r, g.idx(i + 1, j), 1.0 / h);
      tx.add(r, g.idx(i, j), -1.0 / h);
      op.wx.push_back(wgt);
      op.xq.push_back(g.node(i, j).x + 0.5 * h);
    }
  }
  for (int j = 0; j + 1 < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {  // y-edge (i,j)-(i,j+1)
      double wgt = (cell_in(i - 1, j) ? half : 0.0) + (cell_in(i, j) ? half : 0.0);
      if (wgt == 0.0) continue;
      const int r = static_cast<int>(op.wy.size());
      ty.add(r, g.idx(i, j + 1), 1.0 / h);
      ty.add(r, g.idx(i, j), -1.0 / h);
      op.wy.push_back(wgt);
      op.yq.push_back(g.node(i, j).y + 0.5 * h);
    }
  }
  op.dx = to_csr(tx, static_cast<int>(op.wx.size()));
  op.dy = to_csr(ty, static_cast<int>(op.wy.size()));
  op.dxT = transpose_of(tx, n);
  op.dyT = transpose_of(ty, n);

  // Bilinear mass: each fully-inside cell contributes h^2/4 to its 4 corners.
  const double quarter = h * h / 4.0;
  for (int j = 0; j + 1 < g.ny; ++j) {
    for (int i = 0; i + 1 < g.nx; ++i) {
      if (cell_in(i, j)) {
        op.w[g.idx(i, j)] += quarter;
        op.w[g.idx(i + 1, j)] += quarter;
        op.w[g.idx(i, j + 1)] += quarter;
        op.w[g.idx(i + 1, j + 1)] += quarter;
      }
    }
  }
  return op;
}

namespace {

// u values with NaN replaced by zero off-mask, so CSR rows stay clean.
std::vector<double> clean_values(const GradientOperator& op, const ScalarField& u) {
  std::vector<double> v(u.values.size(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i)
    if (op.mask[i]) v[i] = u.values[i];
  return v;
}

}  // namespace

double discrete_profit(const GradientOperator& op, const ScalarField& u) {
  const std::size_t n = op.mask.size();
  const std::size_t mx = op.wx.size(), my = op.wy.size();
  std::vector<double> uv = clean_values(op, u);
  std::vector<double> gx(mx), gy(my), termx(mx), termy(my), termu(n);
  kernels::csr_apply(op.dx, uv.data(), gx.data());
  kernels::csr_apply(op.dy, uv.data(), gy.data());
  kernels::quad_terms(gx.data(), op.wx.data(), op.xq.data(), mx, termx.data());
  kernels::quad_terms(gy.data(), op.wy.data(), op.yq.data(), my, termy.data());
  kernels::mass_terms(uv.data(), op.w.data(), op.mask.data(), n, termu.data());
  return kernels::pairwise_sum(termx.data(), mx) + kernels::pairwise_sum(termy.data(), my) +
         kernels::pairwise_sum(termu.data(), n);
}

ScalarField profit_gradient(const GradientOperator& op, const ScalarField& u) {
  const std::size_t n = op.mask.size();
  const std::size_t mx = op.wx.size(), my = op.wy.size();
  std::vector<double> uv = clean_values(op, u);
  std::vector<double> gx(mx), gy(my), ax(n), ay(n);
  kernels::csr_apply(op.dx, uv.data(), gx.data());
  kernels::csr_apply(op.dy, uv.data(), gy.data());
  for (std::size_t r = 0; r < mx; ++r) gx[r] = op.wx[r] * (op.xq[r] - gx[r]);
  for (std::size_t r = 0; r < my; ++r) gy[r] = op.wy[r] * (op.yq[r] - gy[r]);
  kernels::csr_apply(op.dxT, gx.data(), ax.data());
  kernels::csr_apply(op.dyT, gy.data(), ay.data());
  ScalarField g(op.grid);
  for (std::size_t i = 0; i < n; ++i)
    if (op.mask[i]) g.values[i] = ax[i] + ay[i] - op.w[i];
  return g;
}

std::pair<ScalarField, ScalarField> nodal_gradient(const ScalarField& u) {
  const Grid& g = *u.grid;
  const double h = g.h;
  // One axis of the stencil: centered where possible, else second-order
  // one-sided (first-order when only one neighbour exists).
  auto diff = [&](int i, int j, int ei, int ej) {
    auto in = [&](int s) { return g.inside(i + s * ei, j + s * ej); };
    auto at = [&](int s) { return u.at(i + s * ei, j + s * ej); };
    if (in(1) && in(-1)) return (at(1) - at(-1)) / (2.0 * h);
    if (in(1)) {
      if (in(2)) return (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h);
      return (at(1) - at(0)) / h;
    }
    if (in(-1)) {
      if (in(-2)) return (3.0 * at(0) - 4.0 * at(-1) + at(-2)) / (2.0 * h);
      return (at(0) - at(-1)) / h;
    }
    return std::numeric_limits<double>::quiet_NaN();
  };
  ScalarField gx(u.grid), gy(u.grid);
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      if (!g.inside(i, j)) continue;
      gx.at(i, j) = diff(i, j, 1, 0);
      gy.at(i, j) = diff(i, j, 0, 1);
    }
  }
  return {std::move(gx), std::move(gy)};
}

namespace detail {
long long g_dykstra_cycles = 0;  // cumulative, for benchmarks and tuning
}

ScalarField project_feasible(const ScalarField& u, const ConeRows& rows, double projection_tol,
                             int max_proj_iters, ProjectionWorkspace* ws) {
  ScalarField z = u;
  const std::size_t n = z.values.size();
  const std::size_t m = rows.size();
  ProjectionWorkspace local;
  if (!ws) ws = &local;
  const bool warm = ws->nonneg.size() == n && ws->cone.size() == m;
  if (!warm) {
    ws->nonneg.assign(n, 0.0);
    ws->cone.assign(m, 0.0);
  }

  std::vector<double>& v = z.values;
  if (warm) {
    // For halfspaces, Dykstra is Hildreth's dual coordinate ascent, so the
    // previous multipliers remain a valid starting point for a new input as
    // long as the primal state is kept consistent: re-apply the stored
    // corrections to the new point before cycling.
    for (std::size_t i = 0; i < n; ++i)
      if (!std::isnan(v[i])) v[i] -= ws->nonneg[i];
    for (std::size_t c = 0; c < m; ++c) {
      const double d = ws->cone[c];
      v[rows.plus[c]] -= d;
      v[rows.minus[c]] -= d;
      v[rows.center[c]] += 2 * d;
    }
  }
  for (int cycle = 0; cycle < max_proj_iters; ++cycle) {
    double max_change = 0.0;
    // Nonnegativity block (separable).
    for (std::size_t i = 0; i < n; ++i) {
      if (std::isnan(v[i])) continue;
      const double y = v[i] + ws->nonneg[i];
      const double nv = std::max(0.0, y);
      ws->nonneg[i] = y - nv;
      max_change = std::max(max_change, std::fabs(nv - v[i]));
      v[i] = nv;
    }
    // One halfspace per cone row; correction stays along the row normal
    // (1,1,-2)/sqrt(6), stored as a scalar.
    for (std::size_t c = 0; c < m; ++c) {
      const int ip = rows.plus[c], im = rows.minus[c], i0 = rows.center[c];
      const double a = ws->cone[c];
      const double yp = v[ip] + a, ym = v[im] + a, y0 = v[i0] - 2 * a;
      const double beta = yp + ym - 2 * y0;
      double d = beta < 0 ? beta / 6.0 : 0.0;
      const double np = yp - d, nm = ym - d, n0 = y0 + 2 * d;
      ws->cone[c] = d;
      max_change = std::max({max_change, std::fabs(np - v[ip]), std::fabs(nm - v[im]),
                             std::fabs(n0 - v[i0])});
      v[ip] = np;
      v[im] = nm;
      v[i0] = n0;
    }
    ++detail::g_dykstra_cycles;
    if (max_change <= projection_tol) return z;
  }
  throw ProjectionStalled("Dykstra projection did not converge within max_proj_iters");
}

namespace {

double feasibility_residual_of(const ScalarField& u, const ConeRows& rows) {
  double r = std::max(0.0, -u.min_inside());
  for (std::size_t c = 0; c < rows.size(); ++c) {
    const double row =
        u.values[rows.plus[c]] + u.values[rows.minus[c]] - 2.0 * u.values[rows.center[c]];
    r = std::max(r, -row);
  }
  return r;
}

// Prolongate a coarse solve onto a finer grid by bilinear sampling.
ScalarField prolongate(const ScalarField& coarse, const Polygon& polygon,
                       std::shared_ptr<const Grid> fine) {
  ScalarField out(fine);
  for (int j = 0; j < fine->ny; ++j) {
    for (int i = 0; i < fine->nx; ++i) {
      if (!fine->inside(i, j)) continue;
      Vec2 p = fine->node(i, j);
      // Clamp to the coarse bounding box to dodge roundoff at the rim.
      try {
        out.at(i, j) = std::max(0.0, coarse.sample(polygon, p));
      } catch (const GeometryError&) {
        out.at(i, j) = 0.0;
      }
    }
  }
  return out;
}

std::pair<ScalarField, SolveReport> solve_on_grid(const Polygon& polygon,
                                                  std::shared_ptr<const Grid> grid,
                                                  ScalarField u, const SolverConfig& config,
                                                  const DualEstimate* dual = nullptr) {
  const auto t_start = std::chrono::steady_clock::now();
  GradientOperator op = GradientOperator::build(grid);
  const ConvexityCone cone =
      config.cone_directions >= 16 ? ConvexityCone::wide16() : ConvexityCone::standard8();
  const ConeRows rows = build_cone_rows(*grid, cone);

  ProjectionWorkspace pws;
  u = project_feasible(u, rows, config.projection_tol, config.max_proj_iters, &pws);
  double obj = discrete_profit(op, u);

  SolveReport rep;
  rep.objective_trace.push_back(obj);
  // Stationarity is measured by the length of the projected gradient step the
  // iteration actually takes, ||P(y + s g) - y|| / s, the standard stopping
  // rule for projected gradient methods. It needs no extra projection.
  const double kkt_threshold = config.kkt_tol * grid->h * grid->h;

  // Lipschitz constant of the profit gradient via power iteration on
  // Q = Dx^T W Dx + Dy^T W Dy; 1/L steps are ascent steps regardless of the
  // line search, which saves the iteration when objective changes drop to
  // roundoff near the optimum.
  const std::size_t nn = op.mask.size();
  const std::size_t mx = op.wx.size(), my = op.wy.size();
  double lip = 0.0;
  {
    std::vector<double> v(nn, 0.0), t1(std::max(mx, my)), t2(nn);
    for (std::size_t i = 0; i < nn; ++i)
      if (op.mask[i]) v[i] = 1.0 + 0.001 * static_cast<double>(i % 17);
    for (int pit = 0; pit < 60; ++pit) {
      kernels::csr_apply(op.dx, v.data(), t1.data());
      for (std::size_t r = 0; r < mx; ++r) t1[r] *= op.wx[r];
      kernels::csr_apply(op.dxT, t1.data(), t2.data());
      kernels::csr_apply(op.dy, v.data(), t1.data());
      for (std::size_t r = 0; r < my; ++r) t1[r] *= op.wy[r];
      std::vector<double> t3(nn);
      kernels::csr_apply(op.dyT, t1.data(), t3.data());
      double nrm = 0.0;
      for (std::size_t i = 0; i < nn; ++i) {
        t2[i] = op.mask[i] ? t2[i] + t3[i] : 0.0;
        nrm += t2[i] * t2[i];
      }
      nrm = std::sqrt(nrm);
      if (nrm == 0.0) break;
      lip = nrm;  // v is unit, so ||Qv|| estimates the top eigenvalue
      for (std::size_t i = 0; i < nn; ++i) v[i] = t2[i] / nrm;
    }
    lip = std::max(lip, 1e-12);
  }
  // Margin for the power-iteration underestimate of the top eigenvalue; the
  // descent guarantee needs step <= 1/L.
  const double safe_step = 0.9 / lip;

  // Monotone accelerated projected ascent with fixed 1/L steps and function
  // restart. Steps are accepted within roundoff slack so the iteration keeps
  // polishing stationarity after objective improvements fall below machine
  // precision; the reported trace stays nondecreasing.
  double proj_tol = config.projection_tol;
  auto ascent_point = [&](const ScalarField& from, const ScalarField& g) {
    ScalarField cand = from;
    for (std::size_t i = 0; i < cand.values.size(); ++i)
      if (op.mask[i]) cand.values[i] += safe_step * g.values[i];
    return project_feasible(cand, rows, proj_tol, config.max_proj_iters, &pws);
  };

  // Stationarity certificate from dual multipliers, when available: the KKT
  // residual max(||g + A^T lambda||_inf, complementarity, infeasibility) with
  // lambda held fixed. Near the optimum this is immune to the constraint
  // geometry amplification that floors the projected-step measure.
  auto multiplier_residual = [&](const ScalarField& at, const ScalarField& g) {
    if (!dual) return std::numeric_limits<double>::infinity();
    const std::size_t nv = at.values.size();
    std::vector<double> r(nv, 0.0);
    double comp = 0.0;
    for (std::size_t i = 0; i < nv; ++i)
      if (op.mask[i]) {
        r[i] = g.values[i] + dual->nonneg[i];
        comp = std::max(comp, dual->nonneg[i] * std::fabs(at.values[i]));
      }
    for (std::size_t c = 0; c < rows.size(); ++c) {
      const double lc = dual->cone[c];
      r[rows.plus[c]] += lc;
      r[rows.minus[c]] += lc;
      r[rows.center[c]] -= 2.0 * lc;
      const double row = at.values[rows.plus[c]] + at.values[rows.minus[c]] -
                         2.0 * at.values[rows.center[c]];
      comp = std::max(comp, lc * std::fabs(row));
    }
    double stat = 0.0;
    for (std::size_t i = 0; i < nv; ++i)
      if (op.mask[i]) stat = std::max(stat, std::fabs(r[i]));
    return std::max({stat, comp, feasibility_residual_of(at, rows)});
  };

  double kkt = std::numeric_limits<double>::infinity();
  double best_kkt = kkt;
  int best_kkt_iter = 0;
  ScalarField y = u, u_prev = u;
  double t_momentum = 1.0;
  double trace_val = obj;

  // The warm start may already satisfy the stopping rule; certify it before
  // spending any ascent iterations.
  if (dual) {
    kkt = multiplier_residual(u, profit_gradient(op, u));
    if (kkt <= kkt_threshold) rep.converged = true;
  }

  for (int it = 0; !rep.converged && it < config.max_iters; ++it) {
    ScalarField g = profit_gradient(op, y);
    ScalarField z = ascent_point(y, g);
    const double obj_z = discrete_profit(op, z);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_momentum * t_momentum));
    const double slack = 1e-13 * (1.0 + std::fabs(obj));

    u_prev = u;
    if (obj_z >= obj - slack) {
      double step_len = 0.0;
      for (std::size_t i = 0; i < z.values.size(); ++i)
        if (op.mask[i]) step_len = std::max(step_len, std::fabs(z.values[i] - y.values[i]));
      kkt = step_len / safe_step;
      u = z;
      obj = obj_z;
      if (kkt > kkt_threshold)
        kkt = std::min(kkt, multiplier_residual(u, profit_gradient(op, u)));
      for (std::size_t i = 0; i < y.values.size(); ++i)
        if (op.mask[i])
          y.values[i] = u.values[i] + ((t_momentum - 1.0) / t_next) * (u.values[i] - u_prev.values[i]);
      t_momentum = t_next;
    } else if (t_momentum > 1.0) {
      // restart: momentum overshot
      y = u;
      t_momentum = 1.0;
    } else {
      // A plain 1/L step from u itself failed to improve even within the
      // slack: the step is dominated by projection inexactness. Measure
      // stationarity, then tighten the inner tolerance and retry; stop only
      // once the tolerance floor is reached.
      double step_len = 0.0;
      for (std::size_t i = 0; i < z.values.size(); ++i)
        if (op.mask[i]) step_len = std::max(step_len, std::fabs(z.values[i] - u.values[i]));
      kkt = step_len / safe_step;
      if (kkt > kkt_threshold) kkt = std::min(kkt, multiplier_residual(u, g));
      if (kkt > kkt_threshold && proj_tol > 1e-14) {
        proj_tol *= 0.1;
        best_kkt_iter = it;
        rep.objective_trace.push_back(trace_val);
        rep.iterations = it + 1;
        continue;
      }
      rep.objective_trace.push_back(trace_val);
      rep.iterations = it + 1;
      rep.converged = kkt <= kkt_threshold;
      break;
    }
    trace_val = std::max(trace_val, obj);
    rep.objective_trace.push_back(trace_val);
    rep.iterations = it + 1;

    if (kkt <= kkt_threshold) {
      rep.converged = true;
      break;
    }
    if (kkt < 0.5 * best_kkt) {
      best_kkt = kkt;
      best_kkt_iter = it;
    } else if (it - best_kkt_iter >= 40 && proj_tol > 1e-14) {
      // Residual plateaued at the projection noise floor: tighten the inner
      // tolerance and keep polishing. Warm-started corrections make the
      // extra accuracy incremental rather than a fresh solve.
      proj_tol *= 0.1;
      best_kkt_iter = it;
    }
  }

  rep.kkt_residual = kkt;
  rep.feasibility_residual = feasibility_residual_of(u, rows);
  rep.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return {std::move(u), std::move(rep)};
}

}  // namespace

std::pair<ScalarField, SolveReport> solve_monopolist(const Polygon& polygon, double h,
                                                     const SolverConfig& config) {
  ScalarField u;
  SolveReport rep;
  if (config.ipm_init) {
    auto grid = std::make_shared<Grid>(build_grid(polygon, h));
    const ConvexityCone cone =
        config.cone_directions >= 16 ? ConvexityCone::wide16() : ConvexityCone::standard8();
    DualEstimate dual;
    ScalarField u0 = monopolist_ipm(grid, cone, 1e-12, 100, &dual);
    std::tie(u, rep) = solve_on_grid(polygon, grid, std::move(u0), config, &dual);
  } else {
    std::vector<double> levels{h};
    if (config.cascade_init) {
      double hc = h;
      while (hc * 2.0 <= 0.45 * polygon.shortest_edge() && hc < 1.0 / 8.0) {
        hc *= 2.0;
        levels.push_back(hc);
      }
    }
    for (auto it = levels.rbegin(); it != levels.rend(); ++it) {
      auto grid = std::make_shared<Grid>(build_grid(polygon, *it));
      ScalarField u0 = u.grid ? prolongate(u, polygon, grid) : ScalarField(grid);
      SolverConfig level_cfg = config;
      if (*it != h) level_cfg.max_iters = std::min(config.max_iters, 4000);
      std::tie(u, rep) = solve_on_grid(polygon, grid, std::move(u0), level_cfg);
    }
  }
  if (!rep.converged)
    throw MaxItersExceeded("solve_monopolist: iteration cap reached before stationarity",
                           std::move(u), std::move(rep));
  return {std::move(u), std::move(rep)};
}

}  // namespace screenfb
