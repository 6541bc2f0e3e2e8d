#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "screenfb/screening.hpp"

namespace screenfb {

// Direct solve of the discrete concave QP on tiny grids: primal-dual interior
// point on the explicit KKT system, followed by an active-set polish that
// solves the identified equality-constrained system exactly.
ScalarField brute_force_oracle(const Polygon& polygon, double h, const ConvexityCone& cone) {
  auto grid = std::make_shared<Grid>(build_grid(polygon, h));
  const int n_all = grid->nx * grid->ny;
  GradientOperator op = GradientOperator::build(grid);

  std::vector<int> nodes;  // inside nodes, dense indexing
  std::vector<int> dense(n_all, -1);
  for (int id = 0; id < n_all; ++id)
    if (op.mask[id]) {
      dense[id] = static_cast<int>(nodes.size());
      nodes.push_back(id);
    }
  const int n = static_cast<int>(nodes.size());
  if (n > 64) throw std::invalid_argument("brute_force_oracle: instance too large (> 64 nodes)");

  // Assemble Q = Dx^T Wx Dx + Dy^T Wy Dy and p = Dx^T Wx xq + Dy^T Wy yq - w
  // restricted to inside nodes, so that Pi(u) = p^T u - u^T Q u / 2 + const.
  const int mex = op.dx.rows, mey = op.dy.rows;
  Eigen::MatrixXd Dx = Eigen::MatrixXd::Zero(mex, n), Dy = Eigen::MatrixXd::Zero(mey, n);
  for (int r = 0; r < mex; ++r)
    for (int k = op.dx.ptr[r]; k < op.dx.ptr[r + 1]; ++k)
      Dx(r, dense[op.dx.col[k]]) += op.dx.val[k];
  for (int r = 0; r < mey; ++r)
    for (int k = op.dy.ptr[r]; k < op.dy.ptr[r + 1]; ++k)
      Dy(r, dense[op.dy.col[k]]) += op.dy.val[k];
  const Eigen::VectorXd wx = Eigen::Map<const Eigen::VectorXd>(op.wx.data(), mex);
  const Eigen::VectorXd xq = Eigen::Map<const Eigen::VectorXd>(op.xq.data(), mex);
  const Eigen::VectorXd wy = Eigen::Map<const Eigen::VectorXd>(op.wy.data(), mey);
  const Eigen::VectorXd yq = Eigen::Map<const Eigen::VectorXd>(op.yq.data(), mey);
  Eigen::VectorXd w(n), xs(n), ys(n);
  for (int r = 0; r < n; ++r) {
    w(r) = op.w[nodes[r]];
    xs(r) = op.xs[nodes[r]];
    ys(r) = op.ys[nodes[r]];
  }
  const Eigen::MatrixXd Q =
      Dx.transpose() * wx.asDiagonal() * Dx + Dy.transpose() * wy.asDiagonal() * Dy;
  const Eigen::VectorXd p =
      Dx.transpose() * (wx.asDiagonal() * xq) + Dy.transpose() * (wy.asDiagonal() * yq) - w;

  // Constraints A u >= 0: nonnegativity rows then cone rows.
  const ConeRows rows = build_cone_rows(*grid, cone);
  const int m = n + static_cast<int>(rows.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m, n);
  for (int r = 0; r < n; ++r) A(r, r) = 1.0;
  for (std::size_t c = 0; c < rows.size(); ++c) {
    const int r = n + static_cast<int>(c);
    A(r, dense[rows.plus[c]]) += 1.0;
    A(r, dense[rows.minus[c]]) += 1.0;
    A(r, dense[rows.center[c]]) -= 2.0;
  }

  // Strictly feasible start: a centered paraboloid plus a constant.
  Eigen::VectorXd u(n);
  double cx = 0.0, cy = 0.0;
  for (int r = 0; r < n; ++r) {
    cx += xs(r);
    cy += ys(r);
  }
  cx /= n;
  cy /= n;
  for (int r = 0; r < n; ++r) {
    const double dx = xs(r) - cx, dy = ys(r) - cy;
    u(r) = 0.75 * (dx * dx + dy * dy) + 1.0;
  }
  Eigen::VectorXd lam = Eigen::VectorXd::Ones(m);
  Eigen::VectorXd s = A * u;
  if (s.minCoeff() <= 0.0) throw std::runtime_error("oracle start not strictly feasible");

  // Minimize f(u) = u^T Q u / 2 - p^T u subject to A u >= 0.
  for (int it = 0; it < 200; ++it) {
    const Eigen::VectorXd rd = Q * u - p - A.transpose() * lam;
    const double mu = s.dot(lam) / m;
    if (mu < 1e-14 && rd.lpNorm<Eigen::Infinity>() < 1e-12) break;
    const double sigma = 0.1;
    Eigen::VectorXd sinv_lam = lam.array() / s.array();
    Eigen::MatrixXd M = Q + A.transpose() * sinv_lam.asDiagonal() * A;
    Eigen::VectorXd rhs = -rd + A.transpose() * (sigma * mu * s.cwiseInverse() - lam);
    Eigen::VectorXd du = M.ldlt().solve(rhs);
    Eigen::VectorXd ds = A * du;
    Eigen::VectorXd dlam =
        (sigma * mu * s.cwiseInverse() - lam).array() - sinv_lam.array() * ds.array();
    double alpha = 1.0;
    for (int r = 0; r < m; ++r) {
      if (ds(r) < 0) alpha = std::min(alpha, -0.995 * s(r) / ds(r));
      if (dlam(r) < 0) alpha = std::min(alpha, -0.995 * lam(r) / dlam(r));
    }
    u += alpha * du;
    s += alpha * ds;
    lam += alpha * dlam;
  }

  // Active-set polish: equality KKT on the near-active rows.
  const double scale = std::max(1.0, u.lpNorm<Eigen::Infinity>());
  std::vector<int> act;
  for (int r = 0; r < m; ++r)
    if (s(r) < 1e-7 * scale) act.push_back(r);
  const int na = static_cast<int>(act.size());
  Eigen::MatrixXd K(n + na, n + na);
  K.setZero();
  K.topLeftCorner(n, n) = Q;
  for (int a = 0; a < na; ++a) {
    K.block(0, n + a, n, 1) = -A.row(act[a]).transpose();
    K.block(n + a, 0, 1, n) = A.row(act[a]);
  }
  Eigen::VectorXd krhs(n + na);
  krhs.head(n) = p;
  krhs.tail(na).setZero();
  Eigen::VectorXd sol = K.fullPivLu().solve(krhs);
  const Eigen::VectorXd up = sol.head(n);
  const Eigen::VectorXd lp = sol.tail(na);
  const bool dual_ok = na == 0 || lp.minCoeff() > -1e-9;
  const bool primal_ok = (A * up).minCoeff() > -1e-11;
  if (dual_ok && primal_ok) u = up;

  ScalarField out(grid);
  for (int r = 0; r < n; ++r) out.values[nodes[r]] = u(r);
  return out;
}

// Sparse primal-dual interior point on the same QP, usable at any grid size.
// Iterates stay strictly primal feasible (s = A u is maintained exactly), so
// the result can seed the projected-ascent loop with a trivial projection.
ScalarField monopolist_ipm(std::shared_ptr<const Grid> grid, const ConvexityCone& cone,
                           double tol, int max_iters, DualEstimate* dual) {
  const int n_all = grid->nx * grid->ny;
  GradientOperator op = GradientOperator::build(grid);

  std::vector<int> nodes;
  std::vector<int> dense(n_all, -1);
  for (int id = 0; id < n_all; ++id)
    if (op.mask[id]) {
      dense[id] = static_cast<int>(nodes.size());
      nodes.push_back(id);
    }
  const int n = static_cast<int>(nodes.size());

  using SpMat = Eigen::SparseMatrix<double>;
  const int mex = op.dx.rows, mey = op.dy.rows;
  std::vector<Eigen::Triplet<double>> tx, ty;
  for (int r = 0; r < mex; ++r)
    for (int k = op.dx.ptr[r]; k < op.dx.ptr[r + 1]; ++k)
      tx.emplace_back(r, dense[op.dx.col[k]], op.dx.val[k]);
  for (int r = 0; r < mey; ++r)
    for (int k = op.dy.ptr[r]; k < op.dy.ptr[r + 1]; ++k)
      ty.emplace_back(r, dense[op.dy.col[k]], op.dy.val[k]);
  SpMat Dx(mex, n), Dy(mey, n);
  Dx.setFromTriplets(tx.begin(), tx.end());
  Dy.setFromTriplets(ty.begin(), ty.end());
  const Eigen::VectorXd wx = Eigen::Map<const Eigen::VectorXd>(op.wx.data(), mex);
  const Eigen::VectorXd xq = Eigen::Map<const Eigen::VectorXd>(op.xq.data(), mex);
  const Eigen::VectorXd wy = Eigen::Map<const Eigen::VectorXd>(op.wy.data(), mey);
  const Eigen::VectorXd yq = Eigen::Map<const Eigen::VectorXd>(op.yq.data(), mey);
  Eigen::VectorXd w(n), xs(n), ys(n);
  for (int r = 0; r < n; ++r) {
    w(r) = op.w[nodes[r]];
    xs(r) = op.xs[nodes[r]];
    ys(r) = op.ys[nodes[r]];
  }
  const SpMat Q = SpMat(Dx.transpose() * wx.asDiagonal() * Dx) +
                  SpMat(Dy.transpose() * wy.asDiagonal() * Dy);
  const Eigen::VectorXd p =
      Dx.transpose() * (wx.asDiagonal() * xq) + Dy.transpose() * (wy.asDiagonal() * yq) - w;

  const ConeRows rows = build_cone_rows(*grid, cone);
  const int m = n + static_cast<int>(rows.size());
  std::vector<Eigen::Triplet<double>> ta;
  for (int r = 0; r < n; ++r) ta.emplace_back(r, r, 1.0);
  for (std::size_t c = 0; c < rows.size(); ++c) {
    const int r = n + static_cast<int>(c);
    ta.emplace_back(r, dense[rows.plus[c]], 1.0);
    ta.emplace_back(r, dense[rows.minus[c]], 1.0);
    ta.emplace_back(r, dense[rows.center[c]], -2.0);
  }
  SpMat A(m, n);
  A.setFromTriplets(ta.begin(), ta.end());
  const SpMat At = A.transpose();

  Eigen::VectorXd u(n);
  double cx = xs.mean(), cy = ys.mean();
  for (int r = 0; r < n; ++r) {
    const double dx = xs(r) - cx, dy = ys(r) - cy;
    u(r) = 0.75 * (dx * dx + dy * dy) + 1.0;
  }
  Eigen::VectorXd lam = Eigen::VectorXd::Ones(m);
  Eigen::VectorXd s = A * u;
  if (s.minCoeff() <= 0.0) throw std::runtime_error("ipm start not strictly feasible");

  Eigen::SimplicialLDLT<SpMat> ldlt;
  bool analyzed = false;
  for (int it = 0; it < max_iters; ++it) {
    const Eigen::VectorXd rd = Q * u - p - At * lam;
    const double mu = s.dot(lam) / m;
    if (mu < tol && rd.lpNorm<Eigen::Infinity>() < std::sqrt(tol)) break;
    const double sigma = 0.1;
    Eigen::VectorXd sinv_lam = lam.array() / s.array();
    SpMat M = Q + SpMat(At * sinv_lam.asDiagonal() * A);
    if (!analyzed) {
      ldlt.analyzePattern(M);
      analyzed = true;
    }
    ldlt.factorize(M);
    if (ldlt.info() != Eigen::Success) break;
    const Eigen::VectorXd centering = sigma * mu * s.cwiseInverse() - lam;
    Eigen::VectorXd du = ldlt.solve(-rd + At * centering);
    Eigen::VectorXd ds = A * du;
    Eigen::VectorXd dlam = centering.array() - sinv_lam.array() * ds.array();
    double alpha = 1.0;
    for (int r = 0; r < m; ++r) {
      if (ds(r) < 0) alpha = std::min(alpha, -0.995 * s(r) / ds(r));
      if (dlam(r) < 0) alpha = std::min(alpha, -0.995 * lam(r) / dlam(r));
    }
    if (alpha < 1e-13) break;
    u += alpha * du;
    s += alpha * ds;
    lam += alpha * dlam;
  }

  // Active-set polish: solve the equality KKT system on a working set of
  // active rows, then drop rows with negative multipliers and add violated
  // rows until both signs are clean. The saddle matrix is regularized to stay
  // factorizable when active rows are linearly dependent (common inside the
  // exclusion region); iterative refinement removes the regularization error.
  {
    const double scale = std::max(1.0, u.lpNorm<Eigen::Infinity>());
    std::vector<char> in_set(m, 0);
    for (int r = 0; r < m; ++r)
      if (s(r) < 1e-7 * scale) in_set[r] = 1;

    for (int round = 0; round < 20; ++round) {
      std::vector<int> act;
      for (int r = 0; r < m; ++r)
        if (in_set[r]) act.push_back(r);
      const int na = static_cast<int>(act.size());
      SpMat Aact(na, n);
      {
        std::vector<Eigen::Triplet<double>> tr;
        for (int a = 0; a < na; ++a) {
          const int r = act[a];
          if (r < n) {
            tr.emplace_back(a, r, 1.0);
          } else {
            const std::size_t c = static_cast<std::size_t>(r - n);
            tr.emplace_back(a, dense[rows.plus[c]], 1.0);
            tr.emplace_back(a, dense[rows.minus[c]], 1.0);
            tr.emplace_back(a, dense[rows.center[c]], -2.0);
          }
        }
        Aact.setFromTriplets(tr.begin(), tr.end());
      }
      const double reg = 1e-11;
      std::vector<Eigen::Triplet<double>> tk;
      for (int k = 0; k < Q.outerSize(); ++k)
        for (SpMat::InnerIterator it(Q, k); it; ++it)
          tk.emplace_back(it.row(), it.col(), it.value());
      for (int r = 0; r < n; ++r) tk.emplace_back(r, r, reg);
      for (int k = 0; k < Aact.outerSize(); ++k)
        for (SpMat::InnerIterator it(Aact, k); it; ++it) {
          tk.emplace_back(it.row() + n, it.col(), it.value());
          tk.emplace_back(it.col(), it.row() + n, it.value());
        }
      for (int a = 0; a < na; ++a) tk.emplace_back(n + a, n + a, -reg);
      SpMat K(n + na, n + na);
      K.setFromTriplets(tk.begin(), tk.end());
      Eigen::SimplicialLDLT<SpMat> kldlt(K);
      if (kldlt.info() != Eigen::Success) break;

      Eigen::VectorXd sol = Eigen::VectorXd::Zero(n + na);
      for (int refine = 0; refine < 5; ++refine) {
        // residual of the unregularized KKT system [[Q, Aact^T],[Aact, 0]]
        Eigen::VectorXd res(n + na);
        res.head(n) = p - Q * sol.head(n) - Aact.transpose() * sol.tail(na);
        res.tail(na) = -(Aact * sol.head(n));
        sol += kldlt.solve(res);
      }
      const Eigen::VectorXd up = sol.head(n);
      const Eigen::VectorXd lam_act = -sol.tail(na);  // multipliers of Aact u >= 0
      const Eigen::VectorXd slack = A * up;

      bool changed = false;
      for (int a = 0; a < na; ++a)
        if (lam_act(a) < -1e-10) {
          in_set[act[a]] = 0;
          changed = true;
        }
      for (int r = 0; r < m; ++r)
        if (!in_set[r] && slack(r) < -1e-12) {
          in_set[r] = 1;
          changed = true;
        }
      if (!changed) {
        const double kkt_res =
            (Q * up - p - Aact.transpose() * lam_act).lpNorm<Eigen::Infinity>();
        if (kkt_res < 1e-11 && slack.minCoeff() > -1e-11) u = up;
        break;
      }
    }
  }

  if (dual) {
    dual->nonneg.assign(static_cast<std::size_t>(n_all), 0.0);
    for (int r = 0; r < n; ++r) dual->nonneg[nodes[r]] = std::max(0.0, lam(r));
    dual->cone.assign(rows.size(), 0.0);
    for (std::size_t c = 0; c < rows.size(); ++c)
      dual->cone[c] = std::max(0.0, lam(n + static_cast<int>(c)));
  }

  ScalarField out(grid);
  for (int r = 0; r < n; ++r) out.values[nodes[r]] = std::max(0.0, u(r));
  return out;
}

}  // namespace screenfb
