#include "nflab/parabolic.hpp"

#include <Eigen/Sparse>
#include <cmath>
#include <sstream>
#include <vector>

namespace nflab {

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using Trip = Eigen::Triplet<double>;

// Tangential gradient magnitude^2 at faces, for the coefficient argument.
// At an x-face the tangential part is the average of the four neighboring
// y-face gradients (zero in 1D).
void face_gradients(const GridST& g, const Vec& u, Vec& gx, Vec& gy, Vec& wx, Vec& wy) {
  gx = face_grad_x(g, u);
  wx = gx.array().square();
  if (g.n == 1) return;
  gy = face_grad_y(g, u);
  wy = gy.array().square();
  for (int j = 0; j < g.ny; ++j)
    for (int i = 1; i < g.nx; ++i) {
      double t = 0.25 * (gy(g.fyid(i - 1, j)) + gy(g.fyid(i - 1, j + 1)) +
                         gy(g.fyid(i, j)) + gy(g.fyid(i, j + 1)));
      wx(g.fxid(i, j)) += t * t;
    }
  for (int j = 1; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      double t = 0.25 * (gx(g.fxid(i, j - 1)) + gx(g.fxid(i + 1, j - 1)) +
                         gx(g.fxid(i, j)) + gx(g.fxid(i + 1, j)));
      wy(g.fyid(i, j)) += t * t;
    }
}

// Flux values on faces: f(w) * g_normal.
void face_flux(const GridST& g, const ParabolicFlux& fl, const Vec& gx, const Vec& gy,
               const Vec& wx, const Vec& wy, Vec& Fx, Vec& Fy) {
  Fx = Vec::Zero(g.xfaces());
  for (int j = 0; j < g.ny; ++j)
    for (int i = 1; i < g.nx; ++i) {
      int id = g.fxid(i, j);
      Fx(id) = fl.f(wx(id)) * gx(id);
    }
  if (g.n == 1) return;
  Fy = Vec::Zero(g.yfaces());
  for (int j = 1; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      int id = g.fyid(i, j);
      Fy(id) = fl.f(wy(id)) * gy(id);
    }
}

// Residual of one backward-Euler step: F(u) = u - up - dt div flux(Du).
Vec be_residual(const GridST& g, const ParabolicFlux& fl, const Vec& u, const Vec& up) {
  Vec gx, gy, wx, wy, Fx, Fy;
  face_gradients(g, u, gx, gy, wx, wy);
  face_flux(g, fl, gx, gy, wx, wy, Fx, Fy);
  return u - up - g.dt * cell_div(g, Fx, Fy);
}

// Quasi-Newton matrix I - dt div(c grad .) with c = sp(|g|) on faces; exact
// Newton in 1D, normal-coefficient approximation in 2D. SPD since sp > 0.
SpMat be_matrix(const GridST& g, const ParabolicFlux& fl, const Vec& wx, const Vec& wy) {
  std::vector<Trip> t;
  t.reserve(g.cells() * 5);
  double ax = g.dt / (g.hx * g.hx), ay = g.dt / (g.hy * g.hy);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      int c = g.cid(i, j);
      double diag = 1;
      if (i > 0) {
        double cf = ax * fl.sp(std::sqrt(wx(g.fxid(i, j))));
        diag += cf;
        t.emplace_back(c, g.cid(i - 1, j), -cf);
      }
      if (i + 1 < g.nx) {
        double cf = ax * fl.sp(std::sqrt(wx(g.fxid(i + 1, j))));
        diag += cf;
        t.emplace_back(c, g.cid(i + 1, j), -cf);
      }
      if (g.n == 2 && j > 0) {
        double cf = ay * fl.sp(std::sqrt(wy(g.fyid(i, j))));
        diag += cf;
        t.emplace_back(c, g.cid(i, j - 1), -cf);
      }
      if (g.n == 2 && j + 1 < g.ny) {
        double cf = ay * fl.sp(std::sqrt(wy(g.fyid(i, j + 1))));
        diag += cf;
        t.emplace_back(c, g.cid(i, j + 1), -cf);
      }
      t.emplace_back(c, c, diag);
    }
  SpMat M(g.cells(), g.cells());
  M.setFromTriplets(t.begin(), t.end());
  return M;
}

}  // namespace

ParabolicFlux ParabolicFlux::heat() {
  return {[](double) { return 1.0; }, [](double) { return 1.0; }};
}

ParabolicFlux ParabolicFlux::from_modified(const ModifiedProfile& mp) {
  return {[mp](double w) { return mp.f_tilde(w); },
          [mp](double s) { return mp.sigma_tilde_prime(s); }};
}

Vec normalize_initial(const GridST& g, const Vec& u0) {
  return u0.array() - cell_mean(g, u0);
}

ScalarField solve_parabolic(const ParabolicFlux& flux, const Vec& u0, const GridST& g) {
  ScalarField out(g);
  out.a.col(0) = u0;
  Vec up = u0;
  Eigen::SimplicialLDLT<SpMat> solver;
  for (int k = 1; k <= g.nt; ++k) {
    Vec u = up;
    Vec F = be_residual(g, flux, u, up);
    double scale = std::max(1.0, up.lpNorm<Eigen::Infinity>());
    double tol = 1e-13 * scale;
    int it = 0;
    while (F.lpNorm<Eigen::Infinity>() > tol) {
      if (++it > 50) break;
      Vec gx, gy, wx, wy;
      face_gradients(g, u, gx, gy, wx, wy);
      solver.compute(be_matrix(g, flux, wx, wy));
      if (solver.info() != Eigen::Success)
        throw NonlinearDivergence("parabolic step factorization failed");
      Vec d = solver.solve(-F);
      double fn = F.lpNorm<Eigen::Infinity>();
      double alpha = 1;
      bool ok = false;
      for (int bt = 0; bt < 25; ++bt, alpha *= 0.5) {
        Vec u2 = u + alpha * d;
        Vec F2 = be_residual(g, flux, u2, up);
        if (F2.lpNorm<Eigen::Infinity>() < fn * (1 - 1e-4 * alpha) ||
            F2.lpNorm<Eigen::Infinity>() <= tol) {
          u = u2;
          F = F2;
          ok = true;
          break;
        }
      }
      if (!ok) break;
    }
    double res = F.lpNorm<Eigen::Infinity>();
    if (res > 1e-10 * scale) {
      std::ostringstream os;
      os << "parabolic step " << k << " stalled at residual " << res;
      throw NonlinearDivergence(os.str());
    }
    out.a.col(k) = u;
    up = u;
  }
  return out;
}

Vec solve_poisson_neumann(const GridST& g, const Vec& u0) {
  double nrm = u0.lpNorm<Eigen::Infinity>();
  if (std::abs(cell_mean(g, u0)) > 1e-12 * std::max(nrm, 1e-300))
    throw Incompatible("poisson: source has nonzero mean");
  if (nrm == 0) return Vec::Zero(g.cells());

  int N = g.cells();
  std::vector<Trip> t;
  t.reserve(N * 6);
  double ax = 1 / (g.hx * g.hx), ay = 1 / (g.hy * g.hy);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      int c = g.cid(i, j);
      double diag = 0;
      auto link = [&](int o, double a) {
        diag -= a;
        t.emplace_back(c, o, a);
      };
      if (i > 0) link(g.cid(i - 1, j), ax);
      if (i + 1 < g.nx) link(g.cid(i + 1, j), ax);
      if (g.n == 2 && j > 0) link(g.cid(i, j - 1), ay);
      if (g.n == 2 && j + 1 < g.ny) link(g.cid(i, j + 1), ay);
      t.emplace_back(c, c, diag);
      t.emplace_back(c, N, 1.0);  // mean constraint multiplier
      t.emplace_back(N, c, 1.0);
    }
  SpMat M(N + 1, N + 1);
  M.setFromTriplets(t.begin(), t.end());
  Eigen::SparseLU<SpMat> lu;
  lu.compute(M);
  if (lu.info() != Eigen::Success) throw Incompatible("poisson: factorization failed");
  Vec rhs = Vec::Zero(N + 1);
  rhs.head(N) = u0;
  Vec sol = lu.solve(rhs);
  Vec h = sol.head(N);
  return h.array() - cell_mean(g, h);
}

VecField assemble_vstar(const ParabolicFlux& flux, const ScalarField& u_star,
                        const Vec& v0x, const Vec& v0y, const GridST& g) {
  VecField v(g);
  v.fx.col(0) = v0x;
  if (g.n == 2) v.fy.col(0) = v0y;
  for (int k = 1; k <= g.nt; ++k) {
    Vec gx, gy, wx, wy, Fx, Fy;
    face_gradients(g, u_star.a.col(k), gx, gy, wx, wy);
    face_flux(g, flux, gx, gy, wx, wy, Fx, Fy);
    v.fx.col(k) = v.fx.col(k - 1) + g.dt * Fx;
    if (g.n == 2) v.fy.col(k) = v.fy.col(k - 1) + g.dt * Fy;
  }
  return v;
}

BoundaryFunctionPair make_boundary_pair(const ParabolicFlux& flux, const Vec& u0,
                                        const GridST& g) {
  BoundaryFunctionPair bp;
  Vec u0n = normalize_initial(g, u0);
  bp.u_star = solve_parabolic(flux, u0n, g);
  bp.h0 = solve_poisson_neumann(g, u0n);
  Vec v0x = face_grad_x(g, bp.h0);
  Vec v0y = g.n == 2 ? face_grad_y(g, bp.h0) : Vec();
  bp.v_star = assemble_vstar(flux, bp.u_star, v0x, v0y, g);
  bp.du_star = VecField(g);
  double M = 0, ut = 0;
  for (int k = 0; k <= g.nt; ++k) {
    bp.du_star.fx.col(k) = face_grad_x(g, bp.u_star.a.col(k));
    if (g.n == 2) bp.du_star.fy.col(k) = face_grad_y(g, bp.u_star.a.col(k));
    M = std::max(M, cell_grad_norm(g, bp.u_star.a.col(k)).maxCoeff());
    if (k > 0)
      ut = std::max(ut, (bp.u_star.a.col(k) - bp.u_star.a.col(k - 1))
                                .lpNorm<Eigen::Infinity>() /
                            g.dt);
  }
  bp.M = M;
  bp.m = ut + 1;
  return bp;
}

RegionMasks partition_domain(const GridST& g, const ScalarField& u, double r_tilde,
                             const Profile& p) {
  double sp = branch_inverses(p, r_tilde).s_plus_r;
  const double band = 1e-8;
  RegionMasks m;
  m.code.resize(g.cells(), g.slices());
  m.omega0 = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(g.cells(), false);
  for (int k = 0; k <= g.nt; ++k) {
    Vec dn = cell_grad_norm(g, u.a.col(k));
    for (int c = 0; c < g.cells(); ++c) {
      std::uint8_t code;
      if (dn(c) <= band)
        code = 0;
      else if (dn(c) < sp - band)
        code = 1;
      else if (dn(c) <= sp + band)
        code = 2;
      else
        code = 3;
      m.code(c, k) = code;
      ++m.count[code];
      if (k == 0 && dn(c) >= sp - band) m.omega0(c) = true;
    }
  }
  return m;
}

}  // namespace nflab
