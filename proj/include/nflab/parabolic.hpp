#pragma once

#include <cstdint>
#include <functional>

#include "nflab/grid.hpp"
#include "nflab/profile.hpp"

namespace nflab {

/// Radial flux law for the uniformly parabolic solve: flux = f(|g|^2) g on
/// faces, with sp(s) = d/ds [f(s^2) s] supplying the Newton coefficient.
struct ParabolicFlux {
  std::function<double(double)> f;   // f(w), w = |g|^2
  std::function<double(double)> sp;  // derivative of the scalar flux at |g|=s

  static ParabolicFlux heat();
  static ParabolicFlux from_modified(const ModifiedProfile& mp);
};

/// Subtracts the discrete mean; idempotent.
Vec normalize_initial(const GridST& g, const Vec& u0);

/// Backward-Euler time stepping of u_t = div(f(|Du|^2) Du), homogeneous
/// Neumann, conservative finite volumes. Per-step nonlinear residual is
/// driven to 1e-13 (absolute, scaled); mass is conserved to the same level.
/// Throws NonlinearDivergence with the step index if the iteration stalls.
ScalarField solve_parabolic(const ParabolicFlux& flux, const Vec& u0, const GridST& g);

/// Discrete Neumann Poisson problem div(grad h) = u0 with zero-mean h.
/// Throws Incompatible when u0 has nonzero mean.
Vec solve_poisson_neumann(const GridST& g, const Vec& u0);

/// v(t_k) = v(t_{k-1}) + dt * flux(Du(t_k)) on faces, v(0) = (v0x, v0y).
/// The rectangle rule matches backward Euler exactly, so div v = u holds to
/// the nonlinear solver tolerance at every slice.
VecField assemble_vstar(const ParabolicFlux& flux, const ScalarField& u_star,
                        const Vec& v0x, const Vec& v0y, const GridST& g);

/// Classical pre-solve output: the pair (u*, v*) with div v* = u*, zero
/// normal trace, plus the face gradients, the potential, and the caps
/// M = max |Du*| and m = ||u*_t||_inf + 1 used downstream.
struct BoundaryFunctionPair {
  ScalarField u_star;
  VecField v_star;
  VecField du_star;
  Vec h0;
  double M = 0;
  double m = 1;
};

BoundaryFunctionPair make_boundary_pair(const ParabolicFlux& flux, const Vec& u0,
                                        const GridST& g);

/// Space-time partition by |Du| at cells: 0 zero-gradient, 1 the open band
/// (0, s_plus(r_tilde)), 2 the equality band, 3 the classical region above.
/// Equality bands use tolerance 1e-8.
struct RegionMasks {
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> code;  // cells x slices
  Eigen::Array<bool, Eigen::Dynamic, 1> omega0;  // t=0 trace of region 3 closure
  long count[4] = {0, 0, 0, 0};
};

RegionMasks partition_domain(const GridST& g, const ScalarField& u, double r_tilde,
                             const Profile& p);

}  // namespace nflab
