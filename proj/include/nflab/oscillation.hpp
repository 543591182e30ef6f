#pragma once

#include <memory>

#include "nflab/grid.hpp"

namespace nflab {

/// Space-time box: cell index ranges [i0,i1) x [j0,j1), slice range
/// [k0,k1] inclusive. All patch support lives strictly inside.
struct BoxST {
  int i0 = 0, i1 = 0, j0 = 0, j1 = 1, k0 = 0, k1 = 0;

  int nxc() const { return i1 - i0; }
  int nyc() const { return j1 - j0; }
  int nks() const { return k1 - k0 + 1; }
  int cells() const { return nxc() * nyc(); }
  int cid(int i, int j = 0) const { return j * nxc() + i; }  // box-local
  int fxid(int i, int j = 0) const { return j * (nxc() + 1) + i; }
  int fyid(int i, int j) const { return j * nxc() + i; }

  double x_lo(const GridST& g) const { return g.facex(i0); }
  double x_hi(const GridST& g) const { return g.facex(i1); }
  double y_lo(const GridST& g) const { return g.facey(j0); }
  double y_hi(const GridST& g) const { return g.facey(j1); }
  double t_lo(const GridST& g) const { return g.time(k0); }
  double t_hi(const GridST& g) const { return g.time(k1); }
  double measure(const GridST& g) const;
  double diameter(const GridST& g) const;
  void validate(const GridST& g) const;
};

/// Piecewise polynomial on the unit period, closed under integration;
/// carries the oscillation profile and its antiderivatives exactly.
struct PiecePoly {
  std::vector<double> brk;        // ascending, brk[0] = 0, implicit end 1
  std::vector<Vec> coef;          // per piece, local coordinate, ascending powers
  double eval(double y) const;    // y taken mod 1
  PiecePoly antiderivative() const;  // continuous on [0,1), F(0) = 0
  double mean() const;
  double max_abs() const;  // sampled extremum (512 points + breakpoints)
};

/// Periodic oscillation profile: slope -lam1 on the falling run, +lam2 on
/// the rising run, corner transitions of phase half-width w (quintic ramps,
/// w = 0 gives the exact piecewise-linear sawtooth). Zero mean by
/// construction; amplitude lam1*lam2/(lam1+lam2)/2.
struct SawtoothProfile {
  double lam1 = 0, lam2 = 0, w = 0;
  double rise_fraction = 0;  // lam1/(lam1+lam2)
  double amplitude = 0;
  PiecePoly dS, S, S2;  // slope, profile, antiderivative of the profile

  static SawtoothProfile make(double lam1, double lam2, double w);
};

struct LaminateOptions {
  bool snap = false;       // 1D: corners at cell centers, whole periods
  int cells_per_period = 0;  // snap mode; 0 picks the widest fitting period
  int onset_slices = 1;    // snap mode: linear time ramp length
  bool open_top = false;   // snap mode: no ramp-down at the final box slice
};

/// Lamination patch omega = (phi, psi). Carries both analytic closures
/// (audited) and the grid realization (applied). phi has exact per-slice
/// zero mean; psi has machine-zero discrete divergence.
struct LaminatePatch {
  BoxST box;
  Vec q, gamma;
  double b = 0, lam1 = 0, lam2 = 0;
  double nu = 0;       // 1/period along q
  double rho_m = 0;    // corner mollification radius (analytic closure)
  double margin_x = 0, margin_t = 0;
  double eps = 0;
  bool zero = false;

  std::function<double(const Vec&, double)> phi;
  std::function<Vec(const Vec&, double)> psi;
  std::function<Mat(const Vec&, double)> grad_omega;
  Mat eta, eta1, eta2;  // rank-one direction and the two laminate gradients

  Mat phi_c;            // box cells x box slices
  Mat psi_fx, psi_fy;   // box faces x box slices (zero in 1D)
};

/// Builds the patch from the rank-one data. Throws BudgetInfeasible naming
/// the binding constraint when the box cannot host the requested eps at the
/// grid resolution; returns the zero patch when eps >= box measure.
LaminatePatch build_laminate(const Vec& q, double b, const Vec& gamma, double lam1,
                             double lam2, const BoxST& box, const GridST& g,
                             double eps, const LaminateOptions& opt = {});

/// Reference value for the divergence-inverse operator constant; the
/// measured constant is monitored against 10x this value.
inline constexpr double C_n_default = 1.0;

/// Right inverse of the divergence on a box: div g = phi exactly (telescoping
/// construction), zero normal trace on every box wall. `constant` is the
/// measured operator norm against the side-length sum.
struct DivInverse {
  Mat gx, gy;  // box faces x box slices
  double constant = 0;
};

DivInverse div_right_inverse(const Mat& phi, const BoxST& box, const GridST& g);

/// u += phi, v += psi + g on the box interior; box-wall faces and all nodes
/// outside stay bitwise unchanged.
void apply_patch(ScalarField& u, VecField& v, const LaminatePatch& patch,
                 const DivInverse& ginv, const GridST& g);

/// Measures the Lemma-style properties of the analytic closure on a jittered
/// audit lattice `factor` times finer than the grid, plus the grid-side
/// divergence and mean invariants of the realization.
struct LaminateAudit {
  double offset_measure = 0;   // relative measure of grad notin {eta1, eta2}
  double segment_dist = 0;     // max dist(grad, [eta1, eta2])
  double sup_omega = 0;
  double div_psi_rel = 0;
  double mean_phi_rel = 0;
};

LaminateAudit audit_laminate(const LaminatePatch& patch, const GridST& g,
                             int factor = 4, unsigned seed = 0);

}  // namespace nflab
