#pragma once

#include <vector>

#include "nflab/geometry.hpp"
#include "nflab/grid.hpp"
#include "nflab/oscillation.hpp"
#include "nflab/parabolic.hpp"
#include "nflab/profile.hpp"

namespace nflab {

/// One refinement patch as applied: where, at which flux level, and with
/// which laminate parameters. Kept for reporting and reproducibility.
struct PatchLogEntry {
  BoxST box;
  int pass = 0;
  double r = 0;  // flux magnitude the patch oscillates around
  double b = 0;
  double lam1 = 0, lam2 = 0;
  double nu = 0;
  double eps_patch = 0;
  double div_constant = 0;
};

/// Approximate solution pair: u at cells, v at faces, div v = u up to patch
/// residuals. The region masks are computed once from the classical
/// pre-solve and stay fixed; patches only ever land in region 1.
struct StatePair {
  GridST grid;
  ScalarField u;
  VecField v;
  ScalarField u_base;  // pristine pre-solve u*; passes rebuild from here
  VecField v_base;     // pristine v*
  RegionMasks masks;
  Profile profile;  // the true (unmodified) flux law
  double r_tilde = 0;
  SolutionType type = SolutionType::ForwardForward;
  double m = 0;        // sup |u*_t| budget from the pre-solve
  int pass_index = 0;  // refinement passes applied so far
  std::vector<PatchLogEntry> patches;
  std::vector<double> flux_trace;  // flux residual after each pass
};

}  // namespace nflab
