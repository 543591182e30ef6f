#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nflab/geometry.hpp"
#include "nflab/state.hpp"
#include "nflab/verify.hpp"

namespace nflab {

/// Configuration of a refinement run. The grid and the initial cell data
/// are explicit; r_tilde = 0 asks select_r_tilde for the midpoint level.
struct RunPlan {
  Profile profile;
  SolutionType type = SolutionType::ForwardForward;
  GridST grid;
  Vec u0;
  double r_tilde = 0;
  double epsilon0 = 0.8;
  int passes = 3;
  double eta = 0.8;             // sup-norm budget for u between passes
  double eps_cover_rel = 1e-7;  // cover margin at both ends of (0, r_tilde)
  unsigned seed = 0;

  // Planner knobs; the defaults were tuned on the 256x256 runs.
  int floor_nx = 16;   // smallest box the recursive splitter may emit
  int floor_nk = 8;
  int onset_min = 1;   // minimum ramp length of a patch, in slices
  double b_scale = 0.01;  // phase-velocity scale of the laminates
};

/// Measured outcome of one refinement pass. `complete` means both the flux
/// and the set-distance integrals met this pass's eps; otherwise `binding`
/// names the violated budget. A pass never throws for a missed budget: the
/// state it produced is kept and reported as-is.
struct PassAudit {
  int pass = 0;
  double eps = 0;
  int boxes = 0;    // laminate patches applied
  int skipped = 0;  // candidate leaves left unpatched by the cost model
  double vol_t = 0;  // |Omega_T| under the verification quadrature
  double vol_1 = 0;  // |Omega_T^1|
  double flux_residual = 0;
  double band_int = 0, band_max = 0;
  double graph_int = 0, graph_max = 0;
  double mass = 0;
  double cap_ut = 0, cap_vt = 0;
  bool complete = false;
  std::string binding;
};

/// Aggregate result of a run: the final state, the level cover used, one
/// audit per pass, and the full verification report of the final state.
struct RunResult {
  StatePair state;
  double r_tilde = 0;
  std::vector<Window> cover;
  std::vector<PassAudit> audits;
  VerificationReport report;
  bool crossed = false;      // steep route: the monitored solve crossed
  bool no_crossing = false;  // steep route: pure classical evolution
  double t_bar = 0, x_bar = 0;
};

/// Picks the working flux level. The admissible interval is
/// (sigma(m0'), sigma(s_plus)) with m0' = max(min |Du0|, s_zero); given = 0
/// returns its midpoint, a nonzero `given` is validated against it. Throws
/// HypothesisFailed for constant data, for data so steep the interval is
/// empty, and for a `given` outside it.
double select_r_tilde(const Profile& p, const Vec& u0, const GridST& g,
                      double given = 0);

/// Greedy left-to-right cover of (eps_cover, r_tilde - eps_cover) by level
/// windows. Each half-width is estimate_mu_prime capped away from 0 and
/// r_tilde; consecutive windows overlap by at least 10% of the smaller
/// width. Throws CoverFailed when progress stalls below 1e-6 relative.
std::vector<Window> build_cover(const Profile& p, double r_tilde,
                                SolutionType type, int dim, double eps_cover,
                                unsigned seed = 0);

/// Classical pre-solve with the modified profile, the potential pair
/// (u*, v*), the region partition, and the admissibility audit: sampled
/// region-1 nodes must lie in some cover window and connect through
/// solve_frame. Throws AuditFailed with node diagnostics otherwise.
StatePair build_initial_state(const RunPlan& plan, double r_tilde,
                              const std::vector<Window>& cover);

/// One refinement pass at budget eps: rebuilds u, v from the pristine
/// pre-solve pair, tiles region 1 with disjoint boxes chosen by a cost
/// model (split / patch / skip), applies one equal-flux laminate plus a
/// divergence correction per box, and measures the resulting budgets.
/// u and v outside the patched boxes stay bitwise equal to (u*, v*).
PassAudit refine_once(StatePair& state, const RunPlan& plan,
                      const std::vector<Window>& cover, double eps);

/// Observer called with the state after the pre-solve (pass_index 0) and
/// again after every refinement pass; the CLI hangs snapshot writers here.
using PassObserver = std::function<void(const StatePair&)>;

/// Full pipeline: r_tilde selection, cover, pre-solve, then `passes`
/// refinement passes at eps_j = epsilon0 / 2^j. Stops early when a pass
/// misses its budgets and reports the partial trace.
RunResult iterate(const RunPlan& plan, const PassObserver& on_pass = {});

/// Existence driver for arbitrary initial data. Constant data returns the
/// constant pair with zero residuals. Steep data (min |Du0| >= s_plus) runs
/// the classical monitored solve: if |Du| never drops below the midpoint
/// threshold the classical pair is the answer (no_crossing); at the first
/// crossing the refinement pipeline restarts from that slice and the two
/// stages concatenate continuously. Everything else delegates to iterate.
/// The constant, no-crossing, and concatenated routes observe the final
/// state once; the delegating route observes every pass.
RunResult general_existence(const RunPlan& plan, const PassObserver& on_pass = {});

}  // namespace nflab
