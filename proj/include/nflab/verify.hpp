#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "nflab/state.hpp"

namespace nflab {

/// Weak-form test family in tensor-product form: zeta_{a,b}(x,t) =
/// X_a(x) T_b(t). Spatial factors are tabulated at cell centers together
/// with their gradients; temporal factors stay callable. No boundary
/// conditions are imposed on the tests (the weak identity needs none).
struct TestBasis {
  Mat X;    // cells x na, spatial values
  Mat DXx;  // cells x na, d/dx
  Mat DXy;  // cells x na, d/dy (zero columns in 1D)
  std::vector<std::function<double(double)>> T;     // temporal values
  std::vector<std::function<double(double)>> Tdot;  // temporal derivatives
  int size() const { return static_cast<int>(X.cols()) * static_cast<int>(T.size()); }
};

/// Low-order polynomials crossed with low-frequency cosines, 25 functions.
/// The first member is the constant 1 with exactly-zero derivatives.
TestBasis default_test_basis(const GridST& g);

/// max over test functions zeta and sampled slices s of
///   | int u(s) zeta(s) - u(0) zeta(0) dx
///     - int_0^s int (u zeta_t - A(Du) . Dzeta) dx dt |
/// with midpoint cells, central interior gradients, and trapezoid time
/// accumulation. Empty sample_slices means every slice. With zeta == 1 this
/// is the mass drift, arithmetic included.
double weak_residual(const StatePair& state, const TestBasis& basis,
                     const std::vector<int>& sample_slices = {});

/// max_k | int u(.,k) - int u(.,0) |.
double mass_drift(const StatePair& state);

/// int |v_t - A(Du)| over the space-time cylinder against the given flux
/// law; v_t centered in time (one-sided at the end slices), both fields
/// collocated at cell centers, trapezoid weights in time.
double flux_residual(const StatePair& state, const Profile& profile);

/// Distance of a gradient magnitude to the type's band set at level r_tilde
/// (forward-forward: [s2r, spr] plus the zero leaf; backward-forward:
/// [0, s1r] together with [s0, spr]).
double band_point_distance(double s, double r_tilde, const Profile& profile,
                           SolutionType type);

/// Nearest-point distance of (Du, v_t) to the admissible flux graph
/// {(s w, sigma(s) w) : s in the type's band branches, |w| = 1}. The branch
/// tables are built once; evaluation is a table scan plus a local refine.
/// The forward-forward band carries the zero leaf, so its graph carries the
/// rest state (0, 0).
struct GraphDistance {
  GraphDistance(const Profile& profile, double r_tilde, SolutionType type);
  double operator()(double px, double cx) const;
  double operator()(double px, double py, double cx, double cy) const;

  struct Branch {
    double lo = 0, hi = 0;
    Vec s, sig;
  };
  Profile profile;
  std::vector<Branch> branches;
  bool zero_leaf = false;
};

/// Distances of the gradient data to the admissible sets, split by region
/// mask. Gradients here are the one-sided cell gradients, matching the
/// convention the masks were built with.
struct SetDistanceReport {
  double band_max = 0;  // dist of |Du| to the type band, regions 0/1/2
  double band_int = 0;
  double graph_max = 0;  // dist of (Du, v_t) to the flux graph, region 1
  double graph_int = 0;
  double classical_margin = 0;  // min |Du| - s_plus(r~) over region 3
};

SetDistanceReport set_distance_report(const StatePair& state, double r_tilde,
                                      const Profile& profile, SolutionType type);

/// Sup norms of the discrete time derivatives: forward differences for u,
/// centered differences for the face field v.
void measure_caps(const StatePair& state, double& ut, double& vt);

struct VerificationReport {
  double weak_residual = 0;
  double mass_drift = 0;
  double flux_residual = 0;
  std::map<std::string, double> set_residuals;
  double cap_ut = 0;
  double cap_vt = 0;
  int pass_index = 0;
};

/// Runs every verifier against the state's own flux law; deterministic.
VerificationReport full_report(const StatePair& state);

std::string report_to_json(const VerificationReport& r);
VerificationReport report_from_json(const std::string& text);

}  // namespace nflab
