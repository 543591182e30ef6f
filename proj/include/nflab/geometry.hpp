#pragma once

#include <Eigen/Dense>
#include <vector>

#include "nflab/profile.hpp"

namespace nflab {

using Mat = Eigen::MatrixXd;

/// Which pair of branch inverses a construction targets. ForwardForward
/// connects the outer branch to the inner decreasing branch (gradients avoid
/// a punctured ball); ForwardBackward connects it to the small increasing
/// branch (gradients may collapse to zero through the dip).
enum class SolutionType { ForwardForward, ForwardBackward };

inline const char* to_string(SolutionType t) {
  return t == SolutionType::ForwardForward ? "I" : "II";
}

/// A level window (r - mu, r + mu) with a certified half-width.
struct Window {
  double r = 0;
  double mu = 0;
  SolutionType type = SolutionType::ForwardForward;
};

/// Diagonal-space point: gradient block p and time-slope block beta.
struct DiagonalPoint {
  Vec p;
  Vec beta;
};

/// Rank-one connecting frame through a diagonal point: unit direction q,
/// orthogonal slope gamma, and parameters t_minus < 0 < t_plus so that
///   flux(p + t q) = beta + t gamma  at t = t_plus and t = t_minus,
/// with |p + t_plus q| in the outer window bracket and |p + t_minus q| in
/// the branch bracket of the window's type.
struct RankOneFrame {
  Vec q;
  Vec gamma;
  double t_plus = 0;
  double t_minus = 0;
  double residual = 0;  // final implicit-system norm
};

/// Half-angle of the isosceles wedge carrying two touching circle pairs:
///   theta = atan(sqrt(((Rt1-Rt2)(R1+R2)) / ((Rt1+Rt2)(R2-R1)))).
/// Requires 0 < R1 < R2 and Rt1 >= Rt2 > 0; throws NoSolution when
/// Rt1 < Rt2.
double half_angle(double R1, double R2, double Rt1, double Rt2);

/// Residual of the orthogonality identity the half-angle solves; used by
/// property tests. Zero at the returned angle up to rounding.
double half_angle_identity(double theta, double R1, double R2, double Rt1, double Rt2);

/// Explicit perturbation bound h(a,b,c; widths): how far an orthogonal pair
/// with radii in the given bands can sit from its collinear normal form.
/// Widths: d11 in [0,a), d12,d21 in [0,(b-a)/2), d22 >= 0, e1 in [0,c),
/// e2 >= 0. Zero at zero widths and increasing in each width.
double perturbation_bound(double a, double b, double c, double d11, double d12,
                          double d21, double d22, double e1, double e2);

/// Collinear connection at level r along the unit direction zeta:
/// p_plus = s_plus(r) zeta, p_minus = -s_branch(r) zeta, beta = r zeta.
struct CollinearPair {
  Vec p_plus, p_minus, beta;
};
CollinearPair collinear_connection(const Profile& p, double r, const Vec& zeta,
                                   SolutionType type);

/// Solves the implicit frame system at `point` for the given window by
/// damped Newton (n=2) or direct branch inversion (n=1). Seeds from the
/// collinear frame at level |beta|, then up to 8 random unit directions.
/// Throws NotInS when no admissible root exists.
RankOneFrame solve_frame(const Profile& p, const Window& w, const DiagonalPoint& point,
                         unsigned seed = 0);

/// Non-degeneracy determinant of the frame system at a configuration
/// (v = outer point, u = branch point, q unit, gamma with |gamma| <= 1).
/// Validates the window brackets; throws OutOfDomain outside them.
double det_b(const Profile& p, const Window& w, const Vec& v, const Vec& u,
             const Vec& q, const Vec& gamma);

/// Certified half-width at level r: the largest mu in the geometric grid
/// mu0/2^k (mu0 = min(r, sigma(s_plus)-r)/2, k <= 20) such that
///  (a) the strict-ordering window condition of the type holds, and
///  (b) sampled |det_b| stays above half its collinear floor under
///      perturbations bounded by perturbation_bound.
/// Throws NoWindow when even the smallest grid value fails.
double estimate_mu_prime(const Profile& p, double r, SolutionType type, int dim = 1,
                         unsigned seed = 0);

/// Full matrices of the lamination: the point embeds as
///   xi = [[p^T, 0], [0, beta]]  ((1+n) x (n+1), zero corner blocks),
/// the frame as the rank-one
///   eta = [[q^T, b], [gamma q^T / b, gamma]],
/// and the endpoints are xi_pm = xi + t_pm eta with weight
/// lambda = -t_minus/(t_plus - t_minus) reproducing xi exactly.
struct Decomposition {
  Mat xi, eta, xi_plus, xi_minus;
  double lambda = 0;
};
Decomposition decompose(const DiagonalPoint& point, const RankOneFrame& frame, double b);

}  // namespace nflab
