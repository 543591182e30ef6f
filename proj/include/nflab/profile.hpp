#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nflab/errors.hpp"
#include "nflab/expr.hpp"

namespace nflab {

using Vec = Eigen::VectorXd;

/// Radial diffusion profile sigma with a negative dip: sigma(0)=0, sigma
/// decreases to an interior minimum at s_minus, rises through zero at
/// s_zero, and grows with slope in [lambda_lo, lambda_hi] past 2*s_zero.
/// The flux is A(p) = sigma(|p|) p / |p|; the dip makes A(p).p < 0 for
/// 0 < |p| < s_zero, which is what the whole laboratory is about.
///
/// Landmarks are stored refined to 1e-12 (bisection + Newton polish on the
/// supplied hints). `alpha` is carried as metadata only; smoothness beyond
/// C^1 is never exercised on a grid.
struct Profile {
  std::function<double(double)> sigma;
  std::function<double(double)> sigma_prime;
  double s_minus = 0;
  double s_zero = 0;
  double s_plus = 0;
  double lambda_lo = 0;
  double lambda_hi = 0;
  double s_max = 0;
  double alpha = 0.5;
  std::string name;

  double sigma_at_s_plus() const { return sigma(s_plus); }
};

/// Named preset profiles. "quadratic-glued" is s(s-3) on [0,4] continued
/// linearly with slope 5; it is the workhorse for every worked example.
Profile preset_profile(const std::string& name);

/// Builds a profile from an expression in the variable `s`. Landmarks are
/// located by scanning [0, s_max] then refined; hints override the scan.
struct ProfileHints {
  std::optional<double> s_minus, s_zero, s_plus, s_max;
  double alpha = 0.5;
};
Profile profile_from_expression(const std::string& sigma_text, const ProfileHints& hints = {});

/// One validation clause outcome with the worst sample found.
struct NfClause {
  std::string label;
  bool pass = false;
  double worst_s = 0;
  double worst_value = 0;
};

struct NfReport {
  bool pass = false;
  std::vector<NfClause> clauses;
  std::string failure() const;  // first failing clause, empty if pass
};

/// Samples the structural hypothesis: sign pattern of sigma, landmark
/// ordering, sigma(s_plus) = -sigma(s_minus), and the slope band past
/// 2*s_zero. `samples` >= 1000.
NfReport validate_nf(const Profile& p, int samples = 4000);

/// validate_nf that throws NotNonFourier with the failing clause.
void require_nf(const Profile& p, int samples = 4000);

/// The three branch inverses at level r in (0, sigma(s_plus)):
///   sigma(s_plus_r) = r    with s_plus_r in (s_zero, s_plus),
///   sigma(s_minus1_r) = -r with s_minus1_r in (0, s_minus),
///   sigma(s_minus2_r) = -r with s_minus2_r in (s_minus, s_zero).
/// s_plus_r and s_minus1_r increase with r; s_minus2_r decreases.
struct BranchInverses {
  double s_plus_r = 0;
  double s_minus1_r = 0;
  double s_minus2_r = 0;
};
BranchInverses branch_inverses(const Profile& p, double r);

/// Radial flux A(p) = sigma(|p|) p/|p|, with A(0) = 0.
Vec flux(const Profile& p, const Vec& point);

/// Monotone surrogate used by the classical pre-solve. Linear with slope
/// kappa near the origin, a monotone cubic joint up to s_join = s_plus(r_cut)
/// where it meets sigma with matching value and slope, and equal to sigma
/// beyond. Strictly above sigma on (0, s_join); slopes in [theta, Theta].
struct ModifiedProfile {
  std::function<double(double)> sigma_tilde;
  std::function<double(double)> sigma_tilde_prime;
  double kappa = 0;
  double s_anchor = 0;   // end of the linear segment
  double s_join = 0;     // s_plus(r_cut), where sigma_tilde rejoins sigma
  double r_cut = 0;
  double theta = 0;      // sampled min of sigma_tilde'
  double Theta = 0;      // sampled max of sigma_tilde' on [0, s_max]

  /// f_tilde(w) = sigma_tilde(sqrt(w))/sqrt(w), continued by kappa at 0.
  double f_tilde(double w) const;
  /// f_tilde(w) + 2 w f_tilde'(w) == sigma_tilde'(sqrt(w)), the quantity the
  /// parabolicity band controls.
  double parabolicity(double w) const;
  /// Monotone flux A_tilde(p) = sigma_tilde(|p|) p/|p|.
  Vec flux(const Vec& point) const;
  double flux_scalar(double g) const;  // 1D convenience, sign(g) sigma_tilde(|g|)
};

/// Builds the surrogate for a given cut level. Halves kappa up to 20 times
/// if strict dominance fails at a sample; throws ConstructionFailed with the
/// pinch point if it still fails.
ModifiedProfile modify_profile(const Profile& p, double r_cut);

/// Bracketed bisection to tolerance `tol` on |f|, then Newton polish when
/// `df` is supplied. Requires a sign change on [lo, hi].
double solve_root(const std::function<double(double)>& f, double lo, double hi,
                  double tol = 1e-13,
                  const std::function<double(double)>* df = nullptr);

}  // namespace nflab
