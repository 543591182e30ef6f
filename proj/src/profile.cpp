#include "nflab/profile.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace nflab {

double solve_root(const std::function<double(double)>& f, double lo, double hi,
                  double tol, const std::function<double(double)>* df) {
  double flo = f(lo), fhi = f(hi);
  if (flo == 0) return lo;
  if (fhi == 0) return hi;
  if (flo * fhi > 0)
    throw OutOfRange("solve_root: no sign change on bracket [" + std::to_string(lo) +
                     ", " + std::to_string(hi) + "]");
  for (int it = 0; it < 200 && hi - lo > 1e-16 * std::max(1.0, std::abs(hi)); ++it) {
    double mid = 0.5 * (lo + hi);
    double fm = f(mid);
    if (std::abs(fm) <= tol && hi - lo < 1e-8) { lo = hi = mid; break; }
    if (fm == 0) { lo = hi = mid; break; }
    if (flo * fm < 0) { hi = mid; fhi = fm; }
    else { lo = mid; flo = fm; }
  }
  double x = 0.5 * (lo + hi);
  if (df) {
    for (int it = 0; it < 8; ++it) {
      double fx = f(x), dfx = (*df)(x);
      if (dfx == 0) break;
      double step = fx / dfx;
      double nx = x - step;
      if (nx < lo - 1e-12 || nx > hi + 1e-12) break;
      x = nx;
      if (std::abs(step) < 1e-16 * std::max(1.0, std::abs(x))) break;
    }
  }
  return x;
}

namespace {

// Refines landmark hints: s_minus from sigma'=0, s_zero from sigma=0 right of
// s_minus, s_plus from sigma(s)+sigma(s_minus)=0 right of s_zero.
void refine_landmarks(Profile& p) {
  const auto& sig = p.sigma;
  const auto& dsig = p.sigma_prime;
  auto bracket = [&](const std::function<double(double)>& f, double center,
                     double lo_lim, double hi_lim) {
    double w = std::max(1e-6, 0.05 * std::max(1.0, center));
    for (int k = 0; k < 40; ++k) {
      double lo = std::max(lo_lim, center - w), hi = std::min(hi_lim, center + w);
      if (f(lo) * f(hi) < 0) return std::pair<double, double>(lo, hi);
      w *= 1.7;
      if (lo == lo_lim && hi == hi_lim) break;
    }
    throw NotNonFourier("landmark bracket not found near " + std::to_string(center));
  };

  {
    auto [lo, hi] = bracket(dsig, p.s_minus, 1e-12, p.s_zero > 0 ? p.s_zero : p.s_max);
    p.s_minus = solve_root(dsig, lo, hi, 1e-14);
  }
  {
    auto [lo, hi] = bracket(sig, p.s_zero, p.s_minus, p.s_max);
    std::function<double(double)> d = dsig;
    p.s_zero = solve_root(sig, lo, hi, 1e-14, &d);
  }
  {
    double target = -sig(p.s_minus);
    auto f = [&](double s) { return sig(s) - target; };
    auto [lo, hi] = bracket(f, p.s_plus, p.s_zero, p.s_max);
    std::function<double(double)> d = dsig;
    p.s_plus = solve_root(f, lo, hi, 1e-14, &d);
  }
}

void estimate_slope_band(Profile& p) {
  double lo = 2 * p.s_zero, hi = p.s_max;
  if (hi <= lo) { p.lambda_lo = p.lambda_hi = p.sigma_prime(p.s_max); return; }
  double mn = 1e300, mx = -1e300;
  for (int i = 1; i <= 2000; ++i) {
    double s = lo + (hi - lo) * i / 2000.0;
    double d = p.sigma_prime(s);
    mn = std::min(mn, d);
    mx = std::max(mx, d);
  }
  // Sampled extrema; shaved outward so re-validation on a finer sampling of
  // the same open-ended interval stays inside the band.
  const double guard = 2e-3 * (mx - mn) + 1e-9;
  p.lambda_lo = mn - guard;
  p.lambda_hi = mx + guard;
}

}  // namespace

Profile preset_profile(const std::string& name) {
  if (name == "quadratic-glued") {
    Profile p;
    p.name = name;
    p.sigma = [](double s) { return s <= 4.0 ? s * (s - 3.0) : 4.0 + 5.0 * (s - 4.0); };
    p.sigma_prime = [](double s) { return s <= 4.0 ? 2.0 * s - 3.0 : 5.0; };
    p.s_minus = 1.5;
    p.s_zero = 3.0;
    p.s_plus = 0.5 * (3.0 + 3.0 * std::sqrt(2.0));
    p.s_max = 4.0 * p.s_plus;
    refine_landmarks(p);
    estimate_slope_band(p);
    return p;
  }
  throw ConfigError("unknown profile preset '" + name + "'");
}

Profile profile_from_expression(const std::string& sigma_text, const ProfileHints& hints) {
  Expr e = Expr::parse(sigma_text, {"s"});
  Profile p;
  p.name = sigma_text;
  p.alpha = hints.alpha;
  p.sigma = [e](double s) { return e.eval({{"s", s}}); };
  p.sigma_prime = [e](double s) { return e.eval_dual({{"s", Dual{s, 1.0}}}).d; };
  p.s_max = hints.s_max.value_or(0);

  // Scan for the dip shape when hints are absent.
  double scan_hi = p.s_max > 0 ? p.s_max : 64.0;
  if (!hints.s_minus || !hints.s_zero) {
    double best_s = 0, best_v = 0;
    const int N = 4096;
    for (int i = 1; i <= N; ++i) {
      double s = scan_hi * i / N;
      double v = p.sigma(s);
      if (v < best_v) { best_v = v; best_s = s; }
    }
    if (best_v >= 0) throw NotNonFourier("sigma has no negative dip on (0, s_max]");
    p.s_minus = hints.s_minus.value_or(best_s);
    double z = best_s;
    while (z < scan_hi && p.sigma(z) < 0) z += scan_hi / N;
    if (p.sigma(z) < 0) throw NotNonFourier("sigma never returns to zero after the dip");
    p.s_zero = hints.s_zero.value_or(z);
  } else {
    p.s_minus = *hints.s_minus;
    p.s_zero = *hints.s_zero;
  }
  p.s_plus = hints.s_plus.value_or(std::min(scan_hi, 2.0 * p.s_zero));
  if (p.s_max == 0) p.s_max = 4.0 * p.s_plus;
  refine_landmarks(p);
  estimate_slope_band(p);
  return p;
}

std::string NfReport::failure() const {
  for (const auto& c : clauses)
    if (!c.pass) {
      std::ostringstream os;
      os << c.label << " violated at s=" << c.worst_s << " (value " << c.worst_value << ")";
      return os.str();
    }
  return {};
}

NfReport validate_nf(const Profile& p, int samples) {
  samples = std::max(samples, 1000);
  NfReport rep;
  auto clause = [&](const std::string& label, double lo, double hi,
                    const std::function<double(double)>& margin) {
    // margin > 0 means the clause holds at that sample.
    NfClause c{label, true, 0, 0};
    double worst = 1e300;
    for (int i = 1; i < samples; ++i) {
      double s = lo + (hi - lo) * i / samples;
      double m = margin(s);
      if (m < worst) { worst = m; c.worst_s = s; c.worst_value = m; }
    }
    c.pass = worst > 0;
    rep.clauses.push_back(c);
  };

  rep.clauses.push_back({"sigma(0)=0", std::abs(p.sigma(0.0)) < 1e-12, 0.0, p.sigma(0.0)});
  rep.clauses.push_back({"landmark order 0<s_minus<s_zero<s_plus",
                         0 < p.s_minus && p.s_minus < p.s_zero && p.s_zero < p.s_plus,
                         p.s_minus, p.s_zero});
  clause("sigma' < 0 on (0, s_minus)", 0, p.s_minus,
         [&](double s) { return -p.sigma_prime(s); });
  clause("sigma' > 0 on (s_minus, s_max]", p.s_minus, p.s_max,
         [&](double s) { return p.sigma_prime(s); });
  clause("sigma < 0 on (0, s_zero)", 0, p.s_zero, [&](double s) { return -p.sigma(s); });
  clause("sigma > 0 on (s_zero, s_max]", p.s_zero, p.s_max,
         [&](double s) { return p.sigma(s); });
  rep.clauses.push_back({"sigma(s_plus) = -sigma(s_minus)",
                         std::abs(p.sigma(p.s_plus) + p.sigma(p.s_minus)) < 1e-10,
                         p.s_plus, p.sigma(p.s_plus) + p.sigma(p.s_minus)});
  clause("lambda_lo <= sigma' on (2 s_zero, s_max]", 2 * p.s_zero, p.s_max,
         [&](double s) { return p.sigma_prime(s) - p.lambda_lo + 1e-12; });
  clause("sigma' <= lambda_hi on (2 s_zero, s_max]", 2 * p.s_zero, p.s_max,
         [&](double s) { return p.lambda_hi - p.sigma_prime(s) + 1e-12; });

  rep.pass = true;
  for (const auto& c : rep.clauses) rep.pass = rep.pass && c.pass;
  return rep;
}

void require_nf(const Profile& p, int samples) {
  NfReport rep = validate_nf(p, samples);
  if (!rep.pass) throw NotNonFourier(rep.failure());
}

BranchInverses branch_inverses(const Profile& p, double r) {
  double rmax = p.sigma(p.s_plus);
  if (!(r > 0) || !(r < rmax))
    throw OutOfRange("branch level r=" + std::to_string(r) + " outside (0, " +
                     std::to_string(rmax) + ")");
  std::function<double(double)> d = p.sigma_prime;
  BranchInverses b;
  auto up = [&](double s) { return p.sigma(s) - r; };
  auto dn = [&](double s) { return p.sigma(s) + r; };
  b.s_plus_r = solve_root(up, p.s_zero, p.s_plus, 1e-13, &d);
  b.s_minus1_r = solve_root(dn, 0.0, p.s_minus, 1e-13, &d);
  b.s_minus2_r = solve_root(dn, p.s_minus, p.s_zero, 1e-13, &d);
  return b;
}

Vec flux(const Profile& p, const Vec& point) {
  double n = point.norm();
  if (n == 0) return Vec::Zero(point.size());
  return (p.sigma(n) / n) * point;
}

double ModifiedProfile::f_tilde(double w) const {
  if (w <= 0) return kappa;
  double s = std::sqrt(w);
  return sigma_tilde(s) / s;
}

double ModifiedProfile::parabolicity(double w) const {
  return sigma_tilde_prime(std::sqrt(std::max(w, 0.0)));
}

Vec ModifiedProfile::flux(const Vec& point) const {
  double n = point.norm();
  if (n == 0) return Vec::Zero(point.size());
  return (sigma_tilde(n) / n) * point;
}

double ModifiedProfile::flux_scalar(double g) const {
  if (g == 0) return 0;
  return g > 0 ? sigma_tilde(g) : -sigma_tilde(-g);
}

namespace {

// Cubic Hermite piece on [a,b] with values/slopes (ya,ma) and (yb,mb).
struct Hermite {
  double a, b, ya, yb, ma, mb;
  double operator()(double s) const {
    double h = b - a, t = (s - a) / h;
    double t2 = t * t, t3 = t2 * t;
    return ya * (2 * t3 - 3 * t2 + 1) + ma * h * (t3 - 2 * t2 + t) +
           yb * (-2 * t3 + 3 * t2) + mb * h * (t3 - t2);
  }
  double deriv(double s) const {
    double h = b - a, t = (s - a) / h;
    double t2 = t * t;
    return (ya * (6 * t2 - 6 * t) + ma * h * (3 * t2 - 4 * t + 1) +
            yb * (-6 * t2 + 6 * t) + mb * h * (3 * t2 - 2 * t)) / h;
  }
};

// Brodlie slope: monotone, <= 3 min(d1,d2).
double brodlie(double d1, double d2, double h1, double h2) {
  if (d1 <= 0 || d2 <= 0) return 0;
  double alpha = (h1 + 2 * h2) / (3 * (h1 + h2));
  return d1 * d2 / (alpha * d2 + (1 - alpha) * d1);
}

}  // namespace

ModifiedProfile modify_profile(const Profile& p, double r_cut) {
  BranchInverses br = branch_inverses(p, r_cut);
  const double sj = br.s_plus_r;
  const double mj = p.sigma_prime(sj);
  const double r = r_cut;
  const double kappa0 = std::min(mj, r / (2 * sj));
  const double sa = sj / 4;

  std::string pinch;
  for (int attempt = 0; attempt <= 20; ++attempt) {
    double kappa = kappa0 / std::pow(2.0, attempt);
    // Interior knot placed so the final cubic can carry the steep slope mj
    // while staying monotone (endpoint slope <= 3x secant on each piece).
    double sm = sj - std::min(0.5 * (sj - sa), 0.5 * r / mj);
    double lo = kappa * (sa + (sm - sa) / 3) + 1e-12;
    double hi = r - mj * (sj - sm) / 3 - 1e-12;
    if (hi <= lo) { pinch = "knot value range empty"; continue; }
    double sig_m = p.sigma(sm);
    double vm = std::max(0.5 * (lo + hi), sig_m + 0.6 * (hi - sig_m));
    vm = std::min(std::max(vm, lo), hi);

    double d1 = (vm - kappa * sa) / (sm - sa);
    double d2 = (r - vm) / (sj - sm);
    double mm = brodlie(d1, d2, sm - sa, sj - sm);
    Hermite h1{sa, sm, kappa * sa, vm, kappa, mm};
    Hermite h2{sm, sj, vm, r, mm, mj};

    auto st = [=](double s) {
      if (s <= sa) return kappa * s;
      if (s <= sm) return h1(s);
      if (s <= sj) return h2(s);
      return p.sigma(s);
    };
    auto stp = [=, &p](double s) {
      if (s <= sa) return kappa;
      if (s <= sm) return h1.deriv(s);
      if (s <= sj) return h2.deriv(s);
      return p.sigma_prime(s);
    };

    // Strict dominance over sigma on (0, s_join) and positive slope, sampled.
    bool ok = true;
    double theta = 1e300, Theta = -1e300;
    const int N = 20000;
    for (int i = 1; i < N && ok; ++i) {
      double s = sj * i / N;
      if (st(s) <= p.sigma(s)) {
        std::ostringstream os;
        os << "surrogate pinched at s=" << s;
        pinch = os.str();
        ok = false;
      }
      double d = stp(s);
      theta = std::min(theta, d);
      Theta = std::max(Theta, d);
    }
    if (!ok) continue;
    if (theta <= 1e-8) { pinch = "surrogate slope not bounded below"; continue; }
    for (int i = 0; i <= 2000; ++i) {
      double s = sj + (p.s_max - sj) * i / 2000.0;
      double d = p.sigma_prime(s);
      theta = std::min(theta, d);
      Theta = std::max(Theta, d);
    }

    ModifiedProfile m;
    m.sigma_tilde = st;
    m.sigma_tilde_prime = stp;
    m.kappa = kappa;
    m.s_anchor = sa;
    m.s_join = sj;
    m.r_cut = r_cut;
    m.theta = theta;
    m.Theta = Theta;
    return m;
  }
  throw ConstructionFailed("monotone surrogate failed after 20 halvings: " + pinch);
}

}  // namespace nflab
