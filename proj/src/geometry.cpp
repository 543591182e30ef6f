#include "nflab/geometry.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace nflab {

namespace {

double sqr(double x) { return x * x; }

// Law-of-cosines leg used throughout the perturbation bound.
double chord(double x, double y, double cg) {
  return std::sqrt(std::max(0.0, x * x + y * y - 2 * x * y * cg));
}

Vec unit_from_angle(double phi) {
  Vec z(2);
  z << std::cos(phi), std::sin(phi);
  return z;
}

}  // namespace

double half_angle(double R1, double R2, double Rt1, double Rt2) {
  if (!(0 < R1 && R1 < R2)) throw OutOfRange("half_angle: need 0 < R1 < R2");
  if (!(Rt2 > 0)) throw OutOfRange("half_angle: need Rt2 > 0");
  if (Rt1 < Rt2) throw NoSolution("half_angle: no wedge when Rt1 < Rt2");
  double num = (Rt1 - Rt2) * (R1 + R2);
  double den = (Rt1 + Rt2) * (R2 - R1);
  return std::atan(std::sqrt(num / den));
}

double half_angle_identity(double theta, double R1, double R2, double Rt1, double Rt2) {
  double c = std::cos(theta), s = std::sin(theta);
  return (Rt1 - Rt2) * (R1 + R2) * c * c - (Rt1 + Rt2) * (R2 - R1) * s * s;
}

double perturbation_bound(double a, double b, double c, double d11, double d12,
                          double d21, double d22, double e1, double e2) {
  if (!(b > a && a > 0 && c > 0)) throw OutOfRange("perturbation_bound: need b > a > 0, c > 0");
  if (!(d11 >= 0 && d11 < a)) throw OutOfRange("perturbation_bound: d11 outside [0, a)");
  if (!(d12 >= 0 && d12 < (b - a) / 2)) throw OutOfRange("perturbation_bound: d12 outside [0, (b-a)/2)");
  if (!(d21 >= 0 && d21 < (b - a) / 2)) throw OutOfRange("perturbation_bound: d21 outside [0, (b-a)/2)");
  if (!(d22 >= 0)) throw OutOfRange("perturbation_bound: d22 negative");
  if (!(e1 >= 0 && e1 < c)) throw OutOfRange("perturbation_bound: e1 outside [0, c)");
  if (!(e2 >= 0)) throw OutOfRange("perturbation_bound: e2 negative");

  double g = std::atan(std::sqrt(((a + b + d12 + d22) * (e1 + e2)) /
                                 (2 * (b - a - d12 - d21) * (c - e1))));
  double cg = std::cos(g);
  double h1 = std::max(chord(a + d12, a, cg), chord(a - d11, a, cg));
  double h2 = std::max(chord(b + d22, b, cg), chord(b - d21, b, cg));
  double h3 = std::max(chord(c + e2, c, cg), chord(c - e1, c, cg));
  return std::max({h1, h2, h3});
}

CollinearPair collinear_connection(const Profile& p, double r, const Vec& zeta,
                                   SolutionType type) {
  BranchInverses br = branch_inverses(p, r);
  double s_branch =
      type == SolutionType::ForwardForward ? br.s_minus2_r : br.s_minus1_r;
  CollinearPair cp;
  Vec z = zeta / zeta.norm();
  cp.p_plus = br.s_plus_r * z;
  cp.p_minus = -s_branch * z;
  cp.beta = r * z;
  return cp;
}

namespace {

struct Brackets {
  double outer_lo, outer_hi;    // |p + t_plus q| range
  double branch_lo, branch_hi;  // |p + t_minus q| range
};

Brackets window_brackets(const Profile& p, const Window& w) {
  BranchInverses lo = branch_inverses(p, w.r - w.mu);
  BranchInverses hi = branch_inverses(p, w.r + w.mu);
  Brackets b;
  b.outer_lo = lo.s_plus_r;
  b.outer_hi = hi.s_plus_r;
  if (w.type == SolutionType::ForwardForward) {
    // decreasing branch: larger level, smaller root
    b.branch_lo = hi.s_minus2_r;
    b.branch_hi = lo.s_minus2_r;
  } else {
    b.branch_lo = lo.s_minus1_r;
    b.branch_hi = hi.s_minus1_r;
  }
  return b;
}

constexpr double kBracketTol = 1e-10;

bool inside(double x, double lo, double hi) {
  return x > lo + kBracketTol && x < hi - kBracketTol;
}

// Gradient of the radial flux: DA(x) = (sigma' - sigma/|x|) xhat xhat^T
// + (sigma/|x|) I.
Mat flux_jacobian(const Profile& p, const Vec& x) {
  double n = x.norm();
  Vec xh = x / n;
  double a = p.sigma(n) / n;
  return (p.sigma_prime(n) - a) * (xh * xh.transpose()) +
         a * Mat::Identity(x.size(), x.size());
}

RankOneFrame solve_frame_1d(const Profile& p, const Window& w, const DiagonalPoint& pt) {
  double beta = pt.beta(0), x = pt.p(0);
  double r_hat = std::abs(beta);
  if (!inside(r_hat, w.r - w.mu, w.r + w.mu))
    throw NotInS("level |beta| outside the window");
  double sgn = beta > 0 ? 1.0 : -1.0;
  BranchInverses br = branch_inverses(p, r_hat);
  double s_branch =
      w.type == SolutionType::ForwardForward ? br.s_minus2_r : br.s_minus1_r;
  double k = sgn * br.s_plus_r;
  double l = -sgn * s_branch;
  double lo = std::min(k, l), hi = std::max(k, l);
  if (!(x > lo + kBracketTol && x < hi - kBracketTol))
    throw NotInS("gradient outside the open connecting segment");
  RankOneFrame f;
  f.q = Vec::Constant(1, k > x ? 1.0 : -1.0);
  f.gamma = Vec::Zero(1);
  f.t_plus = (k - x) / f.q(0);
  f.t_minus = (l - x) / f.q(0);
  f.residual = std::max(std::abs(p.sigma(br.s_plus_r) - r_hat),
                        std::abs(p.sigma(s_branch) + r_hat));
  return f;
}

struct NewtonResult {
  Vec gp, qp;
  double sp = 0;
  double res = 0;
  bool ok = false;
};

NewtonResult newton_frame(const Profile& p, const Vec& pv, const Vec& beta, Vec gp,
                          Vec qp, double sp) {
  const int n = static_cast<int>(pv.size());
  auto eval = [&](const Vec& g, const Vec& q, double s, Vec& F) -> bool {
    Vec xp = pv + s * q, xm = pv + q;
    double np = xp.norm(), nm = xm.norm();
    if (np < 1e-9 || nm < 1e-9) return false;
    F.resize(2 * n + 1);
    F.head(n) = (p.sigma(np) / np) * xp - beta - s * g;
    F.segment(n, n) = (p.sigma(nm) / nm) * xm - beta - g;
    F(2 * n) = g.dot(q);
    return true;
  };

  Vec F;
  if (!eval(gp, qp, sp, F)) return {};
  for (int it = 0; it < 80; ++it) {
    double fn = F.norm();
    if (fn <= 1e-12) break;
    Vec xp = pv + sp * qp, xm = pv + qp;
    Mat J = Mat::Zero(2 * n + 1, 2 * n + 1);
    Mat DAp = flux_jacobian(p, xp), DAm = flux_jacobian(p, xm);
    J.block(0, 0, n, n) = -sp * Mat::Identity(n, n);
    J.block(0, n, n, n) = sp * DAp;
    J.block(0, 2 * n, n, 1) = DAp * qp - gp;
    J.block(n, 0, n, n) = -Mat::Identity(n, n);
    J.block(n, n, n, n) = DAm;
    J.block(2 * n, 0, 1, n) = qp.transpose();
    J.block(2 * n, n, 1, n) = gp.transpose();
    Vec delta = J.fullPivLu().solve(-F);
    if (!delta.allFinite()) return {};
    double alpha = 1.0;
    bool stepped = false;
    for (int bt = 0; bt < 30; ++bt, alpha *= 0.5) {
      Vec g2 = gp + alpha * delta.head(n);
      Vec q2 = qp + alpha * delta.segment(n, n);
      double s2 = sp + alpha * delta(2 * n);
      Vec F2;
      if (!eval(g2, q2, s2, F2)) continue;
      if (F2.norm() < fn * (1 - 1e-4 * alpha) || F2.norm() < 1e-12) {
        gp = g2; qp = q2; sp = s2; F = F2;
        stepped = true;
        break;
      }
    }
    if (!stepped) break;
  }
  NewtonResult r;
  r.gp = gp; r.qp = qp; r.sp = sp; r.res = F.norm();
  r.ok = r.res <= 1e-10;
  return r;
}

}  // namespace

RankOneFrame solve_frame(const Profile& p, const Window& w, const DiagonalPoint& point,
                         unsigned seed) {
  const int n = static_cast<int>(point.p.size());
  if (n == 1) return solve_frame_1d(p, w, point);

  Brackets bk = window_brackets(p, w);
  auto admissible = [&](const NewtonResult& nr, RankOneFrame& out) -> bool {
    if (!nr.ok) return false;
    double nq = nr.qp.norm();
    if (nq < 1e-12 || nr.sp >= 0) return false;
    Vec q = -nr.qp / nq;
    Vec gamma = -nr.gp / nq;
    double t_plus = -nr.sp * nq, t_minus = -nq;
    double np = (point.p + t_plus * q).norm();
    double nm = (point.p + t_minus * q).norm();
    if (!inside(np, bk.outer_lo, bk.outer_hi)) return false;
    if (!inside(nm, bk.branch_lo, bk.branch_hi)) return false;
    out.q = q; out.gamma = gamma; out.t_plus = t_plus; out.t_minus = t_minus;
    out.residual = nr.res;
    return true;
  };

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  auto try_seed = [&](double r_hat, const Vec& zeta, double lam, RankOneFrame& out) -> bool {
    r_hat = std::min(std::max(r_hat, w.r - 0.9 * w.mu), w.r + 0.9 * w.mu);
    BranchInverses br = branch_inverses(p, r_hat);
    double s_branch =
        w.type == SolutionType::ForwardForward ? br.s_minus2_r : br.s_minus1_r;
    double span = br.s_plus_r + s_branch;
    double t_plus = (1 - lam) * span, t_minus = -lam * span;
    // primed variables: q' = t_minus q, gamma' = t_minus gamma, s' = t+/t-
    Vec qp = t_minus * zeta;
    Vec gp = Vec::Zero(n);
    double sp = t_plus / t_minus;
    NewtonResult nr = newton_frame(p, point.p, point.beta, gp, qp, sp);
    return admissible(nr, out);
  };

  double nb = point.beta.norm();
  Vec zeta0 = nb > 1e-14 ? Vec(point.beta / nb)
                         : (point.p.norm() > 1e-14 ? Vec(point.p / point.p.norm())
                                                   : Vec(Vec::Unit(n, 0)));
  double r0 = nb > 1e-14 ? nb : w.r;
  double lam0 = 0.5;
  {
    BranchInverses br = branch_inverses(p, std::min(std::max(r0, w.r - 0.9 * w.mu),
                                                    w.r + 0.9 * w.mu));
    double s_branch =
        w.type == SolutionType::ForwardForward ? br.s_minus2_r : br.s_minus1_r;
    lam0 = (point.p.dot(zeta0) + s_branch) / (br.s_plus_r + s_branch);
    lam0 = std::min(std::max(lam0, 0.05), 0.95);
  }

  RankOneFrame out;
  if (try_seed(r0, zeta0, lam0, out)) return out;
  for (int k = 0; k < 8; ++k) {
    Vec zeta = unit_from_angle(2 * M_PI * uni(rng));
    double r_hat = w.r + w.mu * (2 * uni(rng) - 1) * 0.8;
    double lam = 0.2 + 0.6 * uni(rng);
    if (try_seed(r_hat, zeta, lam, out)) return out;
  }
  throw NotInS("frame solve failed from all seeds");
}

double det_b(const Profile& p, const Window& w, const Vec& v, const Vec& u,
             const Vec& q, const Vec& gamma) {
  Brackets bk = window_brackets(p, w);
  double nv = v.norm(), nu = u.norm();
  if (!(nv >= bk.outer_lo - kBracketTol && nv <= bk.outer_hi + kBracketTol))
    throw OutOfDomain("det_b: |v| outside the outer window");
  if (!(nu >= bk.branch_lo - kBracketTol && nu <= bk.branch_hi + kBracketTol))
    throw OutOfDomain("det_b: |u| outside the branch window");
  if (gamma.norm() > 1 + 1e-12) throw OutOfDomain("det_b: |gamma| > 1");
  if (std::abs(q.norm() - 1) > 1e-9) throw OutOfDomain("det_b: q not unit");

  const int n = static_cast<int>(v.size());
  Vec vh = v / nv, uh = u / nu;
  double av = p.sigma(nv) / nv, au = p.sigma(nu) / nu;
  double den = au - av;
  double cv = p.sigma_prime(nv) - av, cu = p.sigma_prime(nu) - au;
  double vq = vh.dot(q);
  double d3 = den * (cv * vq * vq + av);
  if (std::abs(den) < 1e-14 || std::abs(d3) < 1e-14)
    throw OutOfDomain("det_b: degenerate configuration");
  Vec wm = cv * vq * vh + av * q - gamma;
  Vec wp = cv * vq * vh + av * q + gamma;
  Mat M = Mat::Identity(n, n) + (cu / den) * (uh * uh.transpose()) -
          (cv / den) * (vh * vh.transpose()) + (1.0 / d3) * (wm * wp.transpose());
  return M.determinant();
}

double estimate_mu_prime(const Profile& p, double r, SolutionType type, int dim,
                         unsigned seed) {
  double rmax = p.sigma(p.s_plus);
  if (!(r > 0 && r < rmax)) throw OutOfRange("estimate_mu_prime: level outside (0, sigma(s_plus))");
  double mu0 = std::min(r, rmax - r) / 2;
  BranchInverses at_r = branch_inverses(p, r);
  double a = type == SolutionType::ForwardForward ? at_r.s_minus2_r : at_r.s_minus1_r;
  double b = at_r.s_plus_r;

  std::mt19937_64 rng(seed ^ 0xd1b54a32d192ed03ull);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  auto rand_unit = [&](int n) {
    if (n == 1) return Vec(Vec::Constant(1, uni(rng) >= 0 ? 1.0 : -1.0));
    return Vec(unit_from_angle(M_PI * uni(rng)));
  };

  // Collinear determinant floor; rotation-invariant but sampled anyway.
  Window w_probe{r, std::min(1e-9, 0.5 * r), type};
  double d_floor = 1e300;
  for (int i = 0; i < (dim == 1 ? 2 : 16); ++i) {
    Vec zeta = dim == 1 ? Vec(Vec::Constant(1, i == 0 ? 1.0 : -1.0)) : rand_unit(2);
    double dd = std::abs(det_b(p, w_probe, Vec(b * zeta), Vec(-a * zeta), zeta,
                               Vec(Vec::Zero(dim))));
    d_floor = std::min(d_floor, dd);
  }

  for (int k = 0; k <= 20; ++k) {
    double mu = mu0 / std::pow(2.0, k);
    BranchInverses lo, hi;
    try {
      lo = branch_inverses(p, r - mu);
      hi = branch_inverses(p, r + mu);
    } catch (const OutOfRange&) {
      continue;
    }

    double mid = 0.5 * (a + b);
    bool ordered;
    double d11, d12;
    if (type == SolutionType::ForwardForward) {
      ordered = lo.s_minus2_r < mid && mid < lo.s_plus_r;
      d11 = a - hi.s_minus2_r;
      d12 = lo.s_minus2_r - a;
    } else {
      ordered = hi.s_minus1_r < mid && mid < lo.s_plus_r;
      d11 = a - lo.s_minus1_r;
      d12 = hi.s_minus1_r - a;
    }
    if (!ordered) continue;
    double d21 = b - lo.s_plus_r;
    double d22 = hi.s_plus_r - b;
    if (!(d11 < a && d12 < (b - a) / 2 && d21 < (b - a) / 2 && mu < r)) continue;

    double h;
    try {
      h = perturbation_bound(a, b, r, d11, d12, d21, d22, mu, mu);
    } catch (const OutOfRange&) {
      continue;
    }
    double gap = type == SolutionType::ForwardForward ? lo.s_plus_r - lo.s_minus2_r
                                                      : lo.s_plus_r - hi.s_minus1_r;
    if (gap <= 0) continue;
    double dq = 4 * h / gap;
    double dg = std::min(1.0, 2 * h / gap);

    Window w{r, mu, type};
    Brackets bk = window_brackets(p, w);
    auto clamp_mag = [](Vec x, double lo_m, double hi_m) {
      double nx = x.norm();
      double target = std::min(std::max(nx, lo_m + 2e-10), hi_m - 2e-10);
      return Vec(x * (target / nx));
    };

    bool certified = true;
    const int Ns = 1000;
    for (int i = 0; i < Ns && certified; ++i) {
      Vec zeta = rand_unit(dim);
      Vec v = b * zeta, u = -a * zeta, q = zeta, gamma = Vec::Zero(dim);
      if (dim == 1) {
        v(0) += h * uni(rng);
        u(0) += h * uni(rng);
      } else {
        v += h * uni(rng) * rand_unit(2);
        u += h * uni(rng) * rand_unit(2);
        q = zeta + dq * uni(rng) * rand_unit(2);
        q /= q.norm();
        gamma = dg * std::abs(uni(rng)) * rand_unit(2);
      }
      v = clamp_mag(v, bk.outer_lo, bk.outer_hi);
      u = clamp_mag(u, bk.branch_lo, bk.branch_hi);
      try {
        certified = std::abs(det_b(p, w, v, u, q, gamma)) > d_floor / 2;
      } catch (const OutOfDomain&) {
        certified = false;
      }
    }
    if (certified) return mu;
  }
  std::ostringstream os;
  os << "no certified half-width at level r=" << r;
  throw NoWindow(os.str());
}

Decomposition decompose(const DiagonalPoint& point, const RankOneFrame& frame, double b) {
  if (b == 0) throw OutOfRange("decompose: b must be nonzero");
  const int n = static_cast<int>(point.p.size());
  Decomposition d;
  d.xi = Mat::Zero(n + 1, n + 1);
  d.xi.block(0, 0, 1, n) = point.p.transpose();
  d.xi.block(1, n, n, 1) = point.beta;
  d.eta = Mat::Zero(n + 1, n + 1);
  d.eta.block(0, 0, 1, n) = frame.q.transpose();
  d.eta(0, n) = b;
  d.eta.block(1, 0, n, n) = (frame.gamma * frame.q.transpose()) / b;
  d.eta.block(1, n, n, 1) = frame.gamma;
  d.xi_plus = d.xi + frame.t_plus * d.eta;
  d.xi_minus = d.xi + frame.t_minus * d.eta;
  d.lambda = -frame.t_minus / (frame.t_plus - frame.t_minus);
  return d;
}

}  // namespace nflab
