#include "nflab/oscillation.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace nflab {

namespace {

double poly_eval(const Vec& c, double t) {
  double v = 0;
  for (int i = static_cast<int>(c.size()) - 1; i >= 0; --i) v = v * t + c[i];
  return v;
}

double piece_integral(const Vec& c, double len) {
  double v = 0, pw = len;
  for (int k = 0; k < c.size(); ++k) {
    v += c[k] * pw / (k + 1);
    pw *= len;
  }
  return v;
}

// Quintic plateau ramp: W(0)=0, W(1)=1, W' and W'' vanish at both ends.
double smoothstep(double s) { return s * s * s * (10.0 + s * (-15.0 + 6.0 * s)); }
double smoothstep_d1(double s) { return 30.0 * s * s * (1.0 - s) * (1.0 - s); }
double smoothstep_d2(double s) { return 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s); }

/// One-axis plateau cutoff: 0 outside (a,b), 1 on [a+r, b-r], quintic ramps.
/// r <= 0 degenerates to the sharp indicator of (a,b).
struct Cutoff1D {
  double a = 0, b = 1, r = 0;
  bool on = false;  // disabled axes evaluate to the constant 1

  double eval(double x) const {
    if (!on) return 1;
    if (x <= a || x >= b) return 0;
    if (r <= 0) return 1;
    if (x < a + r) return smoothstep((x - a) / r);
    if (x > b - r) return smoothstep((b - x) / r);
    return 1;
  }
  double d1(double x) const {
    if (!on || r <= 0 || x <= a || x >= b) return 0;
    if (x < a + r) return smoothstep_d1((x - a) / r) / r;
    if (x > b - r) return -smoothstep_d1((b - x) / r) / r;
    return 0;
  }
  double d2(double x) const {
    if (!on || r <= 0 || x <= a || x >= b) return 0;
    if (x < a + r) return smoothstep_d2((x - a) / r) / (r * r);
    if (x > b - r) return smoothstep_d2((b - x) / r) / (r * r);
    return 0;
  }
};

/// Everything the analytic closures need, shared by value.
struct LamData {
  SawtoothProfile saw;
  Cutoff1D cx, cy, ct;
  int n = 1;
  Vec q, gamma;
  double b = 0, nu = 1;
  double gmag = 0, orient = 1;  // |gamma|, sign in the stream potential
  double ax = 0, ay = 0, at = 0;  // phase anchor

  double phase(double x, double y, double t) const {
    double th = q[0] * (x - ax) + b * (t - at);
    if (n == 2) th += q[1] * (y - ay);
    return nu * th;
  }
};

Mat grad_omega_eval(const LamData& d, const Vec& z, double t) {
  const int n = d.n;
  const double x = z[0], y = n == 2 ? z[1] : 0;
  const double Y = d.phase(x, y, t);
  const double D = d.saw.dS.eval(Y);
  const double Sv = d.saw.S.eval(Y) / d.nu;

  const double cxv = d.cx.eval(x), cyv = n == 2 ? d.cy.eval(y) : 1.0;
  const double ctv = d.ct.eval(t);
  const double c = cxv * cyv * ctv;
  const double c_x = d.cx.d1(x) * cyv * ctv;
  const double c_t = cxv * cyv * d.ct.d1(t);

  Mat G = Mat::Zero(n + 1, n + 1);
  G(0, 0) = D * d.q[0] * c + Sv * c_x;
  if (n == 1) {
    G(0, 1) = D * d.b * c + Sv * c_t;
    return G;
  }

  const double c_y = cxv * d.cy.d1(y) * ctv;
  G(0, 1) = D * d.q[1] * c + Sv * c_y;
  G(0, 2) = D * d.b * c + Sv * c_t;

  const double S2v = d.saw.S2.eval(Y) / (d.nu * d.nu);
  const double gob = d.gmag / d.b;
  const double c_xx = d.cx.d2(x) * cyv * ctv;
  const double c_yy = cxv * d.cy.d2(y) * ctv;
  const double c_xy = d.cx.d1(x) * d.cy.d1(y) * ctv;
  const double c_xt = d.cx.d1(x) * cyv * d.ct.d1(t);
  const double c_yt = cxv * d.cy.d1(y) * d.ct.d1(t);

  // psi = (gamma/b) Sv c + orient*gob*S2v*(c_y, -c_x); differentiate in place.
  const double rot[2] = {c_y, -c_x};
  const double rot_x[2] = {c_xy, -c_xx};
  const double rot_y[2] = {c_yy, -c_xy};
  const double rot_t[2] = {c_yt, -c_xt};
  for (int i = 0; i < 2; ++i) {
    const double gi = d.gamma[i] / d.b;
    G(1 + i, 0) = gi * (D * d.q[0] * c + Sv * c_x) +
                  d.orient * gob * (Sv * d.q[0] * rot[i] + S2v * rot_x[i]);
    G(1 + i, 1) = gi * (D * d.q[1] * c + Sv * c_y) +
                  d.orient * gob * (Sv * d.q[1] * rot[i] + S2v * rot_y[i]);
    G(1 + i, 2) = gi * (D * d.b * c + Sv * c_t) +
                  d.orient * gob * (Sv * d.b * rot[i] + S2v * rot_t[i]);
  }
  return G;
}

double dist_to_segment(const Mat& G, const Mat& e1, const Mat& e2) {
  Mat dir = e2 - e1;
  const double den = dir.squaredNorm();
  double t = den > 0 ? ((G - e1).cwiseProduct(dir)).sum() / den : 0;
  t = std::clamp(t, 0.0, 1.0);
  return (G - e1 - t * dir).norm();
}

}  // namespace

double BoxST::measure(const GridST& g) const {
  double m = (x_hi(g) - x_lo(g)) * (t_hi(g) - t_lo(g));
  if (g.n == 2) m *= y_hi(g) - y_lo(g);
  return m;
}

double BoxST::diameter(const GridST& g) const {
  double d2 = std::pow(x_hi(g) - x_lo(g), 2) + std::pow(t_hi(g) - t_lo(g), 2);
  if (g.n == 2) d2 += std::pow(y_hi(g) - y_lo(g), 2);
  return std::sqrt(d2);
}

void BoxST::validate(const GridST& g) const {
  if (i0 < 0 || i0 >= i1 || i1 > g.nx || k0 < 0 || k1 < k0 || k1 >= g.slices())
    throw ConfigError("box index ranges outside the grid extent");
  if (g.n == 1) {
    if (j0 != 0 || j1 != 1) throw ConfigError("1D box must have j0=0, j1=1");
  } else if (j0 < 0 || j0 >= j1 || j1 > g.ny) {
    throw ConfigError("box index ranges outside the grid extent");
  }
}

double PiecePoly::eval(double y) const {
  y -= std::floor(y);
  auto it = std::upper_bound(brk.begin(), brk.end(), y);
  const int i = static_cast<int>(it - brk.begin()) - 1;
  return poly_eval(coef[i], y - brk[i]);
}

PiecePoly PiecePoly::antiderivative() const {
  PiecePoly F;
  F.brk = brk;
  F.coef.resize(coef.size());
  double run = 0;
  for (size_t i = 0; i < coef.size(); ++i) {
    const Vec& c = coef[i];
    Vec ci = Vec::Zero(c.size() + 1);
    ci[0] = run;
    for (int k = 0; k < c.size(); ++k) ci[k + 1] = c[k] / (k + 1);
    F.coef[i] = ci;
    const double end = (i + 1 < brk.size() ? brk[i + 1] : 1.0) - brk[i];
    run = poly_eval(ci, end);
  }
  return F;
}

double PiecePoly::mean() const {
  double total = 0;
  for (size_t i = 0; i < coef.size(); ++i) {
    const double len = (i + 1 < brk.size() ? brk[i + 1] : 1.0) - brk[i];
    total += piece_integral(coef[i], len);
  }
  return total;
}

double PiecePoly::max_abs() const {
  double m = 0;
  const int per = static_cast<int>(std::max<size_t>(8, 512 / coef.size()));
  for (size_t i = 0; i < coef.size(); ++i) {
    const double len = (i + 1 < brk.size() ? brk[i + 1] : 1.0) - brk[i];
    for (int s = 0; s <= per; ++s)
      m = std::max(m, std::abs(poly_eval(coef[i], len * s / per)));
  }
  return m;
}

SawtoothProfile SawtoothProfile::make(double lam1, double lam2, double w) {
  if (!(lam1 > 0) || !(lam2 > 0)) throw OutOfRange("sawtooth slopes must be positive");
  SawtoothProfile p;
  p.lam1 = lam1;
  p.lam2 = lam2;
  p.rise_fraction = lam1 / (lam1 + lam2);
  const double f2 = p.rise_fraction;
  w = std::min(w, std::min(f2, 1 - f2) / 4);
  p.w = w;

  PiecePoly dS;
  if (w <= 0) {
    p.w = 0;
    dS.brk = {0.0, f2};
    dS.coef = {Vec::Constant(1, lam2), Vec::Constant(1, -lam1)};
  } else {
    // Corner transitions occupy [0,2w] and [f2,f2+2w]; the symmetric quintic
    // ramp keeps the slope mean at exactly zero for any w.
    const double L = lam1 + lam2, h = 2 * w;
    Vec up(6), down(6);
    up << -lam1, 0, 0, 10 * L / std::pow(h, 3), -15 * L / std::pow(h, 4),
        6 * L / std::pow(h, 5);
    down << lam2, 0, 0, -10 * L / std::pow(h, 3), 15 * L / std::pow(h, 4),
        -6 * L / std::pow(h, 5);
    dS.brk = {0.0, h, f2, f2 + h};
    dS.coef = {up, Vec::Constant(1, lam2), down, Vec::Constant(1, -lam1)};
  }
  p.dS = dS;

  p.S = dS.antiderivative();
  const double ms = p.S.mean();
  for (auto& c : p.S.coef) c[0] -= ms;
  p.S2 = p.S.antiderivative();
  const double m2 = p.S2.mean();
  for (auto& c : p.S2.coef) c[0] -= m2;
  p.amplitude = p.S.max_abs();
  return p;
}

LaminatePatch build_laminate(const Vec& q, double b, const Vec& gamma, double lam1,
                             double lam2, const BoxST& box, const GridST& g,
                             double eps, const LaminateOptions& opt) {
  box.validate(g);
  const int n = g.n;
  if (q.size() != n || gamma.size() != n)
    throw ConfigError("frame dimension does not match the grid");
  if (std::abs(q.norm() - 1) > 1e-9) throw OutOfRange("q must be a unit vector");
  if (std::abs(gamma.dot(q)) > 1e-9 * std::max(1.0, gamma.norm()))
    throw OutOfRange("gamma must be orthogonal to q");
  if (!(lam1 > 0) || !(lam2 > 0)) throw OutOfRange("slopes must be positive");
  if (!(eps > 0)) throw OutOfRange("eps must be positive");
  if (b == 0) throw OutOfRange("b must be nonzero");
  if (n == 1 && gamma.norm() > 0)
    throw ConstructionFailed("one space dimension forces gamma = 0");

  LaminatePatch patch;
  patch.box = box;
  patch.q = q;
  patch.gamma = gamma;
  patch.b = b;
  patch.lam1 = lam1;
  patch.lam2 = lam2;
  patch.eps = eps;

  patch.eta = Mat::Zero(n + 1, n + 1);
  patch.eta.row(0).head(n) = q.transpose();
  patch.eta(0, n) = b;
  if (n == 2) {
    patch.eta.block(1, 0, n, n) = gamma * q.transpose() / b;
    patch.eta.col(n).tail(n) = gamma;
  }

  const int bnx = box.nxc(), bny = box.nyc(), bnk = box.nks();
  auto zero_fields = [&] {
    patch.phi_c = Mat::Zero(box.cells(), bnk);
    patch.psi_fx = Mat::Zero((bnx + 1) * bny, bnk);
    patch.psi_fy = n == 2 ? Mat::Zero(bnx * (bny + 1), bnk) : Mat();
  };

  if (eps >= box.measure(g)) {
    patch.zero = true;
    patch.eta1 = -lam1 * patch.eta;
    patch.eta2 = lam2 * patch.eta;
    zero_fields();
    patch.phi = [](const Vec&, double) { return 0.0; };
    patch.psi = [n](const Vec&, double) { return Vec::Zero(n).eval(); };
    patch.grad_omega = [n](const Vec&, double) {
      return Mat::Zero(n + 1, n + 1).eval();
    };
    return patch;
  }

  if (bnx < 3 || (n == 2 && bny < 3) || bnk < 3)
    throw BudgetInfeasible(
        "box too small for interior support: need >= 3 cells per axis and >= 3 "
        "time slices");

  const double Lx = box.x_hi(g) - box.x_lo(g);
  const double Ly = n == 2 ? box.y_hi(g) - box.y_lo(g) : 1;
  const double Lt = box.t_hi(g) - box.t_lo(g);
  const double chi = std::min(eps / (12.0 * (n + 1)), 0.1);
  const double mx = chi * Lx, my = chi * Ly, mt = chi * Lt;

  auto ld = std::make_shared<LamData>();
  ld->n = n;
  ld->q = q;
  ld->gamma = gamma;
  ld->b = b;
  ld->gmag = gamma.norm();
  if (n == 2 && ld->gmag > 0) {
    Vec gperp(2);
    gperp << -gamma[1] / ld->gmag, gamma[0] / ld->gmag;
    ld->orient = q.dot(gperp) >= 0 ? 1.0 : -1.0;
  }
  ld->ax = box.x_lo(g);
  ld->ay = n == 2 ? box.y_lo(g) : 0;
  ld->at = box.t_lo(g);

  if (opt.snap) {
    if (n != 1) throw ConfigError("snapped realization is one-dimensional");
    const int mcx = std::max(1, static_cast<int>(std::floor(mx / g.hx)));
    const int avail = bnx - 2 * mcx;
    const int npc = opt.cells_per_period > 0 ? opt.cells_per_period : avail;
    if (npc < 8 || avail < npc)
      throw BudgetInfeasible("snapped period needs >= 8 cells inside the margins");
    const int np = avail / npc;
    const int extra = avail - np * npc;
    const int is0 = box.i0 + mcx + extra / 2;
    const int nsup = np * npc;

    // Snap the rising run to an odd cell count: every profile corner then
    // sits exactly on a cell center, where a centered difference reads the
    // mean of the two slopes, while the support edges stay on profile zeros
    // at faces. The falling slope is rebalanced to keep the mean at zero.
    int idx = 2 * static_cast<int>(std::floor(lam1 / (lam1 + lam2) * npc / 2.0)) + 1;
    if (idx > npc - 1) idx -= 2;
    const double f2s = static_cast<double>(idx) / npc;
    const double lam1s = lam2 * f2s / (1 - f2s);
    patch.lam1 = lam1s;
    SawtoothProfile saw = SawtoothProfile::make(lam1s, lam2, 0);
    ld->saw = saw;

    const double nu = 1.0 / (npc * g.hx);
    ld->nu = nu;
    ld->at = 0.5 * (box.t_lo(g) + box.t_hi(g));
    // Standing realization: a phase that travels in t would pull the corners
    // off the cell centers and leave nonzero profile values at the support
    // edges, so the snapped laminate pins the phase of its closures too.
    ld->b = 0;
    const double y0 = f2s / 2;  // rising zero of the profile
    // Fold the phase offset into the anchor so the closures and the grid
    // realization share one phase convention.
    ld->ax = g.facex(is0) - y0 / (nu * q[0]);

    // Sharp closure cutoffs: the support boundary is anchored at profile
    // zeros, so the closure gradient is D*eta exactly on the whole support.
    ld->cx = {g.facex(is0), g.facex(is0 + nsup), 0, true};
    ld->ct = {box.t_lo(g) + g.dt / 2,
              box.t_hi(g) - (opt.open_top ? -g.dt : g.dt / 2), 0, true};
    patch.margin_x = (is0 - box.i0) * g.hx;
    patch.margin_t = g.dt / 2;
    patch.nu = nu;
    patch.rho_m = 0;

    const int onset = std::clamp(
        opt.onset_slices, 0,
        opt.open_top ? std::max(0, bnk - 2) : std::max(0, (bnk - 3) / 2));
    zero_fields();
    // Exact cell averages of S(phase)/nu via the antiderivative; the phase
    // is standing, so the profile column is shared by every slice.
    Vec cell_avg(nsup);
    {
      Vec s2v(nsup + 1);
      const double inv = 1.0 / (nu * nu * q[0] * g.hx);
      for (int i = 0; i <= nsup; ++i)
        s2v[i] = saw.S2.eval(y0 + nu * q[0] * (g.facex(is0 + i) - g.facex(is0)));
      for (int i = 0; i < nsup; ++i) cell_avg[i] = (s2v[i + 1] - s2v[i]) * inv;
      cell_avg.array() -= cell_avg.mean();  // fp residual of the telescoping
    }
    const int ic0 = is0 - box.i0;
    for (int k = 0; k < bnk; ++k) {
      const int kr = bnk - 1 - k;
      double ct;
      if (k == 0 || (kr == 0 && !opt.open_top))
        ct = 0;
      else if (k <= onset)
        ct = static_cast<double>(k) / (onset + 1);
      else if (kr <= onset && !opt.open_top)
        ct = static_cast<double>(kr) / (onset + 1);
      else
        ct = 1;
      if (ct == 0) continue;
      for (int i = 0; i < nsup; ++i)
        patch.phi_c(box.cid(ic0 + i), k) = ct * cell_avg[i];
    }
  } else {
    const double w_phase = std::min(0.05, eps / 12.5);
    SawtoothProfile saw = SawtoothProfile::make(lam1, lam2, w_phase);
    ld->saw = saw;
    ld->cx = {box.x_lo(g) + mx / 2, box.x_hi(g) - mx / 2, mx / 2, true};
    ld->ct = {box.t_lo(g) + mt / 2, box.t_hi(g) - mt / 2, mt / 2, true};
    if (n == 2) ld->cy = {box.y_lo(g) + my / 2, box.y_hi(g) - my / 2, my / 2, true};
    patch.margin_x = mx / 2;
    patch.margin_t = mt / 2;

    // Period selection: double nu until the cutoff pollution fits both the
    // sup-norm and the segment-distance budgets (conservative closed forms).
    const double babs = std::abs(b);
    const double gob = n == 2 ? ld->gmag / babs : 0.0;
    const double rmin = std::min({mx / 2, n == 2 ? my / 2 : mx / 2, mt / 2});
    const double c1 = 1.875 / rmin;
    const double c2max = 5.7735 / (rmin * rmin);
    const double m2 = std::max(c2max, c1 * c1);
    double nu = 2.0 / std::min(Lx, n == 2 ? Ly : Lx);
    bool ok = false;
    while (nu < 1e12) {
      const double amp = saw.amplitude / nu;
      const double s2m = saw.S2.max_abs() / (nu * nu);
      const double sup = amp * (1 + gob) + gob * s2m * c1;
      const double pol =
          amp * c1 * ((n + 1) + gob * (10 + 2 * babs)) + 6 * gob * s2m * m2;
      if (sup < 0.45 * eps && pol < 0.45 * eps) {
        ok = true;
        break;
      }
      nu *= 2;
    }
    if (!ok) throw BudgetInfeasible("oscillation frequency budget did not close");
    ld->nu = nu;
    patch.nu = nu;
    patch.rho_m = w_phase / nu;

    // Grid realization: cell-center samples, wall-adjacent cells forced to
    // zero, per-slice mean removed exactly against an interior bump.
    zero_fields();
    Vec bump = Vec::Zero(box.cells());
    for (int j = 0; j < bny; ++j)
      for (int i = 0; i < bnx; ++i) {
        if (i == 0 || i == bnx - 1 || (n == 2 && (j == 0 || j == bny - 1)))
          continue;
        bump[box.cid(i, j)] = ld->cx.eval(g.cellx(box.i0 + i)) *
                              (n == 2 ? ld->cy.eval(g.celly(box.j0 + j)) : 1.0);
      }
    const double bump_mass = bump.sum();
    if (bump_mass <= 0)
      throw BudgetInfeasible("cutoff support misses all interior cell centers");
    for (int k = 0; k < bnk; ++k) {
      const double t = g.time(box.k0 + k);
      for (int j = 0; j < bny; ++j)
        for (int i = 0; i < bnx; ++i) {
          if (i == 0 || i == bnx - 1 || (n == 2 && (j == 0 || j == bny - 1)))
            continue;
          const double x = g.cellx(box.i0 + i);
          const double y = n == 2 ? g.celly(box.j0 + j) : 0;
          const double c =
              ld->cx.eval(x) * (n == 2 ? ld->cy.eval(y) : 1.0) * ld->ct.eval(t);
          if (c == 0) continue;
          patch.phi_c(box.cid(i, j), k) = c * saw.S.eval(ld->phase(x, y, t)) / nu;
        }
      const double mean_k = patch.phi_c.col(k).sum();
      if (mean_k != 0) patch.phi_c.col(k) -= (mean_k / bump_mass) * bump;
      if (n == 2 && ld->gmag > 0) {
        // Node-sampled stream potential; the discrete rotation below yields
        // machine-zero cell divergence for the face fields.
        Mat Phi(bnx + 1, bny + 1);
        for (int j = 0; j <= bny; ++j)
          for (int i = 0; i <= bnx; ++i) {
            const double x = g.facex(box.i0 + i), y = g.facey(box.j0 + j);
            const double c = ld->cx.eval(x) * ld->cy.eval(y) * ld->ct.eval(t);
            Phi(i, j) = c == 0 ? 0.0
                               : ld->orient * c * (ld->gmag / ld->b) *
                                     saw.S2.eval(ld->phase(x, y, t)) / (nu * nu);
          }
        for (int j = 0; j < bny; ++j)
          for (int i = 0; i <= bnx; ++i)
            patch.psi_fx(box.fxid(i, j), k) = (Phi(i, j + 1) - Phi(i, j)) / g.hy;
        for (int j = 0; j <= bny; ++j)
          for (int i = 0; i < bnx; ++i)
            patch.psi_fy(box.fyid(i, j), k) = -(Phi(i + 1, j) - Phi(i, j)) / g.hx;
      }
    }
  }

  patch.eta1 = -patch.lam1 * patch.eta;
  patch.eta2 = patch.lam2 * patch.eta;

  patch.phi = [ld](const Vec& z, double t) {
    const double x = z[0], y = ld->n == 2 ? z[1] : 0;
    const double c =
        ld->cx.eval(x) * (ld->n == 2 ? ld->cy.eval(y) : 1.0) * ld->ct.eval(t);
    return c == 0 ? 0.0 : c * ld->saw.S.eval(ld->phase(x, y, t)) / ld->nu;
  };
  patch.psi = [ld](const Vec& z, double t) {
    if (ld->n == 1 || ld->gmag == 0) return Vec::Zero(ld->n).eval();
    const double x = z[0], y = z[1];
    const double cxv = ld->cx.eval(x), cyv = ld->cy.eval(y), ctv = ld->ct.eval(t);
    const double Y = ld->phase(x, y, t);
    const double Sv = ld->saw.S.eval(Y) / ld->nu;
    const double Tv = (ld->gmag / ld->b) * ld->saw.S2.eval(Y) / (ld->nu * ld->nu);
    Vec psi = (ld->gamma / ld->b) * (Sv * cxv * cyv * ctv);
    psi[0] += ld->orient * Tv * cxv * ld->cy.d1(y) * ctv;
    psi[1] -= ld->orient * Tv * ld->cx.d1(x) * cyv * ctv;
    return psi.eval();
  };
  patch.grad_omega = [ld](const Vec& z, double t) {
    return grad_omega_eval(*ld, z, t);
  };
  return patch;
}

DivInverse div_right_inverse(const Mat& phi, const BoxST& box, const GridST& g) {
  const int bnx = box.nxc(), bny = box.nyc(), bnk = static_cast<int>(phi.cols());
  if (phi.rows() != box.cells()) throw ConfigError("field shape does not match box");
  const double scale = phi.size() > 0 ? phi.cwiseAbs().maxCoeff() : 0.0;

  DivInverse inv;
  inv.gx = Mat::Zero((bnx + 1) * bny, bnk);
  if (g.n == 2) inv.gy = Mat::Zero(bnx * (bny + 1), bnk);

  const double side_sum =
      (box.x_hi(g) - box.x_lo(g)) + (g.n == 2 ? box.y_hi(g) - box.y_lo(g) : 0.0);

  // Interior weight for the 2D sweep: a normalized plateau bump in x.
  Vec cw;
  if (g.n == 2) {
    cw = Vec::Zero(bnx);
    Cutoff1D cb{box.x_lo(g) + g.hx, box.x_hi(g) - g.hx,
                std::max(g.hx, 0.2 * (box.x_hi(g) - box.x_lo(g))), true};
    for (int i = 0; i < bnx; ++i) cw[i] = cb.eval(g.cellx(box.i0 + i));
    const double mass = cw.sum() * g.hx;
    if (mass <= 0) throw BudgetInfeasible("box too narrow for the sweep weight");
    cw /= mass;
  }

  for (int k = 0; k < bnk; ++k) {
    const double mean = phi.col(k).sum() / box.cells();
    if (std::abs(mean) > 1e-12 * std::max(scale, 1e-300))
      throw MeanNotZero("slice " + std::to_string(k) + " has nonzero spatial mean");
    if (g.n == 1) {
      for (int i = 0; i < bnx; ++i)
        inv.gx(i + 1, k) = inv.gx(i, k) + g.hx * phi(i, k);
    } else {
      // The wall collar must be clean or the sweep leaks through the walls.
      for (int j = 0; j < bny; ++j)
        for (int i = 0; i < bnx; ++i)
          if ((i == 0 || i == bnx - 1 || j == 0 || j == bny - 1) &&
              std::abs(phi(box.cid(i, j), k)) > 1e-10 * std::max(scale, 1e-300))
            throw BoundaryNotClean("slice " + std::to_string(k) +
                                   " is nonzero on the wall collar");
      Vec R = Vec::Zero(bny);
      for (int j = 0; j < bny; ++j)
        for (int i = 0; i < bnx; ++i) R[j] += phi(box.cid(i, j), k) * g.hx;
      for (int j = 0; j < bny; ++j)
        for (int i = 0; i < bnx; ++i)
          inv.gx(box.fxid(i + 1, j), k) =
              inv.gx(box.fxid(i, j), k) +
              g.hx * (phi(box.cid(i, j), k) - cw[i] * R[j]);
      for (int j = 0; j < bny; ++j)
        for (int i = 0; i < bnx; ++i)
          inv.gy(box.fyid(i, j + 1), k) =
              inv.gy(box.fyid(i, j), k) + g.hy * cw[i] * R[j];
    }
  }

  // Measured operator constant: worst slice ratio and worst adjacent-slice
  // difference ratio against side_sum * ||phi||.
  double cmax = 0;
  for (int k = 0; k < bnk; ++k) {
    double gs = inv.gx.col(k).cwiseAbs().maxCoeff();
    if (g.n == 2) gs = std::max(gs, inv.gy.col(k).cwiseAbs().maxCoeff());
    const double ps = phi.col(k).cwiseAbs().maxCoeff();
    if (ps > 0) cmax = std::max(cmax, gs / (side_sum * ps));
    if (k > 0) {
      double gd = (inv.gx.col(k) - inv.gx.col(k - 1)).cwiseAbs().maxCoeff();
      if (g.n == 2)
        gd = std::max(gd,
                      (inv.gy.col(k) - inv.gy.col(k - 1)).cwiseAbs().maxCoeff());
      const double pd = (phi.col(k) - phi.col(k - 1)).cwiseAbs().maxCoeff();
      if (pd > 1e-300) cmax = std::max(cmax, gd / (side_sum * pd));
    }
  }
  inv.constant = cmax;
  return inv;
}

void apply_patch(ScalarField& u, VecField& v, const LaminatePatch& patch,
                 const DivInverse& ginv, const GridST& g) {
  const BoxST& b = patch.box;
  const int bnx = b.nxc(), bny = b.nyc();
  const bool has_psi = patch.psi_fx.size() > 0;
  const bool has_gx = ginv.gx.size() > 0;
  for (int k = b.k0; k <= b.k1; ++k) {
    const int kk = k - b.k0;
    for (int j = 0; j < bny; ++j)
      for (int i = 0; i < bnx; ++i)
        u.a(g.cid(b.i0 + i, b.j0 + j), k) += patch.phi_c(b.cid(i, j), kk);
    for (int j = 0; j < bny; ++j)
      for (int i = 1; i < bnx; ++i) {
        double add = 0;
        if (has_psi) add += patch.psi_fx(b.fxid(i, j), kk);
        if (has_gx) add += ginv.gx(b.fxid(i, j), kk);
        if (add != 0) v.fx(g.fxid(b.i0 + i, b.j0 + j), k) += add;
      }
    if (g.n == 2)
      for (int j = 1; j < bny; ++j)
        for (int i = 0; i < bnx; ++i) {
          double add = 0;
          if (patch.psi_fy.size() > 0) add += patch.psi_fy(b.fyid(i, j), kk);
          if (ginv.gy.size() > 0) add += ginv.gy(b.fyid(i, j), kk);
          if (add != 0) v.fy(g.fyid(b.i0 + i, b.j0 + j), k) += add;
        }
  }
}

LaminateAudit audit_laminate(const LaminatePatch& patch, const GridST& g,
                             int factor, unsigned seed) {
  LaminateAudit a;
  const BoxST& b = patch.box;
  const int n = g.n;
  std::mt19937_64 rng(seed ^ 0x51ab5eedULL);
  std::uniform_real_distribution<double> U(0.05, 0.95);

  const long nx = static_cast<long>(b.nxc()) * factor;
  const long ny = n == 2 ? static_cast<long>(b.nyc()) * factor : 1;
  const long nk = static_cast<long>(b.nks() - 1) * factor;
  const double hx = (b.x_hi(g) - b.x_lo(g)) / nx;
  const double hy = n == 2 ? (b.y_hi(g) - b.y_lo(g)) / ny : 1;
  const double ht = (b.t_hi(g) - b.t_lo(g)) / nk;
  const double member_tol = 1e-6 * (patch.eta1.norm() + patch.eta2.norm() + 1.0);

  // Full lattice sweep when affordable, uniform lattice subsample otherwise.
  const long lattice = nx * ny * nk;
  const long cap = 2'000'000;
  std::uniform_int_distribution<long> pick(0, lattice - 1);
  const long samples = std::min(lattice, cap);
  long off = 0;
  Vec z(n);
  for (long s = 0; s < samples; ++s) {
    const long id = lattice <= cap ? s : pick(rng);
    const long i = id % nx, j = (id / nx) % ny, k = id / (nx * ny);
    z[0] = b.x_lo(g) + (i + U(rng)) * hx;
    if (n == 2) z[1] = b.y_lo(g) + (j + U(rng)) * hy;
    const double t = b.t_lo(g) + (k + U(rng)) * ht;
    const Mat G = patch.grad_omega(z, t);
    const double d1 = (G - patch.eta1).norm(), d2 = (G - patch.eta2).norm();
    if (std::min(d1, d2) > member_tol) ++off;
    a.segment_dist =
        std::max(a.segment_dist, dist_to_segment(G, patch.eta1, patch.eta2));
    const double om = std::abs(patch.phi(z, t)) + patch.psi(z, t).norm();
    a.sup_omega = std::max(a.sup_omega, om);
  }
  a.offset_measure = samples > 0 ? static_cast<double>(off) / samples : 0;

  const double grad_scale = std::max(patch.eta1.norm(), patch.eta2.norm()) + 1e-300;
  const double phi_scale =
      patch.phi_c.size() > 0 ? patch.phi_c.cwiseAbs().maxCoeff() : 0.0;
  for (int k = 0; k < patch.phi_c.cols(); ++k) {
    if (n == 2 && patch.psi_fx.size() > 0) {
      double worst = 0;
      for (int j = 0; j < b.nyc(); ++j)
        for (int i = 0; i < b.nxc(); ++i) {
          const double d =
              (patch.psi_fx(b.fxid(i + 1, j), k) - patch.psi_fx(b.fxid(i, j), k)) /
                  g.hx +
              (patch.psi_fy(b.fyid(i, j + 1), k) - patch.psi_fy(b.fyid(i, j), k)) /
                  g.hy;
          worst = std::max(worst, std::abs(d));
        }
      a.div_psi_rel = std::max(a.div_psi_rel, worst / grad_scale);
    }
    if (phi_scale > 0)
      a.mean_phi_rel = std::max(
          a.mean_phi_rel,
          std::abs(patch.phi_c.col(k).sum() / patch.phi_c.rows()) / phi_scale);
  }
  return a;
}

}  // namespace nflab
