#include "nflab/verify.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

#include "nflab/errors.hpp"

namespace nflab {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Quadrature-grade cell gradient: central differences in the interior, the
// genuine one-sided difference at boundary cells. Distinct from cell_grad_x,
// which is the one-sided convention the region masks use.
void central_grads(const GridST& g, const Eigen::Ref<const Vec>& u, Vec& gx, Vec& gy) {
  gx.resize(g.cells());
  for (int j = 0; j < g.ny; ++j) {
    const int base = j * g.nx;
    for (int i = 0; i < g.nx; ++i) {
      double d;
      if (g.nx == 1)
        d = 0;
      else if (i == 0)
        d = (u(base + 1) - u(base)) / g.hx;
      else if (i == g.nx - 1)
        d = (u(base + i) - u(base + i - 1)) / g.hx;
      else
        d = (u(base + i + 1) - u(base + i - 1)) / (2 * g.hx);
      gx(base + i) = d;
    }
  }
  if (g.n != 2) {
    gy = Vec::Zero(g.cells());
    return;
  }
  gy.resize(g.cells());
  for (int i = 0; i < g.nx; ++i) {
    for (int j = 0; j < g.ny; ++j) {
      double d;
      if (g.ny == 1)
        d = 0;
      else if (j == 0)
        d = (u(g.cid(i, 1)) - u(g.cid(i, 0))) / g.hy;
      else if (j == g.ny - 1)
        d = (u(g.cid(i, j)) - u(g.cid(i, j - 1))) / g.hy;
      else
        d = (u(g.cid(i, j + 1)) - u(g.cid(i, j - 1))) / (2 * g.hy);
      gy(g.cid(i, j)) = d;
    }
  }
}

// A(Du) at cells from gradient components; A(0) = 0.
void flux_cells(const Profile& p, const Vec& gx, const Vec& gy, int n, Vec& ax, Vec& ay) {
  const auto cells = gx.size();
  ax.resize(cells);
  if (n == 2) ay.resize(cells);
  for (Eigen::Index c = 0; c < cells; ++c) {
    const double s = n == 2 ? std::hypot(gx(c), gy(c)) : std::abs(gx(c));
    const double sig = s > 0 ? p.sigma(s) / s : 0.0;
    ax(c) = sig * gx(c);
    if (n == 2) ay(c) = sig * gy(c);
  }
}

// Time derivative of one face-field slice: central interior, one-sided ends.
Vec time_deriv_slice(const Mat& f, int k, double dt) {
  const int K = static_cast<int>(f.cols());
  if (K < 2) return Vec::Zero(f.rows());
  if (k == 0) return (f.col(1) - f.col(0)) / dt;
  if (k == K - 1) return (f.col(K - 1) - f.col(K - 2)) / dt;
  return (f.col(k + 1) - f.col(k - 1)) / (2 * dt);
}

double interval_dist(double s, double a, double b) {
  if (s < a) return a - s;
  if (s > b) return s - b;
  return 0;
}

double band_dist(double s, SolutionType type, double s1r, double s2r, double spr, double s0) {
  if (type == SolutionType::ForwardForward)
    return std::min(s, interval_dist(s, s2r, spr));  // band plus the zero leaf
  return std::min(interval_dist(s, 0.0, s1r), interval_dist(s, s0, spr));
}

GraphDistance::Branch make_branch(const Profile& p, double lo, double hi) {
  constexpr int M = 257;
  GraphDistance::Branch b;
  b.lo = lo;
  b.hi = hi;
  b.s.resize(M);
  b.sig.resize(M);
  for (int i = 0; i < M; ++i) {
    b.s(i) = lo + (hi - lo) * i / (M - 1);
    b.sig(i) = p.sigma(b.s(i));
  }
  return b;
}

// dist of the point (p, c) in R^n x R^n to {(s w, sigma(s) w) : |s| in the
// branch ranges, |w| = 1}. For fixed s the optimal direction w gives
//   dist^2 = |p|^2 + |c|^2 + s^2 + sigma^2 - 2 |s p + sigma c|,
// leaving a 1D search over s per branch: table scan plus a ternary refine.
double graph_dist(const Profile& p, const std::vector<GraphDistance::Branch>& branches,
                  double px, double py, double cx, double cy) {
  const double pc2 = px * px + py * py + cx * cx + cy * cy;
  auto val = [&](double s, double sg) {
    const double ax = s * px + sg * cx, ay = s * py + sg * cy;
    return pc2 + s * s + sg * sg - 2 * std::sqrt(ax * ax + ay * ay);
  };
  double best = std::numeric_limits<double>::infinity();
  double lo = 0, hi = 0;
  for (const GraphDistance::Branch& b : branches) {
    const int M = static_cast<int>(b.s.size());
    for (int i = 0; i < M; ++i) {
      const double v = val(b.s(i), b.sig(i));
      if (v < best) {
        best = v;
        lo = b.s(std::max(i - 1, 0));
        hi = b.s(std::min(i + 1, M - 1));
      }
    }
  }
  if (best > 1e-20) {
    for (int it = 0; it < 40; ++it) {
      const double m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
      if (val(m1, p.sigma(m1)) < val(m2, p.sigma(m2)))
        hi = m2;
      else
        lo = m1;
    }
    const double mid = (lo + hi) / 2;
    best = std::min(best, val(mid, p.sigma(mid)));
  }
  return std::sqrt(std::max(best, 0.0));
}

// Shared pairing so the constant test function and mass_drift are the same
// arithmetic expression.
double slice_pairing(const Eigen::Ref<const Vec>& cells, const Eigen::Ref<const Vec>& weights,
                     double vol) {
  return weights.dot(cells) * vol;
}

}  // namespace

double band_point_distance(double s, double r_tilde, const Profile& profile,
                           SolutionType type) {
  const BranchInverses bi = branch_inverses(profile, r_tilde);
  return band_dist(s, type, bi.s_minus1_r, bi.s_minus2_r, bi.s_plus_r, profile.s_zero);
}

GraphDistance::GraphDistance(const Profile& prof, double r_tilde, SolutionType type)
    : profile(prof) {
  const BranchInverses bi = branch_inverses(profile, r_tilde);
  if (type == SolutionType::ForwardForward) {
    branches.push_back(make_branch(profile, bi.s_minus2_r, bi.s_plus_r));
    zero_leaf = true;
  } else {
    branches.push_back(make_branch(profile, 0.0, bi.s_minus1_r));
    branches.push_back(make_branch(profile, profile.s_zero, bi.s_plus_r));
  }
}

double GraphDistance::operator()(double px, double cx) const {
  const double d = graph_dist(profile, branches, px, 0.0, cx, 0.0);
  return zero_leaf ? std::min(d, std::hypot(px, cx)) : d;
}

double GraphDistance::operator()(double px, double py, double cx, double cy) const {
  const double d = graph_dist(profile, branches, px, py, cx, cy);
  return zero_leaf
             ? std::min(d, std::sqrt(px * px + py * py + cx * cx + cy * cy))
             : d;
}

TestBasis default_test_basis(const GridST& g) {
  const int cells = g.cells();
  const int na = 5;
  TestBasis b;
  b.X.resize(cells, na);
  b.DXx.resize(cells, na);
  b.DXy = Mat::Zero(cells, na);
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const int c = g.cid(i, j);
      const double xh = g.cellx(i) / g.lx;
      b.X(c, 0) = 1.0;
      b.DXx(c, 0) = 0.0;
      b.X(c, 1) = xh;
      b.DXx(c, 1) = 1.0 / g.lx;
      b.X(c, 3) = std::cos(kPi * xh);
      b.DXx(c, 3) = -kPi / g.lx * std::sin(kPi * xh);
      if (g.n == 2) {
        const double yh = g.celly(j) / g.ly;
        b.X(c, 2) = yh;
        b.DXy(c, 2) = 1.0 / g.ly;
        b.X(c, 4) = std::cos(kPi * yh);
        b.DXy(c, 4) = -kPi / g.ly * std::sin(kPi * yh);
      } else {
        b.X(c, 2) = xh * xh;
        b.DXx(c, 2) = 2 * xh / g.lx;
        b.X(c, 4) = std::cos(2 * kPi * xh);
        b.DXx(c, 4) = -2 * kPi / g.lx * std::sin(2 * kPi * xh);
      }
    }
  }
  const double T = g.T;
  b.T.push_back([](double) { return 1.0; });
  b.Tdot.push_back([](double) { return 0.0; });
  b.T.push_back([T](double t) { return t / T; });
  b.Tdot.push_back([T](double) { return 1.0 / T; });
  b.T.push_back([T](double t) { return (t / T) * (t / T); });
  b.Tdot.push_back([T](double t) { return 2 * t / (T * T); });
  b.T.push_back([T](double t) { return std::cos(kPi * t / T); });
  b.Tdot.push_back([T](double t) { return -kPi / T * std::sin(kPi * t / T); });
  b.T.push_back([T](double t) { return std::cos(2 * kPi * t / T); });
  b.Tdot.push_back([T](double t) { return -2 * kPi / T * std::sin(2 * kPi * t / T); });
  return b;
}

double weak_residual(const StatePair& state, const TestBasis& basis,
                     const std::vector<int>& sample_slices) {
  const GridST& g = state.grid;
  const int K = g.slices();
  const int na = static_cast<int>(basis.X.cols());
  const int nb = static_cast<int>(basis.T.size());
  if (basis.X.rows() != g.cells()) throw ConfigError("weak_residual: basis grid mismatch");
  const double vol = g.cell_volume();

  std::vector<char> take(K, sample_slices.empty() ? 1 : 0);
  for (int s : sample_slices)
    if (s >= 0 && s < K) take[s] = 1;

  Vec I0(na);  // pairings of the initial slice at t = 0
  for (int a = 0; a < na; ++a) I0(a) = slice_pairing(state.u.a.col(0), basis.X.col(a), vol);

  Mat C = Mat::Zero(na, nb);  // running time integrals per test function
  Mat fprev(na, nb);          // previous-slice integrand, for the trapezoid step
  double worst = 0;
  Vec gx, gy, ax, ay, DU(na), QA(na);
  for (int k = 0; k < K; ++k) {
    const double t = g.time(k);
    const auto ucol = state.u.a.col(k);
    for (int a = 0; a < na; ++a) DU(a) = slice_pairing(ucol, basis.X.col(a), vol);
    central_grads(g, ucol, gx, gy);
    flux_cells(state.profile, gx, gy, g.n, ax, ay);
    for (int a = 0; a < na; ++a) {
      double q = slice_pairing(ax, basis.DXx.col(a), vol);
      if (g.n == 2) q += slice_pairing(ay, basis.DXy.col(a), vol);
      QA(a) = q;
    }
    for (int bi = 0; bi < nb; ++bi) {
      const double tv = basis.T[bi](t), td = basis.Tdot[bi](t);
      for (int a = 0; a < na; ++a) {
        const double f = td * DU(a) - tv * QA(a);
        if (k > 0) C(a, bi) += 0.5 * g.dt * (fprev(a, bi) + f);
        fprev(a, bi) = f;
      }
    }
    if (!take[k]) continue;
    for (int bi = 0; bi < nb; ++bi) {
      const double tv = basis.T[bi](t), t0 = basis.T[bi](0.0);
      for (int a = 0; a < na; ++a)
        worst = std::max(worst, std::abs(tv * DU(a) - t0 * I0(a) - C(a, bi)));
    }
  }
  return worst;
}

double mass_drift(const StatePair& state) {
  const GridST& g = state.grid;
  const double vol = g.cell_volume();
  const Vec ones = Vec::Ones(g.cells());
  const double m0 = slice_pairing(state.u.a.col(0), ones, vol);
  double worst = 0;
  for (int k = 0; k < g.slices(); ++k)
    worst = std::max(worst, std::abs(slice_pairing(state.u.a.col(k), ones, vol) - m0));
  return worst;
}

double flux_residual(const StatePair& state, const Profile& profile) {
  const GridST& g = state.grid;
  const int K = g.slices();
  const double vol = g.cell_volume();
  double total = 0;
  Vec gx, gy, ax, ay;
  for (int k = 0; k < K; ++k) {
    const double wt = (k == 0 || k == K - 1) ? 0.5 : 1.0;
    const Vec vtx = time_deriv_slice(state.v.fx, k, g.dt);
    const Vec vty = g.n == 2 ? time_deriv_slice(state.v.fy, k, g.dt) : Vec();
    central_grads(g, state.u.a.col(k), gx, gy);
    flux_cells(profile, gx, gy, g.n, ax, ay);
    double s = 0;
    for (int j = 0; j < g.ny; ++j) {
      for (int i = 0; i < g.nx; ++i) {
        const int c = g.cid(i, j);
        const double vx = 0.5 * (vtx(g.fxid(i, j)) + vtx(g.fxid(i + 1, j)));
        if (g.n == 2) {
          const double vy = 0.5 * (vty(g.fyid(i, j)) + vty(g.fyid(i, j + 1)));
          s += std::hypot(vx - ax(c), vy - ay(c));
        } else {
          s += std::abs(vx - ax(c));
        }
      }
    }
    total += wt * g.dt * s * vol;
  }
  return total;
}

SetDistanceReport set_distance_report(const StatePair& state, double r_tilde,
                                      const Profile& profile, SolutionType type) {
  const GridST& g = state.grid;
  if (state.masks.code.rows() != g.cells() || state.masks.code.cols() != g.slices())
    throw ConfigError("set_distance_report: region masks missing or mismatched");
  SetDistanceReport rep;
  if (state.masks.count[1] + state.masks.count[2] + state.masks.count[3] == 0)
    return rep;  // zero-gradient state: inside every band at distance zero

  const BranchInverses bi = branch_inverses(profile, r_tilde);
  const double spr = bi.s_plus_r, s1r = bi.s_minus1_r, s2r = bi.s_minus2_r;
  const double s0 = profile.s_zero;
  const GraphDistance graph(profile, r_tilde, type);

  const int K = g.slices();
  const double vol = g.cell_volume();
  double margin = std::numeric_limits<double>::infinity();
  bool any_classical = false;
  for (int k = 0; k < K; ++k) {
    const double wt = (k == 0 || k == K - 1) ? 0.5 : 1.0;
    const Vec gx = cell_grad_x(g, state.u.a.col(k));
    const Vec gy = g.n == 2 ? cell_grad_y(g, state.u.a.col(k)) : Vec();
    const Vec vtx = time_deriv_slice(state.v.fx, k, g.dt);
    const Vec vty = g.n == 2 ? time_deriv_slice(state.v.fy, k, g.dt) : Vec();
    for (int j = 0; j < g.ny; ++j) {
      for (int i = 0; i < g.nx; ++i) {
        const int c = g.cid(i, j);
        const double px = gx(c), py = g.n == 2 ? gy(c) : 0.0;
        const double dn = g.n == 2 ? std::hypot(px, py) : std::abs(px);
        const std::uint8_t code = state.masks.code(c, k);
        if (code == 3) {
          any_classical = true;
          margin = std::min(margin, dn - spr);
          continue;
        }
        const double d = band_dist(dn, type, s1r, s2r, spr, s0);
        rep.band_max = std::max(rep.band_max, d);
        rep.band_int += wt * g.dt * vol * d;
        if (code == 1) {
          const double vx = 0.5 * (vtx(g.fxid(i, j)) + vtx(g.fxid(i + 1, j)));
          const double vy = g.n == 2 ? 0.5 * (vty(g.fyid(i, j)) + vty(g.fyid(i, j + 1))) : 0.0;
          const double dg = graph(px, py, vx, vy);
          rep.graph_max = std::max(rep.graph_max, dg);
          rep.graph_int += wt * g.dt * vol * dg;
        }
      }
    }
  }
  rep.classical_margin = any_classical ? margin : 0.0;
  return rep;
}

void measure_caps(const StatePair& state, double& ut, double& vt) {
  const GridST& g = state.grid;
  const int K = g.slices();
  ut = 0;
  for (int k = 0; k + 1 < K; ++k)
    ut = std::max(ut, (state.u.a.col(k + 1) - state.u.a.col(k)).cwiseAbs().maxCoeff() / g.dt);
  vt = 0;
  for (int k = 0; k < K; ++k) {
    vt = std::max(vt, time_deriv_slice(state.v.fx, k, g.dt).cwiseAbs().maxCoeff());
    if (g.n == 2) vt = std::max(vt, time_deriv_slice(state.v.fy, k, g.dt).cwiseAbs().maxCoeff());
  }
}

VerificationReport full_report(const StatePair& state) {
  VerificationReport r;
  r.weak_residual = weak_residual(state, default_test_basis(state.grid));
  r.mass_drift = mass_drift(state);
  r.flux_residual = flux_residual(state, state.profile);
  const SetDistanceReport sd =
      set_distance_report(state, state.r_tilde, state.profile, state.type);
  r.set_residuals = {{"band_max", sd.band_max},
                     {"band_int", sd.band_int},
                     {"graph_max", sd.graph_max},
                     {"graph_int", sd.graph_int},
                     {"classical_margin", sd.classical_margin}};
  measure_caps(state, r.cap_ut, r.cap_vt);
  r.pass_index = state.pass_index;
  return r;
}

std::string report_to_json(const VerificationReport& r) {
  nlohmann::json j;
  j["weak_residual"] = r.weak_residual;
  j["mass_drift"] = r.mass_drift;
  j["flux_residual"] = r.flux_residual;
  j["set_residuals"] = nlohmann::json::object();
  for (const auto& [key, value] : r.set_residuals) j["set_residuals"][key] = value;
  j["caps"] = {{"ut", r.cap_ut}, {"vt", r.cap_vt}};
  j["pass_index"] = r.pass_index;
  return j.dump(2);
}

VerificationReport report_from_json(const std::string& text) {
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    VerificationReport r;
    r.weak_residual = j.at("weak_residual").get<double>();
    r.mass_drift = j.at("mass_drift").get<double>();
    r.flux_residual = j.at("flux_residual").get<double>();
    for (const auto& [key, value] : j.at("set_residuals").items())
      r.set_residuals[key] = value.get<double>();
    r.cap_ut = j.at("caps").at("ut").get<double>();
    r.cap_vt = j.at("caps").at("vt").get<double>();
    r.pass_index = j.at("pass_index").get<int>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("verification report parse: ") + e.what());
  }
}

}  // namespace nflab
