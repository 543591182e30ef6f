#include "nflab/scheme.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#include "nflab/errors.hpp"
#include "nflab/oscillation.hpp"
#include "nflab/parabolic.hpp"

namespace nflab {

namespace {

double min_abs_grad(const GridST& g, const Vec& u0) {
  const Vec gx = cell_grad_x(g, u0);
  if (g.n == 1) return gx.cwiseAbs().minCoeff();
  const Vec gy = cell_grad_y(g, u0);
  double m = std::numeric_limits<double>::infinity();
  for (int c = 0; c < g.cells(); ++c) m = std::min(m, std::hypot(gx(c), gy(c)));
  return m;
}

double max_abs_grad(const GridST& g, const Vec& u0) {
  const Vec gx = cell_grad_x(g, u0);
  if (g.n == 1) return gx.cwiseAbs().maxCoeff();
  const Vec gy = cell_grad_y(g, u0);
  double m = 0;
  for (int c = 0; c < g.cells(); ++c) m = std::max(m, std::hypot(gx(c), gy(c)));
  return m;
}

// Cell tables a pass plans against: one-sided gradients (the mask
// convention), face-averaged central v_t, and forward |u_t| per step.
struct FieldTables {
  Mat du;
  Mat vt;
  Mat utf;
};

FieldTables make_tables(const GridST& g, const ScalarField& u, const VecField& v) {
  const int K = g.slices();
  FieldTables t;
  t.du.resize(g.cells(), K);
  for (int k = 0; k < K; ++k) t.du.col(k) = cell_grad_x(g, u.a.col(k));
  t.vt.resize(g.cells(), K);
  Vec vtx;
  for (int k = 0; k < K; ++k) {
    if (K < 2)
      vtx = Vec::Zero(v.fx.rows());
    else if (k == 0)
      vtx = (v.fx.col(1) - v.fx.col(0)) / g.dt;
    else if (k == K - 1)
      vtx = (v.fx.col(K - 1) - v.fx.col(K - 2)) / g.dt;
    else
      vtx = (v.fx.col(k + 1) - v.fx.col(k - 1)) / (2 * g.dt);
    for (int i = 0; i < g.nx; ++i) t.vt(i, k) = 0.5 * (vtx(i) + vtx(i + 1));
  }
  t.utf = Mat::Zero(g.cells(), std::max(K - 1, 1));
  for (int k = 0; k + 1 < K; ++k)
    t.utf.col(k) = (u.a.col(k + 1) - u.a.col(k)).cwiseAbs() / g.dt;
  return t;
}

int find_window(const std::vector<Window>& cover, double r) {
  for (int k = 0; k < static_cast<int>(cover.size()); ++k)
    if (std::abs(r - cover[k].r) < cover[k].mu) return k;
  return -1;
}

// Everything a pass's box planner needs, bundled once.
struct PlanCtx {
  const GridST& g;
  const Profile& prof;
  const RunPlan& plan;
  const std::vector<Window>& cover;
  const FieldTables& tab;
  const RegionMasks& masks;
  const GraphDistance& gdist;
  double r_tilde = 0;
  double eps = 0;
  double eps_cover = 0;
  double m = 0;
};

// One planned leaf: either a laminate patch or a deliberate skip.
struct LeafPlan {
  BoxST box;
  double p0 = 0, b0 = 0;
  double qsign = 1;
  double lam1 = 0, lam2 = 0;  // tau-shrunk, pre-snap
  int npc = 0, onset = 0;
  double eps_patch = 0;
  double window_r = 0;
  bool open_top = false;
};

constexpr double kHeadroomSlack = 0.02;
constexpr double kRampSafety = 0.95;
constexpr double kSplitGain = 0.98;  // a split must beat the leaf by 2%

double flux1(const Profile& p, double x) {
  const double s = std::abs(x);
  return x >= 0 ? p.sigma(s) : -p.sigma(s);
}

// Box statistics the cost model runs on: the flux-plus-distance integrand
// over a cell sample pool, center fields, and the |u_t| maximum. Flux is
// sampled on every cell; the graph term only where the mask is 1, matching
// what the audit integrates. Floor-level boxes sample a lattice directly;
// larger boxes aggregate their halves, so a box estimate never loses the
// variation its interior resolves.
struct BoxStats {
  double p0 = 0, b0 = 0;
  double unp = 0;  // unpatched integrand mean
  double utmax = 0;
  long n1 = 0;
  bool pure01 = true;  // only dormant and refinable cells, no classical zone
  std::vector<double> du, vt;
  std::vector<std::uint8_t> code;
};

constexpr int kPoolCap = 128;

std::uint64_t box_key(const BoxST& b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint16_t>(b.i0)) << 48) |
         (static_cast<std::uint64_t>(static_cast<std::uint16_t>(b.i1)) << 32) |
         (static_cast<std::uint64_t>(static_cast<std::uint16_t>(b.k0)) << 16) |
         static_cast<std::uint64_t>(static_cast<std::uint16_t>(b.k1));
}

void bisect(const BoxST& box, bool in_t, BoxST& b1, BoxST& b2) {
  b1 = b2 = box;
  if (in_t) {
    const int km = box.k0 + box.nks() / 2;
    b1.k1 = km - 1;
    b2.k0 = km;
  } else {
    const int im = box.i0 + box.nxc() / 2;
    b1.i1 = im;
    b2.i0 = im;
  }
}

using StatsMemo = std::map<std::uint64_t, BoxStats>;

const BoxStats& box_stats(const PlanCtx& c, const BoxST& box, StatsMemo& memo) {
  const std::uint64_t key = box_key(box);
  const auto it = memo.find(key);
  if (it != memo.end()) return it->second;

  const GridST& g = c.g;
  const int bnx = box.nxc(), bnk = box.nks();
  BoxStats st;
  st.p0 = c.tab.du(box.i0 + bnx / 2, box.k0 + bnk / 2);
  st.b0 = c.tab.vt(box.i0 + bnx / 2, box.k0 + bnk / 2);

  const bool can_x = bnx >= 2 * c.plan.floor_nx;
  const bool can_t = bnk >= 2 * c.plan.floor_nk;
  if (can_x || can_t) {
    BoxST b1, b2;
    bisect(box, can_t, b1, b2);
    const BoxStats& s1 = box_stats(c, b1, memo);
    const BoxStats& s2 = box_stats(c, b2, memo);
    const double w1 = b1.measure(g), w2 = b2.measure(g);
    st.unp = (w1 * s1.unp + w2 * s2.unp) / (w1 + w2);
    st.utmax = std::max(s1.utmax, s2.utmax);
    st.n1 = s1.n1 + s2.n1;
    st.pure01 = s1.pure01 && s2.pure01;
    const std::size_t total = s1.du.size() + s2.du.size();
    const std::size_t stride =
        total > kPoolCap ? (total + kPoolCap - 1) / kPoolCap : 1;
    for (std::size_t s = 0; s < total; s += stride) {
      const bool first = s < s1.du.size();
      const BoxStats& src = first ? s1 : s2;
      const std::size_t j = first ? s : s - s1.du.size();
      st.du.push_back(src.du[j]);
      st.vt.push_back(src.vt[j]);
      st.code.push_back(src.code[j]);
    }
  } else {
    for (int k = box.k0; k <= box.k1; ++k)
      for (int i = box.i0; i < box.i1; ++i) {
        const std::uint8_t code = c.masks.code(i, k);
        if (code == 1)
          ++st.n1;
        else if (code != 0)
          st.pure01 = false;
      }
    const int kmax = std::min(box.k1 - 1, static_cast<int>(c.tab.utf.cols()) - 1);
    for (int k = box.k0; k <= kmax; ++k)
      for (int i = box.i0; i < box.i1; ++i)
        st.utmax = std::max(st.utmax, c.tab.utf(i, k));

    const int ni = std::min(5, bnx), nk = std::min(5, bnk);
    double acc = 0;
    for (int a = 0; a < ni; ++a)
      for (int b = 0; b < nk; ++b) {
        const int i = box.i0 + ((2 * a + 1) * bnx) / (2 * ni);
        const int k = box.k0 + ((2 * b + 1) * bnk) / (2 * nk);
        st.du.push_back(c.tab.du(i, k));
        st.vt.push_back(c.tab.vt(i, k));
        st.code.push_back(c.masks.code(i, k));
        double e = std::abs(flux1(c.prof, st.du.back()) - st.vt.back());
        if (st.code.back() == 1) e += c.gdist(st.du.back(), st.vt.back());
        acc += e;
      }
    st.unp = acc / static_cast<double>(st.du.size());
  }
  return memo.emplace(key, std::move(st)).first->second;
}

struct PatchChoice {
  double score = std::numeric_limits<double>::infinity();
  int npc = 0, onset = 0;
  double lam1 = 0, lam2 = 0;
  double eps_patch = 0;
  double q0 = 1;
};

// Models the patched box's integrand: the steady two-plateau cost sampled
// at the pre-snap frame, plus the structural overlays that depend on the
// period length (margins, ramp slices, corner cells, plateau snap shift).
std::optional<PatchChoice> plan_patch(const PlanCtx& c, const BoxST& box,
                                      const BoxStats& st) {
  const GridST& g = c.g;
  const int bnx = box.nxc(), bnk = box.nks();
  if (bnk < 3) return std::nullopt;
  const double r_hat = std::abs(st.b0);
  if (r_hat <= c.eps_cover || r_hat >= c.r_tilde - c.eps_cover) return std::nullopt;
  const int wk = find_window(c.cover, r_hat);
  if (wk < 0) return std::nullopt;

  Vec pv(1), bv(1);
  pv << st.p0;
  bv << st.b0;
  RankOneFrame frame;
  try {
    frame = solve_frame(c.prof, c.cover[wk], DiagonalPoint{pv, bv}, c.plan.seed);
  } catch (const NotInS&) {
    return std::nullopt;
  }
  const double tp = frame.t_plus, tm = frame.t_minus;
  const double lam = -tm / (tp - tm);
  const double q0 = frame.q(0);
  const double sl_p = std::abs(c.prof.sigma_prime(std::abs(st.p0 + tp * q0)));
  const double sl_m = std::abs(c.prof.sigma_prime(std::abs(st.p0 + tm * q0)));
  const double sl = std::max({sl_p, sl_m, 1e-6});
  // Endpoint pullback: the interior-margin shrink, capped so the flux error
  // it causes stays inside a 1/20 share of this pass's budget.
  const double tau =
      std::min(std::min(lam, 1 - lam) / 4, c.eps / (20 * sl * (tp - tm)));
  const double lam1 = -(1 - tau) * tm;
  const double lam2 = (1 - tau) * tp;
  const double a_saw = lam1 * lam2 / (2 * (lam1 + lam2));
  const double f2 = lam1 / (lam1 + lam2);

  const double headroom = c.m - st.utmax - kHeadroomSlack;
  if (headroom <= 0) return std::nullopt;

  // The margin scales with eps; capping eps at 48/bnx pins one margin cell
  // per side, the minimum the sharp closures allow.
  const double measure = box.measure(g);
  const double eps_patch = std::min({c.eps, 0.9 * measure, 0.95 * 48.0 / bnx});
  if (!(eps_patch > 0)) return std::nullopt;
  const double chi = std::min(eps_patch / (12.0 * (g.n + 1)), 0.1);
  const int mcx = std::max(1, static_cast<int>(std::floor(chi * bnx)));
  const int avail = bnx - 2 * mcx;
  if (avail < 8) return std::nullopt;

  // A box ending at the final slice keeps full amplitude there: no second
  // ramp, no dead top slice.
  const bool open = box.k1 == g.slices() - 1;
  const int onset_cap = open ? bnk - 2 : (bnk - 3) / 2;
  if (onset_cap < 0) return std::nullopt;

  double base = 0;
  for (std::size_t s = 0; s < st.du.size(); ++s) {
    const double gp = st.du[s] + lam2 * q0;
    const double gm = st.du[s] - lam1 * q0;
    double e = f2 * std::abs(flux1(c.prof, gp) - st.vt[s]) +
               (1 - f2) * std::abs(flux1(c.prof, gm) - st.vt[s]);
    if (st.code[s] == 1)
      e += f2 * c.gdist(gp, st.vt[s]) + (1 - f2) * c.gdist(gm, st.vt[s]);
    base += e;
  }
  base /= static_cast<double>(st.du.size());
  const double over = std::max(st.unp - base, 0.0);

  PatchChoice best;
  for (int npc = 8; npc <= avail; ++npc) {
    const double amp = a_saw * npc * g.hx;
    if (amp > c.plan.eta / 2) break;
    int onset = c.plan.onset_min;
    const double need = amp / (kRampSafety * headroom * g.dt);
    if (need > onset + 1) onset = static_cast<int>(std::ceil(need)) - 1;
    if (onset > onset_cap) break;  // amp grows with npc; no larger npc fits

    const int np = avail / npc;
    const int extra = avail - np * npc;
    int idx = 2 * static_cast<int>(std::floor(f2 * npc / 2.0)) + 1;
    if (idx > npc - 1) idx -= 2;
    const double f2s = static_cast<double>(idx) / npc;
    const double lam1s = lam2 * f2s / (1 - f2s);
    // Corner cells: the centered difference reads the slope mean in the one
    // cell holding each profile corner, two such cells per period.
    const double gc = st.p0 + 0.5 * (lam2 - lam1s) * q0;
    const double corner =
        std::abs(flux1(c.prof, gc) - st.b0) + c.gdist(gc, st.b0);
    // Snapping shifts the falling plateau off the frame by lam1s - lam1.
    const double e_snap = std::abs(lam1s - lam1) * (1 - f2s) * sl_m *
                          (1 + 1 / std::sqrt(1 + sl_m * sl_m));

    const double frac_margin = (2.0 * mcx + extra) / bnx;
    const double frac_sup = static_cast<double>(np * npc) / bnx;
    const double wramp = open ? 1.0 + 0.5 * onset : 2.0 + onset;
    const double score = base + (frac_margin + wramp / bnk) * over +
                         (2.0 / npc) * frac_sup * std::max(corner - base, 0.0) +
                         e_snap;
    if (score < best.score) {
      best.score = score;
      best.npc = npc;
      best.onset = onset;
      best.lam1 = lam1;
      best.lam2 = lam2;
      best.eps_patch = eps_patch;
      best.q0 = q0;
    }
  }
  if (best.npc == 0) return std::nullopt;
  return best;
}

// The planner recurses from the root box, comparing leaf actions against
// both axis bisections. Subtrees repeat across split orders, so node
// evaluations are memoized; a second walk emits the decided leaves.
struct NodeEval {
  double cost = 0;
  int action = 0;  // 0 skip, 1 patch, 2 split in x, 3 split in t
  std::optional<PatchChoice> choice;
};

using MemoMap = std::map<std::uint64_t, NodeEval>;

double plan_cost(const PlanCtx& c, const BoxST& box, MemoMap& memo,
                 StatsMemo& stats) {
  const std::uint64_t key = box_key(box);
  const auto it = memo.find(key);
  if (it != memo.end()) return it->second.cost;

  const BoxStats& st = box_stats(c, box, stats);
  NodeEval ev;
  const double measure = box.measure(c.g);
  ev.cost = measure * st.unp;
  if (st.pure01 && st.n1 > 0) {
    ev.choice = plan_patch(c, box, st);
    if (ev.choice && measure * ev.choice->score < ev.cost) {
      ev.cost = measure * ev.choice->score;
      ev.action = 1;
    }
  }

  const bool can[2] = {box.nxc() >= 2 * c.plan.floor_nx,
                       box.nks() >= 2 * c.plan.floor_nk};
  double best_split = std::numeric_limits<double>::infinity();
  int split_action = 0;
  for (int axis = 0; axis < 2; ++axis) {
    if (!can[axis]) continue;
    BoxST b1, b2;
    bisect(box, axis == 1, b1, b2);
    const double sc = plan_cost(c, b1, memo, stats) + plan_cost(c, b2, memo, stats);
    if (sc < best_split) {
      best_split = sc;
      split_action = 2 + axis;
    }
  }
  if (split_action != 0 && best_split < kSplitGain * ev.cost) {
    ev.cost = best_split;
    ev.action = split_action;
    ev.choice.reset();
  }
  const double cost = ev.cost;
  memo.emplace(key, std::move(ev));
  return cost;
}

void emit_plan(const PlanCtx& c, const BoxST& box, const MemoMap& memo,
               const StatsMemo& stats, std::vector<LeafPlan>& leaves,
               long& skipped) {
  const NodeEval& ev = memo.at(box_key(box));
  if (ev.action >= 2) {
    BoxST b1, b2;
    bisect(box, ev.action == 3, b1, b2);
    emit_plan(c, b1, memo, stats, leaves, skipped);
    emit_plan(c, b2, memo, stats, leaves, skipped);
    return;
  }
  const BoxStats& st = stats.at(box_key(box));
  if (ev.action == 1) {
    LeafPlan lp;
    lp.box = box;
    lp.p0 = st.p0;
    lp.b0 = st.b0;
    lp.qsign = ev.choice->q0;
    lp.lam1 = ev.choice->lam1;
    lp.lam2 = ev.choice->lam2;
    lp.npc = ev.choice->npc;
    lp.onset = ev.choice->onset;
    lp.eps_patch = ev.choice->eps_patch;
    lp.window_r = std::abs(st.b0);
    lp.open_top = box.k1 == c.g.slices() - 1;
    leaves.push_back(lp);
  } else if (st.n1 > 0) {
    ++skipped;
  }
}

}  // namespace

double select_r_tilde(const Profile& p, const Vec& u0, const GridST& g, double given) {
  const double M0 = max_abs_grad(g, u0);
  if (M0 <= 1e-12)
    throw HypothesisFailed("initial data is constant: no level to refine around");
  const double m0 = min_abs_grad(g, u0);
  const double m0p = std::max(m0, p.s_zero);
  const double lo = p.sigma(m0p);
  const double hi = p.sigma_at_s_plus();
  if (!(lo < hi))
    throw HypothesisFailed(
        "initial gradient too steep: sigma(max(min|Du0|, s_zero)) leaves no "
        "admissible level below sigma(s_plus)");
  if (given > 0) {
    if (!(lo < given && given < hi)) {
      std::ostringstream os;
      os << "requested level " << given << " outside the admissible interval ("
         << lo << ", " << hi << ")";
      throw HypothesisFailed(os.str());
    }
    return given;
  }
  return 0.5 * (lo + hi);
}

std::vector<Window> build_cover(const Profile& p, double r_tilde, SolutionType type,
                                int dim, double eps_cover, unsigned seed) {
  if (!(eps_cover > 0) || !(eps_cover < 0.5 * r_tilde))
    throw ConfigError("build_cover: eps_cover must lie in (0, r_tilde/2)");
  const double right_end = r_tilde - eps_cover;
  auto width = [&](double r) -> double {
    double mu;
    try {
      mu = estimate_mu_prime(p, r, type, dim, seed);
    } catch (const NoWindow&) {
      return 0;
    }
    return std::min({mu, 0.999 * r, 0.999 * (r_tilde - r)});
  };

  std::vector<Window> out;
  double left = eps_cover;
  double w_prev = std::numeric_limits<double>::infinity();
  while (left < right_end) {
    // Largest r whose window still reaches back over `left` with the
    // required overlap, found by bisection on the reach condition.
    auto good = [&](double r) {
      const double mu = width(r);
      if (mu <= 0) return false;
      const double overlap = 0.1 * std::min(mu, w_prev);
      return r - mu <= left - std::min(overlap, left * 0.5);
    };
    double lo = left, hi = right_end;
    if (!good(lo)) {
      // The window at the frontier itself fails: no progress is possible.
      throw CoverFailed("level window vanished at r = " + std::to_string(left));
    }
    for (int it = 0; it < 60 && hi - lo > 1e-9 * r_tilde; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (good(mid))
        lo = mid;
      else
        hi = mid;
    }
    const double r = lo;
    const double mu = width(r);
    if (!(mu > 0) || r + mu <= left * (1 + 1e-6))
      throw CoverFailed("cover stalled at r = " + std::to_string(left) +
                        ": window growth below 1e-6 relative");
    if (!out.empty() && r <= out.back().r)
      throw CoverFailed("cover lost monotonicity at r = " + std::to_string(r));
    out.push_back(Window{r, mu, type});
    w_prev = mu;
    left = r + mu;
    if (out.size() > 500) throw CoverFailed("cover exceeded 500 windows");
  }
  return out;
}

StatePair build_initial_state(const RunPlan& plan, double r_tilde,
                              const std::vector<Window>& cover) {
  const GridST& g = plan.grid;
  g.validate();
  if (plan.u0.size() != g.cells())
    throw ConfigError("build_initial_state: u0 size does not match the grid");

  const ModifiedProfile mp = modify_profile(plan.profile, r_tilde);
  BoundaryFunctionPair bp =
      make_boundary_pair(ParabolicFlux::from_modified(mp), plan.u0, g);

  StatePair st;
  st.grid = g;
  st.u = bp.u_star;
  st.v = bp.v_star;
  st.u_base = bp.u_star;
  st.v_base = bp.v_star;
  st.masks = partition_domain(g, bp.u_star, r_tilde, plan.profile);
  st.profile = plan.profile;
  st.r_tilde = r_tilde;
  st.type = plan.type;
  st.m = bp.m;
  st.pass_index = 0;

  // Admissibility audit: sampled region-1 nodes must sit inside the level
  // cover and connect through a rank-one frame.
  if (g.n == 1 && st.masks.count[1] > 0) {
    const FieldTables tab = make_tables(g, st.u, st.v);
    const double eps_cover = plan.eps_cover_rel * r_tilde;
    const long stride = std::max<long>(1, st.masks.count[1] / 1000);
    long seen = 0;
    for (int k = 0; k < g.slices(); ++k)
      for (int i = 0; i < g.nx; ++i) {
        if (st.masks.code(i, k) != 1) continue;
        if (seen++ % stride != 0) continue;
        const double b0 = tab.vt(i, k);
        const double r_hat = std::abs(b0);
        if (r_hat <= eps_cover || r_hat >= r_tilde - eps_cover) continue;
        const int wk = find_window(cover, r_hat);
        if (wk < 0) {
          double nearest = std::numeric_limits<double>::infinity();
          for (const Window& w : cover)
            nearest = std::min(nearest, std::abs(r_hat - w.r) - w.mu);
          std::ostringstream os;
          os << "node (" << i << "," << k << ") level " << r_hat
             << " not inside any cover window (nearest gap " << nearest << ")";
          throw AuditFailed(os.str());
        }
        Vec pv(1), bv(1);
        pv << tab.du(i, k);
        bv << b0;
        try {
          solve_frame(plan.profile, cover[wk], DiagonalPoint{pv, bv}, plan.seed);
        } catch (const NotInS& e) {
          std::ostringstream os;
          os << "node (" << i << "," << k << ") gradient " << pv(0) << ", slope "
             << b0 << " no rank-one connection in window r = " << cover[wk].r
             << ": " << e.what();
          throw AuditFailed(os.str());
        }
      }
  }
  return st;
}

PassAudit refine_once(StatePair& state, const RunPlan& plan,
                      const std::vector<Window>& cover, double eps) {
  const GridST& g = state.grid;
  if (!(eps > 0)) throw OutOfRange("refine_once: eps must be positive");
  if (g.n != 1 && state.masks.count[1] > 0)
    throw ConfigError("refine_once: the patch tiler is one-dimensional; "
                      "two-dimensional refinement is not wired up");

  // Rebuild from the pristine pair: each pass is an independent refinement
  // of (u*, v*), not a perturbation of the previous pass.
  state.u.a = state.u_base.a;
  state.v.fx = state.v_base.fx;
  if (g.n == 2) state.v.fy = state.v_base.fy;

  PassAudit audit;
  audit.pass = state.pass_index + 1;
  audit.eps = eps;

  long skipped = 0;
  if (state.masks.count[1] > 0) {
    const FieldTables tab = make_tables(g, state.u_base, state.v_base);
    const GraphDistance gdist(state.profile, state.r_tilde, state.type);
    PlanCtx ctx{g,   state.profile, plan,
                cover, tab,         state.masks,
                gdist, state.r_tilde, eps,
                plan.eps_cover_rel * state.r_tilde, state.m};

    std::vector<LeafPlan> leaves;
    MemoMap memo;
    StatsMemo stats;
    BoxST root;
    root.i0 = 0;
    root.i1 = g.nx;
    root.j0 = 0;
    root.j1 = 1;
    root.k0 = 0;
    root.k1 = g.slices() - 1;
    plan_cost(ctx, root, memo, stats);
    emit_plan(ctx, root, memo, stats, leaves, skipped);

    if (std::getenv("NFLAB_PLAN_DEBUG")) {
      std::function<void(const BoxST&)> walk = [&](const BoxST& bx) {
        const NodeEval& ev = memo.at(box_key(bx));
        if (ev.action >= 2) {
          BoxST b1, b2;
          bisect(bx, ev.action == 3, b1, b2);
          walk(b1);
          walk(b2);
          return;
        }
        const BoxStats& s = stats.at(box_key(bx));
        std::fprintf(stderr,
                     "plan x[%3d,%3d) k[%3d,%3d] %s unp=%.5f n1=%ld p0=%+.3f "
                     "b0=%+.4f",
                     bx.i0, bx.i1, bx.k0, bx.k1,
                     ev.action == 1 ? "PATCH" : "skip ", s.unp, s.n1, s.p0,
                     s.b0);
        if (ev.choice)
          std::fprintf(stderr, " score=%.5f npc=%d onset=%d lam=(%.3f,%.3f)",
                       ev.choice->score, ev.choice->npc, ev.choice->onset,
                       ev.choice->lam1, ev.choice->lam2);
        std::fprintf(stderr, "\n");
      };
      std::fprintf(stderr, "== pass %d plan (eps=%.3f) ==\n", audit.pass, eps);
      walk(root);
    }

    Vec q(1), gamma(1);
    gamma << 0;
    for (const LeafPlan& lp : leaves) {
      q << (lp.qsign >= 0 ? 1.0 : -1.0);
      LaminateOptions opt;
      opt.snap = true;
      opt.cells_per_period = lp.npc;
      opt.onset_slices = lp.onset;
      opt.open_top = lp.open_top;
      LaminatePatch patch;
      try {
        patch = build_laminate(q, plan.b_scale, gamma, lp.lam1, lp.lam2, lp.box, g,
                               lp.eps_patch, opt);
      } catch (const BudgetInfeasible&) {
        ++skipped;
        continue;
      }
      const DivInverse ginv = div_right_inverse(patch.phi_c, lp.box, g);
      apply_patch(state.u, state.v, patch, ginv, g);

      PatchLogEntry log;
      log.box = lp.box;
      log.pass = audit.pass;
      log.r = lp.window_r;
      log.b = plan.b_scale;
      log.lam1 = patch.lam1;
      log.lam2 = patch.lam2;
      log.nu = patch.nu;
      log.eps_patch = lp.eps_patch;
      log.div_constant = ginv.constant;
      state.patches.push_back(log);
      ++audit.boxes;
    }
  }
  audit.skipped = static_cast<int>(skipped);

  // Measure the budgets this pass actually achieved.
  const int K = g.slices();
  audit.vol_t = g.space_volume() * g.T;
  double vol1 = 0;
  for (int k = 0; k < K; ++k) {
    const double wt = (k == 0 || k == K - 1) ? 0.5 : 1.0;
    long n1 = 0;
    for (int c = 0; c < g.cells(); ++c)
      if (state.masks.code(c, k) == 1) ++n1;
    vol1 += wt * g.dt * g.cell_volume() * static_cast<double>(n1);
  }
  audit.vol_1 = vol1;

  audit.flux_residual = flux_residual(state, state.profile);
  const SetDistanceReport sdr =
      set_distance_report(state, state.r_tilde, state.profile, state.type);
  audit.band_int = sdr.band_int;
  audit.band_max = sdr.band_max;
  audit.graph_int = sdr.graph_int;
  audit.graph_max = sdr.graph_max;
  audit.mass = mass_drift(state);
  measure_caps(state, audit.cap_ut, audit.cap_vt);

  std::string binding;
  if (audit.flux_residual > eps * audit.vol_t) binding += "flux";
  if (audit.graph_int > eps * audit.vol_1) binding += binding.empty() ? "set-distance" : "+set-distance";
  if (audit.mass > 1e-10) binding += binding.empty() ? "mass" : "+mass";
  if (audit.cap_ut >= state.m) binding += binding.empty() ? "u_t-cap" : "+u_t-cap";
  audit.binding = binding;
  audit.complete = binding.empty();

  state.pass_index = audit.pass;
  state.flux_trace.push_back(audit.flux_residual);
  return audit;
}

RunResult iterate(const RunPlan& plan, const PassObserver& on_pass) {
  RunResult res;
  res.r_tilde = select_r_tilde(plan.profile, plan.u0, plan.grid, plan.r_tilde);
  const double eps_cover = plan.eps_cover_rel * res.r_tilde;
  res.cover = build_cover(plan.profile, res.r_tilde, plan.type, plan.grid.n,
                          eps_cover, plan.seed);
  res.state = build_initial_state(plan, res.r_tilde, res.cover);
  if (on_pass) on_pass(res.state);

  for (int j = 0; j < plan.passes; ++j) {
    const double eps_j = plan.epsilon0 / std::pow(2.0, j);
    PassAudit audit = refine_once(res.state, plan, res.cover, eps_j);
    if (j > 0) {
      const double prev = res.audits.back().flux_residual;
      if (audit.flux_residual > 1.1 * prev) {
        audit.complete = false;
        audit.binding += audit.binding.empty() ? "trace" : "+trace";
      }
    }
    res.audits.push_back(audit);
    if (on_pass) on_pass(res.state);
    if (!audit.complete) break;
  }
  res.report = full_report(res.state);
  return res;
}

RunResult general_existence(const RunPlan& plan, const PassObserver& on_pass) {
  const GridST& g = plan.grid;
  g.validate();
  if (plan.u0.size() != g.cells())
    throw ConfigError("general_existence: u0 size does not match the grid");
  const Vec u0n = normalize_initial(g, plan.u0);
  const double M0 = max_abs_grad(g, u0n);

  if (M0 <= 1e-12) {
    // Constant data: the constant pair is the solution, all residuals zero.
    RunResult res;
    res.state.grid = g;
    res.state.u = ScalarField(g);
    res.state.v = VecField(g);
    for (int k = 0; k < g.slices(); ++k) res.state.u.a.col(k) = u0n;
    res.state.u_base = res.state.u;
    res.state.v_base = res.state.v;
    res.state.profile = plan.profile;
    res.state.type = plan.type;
    res.r_tilde = 0.5 * plan.profile.sigma_at_s_plus();
    res.state.r_tilde = res.r_tilde;
    res.state.masks = partition_domain(g, res.state.u, res.r_tilde, plan.profile);
    res.state.m = 1;
    res.report = full_report(res.state);
    if (on_pass) on_pass(res.state);
    return res;
  }

  const double m0 = min_abs_grad(g, u0n);
  if (m0 >= plan.profile.s_plus) {
    // Steep data: classical monitored evolution with the true flux (the
    // modified profile agrees with it above the join).
    RunResult res;
    res.r_tilde = plan.r_tilde > 0 ? plan.r_tilde
                                   : 0.5 * plan.profile.sigma_at_s_plus();
    const ModifiedProfile mp = modify_profile(plan.profile, res.r_tilde);
    BoundaryFunctionPair bp =
        make_boundary_pair(ParabolicFlux::from_modified(mp), u0n, g);
    const BranchInverses bi = branch_inverses(plan.profile, res.r_tilde);
    const double s_bar = 0.5 * (plan.profile.s_zero + bi.s_plus_r);

    int k_bar = -1, i_bar = -1;
    for (int k = 1; k < g.slices() && k_bar < 0; ++k) {
      const Vec gx = cell_grad_x(g, bp.u_star.a.col(k));
      for (int c = 0; c < g.cells(); ++c) {
        const double dn = g.n == 2
                              ? std::hypot(gx(c), cell_grad_y(g, bp.u_star.a.col(k))(c))
                              : std::abs(gx(c));
        if (dn < s_bar) {
          k_bar = k;
          i_bar = c;
          break;
        }
      }
    }

    if (k_bar < 0) {
      // No crossing: the classical pair is already the answer.
      res.no_crossing = true;
      res.state.grid = g;
      res.state.u = bp.u_star;
      res.state.v = bp.v_star;
      res.state.u_base = bp.u_star;
      res.state.v_base = bp.v_star;
      res.state.masks = partition_domain(g, bp.u_star, res.r_tilde, plan.profile);
      res.state.profile = plan.profile;
      res.state.r_tilde = res.r_tilde;
      res.state.type = plan.type;
      res.state.m = bp.m;
      res.report = full_report(res.state);
      if (on_pass) on_pass(res.state);
      return res;
    }

    // Crossing: restart the refinement pipeline from the crossing slice and
    // concatenate; the second stage starts from exactly u*(., t_bar).
    res.crossed = true;
    res.t_bar = g.time(k_bar);
    res.x_bar = g.cellx(i_bar % g.nx);
    const int nt2 = g.nt - k_bar;
    if (nt2 < 2)
      throw NoSolution("crossing too close to the final time to restart");
    GridST g2 = g;
    g2.nt = nt2;
    g2.T = g.dt * nt2;

    RunPlan plan2 = plan;
    plan2.grid = g2;
    plan2.u0 = bp.u_star.a.col(k_bar);
    plan2.r_tilde = 0;  // reselect for the diffused data
    RunResult stage2 = iterate(plan2);

    res.cover = stage2.cover;
    res.audits = stage2.audits;
    res.r_tilde = stage2.r_tilde;

    StatePair st;
    st.grid = g;
    st.u = ScalarField(g);
    st.v = VecField(g);
    for (int k = 0; k < g.slices(); ++k) {
      if (k < k_bar) {
        st.u.a.col(k) = bp.u_star.a.col(k);
        st.v.fx.col(k) = bp.v_star.fx.col(k);
        if (g.n == 2) st.v.fy.col(k) = bp.v_star.fy.col(k);
      } else {
        st.u.a.col(k) = stage2.state.u.a.col(k - k_bar);
        st.v.fx.col(k) = stage2.state.v.fx.col(k - k_bar);
        if (g.n == 2) st.v.fy.col(k) = stage2.state.v.fy.col(k - k_bar);
      }
    }
    st.u_base = st.u;
    st.v_base = st.v;
    st.profile = plan.profile;
    st.r_tilde = stage2.r_tilde;
    st.type = plan.type;
    st.m = std::max(bp.m, stage2.state.m);
    st.masks = partition_domain(g, st.u, st.r_tilde, plan.profile);
    st.pass_index = stage2.state.pass_index;
    st.patches = stage2.state.patches;
    for (PatchLogEntry& pe : st.patches) {
      pe.box.k0 += k_bar;
      pe.box.k1 += k_bar;
    }
    st.flux_trace = stage2.state.flux_trace;
    res.state = std::move(st);
    res.report = full_report(res.state);
    if (on_pass) on_pass(res.state);
    return res;
  }

  return iterate(plan, on_pass);
}

}  // namespace nflab
