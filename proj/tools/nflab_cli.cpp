#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "nflab/io.hpp"
#include "nflab/scheme.hpp"

namespace fs = std::filesystem;
using namespace nflab;

namespace {

const char* kDemoConfig =
    "profile = quadratic-glued\n"
    "type = I\n"
    "grid = 256x256\n"
    "T = 12\n"
    "u0 = cos(pi*x)\n"
    "r_tilde = 1.125\n"
    "epsilon0 = 0.8\n"
    "passes = 3\n"
    "out = demo-out\n";

struct Overrides {
  std::string out, type;
  int passes = 0;
  int seed = -1;

  void apply(RunConfig& cfg) const {
    if (!out.empty()) cfg.out_dir = out;
    if (type == "I") cfg.plan.type = SolutionType::ForwardForward;
    if (type == "II") cfg.plan.type = SolutionType::ForwardBackward;
    if (passes > 0) cfg.plan.passes = passes;
    if (seed >= 0) cfg.plan.seed = static_cast<unsigned>(seed);
  }
};

void add_overrides(CLI::App* sub, Overrides& ov, bool with_passes = true) {
  sub->add_option("--out", ov.out, "output directory (overrides the config)");
  sub->add_option("--type", ov.type, "solution type (overrides the config)")
      ->check(CLI::IsMember({"I", "II"}));
  if (with_passes)
    sub->add_option("--passes", ov.passes, "refinement passes (overrides the config)")
        ->check(CLI::PositiveNumber);
  sub->add_option("--seed", ov.seed, "seed for randomized tie-breaks")
      ->check(CLI::NonNegativeNumber);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoFailed("cannot create output directory '" + dir + "': " + ec.message());
}

int cmd_inspect_profile(const std::string& spec, const std::vector<double>& rs) {
  const Profile p = resolve_profile_spec(spec);
  require_nf(p);
  std::printf("name, s_minus, s_zero, s_plus, sigma(s_minus), sigma(s_plus)\n");
  std::printf("%s, %.6f, %.6f, %.6f, %.6f, %.6f\n", p.name.c_str(), p.s_minus, p.s_zero,
              p.s_plus, p.sigma(p.s_minus), p.sigma(p.s_plus));
  if (rs.empty()) return 0;
  std::printf("r, s_plus(r), s_minus1(r), s_minus2(r)\n");
  for (double r : rs) {
    try {
      const BranchInverses bi = branch_inverses(p, r);
      std::printf("%g, %.6f, %.6f, %.6f\n", r, bi.s_plus_r, bi.s_minus1_r, bi.s_minus2_r);
    } catch (const Error& e) {
      std::printf("%g, error, %s\n", r, e.what());
    }
  }
  return 0;
}

int cmd_solve_classical(RunConfig cfg) {
  ensure_dir(cfg.out_dir);
  const GridST& g = cfg.plan.grid;
  const double r_tilde =
      select_r_tilde(cfg.plan.profile, cfg.plan.u0, g, cfg.plan.r_tilde);
  const ModifiedProfile mp = modify_profile(cfg.plan.profile, r_tilde);
  const BoundaryFunctionPair bp =
      make_boundary_pair(ParabolicFlux::from_modified(mp), cfg.plan.u0, g);
  const RegionMasks masks = partition_domain(g, bp.u_star, r_tilde, cfg.plan.profile);

  double div_res = 0;
  for (int k = 0; k < g.slices(); ++k) {
    const Vec d = cell_div(g, bp.v_star.fx.col(k),
                           g.n == 2 ? Vec(bp.v_star.fy.col(k)) : Vec()) -
                  bp.u_star.a.col(k);
    div_res = std::max(div_res, d.cwiseAbs().maxCoeff());
  }

  write_scalar_csv(cfg.out_dir + "/ustar.csv", g, bp.u_star);
  write_vector_csv(cfg.out_dir + "/vstar.csv", g, bp.v_star);
  nlohmann::json j{{"r_tilde", r_tilde},
                   {"M", bp.M},
                   {"m", bp.m},
                   {"div_residual_max", div_res},
                   {"region_cells",
                    {{"zero", masks.count[0]},
                     {"band", masks.count[1]},
                     {"edge", masks.count[2]},
                     {"classical", masks.count[3]}}}};
  write_text_file(cfg.out_dir + "/classical_report.json", j.dump(2) + "\n");
  std::printf("r_tilde %.6f, M %.6f, m %.6f, max |div v* - u*| %.3e\n", r_tilde, bp.M,
              bp.m, div_res);
  std::printf("wrote ustar.csv, vstar.csv, classical_report.json to %s\n",
              cfg.out_dir.c_str());
  return 0;
}

int cmd_refine(RunConfig cfg) {
  ensure_dir(cfg.out_dir);
  int snapshots = 0;
  const PassObserver snap = [&](const StatePair& st) {
    const std::string tag = cfg.out_dir + "/pass" + std::to_string(st.pass_index);
    write_scalar_csv(tag + "_u.csv", st.grid, st.u);
    write_vector_csv(tag + "_v.csv", st.grid, st.v);
    ++snapshots;
  };
  const RunResult res = general_existence(cfg.plan, snap);

  for (const PassAudit& a : res.audits) {
    write_text_file(cfg.out_dir + "/pass" + std::to_string(a.pass) + "_report.json",
                    pass_audit_json(a) + "\n");
    std::printf(
        "pass %d eps=%.4f boxes=%d skipped=%d flux=%.4f graph=%.4f %s%s\n", a.pass,
        a.eps, a.boxes, a.skipped, a.flux_residual, a.graph_int,
        a.complete ? "complete" : "incomplete:", a.complete ? "" : a.binding.c_str());
  }
  const std::string summary = run_summary_json(res, cfg);
  write_text_file(cfg.out_dir + "/summary.json", summary + "\n");

  const auto fin = nlohmann::json::parse(summary)["final"];
  std::printf("final flux residual %.4f vs budget %.4f: %s\n",
              fin["flux_residual"].get<double>(), fin["flux_budget"].get<double>(),
              fin["met"].get<bool>() ? "met" : "NOT met");
  if (res.crossed)
    std::printf("gradient crossing at t=%.4f, x=%.4f; refinement restarted there\n",
                res.t_bar, res.x_bar);
  if (res.no_crossing)
    std::printf("no gradient crossing: the classical pair is the solution\n");
  std::printf("wrote %d snapshots and summary.json to %s\n", snapshots,
              cfg.out_dir.c_str());
  if (!fin["met"].get<bool>()) {
    std::fprintf(stderr, "refinement incomplete: flux residual above the final budget\n");
    return 1;
  }
  return 0;
}

int cmd_verify(const RunConfig& cfg, std::string state_dir) {
  if (state_dir.empty()) state_dir = cfg.out_dir;
  const GridST& g = cfg.plan.grid;
  const double r_tilde =
      select_r_tilde(cfg.plan.profile, cfg.plan.u0, g, cfg.plan.r_tilde);
  const double eps_cover = cfg.plan.eps_cover_rel * r_tilde;
  const std::vector<Window> cover = build_cover(cfg.plan.profile, r_tilde,
                                                cfg.plan.type, g.n, eps_cover,
                                                cfg.plan.seed);
  StatePair st = build_initial_state(cfg.plan, r_tilde, cover);

  int pass = -1;
  for (int k = 0; k <= cfg.plan.passes; ++k)
    if (fs::exists(state_dir + "/pass" + std::to_string(k) + "_u.csv")) pass = k;
  if (pass < 0)
    throw IoFailed("no pass*_u.csv snapshots under '" + state_dir + "'");
  const std::string tag = state_dir + "/pass" + std::to_string(pass);
  st.u = read_scalar_csv(tag + "_u.csv", g);
  st.v = read_vector_csv(tag + "_v.csv", g);
  st.pass_index = pass;

  const VerificationReport rep = full_report(st);
  std::printf("%s\n", report_to_json(rep).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "numerical laboratory for eps-approximate Lipschitz solutions of "
      "u_t = div(A(Du)) with a non-monotone radial flux"};
  app.require_subcommand(1);

  auto* ip = app.add_subcommand("inspect-profile",
                                "print profile landmarks and branch inverses as CSV");
  std::string ip_profile = "quadratic-glued";
  std::vector<double> ip_levels;
  ip->add_option("--profile", ip_profile, "preset name or sigma(s) expression");
  ip->add_option("r", ip_levels, "flux levels to invert");

  std::string sc_config, rf_config, vf_config, vf_state;
  Overrides sc_ov, rf_ov, demo_ov;

  auto* sc = app.add_subcommand("solve-classical",
                                "run the monotone pre-solve and write (u*, v*)");
  sc->add_option("--config", sc_config, "run configuration file")->required();
  add_overrides(sc, sc_ov, false);

  auto* rf = app.add_subcommand("refine",
                                "full pipeline: pre-solve plus refinement passes");
  rf->add_option("--config", rf_config, "run configuration file")->required();
  add_overrides(rf, rf_ov);

  auto* vf = app.add_subcommand("verify",
                                "re-verify snapshots on disk against a configuration");
  vf->add_option("--config", vf_config, "run configuration file")->required();
  vf->add_option("--state", vf_state, "snapshot directory (default: the config's out)");

  auto* dm = app.add_subcommand("demo", "canned 1D run that meets its final budget");
  add_overrides(dm, demo_ov);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (ip->parsed()) return cmd_inspect_profile(ip_profile, ip_levels);
    if (sc->parsed()) {
      RunConfig cfg = load_run_config(sc_config);
      sc_ov.apply(cfg);
      return cmd_solve_classical(std::move(cfg));
    }
    if (rf->parsed()) {
      RunConfig cfg = load_run_config(rf_config);
      rf_ov.apply(cfg);
      return cmd_refine(std::move(cfg));
    }
    if (vf->parsed()) return cmd_verify(load_run_config(vf_config), vf_state);
    if (dm->parsed()) {
      RunConfig cfg = parse_run_config(kDemoConfig);
      demo_ov.apply(cfg);
      return cmd_refine(std::move(cfg));
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
