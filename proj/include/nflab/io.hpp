#pragma once

#include <string>

#include "nflab/grid.hpp"
#include "nflab/scheme.hpp"

namespace nflab {

/// Writes `body` to `path`, replacing any previous content. Throws IoFailed
/// when the file cannot be opened or the write comes up short.
void write_text_file(const std::string& path, const std::string& body);

/// Long-format field snapshots, full double precision (%.17g), so a file
/// read back reproduces the field bit for bit.
///
/// Scalar (cell) layout:  x,t,value      (1D)   x,y,t,value      (2D)
/// Vector (face) layout:  x,t,vx         (1D)   axis,x,y,t,value (2D)
/// Rows run slice-major, then cell/face id; coordinates are centers for
/// cells and face positions for faces.
void write_scalar_csv(const std::string& path, const GridST& g, const ScalarField& u);
void write_vector_csv(const std::string& path, const GridST& g, const VecField& v);

/// Readers validate the header and the row count against the grid and
/// throw ConfigError with the offending line on any mismatch.
ScalarField read_scalar_csv(const std::string& path, const GridST& g);
VecField read_vector_csv(const std::string& path, const GridST& g);

/// A parsed run configuration: the executable plan plus the bookkeeping the
/// CLI needs to echo and to place artifacts.
struct RunConfig {
  RunPlan plan;
  std::string out_dir = "out";
  std::string profile_text = "quadratic-glued";
  std::string u0_text = "cos(pi*x)";
  bool r_auto = true;
};

/// Resolves a profile spec: a preset name when one matches, otherwise a
/// sigma(s) expression. Throws ConfigError when it is neither.
Profile resolve_profile_spec(const std::string& text);

/// Parses `key = value` lines ('#' starts a comment). Keys:
///   grid (NXxNT or NXxNYxNT, required), T (required), lx, ly,
///   profile (preset name or sigma expression in s), type (I|II),
///   u0 (expression in x[,y]), r_tilde (auto or level), epsilon0, passes,
///   eta, seed, out, and the planner knobs floor_nx, floor_nk, onset_min,
///   b_scale, eps_cover_rel.
/// Throws ConfigError naming the line and field of the first problem.
RunConfig parse_run_config(const std::string& text);

/// Reads `path` and parses it; the file name is prefixed to diagnostics.
RunConfig load_run_config(const std::string& path);

/// One refinement pass audit as a JSON object string.
std::string pass_audit_json(const PassAudit& a);

/// Whole-run summary: the echoed configuration, the resolved level and its
/// window cover, every pass audit, the final verification report, and the
/// patch ledger. Deterministic: equal runs serialize byte-identically.
std::string run_summary_json(const RunResult& res, const RunConfig& cfg);

}  // namespace nflab
