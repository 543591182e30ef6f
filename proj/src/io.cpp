#include "nflab/io.hpp"

#include <json.hpp>

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "nflab/expr.hpp"

namespace nflab {

namespace {

void append_num(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoFailed("cannot open '" + path + "' for reading");
  std::ostringstream out;
  out << f.rdbuf();
  return out.str();
}

/// Splits into lines; the trailing newline does not produce an empty line.
std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    pos = nl + 1;
  }
  return lines;
}

double value_field(const std::string& line, int lineno, const std::string& path) {
  const std::size_t comma = line.rfind(',');
  if (comma == std::string::npos)
    throw ConfigError(path + ": line " + std::to_string(lineno) + ": expected a ',' before the value");
  const char* start = line.c_str() + comma + 1;
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(start, &end);
  if (end == start || *end != '\0' || errno == ERANGE)
    throw ConfigError(path + ": line " + std::to_string(lineno) + ": bad value '" +
                      std::string(start) + "'");
  return v;
}

}  // namespace

void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoFailed("cannot open '" + path + "' for writing");
  f << body;
  f.flush();
  if (!f.good()) throw IoFailed("short write to '" + path + "'");
}

void write_scalar_csv(const std::string& path, const GridST& g, const ScalarField& u) {
  std::string out;
  out.reserve(static_cast<std::size_t>(g.cells()) * g.slices() * 40 + 16);
  out += g.n == 2 ? "x,y,t,value\n" : "x,t,value\n";
  for (int k = 0; k < g.slices(); ++k)
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        append_num(out, g.cellx(i));
        out += ',';
        if (g.n == 2) {
          append_num(out, g.celly(j));
          out += ',';
        }
        append_num(out, g.time(k));
        out += ',';
        append_num(out, u.a(g.cid(i, j), k));
        out += '\n';
      }
  write_text_file(path, out);
}

void write_vector_csv(const std::string& path, const GridST& g, const VecField& v) {
  std::string out;
  out.reserve(static_cast<std::size_t>(g.xfaces() + g.yfaces()) * g.slices() * 44 + 16);
  if (g.n == 1) {
    out += "x,t,vx\n";
    for (int k = 0; k < g.slices(); ++k)
      for (int i = 0; i <= g.nx; ++i) {
        append_num(out, g.facex(i));
        out += ',';
        append_num(out, g.time(k));
        out += ',';
        append_num(out, v.fx(i, k));
        out += '\n';
      }
  } else {
    out += "axis,x,y,t,value\n";
    for (int k = 0; k < g.slices(); ++k)
      for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i <= g.nx; ++i) {
          out += "x,";
          append_num(out, g.facex(i));
          out += ',';
          append_num(out, g.celly(j));
          out += ',';
          append_num(out, g.time(k));
          out += ',';
          append_num(out, v.fx(g.fxid(i, j), k));
          out += '\n';
        }
    for (int k = 0; k < g.slices(); ++k)
      for (int j = 0; j <= g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
          out += "y,";
          append_num(out, g.cellx(i));
          out += ',';
          append_num(out, g.facey(j));
          out += ',';
          append_num(out, g.time(k));
          out += ',';
          append_num(out, v.fy(g.fyid(i, j), k));
          out += '\n';
        }
  }
  write_text_file(path, out);
}

ScalarField read_scalar_csv(const std::string& path, const GridST& g) {
  const std::vector<std::string> lines = split_lines(read_text(path));
  const std::string header = g.n == 2 ? "x,y,t,value" : "x,t,value";
  if (lines.empty() || lines[0] != header)
    throw ConfigError(path + ": line 1: expected header '" + header + "'");
  const std::size_t want = static_cast<std::size_t>(g.cells()) * g.slices();
  if (lines.size() != want + 1)
    throw ConfigError(path + ": expected " + std::to_string(want) + " rows, found " +
                      std::to_string(lines.size() - 1));
  ScalarField u(g);
  std::size_t row = 1;
  for (int k = 0; k < g.slices(); ++k)
    for (int c = 0; c < g.cells(); ++c, ++row)
      u.a(c, k) = value_field(lines[row], static_cast<int>(row + 1), path);
  return u;
}

VecField read_vector_csv(const std::string& path, const GridST& g) {
  const std::vector<std::string> lines = split_lines(read_text(path));
  const std::string header = g.n == 2 ? "axis,x,y,t,value" : "x,t,vx";
  if (lines.empty() || lines[0] != header)
    throw ConfigError(path + ": line 1: expected header '" + header + "'");
  const std::size_t want =
      static_cast<std::size_t>(g.xfaces() + g.yfaces()) * g.slices();
  if (lines.size() != want + 1)
    throw ConfigError(path + ": expected " + std::to_string(want) + " rows, found " +
                      std::to_string(lines.size() - 1));
  VecField v(g);
  std::size_t row = 1;
  for (int k = 0; k < g.slices(); ++k)
    for (int f = 0; f < g.xfaces(); ++f, ++row)
      v.fx(f, k) = value_field(lines[row], static_cast<int>(row + 1), path);
  for (int k = 0; k < g.slices() && g.n == 2; ++k)
    for (int f = 0; f < g.yfaces(); ++f, ++row)
      v.fy(f, k) = value_field(lines[row], static_cast<int>(row + 1), path);
  return v;
}

namespace {

[[noreturn]] void bad_line(int line, const std::string& msg) {
  throw ConfigError("line " + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t");
  std::size_t b = s.find_last_not_of(" \t");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

double num_field(const std::string& value, int line, const std::string& field) {
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(value.c_str(), &end);
  if (end == value.c_str() || *end != '\0' || errno == ERANGE)
    bad_line(line, "field '" + field + "': expected a number, got '" + value + "'");
  return v;
}

int int_field(const std::string& value, int line, const std::string& field) {
  const double v = num_field(value, line, field);
  const int n = static_cast<int>(v);
  if (static_cast<double>(n) != v)
    bad_line(line, "field '" + field + "': expected an integer, got '" + value + "'");
  return n;
}

}  // namespace

Profile resolve_profile_spec(const std::string& text) {
  try {
    return preset_profile(text);
  } catch (const ConfigError&) {
  }
  try {
    return profile_from_expression(text);
  } catch (const ConfigError& e) {
    throw ConfigError("'" + text + "' is neither a preset nor a sigma expression (" +
                      e.what() + ")");
  }
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  int nx = 0, ny = 0, nt = 0, dim = 0;
  double T = 0, lx = 1, ly = 1;
  bool have_grid = false, have_T = false;
  int profile_line = 0, u0_line = 0;

  const std::vector<std::string> lines = split_lines(text);
  for (int line = 1; line <= static_cast<int>(lines.size()); ++line) {
    std::string s = lines[line - 1];
    if (std::size_t hash = s.find('#'); hash != std::string::npos) s.erase(hash);
    s = trim(s);
    if (s.empty()) continue;
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos) bad_line(line, "expected 'key = value'");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (key.empty()) bad_line(line, "expected 'key = value'");
    if (value.empty()) bad_line(line, "field '" + key + "': empty value");

    if (key == "profile") {
      cfg.profile_text = value;
      profile_line = line;
    } else if (key == "type") {
      if (value == "I")
        cfg.plan.type = SolutionType::ForwardForward;
      else if (value == "II")
        cfg.plan.type = SolutionType::ForwardBackward;
      else
        bad_line(line, "field 'type': expected I or II, got '" + value + "'");
    } else if (key == "grid") {
      std::vector<int> parts;
      std::size_t pos = 0;
      while (pos <= value.size()) {
        std::size_t sep = value.find('x', pos);
        if (sep == std::string::npos) sep = value.size();
        parts.push_back(int_field(trim(value.substr(pos, sep - pos)), line, "grid"));
        pos = sep + 1;
      }
      if (parts.size() != 2 && parts.size() != 3)
        bad_line(line, "field 'grid': expected NXxNT or NXxNYxNT, got '" + value + "'");
      for (int p : parts)
        if (p < 2) bad_line(line, "field 'grid': sizes must be at least 2");
      dim = static_cast<int>(parts.size()) - 1;
      nx = parts[0];
      ny = dim == 2 ? parts[1] : 1;
      nt = parts.back();
      have_grid = true;
    } else if (key == "T") {
      T = num_field(value, line, key);
      if (T <= 0) bad_line(line, "field 'T': must be positive");
      have_T = true;
    } else if (key == "lx" || key == "ly") {
      const double v = num_field(value, line, key);
      if (v <= 0) bad_line(line, "field '" + key + "': must be positive");
      (key == "lx" ? lx : ly) = v;
    } else if (key == "u0") {
      cfg.u0_text = value;
      u0_line = line;
    } else if (key == "r_tilde") {
      if (value == "auto") {
        cfg.r_auto = true;
        cfg.plan.r_tilde = 0;
      } else {
        const double v = num_field(value, line, key);
        if (v <= 0) bad_line(line, "field 'r_tilde': must be positive (or 'auto')");
        cfg.r_auto = false;
        cfg.plan.r_tilde = v;
      }
    } else if (key == "epsilon0") {
      cfg.plan.epsilon0 = num_field(value, line, key);
      if (cfg.plan.epsilon0 <= 0) bad_line(line, "field 'epsilon0': must be positive");
    } else if (key == "passes") {
      cfg.plan.passes = int_field(value, line, key);
      if (cfg.plan.passes < 1) bad_line(line, "field 'passes': must be at least 1");
    } else if (key == "eta") {
      cfg.plan.eta = num_field(value, line, key);
      if (cfg.plan.eta <= 0) bad_line(line, "field 'eta': must be positive");
    } else if (key == "seed") {
      const int v = int_field(value, line, key);
      if (v < 0) bad_line(line, "field 'seed': must be nonnegative");
      cfg.plan.seed = static_cast<unsigned>(v);
    } else if (key == "out") {
      cfg.out_dir = value;
    } else if (key == "floor_nx" || key == "floor_nk") {
      const int v = int_field(value, line, key);
      if (v < 2) bad_line(line, "field '" + key + "': must be at least 2");
      (key == "floor_nx" ? cfg.plan.floor_nx : cfg.plan.floor_nk) = v;
    } else if (key == "onset_min") {
      cfg.plan.onset_min = int_field(value, line, key);
      if (cfg.plan.onset_min < 0) bad_line(line, "field 'onset_min': must be nonnegative");
    } else if (key == "b_scale") {
      cfg.plan.b_scale = num_field(value, line, key);
      if (cfg.plan.b_scale < 0) bad_line(line, "field 'b_scale': must be nonnegative");
    } else if (key == "eps_cover_rel") {
      cfg.plan.eps_cover_rel = num_field(value, line, key);
      if (cfg.plan.eps_cover_rel <= 0 || cfg.plan.eps_cover_rel >= 0.5)
        bad_line(line, "field 'eps_cover_rel': must lie in (0, 0.5)");
    } else {
      bad_line(line, "unknown key '" + key + "'");
    }
  }

  if (!have_grid) throw ConfigError("missing required key 'grid'");
  if (!have_T) throw ConfigError("missing required key 'T'");
  GridST g = dim == 2 ? GridST::rect(nx, ny, T, nt, lx, ly) : GridST::line(nx, T, nt, lx);
  g.validate();
  cfg.plan.grid = g;

  try {
    cfg.plan.profile = resolve_profile_spec(cfg.profile_text);
  } catch (const ConfigError& e) {
    if (profile_line > 0) bad_line(profile_line, "field 'profile': " + std::string(e.what()));
    throw;
  }

  const std::vector<std::string> vars =
      g.n == 2 ? std::vector<std::string>{"x", "y"} : std::vector<std::string>{"x"};
  Expr u0e;
  try {
    u0e = Expr::parse(cfg.u0_text, vars);
  } catch (const ConfigError& e) {
    if (u0_line > 0) bad_line(u0_line, "field 'u0': " + std::string(e.what()));
    throw;
  }
  cfg.plan.u0 = g.n == 2
                    ? sample_cells2(g, [&](double x, double y) {
                        return u0e.eval({{"x", x}, {"y", y}});
                      })
                    : sample_cells(g, [&](double x) { return u0e.eval({{"x", x}}); });
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  try {
    return parse_run_config(read_text(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

namespace {

nlohmann::json audit_obj(const PassAudit& a) {
  return {{"pass", a.pass},
          {"eps", a.eps},
          {"boxes", a.boxes},
          {"skipped", a.skipped},
          {"volumes", {{"omega_t", a.vol_t}, {"omega_1", a.vol_1}}},
          {"flux_residual", a.flux_residual},
          {"band", {{"integral", a.band_int}, {"max", a.band_max}}},
          {"graph", {{"integral", a.graph_int}, {"max", a.graph_max}}},
          {"mass_drift", a.mass},
          {"caps", {{"ut", a.cap_ut}, {"vt", a.cap_vt}}},
          {"complete", a.complete},
          {"binding", a.binding}};
}

}  // namespace

std::string pass_audit_json(const PassAudit& a) { return audit_obj(a).dump(2); }

std::string run_summary_json(const RunResult& res, const RunConfig& cfg) {
  const GridST& g = cfg.plan.grid;
  nlohmann::json j;
  j["config"] = {{"profile", cfg.profile_text},
                 {"type", to_string(cfg.plan.type)},
                 {"grid",
                  {{"n", g.n},
                   {"nx", g.nx},
                   {"ny", g.ny},
                   {"nt", g.nt},
                   {"lx", g.lx},
                   {"ly", g.ly},
                   {"T", g.T}}},
                 {"u0", cfg.u0_text},
                 {"r_tilde", cfg.r_auto ? nlohmann::json("auto")
                                        : nlohmann::json(cfg.plan.r_tilde)},
                 {"epsilon0", cfg.plan.epsilon0},
                 {"passes", cfg.plan.passes},
                 {"eta", cfg.plan.eta},
                 {"seed", cfg.plan.seed}};
  j["r_tilde"] = res.r_tilde;
  j["cover"] = nlohmann::json::array();
  for (const Window& w : res.cover) j["cover"].push_back({{"r", w.r}, {"mu", w.mu}});
  j["passes"] = nlohmann::json::array();
  for (const PassAudit& a : res.audits) j["passes"].push_back(audit_obj(a));
  j["report"] = nlohmann::json::parse(report_to_json(res.report));
  nlohmann::json log = nlohmann::json::array();
  for (const PatchLogEntry& p : res.state.patches)
    log.push_back({{"box",
                    {{"i0", p.box.i0},
                     {"i1", p.box.i1},
                     {"j0", p.box.j0},
                     {"j1", p.box.j1},
                     {"k0", p.box.k0},
                     {"k1", p.box.k1}}},
                   {"pass", p.pass},
                   {"r", p.r},
                   {"b", p.b},
                   {"lam1", p.lam1},
                   {"lam2", p.lam2},
                   {"nu", p.nu},
                   {"eps", p.eps_patch},
                   {"div_constant", p.div_constant}});
  j["patches"] = {{"count", res.state.patches.size()}, {"log", std::move(log)}};
  if (res.crossed) j["crossing"] = {{"t_bar", res.t_bar}, {"x_bar", res.x_bar}};
  if (res.no_crossing) j["no_crossing"] = true;

  const double eps_last = cfg.plan.epsilon0 / std::pow(2.0, cfg.plan.passes - 1);
  const double vol_t =
      res.audits.empty() ? g.space_volume() * g.T : res.audits.back().vol_t;
  j["final"] = {{"eps", eps_last},
                {"flux_budget", eps_last * vol_t},
                {"flux_residual", res.report.flux_residual},
                {"met", res.report.flux_residual <= eps_last * vol_t}};
  return j.dump(2);
}

}  // namespace nflab
