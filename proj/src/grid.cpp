#include "nflab/grid.hpp"

namespace nflab {

GridST GridST::line(int nx, double T, int nt, double lx) {
  GridST g;
  g.n = 1;
  g.nx = nx;
  g.ny = 1;
  g.lx = lx;
  g.ly = 1;
  g.hx = lx / nx;
  g.hy = 1;
  g.T = T;
  g.nt = nt;
  g.dt = T / nt;
  g.validate();
  return g;
}

GridST GridST::rect(int nx, int ny, double T, int nt, double lx, double ly) {
  GridST g;
  g.n = 2;
  g.nx = nx;
  g.ny = ny;
  g.lx = lx;
  g.ly = ly;
  g.hx = lx / nx;
  g.hy = ly / ny;
  g.T = T;
  g.nt = nt;
  g.dt = T / nt;
  g.validate();
  return g;
}

void GridST::validate() const {
  if (n != 1 && n != 2) throw ConfigError("grid: dimension must be 1 or 2");
  if (nx < 8 || (n == 2 && ny < 8)) throw ConfigError("grid: need >= 8 cells per axis");
  if (!(lx > 0) || (n == 2 && !(ly > 0))) throw ConfigError("grid: extent must be positive");
  if (nt < 1 || !(T > 0)) throw ConfigError("grid: need T > 0 and nt >= 1");
}

Vec face_grad_x(const GridST& g, const Eigen::Ref<const Vec>& cells) {
  Vec f = Vec::Zero(g.xfaces());
  for (int j = 0; j < g.ny; ++j)
    for (int i = 1; i < g.nx; ++i)
      f(g.fxid(i, j)) = (cells(g.cid(i, j)) - cells(g.cid(i - 1, j))) / g.hx;
  return f;
}

Vec face_grad_y(const GridST& g, const Eigen::Ref<const Vec>& cells) {
  if (g.n == 1) return Vec();
  Vec f = Vec::Zero(g.yfaces());
  for (int j = 1; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i)
      f(g.fyid(i, j)) = (cells(g.cid(i, j)) - cells(g.cid(i, j - 1))) / g.hy;
  return f;
}

Vec cell_div(const GridST& g, const Eigen::Ref<const Vec>& fx,
             const Eigen::Ref<const Vec>& fy) {
  Vec d = Vec::Zero(g.cells());
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i)
      d(g.cid(i, j)) = (fx(g.fxid(i + 1, j)) - fx(g.fxid(i, j))) / g.hx;
  if (g.n == 2)
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i)
        d(g.cid(i, j)) += (fy(g.fyid(i, j + 1)) - fy(g.fyid(i, j))) / g.hy;
  return d;
}

Vec cell_grad_x(const GridST& g, const Eigen::Ref<const Vec>& cells) {
  Vec d(g.cells());
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 1; i < g.nx; ++i)
      d(g.cid(i, j)) = (cells(g.cid(i, j)) - cells(g.cid(i - 1, j))) / g.hx;
    d(g.cid(0, j)) = (cells(g.cid(1, j)) - cells(g.cid(0, j))) / g.hx;
  }
  return d;
}

Vec cell_grad_y(const GridST& g, const Eigen::Ref<const Vec>& cells) {
  if (g.n == 1) return Vec::Zero(g.cells());
  Vec d(g.cells());
  for (int i = 0; i < g.nx; ++i) {
    for (int j = 1; j < g.ny; ++j)
      d(g.cid(i, j)) = (cells(g.cid(i, j)) - cells(g.cid(i, j - 1))) / g.hy;
    d(g.cid(i, 0)) = (cells(g.cid(i, 1)) - cells(g.cid(i, 0))) / g.hy;
  }
  return d;
}

Vec cell_grad_norm(const GridST& g, const Eigen::Ref<const Vec>& cells) {
  Vec gx = cell_grad_x(g, cells);
  if (g.n == 1) return gx.cwiseAbs();
  Vec gy = cell_grad_y(g, cells);
  return (gx.array().square() + gy.array().square()).sqrt();
}

double cell_integral(const GridST& g, const Eigen::Ref<const Vec>& cells) {
  return cells.sum() * g.cell_volume();
}

double cell_mean(const GridST& g, const Eigen::Ref<const Vec>& cells) {
  return cells.mean();
}

Vec sample_cells(const GridST& g, const std::function<double(double)>& f) {
  Vec u(g.cells());
  for (int i = 0; i < g.nx; ++i) u(i) = f(g.cellx(i));
  return u;
}

Vec sample_cells2(const GridST& g, const std::function<double(double, double)>& f) {
  Vec u(g.cells());
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) u(g.cid(i, j)) = f(g.cellx(i), g.celly(j));
  return u;
}

}  // namespace nflab
