#pragma once

#include <Eigen/Dense>
#include <functional>

#include "nflab/errors.hpp"

namespace nflab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Uniform space-time grid over (0,Lx)x(0,Ly)x(0,T), finite-volume layout:
/// scalars live at cell centers, vector fields at faces. 1D grids have ny=1
/// and no y-faces. Time has nt steps of size dt (nt+1 slices).
struct GridST {
  int n = 1;  // spatial dimension, 1 or 2
  int nx = 0, ny = 1;
  double lx = 1, ly = 1;
  double hx = 0, hy = 0;
  double T = 0, dt = 0;
  int nt = 0;

  static GridST line(int nx, double T, int nt, double lx = 1);
  static GridST rect(int nx, int ny, double T, int nt, double lx = 1, double ly = 1);

  int cells() const { return nx * ny; }
  int slices() const { return nt + 1; }
  int xfaces() const { return (nx + 1) * ny; }
  int yfaces() const { return n == 2 ? nx * (ny + 1) : 0; }
  double cell_volume() const { return n == 2 ? hx * hy : hx; }
  double space_volume() const { return n == 2 ? lx * ly : lx; }

  int cid(int i, int j = 0) const { return j * nx + i; }
  int fxid(int i, int j = 0) const { return j * (nx + 1) + i; }
  int fyid(int i, int j) const { return j * nx + i; }

  double cellx(int i) const { return (i + 0.5) * hx; }
  double celly(int j) const { return (j + 0.5) * hy; }
  double facex(int i) const { return i * hx; }
  double facey(int j) const { return j * hy; }
  double time(int k) const { return k * dt; }

  void validate() const;  // throws ConfigError on malformed grids
};

/// Scalar field: one column per time slice, one row per cell.
struct ScalarField {
  Mat a;
  ScalarField() = default;
  ScalarField(const GridST& g) : a(Mat::Zero(g.cells(), g.slices())) {}
};

/// Face vector field: fx on x-faces, fy on y-faces (empty in 1D).
struct VecField {
  Mat fx, fy;
  VecField() = default;
  VecField(const GridST& g)
      : fx(Mat::Zero(g.xfaces(), g.slices())),
        fy(g.n == 2 ? Mat::Zero(g.yfaces(), g.slices()) : Mat()) {}
};

/// Face gradients of a cell slice; boundary faces carry 0 (homogeneous
/// Neumann convention).
Vec face_grad_x(const GridST& g, const Eigen::Ref<const Vec>& cells);
Vec face_grad_y(const GridST& g, const Eigen::Ref<const Vec>& cells);

/// Divergence at cells from face values: exact telescoping sums.
Vec cell_div(const GridST& g, const Eigen::Ref<const Vec>& fx,
             const Eigen::Ref<const Vec>& fy);

/// Cell gradient: the left/bottom face difference (one-sided); the first
/// cell per row/column reuses the first interior face so boundary cells get
/// a genuine one-sided difference rather than the Neumann zero.
Vec cell_grad_x(const GridST& g, const Eigen::Ref<const Vec>& cells);
Vec cell_grad_y(const GridST& g, const Eigen::Ref<const Vec>& cells);

/// |Du| at cells assembled from the one-sided cell gradients.
Vec cell_grad_norm(const GridST& g, const Eigen::Ref<const Vec>& cells);

double cell_integral(const GridST& g, const Eigen::Ref<const Vec>& cells);
double cell_mean(const GridST& g, const Eigen::Ref<const Vec>& cells);

Vec sample_cells(const GridST& g, const std::function<double(double)>& f);
Vec sample_cells2(const GridST& g, const std::function<double(double, double)>& f);

}  // namespace nflab
