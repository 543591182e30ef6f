#pragma once

#include <stdexcept>
#include <string>

namespace nflab {

/// Base class for all failures raised by the pipeline. The `what()` string
/// is written to be surfaced verbatim by the CLI.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A diffusion profile violates the structural hypothesis (dip below zero,
/// missing landmarks, unbounded slope, ...). Carries the failing clause.
struct NotNonFourier : Error {
  using Error::Error;
};

/// Scalar argument outside the admissible interval of a branch inverse or
/// bound function.
struct OutOfRange : Error {
  using Error::Error;
};

/// Argument outside the compact domain on which a determinant or bound is
/// defined.
struct OutOfDomain : Error {
  using Error::Error;
};

/// Closed-form angle/bound has no real solution for the given radii.
struct NoSolution : Error {
  using Error::Error;
};

/// Monotone surrogate construction could not dominate the profile; message
/// reports the pinch point.
struct ConstructionFailed : Error {
  using Error::Error;
};

/// A point is not inside the open segment-union set of a window; the frame
/// solve found no admissible root.
struct NotInS : Error {
  using Error::Error;
};

/// No certified half-width exists at a level after all shrink attempts.
struct NoWindow : Error {
  using Error::Error;
};

/// Patch construction cannot meet its budgets at the current box size and
/// grid resolution; message names the binding constraint.
struct BudgetInfeasible : Error {
  using Error::Error;
};

/// Right-inverse input has a nonzero per-slice mean.
struct MeanNotZero : Error {
  using Error::Error;
};

/// Right-inverse input does not vanish on the box boundary collar.
struct BoundaryNotClean : Error {
  using Error::Error;
};

/// Initial data incompatible with the requested run (gradient range, mean).
struct HypothesisFailed : Error {
  using Error::Error;
};

/// Window cover construction stalled (vanishing certified widths).
struct CoverFailed : Error {
  using Error::Error;
};

/// Nonlinear implicit step failed to converge; message carries step index
/// and last residual.
struct NonlinearDivergence : Error {
  using Error::Error;
};

/// Discrete compatibility violated (e.g. Poisson data with nonzero mean).
struct Incompatible : Error {
  using Error::Error;
};

/// A state audit (membership, caps, locality) failed; message carries the
/// offending sample.
struct AuditFailed : Error {
  using Error::Error;
};

/// Monitored classical solve never re-entered the target gradient range.
struct NoCrossing : Error {
  using Error::Error;
};

/// Malformed configuration input (bad key, unparsable value).
struct ConfigError : Error {
  using Error::Error;
};

/// Filesystem failure reading or writing run artifacts.
struct IoFailed : Error {
  using Error::Error;
};

}  // namespace nflab
