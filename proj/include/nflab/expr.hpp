#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "nflab/errors.hpp"

namespace nflab {

/// First-order dual number. Evaluating an expression with Dual{x,1} yields
/// the exact derivative in `d`, avoiding finite-difference noise.
struct Dual {
  double v = 0;
  double d = 0;
};

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator-(Dual a) { return {-a.v, -a.d}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Dual operator/(Dual a, Dual b) {
  return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)};
}

/// Parsed arithmetic expression over named scalar variables.
///
/// Grammar: numbers, identifiers, + - * / ^, parentheses, and the functions
/// sin cos tan exp log sqrt abs tanh sinh cosh atan. Constants `pi` and `e`.
/// `^` binds tighter than unary minus and associates to the right.
class Expr {
 public:
  /// Parses `text`; `vars` lists the admissible variable names.
  /// Throws ConfigError on syntax errors or unknown identifiers.
  static Expr parse(const std::string& text, const std::vector<std::string>& vars);

  double eval(const std::map<std::string, double>& env) const;
  Dual eval_dual(const std::map<std::string, Dual>& env) const;

  const std::string& text() const { return text_; }

  struct Node;

 private:
  std::shared_ptr<const Node> root_;
  std::string text_;
};

}  // namespace nflab
