#include "nflab/expr.hpp"

#include <cctype>
#include <cstdlib>
#include <functional>

namespace nflab {

namespace {

enum class Op {
  Num, Var, Add, Sub, Mul, Div, Pow, Neg,
  Sin, Cos, Tan, Exp, Log, Sqrt, Abs, Tanh, Sinh, Cosh, Atan
};

const std::map<std::string, Op>& function_table() {
  static const std::map<std::string, Op> t = {
      {"sin", Op::Sin},   {"cos", Op::Cos},   {"tan", Op::Tan},
      {"exp", Op::Exp},   {"log", Op::Log},   {"sqrt", Op::Sqrt},
      {"abs", Op::Abs},   {"tanh", Op::Tanh}, {"sinh", Op::Sinh},
      {"cosh", Op::Cosh}, {"atan", Op::Atan}};
  return t;
}

}  // namespace

struct Expr::Node {
  Op op;
  double num = 0;
  std::string var;
  std::shared_ptr<const Node> a, b;
};

namespace {

using NodePtr = std::shared_ptr<const Expr::Node>;

struct Parser {
  const std::string& s;
  size_t pos = 0;
  const std::vector<std::string>& vars;

  void skip() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  }

  bool eat(char c) {
    skip();
    if (pos < s.size() && s[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& why) const {
    throw ConfigError("expression error at position " + std::to_string(pos) + ": " + why);
  }

  NodePtr make(Op op, NodePtr a = nullptr, NodePtr b = nullptr) {
    auto n = std::make_shared<Expr::Node>();
    n->op = op;
    n->a = std::move(a);
    n->b = std::move(b);
    return n;
  }

  NodePtr number(double v) {
    auto n = std::make_shared<Expr::Node>();
    n->op = Op::Num;
    n->num = v;
    return n;
  }

  NodePtr parse_sum() {
    auto lhs = parse_term();
    for (;;) {
      if (eat('+')) lhs = make(Op::Add, lhs, parse_term());
      else if (eat('-')) lhs = make(Op::Sub, lhs, parse_term());
      else return lhs;
    }
  }

  NodePtr parse_term() {
    auto lhs = parse_unary();
    for (;;) {
      if (eat('*')) lhs = make(Op::Mul, lhs, parse_unary());
      else if (eat('/')) lhs = make(Op::Div, lhs, parse_unary());
      else return lhs;
    }
  }

  NodePtr parse_unary() {
    if (eat('-')) return make(Op::Neg, parse_unary());
    if (eat('+')) return parse_unary();
    return parse_power();
  }

  NodePtr parse_power() {
    auto base = parse_atom();
    if (eat('^')) return make(Op::Pow, base, parse_unary());
    return base;
  }

  NodePtr parse_atom() {
    skip();
    if (pos >= s.size()) fail("unexpected end of input");
    char c = s[pos];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      char* end = nullptr;
      double v = std::strtod(s.c_str() + pos, &end);
      if (end == s.c_str() + pos) fail("bad number");
      pos = static_cast<size_t>(end - s.c_str());
      return number(v);
    }
    if (c == '(') {
      ++pos;
      auto inner = parse_sum();
      if (!eat(')')) fail("missing ')'");
      return inner;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t start = pos;
      while (pos < s.size() &&
             (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_'))
        ++pos;
      std::string name = s.substr(start, pos - start);
      auto fn = function_table().find(name);
      if (fn != function_table().end()) {
        if (!eat('(')) fail("function '" + name + "' needs '('");
        auto arg = parse_sum();
        if (!eat(')')) fail("missing ')' after '" + name + "'");
        return make(fn->second, arg);
      }
      if (name == "pi") return number(M_PI);
      if (name == "e") return number(M_E);
      for (const auto& v : vars)
        if (v == name) {
          auto n = std::make_shared<Expr::Node>();
          n->op = Op::Var;
          n->var = name;
          return n;
        }
      fail("unknown identifier '" + name + "'");
    }
    fail(std::string("unexpected character '") + c + "'");
  }
};

template <class T, class Env, class NumFn, class PowFn, class Fn1>
T eval_node(const Expr::Node& n, const Env& env, const NumFn& lift,
            const PowFn& pw, const Fn1& fn1) {
  auto rec = [&](const Expr::Node& m) { return eval_node<T>(m, env, lift, pw, fn1); };
  switch (n.op) {
    case Op::Num: return lift(n.num);
    case Op::Var: {
      auto it = env.find(n.var);
      if (it == env.end()) throw ConfigError("unbound variable '" + n.var + "'");
      return it->second;
    }
    case Op::Add: return rec(*n.a) + rec(*n.b);
    case Op::Sub: return rec(*n.a) - rec(*n.b);
    case Op::Mul: return rec(*n.a) * rec(*n.b);
    case Op::Div: return rec(*n.a) / rec(*n.b);
    case Op::Neg: return -rec(*n.a);
    case Op::Pow: return pw(rec(*n.a), rec(*n.b));
    default: return fn1(n.op, rec(*n.a));
  }
}

double apply1(Op op, double x) {
  switch (op) {
    case Op::Sin: return std::sin(x);
    case Op::Cos: return std::cos(x);
    case Op::Tan: return std::tan(x);
    case Op::Exp: return std::exp(x);
    case Op::Log: return std::log(x);
    case Op::Sqrt: return std::sqrt(x);
    case Op::Abs: return std::abs(x);
    case Op::Tanh: return std::tanh(x);
    case Op::Sinh: return std::sinh(x);
    case Op::Cosh: return std::cosh(x);
    case Op::Atan: return std::atan(x);
    default: throw ConfigError("bad op");
  }
}

Dual apply1(Op op, Dual x) {
  double v = apply1(op, x.v);
  double dv;
  switch (op) {
    case Op::Sin: dv = std::cos(x.v); break;
    case Op::Cos: dv = -std::sin(x.v); break;
    case Op::Tan: dv = 1.0 / (std::cos(x.v) * std::cos(x.v)); break;
    case Op::Exp: dv = v; break;
    case Op::Log: dv = 1.0 / x.v; break;
    case Op::Sqrt: dv = 0.5 / v; break;
    case Op::Abs: dv = x.v < 0 ? -1.0 : 1.0; break;
    case Op::Tanh: dv = 1.0 - v * v; break;
    case Op::Sinh: dv = std::cosh(x.v); break;
    case Op::Cosh: dv = std::sinh(x.v); break;
    case Op::Atan: dv = 1.0 / (1.0 + x.v * x.v); break;
    default: throw ConfigError("bad op");
  }
  return {v, dv * x.d};
}

}  // namespace

Expr Expr::parse(const std::string& text, const std::vector<std::string>& vars) {
  Parser p{text, 0, vars};
  Expr e;
  e.root_ = p.parse_sum();
  p.skip();
  if (p.pos != text.size()) p.fail("trailing input");
  e.text_ = text;
  return e;
}

double Expr::eval(const std::map<std::string, double>& env) const {
  return eval_node<double>(
      *root_, env, [](double v) { return v; },
      [](double a, double b) { return std::pow(a, b); },
      [](Op op, double x) { return apply1(op, x); });
}

Dual Expr::eval_dual(const std::map<std::string, Dual>& env) const {
  return eval_node<Dual>(
      *root_, env, [](double v) { return Dual{v, 0}; },
      [](Dual a, Dual b) {
        // a^b with b treated as constant unless it carries a derivative.
        double v = std::pow(a.v, b.v);
        double da = b.v * std::pow(a.v, b.v - 1) * a.d;
        double db = b.d != 0 ? v * std::log(a.v) * b.d : 0.0;
        return Dual{v, da + db};
      },
      [](Op op, Dual x) { return apply1(op, x); });
}

}  // namespace nflab
