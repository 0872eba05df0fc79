#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pipec/common.hpp"

namespace pipec {

// Pure integer index expressions. Nodes are immutable and freely shared.
struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
  enum class Kind { Var, Const, Add, Mul, FloorDiv, Mod, Min };
  Kind kind;
  std::string name;  // Var
  int64_t value = 0; // Const
  ExprPtr lhs, rhs;
};

inline ExprPtr var(std::string name) {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Kind::Var;
  e->name = std::move(name);
  return e;
}

inline ExprPtr lit(int64_t v) {
  auto e = std::make_shared<Expr>();
  e->kind = Expr::Kind::Const;
  e->value = v;
  return e;
}

inline ExprPtr binop(Expr::Kind k, ExprPtr a, ExprPtr b) {
  auto e = std::make_shared<Expr>();
  e->kind = k;
  e->lhs = std::move(a);
  e->rhs = std::move(b);
  return e;
}

inline ExprPtr add(ExprPtr a, ExprPtr b) { return binop(Expr::Kind::Add, std::move(a), std::move(b)); }
inline ExprPtr mul(ExprPtr a, ExprPtr b) { return binop(Expr::Kind::Mul, std::move(a), std::move(b)); }
inline ExprPtr floordiv(ExprPtr a, ExprPtr b) { return binop(Expr::Kind::FloorDiv, std::move(a), std::move(b)); }
inline ExprPtr mod(ExprPtr a, ExprPtr b) { return binop(Expr::Kind::Mod, std::move(a), std::move(b)); }
inline ExprPtr emin(ExprPtr a, ExprPtr b) { return binop(Expr::Kind::Min, std::move(a), std::move(b)); }
inline ExprPtr sub(ExprPtr a, ExprPtr b) { return add(std::move(a), mul(lit(-1), std::move(b))); }

// Floor division / modulo with the sign convention used throughout: the
// remainder of a positive divisor is always in [0, divisor).
inline int64_t floordiv_val(int64_t a, int64_t b) {
  int64_t q = a / b, r = a % b;
  if (r != 0 && ((r < 0) != (b < 0))) --q;
  return q;
}

inline int64_t mod_val(int64_t a, int64_t b) { return a - floordiv_val(a, b) * b; }

using VarEnv = std::function<int64_t(const std::string&)>;

inline int64_t eval(const Expr& e, const VarEnv& env) {
  switch (e.kind) {
    case Expr::Kind::Var: return env(e.name);
    case Expr::Kind::Const: return e.value;
    case Expr::Kind::Add: return eval(*e.lhs, env) + eval(*e.rhs, env);
    case Expr::Kind::Mul: return eval(*e.lhs, env) * eval(*e.rhs, env);
    case Expr::Kind::FloorDiv: {
      int64_t d = eval(*e.rhs, env);
      if (d <= 0) throw InterpError("division by non-positive value");
      return floordiv_val(eval(*e.lhs, env), d);
    }
    case Expr::Kind::Mod: {
      int64_t d = eval(*e.rhs, env);
      if (d <= 0) throw InterpError("modulo by non-positive value");
      return mod_val(eval(*e.lhs, env), d);
    }
    case Expr::Kind::Min: {
      int64_t a = eval(*e.lhs, env), b = eval(*e.rhs, env);
      return a < b ? a : b;
    }
  }
  throw InterpError("bad expr kind");
}

inline bool is_const(const ExprPtr& e, int64_t v) {
  return e->kind == Expr::Kind::Const && e->value == v;
}

// Constant folding plus a handful of algebraic identities. Rewrites are
// value-preserving for every variable assignment; division/modulo by a
// non-positive constant is an error.
inline ExprPtr simplify(const ExprPtr& e) {
  if (e->kind == Expr::Kind::Var || e->kind == Expr::Kind::Const) return e;
  ExprPtr a = simplify(e->lhs);
  ExprPtr b = simplify(e->rhs);
  bool ca = a->kind == Expr::Kind::Const;
  bool cb = b->kind == Expr::Kind::Const;
  switch (e->kind) {
    case Expr::Kind::Add:
      if (ca && cb) return lit(a->value + b->value);
      if (is_const(a, 0)) return b;
      if (is_const(b, 0)) return a;
      break;
    case Expr::Kind::Mul:
      if (ca && cb) return lit(a->value * b->value);
      if (is_const(a, 0) || is_const(b, 0)) return lit(0);
      if (is_const(a, 1)) return b;
      if (is_const(b, 1)) return a;
      break;
    case Expr::Kind::FloorDiv:
      if (cb && b->value <= 0) throw ValidationError("division by non-positive constant");
      if (ca && cb) return lit(floordiv_val(a->value, b->value));
      if (is_const(b, 1)) return a;
      break;
    case Expr::Kind::Mod:
      if (cb && b->value <= 0) throw ValidationError("modulo by non-positive constant");
      if (ca && cb) return lit(mod_val(a->value, b->value));
      if (is_const(b, 1)) return lit(0);
      // (x % c) % c -> x % c
      if (cb && a->kind == Expr::Kind::Mod && a->rhs->kind == Expr::Kind::Const &&
          a->rhs->value == b->value)
        return a;
      break;
    case Expr::Kind::Min:
      if (ca && cb) return lit(a->value < b->value ? a->value : b->value);
      break;
    default:
      break;
  }
  if (a == e->lhs && b == e->rhs) return e;
  return binop(e->kind, a, b);
}

// Replaces free occurrences of the mapped variables. Shared subtrees are
// reused when untouched.
inline ExprPtr substitute(const ExprPtr& e,
                          const std::vector<std::pair<std::string, ExprPtr>>& map) {
  switch (e->kind) {
    case Expr::Kind::Var:
      for (const auto& [name, repl] : map)
        if (name == e->name) return repl;
      return e;
    case Expr::Kind::Const:
      return e;
    default: {
      ExprPtr a = substitute(e->lhs, map);
      ExprPtr b = substitute(e->rhs, map);
      if (a == e->lhs && b == e->rhs) return e;
      return binop(e->kind, a, b);
    }
  }
}

inline bool expr_equal(const Expr& a, const Expr& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case Expr::Kind::Var: return a.name == b.name;
    case Expr::Kind::Const: return a.value == b.value;
    default: return expr_equal(*a.lhs, *b.lhs) && expr_equal(*a.rhs, *b.rhs);
  }
}

inline void collect_vars(const ExprPtr& e, std::vector<std::string>& out) {
  if (e->kind == Expr::Kind::Var) {
    out.push_back(e->name);
    return;
  }
  if (e->kind == Expr::Kind::Const) return;
  collect_vars(e->lhs, out);
  collect_vars(e->rhs, out);
}

}  // namespace pipec
