#pragma once

#include <sstream>
#include <string>

#include "pipec/ir.hpp"

namespace pipec {

namespace detail {

inline int expr_prec(const Expr& e) {
  switch (e.kind) {
    case Expr::Kind::Add: return 1;
    case Expr::Kind::Mul:
    case Expr::Kind::FloorDiv:
    case Expr::Kind::Mod: return 2;
    default: return 3; // Var / Const / Min (call syntax)
  }
}

inline void print_expr(std::ostream& os, const Expr& e, int parentPrec, bool rightChild);

inline void print_child(std::ostream& os, const Expr& e, int parentPrec, bool rightChild) {
  // Parenthesize so that parse(print(e)) reproduces the tree exactly:
  // equal-precedence right children keep their grouping.
  int p = expr_prec(e);
  bool need = p < parentPrec || (p == parentPrec && rightChild);
  if (need) os << "(";
  print_expr(os, e, 0, false);
  if (need) os << ")";
}

inline void print_expr(std::ostream& os, const Expr& e, int, bool) {
  switch (e.kind) {
    case Expr::Kind::Var:
      os << e.name;
      return;
    case Expr::Kind::Const:
      os << e.value;
      return;
    case Expr::Kind::Min:
      os << "min(";
      print_expr(os, *e.lhs, 0, false);
      os << ", ";
      print_expr(os, *e.rhs, 0, false);
      os << ")";
      return;
    case Expr::Kind::Add:
      // a + (-1 * b) prints as a - b
      if (e.rhs->kind == Expr::Kind::Mul && e.rhs->lhs->kind == Expr::Kind::Const &&
          e.rhs->lhs->value == -1) {
        print_child(os, *e.lhs, 1, false);
        os << " - ";
        print_child(os, *e.rhs->rhs, 2, true);
        return;
      }
      print_child(os, *e.lhs, 1, false);
      os << " + ";
      print_child(os, *e.rhs, 1, true);
      return;
    case Expr::Kind::Mul:
      print_child(os, *e.lhs, 2, false);
      os << " * ";
      print_child(os, *e.rhs, 2, true);
      return;
    case Expr::Kind::FloorDiv:
      print_child(os, *e.lhs, 2, false);
      os << " / ";
      print_child(os, *e.rhs, 2, true);
      return;
    case Expr::Kind::Mod:
      print_child(os, *e.lhs, 2, false);
      os << " % ";
      print_child(os, *e.rhs, 2, true);
      return;
  }
}

inline void print_indices(std::ostream& os, const std::vector<ExprPtr>& idx) {
  os << "[";
  for (size_t i = 0; i < idx.size(); ++i) {
    if (i) os << ", ";
    print_expr(os, *idx[i], 0, false);
  }
  os << "]";
}

inline void print_stmt(std::ostream& os, const Stmt& s, int indent) {
  std::string pad(indent * 2, ' ');
  switch (s.kind) {
    case Stmt::Kind::For:
      os << pad << "for " << s.var << " " << loop_kind_name(s.loopKind) << " 0.." << s.extent
         << " {\n";
      for (const auto& c : s.body) print_stmt(os, *c, indent + 1);
      os << pad << "}\n";
      return;
    case Stmt::Kind::Block:
      os << pad << "{\n";
      for (const auto& c : s.body) print_stmt(os, *c, indent + 1);
      os << pad << "}\n";
      return;
    case Stmt::Kind::AsyncCopy:
      os << pad << "copy_async " << s.dstBuffer;
      print_indices(os, s.dstIndices);
      os << " <- " << s.srcBuffer;
      print_indices(os, s.srcIndices);
      os << ";\n";
      return;
    case Stmt::Kind::Compute:
      os << pad << s.dstBuffer;
      print_indices(os, s.dstIndices);
      os << " = " << s.opTag << "(";
      for (size_t i = 0; i < s.operands.size(); ++i) {
        if (i) os << ", ";
        os << s.operands[i].buffer;
        print_indices(os, s.operands[i].indices);
      }
      os << ") flops " << s.flopCount << ";\n";
      return;
    case Stmt::Kind::Sync:
      os << pad << sync_kind_name(s.syncKind) << " " << s.group << ";\n";
      return;
    case Stmt::Kind::Predicated:
      os << pad << "if ";
      print_expr(os, *s.cond, 0, false);
      os << " {\n";
      for (const auto& c : s.body) print_stmt(os, *c, indent + 1);
      os << pad << "}\n";
      return;
  }
}

inline void print_buffer(std::ostream& os, const BufferDecl& b) {
  os << "buffer " << b.name << " " << scope_name(b.scope) << " " << b.elemType << "[";
  for (size_t i = 0; i < b.shape.size(); ++i) {
    if (i) os << ",";
    os << b.shape[i];
  }
  os << "]";
  if (b.pipelineStages) os << " stages " << *b.pipelineStages;
  os << ";\n";
}

}  // namespace detail

inline std::string print_expr(const ExprPtr& e) {
  std::ostringstream os;
  detail::print_expr(os, *e, 0, false);
  return os.str();
}

inline std::string print_stmt(const StmtPtr& s) {
  std::ostringstream os;
  detail::print_stmt(os, *s, 0);
  return os.str();
}

// Canonical textual form. parse_program(print_program(p)) is structurally
// identical to p for valid programs.
inline std::string print_program(const Program& p) {
  std::ostringstream os;
  for (const auto& b : p.inputs) detail::print_buffer(os, b);
  for (const auto& b : p.outputs) detail::print_buffer(os, b);
  for (const auto& b : p.locals) detail::print_buffer(os, b);
  for (const auto& g : p.groups)
    os << "pipeline " << g.name << " " << scope_name(g.scope) << " capacity " << g.capacity
       << ";\n";
  if (!p.body.empty()) os << "\n";
  for (const auto& s : p.body) detail::print_stmt(os, *s, 0);
  return os.str();
}

}  // namespace pipec
