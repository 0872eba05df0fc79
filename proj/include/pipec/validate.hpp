#pragma once

#include <set>
#include <string>
#include <vector>

#include "pipec/ir.hpp"

namespace pipec {

struct Diagnostic {
  std::string path;
  std::string message;
};

namespace detail {

struct Validator {
  const Program& p;
  std::vector<Diagnostic>& diags;
  std::vector<std::string> boundVars;

  void report(const std::string& path, const std::string& msg) { diags.push_back({path, msg}); }

  bool bound(const std::string& name) const {
    for (const auto& v : boundVars)
      if (v == name) return true;
    return false;
  }

  void check_expr(const ExprPtr& e, const std::string& path) {
    switch (e->kind) {
      case Expr::Kind::Var:
        if (!bound(e->name)) report(path, "unbound variable '" + e->name + "'");
        return;
      case Expr::Kind::Const:
        return;
      case Expr::Kind::FloorDiv:
      case Expr::Kind::Mod: {
        check_expr(e->lhs, path);
        check_expr(e->rhs, path);
        ExprPtr d;
        try {
          d = simplify(e->rhs);
        } catch (const ValidationError& err) {
          report(path, err.what());
          return;
        }
        if (d->kind != Expr::Kind::Const)
          report(path, "divisor must simplify to a constant");
        else if (d->value <= 0)
          report(path, "divisor must be strictly positive");
        return;
      }
      default:
        check_expr(e->lhs, path);
        check_expr(e->rhs, path);
        return;
    }
  }

  void check_indices(const std::vector<ExprPtr>& idx, const std::string& bufName,
                     const std::string& path) {
    const BufferDecl* b = p.find_buffer(bufName);
    if (!b) {
      report(path, "reference to undeclared buffer '" + bufName + "'");
      return;
    }
    if (idx.size() != b->shape.size())
      report(path, "buffer '" + bufName + "' has rank " + std::to_string(b->shape.size()) +
                       " but is indexed with " + std::to_string(idx.size()) + " indices");
    for (const auto& e : idx) check_expr(e, path);
  }

  void check_stmt(const Stmt& s, const std::string& path) {
    switch (s.kind) {
      case Stmt::Kind::For: {
        if (s.extent < 1) report(path, "zero-extent loop rejected");
        if (bound(s.var)) report(path, "loop variable '" + s.var + "' shadows an enclosing loop");
        boundVars.push_back(s.var);
        for (size_t i = 0; i < s.body.size(); ++i)
          check_stmt(*s.body[i], path + "/for(" + s.var + ")[" + std::to_string(i) + "]");
        boundVars.pop_back();
        return;
      }
      case Stmt::Kind::Block:
        for (size_t i = 0; i < s.body.size(); ++i)
          check_stmt(*s.body[i], path + "/block[" + std::to_string(i) + "]");
        return;
      case Stmt::Kind::AsyncCopy: {
        const BufferDecl* dst = p.find_buffer(s.dstBuffer);
        const BufferDecl* src = p.find_buffer(s.srcBuffer);
        if (dst && src && scope_level(dst->scope) >= scope_level(src->scope))
          report(path, "copy direction violates hierarchy (" + std::string(scope_name(src->scope)) +
                           " -> " + scope_name(dst->scope) + ")");
        check_indices(s.dstIndices, s.dstBuffer, path);
        check_indices(s.srcIndices, s.srcBuffer, path);
        return;
      }
      case Stmt::Kind::Compute:
        check_indices(s.dstIndices, s.dstBuffer, path);
        for (const auto& op : s.operands) check_indices(op.indices, op.buffer, path);
        return;
      case Stmt::Kind::Sync:
        if (!p.find_group(s.group))
          report(path, "sync names undeclared pipeline group '" + s.group + "'");
        return;
      case Stmt::Kind::Predicated:
        check_expr(s.cond, path);
        for (size_t i = 0; i < s.body.size(); ++i)
          check_stmt(*s.body[i], path + "/if[" + std::to_string(i) + "]");
        return;
    }
  }
};

}  // namespace detail

// Structural validation. Returns an empty list iff all Program and Stmt
// invariants hold; diagnostics carry a statement path plus message.
inline std::vector<Diagnostic> validate(const Program& p) {
  std::vector<Diagnostic> diags;
  std::set<std::string> names;
  auto check_decl = [&](const BufferDecl& b) {
    if (!names.insert(b.name).second)
      diags.push_back({"decl(" + b.name + ")", "duplicate buffer name"});
    if (b.shape.empty()) diags.push_back({"decl(" + b.name + ")", "buffer must have rank >= 1"});
    for (int64_t d : b.shape)
      if (d < 1) diags.push_back({"decl(" + b.name + ")", "buffer dimensions must be >= 1"});
    if (b.elemBytes < 1) diags.push_back({"decl(" + b.name + ")", "element size must be positive"});
    if (b.pipelineStages) {
      if (*b.pipelineStages < 2)
        diags.push_back({"decl(" + b.name + ")", "pipeline stages must be >= 2"});
      if (b.scope == Scope::Global)
        diags.push_back({"decl(" + b.name + ")", "global buffers never carry pipeline stages"});
    }
  };
  for (const auto& b : p.inputs) check_decl(b);
  for (const auto& b : p.outputs) check_decl(b);
  for (const auto& b : p.locals) check_decl(b);
  for (const auto& b : p.inputs)
    if (b.scope != Scope::Global)
      diags.push_back({"decl(" + b.name + ")", "program inputs must be global"});
  for (const auto& b : p.outputs)
    if (b.scope != Scope::Global)
      diags.push_back({"decl(" + b.name + ")", "program outputs must be global"});

  std::set<std::string> groupNames;
  for (const auto& g : p.groups) {
    if (!groupNames.insert(g.name).second)
      diags.push_back({"group(" + g.name + ")", "duplicate pipeline group"});
    if (g.capacity < 1) diags.push_back({"group(" + g.name + ")", "capacity must be >= 1"});
  }

  detail::Validator v{p, diags, {}};
  for (size_t i = 0; i < p.body.size(); ++i)
    v.check_stmt(*p.body[i], "body[" + std::to_string(i) + "]");
  return diags;
}

inline void require_valid(const Program& p, const std::string& what) {
  auto diags = validate(p);
  if (!diags.empty()) {
    std::string msg = what + ": " + diags[0].path + ": " + diags[0].message;
    if (diags.size() > 1) msg += " (+" + std::to_string(diags.size() - 1) + " more)";
    throw ValidationError(msg);
  }
}

}  // namespace pipec
