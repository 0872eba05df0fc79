#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "pipec/ir.hpp"

namespace pipec {

namespace detail {

struct Token {
  enum class Kind { Ident, Int, Sym, End };
  Kind kind;
  std::string text;
  int64_t value = 0;
  int line = 1, col = 1;
};

class Lexer {
 public:
  explicit Lexer(const std::string& src) : src_(src) { advance(); }

  const Token& peek() const { return tok_; }

  Token next() {
    Token t = tok_;
    advance();
    return t;
  }

 private:
  void advance() {
    skip_ws();
    tok_.line = line_;
    tok_.col = col_;
    if (pos_ >= src_.size()) {
      tok_.kind = Token::Kind::End;
      tok_.text = "<eof>";
      return;
    }
    char c = src_[pos_];
    if (isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t start = pos_;
      while (pos_ < src_.size() &&
             (isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
        take();
      tok_.kind = Token::Kind::Ident;
      tok_.text = src_.substr(start, pos_ - start);
      return;
    }
    if (isdigit(static_cast<unsigned char>(c))) {
      size_t start = pos_;
      while (pos_ < src_.size() && isdigit(static_cast<unsigned char>(src_[pos_]))) take();
      tok_.kind = Token::Kind::Int;
      tok_.text = src_.substr(start, pos_ - start);
      tok_.value = std::stoll(tok_.text);
      return;
    }
    // multi-char symbols
    if (c == '.' && pos_ + 1 < src_.size() && src_[pos_ + 1] == '.') {
      tok_.kind = Token::Kind::Sym;
      tok_.text = "..";
      take();
      take();
      return;
    }
    if (c == '<' && pos_ + 1 < src_.size() && src_[pos_ + 1] == '-') {
      tok_.kind = Token::Kind::Sym;
      tok_.text = "<-";
      take();
      take();
      return;
    }
    tok_.kind = Token::Kind::Sym;
    tok_.text = std::string(1, c);
    take();
  }

  void skip_ws() {
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') take();
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        take();
      } else {
        break;
      }
    }
  }

  void take() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  const std::string& src_;
  size_t pos_ = 0;
  int line_ = 1, col_ = 1;
  Token tok_;
};

inline int elem_type_bytes(const std::string& t, int line, int col) {
  if (t == "i8") return 1;
  if (t == "i16" || t == "f16") return 2;
  if (t == "i32" || t == "f32") return 4;
  if (t == "i64" || t == "f64") return 8;
  throw ParseError("unknown element type '" + t + "'", line, col);
}

class Parser {
 public:
  explicit Parser(const std::string& src) : lex_(src) {}

  Program parse() {
    // declarations
    while (lex_.peek().kind == Token::Kind::Ident &&
           (lex_.peek().text == "buffer" || lex_.peek().text == "pipeline")) {
      if (lex_.peek().text == "buffer")
        parse_buffer_decl();
      else
        parse_group_decl();
    }
    // statements
    while (lex_.peek().kind != Token::Kind::End) prog_.body.push_back(parse_stmt());
    classify_buffers();
    return std::move(prog_);
  }

 private:
  [[noreturn]] void fail(const std::string& msg, const Token& t) {
    throw ParseError(msg, t.line, t.col);
  }

  Token expect_ident() {
    Token t = lex_.next();
    if (t.kind != Token::Kind::Ident) fail("expected identifier, got '" + t.text + "'", t);
    return t;
  }

  Token expect_int() {
    Token t = lex_.next();
    if (t.kind != Token::Kind::Int) fail("expected integer, got '" + t.text + "'", t);
    return t;
  }

  void expect_sym(const std::string& s) {
    Token t = lex_.next();
    if (t.kind != Token::Kind::Sym || t.text != s)
      fail("expected '" + s + "', got '" + t.text + "'", t);
  }

  void expect_kw(const std::string& s) {
    Token t = lex_.next();
    if (t.kind != Token::Kind::Ident || t.text != s)
      fail("expected '" + s + "', got '" + t.text + "'", t);
  }

  bool peek_sym(const std::string& s) {
    return lex_.peek().kind == Token::Kind::Sym && lex_.peek().text == s;
  }

  bool peek_ident(const std::string& s) {
    return lex_.peek().kind == Token::Kind::Ident && lex_.peek().text == s;
  }

  Scope parse_scope(bool allowGlobal) {
    Token t = expect_ident();
    if (t.text == "global" && allowGlobal) return Scope::Global;
    if (t.text == "shared") return Scope::Shared;
    if (t.text == "register") return Scope::Register;
    fail("expected scope, got '" + t.text + "'", t);
  }

  void parse_buffer_decl() {
    Token kw = lex_.next(); // 'buffer'
    BufferDecl b;
    Token name = expect_ident();
    b.name = name.text;
    if (declared_.count(b.name)) fail("duplicate buffer name '" + b.name + "'", name);
    b.scope = parse_scope(true);
    Token ty = expect_ident();
    b.elemType = ty.text;
    b.elemBytes = elem_type_bytes(ty.text, ty.line, ty.col);
    expect_sym("[");
    while (true) {
      Token d = expect_int();
      if (d.value < 1) fail("buffer dimension must be >= 1", d);
      b.shape.push_back(d.value);
      if (peek_sym(",")) {
        lex_.next();
        continue;
      }
      break;
    }
    expect_sym("]");
    if (peek_ident("stages")) {
      lex_.next();
      Token s = expect_int();
      if (s.value < 2) fail("pipeline stages must be >= 2", s);
      b.pipelineStages = static_cast<int>(s.value);
    }
    expect_sym(";");
    declared_.insert(b.name);
    buffers_.push_back(b);
    (void)kw;
  }

  void parse_group_decl() {
    lex_.next(); // 'pipeline'
    PipelineGroupDecl g;
    Token name = expect_ident();
    g.name = name.text;
    if (groupNames_.count(g.name)) fail("duplicate pipeline group '" + g.name + "'", name);
    g.scope = parse_scope(false);
    expect_kw("capacity");
    Token c = expect_int();
    if (c.value < 1) fail("group capacity must be >= 1", c);
    g.capacity = static_cast<int>(c.value);
    expect_sym(";");
    groupNames_.insert(g.name);
    prog_.groups.push_back(g);
  }

  StmtPtr parse_stmt() {
    const Token& t = lex_.peek();
    if (t.kind == Token::Kind::Sym && t.text == "{") return parse_block();
    if (t.kind != Token::Kind::Ident) fail("expected statement, got '" + t.text + "'", t);
    if (t.text == "for") return parse_for();
    if (t.text == "if") return parse_if();
    if (t.text == "copy_async") return parse_copy();
    if (t.text == "producer_acquire" || t.text == "producer_commit" ||
        t.text == "consumer_wait" || t.text == "consumer_release")
      return parse_sync();
    return parse_compute();
  }

  StmtPtr parse_block() {
    expect_sym("{");
    std::vector<StmtPtr> body;
    while (!peek_sym("}")) body.push_back(parse_stmt());
    expect_sym("}");
    return make_block(std::move(body));
  }

  StmtPtr parse_for() {
    lex_.next(); // 'for'
    Token name = expect_ident();
    Token kindTok = expect_ident();
    LoopKind kind;
    if (kindTok.text == "seq")
      kind = LoopKind::Sequential;
    else if (kindTok.text == "par")
      kind = LoopKind::Parallel;
    else if (kindTok.text == "unroll")
      kind = LoopKind::Unrolled;
    else
      fail("expected loop kind seq|par|unroll, got '" + kindTok.text + "'", kindTok);
    Token lo = expect_int();
    if (lo.value != 0) fail("loop lower bound must be 0", lo);
    expect_sym("..");
    Token hi = expect_int();
    if (hi.value < 1) fail("zero-extent loop rejected", hi);
    boundVars_.push_back(name.text);
    expect_sym("{");
    std::vector<StmtPtr> body;
    while (!peek_sym("}")) body.push_back(parse_stmt());
    expect_sym("}");
    boundVars_.pop_back();
    return make_for(name.text, hi.value, kind, std::move(body));
  }

  StmtPtr parse_if() {
    lex_.next(); // 'if'
    ExprPtr cond = parse_expr();
    expect_sym("{");
    std::vector<StmtPtr> body;
    while (!peek_sym("}")) body.push_back(parse_stmt());
    expect_sym("}");
    return make_predicated(std::move(cond), std::move(body));
  }

  StmtPtr parse_copy() {
    lex_.next(); // 'copy_async'
    Token dst = expect_ident();
    const BufferDecl* db = require_buffer(dst);
    std::vector<ExprPtr> di = parse_index_list();
    expect_sym("<-");
    Token src = expect_ident();
    require_buffer(src);
    std::vector<ExprPtr> si = parse_index_list();
    expect_sym(";");
    return make_copy(dst.text, std::move(di), src.text, std::move(si), db->elemBytes);
  }

  StmtPtr parse_sync() {
    Token kw = lex_.next();
    SyncKind k = SyncKind::ProducerAcquire;
    if (kw.text == "producer_acquire") k = SyncKind::ProducerAcquire;
    if (kw.text == "producer_commit") k = SyncKind::ProducerCommit;
    if (kw.text == "consumer_wait") k = SyncKind::ConsumerWait;
    if (kw.text == "consumer_release") k = SyncKind::ConsumerRelease;
    Token g = expect_ident();
    if (!groupNames_.count(g.text)) fail("sync names undeclared pipeline group '" + g.text + "'", g);
    expect_sym(";");
    return make_sync(k, g.text);
  }

  StmtPtr parse_compute() {
    Token dst = expect_ident();
    require_buffer(dst);
    std::vector<ExprPtr> di = parse_index_list();
    expect_sym("=");
    Token tag = expect_ident();
    expect_sym("(");
    std::vector<ComputeOperand> ops;
    if (!peek_sym(")")) {
      while (true) {
        Token b = expect_ident();
        require_buffer(b);
        ComputeOperand op;
        op.buffer = b.text;
        op.indices = parse_index_list();
        ops.push_back(std::move(op));
        if (peek_sym(",")) {
          lex_.next();
          continue;
        }
        break;
      }
    }
    expect_sym(")");
    expect_kw("flops");
    Token fl = expect_int();
    expect_sym(";");
    return make_compute(dst.text, std::move(di), std::move(ops), tag.text, fl.value);
  }

  const BufferDecl* require_buffer(const Token& t) {
    for (const auto& b : buffers_)
      if (b.name == t.text) return &b;
    fail("reference to undeclared buffer '" + t.text + "'", t);
  }

  std::vector<ExprPtr> parse_index_list() {
    expect_sym("[");
    std::vector<ExprPtr> idx;
    while (true) {
      idx.push_back(parse_expr());
      if (peek_sym(",")) {
        lex_.next();
        continue;
      }
      break;
    }
    expect_sym("]");
    return idx;
  }

  // expr := term (('+'|'-') term)* ; term := unary (('*'|'/'|'%') unary)* ;
  // unary := '-' unary | atom ; atom := INT | NAME | min(expr, expr) | (expr)
  ExprPtr parse_expr() {
    ExprPtr e = parse_term();
    while (peek_sym("+") || peek_sym("-")) {
      bool plus = lex_.next().text == "+";
      ExprPtr r = parse_term();
      e = plus ? add(e, r) : sub(e, r);
    }
    return e;
  }

  ExprPtr parse_term() {
    ExprPtr e = parse_unary();
    while (peek_sym("*") || peek_sym("/") || peek_sym("%")) {
      std::string op = lex_.next().text;
      ExprPtr r = parse_unary();
      if (op == "*")
        e = mul(e, r);
      else if (op == "/")
        e = floordiv(e, r);
      else
        e = mod(e, r);
    }
    return e;
  }

  ExprPtr parse_unary() {
    if (peek_sym("-")) {
      Token minus = lex_.next();
      ExprPtr e = parse_unary();
      if (e->kind == Expr::Kind::Const) return lit(-e->value);
      (void)minus;
      return mul(lit(-1), e);
    }
    return parse_atom();
  }

  ExprPtr parse_atom() {
    Token t = lex_.next();
    if (t.kind == Token::Kind::Int) return lit(t.value);
    if (t.kind == Token::Kind::Sym && t.text == "(") {
      ExprPtr e = parse_expr();
      expect_sym(")");
      return e;
    }
    if (t.kind == Token::Kind::Ident) {
      if (t.text == "min") {
        expect_sym("(");
        ExprPtr a = parse_expr();
        expect_sym(",");
        ExprPtr b = parse_expr();
        expect_sym(")");
        return emin(a, b);
      }
      for (auto it = boundVars_.rbegin(); it != boundVars_.rend(); ++it)
        if (*it == t.text) return var(t.text);
      fail("unbound variable '" + t.text + "'", t);
    }
    fail("expected expression, got '" + t.text + "'", t);
  }

  void classify_buffers() {
    std::set<std::string> written;
    std::function<void(const Stmt&)> walk = [&](const Stmt& s) {
      if (s.kind == Stmt::Kind::AsyncCopy || s.kind == Stmt::Kind::Compute)
        written.insert(s.dstBuffer);
      for (const auto& c : s.body) walk(*c);
    };
    for (const auto& s : prog_.body) walk(*s);
    for (const auto& b : buffers_) {
      if (b.scope != Scope::Global)
        prog_.locals.push_back(b);
      else if (written.count(b.name))
        prog_.outputs.push_back(b);
      else
        prog_.inputs.push_back(b);
    }
  }

  Lexer lex_;
  Program prog_;
  std::vector<BufferDecl> buffers_;
  std::set<std::string> declared_;
  std::set<std::string> groupNames_;
  std::vector<std::string> boundVars_;
};

}  // namespace detail

// Parses the textual IR. Rejects syntax errors (with line/column), duplicate
// buffer names, unbound variables and zero-extent loops.
inline Program parse_program(const std::string& text) {
  detail::Parser p(text);
  return p.parse();
}

}  // namespace pipec
