#pragma once

#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pipec/ir.hpp"
#include "pipec/validate.hpp"

namespace pipec {

// Strict faults on reading data whose most recent write is still staged in an
// unflushed pipeline batch (and on uninitialized local reads / pipeline
// overflow). StaleRead instead returns the pre-copy value, so a missing sync
// surfaces as wrong results rather than a fault.
enum class ExecMode { Strict, StaleRead };

struct TraceEvent {
  int64_t step;
  SyncKind kind;
  std::string group;
  int64_t acquired, committed, waited, released;
  int64_t inflight; // committed - released after this event
};

struct RunResult {
  std::map<std::string, std::vector<int64_t>> outputs;
  std::vector<TraceEvent> trace;
  uint64_t seed = 0;
};

namespace detail {

enum class OpCode : int32_t { PushConst, PushVar, Add, Mul, Div, Mod, Min };

struct ExprCode {
  struct Op {
    OpCode code;
    int64_t imm; // constant or loop-stack slot
  };
  std::vector<Op> ops;
};

enum class TagId { Zero, Copy, Ew, Mma, MmaEwa };

struct AccessPlan {
  int buffer = -1;
  std::vector<ExprCode> indices;
};

struct StmtPlan {
  Stmt::Kind kind;
  // For / Block / Predicated
  int64_t extent = 0;
  std::vector<StmtPlan> body;
  ExprCode cond;
  // AsyncCopy
  AccessPlan dst, src;
  int dstGroup = -1;
  // Compute
  std::vector<AccessPlan> operands;
  TagId tag = TagId::Zero;
  // Sync
  SyncKind syncKind = SyncKind::ProducerAcquire;
  int group = -1;
};

struct BufferState {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<int64_t> strides;
  bool isLocal = false;
  int group = -1; // staging group, if any
  std::vector<int64_t> visible;
  std::vector<uint8_t> init;
  std::vector<int32_t> pending; // staged-but-unflushed writes per element
};

struct StagedWrite {
  int buffer;
  int64_t flat;
  int64_t value;
};

struct GroupState {
  std::string name;
  int capacity = 1;
  std::optional<std::vector<StagedWrite>> open;
  std::deque<std::vector<StagedWrite>> sealed; // committed, not yet released
  size_t flushed = 0;                          // prefix of `sealed` already made visible
  int64_t acquired = 0, committed = 0, waited = 0, released = 0;
};

class Machine {
 public:
  Machine(const Program& p, ExecMode mode) : prog_(p), mode_(mode) {
    for (const BufferDecl* b : p.all_buffers()) {
      BufferState st;
      st.name = b->name;
      st.shape = b->shape;
      st.strides.assign(b->shape.size(), 1);
      for (int i = static_cast<int>(b->shape.size()) - 2; i >= 0; --i)
        st.strides[i] = st.strides[i + 1] * b->shape[i + 1];
      st.isLocal = b->scope != Scope::Global;
      st.visible.assign(b->elem_count(), 0);
      if (st.isLocal) st.init.assign(b->elem_count(), 0);
      bufferIds_[b->name] = static_cast<int>(buffers_.size());
      buffers_.push_back(std::move(st));
    }
    for (const auto& g : p.groups) {
      GroupState gs;
      gs.name = g.name;
      gs.capacity = g.capacity;
      groupIds_[g.name] = static_cast<int>(groups_.size());
      groups_.push_back(std::move(gs));
    }
    // a buffer stages through the group that carries its name
    for (auto& b : buffers_) {
      auto it = groupIds_.find(b.name);
      if (it != groupIds_.end()) {
        b.group = it->second;
        b.pending.assign(b.visible.size(), 0);
      }
    }
    for (const auto& s : p.body) plan_.push_back(compile(*s));
  }

  void set_input(const std::string& name, const std::vector<int64_t>& data) {
    auto it = bufferIds_.find(name);
    if (it == bufferIds_.end()) throw InterpError("unbound input '" + name + "'");
    BufferState& b = buffers_[it->second];
    if (data.size() != b.visible.size())
      throw InterpError("input '" + name + "' has " + std::to_string(data.size()) +
                        " elements, expected " + std::to_string(b.visible.size()));
    b.visible = data;
  }

  void execute() {
    for (const auto& s : plan_) exec(s);
  }

  std::vector<int64_t>& storage(const std::string& name) { return buffers_[bufferIds_.at(name)].visible; }
  const std::vector<TraceEvent>& trace() const { return trace_; }

 private:
  // --- compilation -------------------------------------------------------

  ExprCode compile_expr(const ExprPtr& e) {
    ExprCode c;
    emit(*e, c);
    return c;
  }

  void emit(const Expr& e, ExprCode& c) {
    switch (e.kind) {
      case Expr::Kind::Const:
        c.ops.push_back({OpCode::PushConst, e.value});
        return;
      case Expr::Kind::Var: {
        for (int i = static_cast<int>(loopVars_.size()) - 1; i >= 0; --i) {
          if (loopVars_[i] == e.name) {
            c.ops.push_back({OpCode::PushVar, i});
            return;
          }
        }
        throw InterpError("unbound variable '" + e.name + "'");
      }
      case Expr::Kind::Add:
      case Expr::Kind::Mul:
      case Expr::Kind::FloorDiv:
      case Expr::Kind::Mod:
      case Expr::Kind::Min: {
        emit(*e.lhs, c);
        emit(*e.rhs, c);
        OpCode op = e.kind == Expr::Kind::Add   ? OpCode::Add
                    : e.kind == Expr::Kind::Mul ? OpCode::Mul
                    : e.kind == Expr::Kind::FloorDiv ? OpCode::Div
                    : e.kind == Expr::Kind::Mod ? OpCode::Mod
                                                : OpCode::Min;
        c.ops.push_back({op, 0});
        return;
      }
    }
  }

  AccessPlan compile_access(const std::string& buffer, const std::vector<ExprPtr>& idx) {
    auto it = bufferIds_.find(buffer);
    if (it == bufferIds_.end()) throw InterpError("undeclared buffer '" + buffer + "'");
    AccessPlan a;
    a.buffer = it->second;
    if (idx.size() != buffers_[a.buffer].shape.size())
      throw InterpError("rank mismatch on buffer '" + buffer + "'");
    for (const auto& e : idx) a.indices.push_back(compile_expr(e));
    return a;
  }

  StmtPlan compile(const Stmt& s) {
    StmtPlan pl;
    pl.kind = s.kind;
    switch (s.kind) {
      case Stmt::Kind::For:
        pl.extent = s.extent;
        loopVars_.push_back(s.var);
        for (const auto& c : s.body) pl.body.push_back(compile(*c));
        loopVars_.pop_back();
        return pl;
      case Stmt::Kind::Block:
        for (const auto& c : s.body) pl.body.push_back(compile(*c));
        return pl;
      case Stmt::Kind::Predicated:
        pl.cond = compile_expr(s.cond);
        for (const auto& c : s.body) pl.body.push_back(compile(*c));
        return pl;
      case Stmt::Kind::AsyncCopy:
        pl.dst = compile_access(s.dstBuffer, s.dstIndices);
        pl.src = compile_access(s.srcBuffer, s.srcIndices);
        pl.dstGroup = buffers_[pl.dst.buffer].group;
        return pl;
      case Stmt::Kind::Compute: {
        pl.dst = compile_access(s.dstBuffer, s.dstIndices);
        for (const auto& op : s.operands) pl.operands.push_back(compile_access(op.buffer, op.indices));
        size_t wantOps;
        if (s.opTag == "zero") {
          pl.tag = TagId::Zero;
          wantOps = 0;
        } else if (s.opTag == "copy") {
          pl.tag = TagId::Copy;
          wantOps = 1;
        } else if (s.opTag == "ew") {
          pl.tag = TagId::Ew;
          wantOps = 1;
        } else if (s.opTag == "mma") {
          pl.tag = TagId::Mma;
          wantOps = 3;
        } else if (s.opTag == "mma_ewa") {
          pl.tag = TagId::MmaEwa;
          wantOps = 3;
        } else {
          throw InterpError("unknown compute tag '" + s.opTag + "'");
        }
        if (pl.operands.size() != wantOps)
          throw InterpError("compute tag '" + s.opTag + "' expects " + std::to_string(wantOps) +
                            " operands");
        return pl;
      }
      case Stmt::Kind::Sync: {
        pl.syncKind = s.syncKind;
        auto it = groupIds_.find(s.group);
        if (it == groupIds_.end()) throw InterpError("undeclared pipeline group '" + s.group + "'");
        pl.group = it->second;
        return pl;
      }
    }
    throw InterpError("bad statement kind");
  }

  // --- execution ---------------------------------------------------------

  int64_t eval_code(const ExprCode& c) {
    int64_t stack[64];
    int sp = 0;
    for (const auto& op : c.ops) {
      switch (op.code) {
        case OpCode::PushConst: stack[sp++] = op.imm; break;
        case OpCode::PushVar: stack[sp++] = loopStack_[op.imm]; break;
        case OpCode::Add: --sp; stack[sp - 1] += stack[sp]; break;
        case OpCode::Mul: --sp; stack[sp - 1] *= stack[sp]; break;
        case OpCode::Div: {
          --sp;
          if (stack[sp] <= 0) throw InterpError("division by non-positive value");
          stack[sp - 1] = floordiv_val(stack[sp - 1], stack[sp]);
          break;
        }
        case OpCode::Mod: {
          --sp;
          if (stack[sp] <= 0) throw InterpError("modulo by non-positive value");
          stack[sp - 1] = mod_val(stack[sp - 1], stack[sp]);
          break;
        }
        case OpCode::Min: {
          --sp;
          if (stack[sp] < stack[sp - 1]) stack[sp - 1] = stack[sp];
          break;
        }
      }
    }
    return stack[0];
  }

  int64_t flat_index(const AccessPlan& a) {
    const BufferState& b = buffers_[a.buffer];
    int64_t flat = 0;
    for (size_t d = 0; d < a.indices.size(); ++d) {
      int64_t v = eval_code(a.indices[d]);
      if (v < 0 || v >= b.shape[d])
        throw InterpError("index out of bounds on '" + b.name + "' dim " + std::to_string(d) +
                          ": " + std::to_string(v) + " not in [0, " + std::to_string(b.shape[d]) +
                          ")");
      flat += v * b.strides[d];
    }
    return flat;
  }

  int64_t read(const AccessPlan& a) {
    BufferState& b = buffers_[a.buffer];
    int64_t i = flat_index(a);
    if (!b.pending.empty() && b.pending[i] > 0 && mode_ == ExecMode::Strict)
      throw InterpError("stale read: '" + b.name + "' element " + std::to_string(i) +
                        " has a staged write that was never made visible by consumer_wait");
    if (b.isLocal && !b.init[i] && mode_ == ExecMode::Strict)
      throw InterpError("uninitialized read from local buffer '" + b.name + "' element " +
                        std::to_string(i));
    return b.visible[i];
  }

  void write_direct(BufferState& b, int64_t i, int64_t v) {
    b.visible[i] = v;
    if (b.isLocal) b.init[i] = 1;
  }

  void record(SyncKind k, const GroupState& g) {
    trace_.push_back({static_cast<int64_t>(trace_.size()), k, g.name, g.acquired, g.committed,
                      g.waited, g.released, g.committed - g.released});
  }

  void exec(const StmtPlan& s) {
    switch (s.kind) {
      case Stmt::Kind::For: {
        loopStack_.push_back(0);
        for (int64_t i = 0; i < s.extent; ++i) {
          loopStack_.back() = i;
          for (const auto& c : s.body) exec(c);
        }
        loopStack_.pop_back();
        return;
      }
      case Stmt::Kind::Block:
        for (const auto& c : s.body) exec(c);
        return;
      case Stmt::Kind::Predicated:
        if (eval_code(s.cond) != 0)
          for (const auto& c : s.body) exec(c);
        return;
      case Stmt::Kind::AsyncCopy: {
        int64_t v = read(s.src);
        BufferState& dst = buffers_[s.dst.buffer];
        int64_t i = flat_index(s.dst);
        if (s.dstGroup >= 0 && groups_[s.dstGroup].open) {
          groups_[s.dstGroup].open->push_back({s.dst.buffer, i, v});
          dst.pending[i]++;
        } else {
          write_direct(dst, i, v);
        }
        return;
      }
      case Stmt::Kind::Compute: {
        int64_t r = 0;
        switch (s.tag) {
          case TagId::Zero: r = 0; break;
          case TagId::Copy: r = read(s.operands[0]); break;
          case TagId::Ew: r = 2 * read(s.operands[0]) + 1; break;
          case TagId::Mma:
            r = read(s.operands[0]) + read(s.operands[1]) * read(s.operands[2]);
            break;
          case TagId::MmaEwa:
            r = read(s.operands[0]) + (2 * read(s.operands[1]) + 1) * read(s.operands[2]);
            break;
        }
        BufferState& dst = buffers_[s.dst.buffer];
        write_direct(dst, flat_index(s.dst), r);
        return;
      }
      case Stmt::Kind::Sync: {
        GroupState& g = groups_[s.group];
        switch (s.syncKind) {
          case SyncKind::ProducerAcquire:
            if (g.open)
              throw InterpError("producer_acquire on '" + g.name + "' with an open staging group");
            if (g.committed - g.released >= g.capacity && mode_ == ExecMode::Strict)
              throw InterpError("pipeline overflow on '" + g.name + "': " +
                                std::to_string(g.committed - g.released) + " batches in flight, capacity " +
                                std::to_string(g.capacity));
            g.open.emplace();
            g.acquired++;
            break;
          case SyncKind::ProducerCommit:
            if (!g.open)
              throw InterpError("producer_commit on '" + g.name + "' without producer_acquire");
            g.sealed.push_back(std::move(*g.open));
            g.open.reset();
            g.committed++;
            break;
          case SyncKind::ConsumerWait: {
            if (g.flushed >= g.sealed.size())
              throw InterpError("consumer_wait on '" + g.name + "' with no committed batch");
            auto& batch = g.sealed[g.flushed];
            for (const auto& w : batch) {
              BufferState& b = buffers_[w.buffer];
              write_direct(b, w.flat, w.value);
              b.pending[w.flat]--;
            }
            g.flushed++;
            g.waited++;
            break;
          }
          case SyncKind::ConsumerRelease:
            if (g.flushed == 0)
              throw InterpError("consumer_release on '" + g.name + "' with no waited batch");
            g.sealed.pop_front();
            g.flushed--;
            g.released++;
            break;
        }
        record(s.syncKind, g);
        return;
      }
    }
  }

  const Program& prog_;
  ExecMode mode_;
  std::vector<BufferState> buffers_;
  std::map<std::string, int> bufferIds_;
  std::vector<GroupState> groups_;
  std::map<std::string, int> groupIds_;
  std::vector<StmtPlan> plan_;
  std::vector<std::string> loopVars_;
  std::vector<int64_t> loopStack_;
  std::vector<TraceEvent> trace_;
};

}  // namespace detail

// Sequential big-step evaluation. Parallel loops run sequentially over their
// range (semantics, not performance). Async copies stage into the open batch
// of the destination buffer's pipeline group, or write through when the
// buffer is not pipelined / no batch is open.
inline RunResult run(const Program& p, const std::map<std::string, std::vector<int64_t>>& inputs,
                     ExecMode mode, uint64_t seed = 0) {
  require_valid(p, "run");
  detail::Machine m(p, mode);
  for (const auto& b : p.inputs) {
    auto it = inputs.find(b.name);
    if (it == inputs.end()) throw InterpError("unbound input '" + b.name + "'");
    m.set_input(b.name, it->second);
  }
  for (const auto& [name, data] : inputs)
    if (!p.find_buffer(name)) throw InterpError("input '" + name + "' is not a program buffer");
  m.execute();
  RunResult r;
  r.seed = seed;
  for (const auto& b : p.outputs) r.outputs[b.name] = m.storage(b.name);
  r.trace = m.trace();
  return r;
}

struct DivergenceReport {
  bool equal = true;
  std::string output;
  std::vector<int64_t> coords;
  int64_t lhs = 0, rhs = 0;
  std::string message;
};

// True iff all outputs are bit-equal; otherwise reports the first diverging
// element in declaration/row-major order.
inline DivergenceReport check_equivalence(const Program& p1, const Program& p2,
                                          const std::map<std::string, std::vector<int64_t>>& inputs) {
  auto signature = [](const Program& p) {
    std::vector<std::pair<std::string, std::vector<int64_t>>> sig;
    for (const auto& b : p.inputs) sig.emplace_back(b.name, b.shape);
    for (const auto& b : p.outputs) sig.emplace_back(b.name, b.shape);
    return sig;
  };
  if (signature(p1) != signature(p2)) throw InterpError("program signatures do not match");
  RunResult r1 = run(p1, inputs, ExecMode::Strict);
  RunResult r2 = run(p2, inputs, ExecMode::Strict);
  for (const auto& b : p1.outputs) {
    const auto& a = r1.outputs.at(b.name);
    const auto& c = r2.outputs.at(b.name);
    for (size_t i = 0; i < a.size(); ++i) {
      if (a[i] != c[i]) {
        DivergenceReport d;
        d.equal = false;
        d.output = b.name;
        int64_t rem = static_cast<int64_t>(i);
        std::vector<int64_t> strides(b.shape.size(), 1);
        for (int k = static_cast<int>(b.shape.size()) - 2; k >= 0; --k)
          strides[k] = strides[k + 1] * b.shape[k + 1];
        for (size_t k = 0; k < b.shape.size(); ++k) {
          d.coords.push_back(rem / strides[k]);
          rem %= strides[k];
        }
        d.lhs = a[i];
        d.rhs = c[i];
        std::string at = "[";
        for (size_t k = 0; k < d.coords.size(); ++k)
          at += (k ? ", " : "") + std::to_string(d.coords[k]);
        at += "]";
        d.message = "outputs diverge at " + b.name + at + ": " + std::to_string(d.lhs) + " vs " +
                    std::to_string(d.rhs);
        return d;
      }
    }
  }
  return {};
}

}  // namespace pipec
