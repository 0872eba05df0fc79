#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pipec/ir.hpp"
#include "pipec/validate.hpp"

namespace pipec {

struct WorkloadDesc {
  int64_t M = 0, N = 0, K = 0;
  int64_t batch = 1;
  int elemBytes = 2;
};

// Schedule-level dataflow node: how a tensor comes to exist.
struct TensorNode {
  enum class Producer { ExternalInput, AsyncCopyFrom, ComputeFrom };
  std::string name;
  Producer producer = Producer::ExternalInput;
  std::string copySrc;                   // AsyncCopyFrom
  std::vector<std::string> computeSrcs;  // ComputeFrom
  std::string opTag;                     // ComputeFrom
  Scope scope = Scope::Global;
  std::optional<int> pipelineStages;
  bool fusedPreOp = false; // an inlined elementwise op rides into the consumers
  int chunkLevel = -1;     // which reduction split selects this buffer's chunk
};

struct SketchLoop {
  std::string var;
  int64_t extent = 0;
  LoopKind kind = LoopKind::Sequential;
  char dim = '?'; // 'b','i','j','k'
  int splitLevel = 0;
};

// Value-semantics schedule state; primitives return updated copies.
struct ScheduleState {
  WorkloadDesc workload;
  bool preOp = false; // elementwise op applied to the first input
  std::vector<TensorNode> graph;
  std::vector<SketchLoop> sketch;
  std::vector<std::string> applied;
  bool tiled = false;

  const TensorNode* find(const std::string& name) const {
    for (const auto& n : graph)
      if (n.name == name) return &n;
    return nullptr;
  }
  TensorNode* find_mut(const std::string& name) {
    for (auto& n : graph)
      if (n.name == name) return &n;
    return nullptr;
  }
};

struct EligibilityReport {
  std::string buffer;
  bool eligible = false;
  std::optional<std::string> failedRule; // NotAsyncProducer | NoSequentialLoop | SyncPositionConflict
  std::string explanation;
};

// GEMM family: C[M,N] (optionally batched) from A[M,K] and B[K,N], with an
// optional elementwise pre-op on A to exercise inlining.
inline ScheduleState gemm_schedule(const WorkloadDesc& w, bool preOp = false) {
  ScheduleState s;
  s.workload = w;
  s.preOp = preOp;
  s.graph.push_back({"A", TensorNode::Producer::ExternalInput, "", {}, "", Scope::Global});
  s.graph.push_back({"B", TensorNode::Producer::ExternalInput, "", {}, "", Scope::Global});
  std::string aSide = "A";
  if (preOp) {
    s.graph.push_back({"S2", TensorNode::Producer::ComputeFrom, "", {"A"}, "ew", Scope::Global});
    aSide = "S2";
  }
  s.graph.push_back({"C", TensorNode::Producer::ComputeFrom, "", {aSide, "B"}, "mma", Scope::Global});
  return s;
}

namespace detail {

inline std::string cache_name(const std::string& tensor, Scope scope) {
  std::string base = tensor;
  for (const char* suffix : {"_shared", "_reg"}) {
    size_t n = std::string(suffix).size();
    if (base.size() > n && base.compare(base.size() - n, n, suffix) == 0)
      base = base.substr(0, base.size() - n);
  }
  return base + (scope == Scope::Shared ? "_shared" : "_reg");
}

inline std::vector<const SketchLoop*> reduction_splits(const ScheduleState& s) {
  std::vector<const SketchLoop*> ks;
  for (const auto& l : s.sketch)
    if (l.dim == 'k') ks.push_back(&l);
  return ks;
}

}  // namespace detail

// Inserts a read buffer for `tensor` one or more levels down the hierarchy
// and rewires its consumers onto the buffer.
inline ScheduleState cache_read(const ScheduleState& s, const std::string& tensor, Scope scope) {
  const TensorNode* src = s.find(tensor);
  if (!src) throw AnalysisError("NoSuchTensor", "cache_read: tensor '" + tensor + "' not found");
  if (scope_level(scope) >= scope_level(src->scope))
    throw AnalysisError("ScopeNotBelow", "cache_read: scope " + std::string(scope_name(scope)) +
                                             " is not strictly below " + scope_name(src->scope));
  ScheduleState out = s;
  TensorNode buf;
  buf.name = detail::cache_name(tensor, scope);
  if (out.find(buf.name))
    throw AnalysisError("DuplicateBuffer", "cache_read: buffer '" + buf.name + "' already exists");
  buf.producer = TensorNode::Producer::AsyncCopyFrom;
  buf.copySrc = tensor;
  buf.scope = scope;
  buf.chunkLevel = scope == Scope::Shared ? 0 : 1;
  for (auto& n : out.graph) {
    if (n.name == tensor) continue;
    if (n.producer == TensorNode::Producer::AsyncCopyFrom && n.copySrc == tensor)
      n.copySrc = buf.name;
    for (auto& cs : n.computeSrcs)
      if (cs == tensor) cs = buf.name;
  }
  out.graph.push_back(std::move(buf));
  out.applied.push_back("cache_read " + tensor + " " + scope_name(scope));
  return out;
}

// Splits the output computation's loops. Splits are named outer-to-inner and
// grouped by the leading dimension letter of each new loop's name; the
// extents of one dimension's splits must multiply to the dimension size.
inline ScheduleState tile(const ScheduleState& s, const std::string& tensor,
                          const std::vector<std::pair<std::string, int64_t>>& splits) {
  if (!s.find(tensor) || tensor != "C")
    throw AnalysisError("NoSuchTensor", "tile: only the output computation can be tiled in v1");
  std::map<char, std::vector<std::pair<std::string, int64_t>>> byDim;
  for (const auto& [name, extent] : splits) {
    if (name.empty() || (name[0] != 'i' && name[0] != 'j' && name[0] != 'k'))
      throw AnalysisError("BadSplit", "tile: split '" + name + "' must start with i, j or k");
    if (extent < 1) throw AnalysisError("BadSplit", "tile: split extent must be >= 1");
    byDim[name[0]].emplace_back(name, extent);
  }
  auto dim_size = [&](char d) -> int64_t {
    return d == 'i' ? s.workload.M : d == 'j' ? s.workload.N : s.workload.K;
  };
  for (char d : {'i', 'j', 'k'}) {
    int64_t prod = 1;
    for (const auto& [name, extent] : byDim[d]) prod *= extent;
    if (byDim[d].empty())
      throw AnalysisError("BadSplit", std::string("tile: missing splits for dimension '") + d + "'");
    if (prod != dim_size(d))
      throw AnalysisError("NonDivisibleSplit",
                          std::string("tile: splits of '") + d + "' multiply to " +
                              std::to_string(prod) + ", dimension is " +
                              std::to_string(dim_size(d)));
    size_t maxSplits = d == 'k' ? 2 : 2;
    if (byDim[d].size() > maxSplits)
      throw AnalysisError("BadSplit", std::string("tile: at most two splits per dimension in v1"));
  }

  ScheduleState out = s;
  out.sketch.clear();
  if (s.workload.batch > 1) out.sketch.push_back({"b", s.workload.batch, LoopKind::Parallel, 'b', 0});
  // outer output tiles are parallel, inner output splits unrolled,
  // reduction splits sequential
  auto push_dim = [&](char d, size_t level, LoopKind kind) {
    if (level < byDim[d].size()) {
      const auto& [name, extent] = byDim[d][level];
      out.sketch.push_back({name, extent, kind, d, static_cast<int>(level)});
    }
  };
  push_dim('i', 0, LoopKind::Parallel);
  push_dim('j', 0, LoopKind::Parallel);
  push_dim('k', 0, LoopKind::Sequential);
  push_dim('k', 1, LoopKind::Sequential);
  push_dim('i', 1, LoopKind::Unrolled);
  push_dim('j', 1, LoopKind::Unrolled);
  out.tiled = true;
  std::ostringstream log;
  log << "tile " << tensor;
  for (const auto& [name, extent] : splits) log << " " << name << "=" << extent;
  out.applied.push_back(log.str());
  return out;
}

// The three pipelining rules, applied in order; the first failure is
// reported. Rule 3 compares pipelined-loop positions of same-scope buffers
// (scope-based synchronization cannot serve two different positions).
inline EligibilityReport check_eligibility(const ScheduleState& s, const std::string& buffer) {
  EligibilityReport r;
  r.buffer = buffer;
  const TensorNode* b = s.find(buffer);
  if (!b) throw AnalysisError("NoSuchTensor", "check_eligibility: '" + buffer + "' not found");
  if (!s.tiled)
    throw AnalysisError("OrderingViolation",
                        "pipeline requires loop sketch: tile before checking eligibility");

  // rule 1: must be produced by an asynchronous memory copy
  if (b->producer != TensorNode::Producer::AsyncCopyFrom) {
    r.failedRule = "NotAsyncProducer";
    r.explanation = "buffer '" + buffer + "' is not produced by an asynchronous memory copy";
    return r;
  }

  // rule 2: a sequential load-and-use loop must enclose the buffer's copy
  auto pipelined_loop_of = [&](const TensorNode& node) -> const SketchLoop* {
    auto ks = detail::reduction_splits(s);
    // prefix of the sketch down to (and including) the chunk-selecting loop
    int lastIdx = -1;
    if (node.chunkLevel >= 0 && node.chunkLevel < static_cast<int>(ks.size())) {
      const SketchLoop* chunkLoop = ks[node.chunkLevel];
      for (size_t i = 0; i < s.sketch.size(); ++i)
        if (&s.sketch[i] == chunkLoop) lastIdx = static_cast<int>(i);
    } else {
      lastIdx = static_cast<int>(s.sketch.size()) - 1;
    }
    for (int i = lastIdx; i >= 0; --i)
      if (s.sketch[i].kind == LoopKind::Sequential) return &s.sketch[i];
    return nullptr;
  };
  const SketchLoop* loop = pipelined_loop_of(*b);
  if (!loop) {
    r.failedRule = "NoSequentialLoop";
    r.explanation = "buffer '" + buffer + "' is not produced inside a sequential loop";
    return r;
  }

  // rule 3: same-scope pipelined buffers must share one sync position
  if (b->scope == Scope::Shared) {
    for (const auto& other : s.graph) {
      if (other.name == buffer || !other.pipelineStages || other.scope != Scope::Shared) continue;
      const SketchLoop* otherLoop = pipelined_loop_of(other);
      if (otherLoop && otherLoop->var != loop->var) {
        r.failedRule = "SyncPositionConflict";
        r.explanation = "buffers '" + other.name + "' (loop " + otherLoop->var + ") and '" +
                        buffer + "' (loop " + loop->var +
                        ") need shared-scope barriers at different positions";
        return r;
      }
    }
  }
  r.eligible = true;
  r.explanation = "pipelined loop " + loop->var;
  return r;
}

// Attaches the pipelining hint. Ordering: cache_read and tile must already
// have run (the eligibility rules are only decidable on the tiled sketch).
inline ScheduleState mark_pipeline(const ScheduleState& s, const std::string& buffer, int stages) {
  if (!s.tiled)
    throw AnalysisError("OrderingViolation", "pipeline requires loop sketch: tile first");
  if (stages < 2) throw AnalysisError("BadStages", "pipeline stages must be >= 2");
  EligibilityReport r = check_eligibility(s, buffer);
  if (!r.eligible) throw AnalysisError(*r.failedRule, r.explanation);
  ScheduleState out = s;
  out.find_mut(buffer)->pipelineStages = stages;
  out.applied.push_back("pipeline " + buffer + " " + std::to_string(stages));
  return out;
}

// Inlining of a unary elementwise tensor. When a downstream pipelined buffer
// copies from the tensor, the buffer is re-sourced to the tensor's input and
// the elementwise op is fused into the buffer's consumers, which keeps the
// copy asynchronous. Without the pipeline mark the buffer's producer becomes
// a compute (and rule 1 will later reject it).
inline ScheduleState inline_tensor(const ScheduleState& s, const std::string& tensor) {
  const TensorNode* t = s.find(tensor);
  if (!t) throw AnalysisError("NoSuchTensor", "inline: tensor '" + tensor + "' not found");
  if (t->producer != TensorNode::Producer::ComputeFrom || t->computeSrcs.size() != 1)
    throw AnalysisError("NotElementwise", "inline: '" + tensor + "' is not unary elementwise");
  std::string src = t->computeSrcs[0];
  std::string tag = t->opTag;
  ScheduleState out = s;
  bool consumed = false;
  for (auto& n : out.graph) {
    if (n.producer == TensorNode::Producer::AsyncCopyFrom && n.copySrc == tensor) {
      consumed = true;
      if (n.pipelineStages) {
        if (n.fusedPreOp)
          throw AnalysisError("NoRewrite", "inline: buffer '" + n.name +
                                               "' already carries a fused elementwise op");
        n.copySrc = src;
        n.fusedPreOp = true;
      } else {
        // classic inlining: the buffer is now filled by the computation
        n.producer = TensorNode::Producer::ComputeFrom;
        n.computeSrcs = {src};
        n.opTag = tag;
        n.copySrc.clear();
      }
    } else {
      for (auto& cs : n.computeSrcs)
        if (cs == tensor)
          throw AnalysisError("NoRewrite",
                              "inline: v1 requires '" + tensor + "' to feed cache-read buffers");
    }
  }
  if (!consumed)
    throw AnalysisError("NoRewrite", "inline: '" + tensor + "' has no cache-read consumer");
  out.graph.erase(std::remove_if(out.graph.begin(), out.graph.end(),
                                 [&](const TensorNode& n) { return n.name == tensor; }),
                  out.graph.end());
  out.applied.push_back("inline " + tensor);
  return out;
}

namespace detail {

struct LowerCtx {
  const ScheduleState& s;
  int64_t tileM, tileN, tileK, regK;
  std::string i0, j0, k0, k1; // sketch loop names ("" when absent)
  std::string elemType;

  // chain from the compute operand down to the external input
  std::vector<const TensorNode*> chain(const std::string& operand) const {
    std::vector<const TensorNode*> ch;
    const TensorNode* n = s.find(operand);
    while (n) {
      ch.push_back(n);
      if (n->producer == TensorNode::Producer::AsyncCopyFrom)
        n = s.find(n->copySrc);
      else if (n->producer == TensorNode::Producer::ComputeFrom && n->computeSrcs.size() == 1)
        n = s.find(n->computeSrcs[0]);
      else
        break;
    }
    return ch;
  }
};

inline std::string elem_type_for(int bytes) {
  switch (bytes) {
    case 1: return "i8";
    case 2: return "f16";
    case 4: return "f32";
    case 8: return "f64";
  }
  return "f32";
}

}  // namespace detail

// Lowers the schedule onto the IR: parallel output-tile loops, sequential
// reduction loops, async-copy fills for each cache-read buffer, an mma
// compute at the innermost level and pipeline hints on the buffer
// declarations. Synchronization is injected later by the pipelining pass.
inline Program lower(const ScheduleState& s) {
  if (!s.tiled) throw AnalysisError("OrderingViolation", "lower: tile must run first");
  const WorkloadDesc& w = s.workload;
  detail::LowerCtx cx{s, 0, 0, 0, 0, "", "", "", "", detail::elem_type_for(w.elemBytes)};
  std::vector<const SketchLoop*> ks = detail::reduction_splits(s);
  const SketchLoop *i0 = nullptr, *j0 = nullptr, *i1 = nullptr, *j1 = nullptr, *b0 = nullptr;
  for (const auto& l : s.sketch) {
    if (l.dim == 'b') b0 = &l;
    if (l.dim == 'i' && l.splitLevel == 0) i0 = &l;
    if (l.dim == 'i' && l.splitLevel == 1) i1 = &l;
    if (l.dim == 'j' && l.splitLevel == 0) j0 = &l;
    if (l.dim == 'j' && l.splitLevel == 1) j1 = &l;
  }
  if (!i0 || !j0 || ks.empty()) throw AnalysisError("BadSketch", "lower: sketch is incomplete");
  cx.tileM = i1 ? i1->extent : w.M / i0->extent;
  cx.tileN = j1 ? j1->extent : w.N / j0->extent;
  cx.tileK = w.K / ks[0]->extent;
  cx.regK = ks.size() > 1 ? cx.tileK / ks[1]->extent : cx.tileK;
  if (ks.size() > 1 && cx.tileK % ks[1]->extent != 0)
    throw AnalysisError("NonDivisibleSplit", "lower: inner reduction split does not divide tile");
  cx.i0 = i0->var;
  cx.j0 = j0->var;
  cx.k0 = ks[0]->var;
  cx.k1 = ks.size() > 1 ? ks[1]->var : "";

  Program p;
  bool batched = w.batch > 1;
  auto globalShape = [&](std::vector<int64_t> dims) {
    if (batched) dims.insert(dims.begin(), w.batch);
    return dims;
  };
  p.inputs.push_back({"A", Scope::Global, cx.elemType, globalShape({w.M, w.K}), w.elemBytes, {}});
  p.inputs.push_back({"B", Scope::Global, cx.elemType, globalShape({w.K, w.N}), w.elemBytes, {}});
  p.outputs.push_back({"C", Scope::Global, cx.elemType, globalShape({w.M, w.N}), w.elemBytes, {}});

  // materialize any un-inlined elementwise intermediate as a global tensor
  std::vector<StmtPtr> prelude;
  for (const auto& n : s.graph) {
    if (n.producer == TensorNode::Producer::ComputeFrom && n.scope == Scope::Global &&
        n.name != "C") {
      p.outputs.push_back(
          {n.name, Scope::Global, cx.elemType, globalShape({w.M, w.K}), w.elemBytes, {}});
      std::vector<ExprPtr> gi{var("pi"), var("pk")};
      if (batched) gi.insert(gi.begin(), var("pb"));
      StmtPtr body = make_compute(n.name, gi, {{n.computeSrcs[0], gi}}, n.opTag, 1);
      body = make_for("pk", w.K, LoopKind::Parallel, {body});
      body = make_for("pi", w.M, LoopKind::Parallel, {body});
      if (batched) body = make_for("pb", w.batch, LoopKind::Parallel, {body});
      prelude.push_back(body);
    }
  }

  // buffer declarations for cached tensors (graph order), then the register
  // accumulator
  auto side_of = [&](const TensorNode& n) -> char {
    // which input the chain roots at: 'a' (A / pre-op) or 'b'
    const TensorNode* cur = &n;
    while (cur) {
      if (cur->name == "B") return 'b';
      if (cur->name == "A") return 'a';
      if (cur->producer == TensorNode::Producer::AsyncCopyFrom)
        cur = s.find(cur->copySrc);
      else if (cur->producer == TensorNode::Producer::ComputeFrom && !cur->computeSrcs.empty())
        cur = s.find(cur->computeSrcs[0]);
      else
        break;
    }
    return 'a';
  };
  for (const auto& n : s.graph) {
    if (n.scope == Scope::Global) continue;
    char side = side_of(n);
    std::vector<int64_t> shape;
    if (n.scope == Scope::Shared)
      shape = side == 'a' ? std::vector<int64_t>{cx.tileM, cx.tileK}
                          : std::vector<int64_t>{cx.tileK, cx.tileN};
    else
      shape = side == 'a' ? std::vector<int64_t>{cx.tileM, cx.regK}
                          : std::vector<int64_t>{cx.regK, cx.tileN};
    p.locals.push_back({n.name, n.scope, cx.elemType, shape, w.elemBytes, n.pipelineStages});
    if (n.pipelineStages)
      p.groups.push_back({n.name, n.scope, *n.pipelineStages});
  }
  p.locals.push_back({"C_reg", Scope::Register, "f32", {cx.tileM, cx.tileN}, 4, {}});

  for (const auto& l : s.sketch) {
    if (l.var == "mi" || l.var == "ni" || l.var == "kk" || l.var == "kr")
      throw AnalysisError("BadSplit", "lower: loop name '" + l.var + "' is reserved");
  }

  // global coordinates of the current tile element
  auto rowIdx = [&](ExprPtr inner) {
    return cx.tileM == w.M ? inner : add(mul(var(cx.i0), lit(cx.tileM)), inner);
  };
  auto colIdx = [&](ExprPtr inner) {
    return cx.tileN == w.N ? inner : add(mul(var(cx.j0), lit(cx.tileN)), inner);
  };
  auto kIdx = [&](ExprPtr inner) {
    return cx.tileK == w.K ? inner : add(mul(var(cx.k0), lit(cx.tileK)), inner);
  };
  auto withBatch = [&](std::vector<ExprPtr> idx) {
    if (batched) idx.insert(idx.begin(), var("b"));
    return idx;
  };

  // fills for shared-level buffers (inside k0) and register-level buffers
  // (inside k1)
  auto fill_nest = [&](const TensorNode& n) -> StmtPtr {
    char side = side_of(n);
    bool toReg = n.scope == Scope::Register;
    const TensorNode* src = s.find(n.copySrc);
    bool srcGlobal = src && src->scope == Scope::Global;
    int64_t kExtent = toReg ? cx.regK : cx.tileK;
    std::string kv = toReg ? "kr" : "kk";
    std::string ov = side == 'a' ? "mi" : "ni";
    int64_t oExtent = side == 'a' ? cx.tileM : cx.tileN;
    ExprPtr kLocal = var(kv);
    if (toReg && !srcGlobal && !cx.k1.empty() && cx.regK != cx.tileK)
      kLocal = add(mul(var(cx.k1), lit(cx.regK)), var(kv));
    std::vector<ExprPtr> dst, srcIdx;
    if (side == 'a') {
      dst = {var(ov), var(kv)};
      if (srcGlobal) {
        ExprPtr gk = toReg && !cx.k1.empty() && cx.regK != cx.tileK
                         ? kIdx(add(mul(var(cx.k1), lit(cx.regK)), var(kv)))
                         : kIdx(var(kv));
        srcIdx = withBatch({rowIdx(var(ov)), gk});
      } else {
        srcIdx = {var(ov), kLocal};
      }
    } else {
      dst = {var(kv), var(ov)};
      if (srcGlobal) {
        ExprPtr gk = toReg && !cx.k1.empty() && cx.regK != cx.tileK
                         ? kIdx(add(mul(var(cx.k1), lit(cx.regK)), var(kv)))
                         : kIdx(var(kv));
        srcIdx = withBatch({gk, colIdx(var(ov))});
      } else {
        srcIdx = {kLocal, var(ov)};
      }
    }
    StmtPtr copy;
    if (n.producer == TensorNode::Producer::AsyncCopyFrom) {
      copy = make_copy(n.name, dst, n.copySrc, srcIdx, w.elemBytes);
    } else {
      // compute-produced fill (a buffer that lost its async producer)
      copy = make_compute(n.name, dst, {{n.computeSrcs[0], srcIdx}}, n.opTag, 1);
    }
    StmtPtr nest = make_for(kv, kExtent, LoopKind::Unrolled, {copy});
    nest = make_for(ov, oExtent, LoopKind::Unrolled, {nest});
    return nest;
  };

  // mma operand resolution: the deepest cached node on each side, or the
  // global tensor itself
  auto operand_of = [&](char side) -> std::pair<std::string, std::vector<ExprPtr>> {
    const TensorNode* best = nullptr;
    for (const auto& n : s.graph) {
      if (n.scope == Scope::Global) continue;
      if (side_of(n) != side) continue;
      if (!best || scope_level(n.scope) < scope_level(best->scope)) best = &n;
    }
    ExprPtr kWithinTile =
        cx.k1.empty() ? ExprPtr(var("kr"))
                      : (cx.regK == cx.tileK
                             ? ExprPtr(var("kr"))
                             : ExprPtr(add(mul(var(cx.k1), lit(cx.regK)), var("kr"))));
    if (!best) {
      std::string name = side == 'a' ? (s.find("S2") ? "S2" : "A") : "B";
      if (side == 'a') return {name, withBatch({rowIdx(var("mi")), kIdx(kWithinTile)})};
      return {name, withBatch({kIdx(kWithinTile), colIdx(var("ni"))})};
    }
    bool reg = best->scope == Scope::Register;
    if (side == 'a') {
      if (reg) return {best->name, {var("mi"), var("kr")}};
      return {best->name, {var("mi"), kWithinTile}};
    }
    if (reg) return {best->name, {var("kr"), var("ni")}};
    return {best->name, {kWithinTile, var("ni")}};
  };

  bool fused = false;
  for (const auto& n : s.graph) fused |= n.fusedPreOp;

  auto [aName, aIdx] = operand_of('a');
  auto [bName, bIdx] = operand_of('b');
  StmtPtr mma = make_compute(
      "C_reg", {var("mi"), var("ni")},
      {{"C_reg", {var("mi"), var("ni")}}, {aName, aIdx}, {bName, bIdx}},
      fused ? "mma_ewa" : "mma", 2);
  StmtPtr mmaNest = make_for("kr", cx.regK, LoopKind::Unrolled, {mma});
  mmaNest = make_for("ni", cx.tileN, LoopKind::Unrolled, {mmaNest});
  mmaNest = make_for("mi", cx.tileM, LoopKind::Unrolled, {mmaNest});

  // reduction nest
  std::vector<StmtPtr> k1Body;
  for (const auto& n : s.graph)
    if (n.scope == Scope::Register) k1Body.push_back(fill_nest(n));
  k1Body.push_back(mmaNest);
  StmtPtr kInner = cx.k1.empty() ? nullptr : make_for(cx.k1, ks[1]->extent, LoopKind::Sequential, k1Body);

  std::vector<StmtPtr> k0Body;
  for (const auto& n : s.graph)
    if (n.scope == Scope::Shared) k0Body.push_back(fill_nest(n));
  if (kInner)
    k0Body.push_back(kInner);
  else
    k0Body.insert(k0Body.end(), k1Body.begin(), k1Body.end());
  StmtPtr kLoop = make_for(cx.k0, ks[0]->extent, LoopKind::Sequential, k0Body);

  // zero-init, reduction, writeback
  StmtPtr zero = make_compute("C_reg", {var("mi"), var("ni")}, {}, "zero", 0);
  StmtPtr zeroNest = make_for("ni", cx.tileN, LoopKind::Unrolled, {zero});
  zeroNest = make_for("mi", cx.tileM, LoopKind::Unrolled, {zeroNest});
  StmtPtr wb = make_compute("C", withBatch({rowIdx(var("mi")), colIdx(var("ni"))}),
                            {{"C_reg", {var("mi"), var("ni")}}}, "copy", 0);
  StmtPtr wbNest = make_for("ni", cx.tileN, LoopKind::Unrolled, {wb});
  wbNest = make_for("mi", cx.tileM, LoopKind::Unrolled, {wbNest});

  StmtPtr tileBody = make_for(cx.j0, j0->extent, LoopKind::Parallel, {zeroNest, kLoop, wbNest});
  tileBody = make_for(cx.i0, i0->extent, LoopKind::Parallel, {tileBody});
  if (batched) tileBody = make_for("b", w.batch, LoopKind::Parallel, {tileBody});

  p.body = prelude;
  p.body.push_back(tileBody);
  require_valid(p, "lower output");
  return p;
}

// One primitive per line: `cache_read A shared`, `tile C i0=2 i1=4 ko=8 ki=2`,
// `pipeline A_shared 3`, `inline S2`. On a shared-scope sync-position
// conflict the conflicting earlier mark is withdrawn as well (both buffers
// stay unpipelined) and a warning is recorded.
inline ScheduleState apply_script(const ScheduleState& start, const std::string& script,
                                  std::vector<std::string>* warnings = nullptr) {
  ScheduleState s = start;
  std::istringstream in(script);
  std::string line;
  int lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    std::string t;
    while (ls >> t) tok.push_back(t);
    if (tok.empty()) continue;
    auto fail = [&](const std::string& msg) {
      throw ConfigError("schedule script line " + std::to_string(lineNo) + ": " + msg);
    };
    if (tok[0] == "cache_read") {
      if (tok.size() != 3) fail("expected: cache_read <tensor> <shared|register>");
      Scope sc = tok[2] == "shared" ? Scope::Shared
                 : tok[2] == "register" ? Scope::Register
                                        : throw ConfigError("bad scope '" + tok[2] + "'");
      s = cache_read(s, tok[1], sc);
    } else if (tok[0] == "tile") {
      if (tok.size() < 3) fail("expected: tile <tensor> <name>=<extent>...");
      std::vector<std::pair<std::string, int64_t>> splits;
      for (size_t i = 2; i < tok.size(); ++i) {
        auto eq = tok[i].find('=');
        if (eq == std::string::npos) fail("bad split '" + tok[i] + "'");
        splits.emplace_back(tok[i].substr(0, eq), std::stoll(tok[i].substr(eq + 1)));
      }
      s = tile(s, tok[1], splits);
    } else if (tok[0] == "pipeline") {
      if (tok.size() != 3) fail("expected: pipeline <buffer> <stages>");
      try {
        s = mark_pipeline(s, tok[1], std::stoi(tok[2]));
      } catch (const AnalysisError& e) {
        if (e.rule == "SyncPositionConflict") {
          // the refusal applies to both buffers
          for (auto& n : s.graph)
            if (n.pipelineStages && n.scope == Scope::Shared) n.pipelineStages.reset();
          if (warnings)
            warnings->push_back(std::string("refusing to pipeline: ") + e.what());
        } else {
          throw;
        }
      }
    } else if (tok[0] == "inline") {
      if (tok.size() != 2) fail("expected: inline <tensor>");
      s = inline_tensor(s, tok[1]);
    } else {
      fail("unknown primitive '" + tok[0] + "'");
    }
  }
  return s;
}

}  // namespace pipec
