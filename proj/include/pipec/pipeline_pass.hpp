#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pipec/ir.hpp"
#include "pipec/printer.hpp"
#include "pipec/validate.hpp"

namespace pipec {

// Per-buffer analysis result. `parent` links a register-level pipeline to the
// shared-level pipeline it copies from; fused emission derives everything
// else from (stages, pipelinedLoopVar, extents).
struct BufferPipelineInfo {
  std::string buffer;
  int stages = 2;
  std::string producerTensor;
  std::vector<std::string> consumerPaths;
  std::string pipelinedLoopVar;
  int64_t pipelinedLoopExtent = 0;
  std::string loadRegionPath;
  std::string useRegionPath;
  std::string prologueSitePath;
  int parent = -1; // index into PipelinePlan::infos
  int declIndex = 0;
  int level = 0;          // 0 = root pipeline
  int predicateWaits = 0; // parent-group waits in the first-iteration block
  int drainPairs = 0;     // wait+release pairs after the fusion-root loop
};

// Topologically ordered, outermost pipelines first.
struct PipelinePlan {
  std::vector<BufferPipelineInfo> infos;

  const BufferPipelineInfo* find(const std::string& buffer) const {
    for (const auto& i : infos)
      if (i.buffer == buffer) return &i;
    return nullptr;
  }
};

namespace detail {

struct PathEntry {
  const Stmt* container; // nullptr for the program body
  size_t index;
};

struct Site {
  const Stmt* stmt = nullptr;
  std::vector<PathEntry> entries; // root..site, last entry locates stmt
  std::string path;
};

inline void walk_sites(const std::vector<StmtPtr>& body, const Stmt* container,
                       std::vector<PathEntry>& stack, const std::string& prefix,
                       const std::function<void(const Site&)>& fn) {
  for (size_t i = 0; i < body.size(); ++i) {
    const Stmt& s = *body[i];
    stack.push_back({container, i});
    std::string label;
    switch (s.kind) {
      case Stmt::Kind::For: label = "for(" + s.var + ")"; break;
      case Stmt::Kind::Block: label = "block"; break;
      case Stmt::Kind::AsyncCopy: label = "copy(" + s.dstBuffer + ")"; break;
      case Stmt::Kind::Compute: label = "compute(" + s.dstBuffer + ")"; break;
      case Stmt::Kind::Sync: label = sync_kind_name(s.syncKind); break;
      case Stmt::Kind::Predicated: label = "if"; break;
    }
    std::string path = prefix + "[" + std::to_string(i) + "]:" + label;
    Site site{&s, stack, path};
    fn(site);
    if (!s.body.empty()) walk_sites(s.body, &s, stack, path, fn);
    stack.pop_back();
  }
}

inline void walk_sites(const Program& p, const std::function<void(const Site&)>& fn) {
  std::vector<PathEntry> stack;
  walk_sites(p.body, nullptr, stack, "body", fn);
}

// Ancestor statement nodes of a site, innermost first.
inline std::vector<const Stmt*> ancestors_inner_out(const Site& s) {
  std::vector<const Stmt*> out;
  for (auto it = s.entries.rbegin(); it != s.entries.rend(); ++it)
    if (it->container) out.push_back(it->container);
  return out;
}

inline bool reads_buffer(const Stmt& s, const std::string& b) {
  if (s.kind == Stmt::Kind::AsyncCopy) return s.srcBuffer == b;
  if (s.kind == Stmt::Kind::Compute) {
    for (const auto& op : s.operands)
      if (op.buffer == b) return true;
  }
  return false;
}

// Generic bottom-up clone-on-change rewrite of a statement tree.
using StmtRewriter = std::function<StmtPtr(const StmtPtr&)>;

inline StmtPtr rewrite_stmt(const StmtPtr& s, const StmtRewriter& fn);

inline bool rewrite_body(const std::vector<StmtPtr>& body, const StmtRewriter& fn,
                         std::vector<StmtPtr>& out) {
  bool changed = false;
  out.reserve(body.size());
  for (const auto& c : body) {
    StmtPtr r = rewrite_stmt(c, fn);
    changed |= (r != c);
    out.push_back(std::move(r));
  }
  return changed;
}

inline StmtPtr rewrite_stmt(const StmtPtr& s, const StmtRewriter& fn) {
  StmtPtr cur = s;
  if (!cur->body.empty()) {
    std::vector<StmtPtr> nb;
    if (rewrite_body(cur->body, fn, nb)) {
      auto copy = std::make_shared<Stmt>(*cur);
      copy->body = std::move(nb);
      cur = copy;
    }
  }
  StmtPtr res = fn(cur);
  return res ? res : cur;
}

inline Program rewrite_program(const Program& p, const StmtRewriter& fn) {
  Program out = p;
  std::vector<StmtPtr> nb;
  rewrite_body(p.body, fn, nb);
  out.body = std::move(nb);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Analysis
// ---------------------------------------------------------------------------

// Step 1: pipelining hints left by the schedule transformation, in
// declaration order.
inline std::vector<std::pair<std::string, int>> collect_hints(const Program& p) {
  std::vector<std::pair<std::string, int>> hints;
  for (const auto& b : p.locals)
    if (b.pipelineStages) hints.emplace_back(b.name, *b.pipelineStages);
  return hints;
}

namespace detail {

struct AnalysisScratch {
  Site copySite;                 // the unique producer copy
  std::vector<Site> consumerSites;
  const Stmt* pipelinedLoop = nullptr;
  size_t loadIdx = 0;            // direct-child index of the load under the loop
  size_t useBegin = 0, useEnd = 0;
};

inline const Stmt* direct_child_under(const Site& site, const Stmt* loop, size_t* idxOut) {
  for (size_t k = 0; k < site.entries.size(); ++k) {
    if (site.entries[k].container == loop) {
      if (idxOut) *idxOut = site.entries[k].index;
      return loop->body[site.entries[k].index].get();
    }
  }
  return nullptr;
}

}  // namespace detail

// Runs the five analysis steps and returns the plan. Throws AnalysisError
// (with a rule tag) on any rule violation that escaped scheduling.
inline PipelinePlan analyze_pipelines(const Program& p,
                                      std::vector<detail::AnalysisScratch>* scratchOut = nullptr) {
  auto hints = collect_hints(p);
  PipelinePlan plan;
  std::vector<detail::AnalysisScratch> scratch;
  if (hints.empty()) return plan;

  bool hasSync = false;
  detail::walk_sites(p, [&](const detail::Site& s) {
    if (s.stmt->kind == Stmt::Kind::Sync) hasSync = true;
  });
  if (hasSync)
    throw AnalysisError("AlreadySynchronized", "program already contains pipeline synchronization");

  int declIndex = 0;
  for (const auto& [name, stages] : hints) {
    BufferPipelineInfo info;
    info.buffer = name;
    info.stages = stages;
    info.declIndex = declIndex++;
    detail::AnalysisScratch sc;

    // Step 2: reconstruct the producer (unique async copy) and consumers.
    std::vector<detail::Site> writers;
    detail::walk_sites(p, [&](const detail::Site& s) {
      if (s.stmt->kind == Stmt::Kind::AsyncCopy && s.stmt->dstBuffer == name)
        writers.push_back(s);
      if (s.stmt->kind == Stmt::Kind::Compute && s.stmt->dstBuffer == name)
        throw AnalysisError("NotAsyncProducer",
                            "buffer '" + name + "' is produced by a compute operation");
      if (detail::reads_buffer(*s.stmt, name)) sc.consumerSites.push_back(s);
    });
    if (writers.empty())
      throw AnalysisError("NoProducer", "no async copy writes pipelined buffer '" + name + "'");
    if (writers.size() > 1)
      throw AnalysisError("AmbiguousProducer",
                          "pipelined buffer '" + name + "' has multiple async copy writers");
    sc.copySite = writers[0];
    info.producerTensor = sc.copySite.stmt->srcBuffer;
    for (const auto& c : sc.consumerSites) info.consumerPaths.push_back(c.path);

    // Step 3: first sequential enclosing loop whose variable does not index
    // the buffer itself.
    std::vector<std::string> dstVars;
    for (const auto& e : sc.copySite.stmt->dstIndices) collect_vars(e, dstVars);
    for (const Stmt* a : detail::ancestors_inner_out(sc.copySite)) {
      if (a->kind != Stmt::Kind::For) continue;
      if (a->loopKind != LoopKind::Sequential) continue;
      if (std::find(dstVars.begin(), dstVars.end(), a->var) != dstVars.end()) continue;
      sc.pipelinedLoop = a;
      break;
    }
    if (!sc.pipelinedLoop)
      throw AnalysisError("NoSequentialLoop",
                          "no sequential load-and-use loop found for buffer '" + name + "'");
    info.pipelinedLoopVar = sc.pipelinedLoop->var;
    info.pipelinedLoopExtent = sc.pipelinedLoop->extent;

    // Step 4: load region and the minimal contiguous use span, both as
    // direct children of the pipelined loop body.
    size_t loadIdx = 0;
    const Stmt* loadChild = detail::direct_child_under(sc.copySite, sc.pipelinedLoop, &loadIdx);
    (void)loadChild;
    sc.loadIdx = loadIdx;
    info.loadRegionPath = sc.copySite.path;
    bool haveUse = false;
    for (const auto& c : sc.consumerSites) {
      size_t idx = 0;
      if (!detail::direct_child_under(c, sc.pipelinedLoop, &idx))
        throw AnalysisError("ConsumerEscapes", "a consumer of buffer '" + name +
                                                   "' escapes the pipelined loop (" + c.path + ")");
      if (!haveUse) {
        sc.useBegin = sc.useEnd = idx;
        haveUse = true;
      } else {
        sc.useBegin = std::min(sc.useBegin, idx);
        sc.useEnd = std::max(sc.useEnd, idx);
      }
    }
    if (!haveUse)
      throw AnalysisError("NoConsumer", "pipelined buffer '" + name + "' is never read");
    if (sc.loadIdx >= sc.useBegin)
      throw AnalysisError("LoadUseOrder", "load region of buffer '" + name +
                                              "' does not strictly precede its use region");
    info.useRegionPath = "children [" + std::to_string(sc.useBegin) + ".." +
                         std::to_string(sc.useEnd) + "] of for(" + info.pipelinedLoopVar + ")";

    plan.infos.push_back(std::move(info));
    scratch.push_back(std::move(sc));
  }

  // Parent links (multi-level detection) + fusion feasibility checks.
  for (size_t i = 0; i < plan.infos.size(); ++i) {
    auto& info = plan.infos[i];
    for (size_t j = 0; j < plan.infos.size(); ++j) {
      if (plan.infos[j].buffer == info.producerTensor) {
        info.parent = static_cast<int>(j);
        info.level = 1;
      }
    }
    if (info.parent < 0) continue;
    const auto& psc = scratch[info.parent];
    const auto& csc = scratch[i];
    if (plan.infos[info.parent].parent >= 0)
      throw AnalysisError("TooManyLevels", "pipeline chains deeper than two levels are unsupported");
    // The fused index algebra assumes the inner pipelined loop runs exactly
    // once per outer iteration, directly inside the outer loop body.
    size_t childLoopIdx = 0;
    const Stmt* childAsDirect = nullptr;
    for (size_t k = 0; k < csc.copySite.entries.size(); ++k) {
      if (csc.copySite.entries[k].container == psc.pipelinedLoop) {
        childAsDirect = psc.pipelinedLoop->body[csc.copySite.entries[k].index].get();
        childLoopIdx = csc.copySite.entries[k].index;
        break;
      }
    }
    (void)childLoopIdx;
    if (childAsDirect != csc.pipelinedLoop)
      throw AnalysisError("UnsupportedNesting",
                          "inner pipelined loop of '" + info.buffer +
                              "' must be a direct child of the outer pipelined loop body");
    int64_t F = info.pipelinedLoopExtent;
    int t = info.stages;
    int s = plan.infos[info.parent].stages;
    if (static_cast<int64_t>(t - 1) > static_cast<int64_t>(s - 1) * F)
      throw AnalysisError("LookaheadExceedsOuter",
                          "inner pipeline of '" + info.buffer + "' looks ahead " +
                              std::to_string(t - 1) + " steps, more than the outer pipeline covers (" +
                              std::to_string((s - 1) * F) + ")");
    info.predicateWaits = static_cast<int>((t - 1 + F - 1) / F); // ceil((t-1)/F)
  }
  for (size_t i = 0; i < plan.infos.size(); ++i) {
    int children = 0;
    for (const auto& other : plan.infos)
      if (other.parent == static_cast<int>(i)) children++;
    if (children > 1)
      throw AnalysisError("MultipleChildren", "buffer '" + plan.infos[i].buffer +
                                                  "' feeds more than one pipelined buffer");
  }

  // Step 5: prologue sites. Roots prime immediately before their own loop;
  // nested pipelines prime at the head of the outermost ancestor's body,
  // guarded to the first outer iteration, which fuses the inner pipeline
  // across outer iterations instead of restarting it.
  for (size_t i = 0; i < plan.infos.size(); ++i) {
    auto& info = plan.infos[i];
    if (info.parent < 0) {
      info.prologueSitePath = "before for(" + info.pipelinedLoopVar + ")";
      info.drainPairs = info.stages - 1;
    } else {
      const auto& parent = plan.infos[info.parent];
      info.prologueSitePath = "head of for(" + parent.pipelinedLoopVar + ") body, predicated on " +
                              parent.pipelinedLoopVar + " == 0";
      info.drainPairs = info.stages - 1;
    }
  }
  for (auto& info : plan.infos) {
    if (info.parent >= 0) continue;
    int dmax = 0;
    for (const auto& c : plan.infos)
      if (c.parent >= 0 && plan.infos[c.parent].buffer == info.buffer)
        dmax = std::max(dmax, c.predicateWaits);
    info.drainPairs = info.stages - 1 - dmax;
  }

  // Outermost-first order: roots by declaration, each followed by its children.
  PipelinePlan ordered;
  std::vector<detail::AnalysisScratch> orderedScratch;
  std::vector<int> remap(plan.infos.size(), -1);
  for (size_t i = 0; i < plan.infos.size(); ++i) {
    if (plan.infos[i].parent >= 0) continue;
    remap[i] = static_cast<int>(ordered.infos.size());
    ordered.infos.push_back(plan.infos[i]);
    orderedScratch.push_back(scratch[i]);
    for (size_t j = 0; j < plan.infos.size(); ++j) {
      if (plan.infos[j].parent == static_cast<int>(i)) {
        remap[j] = static_cast<int>(ordered.infos.size());
        ordered.infos.push_back(plan.infos[j]);
        orderedScratch.push_back(scratch[j]);
      }
    }
  }
  for (auto& info : ordered.infos)
    if (info.parent >= 0) info.parent = remap[info.parent];

  if (scratchOut) *scratchOut = std::move(orderedScratch);
  return ordered;
}

// Step-2 view of the analysis, exposed on its own for tooling and tests.
inline PipelinePlan reconstruct_producers(const Program& p) { return analyze_pipelines(p); }

// Step-3 view: the pipelined loop for one hinted buffer.
inline std::pair<std::string, int64_t> find_pipelined_loop(const Program& p,
                                                           const std::string& buffer) {
  PipelinePlan plan = analyze_pipelines(p);
  const BufferPipelineInfo* info = plan.find(buffer);
  if (!info) throw AnalysisError("NoHint", "buffer '" + buffer + "' carries no pipeline hint");
  return {info->pipelinedLoopVar, info->pipelinedLoopExtent};
}

// ---------------------------------------------------------------------------
// Transformation
// ---------------------------------------------------------------------------

// Step 1: grow each pipelined buffer by a leading slot dimension of size
// `stages`; every access gains a leading slot index (filled by the next
// step). Ensures each pipelined buffer has a group of matching capacity.
inline Program expand_buffers(const Program& p, const PipelinePlan& plan) {
  if (plan.infos.empty()) return p;
  std::set<std::string> pipelined;
  std::map<std::string, int> stagesOf;
  for (const auto& i : plan.infos) {
    pipelined.insert(i.buffer);
    stagesOf[i.buffer] = i.stages;
  }
  Program out = detail::rewrite_program(p, [&](const StmtPtr& s) -> StmtPtr {
    bool touch = false;
    if (s->kind == Stmt::Kind::AsyncCopy)
      touch = pipelined.count(s->dstBuffer) || pipelined.count(s->srcBuffer);
    else if (s->kind == Stmt::Kind::Compute) {
      touch = pipelined.count(s->dstBuffer) > 0;
      for (const auto& op : s->operands) touch |= pipelined.count(op.buffer) > 0;
    }
    if (!touch) return s;
    auto c = std::make_shared<Stmt>(*s);
    auto prepend = [&](const std::string& buf, std::vector<ExprPtr>& idx) {
      if (pipelined.count(buf)) idx.insert(idx.begin(), lit(0));
    };
    if (c->kind == Stmt::Kind::AsyncCopy) {
      prepend(c->dstBuffer, c->dstIndices);
      prepend(c->srcBuffer, c->srcIndices);
    } else {
      prepend(c->dstBuffer, c->dstIndices);
      for (auto& op : c->operands) prepend(op.buffer, op.indices);
    }
    return c;
  });
  for (auto& b : out.locals) {
    auto it = stagesOf.find(b.name);
    if (it == stagesOf.end()) continue;
    b.shape.insert(b.shape.begin(), it->second);
    bool haveGroup = false;
    for (auto& g : out.groups) {
      if (g.name == b.name) {
        g.capacity = it->second;
        g.scope = b.scope;
        haveGroup = true;
      }
    }
    if (!haveGroup) out.groups.push_back({b.name, b.scope, it->second});
  }
  return out;
}

namespace detail {

struct EmitShapes {
  // Locates, per buffer, the dimension-expanded steady copy in the current
  // tree (analysis paths predate the rewrites, so steps re-locate nodes
  // structurally; prologue copies are recognizable because they sit outside
  // the pipelined loop).
  static const Stmt* steady_copy(const Program& p, const BufferPipelineInfo& info,
                                 const Stmt** loopOut,
                                 std::vector<PathEntry>* entriesOut = nullptr) {
    const Stmt* loop = nullptr;
    const Stmt* copy = nullptr;
    std::vector<PathEntry> entries;
    walk_sites(p, [&](const Site& s) {
      if (s.stmt->kind != Stmt::Kind::AsyncCopy || s.stmt->dstBuffer != info.buffer) return;
      for (const Stmt* a : ancestors_inner_out(s)) {
        if (a->kind == Stmt::Kind::For && a->var == info.pipelinedLoopVar) {
          loop = a;
          copy = s.stmt;
          entries = s.entries;
          return;
        }
        if (a->kind == Stmt::Kind::Predicated) return; // prologue copy
      }
    });
    if (loopOut) *loopOut = loop;
    if (entriesOut) *entriesOut = entries;
    return copy;
  }
};

}  // namespace detail

// Steps 2+3: lookahead shift plus circular-slot / out-of-bound wrapping.
//
// Root pipeline over v (extent E, stages s):
//   producer: dst slot (v + s-1) % s, source indices wrap v -> (v + s-1) % E
//   consumers: slot v % s
// Nested pipeline over u (extent F, stages t) fused into parent over v:
//   global step g = v*F + u + t-1
//   producer: dst slot g % t; reads parent slot (g / F) % s_parent with
//   u -> g % F and v -> (g / F) % E inside the source indices
//   consumers: slot (v*F + u) % t
inline Program shift_and_wrap_indices(const Program& p, const PipelinePlan& plan) {
  if (plan.infos.empty()) return p;
  std::map<std::string, const BufferPipelineInfo*> byBuffer;
  for (const auto& i : plan.infos) byBuffer[i.buffer] = &i;

  auto consumer_slot = [&](const BufferPipelineInfo& info) -> ExprPtr {
    if (info.parent < 0) return simplify(mod(var(info.pipelinedLoopVar), lit(info.stages)));
    const auto& par = plan.infos[info.parent];
    ExprPtr gBase = add(mul(var(par.pipelinedLoopVar), lit(info.pipelinedLoopExtent)),
                        var(info.pipelinedLoopVar));
    return simplify(mod(gBase, lit(info.stages)));
  };

  return detail::rewrite_program(p, [&](const StmtPtr& s) -> StmtPtr {
    if (s->kind == Stmt::Kind::AsyncCopy) {
      auto it = byBuffer.find(s->dstBuffer);
      if (it != byBuffer.end()) {
        const BufferPipelineInfo& info = *it->second;
        auto c = std::make_shared<Stmt>(*s);
        if (info.parent < 0) {
          int64_t E = info.pipelinedLoopExtent;
          int st = info.stages;
          ExprPtr vShift = add(var(info.pipelinedLoopVar), lit(st - 1));
          c->dstIndices[0] = simplify(mod(vShift, lit(st)));
          ExprPtr wrapped = simplify(mod(vShift, lit(E)));
          for (size_t k = 0; k < c->srcIndices.size(); ++k)
            c->srcIndices[k] =
                simplify(substitute(c->srcIndices[k], {{info.pipelinedLoopVar, wrapped}}));
        } else {
          const auto& par = plan.infos[info.parent];
          int64_t F = info.pipelinedLoopExtent;
          int t = info.stages;
          ExprPtr g = add(add(mul(var(par.pipelinedLoopVar), lit(F)), var(info.pipelinedLoopVar)),
                          lit(t - 1));
          c->dstIndices[0] = simplify(mod(g, lit(t)));
          // source is the parent buffer: fill its slot and wrap carried
          // indices; the overflow of the inner step advances the outer chunk
          ExprPtr chunk = floordiv(g, lit(F));
          c->srcIndices[0] = simplify(mod(chunk, lit(par.stages)));
          ExprPtr uWrap = simplify(mod(g, lit(F)));
          ExprPtr vWrap = simplify(mod(chunk, lit(par.pipelinedLoopExtent)));
          for (size_t k = 1; k < c->srcIndices.size(); ++k)
            c->srcIndices[k] = simplify(substitute(
                c->srcIndices[k],
                {{info.pipelinedLoopVar, uWrap}, {par.pipelinedLoopVar, vWrap}}));
        }
        return c;
      }
      // plain consumer read through an async copy (pipelined -> unpipelined)
      auto rt = byBuffer.find(s->srcBuffer);
      if (rt != byBuffer.end()) {
        auto c = std::make_shared<Stmt>(*s);
        c->srcIndices[0] = consumer_slot(*rt->second);
        return c;
      }
      return s;
    }
    if (s->kind == Stmt::Kind::Compute) {
      bool touch = false;
      for (const auto& op : s->operands) touch |= byBuffer.count(op.buffer) > 0;
      if (!touch) return s;
      auto c = std::make_shared<Stmt>(*s);
      for (auto& op : c->operands) {
        auto it = byBuffer.find(op.buffer);
        if (it != byBuffer.end()) op.indices[0] = consumer_slot(*it->second);
      }
      return c;
    }
    return s;
  });
}

namespace detail {

inline StmtPtr substituted_clone(const StmtPtr& s,
                                 const std::vector<std::pair<std::string, ExprPtr>>& map) {
  StmtPtr out = rewrite_stmt(s, [&](const StmtPtr& n) -> StmtPtr {
    bool touch = n->kind == Stmt::Kind::AsyncCopy || n->kind == Stmt::Kind::Compute ||
                 n->kind == Stmt::Kind::Predicated;
    if (!touch) return n;
    auto c = std::make_shared<Stmt>(*n);
    auto fix = [&](std::vector<ExprPtr>& idx) {
      for (auto& e : idx) e = simplify(substitute(e, map));
    };
    if (c->kind == Stmt::Kind::AsyncCopy) {
      fix(c->dstIndices);
      fix(c->srcIndices);
    } else if (c->kind == Stmt::Kind::Compute) {
      fix(c->dstIndices);
      for (auto& op : c->operands) fix(op.indices);
    } else {
      c->cond = simplify(substitute(c->cond, map));
    }
    return c;
  });
  // keep prologue clones pointer-distinct from the steady statement even
  // when the substitution happened to touch nothing
  if (out == s) out = std::make_shared<Stmt>(*s);
  return out;
}

// Rebuild with statement insertions keyed by original node pointers.
struct Insertions {
  std::map<const Stmt*, std::vector<StmtPtr>> before, after;
  std::map<const Stmt*, std::vector<StmtPtr>> headOf; // prepended to node body

  std::vector<StmtPtr> apply_body(const std::vector<StmtPtr>& body) const {
    std::vector<StmtPtr> out;
    for (const auto& c : body) {
      const Stmt* key = c.get();
      StmtPtr rebuilt = apply_stmt(c);
      auto itb = before.find(key);
      if (itb != before.end())
        for (const auto& x : itb->second) out.push_back(x);
      out.push_back(rebuilt);
      auto ita = after.find(key);
      if (ita != after.end())
        for (const auto& x : ita->second) out.push_back(x);
    }
    return out;
  }

  StmtPtr apply_stmt(const StmtPtr& s) const {
    std::vector<StmtPtr> nb;
    bool changed = false;
    if (!s->body.empty() || headOf.count(s.get())) {
      nb = apply_body(s->body);
      auto ith = headOf.find(s.get());
      if (ith != headOf.end()) nb.insert(nb.begin(), ith->second.begin(), ith->second.end());
      changed = true;
    }
    if (!changed) return s;
    auto c = std::make_shared<Stmt>(*s);
    c->body = std::move(nb);
    return c;
  }
};

}  // namespace detail

// Step 4: prologues. Each root pipeline copies chunks 0..stages-2 right
// before its loop (acquire/copy/commit per chunk, mirroring the steady-state
// group rhythm). A nested pipeline primes at the head of the outer loop body
// under an `outerVar == 0` guard; the guard block first waits on the outer
// group often enough to make the chunks its copies read visible.
inline Program inject_prologues(const Program& p, const PipelinePlan& plan) {
  if (plan.infos.empty()) return p;
  detail::Insertions ins;

  for (const auto& info : plan.infos) {
    const Stmt* loop = nullptr;
    std::vector<detail::PathEntry> entries;
    const Stmt* copy = detail::EmitShapes::steady_copy(p, info, &loop, &entries);
    if (!copy || !loop)
      throw AnalysisError("LostProducer", "cannot locate steady copy of '" + info.buffer + "'");
    // direct child of the pipelined loop containing the copy
    StmtPtr loadChild;
    for (size_t k = 0; k < entries.size(); ++k) {
      if (entries[k].container == loop) {
        loadChild = loop->body[entries[k].index];
        break;
      }
    }
    if (!loadChild) loadChild = loop->body.front();

    if (info.parent < 0) {
      std::vector<StmtPtr> pro;
      for (int c = 0; c < info.stages - 1; ++c) {
        pro.push_back(make_sync(SyncKind::ProducerAcquire, info.buffer));
        pro.push_back(detail::substituted_clone(
            loadChild, {{info.pipelinedLoopVar, lit(c - (info.stages - 1))}}));
        pro.push_back(make_sync(SyncKind::ProducerCommit, info.buffer));
      }
      auto& v = ins.before[loop];
      v.insert(v.end(), pro.begin(), pro.end());
    } else {
      const auto& par = plan.infos[info.parent];
      const Stmt* parLoop = nullptr;
      detail::EmitShapes::steady_copy(p, par, &parLoop);
      if (!parLoop)
        throw AnalysisError("LostProducer", "cannot locate outer loop of '" + par.buffer + "'");
      std::vector<StmtPtr> guarded;
      for (int w = 0; w < info.predicateWaits; ++w)
        guarded.push_back(make_sync(SyncKind::ConsumerWait, par.buffer));
      for (int m = 0; m < info.stages - 1; ++m) {
        guarded.push_back(make_sync(SyncKind::ProducerAcquire, info.buffer));
        guarded.push_back(detail::substituted_clone(
            loadChild, {{par.pipelinedLoopVar, lit(0)},
                        {info.pipelinedLoopVar, lit(m - (info.stages - 1))}}));
        guarded.push_back(make_sync(SyncKind::ProducerCommit, info.buffer));
      }
      ExprPtr firstIter = sub(lit(1), emin(var(par.pipelinedLoopVar), lit(1)));
      auto& v = ins.headOf[parLoop];
      v.push_back(make_predicated(firstIter, std::move(guarded)));
    }
  }

  Program out = p;
  out.body = ins.apply_body(p.body);
  return out;
}

// Step 5: the four synchronization primitives. producer_acquire/commit wrap
// the steady copy, consumer_wait/release wrap the use span, per buffer in
// declaration order. After each root pipeline's loop the groups left in
// flight (lookahead copies past the last consumed chunk) are drained with
// wait/release pairs so the loop can re-execute cleanly.
inline Program inject_sync(const Program& p, const PipelinePlan& plan) {
  if (plan.infos.empty()) return p;
  detail::Insertions ins;

  for (const auto& info : plan.infos) {
    const Stmt* loop = nullptr;
    std::vector<detail::PathEntry> entries;
    const Stmt* copy = detail::EmitShapes::steady_copy(p, info, &loop, &entries);
    if (!copy || !loop)
      throw AnalysisError("LostProducer", "cannot locate steady copy of '" + info.buffer + "'");

    const Stmt* loadChild = nullptr;
    for (size_t k = 0; k < entries.size(); ++k)
      if (entries[k].container == loop) loadChild = loop->body[entries[k].index].get();

    // use span: direct children of the loop containing consumer reads,
    // skipping synthesized prologue guards (they contain sync statements)
    const Stmt* useFirst = nullptr;
    const Stmt* useLast = nullptr;
    for (const auto& childPtr : loop->body) {
      const Stmt* child = childPtr.get();
      if (child == loadChild) continue;
      bool synthesized = false;
      bool reads = false;
      std::function<void(const Stmt&)> scan = [&](const Stmt& s) {
        if (s.kind == Stmt::Kind::Sync) synthesized = true;
        if (detail::reads_buffer(s, info.buffer)) reads = true;
        for (const auto& c : s.body) scan(*c);
      };
      scan(*child);
      if (child->kind == Stmt::Kind::Predicated && synthesized) continue;
      if (!reads) continue;
      if (!useFirst) useFirst = child;
      useLast = child;
    }
    if (!useFirst)
      throw AnalysisError("NoConsumer", "no consumer of '" + info.buffer + "' in pipelined loop");

    ins.before[loadChild].push_back(make_sync(SyncKind::ProducerAcquire, info.buffer));
    ins.after[loadChild].push_back(make_sync(SyncKind::ProducerCommit, info.buffer));
    ins.before[useFirst].push_back(make_sync(SyncKind::ConsumerWait, info.buffer));
    ins.after[useLast].push_back(make_sync(SyncKind::ConsumerRelease, info.buffer));

    // drains sit after the fusion root's loop
    const BufferPipelineInfo* root = &info;
    const Stmt* rootLoop = loop;
    if (info.parent >= 0) {
      root = &plan.infos[info.parent];
      detail::EmitShapes::steady_copy(p, *root, &rootLoop);
    }
    for (int d = 0; d < info.drainPairs; ++d) {
      ins.after[rootLoop].push_back(make_sync(SyncKind::ConsumerWait, info.buffer));
      ins.after[rootLoop].push_back(make_sync(SyncKind::ConsumerRelease, info.buffer));
    }
  }

  Program out = p;
  out.body = ins.apply_body(p.body);
  return out;
}

// The whole pass: five analysis steps, then the five transformation steps.
// Programs without hints pass through unchanged. The output carries no
// hints (they are consumed here) and revalidates.
inline Program transform(const Program& p) {
  require_valid(p, "transform input");
  PipelinePlan plan = analyze_pipelines(p);
  if (plan.infos.empty()) return p;
  Program out = expand_buffers(p, plan);
  out = shift_and_wrap_indices(out, plan);
  out = inject_prologues(out, plan);
  out = inject_sync(out, plan);
  for (auto& b : out.locals) b.pipelineStages.reset();
  require_valid(out, "transform output");
  return out;
}

}  // namespace pipec
