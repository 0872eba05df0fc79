#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pipec/expr.hpp"

namespace pipec {

struct BufferDecl {
  std::string name;
  Scope scope = Scope::Global;
  std::string elemType; // textual element type, e.g. "i32", "f16"
  std::vector<int64_t> shape;
  int elemBytes = 4;
  std::optional<int> pipelineStages;

  int64_t elem_count() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
  int64_t byte_size() const { return elem_count() * elemBytes; }
};

struct PipelineGroupDecl {
  std::string name;
  Scope scope = Scope::Shared;
  int capacity = 2;
};

enum class SyncKind { ProducerAcquire, ProducerCommit, ConsumerWait, ConsumerRelease };

inline const char* sync_kind_name(SyncKind k) {
  switch (k) {
    case SyncKind::ProducerAcquire: return "producer_acquire";
    case SyncKind::ProducerCommit: return "producer_commit";
    case SyncKind::ConsumerWait: return "consumer_wait";
    case SyncKind::ConsumerRelease: return "consumer_release";
  }
  return "?";
}

struct Stmt;
using StmtPtr = std::shared_ptr<const Stmt>;

struct ComputeOperand {
  std::string buffer;
  std::vector<ExprPtr> indices;
};

struct Stmt {
  enum class Kind { For, Block, AsyncCopy, Compute, Sync, Predicated };
  Kind kind;

  // For
  std::string var;
  int64_t extent = 0;
  LoopKind loopKind = LoopKind::Sequential;

  // For / Block / Predicated
  std::vector<StmtPtr> body;

  // AsyncCopy
  std::string dstBuffer;
  std::vector<ExprPtr> dstIndices;
  std::string srcBuffer;
  std::vector<ExprPtr> srcIndices;
  int bytesPerElem = 4;

  // Compute (reuses dstBuffer/dstIndices)
  std::vector<ComputeOperand> operands;
  std::string opTag;
  int64_t flopCount = 0;

  // Sync
  SyncKind syncKind = SyncKind::ProducerAcquire;
  std::string group;

  // Predicated
  ExprPtr cond;
};

inline StmtPtr make_for(std::string v, int64_t extent, LoopKind k, std::vector<StmtPtr> body) {
  auto s = std::make_shared<Stmt>();
  s->kind = Stmt::Kind::For;
  s->var = std::move(v);
  s->extent = extent;
  s->loopKind = k;
  s->body = std::move(body);
  return s;
}

inline StmtPtr make_block(std::vector<StmtPtr> body) {
  auto s = std::make_shared<Stmt>();
  s->kind = Stmt::Kind::Block;
  s->body = std::move(body);
  return s;
}

inline StmtPtr make_copy(std::string dst, std::vector<ExprPtr> di, std::string src,
                         std::vector<ExprPtr> si, int bytesPerElem) {
  auto s = std::make_shared<Stmt>();
  s->kind = Stmt::Kind::AsyncCopy;
  s->dstBuffer = std::move(dst);
  s->dstIndices = std::move(di);
  s->srcBuffer = std::move(src);
  s->srcIndices = std::move(si);
  s->bytesPerElem = bytesPerElem;
  return s;
}

inline StmtPtr make_compute(std::string dst, std::vector<ExprPtr> di,
                            std::vector<ComputeOperand> ops, std::string tag, int64_t flops) {
  auto s = std::make_shared<Stmt>();
  s->kind = Stmt::Kind::Compute;
  s->dstBuffer = std::move(dst);
  s->dstIndices = std::move(di);
  s->operands = std::move(ops);
  s->opTag = std::move(tag);
  s->flopCount = flops;
  return s;
}

inline StmtPtr make_sync(SyncKind k, std::string group) {
  auto s = std::make_shared<Stmt>();
  s->kind = Stmt::Kind::Sync;
  s->syncKind = k;
  s->group = std::move(group);
  return s;
}

inline StmtPtr make_predicated(ExprPtr cond, std::vector<StmtPtr> body) {
  auto s = std::make_shared<Stmt>();
  s->kind = Stmt::Kind::Predicated;
  s->cond = std::move(cond);
  s->body = std::move(body);
  return s;
}

// A whole kernel: global inputs/outputs, sub-global locals, pipeline groups
// and the loop-nest body. Values are immutable after construction.
struct Program {
  std::vector<BufferDecl> inputs;
  std::vector<BufferDecl> outputs;
  std::vector<BufferDecl> locals;
  std::vector<PipelineGroupDecl> groups;
  std::vector<StmtPtr> body;

  const BufferDecl* find_buffer(const std::string& name) const {
    for (const auto& b : inputs)
      if (b.name == name) return &b;
    for (const auto& b : outputs)
      if (b.name == name) return &b;
    for (const auto& b : locals)
      if (b.name == name) return &b;
    return nullptr;
  }
  const PipelineGroupDecl* find_group(const std::string& name) const {
    for (const auto& g : groups)
      if (g.name == name) return &g;
    return nullptr;
  }
  std::vector<const BufferDecl*> all_buffers() const {
    std::vector<const BufferDecl*> v;
    for (const auto& b : inputs) v.push_back(&b);
    for (const auto& b : outputs) v.push_back(&b);
    for (const auto& b : locals) v.push_back(&b);
    return v;
  }
};

inline bool stmt_equal(const Stmt& a, const Stmt& b);

inline bool body_equal(const std::vector<StmtPtr>& a, const std::vector<StmtPtr>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (!stmt_equal(*a[i], *b[i])) return false;
  return true;
}

inline bool indices_equal(const std::vector<ExprPtr>& a, const std::vector<ExprPtr>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (!expr_equal(*a[i], *b[i])) return false;
  return true;
}

inline bool stmt_equal(const Stmt& a, const Stmt& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case Stmt::Kind::For:
      return a.var == b.var && a.extent == b.extent && a.loopKind == b.loopKind &&
             body_equal(a.body, b.body);
    case Stmt::Kind::Block:
      return body_equal(a.body, b.body);
    case Stmt::Kind::AsyncCopy:
      return a.dstBuffer == b.dstBuffer && a.srcBuffer == b.srcBuffer &&
             a.bytesPerElem == b.bytesPerElem && indices_equal(a.dstIndices, b.dstIndices) &&
             indices_equal(a.srcIndices, b.srcIndices);
    case Stmt::Kind::Compute: {
      if (a.dstBuffer != b.dstBuffer || a.opTag != b.opTag || a.flopCount != b.flopCount ||
          !indices_equal(a.dstIndices, b.dstIndices) || a.operands.size() != b.operands.size())
        return false;
      for (size_t i = 0; i < a.operands.size(); ++i)
        if (a.operands[i].buffer != b.operands[i].buffer ||
            !indices_equal(a.operands[i].indices, b.operands[i].indices))
          return false;
      return true;
    }
    case Stmt::Kind::Sync:
      return a.syncKind == b.syncKind && a.group == b.group;
    case Stmt::Kind::Predicated:
      return expr_equal(*a.cond, *b.cond) && body_equal(a.body, b.body);
  }
  return false;
}

inline bool buffers_equal(const std::vector<BufferDecl>& a, const std::vector<BufferDecl>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    const auto& x = a[i];
    const auto& y = b[i];
    if (x.name != y.name || x.scope != y.scope || x.elemType != y.elemType ||
        x.shape != y.shape || x.elemBytes != y.elemBytes || x.pipelineStages != y.pipelineStages)
      return false;
  }
  return true;
}

inline bool program_equal(const Program& a, const Program& b) {
  if (!buffers_equal(a.inputs, b.inputs) || !buffers_equal(a.outputs, b.outputs) ||
      !buffers_equal(a.locals, b.locals))
    return false;
  if (a.groups.size() != b.groups.size()) return false;
  for (size_t i = 0; i < a.groups.size(); ++i) {
    if (a.groups[i].name != b.groups[i].name || a.groups[i].scope != b.groups[i].scope ||
        a.groups[i].capacity != b.groups[i].capacity)
      return false;
  }
  return body_equal(a.body, b.body);
}

}  // namespace pipec
