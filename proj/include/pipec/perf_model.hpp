#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "pipec/common.hpp"
#include "pipec/schedule.hpp"

namespace pipec {
namespace perf {

struct HardwareSpec {
  int numSM = 108;
  double throughputSM = 1024;   // FLOPs / cycle / SM
  double bwLLC = 512;           // bytes / cycle, device-wide
  double bwDRAM = 64;           // bytes / cycle
  double bwDRAMWrite = 32;      // bytes / cycle
  double latLLCRead = 200;      // cycles
  double latDRAMRead = 400;     // cycles
  double latDRAMWrite = 400;    // cycles
  double bwSmem = 128;          // bytes / cycle / SM, shared-memory read path
  double latSmem = 25;          // cycles
  int64_t smemPerSM = 163840;   // bytes
  int64_t regsPerSM = 262144;   // bytes
  int maxThreadblkPerSM = 32;
  int maxWarpsPerSM = 64;
  int utilKneeWarps = 8;        // warps per SM needed to saturate compute
};

struct ScheduleParams {
  int64_t tileM = 128, tileN = 128, tileK = 32;
  int64_t regTileM = 64, regTileN = 64, regTileK = 16;
  int nSmemPipeStage = 2;
  int nRegPipeStage = 2;
  int nWarpPerThreadblk = 4;
};

struct LatencyBreakdown {
  double tKernel = 0, tThreadblk = 0, tInit = 0, tMainLoop = 0, tEpilogue = 0;
  double tSmemLoad = 0, tRegLoad = 0, tSmemUse = 0, tCompute = 0;
  int64_t nThreadblkBatch = 0, nThreadblkPerSM = 0, nThreadblkPerBatch = 0;
  int64_t nSmemLoop = 0, nRegLoop = 0;
  int64_t bytesOneSmemLoop = 0, bytesWorkset = 0, bytesOutputTile = 0;
  int64_t flopsOneRegLoop = 0;
};

// Steady-state latency of a load-and-use loop. While one chunk loads, the
// compute unit can serve the other in-flight stages of this pipeline and the
// other multiplexed workers; once the load outlasts all of that overlap the
// loop runs at the load-side rate.
inline double pipeline_latency(double tLoad, double tUse, int64_t nLoop, int nPipe, int nMplx) {
  if (tLoad <= (static_cast<double>(nPipe) * nMplx - 1) * tUse)
    return tUse * static_cast<double>(nLoop);
  return (tLoad + tUse) * static_cast<double>(nLoop) / nPipe;
}

// Saturating-linear occupancy: compute throughput ramps with resident warps
// until the knee.
inline double util(int nWarpPerThreadblk, int64_t nThreadblkPerSM, const HardwareSpec& hw) {
  double warps = static_cast<double>(nWarpPerThreadblk) * static_cast<double>(nThreadblkPerSM);
  return std::min(1.0, warps / hw.utilKneeWarps);
}

inline double compute_latency(int64_t flopsOneRegLoop, const HardwareSpec& hw, int nWarp,
                              int64_t nTbPerSM) {
  if (flopsOneRegLoop == 0) return 0;
  return static_cast<double>(flopsOneRegLoop) / (hw.throughputSM * util(nWarp, nTbPerSM, hw));
}

// Shared-memory chunk load: the slower of the LLC path (all threadblocks'
// bytes) and the DRAM path (the batch's unique working set).
inline double smem_load_latency(int64_t bytesOneSmemLoop, int64_t bytesWorkset,
                                int64_t nTbPerBatch, const HardwareSpec& hw) {
  double llc = hw.latLLCRead +
               static_cast<double>(bytesOneSmemLoop) * static_cast<double>(nTbPerBatch) / hw.bwLLC;
  double dram = hw.latDRAMRead + static_cast<double>(bytesWorkset) / hw.bwDRAM;
  return std::max(llc, dram);
}

inline double epilogue_latency(int64_t bytesOutputTile, int64_t nTbPerBatch,
                               const HardwareSpec& hw) {
  return hw.latDRAMWrite +
         static_cast<double>(bytesOutputTile) * static_cast<double>(nTbPerBatch) / hw.bwDRAMWrite;
}

struct Occupancy {
  int64_t nThreadblkPerSM = 0;
  int64_t nThreadblkBatch = 0;
  int64_t nThreadblkPerBatch = 0;
  int64_t smemBytesPerThreadblk = 0;
  int64_t regBytesPerThreadblk = 0;
};

inline int64_t smem_bytes(const ScheduleParams& sp, const WorkloadDesc& w) {
  return (sp.tileM * sp.tileK + sp.tileK * sp.tileN) * w.elemBytes * sp.nSmemPipeStage;
}

inline int64_t reg_bytes_per_warp(const ScheduleParams& sp, const WorkloadDesc& w) {
  // pipelined operand fragments plus the (4-byte) accumulator tile
  return (sp.regTileM * sp.regTileK + sp.regTileK * sp.regTileN) * w.elemBytes *
             sp.nRegPipeStage +
         sp.regTileM * sp.regTileN * 4;
}

// Residency is limited by the shared-memory and register footprints (each
// scaled by its stage count), plus the hardware caps. Throws on a design
// point that cannot host even one threadblock.
inline Occupancy occupancy(const ScheduleParams& sp, const WorkloadDesc& w,
                           const HardwareSpec& hw) {
  Occupancy o;
  o.smemBytesPerThreadblk = smem_bytes(sp, w);
  o.regBytesPerThreadblk = reg_bytes_per_warp(sp, w) * sp.nWarpPerThreadblk;
  int64_t bySmem = hw.smemPerSM / std::max<int64_t>(1, o.smemBytesPerThreadblk);
  int64_t byReg = hw.regsPerSM / std::max<int64_t>(1, o.regBytesPerThreadblk);
  int64_t byWarps = hw.maxWarpsPerSM / std::max(1, sp.nWarpPerThreadblk);
  o.nThreadblkPerSM = std::min({static_cast<int64_t>(hw.maxThreadblkPerSM), bySmem, byReg, byWarps});
  if (o.nThreadblkPerSM < 1)
    throw ConfigError("unschedulable: threadblock needs " +
                      std::to_string(o.smemBytesPerThreadblk) + " B smem / " +
                      std::to_string(o.regBytesPerThreadblk) + " B regs, exceeding one SM");
  int64_t total = (w.M / sp.tileM) * (w.N / sp.tileN) * w.batch;
  o.nThreadblkPerBatch = o.nThreadblkPerSM * hw.numSM;
  o.nThreadblkBatch = (total + o.nThreadblkPerBatch - 1) / o.nThreadblkPerBatch;
  return o;
}

inline bool params_valid(const ScheduleParams& sp, const WorkloadDesc& w) {
  if (sp.tileM < 1 || sp.tileN < 1 || sp.tileK < 1 || sp.regTileM < 1 || sp.regTileN < 1 ||
      sp.regTileK < 1 || sp.nWarpPerThreadblk < 1)
    return false;
  if (sp.nSmemPipeStage < 2 || sp.nRegPipeStage < 2) return false;
  if (w.M % sp.tileM || w.N % sp.tileN || w.K % sp.tileK) return false;
  if (sp.tileM % sp.regTileM || sp.tileN % sp.regTileN || sp.tileK % sp.regTileK) return false;
  // the threadblock tile is split evenly among warps, one register tile each
  if (sp.nWarpPerThreadblk * sp.regTileM * sp.regTileN != sp.tileM * sp.tileN) return false;
  // the register pipeline must not look ahead past the shared-stage window
  int64_t nRegLoop = sp.tileK / sp.regTileK;
  if (sp.nRegPipeStage - 1 > (sp.nSmemPipeStage - 1) * nRegLoop) return false;
  return true;
}

// DRAM working set of one threadblock-batch during one shared-memory loop
// iteration: unique A row-blocks and B column-blocks touched by the resident
// tiles (threadblocks are laid out row-major over the output grid).
inline int64_t batch_workset_bytes(const ScheduleParams& sp, const WorkloadDesc& w,
                                   int64_t nTbPerBatch) {
  int64_t nJ = w.N / sp.tileN;
  int64_t rows = (nTbPerBatch + nJ - 1) / nJ;            // distinct (batch, i0) blocks
  int64_t cols = std::min<int64_t>(nTbPerBatch, nJ);     // distinct j0 blocks
  return rows * sp.tileM * sp.tileK * w.elemBytes + cols * sp.tileK * sp.tileN * w.elemBytes;
}

// The full model: the register-level pipeline forms the use phase of the
// shared-level pipeline, whose steady state fills the threadblock main loop.
inline LatencyBreakdown predict(const WorkloadDesc& w, const ScheduleParams& sp,
                                const HardwareSpec& hw) {
  if (!params_valid(sp, w)) throw ConfigError("invalid schedule parameters for workload");
  Occupancy occ = occupancy(sp, w, hw);
  LatencyBreakdown b;
  b.nThreadblkPerSM = occ.nThreadblkPerSM;
  b.nThreadblkBatch = occ.nThreadblkBatch;
  b.nThreadblkPerBatch = occ.nThreadblkPerBatch;
  b.nSmemLoop = w.K / sp.tileK;
  b.nRegLoop = sp.tileK / sp.regTileK;
  b.flopsOneRegLoop = 2 * sp.regTileM * sp.regTileN * sp.regTileK;
  b.bytesOneSmemLoop = (sp.tileM + sp.tileN) * sp.tileK * w.elemBytes;
  b.bytesWorkset = batch_workset_bytes(sp, w, occ.nThreadblkPerBatch);
  b.bytesOutputTile = sp.tileM * sp.tileN * w.elemBytes;

  b.tCompute = compute_latency(b.flopsOneRegLoop, hw, sp.nWarpPerThreadblk, occ.nThreadblkPerSM);
  b.tRegLoad = hw.latSmem + static_cast<double>((sp.regTileM * sp.regTileK +
                                                 sp.regTileK * sp.regTileN) *
                                                w.elemBytes) /
                                hw.bwSmem;
  b.tSmemLoad = smem_load_latency(b.bytesOneSmemLoop, b.bytesWorkset, occ.nThreadblkPerBatch, hw);
  b.tSmemUse = pipeline_latency(b.tRegLoad, b.tCompute, b.nRegLoop, sp.nRegPipeStage,
                                sp.nWarpPerThreadblk);
  b.tMainLoop = pipeline_latency(b.tSmemLoad, b.tSmemUse, b.nSmemLoop, sp.nSmemPipeStage,
                                 static_cast<int>(occ.nThreadblkPerSM));
  b.tInit = b.tSmemLoad + b.tRegLoad;
  b.tEpilogue = epilogue_latency(b.bytesOutputTile, occ.nThreadblkPerBatch, hw);
  b.tThreadblk = b.tInit + b.tMainLoop + b.tEpilogue;
  b.tKernel = b.tThreadblk * static_cast<double>(occ.nThreadblkBatch);
  return b;
}

}  // namespace perf
}  // namespace pipec
