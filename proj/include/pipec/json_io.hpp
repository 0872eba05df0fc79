#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "pipec/perf_model.hpp"
#include "pipec/pipe_sim.hpp"
#include "pipec/pipeline_pass.hpp"
#include "pipec/tuner.hpp"

namespace pipec {

using Json = nlohmann::ordered_json;

inline Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("bad JSON in '" + path + "': " + e.what());
  }
  return j;
}

template <typename T>
inline T get_or(const Json& j, const std::string& key, T fallback) {
  if (j.contains(key)) return j.at(key).get<T>();
  return fallback;
}

inline WorkloadDesc workload_from_json(const Json& j) {
  WorkloadDesc w;
  w.M = j.at("M").get<int64_t>();
  w.N = j.at("N").get<int64_t>();
  w.K = j.at("K").get<int64_t>();
  w.batch = get_or<int64_t>(j, "batch", 1);
  w.elemBytes = get_or<int>(j, "elemBytes", 2);
  return w;
}

inline Json workload_to_json(const WorkloadDesc& w) {
  return Json{{"M", w.M}, {"N", w.N}, {"K", w.K}, {"batch", w.batch}, {"elemBytes", w.elemBytes}};
}

inline perf::HardwareSpec hardware_from_json(const Json& j) {
  perf::HardwareSpec hw;
  hw.numSM = get_or<int>(j, "numSM", hw.numSM);
  hw.throughputSM = get_or<double>(j, "throughputSM", hw.throughputSM);
  hw.bwLLC = get_or<double>(j, "bwLLC", hw.bwLLC);
  hw.bwDRAM = get_or<double>(j, "bwDRAM", hw.bwDRAM);
  hw.bwDRAMWrite = get_or<double>(j, "bwDRAMWrite", hw.bwDRAMWrite);
  hw.latLLCRead = get_or<double>(j, "latLLCRead", hw.latLLCRead);
  hw.latDRAMRead = get_or<double>(j, "latDRAMRead", hw.latDRAMRead);
  hw.latDRAMWrite = get_or<double>(j, "latDRAMWrite", hw.latDRAMWrite);
  hw.bwSmem = get_or<double>(j, "bwSmem", hw.bwSmem);
  hw.latSmem = get_or<double>(j, "latSmem", hw.latSmem);
  hw.smemPerSM = get_or<int64_t>(j, "smemPerSM", hw.smemPerSM);
  hw.regsPerSM = get_or<int64_t>(j, "regsPerSM", hw.regsPerSM);
  hw.maxThreadblkPerSM = get_or<int>(j, "maxThreadblkPerSM", hw.maxThreadblkPerSM);
  hw.maxWarpsPerSM = get_or<int>(j, "maxWarpsPerSM", hw.maxWarpsPerSM);
  hw.utilKneeWarps = get_or<int>(j, "utilKneeWarps", hw.utilKneeWarps);
  return hw;
}

inline perf::ScheduleParams params_from_json(const Json& j) {
  perf::ScheduleParams sp;
  sp.tileM = j.at("tileM").get<int64_t>();
  sp.tileN = j.at("tileN").get<int64_t>();
  sp.tileK = j.at("tileK").get<int64_t>();
  sp.regTileM = j.at("regTileM").get<int64_t>();
  sp.regTileN = j.at("regTileN").get<int64_t>();
  sp.regTileK = j.at("regTileK").get<int64_t>();
  sp.nSmemPipeStage = j.at("nSmemPipeStage").get<int>();
  sp.nRegPipeStage = j.at("nRegPipeStage").get<int>();
  sp.nWarpPerThreadblk = j.at("nWarpPerThreadblk").get<int>();
  return sp;
}

inline Json params_to_json(const perf::ScheduleParams& sp) {
  return Json{{"tileM", sp.tileM},
              {"tileN", sp.tileN},
              {"tileK", sp.tileK},
              {"regTileM", sp.regTileM},
              {"regTileN", sp.regTileN},
              {"regTileK", sp.regTileK},
              {"nSmemPipeStage", sp.nSmemPipeStage},
              {"nRegPipeStage", sp.nRegPipeStage},
              {"nWarpPerThreadblk", sp.nWarpPerThreadblk}};
}

inline Json breakdown_to_json(const perf::LatencyBreakdown& b) {
  return Json{{"tKernel", b.tKernel},
              {"tThreadblk", b.tThreadblk},
              {"tInit", b.tInit},
              {"tMainLoop", b.tMainLoop},
              {"tEpilogue", b.tEpilogue},
              {"tSmemLoad", b.tSmemLoad},
              {"tRegLoad", b.tRegLoad},
              {"tSmemUse", b.tSmemUse},
              {"tCompute", b.tCompute},
              {"nThreadblkBatch", b.nThreadblkBatch},
              {"nThreadblkPerSM", b.nThreadblkPerSM},
              {"nThreadblkPerBatch", b.nThreadblkPerBatch},
              {"nSmemLoop", b.nSmemLoop},
              {"nRegLoop", b.nRegLoop},
              {"bytesOneSmemLoop", b.bytesOneSmemLoop},
              {"bytesWorkset", b.bytesWorkset},
              {"bytesOutputTile", b.bytesOutputTile},
              {"flopsOneRegLoop", b.flopsOneRegLoop}};
}

inline sim::SimConfig simconfig_from_json(const Json& j) {
  sim::SimConfig c;
  c.tLoad = j.at("tLoad").get<double>();
  c.tUse = j.at("tUse").get<double>();
  c.nLoop = j.at("nLoop").get<int64_t>();
  c.nPipe = j.at("nPipe").get<int>();
  c.nMplx = get_or<int>(j, "nMplx", 1);
  return c;
}

inline tune::DesignSpace space_from_json(const Json& j, const perf::HardwareSpec& hw) {
  tune::DesignSpace d;
  d.workload = workload_from_json(j.at("workload"));
  d.hw = hw;
  auto lst64 = [&](const char* key, std::vector<int64_t>& v) {
    if (j.contains(key)) v = j.at(key).get<std::vector<int64_t>>();
  };
  auto lstInt = [&](const char* key, std::vector<int>& v) {
    if (j.contains(key)) v = j.at(key).get<std::vector<int>>();
  };
  lst64("tileM", d.tileM);
  lst64("tileN", d.tileN);
  lst64("tileK", d.tileK);
  lst64("regTileM", d.regTileM);
  lst64("regTileN", d.regTileN);
  lst64("regTileK", d.regTileK);
  lstInt("smemStages", d.smemStages);
  lstInt("regStages", d.regStages);
  lstInt("warps", d.warps);
  return d;
}

inline Json plan_to_json(const PipelinePlan& plan) {
  Json arr = Json::array();
  for (const auto& i : plan.infos) {
    Json consumers = Json::array();
    for (const auto& c : i.consumerPaths) consumers.push_back(c);
    arr.push_back(Json{{"buffer", i.buffer},
                       {"stages", i.stages},
                       {"producer", i.producerTensor},
                       {"consumers", consumers},
                       {"pipelinedLoopVar", i.pipelinedLoopVar},
                       {"pipelinedLoopExtent", i.pipelinedLoopExtent},
                       {"loadRegion", i.loadRegionPath},
                       {"useRegion", i.useRegionPath},
                       {"prologueSite", i.prologueSitePath},
                       {"parent", i.parent >= 0 ? Json(plan.infos[i.parent].buffer) : Json(nullptr)},
                       {"predicateWaits", i.predicateWaits},
                       {"drainPairs", i.drainPairs}});
  }
  return Json{{"pipelines", arr}};
}

inline Json report_to_json(const tune::TuningReport& r) {
  Json trials = Json::array();
  for (const auto& t : r.trials)
    trials.push_back(Json{{"trial", t.trialIndex},
                          {"params", params_to_json(t.params)},
                          {"measuredCost", t.measuredCost},
                          {"trueCost", t.trueCost}});
  Json curve = Json::array();
  for (size_t k = 0; k < r.bestInK.size(); ++k)
    curve.push_back(Json{{"k", k + 1}, {"best", r.bestInK[k]}, {"normalized", r.normalized[k]}});
  Json warnings = Json::array();
  for (const auto& w : r.warnings) warnings.push_back(w);
  return Json{{"method", r.method},
              {"seed", r.seed},
              {"exhaustiveBest", r.exhaustiveBest},
              {"trials", trials},
              {"bestInK", curve},
              {"warnings", warnings}};
}

}  // namespace pipec
