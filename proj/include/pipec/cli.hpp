#pragma once

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pipec/interp.hpp"
#include "pipec/json_io.hpp"
#include "pipec/parser.hpp"
#include "pipec/pipe_sim.hpp"
#include "pipec/pipeline_pass.hpp"
#include "pipec/printer.hpp"
#include "pipec/schedule.hpp"
#include "pipec/tuner.hpp"

namespace pipec {
namespace cli {

// Exit codes: 0 ok, 2 parse, 3 validate, 4 analysis/execution (rule on
// stderr), 5 equivalence failure, 6 config or I/O.
enum ExitCode { kOk = 0, kParse = 2, kValidate = 3, kAnalysis = 4, kEquivalence = 5, kConfig = 6 };

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << data;
}

inline std::vector<int64_t> random_tensor(int64_t count, uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<int64_t> v(count);
  for (auto& x : v) x = rng.range(-8, 8);
  return v;
}

inline std::map<std::string, std::vector<int64_t>> load_inputs(const Program& p,
                                                               const std::string& path,
                                                               uint64_t seed) {
  std::map<std::string, std::vector<int64_t>> inputs;
  Json j = path.empty() ? Json::object() : load_json_file(path);
  int which = 0;
  for (const auto& b : p.inputs) {
    if (j.contains(b.name)) {
      const Json& v = j.at(b.name);
      if (v.is_string()) {
        std::string s = v.get<std::string>();
        if (s.rfind("random:", 0) != 0)
          throw ConfigError("input '" + b.name + "': expected array or \"random:<seed>\"");
        inputs[b.name] = random_tensor(b.elem_count(), std::stoull(s.substr(7)));
      } else {
        inputs[b.name] = v.get<std::vector<int64_t>>();
      }
    } else {
      inputs[b.name] = random_tensor(b.elem_count(), seed + which);
    }
    ++which;
  }
  return inputs;
}

inline void dump_trace_jsonl(const RunResult& r, const std::string& path) {
  std::ostringstream os;
  for (const auto& e : r.trace) {
    Json j{{"step", e.step},        {"kind", sync_kind_name(e.kind)}, {"group", e.group},
           {"acquired", e.acquired}, {"committed", e.committed},       {"waited", e.waited},
           {"released", e.released}, {"inflight", e.inflight}};
    os << j.dump() << "\n";
  }
  write_file(path, os.str());
}

inline std::string csv_num(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

inline int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  try {
    return dispatch(args, out, err);
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    return kParse;
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return kValidate;
  } catch (const AnalysisError& e) {
    err << "analysis error [" << e.rule << "]: " << e.what() << "\n";
    return kAnalysis;
  } catch (const InterpError& e) {
    err << "execution error: " << e.what() << "\n";
    return kAnalysis;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kConfig;
  }
}

inline int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"pipec: multi-stage multi-level load-compute pipelining toolkit"};
  app.set_version_flag("--version", "pipec 0.1.0");
  app.require_subcommand(1);

  // print
  auto* cPrint = app.add_subcommand("print", "parse a program and print its canonical form");
  std::string printIn, printOut;
  cPrint->add_option("--input,-i", printIn, "IR file")->required();
  cPrint->add_option("--output,-o", printOut, "output file (stdout if omitted)");

  // schedule
  auto* cSched = app.add_subcommand("schedule", "apply a schedule script to a GEMM workload and lower it");
  std::string schedWorkload, schedScript, schedOut;
  cSched->add_option("--workload,-w", schedWorkload, "workload JSON")->required();
  cSched->add_option("--script,-s", schedScript, "schedule script")->required();
  cSched->add_option("--output,-o", schedOut, "output IR file");

  // transform
  auto* cXform = app.add_subcommand("transform", "run the pipelining transformation");
  std::string xfIn, xfOut, xfPlan;
  cXform->add_option("--input,-i", xfIn, "IR file")->required();
  cXform->add_option("--output,-o", xfOut, "output IR file");
  cXform->add_option("--emit-plan", xfPlan, "write the analysis plan as JSON");

  // run
  auto* cRun = app.add_subcommand("run", "interpret a program");
  std::string runIn, runData, runOut, runTrace, runMode = "strict";
  uint64_t runSeed = 0;
  cRun->add_option("--input,-i", runIn, "IR file")->required();
  cRun->add_option("--data,-d", runData, "input tensors JSON (arrays or \"random:<seed>\")");
  cRun->add_option("--output,-o", runOut, "output tensors JSON");
  cRun->add_option("--trace", runTrace, "pipeline event trace (JSON lines)");
  cRun->add_option("--mode", runMode, "strict|stale")->check(CLI::IsMember({"strict", "stale"}));
  cRun->add_option("--seed", runSeed, "seed for unspecified random inputs");

  // verify
  auto* cVerify = app.add_subcommand("verify", "check transform equivalence on random inputs");
  std::string vIn;
  int vTrials = 5;
  uint64_t vSeed = 0;
  cVerify->add_option("--input,-i", vIn, "IR file with pipeline hints")->required();
  cVerify->add_option("--trials,-n", vTrials, "number of random trials");
  cVerify->add_option("--seed", vSeed, "base seed");

  // predict
  auto* cPredict = app.add_subcommand("predict", "analytical latency prediction");
  std::string pWorkload, pParams, pHw, pOut;
  bool pTable = false;
  cPredict->add_option("--workload,-w", pWorkload, "workload JSON")->required();
  cPredict->add_option("--params,-p", pParams, "schedule params JSON")->required();
  cPredict->add_option("--hw", pHw, "hardware spec JSON")->required();
  cPredict->add_option("--output,-o", pOut, "breakdown JSON output");
  cPredict->add_flag("--table", pTable, "also print a human-readable table");

  // simulate
  auto* cSim = app.add_subcommand("simulate", "discrete-event pipeline simulation");
  std::string sCfg, sOut, sTrace;
  cSim->add_option("--config,-c", sCfg, "SimConfig JSON")->required();
  cSim->add_option("--output,-o", sOut, "result JSON");
  cSim->add_option("--trace", sTrace, "event trace CSV (time,worker,kind,iter)");

  // tune
  auto* cTune = app.add_subcommand("tune", "schedule search over a design space");
  std::string tMethod = "assisted", tSpace, tHw, tOut, tCsv;
  int tBudget = 50;
  uint64_t tSeed = 0;
  double tNoise = 0.0, tContention = 0.0;
  cTune->add_option("--method", tMethod, "grid|surrogate|analytical|assisted")
      ->check(CLI::IsMember({"grid", "surrogate", "analytical", "assisted"}));
  cTune->add_option("--budget", tBudget, "number of measured trials");
  cTune->add_option("--seed", tSeed, "seed");
  cTune->add_option("--space", tSpace, "design space JSON")->required();
  cTune->add_option("--hw", tHw, "hardware spec JSON")->required();
  cTune->add_option("--noise", tNoise, "measurement noise sigma");
  cTune->add_option("--contention", tContention, "bandwidth contention factor");
  cTune->add_option("--output,-o", tOut, "report JSON");
  cTune->add_option("--csv", tCsv, "best-in-k CSV (method,seed,k,best_cost,normalized)");

  // bench-model
  auto* cBench = app.add_subcommand("bench-model", "oracle-agreement grid and best-in-top-k study");
  std::string bGrid, bOut, bSpace, bHw, bTopk;
  cBench->add_option("--grid,-g", bGrid, "grid JSON")->required();
  cBench->add_option("--out,-o", bOut, "oracle agreement CSV")->required();
  cBench->add_option("--space", bSpace, "design space JSON for best-in-top-k");
  cBench->add_option("--hw", bHw, "hardware spec JSON for best-in-top-k");
  cBench->add_option("--topk", bTopk, "best-in-top-k CSV output");

  std::vector<char*> argv;
  std::vector<std::string> storage;
  storage.push_back("pipec");
  for (const auto& a : args) storage.push_back(a);
  for (auto& s : storage) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion& e) {
    out << app.version() << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return kConfig;
  }

  if (*cPrint) {
    Program p = parse_program(read_file(printIn));
    require_valid(p, "print");
    std::string text = print_program(p);
    if (printOut.empty())
      out << text;
    else
      write_file(printOut, text);
    return kOk;
  }

  if (*cSched) {
    Json wj = load_json_file(schedWorkload);
    WorkloadDesc w = workload_from_json(wj);
    bool preOp = get_or<bool>(wj, "preOp", false);
    ScheduleState st = gemm_schedule(w, preOp);
    std::vector<std::string> warnings;
    st = apply_script(st, read_file(schedScript), &warnings);
    for (const auto& wmsg : warnings) err << "warning: " << wmsg << "\n";
    Program p = lower(st);
    std::string text = print_program(p);
    if (schedOut.empty())
      out << text;
    else
      write_file(schedOut, text);
    return kOk;
  }

  if (*cXform) {
    Program p = parse_program(read_file(xfIn));
    require_valid(p, "transform input");
    if (!xfPlan.empty()) {
      PipelinePlan plan = analyze_pipelines(p);
      write_file(xfPlan, plan_to_json(plan).dump(2) + "\n");
    }
    Program q = transform(p);
    std::string text = print_program(q);
    if (xfOut.empty())
      out << text;
    else
      write_file(xfOut, text);
    return kOk;
  }

  if (*cRun) {
    Program p = parse_program(read_file(runIn));
    require_valid(p, "run");
    auto inputs = load_inputs(p, runData, runSeed);
    ExecMode mode = runMode == "strict" ? ExecMode::Strict : ExecMode::StaleRead;
    RunResult r = run(p, inputs, mode, runSeed);
    Json oj = Json::object();
    for (const auto& [name, data] : r.outputs) oj[name] = data;
    std::string text = oj.dump(2) + "\n";
    if (runOut.empty())
      out << text;
    else
      write_file(runOut, text);
    if (!runTrace.empty()) dump_trace_jsonl(r, runTrace);
    return kOk;
  }

  if (*cVerify) {
    Program p = parse_program(read_file(vIn));
    require_valid(p, "verify");
    if (collect_hints(p).empty()) err << "warning: program has no pipeline hints\n";
    if (vTrials <= 0) err << "warning: zero trials requested, nothing verified\n";
    Program q = transform(p);
    for (int t = 0; t < vTrials; ++t) {
      std::map<std::string, std::vector<int64_t>> inputs;
      int which = 0;
      for (const auto& b : p.inputs)
        inputs[b.name] = random_tensor(b.elem_count(), vSeed + 1000003ull * t + which++);
      DivergenceReport d = check_equivalence(p, q, inputs);
      if (!d.equal) {
        err << "equivalence failure on trial " << t << ": " << d.message << "\n";
        return kEquivalence;
      }
    }
    out << "verified: " << vTrials << " trial(s), outputs bit-identical\n";
    return kOk;
  }

  if (*cPredict) {
    WorkloadDesc w = workload_from_json(load_json_file(pWorkload));
    perf::ScheduleParams sp = params_from_json(load_json_file(pParams));
    perf::HardwareSpec hw = hardware_from_json(load_json_file(pHw));
    perf::LatencyBreakdown b = perf::predict(w, sp, hw);
    Json j = breakdown_to_json(b);
    std::string text = j.dump(2) + "\n";
    if (pOut.empty())
      out << text;
    else
      write_file(pOut, text);
    if (pTable) {
      out << "kernel latency      " << csv_num(b.tKernel) << " cycles\n"
          << "  threadblock       " << csv_num(b.tThreadblk) << "\n"
          << "    init            " << csv_num(b.tInit) << "\n"
          << "    main loop       " << csv_num(b.tMainLoop) << "\n"
          << "    epilogue        " << csv_num(b.tEpilogue) << "\n"
          << "  smem load / use   " << csv_num(b.tSmemLoad) << " / " << csv_num(b.tSmemUse) << "\n"
          << "  reg load / mma    " << csv_num(b.tRegLoad) << " / " << csv_num(b.tCompute) << "\n"
          << "  tb batches        " << b.nThreadblkBatch << " (" << b.nThreadblkPerSM
          << " per SM)\n";
    }
    return kOk;
  }

  if (*cSim) {
    sim::SimConfig cfg = simconfig_from_json(load_json_file(sCfg));
    sim::SimResult r = sim::simulate_pipeline(cfg, !sTrace.empty());
    Json j{{"makespan", r.makespan},
           {"firstComputeStart", r.firstComputeStart},
           {"busy", r.busy},
           {"idleFraction", r.idleFraction}};
    std::string text = j.dump(2) + "\n";
    if (sOut.empty())
      out << text;
    else
      write_file(sOut, text);
    if (!sTrace.empty()) {
      std::ostringstream cs;
      cs << "time,worker,kind,iter\n";
      for (const auto& e : r.trace)
        cs << csv_num(e.time) << "," << e.worker << "," << sim::sim_event_name(e.kind) << ","
           << e.iteration << "\n";
      write_file(sTrace, cs.str());
    }
    return kOk;
  }

  if (*cTune) {
    perf::HardwareSpec hw = hardware_from_json(load_json_file(tHw));
    tune::DesignSpace d = space_from_json(load_json_file(tSpace), hw);
    tune::Method m = tMethod == "grid"         ? tune::Method::Grid
                     : tMethod == "surrogate"  ? tune::Method::Surrogate
                     : tMethod == "analytical" ? tune::Method::AnalyticalOnly
                                               : tune::Method::ModelAssisted;
    tune::TuningReport rep = tune::tune(m, tBudget, d, tContention, tNoise, tSeed);
    for (const auto& wmsg : rep.warnings) err << "warning: " << wmsg << "\n";
    std::string text = report_to_json(rep).dump(2) + "\n";
    if (tOut.empty())
      out << text;
    else
      write_file(tOut, text);
    if (!tCsv.empty()) {
      std::ostringstream cs;
      cs << "method,seed,k,best_cost,normalized\n";
      for (size_t k = 0; k < rep.bestInK.size(); ++k)
        cs << rep.method << "," << rep.seed << "," << (k + 1) << "," << csv_num(rep.bestInK[k])
           << "," << csv_num(rep.normalized[k]) << "\n";
      write_file(tCsv, cs.str());
    }
    return kOk;
  }

  if (*cBench) {
    Json gj = load_json_file(bGrid);
    if (!gj.contains("ratios") || gj.at("ratios").empty())
      throw ConfigError("bench-model: grid has no tLoad/tUse ratios");
    std::vector<double> ratios = gj.at("ratios").get<std::vector<double>>();
    double tUse = get_or<double>(gj, "tUse", 10.0);
    std::vector<int64_t> nLoops = get_or<std::vector<int64_t>>(gj, "nLoop", {32, 64});
    std::vector<int> nPipes = get_or<std::vector<int>>(gj, "nPipe", {1, 2, 3, 4});
    std::vector<int> nMplxs = get_or<std::vector<int>>(gj, "nMplx", {1, 2, 3, 4});
    std::ostringstream cs;
    cs << "tLoad,tUse,nLoop,nPipe,nMplx,formula,makespan,comparable,rel_err,formula_regime,"
          "sim_idle,sim_regime,regime_match\n";
    for (double r : ratios)
      for (int64_t nl : nLoops)
        for (int np : nPipes)
          for (int nm : nMplxs) {
            double tLoad = r * tUse;
            double formula = perf::pipeline_latency(tLoad, tUse, nl, np, nm);
            sim::SimConfig cfg{tLoad, tUse, nl, np, nm};
            sim::SimResult sr = sim::simulate_pipeline(cfg);
            double comparable = sim::comparable_worker_latency(sr, cfg);
            double relErr = std::abs(formula - comparable) / comparable;
            bool formulaCompute = tLoad <= (static_cast<double>(np) * nm - 1) * tUse;
            bool simCompute = sr.idleFraction < 0.02;
            cs << csv_num(tLoad) << "," << csv_num(tUse) << "," << nl << "," << np << "," << nm
               << "," << csv_num(formula) << "," << csv_num(sr.makespan) << ","
               << csv_num(comparable) << "," << csv_num(relErr) << ","
               << (formulaCompute ? "compute" : "load") << "," << csv_num(sr.idleFraction) << ","
               << (simCompute ? "compute" : "load") << ","
               << (formulaCompute == simCompute ? 1 : 0) << "\n";
          }
    write_file(bOut, cs.str());

    if (!bSpace.empty()) {
      if (bHw.empty() || bTopk.empty())
        throw ConfigError("bench-model: --space needs --hw and --topk");
      perf::HardwareSpec hw = hardware_from_json(load_json_file(bHw));
      tune::DesignSpace d = space_from_json(load_json_file(bSpace), hw);
      std::vector<perf::ScheduleParams> space = tune::enumerate_space(d);
      std::vector<double> costs = tune::exhaustive_costs(space, d, 0.0);
      double best = *std::min_element(costs.begin(), costs.end());
      std::vector<std::pair<double, size_t>> keyed;
      for (size_t i = 0; i < space.size(); ++i)
        keyed.emplace_back(perf::predict(d.workload, space[i], d.hw).tKernel, i);
      std::stable_sort(keyed.begin(), keyed.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      std::ostringstream ts;
      ts << "k,best_true_cost,normalized\n";
      double runBest = std::numeric_limits<double>::infinity();
      std::vector<int64_t> ks = get_or<std::vector<int64_t>>(gj, "topk", {10, 50});
      size_t next = 0;
      for (int64_t k : ks) {
        while (next < std::min<size_t>(k, keyed.size())) {
          runBest = std::min(runBest, costs[keyed[next].second]);
          ++next;
        }
        ts << k << "," << csv_num(runBest) << "," << csv_num(best / runBest) << "\n";
      }
      write_file(bTopk, ts.str());
    }
    return kOk;
  }

  err << "no subcommand\n";
  return kConfig;
}

}  // namespace cli
}  // namespace pipec
