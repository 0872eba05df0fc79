#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pipec/common.hpp"
#include "pipec/perf_model.hpp"
#include "pipec/pipe_sim.hpp"

namespace pipec {
namespace tune {

// Candidate lists per schedule parameter; enumeration filters by
// divisibility, warp partitioning and occupancy-schedulability.
struct DesignSpace {
  WorkloadDesc workload;
  perf::HardwareSpec hw;
  std::vector<int64_t> tileM{64, 128, 256};
  std::vector<int64_t> tileN{64, 128, 256};
  std::vector<int64_t> tileK{16, 32, 64};
  std::vector<int64_t> regTileM{16, 32, 64};
  std::vector<int64_t> regTileN{16, 32, 64};
  std::vector<int64_t> regTileK{8, 16};
  std::vector<int> smemStages{2, 3, 4, 5};
  std::vector<int> regStages{2, 3};
  std::vector<int> warps{4, 8, 16};
};

inline bool schedulable(const perf::ScheduleParams& sp, const DesignSpace& d) {
  if (!perf::params_valid(sp, d.workload)) return false;
  try {
    perf::occupancy(sp, d.workload, d.hw);
  } catch (const ConfigError&) {
    return false;
  }
  return true;
}

// Cartesian product of the candidate lists, validity-filtered, in a fixed
// lexicographic order.
inline std::vector<perf::ScheduleParams> enumerate_space(const DesignSpace& d) {
  std::vector<perf::ScheduleParams> out;
  for (int64_t tm : d.tileM)
    for (int64_t tn : d.tileN)
      for (int64_t tk : d.tileK)
        for (int64_t rm : d.regTileM)
          for (int64_t rn : d.regTileN)
            for (int64_t rk : d.regTileK)
              for (int ss : d.smemStages)
                for (int rs : d.regStages)
                  for (int wp : d.warps) {
                    perf::ScheduleParams sp{tm, tn, tk, rm, rn, rk, ss, rs, wp};
                    if (schedulable(sp, d)) out.push_back(sp);
                  }
  if (out.empty()) throw ConfigError("design space is empty after validity filtering");
  return out;
}

// Ascending by analytically predicted kernel latency, ties by enumeration
// order.
inline std::vector<perf::ScheduleParams> analytical_rank(const DesignSpace& d) {
  std::vector<perf::ScheduleParams> space = enumerate_space(d);
  std::vector<std::pair<double, size_t>> keyed;
  keyed.reserve(space.size());
  for (size_t i = 0; i < space.size(); ++i)
    keyed.emplace_back(perf::predict(d.workload, space[i], d.hw).tKernel, i);
  std::stable_sort(keyed.begin(), keyed.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<perf::ScheduleParams> out;
  out.reserve(space.size());
  for (const auto& [cost, i] : keyed) out.push_back(space[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Gradient-boosted regression stumps over normalized parameter features
// ---------------------------------------------------------------------------

constexpr int kNumFeatures = 13;

inline std::array<double, kNumFeatures> featurize(const perf::ScheduleParams& sp,
                                                  const DesignSpace& d) {
  std::array<double, kNumFeatures> f{};
  f[0] = std::log2(static_cast<double>(sp.tileM));
  f[1] = std::log2(static_cast<double>(sp.tileN));
  f[2] = std::log2(static_cast<double>(sp.tileK));
  f[3] = std::log2(static_cast<double>(sp.regTileM));
  f[4] = std::log2(static_cast<double>(sp.regTileN));
  f[5] = std::log2(static_cast<double>(sp.regTileK));
  f[6] = sp.nSmemPipeStage;
  f[7] = sp.nRegPipeStage;
  f[8] = sp.nWarpPerThreadblk;
  f[9] = std::log2(static_cast<double>(perf::smem_bytes(sp, d.workload)));
  f[10] = std::log2(static_cast<double>(perf::reg_bytes_per_warp(sp, d.workload)));
  f[11] = static_cast<double>(d.workload.K / sp.tileK);  // smem loop trips
  f[12] = static_cast<double>(sp.tileK / sp.regTileK);   // reg loop trips
  return f;
}

struct Stump {
  int feature = 0;
  double threshold = 0;
  double left = 0, right = 0;
};

// Deterministic boosted-stump regressor on log-costs. predict() is constant
// between update()/fit() calls.
struct Surrogate {
  double base = 0;
  std::vector<Stump> stumps;
  double learningRate = 0.3;
  int rounds = 64;
  bool trained = false;

  double predict(const std::array<double, kNumFeatures>& x) const {
    double y = base;
    for (const auto& st : stumps) y += learningRate * (x[st.feature] <= st.threshold ? st.left : st.right);
    return y;
  }

  std::vector<double> trainingCurve; // training MSE after each boosting round
};

// Fits the model to (features, cost) pairs; costs are modeled in log space.
// Greedy exact stump search with midpoint thresholds; deterministic given
// data order.
inline Surrogate train_surrogate(Surrogate model,
                                 const std::vector<std::array<double, kNumFeatures>>& xs,
                                 const std::vector<double>& costs) {
  if (xs.empty()) return model;
  size_t n = xs.size();
  std::vector<double> y(n);
  for (size_t i = 0; i < n; ++i) y[i] = std::log(std::max(costs[i], 1e-9));
  model.stumps.clear();
  model.trainingCurve.clear();
  model.base = 0;
  for (double v : y) model.base += v;
  model.base /= static_cast<double>(n);
  std::vector<double> pred(n, model.base);

  for (int round = 0; round < model.rounds; ++round) {
    std::vector<double> resid(n);
    for (size_t i = 0; i < n; ++i) resid[i] = y[i] - pred[i];
    double bestGain = 0;
    Stump best;
    bool found = false;
    for (int f = 0; f < kNumFeatures; ++f) {
      std::vector<std::pair<double, double>> pts(n); // (feature value, residual)
      for (size_t i = 0; i < n; ++i) pts[i] = {xs[i][f], resid[i]};
      std::sort(pts.begin(), pts.end());
      // prefix sums over the sorted order; thresholds between distinct values
      std::vector<double> prefix(n + 1, 0);
      for (size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + pts[i].second;
      double total = prefix[n];
      for (size_t i = 1; i < n; ++i) {
        if (pts[i].first == pts[i - 1].first) continue;
        double nl = static_cast<double>(i), nr = static_cast<double>(n - i);
        double sl = prefix[i], sr = total - prefix[i];
        double gain = sl * sl / nl + sr * sr / nr; // SSE reduction vs zero fit
        if (gain > bestGain + 1e-12) {
          bestGain = gain;
          best.feature = f;
          best.threshold = (pts[i].first + pts[i - 1].first) / 2;
          best.left = sl / nl;
          best.right = sr / nr;
          found = true;
        }
      }
    }
    if (!found) {
      // no split improves: absorb the mean residual and stop
      double mean = 0;
      for (double r : resid) mean += r;
      mean /= static_cast<double>(n);
      model.base += mean;
      for (auto& p : pred) p += mean;
      double mse = 0;
      for (size_t i = 0; i < n; ++i) mse += (y[i] - pred[i]) * (y[i] - pred[i]);
      model.trainingCurve.push_back(mse / static_cast<double>(n));
      break;
    }
    model.stumps.push_back(best);
    for (size_t i = 0; i < n; ++i)
      pred[i] += model.learningRate * (xs[i][best.feature] <= best.threshold ? best.left : best.right);
    double mse = 0;
    for (size_t i = 0; i < n; ++i) mse += (y[i] - pred[i]) * (y[i] - pred[i]);
    model.trainingCurve.push_back(mse / static_cast<double>(n));
  }
  model.trained = true;
  return model;
}

// Labels seeded samples (without replacement when possible) with the
// analytical model and trains on them, giving the learned model its prior
// knowledge.
inline Surrogate pretrain_from_analytical(Surrogate model, const DesignSpace& d,
                                          const std::vector<perf::ScheduleParams>& space,
                                          int nSamples, uint64_t seed) {
  if (nSamples <= 0) return model;
  std::vector<size_t> idx(space.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  SplitMix64 rng(seed ^ 0x70726574726e00ull);
  for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  size_t take = std::min<size_t>(nSamples, idx.size());
  std::vector<std::array<double, kNumFeatures>> xs;
  std::vector<double> ys;
  for (size_t i = 0; i < take; ++i) {
    xs.push_back(featurize(space[idx[i]], d));
    ys.push_back(perf::predict(d.workload, space[idx[i]], d.hw).tKernel);
  }
  return train_surrogate(std::move(model), xs, ys);
}

// ---------------------------------------------------------------------------
// Simulated annealing over the candidate grid
// ---------------------------------------------------------------------------

namespace detail {

inline int candidate_index(int64_t v, const std::vector<int64_t>& c) {
  for (size_t i = 0; i < c.size(); ++i)
    if (c[i] == v) return static_cast<int>(i);
  return -1;
}
inline int candidate_index(int v, const std::vector<int>& c) {
  for (size_t i = 0; i < c.size(); ++i)
    if (c[i] == v) return static_cast<int>(i);
  return -1;
}

// One parameter nudged to an adjacent candidate; invalid neighbors are
// re-drawn a bounded number of times.
inline perf::ScheduleParams neighbor(const perf::ScheduleParams& cur, const DesignSpace& d,
                                     SplitMix64& rng) {
  for (int attempt = 0; attempt < 16; ++attempt) {
    perf::ScheduleParams next = cur;
    int field = static_cast<int>(rng.below(9));
    int dir = rng.below(2) ? 1 : -1;
    auto move64 = [&](int64_t& v, const std::vector<int64_t>& c) {
      int i = candidate_index(v, c) + dir;
      if (i < 0 || i >= static_cast<int>(c.size())) return false;
      v = c[i];
      return true;
    };
    auto moveInt = [&](int& v, const std::vector<int>& c) {
      int i = candidate_index(v, c) + dir;
      if (i < 0 || i >= static_cast<int>(c.size())) return false;
      v = c[i];
      return true;
    };
    bool ok = false;
    switch (field) {
      case 0: ok = move64(next.tileM, d.tileM); break;
      case 1: ok = move64(next.tileN, d.tileN); break;
      case 2: ok = move64(next.tileK, d.tileK); break;
      case 3: ok = move64(next.regTileM, d.regTileM); break;
      case 4: ok = move64(next.regTileN, d.regTileN); break;
      case 5: ok = move64(next.regTileK, d.regTileK); break;
      case 6: ok = moveInt(next.nSmemPipeStage, d.smemStages); break;
      case 7: ok = moveInt(next.nRegPipeStage, d.regStages); break;
      case 8: ok = moveInt(next.nWarpPerThreadblk, d.warps); break;
    }
    if (ok && schedulable(next, d)) return next;
  }
  return cur;
}

}  // namespace detail

// Single annealing step: propose a neighbor, accept improvements, accept
// regressions with probability exp(-delta / temperature).
inline perf::ScheduleParams sa_propose(const Surrogate& model, const perf::ScheduleParams& current,
                                       const DesignSpace& d, double temperature, SplitMix64& rng) {
  perf::ScheduleParams cand = detail::neighbor(current, d, rng);
  double cur = model.predict(featurize(current, d));
  double nxt = model.predict(featurize(cand, d));
  if (nxt <= cur) return cand;
  if (temperature <= 0) return current;
  double p = std::exp(-(nxt - cur) / temperature);
  return rng.uniform() < p ? cand : current;
}

inline perf::ScheduleParams sa_propose(const Surrogate& model, const perf::ScheduleParams& current,
                                       const DesignSpace& d, double temperature, uint64_t seed) {
  SplitMix64 rng(seed);
  return sa_propose(model, current, d, temperature, rng);
}

// ---------------------------------------------------------------------------
// The four search methods
// ---------------------------------------------------------------------------

enum class Method { Grid, Surrogate, AnalyticalOnly, ModelAssisted };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::Grid: return "grid";
    case Method::Surrogate: return "surrogate";
    case Method::AnalyticalOnly: return "analytical";
    case Method::ModelAssisted: return "assisted";
  }
  return "?";
}

struct Trial {
  perf::ScheduleParams params;
  int spaceIndex = -1;
  double measuredCost = 0; // noisy ground truth driving the search
  double trueCost = 0;     // noiseless ground truth, used for reporting
  int trialIndex = 0;
};

struct TuningReport {
  std::string method;
  uint64_t seed = 0;
  std::vector<Trial> trials;
  std::vector<double> bestInK;     // best true cost among the first k trials, k = 1..budget
  std::vector<double> normalized;  // exhaustiveBest / bestInK[k-1]
  double exhaustiveBest = 0;
  std::vector<std::string> warnings;
};

struct TunerOptions {
  int batchSize = 8;
  int pretrainSamples = 512;
  int saSteps = 128;
  double saTempHi = 1.0;
  double saTempLo = 0.05;
};

// Noiseless ground-truth cost of every point, used for the normalization
// baseline and for trial reporting. Compute once per space and share.
inline std::vector<double> exhaustive_costs(const std::vector<perf::ScheduleParams>& space,
                                            const DesignSpace& d, double contentionFactor) {
  std::vector<double> costs;
  costs.reserve(space.size());
  for (const auto& sp : space) {
    sim::GroundTruthConfig g{d.workload, sp, d.hw, contentionFactor, 0.0, 0};
    costs.push_back(sim::measure_ground_truth(g));
  }
  return costs;
}

namespace detail {

inline uint64_t space_key(const perf::ScheduleParams& sp) { return sim::params_hash(sp); }

}  // namespace detail

// Runs one tuning session. Grid walks the enumeration order; AnalyticalOnly
// measures the analytical top-k and never updates a model; Surrogate drives
// simulated annealing with a cost model refit after every batch of
// measurements; ModelAssisted is the same loop after pretraining on
// analytical predictions (zero pretraining samples degenerate it to
// Surrogate exactly).
inline TuningReport tune(Method method, int budget, const DesignSpace& d,
                         double contentionFactor, double noiseSigma, uint64_t seed,
                         const std::vector<perf::ScheduleParams>* spaceIn = nullptr,
                         const std::vector<double>* noiselessIn = nullptr,
                         const TunerOptions& opt = {}) {
  if (budget < 1) throw ConfigError("tune: budget must be >= 1");
  std::vector<perf::ScheduleParams> ownSpace;
  const std::vector<perf::ScheduleParams>& space = spaceIn ? *spaceIn : (ownSpace = enumerate_space(d));
  std::vector<double> ownCosts;
  const std::vector<double>& noiseless =
      noiselessIn ? *noiselessIn : (ownCosts = exhaustive_costs(space, d, contentionFactor));

  TuningReport rep;
  rep.method = method_name(method);
  rep.seed = seed;
  if (budget > static_cast<int>(space.size())) {
    rep.warnings.push_back("budget " + std::to_string(budget) + " clamped to space size " +
                           std::to_string(space.size()));
    budget = static_cast<int>(space.size());
  }
  rep.exhaustiveBest = *std::min_element(noiseless.begin(), noiseless.end());

  std::map<uint64_t, int> indexOf;
  for (size_t i = 0; i < space.size(); ++i) indexOf[detail::space_key(space[i])] = static_cast<int>(i);

  auto measure = [&](int spaceIdx) -> Trial {
    Trial t;
    t.params = space[spaceIdx];
    t.spaceIndex = spaceIdx;
    sim::GroundTruthConfig g{d.workload, t.params, d.hw, contentionFactor, noiseSigma, seed};
    t.measuredCost = sim::measure_ground_truth(g);
    t.trueCost = noiseless[spaceIdx];
    t.trialIndex = static_cast<int>(rep.trials.size());
    return t;
  };

  std::set<int> visited;
  auto push_trial = [&](int spaceIdx) {
    rep.trials.push_back(measure(spaceIdx));
    visited.insert(spaceIdx);
  };

  if (method == Method::Grid) {
    for (int i = 0; i < budget; ++i) push_trial(i);
  } else if (method == Method::AnalyticalOnly) {
    std::vector<std::pair<double, int>> keyed;
    for (size_t i = 0; i < space.size(); ++i)
      keyed.emplace_back(perf::predict(d.workload, space[i], d.hw).tKernel, static_cast<int>(i));
    std::stable_sort(keyed.begin(), keyed.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (int i = 0; i < budget; ++i) push_trial(keyed[i].second);
  } else {
    Surrogate model;
    SplitMix64 rng(seed);
    if (method == Method::ModelAssisted && opt.pretrainSamples > 0)
      model = pretrain_from_analytical(std::move(model), d, space, opt.pretrainSamples, seed);

    std::vector<std::array<double, kNumFeatures>> xs;
    std::vector<double> ys;
    auto refit = [&]() {
      xs.clear();
      ys.clear();
      if (method == Method::ModelAssisted && opt.pretrainSamples > 0) {
        // keep the analytical prior in the training set alongside measurements
        std::vector<size_t> idx(space.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        SplitMix64 prng(seed ^ 0x70726574726e00ull);
        for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[prng.below(i)]);
        size_t take = std::min<size_t>(opt.pretrainSamples, idx.size());
        for (size_t i = 0; i < take; ++i) {
          xs.push_back(featurize(space[idx[i]], d));
          ys.push_back(perf::predict(d.workload, space[idx[i]], d.hw).tKernel);
        }
      }
      for (const auto& t : rep.trials) {
        xs.push_back(featurize(t.params, d));
        ys.push_back(t.measuredCost);
      }
      model = train_surrogate(std::move(model), xs, ys);
    };

    auto random_unvisited = [&]() -> int {
      for (int attempt = 0; attempt < 1024; ++attempt) {
        int i = static_cast<int>(rng.below(space.size()));
        if (!visited.count(i)) return i;
      }
      for (size_t i = 0; i < space.size(); ++i)
        if (!visited.count(static_cast<int>(i))) return static_cast<int>(i);
      return -1;
    };

    // one annealing sweep proposing a batch of unmeasured candidates ranked
    // by the surrogate
    auto sa_batch = [&](int want) -> std::vector<int> {
      int startIdx = 0;
      double bestPred = std::numeric_limits<double>::infinity();
      for (size_t i = 0; i < space.size(); ++i) {
        double p = model.predict(featurize(space[i], d));
        if (p < bestPred) {
          bestPred = p;
          startIdx = static_cast<int>(i);
        }
      }
      perf::ScheduleParams cur = space[startIdx];
      std::map<uint64_t, int> seen;
      seen[detail::space_key(cur)] = startIdx;
      for (int step = 0; step < opt.saSteps; ++step) {
        double frac = opt.saSteps > 1 ? static_cast<double>(step) / (opt.saSteps - 1) : 1.0;
        double temp = opt.saTempHi * std::pow(opt.saTempLo / opt.saTempHi, frac);
        cur = sa_propose(model, cur, d, temp, rng);
        auto it = indexOf.find(detail::space_key(cur));
        if (it != indexOf.end()) seen[it->first] = it->second;
      }
      std::vector<std::pair<double, int>> cands;
      for (const auto& [key, idx] : seen) {
        if (visited.count(idx)) continue;
        cands.emplace_back(model.predict(featurize(space[idx], d)), idx);
      }
      std::stable_sort(cands.begin(), cands.end());
      std::vector<int> out;
      for (const auto& [pred, idx] : cands) {
        if (static_cast<int>(out.size()) >= want) break;
        out.push_back(idx);
      }
      while (static_cast<int>(out.size()) < want) {
        int r = random_unvisited();
        if (r < 0) break;
        if (std::find(out.begin(), out.end(), r) != out.end()) {
          visited.insert(r); // temporarily guard against re-draws
          continue;
        }
        out.push_back(r);
        visited.insert(r);
      }
      return out;
    };

    while (static_cast<int>(rep.trials.size()) < budget) {
      int want = std::min(opt.batchSize, budget - static_cast<int>(rep.trials.size()));
      std::vector<int> batch;
      if (!model.trained) {
        while (static_cast<int>(batch.size()) < want) {
          int r = random_unvisited();
          if (r < 0) break;
          if (std::find(batch.begin(), batch.end(), r) == batch.end()) {
            batch.push_back(r);
            visited.insert(r);
          }
        }
      } else {
        batch = sa_batch(want);
      }
      if (batch.empty()) break;
      for (int idx : batch) {
        visited.erase(idx); // push_trial re-inserts
        push_trial(idx);
      }
      refit();
    }
  }

  double best = std::numeric_limits<double>::infinity();
  for (const auto& t : rep.trials) {
    best = std::min(best, t.trueCost);
    rep.bestInK.push_back(best);
    rep.normalized.push_back(rep.exhaustiveBest / best);
  }
  return rep;
}

}  // namespace tune
}  // namespace pipec
