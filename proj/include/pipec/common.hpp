#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace pipec {

// Memory hierarchy level. Ordered Global > Shared > Register; an async
// copy must move data strictly downward (toward the compute units).
enum class Scope { Global, Shared, Register };

inline int scope_level(Scope s) {
  switch (s) {
    case Scope::Global: return 2;
    case Scope::Shared: return 1;
    case Scope::Register: return 0;
  }
  return -1;
}

inline const char* scope_name(Scope s) {
  switch (s) {
    case Scope::Global: return "global";
    case Scope::Shared: return "shared";
    case Scope::Register: return "register";
  }
  return "?";
}

enum class LoopKind { Sequential, Parallel, Unrolled };

inline const char* loop_kind_name(LoopKind k) {
  switch (k) {
    case LoopKind::Sequential: return "seq";
    case LoopKind::Parallel: return "par";
    case LoopKind::Unrolled: return "unroll";
  }
  return "?";
}

struct ParseError : std::runtime_error {
  int line, col;
  ParseError(const std::string& msg, int line_, int col_)
      : std::runtime_error(msg + " (line " + std::to_string(line_) + ", col " +
                           std::to_string(col_) + ")"),
        line(line_), col(col_) {}
};

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised by the pipelining pass and the scheduler when a program or a
// schedule request fails one of the analysis rules.
struct AnalysisError : std::runtime_error {
  std::string rule;  // short rule tag, e.g. "NotAsyncProducer"
  AnalysisError(const std::string& rule_, const std::string& msg)
      : std::runtime_error(msg), rule(rule_) {}
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InterpError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Deterministic, implementation-independent RNG (splitmix64). Used wherever
// seeded reproducibility is part of a contract; avoids stdlib distribution
// differences.
struct SplitMix64 {
  uint64_t state;
  explicit SplitMix64(uint64_t seed) : state(seed) {}
  uint64_t next() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  // uniform in [0, n)
  uint64_t below(uint64_t n) { return n ? next() % n : 0; }
  // uniform in [lo, hi] inclusive
  int64_t range(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo + 1)));
  }
  // uniform double in [0, 1)
  double uniform() { return (next() >> 11) * (1.0 / 9007199254740992.0); }
  // standard normal via Box-Muller
  double normal() {
    double u1 = uniform(), u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }
};

inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a_mix(uint64_t h, int64_t v) { return fnv1a(&v, sizeof v, h); }

}  // namespace pipec
