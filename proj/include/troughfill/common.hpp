#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tf {

// An allocation, state, or input that breaks a hard model constraint.
// `violations` lists every broken constraint in human-readable form.
class FeasibilityError : public std::runtime_error {
 public:
  explicit FeasibilityError(const std::string& what,
                            std::vector<std::string> violations = {})
      : std::runtime_error(make_message(what, violations)),
        violations_(std::move(violations)) {}

  const std::vector<std::string>& violations() const { return violations_; }

 private:
  static std::string make_message(const std::string& what,
                                  const std::vector<std::string>& v) {
    std::string msg = what;
    for (const auto& s : v) {
      msg += "\n  - " + s;
    }
    return msg;
  }
  std::vector<std::string> violations_;
};

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic randomness.
//
// Every random quantity in the project flows from one top-level seed through
// named substreams, so adding a consumer never perturbs an unrelated stream.
// Sequential draws use std::mt19937_64 (bit-stable across platforms); the
// [0,1) transform is done by hand because the standard distributions are
// implementation-defined.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Seed for the substream `name[index]` of a top-level seed.
inline std::uint64_t substream_seed(std::uint64_t seed, std::string_view name,
                                    std::uint64_t index = 0) {
  std::uint64_t h = splitmix64(seed ^ fnv1a(name));
  return splitmix64(h ^ (0x632be59bd9b4e019ull * (index + 1)));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                          std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }
  int uniform_int(int lo, int hi) {  // inclusive range
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }
  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::mt19937_64 engine_;
};

// Counter-based uniform draw: random access by (seed, a, b) with no
// sequential state.  Used for per-slot arrivals and state sampling so a slot's
// draw is independent of how many other consumers ran before it.
inline double counter_uniform01(std::uint64_t seed, std::uint64_t a,
                                std::uint64_t b = 0) {
  std::uint64_t x = splitmix64(seed ^ splitmix64(a ^ 0x9e3779b97f4a7c15ull));
  x = splitmix64(x ^ splitmix64(b ^ 0xd1b54a32d192ed03ull));
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------
// Logging: level from TROUGHFILL_LOG (debug|info|warn|error), default warn.
// ---------------------------------------------------------------------------

namespace log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3 };

Level threshold();
void write(Level level, const std::string& msg);

inline void debug(const std::string& msg) { write(Level::kDebug, msg); }
inline void info(const std::string& msg) { write(Level::kInfo, msg); }
inline void warn(const std::string& msg) { write(Level::kWarn, msg); }
inline void error(const std::string& msg) { write(Level::kError, msg); }

}  // namespace log

}  // namespace tf
