#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace lasttok {

/// mt19937_64 with draw helpers that keep no hidden state outside the engine,
/// so serialising the engine captures the full stream position.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return std::generate_canonical<double, 64>(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  /// Uniform integer in [lo, hi].
  int integer(int lo, int hi) { return lo + static_cast<int>(index(static_cast<std::size_t>(hi - lo + 1))); }
  /// Standard normal (Box-Muller, one draw per call).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::uint64_t next_u64() { return engine_(); }

  std::string state() const;
  void set_state(const std::string& state);

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace lasttok
