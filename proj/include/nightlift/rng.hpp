#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace nightlift {

// Mixes a base seed with up to three stream identifiers into an independent
// sub-seed (splitmix64 finalizer). Used to hand each worker / sample its own
// stream so parallel generation stays reproducible.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);

// Deterministic random source. The engine is std::mt19937_64, whose output
// sequence the standard pins down; the distributions are implemented here
// because std::*_distribution sequences are implementation-defined and would
// break the byte-identical-dataset contract across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);

  // Uniform integer in [lo, hi], inclusive.
  int uniform_int(int lo, int hi);

  // Box-Muller.
  double normal(double mean = 0.0, double stddev = 1.0);

  // Gamma(alpha, 1), Marsaglia-Tsang. alpha > 0.
  double gamma(double alpha);

  // n-dimensional symmetric Dirichlet(alpha, ..., alpha).
  std::vector<double> dirichlet(int n, double alpha);

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace nightlift
