#pragma once

// Self-contained PRNG with fully specified output, so phantom generation and
// simulation oracles are byte-reproducible across platforms and standard
// libraries (std::normal_distribution is implementation-defined).

#include <cstdint>

namespace octquant {

/// splitmix64 engine with Box-Muller normals and Marsaglia-Tsang gammas.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  /// Independent stream derived from (seed, stream_id); used to give each
  /// B-scan its own generator so scheduling cannot affect output.
  static Rng stream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform in (0, 1]; safe as a log() argument.
  double uniform_pos();
  /// Standard normal via Box-Muller (spare value cached).
  double normal();
  /// Uniform integer in [0, n); n must be > 0.
  std::uint64_t below(std::uint64_t n);
  /// Gamma(shape, scale), shape > 0.
  double gamma(double shape, double scale);
  /// Poisson(mean), mean >= 0. Knuth product for small means, normal
  /// approximation above 500 (far beyond anything the tests use).
  std::uint64_t poisson(double mean);

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace octquant
