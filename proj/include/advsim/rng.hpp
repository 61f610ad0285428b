#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Core>

namespace advsim {

// Seeded random stream. Copying an Rng forks an identical stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Named sub-stream of a global seed, e.g. Rng::stream(seed, "env").
  static Rng stream(std::uint64_t seed, std::string_view name);

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n);
  std::uint64_t next_u64() { return engine_(); }

  Eigen::VectorXd normal_vector(Eigen::Index n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// FNV-1a; stable across builds, unlike std::hash.
std::uint64_t stable_hash(std::string_view text);

}  // namespace advsim
