#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace hyql {

/// Source of uniform draws on [0, 1). Policies and the simulator take this
/// interface so tests can script the exact stream they need.
class UniformSource {
 public:
  virtual ~UniformSource() = default;
  virtual double next() = 0;

  /// Uniform index in [0, n). n must be positive.
  std::size_t below(std::size_t n);
};

/// Seeded Mersenne Twister. Draws are converted to doubles with a fixed
/// 53-bit mapping so streams do not depend on the standard library's
/// distribution implementations.
class Rng final : public UniformSource {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double next() override;
  void reseed(std::uint64_t seed) { engine_.seed(seed); }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::mt19937_64 engine_;
};

/// Mixes a base seed with a list of tags into an independent stream seed
/// (splitmix64 finaliser applied per tag).
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

}  // namespace hyql
