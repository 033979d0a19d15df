#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace pse {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller violated a documented precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A linear system was numerically rank deficient.
class RankError : public Error {
 public:
  using Error::Error;
};

// A conditioning cell needed by an identification formula has zero mass.
class PositivityError : public Error {
 public:
  using Error::Error;
};

// Cross-fitting could not produce folds with both exposure groups present.
class DegenerateFoldError : public Error {
 public:
  using Error::Error;
};

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return mix_seed(base ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

// Engine plus persistent distributions, so cached normal pairs are not lost
// between draws.
class NoiseSource {
 public:
  explicit NoiseSource(std::uint64_t seed) : rng_(seed) {}
  double gaussian() { return normal_(rng_); }
  double uniform() { return uniform_(rng_); }
  Rng& engine() { return rng_; }

 private:
  Rng rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// Caps the number of worker threads used by parallel_for (default 1).
void set_max_jobs(std::size_t jobs);
std::size_t max_jobs();

// Runs fn(i) for i in [0, n). Tasks are distributed over at most max_jobs()
// threads; nested calls from inside a worker run serially. Callers reduce
// results in index order, so output does not depend on scheduling. The first
// exception thrown by any task is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace pse
