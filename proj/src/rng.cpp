#include "exp3ss/rng.hpp"

#include <sstream>

#include "exp3ss/errors.hpp"

namespace exp3ss {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

double uniform01(Engine& engine) {
  return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

std::uint64_t uniform_index(Engine& engine, std::uint64_t n) {
  if (n == 0) throw UsageError("uniform_index: empty range");
  // Largest multiple of n that fits; draws above it are rejected.
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n + 1) % n;
  std::uint64_t x = engine();
  while (x > limit) x = engine();
  return x % n;
}

std::size_t sample_categorical(Engine& engine, std::span<const double> probabilities) {
  if (probabilities.empty()) throw UsageError("sample_categorical: no outcomes");
  double total = 0.0;
  for (double p : probabilities) total += p;
  const double u = uniform01(engine) * total;
  double cumulative = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    cumulative += probabilities[i];
    if (u < cumulative) return i;
  }
  // Rounding left u at the very top; return the last outcome with mass.
  for (std::size_t i = probabilities.size(); i-- > 0;) {
    if (probabilities[i] > 0.0) return i;
  }
  return probabilities.size() - 1;
}

std::string save_engine(const Engine& engine) {
  std::ostringstream out;
  out << engine;
  return out.str();
}

Engine load_engine(const std::string& text) {
  Engine engine;
  std::istringstream in(text);
  in >> engine;
  if (!in) throw DataError("malformed generator state");
  return engine;
}

}  // namespace exp3ss
