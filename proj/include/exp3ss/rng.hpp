#pragma once

// Portable random source.
//
// std::mt19937_64 is bit-exact across standard libraries, but the
// std::*_distribution adaptors are not, so every draw used by the library goes
// through the helpers below.
//
// Stream discipline: a run has one user-facing 64-bit seed. Independent
// streams are derived with derive_seed(seed, stream_id), which runs the pair
// through SplitMix64. By convention stream 0 is session sampling and stream
// 1 + j drives whatever is random in the j-th sampled session.

#include <cstdint>
#include <random>
#include <span>
#include <string>

namespace exp3ss {

using Engine = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x) noexcept;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

// Uniform double in [0, 1) built from the top 53 bits of one engine output.
double uniform01(Engine& engine);

// Uniform integer in [0, n). Rejection sampling; n must be positive.
std::uint64_t uniform_index(Engine& engine, std::uint64_t n);

// Inverse-CDF draw from unnormalized nonnegative weights, scanned in order.
std::size_t sample_categorical(Engine& engine, std::span<const double> probabilities);

std::string save_engine(const Engine& engine);
Engine load_engine(const std::string& text);

}  // namespace exp3ss
