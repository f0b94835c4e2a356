#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace lingcrel {

using Rng = std::mt19937_64;

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace detail

/// Derives a child seed from a master seed and a path of stream tags, e.g.
/// (master, trial, environment). Distinct paths give statistically
/// independent streams; the result does not depend on scheduling.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = detail::splitmix64(master);
    for (std::uint64_t tag : path) s = detail::splitmix64(s ^ detail::splitmix64(tag + 0x632be59bd9b4e019ULL));
    return s;
}

inline Rng make_stream(std::uint64_t master, std::initializer_list<std::uint64_t> path = {}) {
    return Rng(derive_seed(master, path));
}

// Stream tags used across modules so sub-streams never collide.
namespace stream_tag {
inline constexpr std::uint64_t kModel = 1;
inline constexpr std::uint64_t kSamples = 2;
inline constexpr std::uint64_t kIca = 3;
inline constexpr std::uint64_t kAmbiguity = 4;
}  // namespace stream_tag

}  // namespace lingcrel
