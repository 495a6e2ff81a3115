#ifndef INTENTLOOP_SEED_HPP
#define INTENTLOOP_SEED_HPP

#include <cstdint>
#include <string_view>

namespace intentloop {

/// 64-bit FNV-1a. Stable across platforms, used for content keys.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state = 0xcbf29ce484222325ULL);

std::uint64_t splitmix64(std::uint64_t x);

/// Counter-based stream derivation: each (module tag, call index) pair gets
/// its own seed, so adding draws in one module never shifts another.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index = 0);

}  // namespace intentloop

#endif  // INTENTLOOP_SEED_HPP
