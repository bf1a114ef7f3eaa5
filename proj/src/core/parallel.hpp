#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace halk {

/// Worker count used by parallel_for. Initialised from HALK_THREADS, falling
/// back to the hardware concurrency.
unsigned thread_count();
void set_thread_count(unsigned n);

/// Runs body(i) for i in [0, n). Each index is executed exactly once; callers
/// write results into per-index slots so the outcome is independent of the
/// schedule. The first exception thrown by any body is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

/// splitmix64 step; used to derive independent per-task seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace halk
