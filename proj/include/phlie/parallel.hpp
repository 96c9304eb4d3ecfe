#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace phlie {

/// Worker count from PHLIE_WORKERS, else the hardware concurrency (at least 1).
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index runs
/// exactly once; the first exception thrown is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, std::size_t workers = 0);

/// SplitMix64 finalizer, used to derive independent seeds from (seed, ids...).
std::uint64_t mix_seed(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace phlie
