#pragma once

#include <cstdint>
#include <functional>
#include <string>

namespace dyadom {

// splitmix64 step; used to derive independent per-trial seeds from a base seed
// so that results never depend on scheduling order.
std::uint64_t splitmix64(std::uint64_t& state);

// Deterministic seed for (base, stream, index). stream separates purposes
// (inputs vs shifts vs weights) inside one campaign.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index);

// Shortest decimal form that round-trips a double bit-exactly (17 significant
// digits). All file formats and reports use this.
std::string format_double(double x);

// Runs fn(0..count-1) on `threads` workers (0 = hardware concurrency).
// Work is slotted by index, so callers that write results into index i of a
// pre-sized buffer get scheduling-independent output.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn);

} // namespace dyadom
