#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace twostage {

// Pairwise (cascade) summation. The result depends only on the order of the
// input, never on how the caller parallelized producing it.
double pairwise_sum(std::span<const double> values);

// Smallest integer >= x, treating values within a relative 1e-9 of an
// integer as that integer. Closed-form sample sizes such as 25.000000000004
// come out as 25 rather than 26.
std::int64_t ceil_count(double x);

// Two-sided standard normal critical value for a confidence level in (0, 1),
// e.g. 1.959964 for 0.95.
double normal_critical_value(double confidence_level);

// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double value);

// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t splitmix64(std::uint64_t x);

// Seed for (stream, index) under a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index);

} // namespace twostage
