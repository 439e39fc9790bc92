#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace cedh {

std::string sha256_hex(std::string_view bytes);
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// Counter-based seed derivation (splitmix64 finalizer). Used wherever a
// stream of independent seeds must not depend on evaluation order.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t counter);
std::uint64_t mix_seed(std::uint64_t seed, std::string_view key);

// Uniform integer in [0, bound) by rejection. Unlike
// std::uniform_int_distribution, the draw sequence is identical on every
// standard library, so seeded results are portable.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound);

// Uniform double in [0, 1) from the top 53 bits.
double uniform_unit(std::mt19937_64& rng);

// Seeded Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

// Peak resident set size of this process, if the platform reports it.
std::optional<std::uint64_t> process_peak_rss_bytes();

}  // namespace cedh
