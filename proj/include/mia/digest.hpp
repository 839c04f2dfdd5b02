#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>

namespace mia {

// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

// First 8 bytes of SHA-256, big-endian. Used to derive seeds and mock outputs.
std::uint64_t digest64(std::string_view bytes);

// Mixes a base seed with a label into a new 64-bit seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

// Portable sampling helpers. The standard distributions are implementation
// defined, which would make golden artifacts differ across toolchains.
std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n);
double uniform_unit(std::mt19937_64& rng);
double standard_normal(std::mt19937_64& rng);

template <typename It>
void portable_shuffle(It first, It last, std::mt19937_64& rng) {
    auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
        auto j = uniform_index(rng, i);
        std::swap(first[i - 1], first[j]);
    }
}

}  // namespace mia
