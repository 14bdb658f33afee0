#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace biodistill {

// 64-bit FNV-1a. Stable across platforms; used wherever a text must seed
// something reproducibly.
std::uint64_t fnv1a64(std::string_view text);

std::uint64_t splitmix64(std::uint64_t& state);

// Mixes a run seed with a key so per-item random choices do not depend on
// processing order.
std::uint64_t keyed_bits(std::uint64_t seed, std::string_view key);

std::string hex64(std::uint64_t value);

std::string sha256_file(const std::filesystem::path& path);

}  // namespace biodistill
