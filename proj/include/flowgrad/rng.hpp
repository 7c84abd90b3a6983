#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace flowgrad {

using Rng = std::mt19937_64;

/// Independent generator for (seed, stream). Streams keep parameter init,
/// training batches and evaluation batches decoupled from one another.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0)
{
	std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
	                  static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x9e3779b9u};
	return Rng(seq);
}

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& text);

} // namespace flowgrad
