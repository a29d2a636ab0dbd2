#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>

namespace attnprobe {

using Rng = std::mt19937_64;

/// Independent per-stream seed derived from a base seed (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

/// Real number with 9 significant digits, the precision used by every CSV we emit.
std::string format_real(double value);

/// Runs fn(i) for i in [0, count) on up to `jobs` threads. Callers write results
/// into per-index slots, so output never depends on the worker count.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn);

/// FNV-1a 64-bit digest of a file's bytes, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

/// Verbosity from ATTNPROBE_LOG (0 = quiet). Never consulted by any computation.
int log_level() noexcept;
void log_message(int level, std::string_view message);

}  // namespace attnprobe
