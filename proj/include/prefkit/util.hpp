// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>

namespace prefkit {

/// Shortest decimal text that parses back to the identical double; "nan",
/// "inf", "-inf" for non-finite values. Locale independent.
std::string format_double(double x);

/// FNV-1a 64-bit.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

/// 16 lowercase hex digits.
std::string hex64(std::uint64_t x);

/// FNV-1a digest of a file's bytes, as hex. Throws Error if unreadable.
std::string file_digest(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Callers write results
/// into pre-sized slots indexed by i, so output never depends on scheduling.
/// The first exception thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// Worker count from PREFKIT_THREADS, or 1 when unset/invalid.
std::size_t default_threads();

}  // namespace prefkit
