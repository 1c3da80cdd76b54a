#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ppol {

/// Coarse failure category. The CLI maps these onto process exit codes.
enum class ErrorCode {
    invalid_input,
    io,
    format,
    config,
    dependency,
    timeout,
    exhausted,
    unscorable,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message) : std::runtime_error(message), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

/// 64-bit FNV-1a. Used for stable, platform-independent content hashes.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

/// Lowercase hex SHA-256 of a byte string / file contents.
std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temp file and renames it over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string trim(std::string_view text);
std::string to_lower(std::string_view text);

/// Shortest decimal text that round-trips the double exactly.
std::string format_double(double value);

/// Seeded generator whose outputs are identical on every platform.
/// std::*_distribution is implementation-defined, so bounded draws are done here.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    /// Uniform integer in [0, bound). bound must be > 0.
    std::size_t below(std::size_t bound);
    double normal();

    std::string state() const;
    void restore(const std::string& state);

private:
    std::mt19937_64 engine_;
};

}  // namespace ppol
