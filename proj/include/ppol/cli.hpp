#pragma once

// Command-line entry points: fingerprint, train-disc, score, evolve, select, plot.
//
// Exit codes:
//   0  success
//   1  any other failure
//   2  usage or configuration error (unknown option or config key, invalid value)
//   3  I/O error (missing or unreadable input, unwritable output)
//   4  dependency error (model/tag mismatch, LLM backend failure, timeout)
//   5  malformed input file

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ppol/common.hpp"

namespace ppol {

inline constexpr const char* kToolVersion = "0.1.0";

int exit_code_for(ErrorCode code);

/// Every command writes one of these next to its outputs. It never holds
/// timestamps, so identical runs produce identical manifests.
struct RunManifest {
    std::string command;
    std::filesystem::path config;  // empty when no config file was given
    std::vector<std::filesystem::path> inputs;
    nlohmann::json seeds = nlohmann::json::object();
    std::vector<std::filesystem::path> outputs;
    std::vector<std::string> skipped;
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
    void write(const std::filesystem::path& path) const;
};

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ppol
