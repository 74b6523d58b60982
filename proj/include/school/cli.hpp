#pragma once

#include "school/config.hpp"
#include "school/graph.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace school {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int usage = 1;  // also validation and configuration errors
inline constexpr int numerical = 2;
inline constexpr int verification = 3;
}  // namespace exit_code

/// Provenance of one command invocation, written into its run directory
/// before any long-running work starts.
struct RunManifest {
    std::string command;
    std::map<std::string, std::string> config;
    std::string dataset;
    std::uint64_t seed = 0;
    std::string input_hash;
    std::string started;
    std::string finished;
    std::vector<std::string> outputs;

    void write(const std::filesystem::path& path) const;
    static RunManifest read(const std::filesystem::path& path);
};

/// FNV-1a over the relative names and bytes of every regular file under
/// `dir` (or of the single file), in sorted order; 16 hex digits.
std::string content_hash(const std::filesystem::path& path);

/// Entry point of the command-line tool; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace school
