#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crecl/config.hpp"

namespace crecl {

/// Artifacts of one `run` invocation. Paths are relative to the run directory.
struct RunManifest {
    std::string run_id;
    std::string config_hash;
    std::string config_path;
    std::string stream_path;
    std::vector<std::string> checkpoints;  // one state directory per task
    std::vector<std::string> memory;       // one memory file per task
    std::vector<std::string> reports;
    std::vector<std::string> logs;
    std::string started_at;
    std::string finished_at;
    double wall_clock_seconds = 0.0;
};

nlohmann::json manifest_to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const nlohmann::json& doc);

/// Checks that the stored config hashes to the manifest's hash and that
/// every listed artifact exists. Throws Error otherwise.
void verify_run_directory(const std::filesystem::path& run_dir);

/// Executes one full experiment into `run_dir`, writing per-task state
/// directories, logs, the report pair and the manifest.
RunManifest execute_run(const ExperimentConfig& config, const std::filesystem::path& run_dir);

/// Entry point shared by the executable and the tests. Returns the exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace crecl
