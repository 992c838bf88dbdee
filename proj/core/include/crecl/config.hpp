#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "crecl/classifier.hpp"
#include "crecl/contrast.hpp"
#include "crecl/encoder.hpp"
#include "crecl/kmeans.hpp"
#include "crecl/memory.hpp"
#include "crecl/synthetic.hpp"

namespace crecl {

enum class Ablation {
    full,
    no_margin,
    no_process1,
    no_process2,
    classifier_only,
    random_exemplars,
    classifier_prediction,
};

inline constexpr Ablation kAllAblations[] = {
    Ablation::full,           Ablation::no_margin,        Ablation::no_process1,          Ablation::no_process2,
    Ablation::classifier_only, Ablation::random_exemplars, Ablation::classifier_prediction,
};

Ablation parse_ablation(std::string_view tag);
std::string_view to_string(Ablation ablation);
/// Report label of a variant, e.g. "CRECL-MAG" for no_margin.
std::string_view variant_label(Ablation ablation);

struct DatasetConfig {
    /// "synthetic", "fewrel" or "tacred".
    std::string format = "synthetic";
    std::string path;
    int num_tasks = 5;
    std::size_t max_train = 420;
    std::size_t max_test = 140;
    /// Optional JSON file with an explicit list of relation groups.
    std::string task_assignment;
    SyntheticSpec synthetic;
};

struct MemoryConfig {
    int L = 10;
    ExemplarSelection selection = ExemplarSelection::kmeans;
    KMeansOptions kmeans;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string run_id;
    int runs = 1;
    Ablation ablation = Ablation::full;
    DatasetConfig dataset;
    EncoderOptions encoder;
    ClassificationConfig classifier;
    MemoryConfig memory;
    ContrastConfig contrast;

    /// Throws ConfigError naming the offending key.
    void validate() const;
};

/// Parses a config document. Required keys: seed, dataset.format,
/// dataset.num_tasks, contrast.margin, contrast.lambda1 (and dataset.path
/// for file corpora). Unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Fully resolved config; feeding it back to config_from_json reproduces
/// the same config.
nlohmann::json to_json(const ExperimentConfig& config);

/// FNV-1a 64 of the resolved config dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

} // namespace crecl
