#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crecl/classifier.hpp"
#include "crecl/config.hpp"
#include "crecl/contrast.hpp"
#include "crecl/corpus.hpp"
#include "crecl/encoder.hpp"
#include "crecl/memory.hpp"

namespace crecl {

/// Loads (or generates) the corpus named by the dataset config.
Corpus load_dataset(const DatasetConfig& dataset);

/// Caps, splits and partitions the corpus into the task stream. The split
/// and the relation grouping are seeded with the experiment seed.
TaskStream build_task_stream(const ExperimentConfig& config, const Corpus& corpus);
TaskStream build_task_stream(const ExperimentConfig& config);

/// Everything that persists from one task to the next.
struct PipelineState {
    InstanceEncoder encoder;
    Projector projector;
    EpisodicMemory memory;
    std::vector<std::string> seen;  // sorted relation ids of all completed tasks
    std::optional<ClassifierHead> task_head;     // head of the latest task, |R_k| rows
    std::optional<ClassifierHead> growing_head;  // only for the classifier-head ablations
    int completed = 0;
};

PipelineState initial_state(const ExperimentConfig& config);

/// Whether the variant predicts with a head grown over all seen relations.
bool uses_growing_head(Ablation ablation);

/// Step records and per-epoch training metrics of one task.
struct TaskTrace {
    std::vector<nlohmann::json> steps;
    std::vector<nlohmann::json> epochs;
};

/// Runs classification training, exemplar storage, prototype computation
/// and the two contrastive processes for task k, honoring the ablation.
/// Throws Error unless tasks 1..k-1 are exactly the completed ones.
void run_task(const ExperimentConfig& config, const TaskStream& stream, int k, PipelineState& state,
              TaskTrace* trace = nullptr);

/// Relations the variant's predictor can output in the current state.
std::vector<std::string> prediction_space(const ExperimentConfig& config, const PipelineState& state);

/// Dropout-free predictions for a batch of instances.
std::vector<std::string> predict_batch(const ExperimentConfig& config, const PipelineState& state,
                                       std::span<const Instance> instances);

/// Fraction of instances predicted correctly; 0 for an empty set.
double accuracy(std::span<const std::string> predicted, std::span<const Instance> instances);

/// Test instances of tasks 1..k, in task order.
std::vector<Instance> cumulative_test_set(const TaskStream& stream, int k);

/// Accuracy over the union of test sets of tasks 1..k. Requires k <= completed.
double evaluate_cumulative(const ExperimentConfig& config, const TaskStream& stream, int k,
                           const PipelineState& state);
/// Accuracy on task k's test set alone.
double evaluate_current(const ExperimentConfig& config, const TaskStream& stream, int k, const PipelineState& state);

struct TaskResult {
    int task = 0;
    double cumulative_accuracy = 0.0;
    double current_accuracy = 0.0;
    std::size_t cumulative_size = 0;
    std::size_t seen_relations = 0;
};

struct EvalReport {
    std::string variant;
    std::string run_id;
    std::uint64_t seed = 0;
    std::vector<TaskResult> tasks;
    nlohmann::json config;
    /// Kept out of the serialized report so identical runs serialize identically.
    double wall_clock_seconds = 0.0;
};

struct RunHooks {
    /// Called after each task with the task's trace and its evaluation row.
    std::function<void(int, const PipelineState&, const TaskTrace&, const TaskResult&)> on_task;
};

EvalReport run_experiment(const ExperimentConfig& config, const TaskStream& stream, const RunHooks* hooks = nullptr);
EvalReport run_experiment(const ExperimentConfig& config, const RunHooks* hooks = nullptr);

/// `config.runs` experiments with seeds seed, seed + 1, ...
std::vector<EvalReport> run_repeated(const ExperimentConfig& config);

/// One report per variant (full first), all on the same seed and split.
std::vector<EvalReport> run_ablation_suite(const ExperimentConfig& config);

/// One report per memory size, all on the same seed and split.
std::vector<EvalReport> run_memory_sweep(const ExperimentConfig& config, std::span<const int> sizes);

/// Hash of every parameter, the memory, the seen set and the task counter.
std::string state_checksum(const PipelineState& state);

Checkpoint head_to_checkpoint(const ClassifierHead& head);
ClassifierHead head_from_checkpoint(const Checkpoint& checkpoint);

/// Writes encoder.ckpt, projector.ckpt, memory.json, state.json and, when
/// present, task_head.ckpt / growing_head.ckpt into `dir`.
void save_state(const PipelineState& state, const std::filesystem::path& dir);
PipelineState load_state(const std::filesystem::path& dir);

} // namespace crecl
