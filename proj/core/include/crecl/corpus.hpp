#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace crecl {

/// Half-open token range [start, end).
struct Span {
    int start = 0;
    int end = 0;

    int size() const { return end - start; }
    bool overlaps(const Span& other) const { return start < other.end && other.start < end; }
    friend bool operator==(const Span&, const Span&) = default;
};

/// One labeled relation example: a sentence, its head/tail entity spans and
/// the relation holding between them.
struct Instance {
    std::string id;
    std::vector<std::string> tokens;
    Span head;
    Span tail;
    std::string relation;

    friend bool operator==(const Instance&, const Instance&) = default;
};

/// Throws FormatError when spans fall outside the sentence, are empty or
/// coincide, or the relation label is empty.
void validate(const Instance& instance);

nlohmann::json to_json(const Instance& instance);
Instance instance_from_json(const nlohmann::json& record);

/// Relation id -> instances, ordered by relation id.
using Corpus = std::map<std::string, std::vector<Instance>>;

enum class CorpusFormat { fewrel_json, tacred_json };

CorpusFormat parse_corpus_format(std::string_view tag);
std::string_view to_string(CorpusFormat format);

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format);
Corpus parse_fewrel(std::string_view text);
Corpus parse_tacred(std::string_view text);

std::map<std::string, std::size_t> relation_counts(const Corpus& corpus);
std::size_t instance_count(const Corpus& corpus);

Corpus drop_relation(const Corpus& corpus, const std::string& relation);

struct SplitCorpus {
    Corpus train;
    Corpus test;
};

/// Per relation, fills the test quota first (leaving at least one instance
/// for training), then gives the remainder to train, both capped. Selection
/// is a seeded shuffle, i.e. uniform sampling without replacement.
SplitCorpus cap_samples(const Corpus& corpus, std::size_t max_train, std::size_t max_test,
                        std::uint64_t seed);

struct Task {
    int index = 0;  // 1-based
    std::vector<std::string> relations;
    std::vector<Instance> train;
    std::vector<Instance> test;
};

struct TaskStream {
    std::uint64_t seed = 0;
    std::vector<Task> tasks;

    std::size_t size() const { return tasks.size(); }
    const Task& task(int k) const { return tasks.at(static_cast<std::size_t>(k - 1)); }
};

/// Shuffles relation ids with `seed` and deals them round-robin into
/// `num_tasks` groups.
TaskStream partition_tasks(const SplitCorpus& split, int num_tasks, std::uint64_t seed);

/// Builds a stream from an explicit relation grouping (e.g. a published split).
TaskStream assign_tasks(const SplitCorpus& split, const std::vector<std::vector<std::string>>& groups,
                        std::uint64_t seed);

/// Checks stream invariants: nonempty, pairwise-disjoint relation sets and
/// every instance labeled with a relation of its task.
void validate(const TaskStream& stream);

/// Seed, per-task relation ids and per-split instance ids.
nlohmann::json stream_to_json(const TaskStream& stream);

/// Rebuilds a stream from its id listing, resolving ids against `corpus`.
TaskStream stream_from_json(const nlohmann::json& doc, const Corpus& corpus);

void save_stream(const TaskStream& stream, const std::filesystem::path& path);
TaskStream load_stream(const std::filesystem::path& path, const Corpus& corpus);

} // namespace crecl
