#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crecl/corpus.hpp"
#include "crecl/encoder.hpp"
#include "crecl/kmeans.hpp"

namespace crecl {

/// Relation -> up to L raw typical instances. Only instances are stored;
/// representations are always recomputed under the current encoder.
class EpisodicMemory {
public:
    explicit EpisodicMemory(int capacity);

    int capacity() const { return capacity_; }

    /// Throws Error when the relation is already stored, the list exceeds
    /// the capacity, is empty, carries foreign labels or duplicate ids.
    void add(const std::string& relation, std::vector<Instance> instances);

    bool contains(const std::string& relation) const { return store_.contains(relation); }
    const std::vector<Instance>& instances(const std::string& relation) const;
    std::vector<std::string> relations() const;
    std::size_t size() const { return store_.size(); }
    bool empty() const { return store_.empty(); }
    std::size_t instance_count() const;
    const std::map<std::string, std::vector<Instance>>& store() const { return store_; }

    friend bool operator==(const EpisodicMemory&, const EpisodicMemory&) = default;

private:
    int capacity_;
    std::map<std::string, std::vector<Instance>> store_;
};

/// K-means (k = L) over the given representations; from every cluster the
/// member nearest to its centroid is kept (ties go to the lowest id).
/// Returns min(L, n) distinct instances sorted by id.
std::vector<Instance> select_from_representations(std::span<const Instance> instances, std::span<const Vec> reps,
                                                  int L, Rng& rng, const KMeansOptions& options = {});

/// Representations are computed with dropout disabled.
std::vector<Instance> select_typical_instances(std::span<const Instance> instances, const InstanceEncoder& encoder,
                                               int L, Rng& rng, const KMeansOptions& options = {});

/// Uniform L-subset (the random-exemplar ablation).
std::vector<Instance> select_random_instances(std::span<const Instance> instances, int L, Rng& rng);

enum class ExemplarSelection { kmeans, random };

/// Adds an entry for every relation of `task` to `memory`.
void store_task_exemplars(const Task& task, const InstanceEncoder& encoder, EpisodicMemory& memory, Rng& rng,
                          ExemplarSelection selection = ExemplarSelection::kmeans,
                          const KMeansOptions& options = {});

struct RelationPrototype {
    std::string relation;
    Vec p;
    int source_count = 0;
};

using PrototypeSet = std::map<std::string, RelationPrototype>;

/// Mean representation (dropout off, current encoder) of each relation's
/// stored instances. Throws Error for a relation missing from memory.
PrototypeSet compute_prototypes(const EpisodicMemory& memory, const InstanceEncoder& encoder,
                                std::span<const std::string> relations);
PrototypeSet compute_prototypes(const EpisodicMemory& memory, const InstanceEncoder& encoder);

inline constexpr int kMemoryFormatVersion = 1;

nlohmann::json memory_to_json(const EpisodicMemory& memory);
EpisodicMemory memory_from_json(const nlohmann::json& doc);
void save_memory(const EpisodicMemory& memory, const std::filesystem::path& path);
EpisodicMemory load_memory(const std::filesystem::path& path);

} // namespace crecl
