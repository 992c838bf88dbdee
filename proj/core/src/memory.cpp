#include "crecl/memory.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "crecl/error.hpp"

namespace crecl {

EpisodicMemory::EpisodicMemory(int capacity) : capacity_(capacity)
{
    if (capacity < 1) {
        throw Error("memory capacity L must be at least 1");
    }
}

void EpisodicMemory::add(const std::string& relation, std::vector<Instance> instances)
{
    if (store_.contains(relation)) {
        throw Error("relation '" + relation + "' is already stored in memory");
    }
    if (instances.empty()) {
        throw Error("relation '" + relation + "': no instances to store");
    }
    if (static_cast<int>(instances.size()) > capacity_) {
        throw Error("relation '" + relation + "': " + std::to_string(instances.size()) +
                    " instances exceed memory size " + std::to_string(capacity_));
    }
    std::set<std::string> ids;
    for (const auto& inst : instances) {
        if (inst.relation != relation) {
            throw Error("instance '" + inst.id + "' is labeled '" + inst.relation + "', not '" + relation + "'");
        }
        if (!ids.insert(inst.id).second) {
            throw Error("duplicate instance id '" + inst.id + "' for relation '" + relation + "'");
        }
    }
    store_.emplace(relation, std::move(instances));
}

const std::vector<Instance>& EpisodicMemory::instances(const std::string& relation) const
{
    const auto it = store_.find(relation);
    if (it == store_.end()) {
        throw Error("relation '" + relation + "' is not in memory");
    }
    return it->second;
}

std::vector<std::string> EpisodicMemory::relations() const
{
    std::vector<std::string> out;
    for (const auto& [relation, instances] : store_) {
        out.push_back(relation);
    }
    return out;
}

std::size_t EpisodicMemory::instance_count() const
{
    std::size_t n = 0;
    for (const auto& [relation, instances] : store_) {
        n += instances.size();
    }
    return n;
}

namespace {

std::vector<Instance> sorted_by_id(std::vector<Instance> out)
{
    std::sort(out.begin(), out.end(), [](const Instance& a, const Instance& b) { return a.id < b.id; });
    return out;
}

} // namespace

std::vector<Instance> select_from_representations(std::span<const Instance> instances, std::span<const Vec> reps,
                                                  int L, Rng& rng, const KMeansOptions& options)
{
    if (instances.empty()) {
        throw Error("select_typical_instances: no instances");
    }
    if (L < 1) {
        throw Error("select_typical_instances: L must be at least 1");
    }
    if (reps.size() != instances.size()) {
        throw Error("select_typical_instances: one representation per instance required");
    }
    if (instances.size() <= static_cast<std::size_t>(L)) {
        return sorted_by_id({instances.begin(), instances.end()});
    }
    const KMeansResult clusters = kmeans(reps, L, options, rng);
    std::vector<Instance> selected;
    for (int c = 0; c < L; ++c) {
        const Vec& centroid = clusters.centroids[static_cast<std::size_t>(c)];
        std::size_t best = instances.size();
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < instances.size(); ++i) {
            if (clusters.assignment[i] != c) {
                continue;
            }
            const double d = (reps[i] - centroid).squaredNorm();
            if (d < best_d || (d == best_d && instances[i].id < instances[best].id)) {
                best_d = d;
                best = i;
            }
        }
        selected.push_back(instances[best]);
    }
    return sorted_by_id(std::move(selected));
}

std::vector<Instance> select_typical_instances(std::span<const Instance> instances, const InstanceEncoder& encoder,
                                               int L, Rng& rng, const KMeansOptions& options)
{
    std::vector<Vec> reps;
    reps.reserve(instances.size());
    for (const auto& inst : instances) {
        reps.push_back(encoder.represent(inst));
    }
    return select_from_representations(instances, reps, L, rng, options);
}

std::vector<Instance> select_random_instances(std::span<const Instance> instances, int L, Rng& rng)
{
    if (instances.empty() || L < 1) {
        throw Error("select_random_instances: need instances and L >= 1");
    }
    std::vector<std::size_t> order(instances.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    std::vector<Instance> out;
    for (std::size_t i = 0; i < std::min(order.size(), static_cast<std::size_t>(L)); ++i) {
        out.push_back(instances[order[i]]);
    }
    return sorted_by_id(std::move(out));
}

void store_task_exemplars(const Task& task, const InstanceEncoder& encoder, EpisodicMemory& memory, Rng& rng,
                          ExemplarSelection selection, const KMeansOptions& options)
{
    for (const auto& relation : task.relations) {
        if (memory.contains(relation)) {
            throw Error("store_task_exemplars: relation '" + relation +
                        "' already in memory (overlapping task stream?)");
        }
    }
    for (const auto& relation : task.relations) {
        std::vector<Instance> members;
        for (const auto& inst : task.train) {
            if (inst.relation == relation) {
                members.push_back(inst);
            }
        }
        if (members.empty()) {
            throw Error("task " + std::to_string(task.index) + ": relation '" + relation + "' has no training data");
        }
        auto chosen = selection == ExemplarSelection::kmeans
                          ? select_typical_instances(members, encoder, memory.capacity(), rng, options)
                          : select_random_instances(members, memory.capacity(), rng);
        memory.add(relation, std::move(chosen));
    }
}

PrototypeSet compute_prototypes(const EpisodicMemory& memory, const InstanceEncoder& encoder,
                                std::span<const std::string> relations)
{
    PrototypeSet out;
    for (const auto& relation : relations) {
        const auto& stored = memory.instances(relation);
        Vec sum = Vec::Zero(encoder.hidden_dim());
        for (const auto& inst : stored) {
            sum += encoder.represent(inst);
        }
        out[relation] = RelationPrototype{relation, sum / static_cast<double>(stored.size()),
                                          static_cast<int>(stored.size())};
    }
    return out;
}

PrototypeSet compute_prototypes(const EpisodicMemory& memory, const InstanceEncoder& encoder)
{
    const auto relations = memory.relations();
    return compute_prototypes(memory, encoder, relations);
}

nlohmann::json memory_to_json(const EpisodicMemory& memory)
{
    nlohmann::json relations = nlohmann::json::object();
    for (const auto& [relation, instances] : memory.store()) {
        nlohmann::json records = nlohmann::json::array();
        for (const auto& inst : instances) {
            records.push_back(to_json(inst));
        }
        relations[relation] = std::move(records);
    }
    return {{"format", "crecl-memory"}, {"version", kMemoryFormatVersion}, {"L", memory.capacity()},
            {"relations", relations}};
}

EpisodicMemory memory_from_json(const nlohmann::json& doc)
{
    try {
        const int version = doc.at("version").get<int>();
        if (version != kMemoryFormatVersion) {
            throw FormatError("memory file version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kMemoryFormatVersion) + ")");
        }
        const int L = doc.at("L").get<int>();
        if (L < 1) {
            throw FormatError("memory file has L = " + std::to_string(L) + "; must be at least 1");
        }
        EpisodicMemory memory(L);
        for (const auto& [relation, records] : doc.at("relations").items()) {
            std::vector<Instance> instances;
            for (const auto& rec : records) {
                instances.push_back(instance_from_json(rec));
            }
            try {
                memory.add(relation, std::move(instances));
            } catch (const FormatError&) {
                throw;
            } catch (const Error& e) {
                throw FormatError(std::string("invalid memory file: ") + e.what());
            }
        }
        return memory;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt memory file: ") + e.what());
    }
}

void save_memory(const EpisodicMemory& memory, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << memory_to_json(memory).dump(1) << '\n';
}

EpisodicMemory load_memory(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(buf.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("corrupt memory file: ") + e.what());
    }
    return memory_from_json(doc);
}

} // namespace crecl
