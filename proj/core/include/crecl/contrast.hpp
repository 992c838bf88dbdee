#pragma once

#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crecl/checkpoint.hpp"
#include "crecl/classifier.hpp"
#include "crecl/encoder.hpp"
#include "crecl/memory.hpp"

namespace crecl {

struct ContrastConfig {
    double tau = 0.08;
    double margin = 0.2;
    double lambda1 = 0.5;
    int epochs2 = 10;
    int epochs3 = 5;
    int M = 2;
    int batch_size = 32;
    double learning_rate = 1e-2;
    int max_negatives = 0;  // 0 = compare against every stored relation
    bool refresh_prototypes_per_epoch = false;

    void validate() const;
};

/// Shared projector of both towers: s = normalize(W3 GELU(W2 v + b2) + b3).
class Projector {
public:
    Projector(int dim, Rng& init);

    struct Cache {
        Vec input;
        Vec pre;
        Vec hidden;
        double norm = 0.0;
        Vec s;
    };

    int input_dim() const { return static_cast<int>(w2_.value.cols()); }
    int output_dim() const { return static_cast<int>(w3_.value.rows()); }

    /// Throws Error when the pre-normalization vector is zero.
    Vec project(const Vec& v, Cache* cache = nullptr) const;
    /// Accumulates gradients, returns d(loss)/d(v).
    Vec backward(const Cache& cache, const Vec& grad_s);

    Parameter& w2() { return w2_; }
    Parameter& b2() { return b2_; }
    Parameter& w3() { return w3_; }
    Parameter& b3() { return b3_; }
    std::vector<Parameter*> parameters() { return {&w2_, &b2_, &w3_, &b3_}; }
    std::vector<const Parameter*> parameters() const { return {&w2_, &b2_, &w3_, &b3_}; }

    Checkpoint to_checkpoint() const;
    static Projector from_checkpoint(const Checkpoint& checkpoint);

private:
    Parameter w2_;
    Parameter b2_;
    Parameter w3_;
    Parameter b3_;
};

/// Gradients of a contrastive loss w.r.t. the compared embeddings.
struct EmbeddingGrads {
    std::vector<Vec> instances;
    std::vector<Vec> prototypes;
};

/// Per-instance candidate prototype indices; empty means all prototypes.
using CandidateSets = std::span<const std::vector<int>>;

/// -(1/N) sum_i log softmax_{r}(s_i . s_r / tau)[y_i] over unit embeddings.
double info_nce_loss(std::span<const Vec> instances, std::span<const int> labels, std::span<const Vec> prototypes,
                     double tau, EmbeddingGrads* grads = nullptr, CandidateSets candidates = {});

/// (1/N) sum_i max(m - s_i . s_{y_i} + s_i . s_{k_i}, 0) where k_i is the
/// most similar non-label prototype (lowest index on ties).
double margin_loss(std::span<const Vec> instances, std::span<const int> labels, std::span<const Vec> prototypes,
                   double margin, EmbeddingGrads* grads = nullptr, CandidateSets candidates = {});

/// lambda1 * info_nce + (1 - lambda1) * margin.
double total_contrastive_loss(std::span<const Vec> instances, std::span<const int> labels,
                              std::span<const Vec> prototypes, const ContrastConfig& config,
                              EmbeddingGrads* grads = nullptr, CandidateSets candidates = {});

/// Prototypes in relation-id order, as fed to the prototype tower.
struct PrototypeTable {
    std::vector<std::string> relations;
    std::vector<Vec> vectors;

    int index_of(const std::string& relation) const;
};

PrototypeTable make_table(const PrototypeSet& prototypes);

/// Number of compared embeddings each instance contributes to a replay
/// batch: M for relations in `old_relations`, 1 otherwise.
std::vector<int> replay_forward_counts(std::span<const Instance> batch, const std::set<std::string>& old_relations,
                                       int M);

/// L2 over a batch where instance i contributes `forwards[i]` dropout
/// samples. Accumulates encoder and projector gradients when `accumulate`.
double contrastive_batch_loss(std::span<const Instance> batch, std::span<const int> forwards,
                              const PrototypeTable& table, InstanceEncoder& encoder, Projector& projector,
                              const ContrastConfig& config, Rng& rng, bool accumulate, int* correct = nullptr);

/// First process: epochs2 passes over shuffled D_k against all prototypes.
std::vector<EpochMetrics> train_contrastive_current(const Task& task, const EpisodicMemory& memory,
                                                    InstanceEncoder& encoder, Projector& projector,
                                                    const ContrastConfig& config, Rng& rng);

/// Second process: epochs3 passes over the stored instances; instances of
/// relations in `previous_relations` contribute M dropout samples each.
std::vector<EpochMetrics> train_contrastive_memory(const EpisodicMemory& memory, InstanceEncoder& encoder,
                                                   Projector& projector, const ContrastConfig& config,
                                                   const std::set<std::string>& previous_relations, Rng& rng);

/// Projected unit prototype embeddings for every stored relation.
struct PrototypeIndex {
    std::vector<std::string> relations;
    Mat embeddings;  // one unit row per relation
};

PrototypeIndex build_prototype_index(const EpisodicMemory& memory, const InstanceEncoder& encoder,
                                     const Projector& projector);

/// Cosine similarity of the instance to every indexed relation.
Vec similarity_scores(const Instance& instance, const PrototypeIndex& index, const InstanceEncoder& encoder,
                      const Projector& projector);

/// Most similar stored relation; ties go to the lowest relation id.
std::string predict(const Instance& instance, const PrototypeIndex& index, const InstanceEncoder& encoder,
                    const Projector& projector);
std::string predict(const Instance& instance, const EpisodicMemory& memory, const InstanceEncoder& encoder,
                    const Projector& projector);

nlohmann::json to_json(const ContrastConfig& config);

} // namespace crecl
