#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crecl/corpus.hpp"
#include "crecl/encoder.hpp"
#include "crecl/nn.hpp"
#include "crecl/rng.hpp"

namespace crecl {

struct ClassificationConfig {
    int epochs1 = 10;
    double learning_rate = 1e-2;
    int batch_size = 32;
    bool jsd_enabled = false;
    double alpha = 0.5;
    int M = 2;

    /// Throws ConfigError when an invariant is violated.
    void validate() const;
};

/// Softmax head over the relations of one task:
/// P = softmax(W1 LN(GELU(h)) + b1). When the encoder already applies
/// LN(GELU(.)) the head is constructed with `apply_activation = false`.
class ClassifierHead {
public:
    ClassifierHead(std::vector<std::string> relations, int input_dim, bool apply_activation, Rng& init);

    struct Cache {
        Vec input;
        Vec activated;
        LayerNormCache ln;
        Vec probs;
    };

    int rows() const { return static_cast<int>(relations_.size()); }
    int input_dim() const { return static_cast<int>(weight_.value.cols()); }
    bool apply_activation() const { return apply_activation_; }
    const std::vector<std::string>& relations() const { return relations_; }
    /// Row of `relation`; throws Error when the relation is not in the head.
    int index_of(const std::string& relation) const;

    Vec logits(const Vec& h, Cache* cache = nullptr) const;
    Vec class_distribution(const Vec& h) const;
    std::string predict(const Vec& h) const;
    /// Accumulates W1/b1 gradients, returns d(loss)/d(h).
    Vec backward(const Cache& cache, const Vec& grad_logits);

    /// Appends freshly initialized rows for `relations` (growing head).
    void add_relations(const std::vector<std::string>& relations, Rng& init);

    Parameter& weight() { return weight_; }
    Parameter& bias() { return bias_; }
    const Parameter& weight() const { return weight_; }
    const Parameter& bias() const { return bias_; }
    std::vector<Parameter*> parameters() { return {&weight_, &bias_}; }

private:
    std::vector<std::string> relations_;
    Parameter weight_;
    Parameter bias_;
    bool apply_activation_;
};

/// Mean negative log-likelihood of `labels` (row indices) under `probs`.
double ce_loss(std::span<const Vec> probs, std::span<const int> labels);
/// Mean CE of a head over (h_vec, relation) pairs; throws on unknown labels.
double ce_loss(const ClassifierHead& head, std::span<const Vec> h_vecs, std::span<const std::string> labels);

/// sum_m KL(P^m || mean_m P^m) for one instance's M forward distributions.
double jsd_consistency_loss(std::span<const Vec> distributions);

/// Per-instance forward distributions and label row; the unit over which
/// the combined classification objective is computed.
struct MultiForward {
    std::vector<Vec> distributions;
    int label = 0;
};

/// L1 = mean CE over instances and forwards, plus
/// alpha / (N M) * sum_i JSD_i when `config.jsd_enabled`.
double combined_classification_loss(std::span<const MultiForward> batch, const ClassificationConfig& config);

/// Computes L1 for a mini-batch with dropout draws from `rng` and, when
/// `accumulate` is set, adds its gradient to the encoder and head
/// parameter grads. `correct` receives the number of first-forward argmax
/// hits when non-null.
double classification_batch_loss(std::span<const Instance> batch, InstanceEncoder& encoder, ClassifierHead& head,
                                 const ClassificationConfig& config, Rng& rng, bool accumulate,
                                 int* correct = nullptr);

struct EpochMetrics {
    int epoch = 0;
    double loss = 0.0;
    double train_acc = 0.0;
};

/// Mini-batch Adam on L1 over `data` for `config.epochs1` epochs, updating
/// the encoder and `head` in place.
std::vector<EpochMetrics> train_head(std::span<const Instance> data, InstanceEncoder& encoder, ClassifierHead& head,
                                     const ClassificationConfig& config, Rng& rng);

struct ClassificationResult {
    ClassifierHead head;
    std::vector<EpochMetrics> epochs;
};

/// Trains a fresh head sized |R_k| together with the encoder on D_k.
ClassificationResult train_classification(const Task& task, InstanceEncoder& encoder,
                                          const ClassificationConfig& config, Rng& rng);

nlohmann::json to_json(const ClassificationConfig& config);

} // namespace crecl
