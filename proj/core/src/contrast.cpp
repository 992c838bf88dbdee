#include "crecl/contrast.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "crecl/error.hpp"

namespace crecl {

void ContrastConfig::validate() const
{
    if (!(tau > 0.0)) {
        throw ConfigError("contrast.tau", "must be positive");
    }
    if (margin < 0.0) {
        throw ConfigError("contrast.margin", "must be non-negative");
    }
    if (lambda1 < 0.0 || lambda1 > 1.0) {
        throw ConfigError("contrast.lambda1", "must lie in [0, 1]");
    }
    if (epochs2 < 0) {
        throw ConfigError("contrast.epochs2", "must be non-negative");
    }
    if (epochs3 < 0) {
        throw ConfigError("contrast.epochs3", "must be non-negative");
    }
    if (M < 1) {
        throw ConfigError("contrast.M", "must be at least 1");
    }
    if (batch_size < 1) {
        throw ConfigError("contrast.batch_size", "must be at least 1");
    }
    if (!(learning_rate > 0.0)) {
        throw ConfigError("contrast.learning_rate", "must be positive");
    }
    if (max_negatives < 0) {
        throw ConfigError("contrast.max_negatives", "must be non-negative");
    }
}

// ---------------------------------------------------------------- Projector

Projector::Projector(int dim, Rng& init)
{
    if (dim < 2 || dim % 2 != 0) {
        throw Error("projector dimension must be a positive even number");
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    Mat w2(dim, dim);
    init_normal(w2, scale, init);
    Mat w3(dim / 2, dim);
    init_normal(w3, scale, init);
    w2_ = Parameter("W2", std::move(w2));
    b2_ = Parameter("b2", Mat::Zero(dim, 1));
    w3_ = Parameter("W3", std::move(w3));
    b3_ = Parameter("b3", Mat::Zero(dim / 2, 1));
}

Vec Projector::project(const Vec& v, Cache* cache) const
{
    if (v.size() != input_dim()) {
        throw Error("projector expects input of dimension " + std::to_string(input_dim()));
    }
    Vec pre = w2_.value * v + b2_.value.col(0);
    Vec hidden = gelu(pre);
    const Vec raw = w3_.value * hidden + b3_.value.col(0);
    double norm = 0.0;
    if (!(raw.norm() > 0.0)) {
        throw Error("projector produced a zero vector; cannot normalize");
    }
    Vec s = l2_normalize(raw, &norm);
    if (cache) {
        cache->input = v;
        cache->pre = std::move(pre);
        cache->hidden = std::move(hidden);
        cache->norm = norm;
        cache->s = s;
    }
    return s;
}

Vec Projector::backward(const Cache& cache, const Vec& grad_s)
{
    const Vec grad_raw = l2_normalize_backward(cache.s, cache.norm, grad_s);
    w3_.grad.noalias() += grad_raw * cache.hidden.transpose();
    b3_.grad.col(0) += grad_raw;
    const Vec grad_pre = (w3_.value.transpose() * grad_raw).cwiseProduct(gelu_grad(cache.pre));
    w2_.grad.noalias() += grad_pre * cache.input.transpose();
    b2_.grad.col(0) += grad_pre;
    return w2_.value.transpose() * grad_pre;
}

Checkpoint Projector::to_checkpoint() const
{
    Checkpoint ck;
    ck.header = {{"kind", "projector"}, {"dim", input_dim()}};
    for (const auto* p : parameters()) {
        ck.tensors.emplace_back(p->name, p->value);
    }
    return ck;
}

Projector Projector::from_checkpoint(const Checkpoint& checkpoint)
{
    if (checkpoint.header.value("kind", std::string{}) != "projector") {
        throw FormatError("checkpoint does not hold a projector");
    }
    Rng scratch(0);
    Projector out(checkpoint.header.at("dim").get<int>(), scratch);
    for (auto* p : out.parameters()) {
        const Mat& m = checkpoint.tensor(p->name);
        if (m.rows() != p->value.rows() || m.cols() != p->value.cols()) {
            throw FormatError("projector tensor '" + p->name + "' has the wrong shape");
        }
        p->value = m;
        p->zero_grad();
    }
    return out;
}

// ---------------------------------------------------------------- losses

namespace {

std::vector<int> candidate_list(CandidateSets candidates, std::size_t i, std::size_t total)
{
    if (!candidates.empty()) {
        return candidates[i];
    }
    std::vector<int> all(total);
    std::iota(all.begin(), all.end(), 0);
    return all;
}

void check_inputs(std::span<const Vec> instances, std::span<const int> labels, std::span<const Vec> prototypes,
                  CandidateSets candidates)
{
    if (instances.empty()) {
        throw Error("contrastive loss: no compared instances");
    }
    if (instances.size() != labels.size()) {
        throw Error("contrastive loss: one label per instance required");
    }
    if (!candidates.empty() && candidates.size() != instances.size()) {
        throw Error("contrastive loss: one candidate set per instance required");
    }
    for (const int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= prototypes.size()) {
            throw Error("contrastive loss: missing prototype for a label");
        }
    }
}

void ensure_grads(EmbeddingGrads* grads, std::span<const Vec> instances, std::span<const Vec> prototypes)
{
    if (!grads) {
        return;
    }
    if (grads->instances.size() != instances.size()) {
        grads->instances.assign(instances.size(), Vec::Zero(instances.front().size()));
    }
    if (grads->prototypes.size() != prototypes.size()) {
        grads->prototypes.assign(prototypes.size(), Vec::Zero(instances.front().size()));
    }
}

double info_nce_impl(std::span<const Vec> instances, std::span<const int> labels, std::span<const Vec> prototypes,
                     double tau, double weight, EmbeddingGrads* grads, CandidateSets candidates)
{
    const double n = static_cast<double>(instances.size());
    double total = 0.0;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const auto cand = candidate_list(candidates, i, prototypes.size());
        Vec logits(static_cast<Eigen::Index>(cand.size()));
        Eigen::Index pos = -1;
        for (std::size_t j = 0; j < cand.size(); ++j) {
            logits[static_cast<Eigen::Index>(j)] = instances[i].dot(prototypes[static_cast<std::size_t>(cand[j])]) / tau;
            if (cand[j] == labels[i]) {
                pos = static_cast<Eigen::Index>(j);
            }
        }
        if (pos < 0) {
            throw Error("info_nce_loss: candidate set lacks the positive prototype");
        }
        total += log_sum_exp(logits) - logits[pos];
        if (!grads) {
            continue;
        }
        const Vec p = softmax(logits);
        const double g = weight / (n * tau);
        for (std::size_t j = 0; j < cand.size(); ++j) {
            const auto r = static_cast<std::size_t>(cand[j]);
            const double coeff = p[static_cast<Eigen::Index>(j)] - (static_cast<Eigen::Index>(j) == pos ? 1.0 : 0.0);
            grads->instances[i] += g * coeff * prototypes[r];
            grads->prototypes[r] += g * coeff * instances[i];
        }
    }
    return total / n;
}

double margin_impl(std::span<const Vec> instances, std::span<const int> labels, std::span<const Vec> prototypes,
                   double margin, double weight, EmbeddingGrads* grads, CandidateSets candidates)
{
    const double n = static_cast<double>(instances.size());
    double total = 0.0;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const auto cand = candidate_list(candidates, i, prototypes.size());
        if (cand.size() < 2) {
            throw Error("margin_loss: needs at least 2 relations");
        }
        const auto y = static_cast<std::size_t>(labels[i]);
        const double pos = instances[i].dot(prototypes[y]);
        double best = -std::numeric_limits<double>::infinity();
        std::size_t k = prototypes.size();
        for (const int c : cand) {
            const auto r = static_cast<std::size_t>(c);
            if (r == y) {
                continue;
            }
            const double sim = instances[i].dot(prototypes[r]);
            if (sim > best || (sim == best && r < k)) {
                best = sim;
                k = r;
            }
        }
        const double hinge = margin - pos + best;
        if (hinge <= 0.0) {
            continue;
        }
        total += hinge;
        if (grads) {
            const double g = weight / n;
            grads->instances[i] += g * (prototypes[k] - prototypes[y]);
            grads->prototypes[y] -= g * instances[i];
            grads->prototypes[k] += g * instances[i];
        }
    }
    return total / n;
}

} // namespace

double info_nce_loss(std::span<const Vec> instances, std::span<const int> labels, std::span<const Vec> prototypes,
                     double tau, EmbeddingGrads* grads, CandidateSets candidates)
{
    check_inputs(instances, labels, prototypes, candidates);
    if (!(tau > 0.0)) {
        throw Error("info_nce_loss: tau must be positive");
    }
    if (grads) {
        grads->instances.clear();
        grads->prototypes.clear();
    }
    ensure_grads(grads, instances, prototypes);
    return info_nce_impl(instances, labels, prototypes, tau, 1.0, grads, candidates);
}

double margin_loss(std::span<const Vec> instances, std::span<const int> labels, std::span<const Vec> prototypes,
                   double margin, EmbeddingGrads* grads, CandidateSets candidates)
{
    check_inputs(instances, labels, prototypes, candidates);
    if (grads) {
        grads->instances.clear();
        grads->prototypes.clear();
    }
    ensure_grads(grads, instances, prototypes);
    return margin_impl(instances, labels, prototypes, margin, 1.0, grads, candidates);
}

double total_contrastive_loss(std::span<const Vec> instances, std::span<const int> labels,
                              std::span<const Vec> prototypes, const ContrastConfig& config, EmbeddingGrads* grads,
                              CandidateSets candidates)
{
    check_inputs(instances, labels, prototypes, candidates);
    if (grads) {
        grads->instances.clear();
        grads->prototypes.clear();
    }
    ensure_grads(grads, instances, prototypes);
    double loss = 0.0;
    if (config.lambda1 > 0.0) {
        loss += config.lambda1 *
                info_nce_impl(instances, labels, prototypes, config.tau, config.lambda1, grads, candidates);
    }
    if (config.lambda1 < 1.0) {
        loss += (1.0 - config.lambda1) *
                margin_impl(instances, labels, prototypes, config.margin, 1.0 - config.lambda1, grads, candidates);
    }
    return loss;
}

// ---------------------------------------------------------------- batches

int PrototypeTable::index_of(const std::string& relation) const
{
    const auto it = std::lower_bound(relations.begin(), relations.end(), relation);
    if (it == relations.end() || *it != relation) {
        throw Error("no prototype for relation '" + relation + "'");
    }
    return static_cast<int>(it - relations.begin());
}

PrototypeTable make_table(const PrototypeSet& prototypes)
{
    PrototypeTable table;
    for (const auto& [relation, proto] : prototypes) {
        table.relations.push_back(relation);
        table.vectors.push_back(proto.p);
    }
    return table;
}

std::vector<int> replay_forward_counts(std::span<const Instance> batch, const std::set<std::string>& old_relations,
                                       int M)
{
    std::vector<int> counts;
    counts.reserve(batch.size());
    for (const auto& inst : batch) {
        counts.push_back(old_relations.contains(inst.relation) ? M : 1);
    }
    return counts;
}

double contrastive_batch_loss(std::span<const Instance> batch, std::span<const int> forwards,
                              const PrototypeTable& table, InstanceEncoder& encoder, Projector& projector,
                              const ContrastConfig& config, Rng& rng, bool accumulate, int* correct)
{
    if (batch.empty()) {
        throw Error("contrastive_batch_loss: empty batch");
    }
    if (forwards.size() != batch.size()) {
        throw Error("contrastive_batch_loss: one forward count per instance required");
    }
    const std::size_t R = table.relations.size();
    std::vector<Projector::Cache> proto_caches(R);
    std::vector<Vec> proto_s;
    proto_s.reserve(R);
    for (std::size_t r = 0; r < R; ++r) {
        proto_s.push_back(projector.project(table.vectors[r], &proto_caches[r]));
    }

    std::vector<InstanceEncoder::Trace> traces;
    std::vector<Projector::Cache> caches;
    std::vector<Vec> inst_s;
    std::vector<int> labels;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const int label = table.index_of(batch[i].relation);
        for (int m = 0; m < forwards[i]; ++m) {
            traces.push_back(m == 0 ? encoder.forward(batch[i], &rng)
                                    : encoder.resample(traces[traces.size() - static_cast<std::size_t>(m)], &rng));
            caches.emplace_back();
            inst_s.push_back(projector.project(traces.back().h, &caches.back()));
            labels.push_back(label);
        }
    }

    std::vector<std::vector<int>> candidates;
    const auto negatives = static_cast<std::size_t>(config.max_negatives);
    if (negatives > 0 && R - 1 > negatives) {
        for (const int y : labels) {
            std::vector<int> others;
            for (int r = 0; r < static_cast<int>(R); ++r) {
                if (r != y) {
                    others.push_back(r);
                }
            }
            rng.shuffle(others);
            others.resize(negatives);
            others.push_back(y);
            std::sort(others.begin(), others.end());
            candidates.push_back(std::move(others));
        }
    }

    if (correct) {
        int hits = 0;
        for (std::size_t j = 0; j < inst_s.size(); ++j) {
            std::size_t best = 0;
            double best_sim = -std::numeric_limits<double>::infinity();
            for (std::size_t r = 0; r < R; ++r) {
                const double sim = inst_s[j].dot(proto_s[r]);
                if (sim > best_sim) {
                    best_sim = sim;
                    best = r;
                }
            }
            hits += static_cast<int>(best) == labels[j] ? 1 : 0;
        }
        *correct = hits;
    }

    EmbeddingGrads grads;
    const double loss =
        total_contrastive_loss(inst_s, labels, proto_s, config, accumulate ? &grads : nullptr, candidates);
    if (accumulate) {
        for (std::size_t j = 0; j < inst_s.size(); ++j) {
            const Vec grad_h = projector.backward(caches[j], grads.instances[j]);
            encoder.backward(traces[j], grad_h);
        }
        for (std::size_t r = 0; r < R; ++r) {
            projector.backward(proto_caches[r], grads.prototypes[r]);
        }
    }
    return loss;
}

namespace {

std::vector<EpochMetrics> run_process(std::vector<Instance> data, const EpisodicMemory& memory,
                                      InstanceEncoder& encoder, Projector& projector, const ContrastConfig& config,
                                      int epochs, const std::set<std::string>& multi_forward, Rng& rng)
{
    std::vector<EpochMetrics> metrics;
    if (epochs == 0) {
        return metrics;
    }
    auto params = encoder.parameters();
    for (auto* p : projector.parameters()) {
        params.push_back(p);
    }
    Adam optimizer(params, config.learning_rate);
    PrototypeTable table = make_table(compute_prototypes(memory, encoder));
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        if (config.refresh_prototypes_per_epoch && epoch > 1) {
            table = make_table(compute_prototypes(memory, encoder));
        }
        rng.shuffle(order);
        double loss_sum = 0.0;
        int hits = 0;
        int compared = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<Instance> batch;
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back(data[order[i]]);
            }
            const auto forwards = replay_forward_counts(batch, multi_forward, config.M);
            const int n = std::accumulate(forwards.begin(), forwards.end(), 0);
            optimizer.zero_grad();
            int correct = 0;
            const double loss =
                contrastive_batch_loss(batch, forwards, table, encoder, projector, config, rng, true, &correct);
            optimizer.step();
            loss_sum += loss * n;
            hits += correct;
            compared += n;
        }
        metrics.push_back({epoch, loss_sum / compared, static_cast<double>(hits) / compared});
    }
    return metrics;
}

} // namespace

std::vector<EpochMetrics> train_contrastive_current(const Task& task, const EpisodicMemory& memory,
                                                    InstanceEncoder& encoder, Projector& projector,
                                                    const ContrastConfig& config, Rng& rng)
{
    config.validate();
    if (task.train.empty()) {
        throw Error("train_contrastive_current: empty training set");
    }
    for (const auto& relation : task.relations) {
        if (!memory.contains(relation)) {
            throw Error("train_contrastive_current: no prototype for '" + relation + "'");
        }
    }
    return run_process(task.train, memory, encoder, projector, config, config.epochs2, {}, rng);
}

std::vector<EpochMetrics> train_contrastive_memory(const EpisodicMemory& memory, InstanceEncoder& encoder,
                                                   Projector& projector, const ContrastConfig& config,
                                                   const std::set<std::string>& previous_relations, Rng& rng)
{
    config.validate();
    if (memory.empty()) {
        throw Error("train_contrastive_memory: empty memory");
    }
    std::vector<Instance> data;
    for (const auto& [relation, instances] : memory.store()) {
        data.insert(data.end(), instances.begin(), instances.end());
    }
    return run_process(std::move(data), memory, encoder, projector, config, config.epochs3, previous_relations, rng);
}

// ---------------------------------------------------------------- prediction

PrototypeIndex build_prototype_index(const EpisodicMemory& memory, const InstanceEncoder& encoder,
                                     const Projector& projector)
{
    if (memory.empty()) {
        throw Error("predict: memory is empty");
    }
    const auto prototypes = compute_prototypes(memory, encoder);
    PrototypeIndex index;
    index.embeddings.resize(static_cast<Eigen::Index>(prototypes.size()), projector.output_dim());
    Eigen::Index row = 0;
    for (const auto& [relation, proto] : prototypes) {
        index.relations.push_back(relation);
        index.embeddings.row(row++) = projector.project(proto.p).transpose();
    }
    return index;
}

Vec similarity_scores(const Instance& instance, const PrototypeIndex& index, const InstanceEncoder& encoder,
                      const Projector& projector)
{
    const Vec s = projector.project(encoder.represent(instance));
    return index.embeddings * s;
}

std::string predict(const Instance& instance, const PrototypeIndex& index, const InstanceEncoder& encoder,
                    const Projector& projector)
{
    if (index.relations.empty()) {
        throw Error("predict: memory is empty");
    }
    const Vec scores = similarity_scores(instance, index, encoder, projector);
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < scores.size(); ++r) {
        if (scores[r] > scores[best]) {
            best = r;
        }
    }
    return index.relations[static_cast<std::size_t>(best)];
}

std::string predict(const Instance& instance, const EpisodicMemory& memory, const InstanceEncoder& encoder,
                    const Projector& projector)
{
    return predict(instance, build_prototype_index(memory, encoder, projector), encoder, projector);
}

nlohmann::json to_json(const ContrastConfig& c)
{
    return {{"tau", c.tau},
            {"margin", c.margin},
            {"lambda1", c.lambda1},
            {"epochs2", c.epochs2},
            {"epochs3", c.epochs3},
            {"M", c.M},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"max_negatives", c.max_negatives},
            {"refresh_prototypes_per_epoch", c.refresh_prototypes_per_epoch}};
}

} // namespace crecl
