#include "crecl/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crecl/error.hpp"

namespace crecl {

void ClassificationConfig::validate() const
{
    if (epochs1 < 1) {
        throw ConfigError("classifier.epochs1", "must be at least 1");
    }
    if (!(learning_rate > 0.0)) {
        throw ConfigError("classifier.learning_rate", "must be positive");
    }
    if (batch_size < 1) {
        throw ConfigError("classifier.batch_size", "must be at least 1");
    }
    if (alpha < 0.0 || alpha > 1.0) {
        throw ConfigError("classifier.alpha", "must lie in [0, 1]");
    }
    if (jsd_enabled && M < 2) {
        throw ConfigError("classifier.M", "must be at least 2 when jsd_enabled");
    }
    if (M < 1) {
        throw ConfigError("classifier.M", "must be at least 1");
    }
}

ClassifierHead::ClassifierHead(std::vector<std::string> relations, int input_dim, bool apply_activation, Rng& init)
    : relations_(std::move(relations)), apply_activation_(apply_activation)
{
    if (relations_.empty()) {
        throw Error("classifier head needs at least one relation");
    }
    auto sorted = relations_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw Error("classifier head relation order has duplicates");
    }
    Mat w(rows(), input_dim);
    init_normal(w, 1.0 / std::sqrt(static_cast<double>(input_dim)), init);
    weight_ = Parameter("W1", std::move(w));
    bias_ = Parameter("b1", Mat::Zero(rows(), 1));
}

int ClassifierHead::index_of(const std::string& relation) const
{
    const auto it = std::find(relations_.begin(), relations_.end(), relation);
    if (it == relations_.end()) {
        throw Error("label '" + relation + "' is not a relation of the current head");
    }
    return static_cast<int>(it - relations_.begin());
}

Vec ClassifierHead::logits(const Vec& h, Cache* cache) const
{
    if (h.size() != input_dim()) {
        throw Error("classifier head expects input of dimension " + std::to_string(input_dim()));
    }
    LayerNormCache ln;
    Vec act = apply_activation_ ? layer_norm(gelu(h), &ln) : h;
    Vec z = weight_.value * act + bias_.value.col(0);
    if (cache) {
        cache->input = h;
        cache->activated = std::move(act);
        cache->ln = std::move(ln);
        cache->probs = softmax(z);
    }
    return z;
}

Vec ClassifierHead::class_distribution(const Vec& h) const
{
    return softmax(logits(h));
}

std::string ClassifierHead::predict(const Vec& h) const
{
    Eigen::Index best = 0;
    logits(h).maxCoeff(&best);
    return relations_[static_cast<std::size_t>(best)];
}

Vec ClassifierHead::backward(const Cache& cache, const Vec& grad_logits)
{
    weight_.grad.noalias() += grad_logits * cache.activated.transpose();
    bias_.grad.col(0) += grad_logits;
    Vec grad_act = weight_.value.transpose() * grad_logits;
    if (!apply_activation_) {
        return grad_act;
    }
    return layer_norm_backward(cache.ln, grad_act).cwiseProduct(gelu_grad(cache.input));
}

void ClassifierHead::add_relations(const std::vector<std::string>& relations, Rng& init)
{
    for (const auto& r : relations) {
        if (std::find(relations_.begin(), relations_.end(), r) != relations_.end()) {
            throw Error("relation '" + r + "' already has a head row");
        }
    }
    const auto old_rows = weight_.value.rows();
    const auto added = static_cast<Eigen::Index>(relations.size());
    Mat fresh(added, input_dim());
    init_normal(fresh, 1.0 / std::sqrt(static_cast<double>(input_dim())), init);
    Mat w(old_rows + added, input_dim());
    w << weight_.value, fresh;
    Mat b = Mat::Zero(old_rows + added, 1);
    b.topRows(old_rows) = bias_.value;
    weight_ = Parameter("W1", std::move(w));
    bias_ = Parameter("b1", std::move(b));
    relations_.insert(relations_.end(), relations.begin(), relations.end());
}

double ce_loss(std::span<const Vec> probs, std::span<const int> labels)
{
    if (probs.size() != labels.size() || probs.empty()) {
        throw Error("ce_loss: need one label per distribution");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= probs[i].size()) {
            throw Error("ce_loss: label outside the relation set");
        }
        total -= std::log(std::max(probs[i][labels[i]], kProbFloor));
    }
    return total / static_cast<double>(probs.size());
}

double ce_loss(const ClassifierHead& head, std::span<const Vec> h_vecs, std::span<const std::string> labels)
{
    std::vector<Vec> probs;
    std::vector<int> rows;
    for (std::size_t i = 0; i < h_vecs.size(); ++i) {
        probs.push_back(head.class_distribution(h_vecs[i]));
        rows.push_back(head.index_of(labels[i]));
    }
    return ce_loss(probs, rows);
}

namespace {

Vec mean_distribution(std::span<const Vec> distributions)
{
    Vec mean = Vec::Zero(distributions.front().size());
    for (const auto& p : distributions) {
        mean += p;
    }
    return mean / static_cast<double>(distributions.size());
}

double kl(const Vec& p, const Vec& q)
{
    double total = 0.0;
    for (Eigen::Index r = 0; r < p.size(); ++r) {
        if (p[r] > 0.0) {
            total += p[r] * (std::log(std::max(p[r], kProbFloor)) - std::log(std::max(q[r], kProbFloor)));
        }
    }
    return total;
}

} // namespace

double jsd_consistency_loss(std::span<const Vec> distributions)
{
    if (distributions.size() < 2) {
        throw Error("jsd_consistency_loss: need at least 2 distributions");
    }
    for (const auto& p : distributions) {
        if (p.size() != distributions.front().size()) {
            throw Error("jsd_consistency_loss: distributions differ in size");
        }
        if (!(p.sum() > 0.0)) {
            throw Error("jsd_consistency_loss: distribution with zero mass");
        }
    }
    const Vec mean = mean_distribution(distributions);
    double total = 0.0;
    for (const auto& p : distributions) {
        total += kl(p, mean);
    }
    return std::max(total, 0.0);
}

double combined_classification_loss(std::span<const MultiForward> batch, const ClassificationConfig& config)
{
    if (batch.empty()) {
        throw Error("combined_classification_loss: empty batch");
    }
    double ce = 0.0;
    double jsd = 0.0;
    std::size_t forwards = 0;
    for (const auto& item : batch) {
        std::vector<int> labels(item.distributions.size(), item.label);
        ce += ce_loss(item.distributions, labels) * static_cast<double>(item.distributions.size());
        forwards += item.distributions.size();
        if (config.jsd_enabled) {
            jsd += jsd_consistency_loss(item.distributions);
        }
    }
    const double scale = 1.0 / static_cast<double>(forwards);
    return scale * ce + (config.jsd_enabled ? config.alpha * scale * jsd : 0.0);
}

double classification_batch_loss(std::span<const Instance> batch, InstanceEncoder& encoder, ClassifierHead& head,
                                 const ClassificationConfig& config, Rng& rng, bool accumulate, int* correct)
{
    if (batch.empty()) {
        throw Error("classification_batch_loss: empty batch");
    }
    const int forwards = config.jsd_enabled ? config.M : 1;
    const double scale = 1.0 / (static_cast<double>(batch.size()) * forwards);
    double loss = 0.0;
    int hits = 0;
    for (const auto& inst : batch) {
        const int label = head.index_of(inst.relation);
        std::vector<InstanceEncoder::Trace> traces;
        std::vector<ClassifierHead::Cache> caches(static_cast<std::size_t>(forwards));
        traces.push_back(encoder.forward(inst, &rng));
        for (int m = 1; m < forwards; ++m) {
            traces.push_back(encoder.resample(traces.front(), &rng));
        }
        std::vector<Vec> probs;
        for (int m = 0; m < forwards; ++m) {
            head.logits(traces[static_cast<std::size_t>(m)].h, &caches[static_cast<std::size_t>(m)]);
            probs.push_back(caches[static_cast<std::size_t>(m)].probs);
        }
        Eigen::Index best = 0;
        probs.front().maxCoeff(&best);
        hits += best == label ? 1 : 0;

        Vec mean;
        if (config.jsd_enabled) {
            mean = mean_distribution(probs);
        }
        for (int m = 0; m < forwards; ++m) {
            const Vec& p = probs[static_cast<std::size_t>(m)];
            loss -= scale * std::log(std::max(p[label], kProbFloor));
            if (config.jsd_enabled) {
                loss += config.alpha * scale * kl(p, mean);
            }
        }
        if (!accumulate) {
            continue;
        }
        for (int m = 0; m < forwards; ++m) {
            const Vec& p = probs[static_cast<std::size_t>(m)];
            Vec grad_z = p;
            grad_z[label] -= 1.0;
            if (config.jsd_enabled) {
                // d/dP^m of sum_m' KL(P^m' || mean) is log(P^m / mean).
                const Vec g = (p.array().max(kProbFloor).log() - mean.array().max(kProbFloor).log()).matrix();
                grad_z += config.alpha * p.cwiseProduct((g.array() - p.dot(g)).matrix());
            }
            grad_z *= scale;
            const Vec grad_h = head.backward(caches[static_cast<std::size_t>(m)], grad_z);
            encoder.backward(traces[static_cast<std::size_t>(m)], grad_h);
        }
    }
    if (correct) {
        *correct = hits;
    }
    return loss;
}

std::vector<EpochMetrics> train_head(std::span<const Instance> data, InstanceEncoder& encoder, ClassifierHead& head,
                                     const ClassificationConfig& config, Rng& rng)
{
    config.validate();
    if (data.empty()) {
        throw Error("train_classification: empty training set");
    }
    auto params = encoder.parameters();
    for (auto* p : head.parameters()) {
        params.push_back(p);
    }
    Adam optimizer(params, config.learning_rate);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<EpochMetrics> metrics;
    for (int epoch = 1; epoch <= config.epochs1; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        int hits = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::vector<Instance> batch;
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back(data[order[i]]);
            }
            optimizer.zero_grad();
            int correct = 0;
            const double loss = classification_batch_loss(batch, encoder, head, config, rng, true, &correct);
            optimizer.step();
            loss_sum += loss * static_cast<double>(batch.size());
            hits += correct;
        }
        metrics.push_back({epoch, loss_sum / static_cast<double>(data.size()),
                           static_cast<double>(hits) / static_cast<double>(data.size())});
    }
    return metrics;
}

ClassificationResult train_classification(const Task& task, InstanceEncoder& encoder,
                                          const ClassificationConfig& config, Rng& rng)
{
    config.validate();
    if (task.train.empty()) {
        throw Error("task " + std::to_string(task.index) + ": empty training set");
    }
    ClassifierHead head(task.relations, encoder.hidden_dim(), !encoder.hidden_layer().activation(), rng);
    auto epochs = train_head(task.train, encoder, head, config, rng);
    return {std::move(head), std::move(epochs)};
}

nlohmann::json to_json(const ClassificationConfig& c)
{
    return {{"epochs1", c.epochs1},     {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
            {"jsd_enabled", c.jsd_enabled}, {"alpha", c.alpha},               {"M", c.M}};
}

} // namespace crecl
