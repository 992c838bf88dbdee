#include <gtest/gtest.h>

#include <cmath>

#include "crecl/classifier.hpp"
#include "crecl/error.hpp"
#include "crecl/synthetic.hpp"
#include "oracles.hpp"

namespace crecl {
namespace {

EncoderOptions toy_options(double dropout)
{
    EncoderOptions o;
    o.toy.token_dim = 4;
    o.toy.buckets = 8;
    o.hidden_dim = 8;
    o.dropout = dropout;
    return o;
}

std::vector<Instance> four_relation_batch()
{
    return {
        oracle::make_instance("a", {"ann", "x", "bob"}, {0, 1}, {2, 3}, "r0"),
        oracle::make_instance("b", {"cat", "y", "dog"}, {0, 1}, {2, 3}, "r1"),
        oracle::make_instance("c", {"eel", "z", "fox", "gnu"}, {2, 4}, {0, 1}, "r2"),
        oracle::make_instance("d", {"hen", "w", "ibis"}, {2, 3}, {0, 1}, "r3"),
        oracle::make_instance("e", {"ann", "v", "dog"}, {0, 1}, {2, 3}, "r0"),
    };
}

TEST(Classifier, ZeroHeadIsUniform)
{
    Rng init(1);
    ClassifierHead head({"a", "b", "c", "d"}, 6, true, init);
    head.weight().value.setZero();
    head.bias().value.setZero();
    const Vec p = head.class_distribution(Vec::LinSpaced(6, -1.0, 1.0));
    for (Eigen::Index i = 0; i < 4; ++i) {
        EXPECT_NEAR(p[i], 0.25, 1e-12);
    }
}

TEST(Classifier, BiasDominatesWithZeroWeights)
{
    Rng init(1);
    ClassifierHead head({"a", "b", "c"}, 6, true, init);
    head.weight().value.setZero();
    head.bias().value << 10.0, 0.0, 0.0;
    const Vec p = head.class_distribution(Vec::Ones(6));
    EXPECT_GT(p[0], 0.99);
    EXPECT_EQ(head.predict(Vec::Ones(6)), "a");
}

TEST(Classifier, DistributionsSumToOne)
{
    Rng init(2);
    const ClassifierHead head({"a", "b", "c", "d", "e"}, 6, true, init);
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
        Vec h(6);
        for (Eigen::Index i = 0; i < 6; ++i) {
            h[i] = 5.0 * rng.normal();
        }
        const Vec p = head.class_distribution(h);
        EXPECT_NEAR(p.sum(), 1.0, 1e-6);
        EXPECT_GE(p.minCoeff(), 0.0);
    }
}

TEST(Classifier, CrossEntropyClosedForms)
{
    const std::vector<Vec> uniform = {Vec::Constant(4, 0.25)};
    const std::vector<int> label0 = {0};
    EXPECT_NEAR(ce_loss(uniform, label0), std::log(4.0), 1e-12);

    Vec onehot = Vec::Zero(3);
    onehot[1] = 1.0;
    const std::vector<Vec> perfect = {onehot};
    const std::vector<int> label1 = {1};
    EXPECT_NEAR(ce_loss(perfect, label1), 0.0, 1e-12);

    const std::vector<Vec> pair = {(Vec(2) << 0.8, 0.2).finished(), (Vec(2) << 0.4, 0.6).finished()};
    const std::vector<int> labels = {0, 1};
    EXPECT_NEAR(ce_loss(pair, labels), (-std::log(0.8) - std::log(0.6)) / 2.0, 1e-12);
}

TEST(Classifier, CrossEntropyRejectsForeignLabels)
{
    Rng init(1);
    const ClassifierHead head({"a", "b"}, 4, true, init);
    const std::vector<Vec> h = {Vec::Ones(4)};
    const std::vector<std::string> good = {"b"};
    const std::vector<std::string> bad = {"z"};
    EXPECT_NO_THROW(ce_loss(head, h, good));
    EXPECT_THROW(ce_loss(head, h, bad), Error);
}

TEST(Classifier, JsdClosedForms)
{
    const Vec p = (Vec(3) << 0.2, 0.3, 0.5).finished();
    const std::vector<Vec> same = {p, p};
    EXPECT_NEAR(jsd_consistency_loss(same), 0.0, 1e-12);

    const std::vector<Vec> disjoint = {(Vec(2) << 1.0, 0.0).finished(), (Vec(2) << 0.0, 1.0).finished()};
    EXPECT_NEAR(jsd_consistency_loss(disjoint), 2.0 * std::log(2.0), 1e-9);

    const std::vector<Vec> dead = {Vec::Zero(2), (Vec(2) << 0.5, 0.5).finished()};
    EXPECT_THROW(jsd_consistency_loss(dead), Error);
}

TEST(Classifier, JsdMatchesOracleAndIsNonNegative)
{
    Rng rng(12);
    for (int t = 0; t < 40; ++t) {
        const int m = 2 + static_cast<int>(rng.below(3));
        std::vector<Vec> dists;
        std::vector<std::vector<double>> raw;
        for (int i = 0; i < m; ++i) {
            Vec z(4);
            for (Eigen::Index j = 0; j < 4; ++j) {
                z[j] = 3.0 * rng.normal();
            }
            dists.push_back(softmax(z));
            raw.emplace_back(dists.back().data(), dists.back().data() + 4);
        }
        std::vector<double> mean(4, 0.0);
        for (const auto& r : raw) {
            for (std::size_t j = 0; j < 4; ++j) {
                mean[j] += r[j] / m;
            }
        }
        double expected = 0.0;
        for (const auto& r : raw) {
            expected += oracle::kl(r, mean);
        }
        const double got = jsd_consistency_loss(dists);
        EXPECT_GE(got, 0.0);
        EXPECT_NEAR(got, expected, 1e-10);
    }
}

TEST(Classifier, CombinedLossReductions)
{
    const Vec p1 = (Vec(3) << 0.6, 0.3, 0.1).finished();
    const Vec p2 = (Vec(3) << 0.5, 0.2, 0.3).finished();
    const std::vector<MultiForward> batch = {{{p1, p2}, 0}, {{p2, p1}, 2}};
    const double ce_mean = (-std::log(0.6) - std::log(0.5) - std::log(0.3) - std::log(0.1)) / 4.0;

    ClassificationConfig off;
    EXPECT_NEAR(combined_classification_loss(batch, off), ce_mean, 1e-12);

    ClassificationConfig zero;
    zero.jsd_enabled = true;
    zero.alpha = 0.0;
    EXPECT_NEAR(combined_classification_loss(batch, zero), ce_mean, 1e-12);

    ClassificationConfig one;
    one.jsd_enabled = true;
    one.alpha = 1.0;
    const std::vector<MultiForward> identical = {{{p1, p1}, 1}};
    EXPECT_NEAR(combined_classification_loss(identical, one), -std::log(0.3), 1e-12);

    const double jsd = jsd_consistency_loss(std::vector<Vec>{p1, p2}) * 2.0;
    EXPECT_NEAR(combined_classification_loss(batch, one), ce_mean + jsd / 4.0, 1e-12);
}

TEST(Classifier, ConfigInvariants)
{
    ClassificationConfig c;
    c.epochs1 = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.alpha = 1.5;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.jsd_enabled = true;
    c.M = 1;
    EXPECT_THROW(c.validate(), ConfigError);
    try {
        ClassificationConfig e;
        e.epochs1 = 0;
        e.validate();
    } catch (const ConfigError& err) {
        EXPECT_EQ(err.key(), "classifier.epochs1");
    }
}

TEST(Classifier, HeadGradientCheck)
{
    Rng init(4);
    ClassifierHead head({"a", "b", "c"}, 6, true, init);
    head.bias().value << 0.1, -0.2, 0.3;
    const std::vector<Vec> hs = {Vec::LinSpaced(6, -1.0, 1.0), Vec::LinSpaced(6, 0.5, -0.8)};
    const std::vector<int> labels = {2, 0};
    auto loss = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < hs.size(); ++i) {
            std::vector<double> z(3);
            const Vec logits = head.logits(hs[i]);
            for (int j = 0; j < 3; ++j) {
                z[static_cast<std::size_t>(j)] = logits[j];
            }
            s += oracle::softmax_nll(z, static_cast<std::size_t>(labels[i]));
        }
        return s / 2.0;
    };
    auto accumulate = [&] {
        for (std::size_t i = 0; i < hs.size(); ++i) {
            ClassifierHead::Cache cache;
            head.logits(hs[i], &cache);
            Vec g = cache.probs;
            g[labels[i]] -= 1.0;
            head.backward(cache, g / 2.0);
        }
    };
    for (const auto& err : oracle::gradient_errors(head.parameters(), loss, accumulate)) {
        EXPECT_LE(err.relative, 1e-4) << err.name;
    }
}

TEST(Classifier, EndToEndL1GradientCheck)
{
    for (const bool jsd : {false, true}) {
        Rng init(6);
        InstanceEncoder enc(toy_options(0.3), init);
        ClassifierHead head({"r0", "r1", "r2", "r3"}, 8, true, init);
        ClassificationConfig config;
        config.jsd_enabled = jsd;
        config.alpha = 0.7;
        config.M = 3;
        const auto batch = four_relation_batch();
        const Rng mask_rng(21);
        auto loss = [&] {
            Rng r = mask_rng;
            return classification_batch_loss(batch, enc, head, config, r, false);
        };
        auto accumulate = [&] {
            Rng r = mask_rng;
            classification_batch_loss(batch, enc, head, config, r, true);
        };
        auto params = enc.parameters();
        for (auto* p : head.parameters()) {
            params.push_back(p);
        }
        for (const auto& err : oracle::gradient_errors(params, loss, accumulate)) {
            EXPECT_LE(err.relative, 1e-4) << err.name << " jsd=" << jsd;
        }
    }
}

TEST(Classifier, FullBatchDescentIsMonotoneAtSmallSteps)
{
    Rng init(6);
    InstanceEncoder enc(toy_options(0.0), init);
    ClassifierHead head({"r0", "r1", "r2", "r3"}, 8, true, init);
    ClassificationConfig config;
    const auto batch = four_relation_batch();
    auto params = enc.parameters();
    for (auto* p : head.parameters()) {
        params.push_back(p);
    }
    Rng rng(0);
    double previous = classification_batch_loss(batch, enc, head, config, rng, false);
    for (int step = 0; step < 5; ++step) {
        for (auto* p : params) {
            p->zero_grad();
        }
        classification_batch_loss(batch, enc, head, config, rng, true);
        for (auto* p : params) {
            p->value -= 1e-2 * p->grad;
        }
        const double now = classification_batch_loss(batch, enc, head, config, rng, false);
        EXPECT_LE(now, previous + 1e-12) << "step " << step;
        previous = now;
    }
}

Task separable_task()
{
    SyntheticSpec spec;
    spec.relations = 3;
    spec.instances_per_relation = 40;
    spec.entity_noise = 0.0;
    Task task;
    task.index = 1;
    for (const auto& [rel, items] : make_synthetic_corpus(spec)) {
        task.relations.push_back(rel);
        task.train.insert(task.train.end(), items.begin(), items.end());
    }
    return task;
}

TEST(Classifier, LearnsASeparableTask)
{
    const Task task = separable_task();
    Rng init(3);
    InstanceEncoder enc(EncoderOptions{}, init);
    Rng rng(4);
    const auto result = train_classification(task, enc, ClassificationConfig{}, rng);
    ASSERT_EQ(result.epochs.size(), 10u);
    EXPECT_GE(result.epochs.back().train_acc, 0.99);
    EXPECT_EQ(result.head.rows(), 3);
    EXPECT_EQ(result.head.weight().value.rows(), 3);
    EXPECT_EQ(result.head.bias().value.rows(), 3);
}

TEST(Classifier, TrainingIsDeterministic)
{
    const Task task = separable_task();
    std::vector<double> traces[2];
    for (auto& trace : traces) {
        Rng init(3);
        InstanceEncoder enc(EncoderOptions{}, init);
        Rng rng(4);
        ClassificationConfig config;
        config.epochs1 = 3;
        config.jsd_enabled = true;
        for (const auto& e : train_classification(task, enc, config, rng).epochs) {
            trace.push_back(e.loss);
        }
    }
    EXPECT_EQ(traces[0], traces[1]);
}

TEST(Classifier, EmptyTaskIsRejected)
{
    Task task;
    task.index = 1;
    task.relations = {"r"};
    Rng init(3);
    InstanceEncoder enc(EncoderOptions{}, init);
    EXPECT_THROW(train_classification(task, enc, ClassificationConfig{}, init), Error);
}

TEST(Classifier, GrowingHeadAppendsRows)
{
    Rng init(1);
    ClassifierHead head({"a", "b"}, 4, true, init);
    const Mat before = head.weight().value;
    head.add_relations({"c"}, init);
    EXPECT_EQ(head.rows(), 3);
    EXPECT_EQ(head.weight().value.topRows(2), before);
    EXPECT_EQ(head.index_of("c"), 2);
    EXPECT_THROW(head.add_relations({"a"}, init), Error);
}

} // namespace
} // namespace crecl
