#include <gtest/gtest.h>

#include "crecl/checkpoint.hpp"
#include "crecl/encoder.hpp"
#include "crecl/error.hpp"
#include "crecl/synthetic.hpp"
#include "oracles.hpp"

namespace crecl {
namespace {

// Row t is the one-hot vector e_(t mod dim).
class OneHotEncoder final : public SequenceEncoder {
public:
    explicit OneHotEncoder(int dim) : dim_(dim) {}
    std::string kind() const override { return "one-hot"; }
    int output_dim() const override { return dim_; }
    Mat encode_rows(const MarkedSequence&, std::span<const int> positions) const override
    {
        Mat out = Mat::Zero(static_cast<Eigen::Index>(positions.size()), dim_);
        for (std::size_t i = 0; i < positions.size(); ++i) {
            out(static_cast<Eigen::Index>(i), positions[i] % dim_) = 1.0;
        }
        return out;
    }
    void backward_rows(const MarkedSequence&, std::span<const int>, const Mat&) override {}
    std::vector<Parameter*> parameters() override { return {}; }
    nlohmann::json header() const override { return {{"kind", kind()}}; }
    std::unique_ptr<SequenceEncoder> clone() const override { return std::make_unique<OneHotEncoder>(*this); }

private:
    int dim_;
};

EncoderOptions small_options(double dropout = 0.0)
{
    EncoderOptions o;
    o.toy.token_dim = 4;
    o.toy.buckets = 16;
    o.hidden_dim = 6;
    o.dropout = dropout;
    return o;
}

TEST(Encoder, MarksEntitiesWithShiftedPositions)
{
    const auto m = mark_entities(oracle::make_instance("x", {"a", "b", "c"}, {0, 1}, {2, 3}, "r"));
    EXPECT_EQ(m.tokens, (std::vector<std::string>{"[E11]", "a", "[E12]", "b", "[E21]", "c", "[E22]"}));
    EXPECT_EQ(m.e11, 0);
    EXPECT_EQ(m.e12, 2);
    EXPECT_EQ(m.e21, 4);
    EXPECT_EQ(m.e22, 6);
}

TEST(Encoder, HeadAfterTailStillWrapsTheRightSpans)
{
    const auto m = mark_entities(oracle::make_instance("x", {"a", "b", "c", "d"}, {2, 4}, {0, 1}, "r"));
    EXPECT_EQ(m.tokens, (std::vector<std::string>{"[E21]", "a", "[E22]", "b", "[E11]", "c", "d", "[E12]"}));
    EXPECT_EQ(m.e21, 0);
    EXPECT_EQ(m.e22, 2);
    EXPECT_EQ(m.e11, 4);
    EXPECT_EQ(m.e12, 7);
}

TEST(Encoder, RejectsOverlappingSpans)
{
    EXPECT_THROW(mark_entities(oracle::make_instance("x", {"a"}, {0, 1}, {0, 1}, "r")), Error);
    EXPECT_THROW(mark_entities(oracle::make_instance("x", {"a", "b", "c"}, {0, 2}, {1, 3}, "r")), Error);
}

TEST(Encoder, StripMarkersRoundTrip)
{
    SyntheticSpec spec;
    spec.relations = 3;
    spec.instances_per_relation = 20;
    for (const auto& [rel, items] : make_synthetic_corpus(spec)) {
        for (const auto& inst : items) {
            EXPECT_EQ(strip_markers(mark_entities(inst)), inst.tokens);
        }
    }
}

TEST(Encoder, OneHotRowsAreConcatenated)
{
    const OneHotEncoder enc(4);
    const auto m = mark_entities(oracle::make_instance("x", {"a", "b", "c"}, {0, 1}, {2, 3}, "r"));
    const Vec e = instance_embedding(m, enc, MarkerMode::start);
    ASSERT_EQ(e.size(), 8);
    Vec expected = Vec::Zero(8);
    expected[0] = 1.0;      // row of [E11] at position 0
    expected[4 + 0] = 1.0;  // row of [E21] at position 4 -> index 4 mod 4
    EXPECT_EQ(e, expected);

    const Vec avg = instance_embedding(m, enc, MarkerMode::start_end_avg);
    Vec expected_avg = Vec::Zero(8);
    expected_avg[0] = 0.5;  // positions 0 and 2
    expected_avg[2] = 0.5;
    expected_avg[4] = 0.5;  // positions 4 and 6
    expected_avg[6] = 0.5;
    EXPECT_EQ(avg, expected_avg);
}

TEST(Encoder, ToyMarkerRowsIgnoreContextOutsideEntities)
{
    Rng init(3);
    const InstanceEncoder enc(small_options(), init);
    const auto a = oracle::make_instance("a", {"x", "ann", "met", "bob", "today"}, {1, 2}, {3, 4}, "r");
    const auto b = oracle::make_instance("b", {"y", "ann", "saw", "bob", "later"}, {1, 2}, {3, 4}, "r");
    const auto c = oracle::make_instance("c", {"y", "cat", "saw", "bob", "later"}, {1, 2}, {3, 4}, "r");
    EXPECT_EQ(enc.embed(a), enc.embed(b));
    EXPECT_NE(enc.embed(a), enc.embed(c));
    EXPECT_EQ(enc.embed(a).size(), 8);
}

TEST(Encoder, HiddenLayerIdentityWeights)
{
    Rng init(1);
    HiddenLayer layer(4, 4, 0.3, false, init);
    layer.weight().value = Mat::Identity(4, 4);
    layer.bias().value.setZero();
    const Vec e = Vec::LinSpaced(4, -1.0, 2.0);
    Rng rng(9);
    EXPECT_TRUE(hidden_representation(layer, e, false, rng).isApprox(e));
}

TEST(Encoder, FullDropoutLeavesTheBias)
{
    Rng init(1);
    HiddenLayer layer(6, 3, 1.0, false, init);
    layer.bias().value = Mat::Constant(3, 1, 0.25);
    Rng rng(4);
    EXPECT_TRUE(hidden_representation(layer, Vec::Ones(6), true, rng).isApprox(Vec::Constant(3, 0.25)));
}

TEST(Encoder, DropoutIsDeterministicGivenTheRngState)
{
    Rng init(1);
    const HiddenLayer layer(8, 6, 0.5, false, init);
    const Vec e = Vec::LinSpaced(8, 0.1, 0.8);
    Rng a(42);
    Rng b(42);
    EXPECT_EQ(hidden_representation(layer, e, true, a), hidden_representation(layer, e, true, b));
    Rng c(42);
    Rng d(42);
    EXPECT_EQ(sample_representations(layer, e, 3, c), sample_representations(layer, e, 3, d));
}

TEST(Encoder, SampleRepresentations)
{
    Rng init(2);
    const HiddenLayer deterministic(8, 6, 0.0, false, init);
    const Vec e = Vec::LinSpaced(8, 0.1, 0.8);
    Rng rng(1);
    const auto one = sample_representations(deterministic, e, 1, rng);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one.front(), hidden_representation(deterministic, e, false, rng));

    const HiddenLayer noisy(8, 6, 0.5, false, init);
    const auto four = sample_representations(noisy, e, 4, rng);
    ASSERT_EQ(four.size(), 4u);
    int distinct_pairs = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(four[i].size(), 6);
        for (std::size_t j = i + 1; j < 4; ++j) {
            distinct_pairs += four[i] != four[j] ? 1 : 0;
        }
    }
    EXPECT_GE(distinct_pairs, 5);
    EXPECT_THROW(sample_representations(noisy, e, 0, rng), Error);
}

TEST(Encoder, HiddenLayerIsAffineWithoutDropout)
{
    Rng init(5);
    HiddenLayer layer(8, 6, 0.2, false, init);
    layer.bias().value = Mat::Random(6, 1);
    Rng rng(0);
    for (const double alpha : {-2.0, 0.5, 3.0}) {
        const Vec e = Vec::LinSpaced(8, -0.4, 0.9);
        const Vec b = layer.bias().value.col(0);
        const Vec lhs = hidden_representation(layer, alpha * e, false, rng) - b;
        const Vec rhs = alpha * (hidden_representation(layer, e, false, rng) - b);
        EXPECT_TRUE(lhs.isApprox(rhs, 1e-12));
    }
}

TEST(Encoder, HiddenLayerGradientCheck)
{
    for (const bool activation : {false, true}) {
        Rng init(11);
        HiddenLayer layer(8, 6, 0.3, activation, init);
        const Vec e = Vec::LinSpaced(8, -0.7, 0.9);
        const Vec c = Vec::LinSpaced(6, 1.0, -0.5);
        const Rng mask_rng(77);
        auto loss = [&] {
            Rng r = mask_rng;
            const Vec h = layer.forward(e, &r);
            return c.dot(h) + 0.5 * h.squaredNorm();
        };
        auto accumulate = [&] {
            Rng r = mask_rng;
            HiddenCache cache;
            const Vec h = layer.forward(e, &r, &cache);
            layer.backward(cache, c + h);
        };
        for (const auto& err : oracle::gradient_errors({&layer.weight(), &layer.bias()}, loss, accumulate)) {
            EXPECT_LE(err.relative, 1e-4) << err.name << " activation=" << activation;
        }
    }
}

TEST(Encoder, EndToEndGradientThroughToyEncoder)
{
    Rng init(8);
    InstanceEncoder enc(small_options(0.25), init);
    const auto inst = oracle::make_instance("x", {"w1", "ann", "lee", "met", "bob", "w2"}, {1, 3}, {4, 5}, "r");
    const Vec c = Vec::LinSpaced(6, -1.0, 1.0);
    const Rng mask_rng(5);
    auto loss = [&] {
        Rng r = mask_rng;
        return c.dot(enc.forward(inst, &r).h);
    };
    auto accumulate = [&] {
        Rng r = mask_rng;
        const auto trace = enc.forward(inst, &r);
        enc.backward(trace, c);
    };
    for (const auto& err : oracle::gradient_errors(enc.parameters(), loss, accumulate)) {
        EXPECT_LE(err.relative, 1e-4) << err.name;
    }
}

TEST(Encoder, ResampleOnlyRedrawsTheHiddenDropout)
{
    Rng init(8);
    const InstanceEncoder enc(small_options(0.5), init);
    const auto inst = oracle::make_instance("x", {"a", "b", "c"}, {0, 1}, {2, 3}, "r");
    Rng rng(3);
    const auto base = enc.forward(inst, &rng);
    const auto again = enc.resample(base, &rng);
    EXPECT_EQ(base.e, again.e);
    EXPECT_EQ(enc.represent(inst), enc.hidden_layer().forward(base.e, nullptr));
}

TEST(Encoder, CheckpointRoundTrip)
{
    Rng init(8);
    EncoderOptions o = small_options(0.1);
    o.marker_mode = MarkerMode::start_end_avg;
    const InstanceEncoder enc(o, init);
    const auto back = InstanceEncoder::from_checkpoint(deserialize_checkpoint(serialize_checkpoint(enc.to_checkpoint())));
    const auto inst = oracle::make_instance("x", {"a", "b", "c"}, {0, 1}, {2, 3}, "r");
    EXPECT_EQ(back.represent(inst), enc.represent(inst));
    EXPECT_EQ(back.options().marker_mode, MarkerMode::start_end_avg);
    const auto ck = enc.to_checkpoint();
    EXPECT_EQ(ck.header.at("marker_mode"), "start_end_avg");
    EXPECT_EQ(ck.header.at("encoder_kind"), "toy");
}

TEST(Encoder, TransformerAdapterIsReportedMissing)
{
    EncoderOptions o;
    o.kind = "transformer";
    o.model_name = "bert-base-uncased";
    Rng init(0);
    EXPECT_THROW(InstanceEncoder(o, init), Error);
    o.kind = "lstm";
    EXPECT_THROW(InstanceEncoder(o, init), Error);
}

TEST(Encoder, MarkerModeNames)
{
    EXPECT_EQ(parse_marker_mode("start"), MarkerMode::start);
    EXPECT_EQ(parse_marker_mode(to_string(MarkerMode::start_end_avg)), MarkerMode::start_end_avg);
    EXPECT_THROW(parse_marker_mode("middle"), Error);
}

} // namespace
} // namespace crecl
