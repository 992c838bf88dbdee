#include "crecl/encoder.hpp"

#include <cmath>

#include "crecl/error.hpp"

namespace crecl {
namespace {

std::uint64_t fnv1a(std::string_view s)
{
    std::uint64_t h = 1469598103934665603ULL;
    for (const unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

void copy_tensor(Parameter& p, const Mat& value)
{
    if (p.value.rows() != value.rows() || p.value.cols() != value.cols()) {
        throw FormatError("checkpoint tensor '" + p.name + "' has shape " + std::to_string(value.rows()) + "x" +
                          std::to_string(value.cols()) + ", expected " + std::to_string(p.value.rows()) + "x" +
                          std::to_string(p.value.cols()));
    }
    p.value = value;
    p.zero_grad();
}

EncoderOptions options_from_json(const nlohmann::json& j)
{
    EncoderOptions o;
    o.kind = j.at("kind").get<std::string>();
    o.model_name = j.value("model_name", std::string{});
    o.toy.token_dim = j.at("token_dim").get<int>();
    o.toy.window = j.at("window").get<int>();
    o.toy.buckets = j.at("buckets").get<int>();
    o.hidden_dim = j.at("hidden_dim").get<int>();
    o.marker_mode = parse_marker_mode(j.at("marker_mode").get<std::string>());
    o.dropout = j.at("dropout").get<double>();
    o.hidden_activation_in_encoder = j.at("hidden_activation_in_encoder").get<bool>();
    return o;
}

} // namespace

MarkedSequence mark_entities(const Instance& instance)
{
    validate(instance);
    if (instance.head.overlaps(instance.tail)) {
        throw Error("instance '" + instance.id + "': head and tail spans overlap");
    }
    MarkedSequence out;
    const int n = static_cast<int>(instance.tokens.size());
    out.tokens.reserve(instance.tokens.size() + 4);
    for (int i = 0; i < n; ++i) {
        if (i == instance.head.start) {
            out.e11 = static_cast<int>(out.tokens.size());
            out.tokens.emplace_back(kMarkerTokens[0]);
        }
        if (i == instance.tail.start) {
            out.e21 = static_cast<int>(out.tokens.size());
            out.tokens.emplace_back(kMarkerTokens[2]);
        }
        out.tokens.push_back(instance.tokens[static_cast<std::size_t>(i)]);
        if (i == instance.head.end - 1) {
            out.e12 = static_cast<int>(out.tokens.size());
            out.tokens.emplace_back(kMarkerTokens[1]);
        }
        if (i == instance.tail.end - 1) {
            out.e22 = static_cast<int>(out.tokens.size());
            out.tokens.emplace_back(kMarkerTokens[3]);
        }
    }
    return out;
}

std::vector<std::string> strip_markers(const MarkedSequence& marked)
{
    std::vector<std::string> tokens;
    for (int i = 0; i < static_cast<int>(marked.tokens.size()); ++i) {
        if (i != marked.e11 && i != marked.e12 && i != marked.e21 && i != marked.e22) {
            tokens.push_back(marked.tokens[static_cast<std::size_t>(i)]);
        }
    }
    return tokens;
}

MarkerMode parse_marker_mode(std::string_view tag)
{
    if (tag == "start") {
        return MarkerMode::start;
    }
    if (tag == "start_end_avg") {
        return MarkerMode::start_end_avg;
    }
    throw Error("unknown marker_mode '" + std::string(tag) + "'");
}

std::string_view to_string(MarkerMode mode)
{
    return mode == MarkerMode::start ? "start" : "start_end_avg";
}

Mat SequenceEncoder::encode(const MarkedSequence& seq) const
{
    std::vector<int> all(seq.tokens.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i] = static_cast<int>(i);
    }
    return encode_rows(seq, all);
}

// ---------------------------------------------------------------- ToyEncoder

ToyEncoder::ToyEncoder(const ToyEncoderOptions& options, Rng& init) : options_(options)
{
    if (options.token_dim < 1 || options.window < 1 || options.buckets < 1) {
        throw Error("toy encoder dimensions must be positive");
    }
    const int h = options.token_dim;
    Mat emb(options.buckets + static_cast<int>(kMarkerTokens.size()), h);
    init_normal(emb, 1.0, init);
    Mat mix(h, options.window * h);
    init_normal(mix, 1.0 / std::sqrt(static_cast<double>(options.window * h)), init);
    embedding_ = Parameter("embedding", std::move(emb));
    mixing_ = Parameter("mixing", std::move(mix));
    bias_ = Parameter("bias", Mat::Zero(h, 1));
}

int ToyEncoder::token_id(std::string_view token) const
{
    for (std::size_t i = 0; i < kMarkerTokens.size(); ++i) {
        if (token == kMarkerTokens[i]) {
            return static_cast<int>(i);
        }
    }
    return static_cast<int>(kMarkerTokens.size()) +
           static_cast<int>(fnv1a(token) % static_cast<std::uint64_t>(options_.buckets));
}

int ToyEncoder::segment_end(const MarkedSequence& seq, int t)
{
    if (t >= seq.e11 && t <= seq.e12) {
        return seq.e12;
    }
    if (t >= seq.e21 && t <= seq.e22) {
        return seq.e22;
    }
    int end = static_cast<int>(seq.tokens.size()) - 1;
    for (const int opening : {seq.e11, seq.e21}) {
        if (opening > t) {
            end = std::min(end, opening - 1);
        }
    }
    return end;
}

Mat ToyEncoder::encode_rows(const MarkedSequence& seq, std::span<const int> positions) const
{
    const int h = options_.token_dim;
    Mat rows(static_cast<Eigen::Index>(positions.size()), h);
    for (std::size_t r = 0; r < positions.size(); ++r) {
        const int t = positions[r];
        const int last = std::min(segment_end(seq, t), t + options_.window - 1);
        Vec pre = bias_.value.col(0);
        for (int p = t; p <= last; ++p) {
            const int id = token_id(seq.tokens[static_cast<std::size_t>(p)]);
            pre.noalias() += mixing_.value.middleCols((p - t) * h, h) * embedding_.value.row(id).transpose();
        }
        rows.row(static_cast<Eigen::Index>(r)) = pre.array().tanh().matrix().transpose();
    }
    return rows;
}

void ToyEncoder::backward_rows(const MarkedSequence& seq, std::span<const int> positions, const Mat& grad_rows)
{
    const int h = options_.token_dim;
    const Mat out = encode_rows(seq, positions);
    for (std::size_t r = 0; r < positions.size(); ++r) {
        const int t = positions[r];
        const int last = std::min(segment_end(seq, t), t + options_.window - 1);
        const auto row = static_cast<Eigen::Index>(r);
        const Vec g_pre = (grad_rows.row(row).array() * (1.0 - out.row(row).array().square())).matrix().transpose();
        bias_.grad.col(0) += g_pre;
        for (int p = t; p <= last; ++p) {
            const int id = token_id(seq.tokens[static_cast<std::size_t>(p)]);
            const auto offset = (p - t) * h;
            mixing_.grad.middleCols(offset, h).noalias() += g_pre * embedding_.value.row(id);
            embedding_.grad.row(id).noalias() += (mixing_.value.middleCols(offset, h).transpose() * g_pre).transpose();
        }
    }
}

nlohmann::json ToyEncoder::header() const
{
    return {{"kind", "toy"}, {"token_dim", options_.token_dim}, {"window", options_.window}, {"buckets", options_.buckets}};
}

std::unique_ptr<SequenceEncoder> make_sequence_encoder(const EncoderOptions& options, Rng& init)
{
    if (options.kind == "toy") {
        return std::make_unique<ToyEncoder>(options.toy, init);
    }
    if (options.kind == "transformer") {
        throw Error("no transformer backend is compiled into this build (requested model '" + options.model_name +
                    "'); use encoder.kind = \"toy\"");
    }
    throw Error("unknown encoder kind '" + options.kind + "'");
}

// ---------------------------------------------------------------- pooling

std::vector<int> marker_positions(const MarkedSequence& marked, MarkerMode mode)
{
    if (mode == MarkerMode::start) {
        return {marked.e11, marked.e21};
    }
    return {marked.e11, marked.e12, marked.e21, marked.e22};
}

namespace {

Vec pool_rows(const Mat& rows, MarkerMode mode)
{
    const auto h = rows.cols();
    Vec e(2 * h);
    if (mode == MarkerMode::start) {
        e.head(h) = rows.row(0).transpose();
        e.tail(h) = rows.row(1).transpose();
    } else {
        e.head(h) = 0.5 * (rows.row(0) + rows.row(1)).transpose();
        e.tail(h) = 0.5 * (rows.row(2) + rows.row(3)).transpose();
    }
    return e;
}

Mat unpool_grad(const Vec& grad_e, MarkerMode mode)
{
    const auto h = grad_e.size() / 2;
    if (mode == MarkerMode::start) {
        Mat g(2, h);
        g.row(0) = grad_e.head(h).transpose();
        g.row(1) = grad_e.tail(h).transpose();
        return g;
    }
    Mat g(4, h);
    g.row(0) = 0.5 * grad_e.head(h).transpose();
    g.row(1) = g.row(0);
    g.row(2) = 0.5 * grad_e.tail(h).transpose();
    g.row(3) = g.row(2);
    return g;
}

} // namespace

Vec instance_embedding(const MarkedSequence& marked, const SequenceEncoder& encoder, MarkerMode mode)
{
    const auto positions = marker_positions(marked, mode);
    const Mat rows = encoder.encode_rows(marked, positions);
    if (rows.rows() != static_cast<Eigen::Index>(positions.size()) || rows.cols() != encoder.output_dim()) {
        throw Error("sequence encoder returned rows of the wrong shape");
    }
    Vec e = pool_rows(rows, mode);
    if (!e.allFinite()) {
        throw Error("non-finite instance embedding");
    }
    return e;
}

// ---------------------------------------------------------------- HiddenLayer

HiddenLayer::HiddenLayer(int input_dim, int output_dim, double dropout, bool activation, Rng& init)
    : dropout_(dropout), activation_(activation)
{
    if (input_dim < 1 || output_dim < 1) {
        throw Error("hidden layer dimensions must be positive");
    }
    if (dropout < 0.0 || dropout > 1.0) {
        throw Error("dropout rate must lie in [0, 1]");
    }
    Mat w(output_dim, input_dim);
    init_normal(w, 1.0 / std::sqrt(static_cast<double>(input_dim)), init);
    weight_ = Parameter("weight", std::move(w));
    bias_ = Parameter("bias", Mat::Zero(output_dim, 1));
}

Vec HiddenLayer::forward(const Vec& e, Rng* dropout_rng, HiddenCache* cache) const
{
    if (e.size() != input_dim()) {
        throw Error("hidden layer expects input of dimension " + std::to_string(input_dim()) + ", got " +
                    std::to_string(e.size()));
    }
    Vec mask = Vec::Ones(e.size());
    if (dropout_rng != nullptr && dropout_ > 0.0) {
        const double keep = 1.0 - dropout_;
        for (Eigen::Index i = 0; i < mask.size(); ++i) {
            const bool kept = dropout_rng->uniform() < keep;
            mask[i] = kept ? 1.0 / keep : 0.0;
        }
    }
    Vec dropped = e.cwiseProduct(mask);
    Vec pre = weight_.value * dropped + bias_.value.col(0);
    Vec h;
    LayerNormCache ln;
    if (activation_) {
        h = layer_norm(gelu(pre), &ln);
    } else {
        h = pre;
    }
    if (cache) {
        cache->dropped = std::move(dropped);
        cache->mask = std::move(mask);
        cache->pre = std::move(pre);
        cache->ln = std::move(ln);
    }
    return h;
}

Vec HiddenLayer::backward(const HiddenCache& cache, const Vec& grad_h)
{
    Vec grad_pre = grad_h;
    if (activation_) {
        grad_pre = layer_norm_backward(cache.ln, grad_h).cwiseProduct(gelu_grad(cache.pre));
    }
    weight_.grad.noalias() += grad_pre * cache.dropped.transpose();
    bias_.grad.col(0) += grad_pre;
    return (weight_.value.transpose() * grad_pre).cwiseProduct(cache.mask);
}

Vec hidden_representation(const HiddenLayer& layer, const Vec& e, bool dropout_enabled, Rng& rng)
{
    return layer.forward(e, dropout_enabled ? &rng : nullptr);
}

std::vector<Vec> sample_representations(const HiddenLayer& layer, const Vec& e, int M, Rng& rng)
{
    if (M < 1) {
        throw Error("sample_representations: M must be at least 1");
    }
    std::vector<Vec> out;
    out.reserve(static_cast<std::size_t>(M));
    for (int m = 0; m < M; ++m) {
        out.push_back(layer.forward(e, &rng));
    }
    return out;
}

// ---------------------------------------------------------------- InstanceEncoder

InstanceEncoder::InstanceEncoder(const EncoderOptions& options, Rng& init)
    : options_(options),
      sequence_(make_sequence_encoder(options, init)),
      hidden_(2 * sequence_->output_dim(), options.hidden_dim, options.dropout, options.hidden_activation_in_encoder,
              init)
{
}

InstanceEncoder::InstanceEncoder(const InstanceEncoder& other)
    : options_(other.options_), sequence_(other.sequence_->clone()), hidden_(other.hidden_)
{
}

InstanceEncoder& InstanceEncoder::operator=(const InstanceEncoder& other)
{
    if (this != &other) {
        options_ = other.options_;
        sequence_ = other.sequence_->clone();
        hidden_ = other.hidden_;
    }
    return *this;
}

Vec InstanceEncoder::embed(const Instance& instance) const
{
    return instance_embedding(mark_entities(instance), *sequence_, options_.marker_mode);
}

Vec InstanceEncoder::represent(const Instance& instance) const
{
    return hidden_.forward(embed(instance), nullptr);
}

InstanceEncoder::Trace InstanceEncoder::forward(const Instance& instance, Rng* dropout_rng) const
{
    Trace t;
    t.marked = mark_entities(instance);
    t.positions = marker_positions(t.marked, options_.marker_mode);
    t.e = instance_embedding(t.marked, *sequence_, options_.marker_mode);
    t.h = hidden_.forward(t.e, dropout_rng, &t.hidden);
    return t;
}

InstanceEncoder::Trace InstanceEncoder::resample(const Trace& base, Rng* dropout_rng) const
{
    Trace t;
    t.marked = base.marked;
    t.positions = base.positions;
    t.e = base.e;
    t.h = hidden_.forward(t.e, dropout_rng, &t.hidden);
    return t;
}

void InstanceEncoder::backward(const Trace& trace, const Vec& grad_h)
{
    const Vec grad_e = hidden_.backward(trace.hidden, grad_h);
    sequence_->backward_rows(trace.marked, trace.positions, unpool_grad(grad_e, options_.marker_mode));
}

std::vector<Parameter*> InstanceEncoder::parameters()
{
    auto params = sequence_->parameters();
    params.push_back(&hidden_.weight());
    params.push_back(&hidden_.bias());
    return params;
}

std::vector<const Parameter*> InstanceEncoder::parameters() const
{
    auto mutable_params = const_cast<InstanceEncoder*>(this)->parameters();
    return {mutable_params.begin(), mutable_params.end()};
}

nlohmann::json to_json(const EncoderOptions& o)
{
    return {{"kind", o.kind},
            {"model_name", o.model_name},
            {"token_dim", o.toy.token_dim},
            {"window", o.toy.window},
            {"buckets", o.toy.buckets},
            {"hidden_dim", o.hidden_dim},
            {"marker_mode", std::string(to_string(o.marker_mode))},
            {"dropout", o.dropout},
            {"hidden_activation_in_encoder", o.hidden_activation_in_encoder}};
}

Checkpoint InstanceEncoder::to_checkpoint() const
{
    Checkpoint ck;
    ck.header = {{"kind", "instance-encoder"},
                 {"encoder_kind", sequence_->kind()},
                 {"embedding_dim", embedding_dim()},
                 {"hidden_dim", hidden_dim()},
                 {"marker_mode", std::string(to_string(options_.marker_mode))},
                 {"options", to_json(options_)}};
    for (const auto* p : const_cast<SequenceEncoder&>(*sequence_).parameters()) {
        ck.tensors.emplace_back("sequence." + p->name, p->value);
    }
    ck.tensors.emplace_back("hidden.weight", hidden_.weight().value);
    ck.tensors.emplace_back("hidden.bias", hidden_.bias().value);
    return ck;
}

InstanceEncoder InstanceEncoder::from_checkpoint(const Checkpoint& checkpoint)
{
    if (checkpoint.header.value("kind", std::string{}) != "instance-encoder") {
        throw FormatError("checkpoint does not hold an instance encoder");
    }
    EncoderOptions options;
    try {
        options = options_from_json(checkpoint.header.at("options"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt encoder checkpoint header: ") + e.what());
    }
    Rng scratch(0);
    InstanceEncoder enc(options, scratch);
    for (auto* p : enc.sequence_->parameters()) {
        copy_tensor(*p, checkpoint.tensor("sequence." + p->name));
    }
    copy_tensor(enc.hidden_.weight(), checkpoint.tensor("hidden.weight"));
    copy_tensor(enc.hidden_.bias(), checkpoint.tensor("hidden.bias"));
    return enc;
}

} // namespace crecl
