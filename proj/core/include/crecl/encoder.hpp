#pragma once

#include <array>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "crecl/checkpoint.hpp"
#include "crecl/corpus.hpp"
#include "crecl/nn.hpp"
#include "crecl/rng.hpp"

namespace crecl {

inline constexpr std::array<std::string_view, 4> kMarkerTokens = {"[E11]", "[E12]", "[E21]", "[E22]"};

/// Sentence tokens with [E11]/[E12] around the head entity and [E21]/[E22]
/// around the tail entity. Positions index into `tokens`.
struct MarkedSequence {
    std::vector<std::string> tokens;
    int e11 = 0;
    int e12 = 0;
    int e21 = 0;
    int e22 = 0;
};

/// Throws Error when the head and tail spans overlap.
MarkedSequence mark_entities(const Instance& instance);

/// Inverse of mark_entities on the token level.
std::vector<std::string> strip_markers(const MarkedSequence& marked);

/// Which marker embeddings form the instance embedding `e`:
/// `start` concatenates the [E11] and [E21] rows; `start_end_avg`
/// concatenates mean([E11],[E12]) and mean([E21],[E22]).
enum class MarkerMode { start, start_end_avg };

MarkerMode parse_marker_mode(std::string_view tag);
std::string_view to_string(MarkerMode mode);

/// Contextual token encoder: maps a marked sequence to one row of
/// `output_dim()` values per token. Implementations must support backward
/// passes restricted to a set of positions so training only pays for the
/// rows that reach the loss.
class SequenceEncoder {
public:
    virtual ~SequenceEncoder() = default;

    virtual std::string kind() const = 0;
    virtual int output_dim() const = 0;

    /// Rows for the given positions, in order.
    virtual Mat encode_rows(const MarkedSequence& seq, std::span<const int> positions) const = 0;

    /// Accumulates parameter gradients given d(loss)/d(rows).
    virtual void backward_rows(const MarkedSequence& seq, std::span<const int> positions, const Mat& grad_rows) = 0;

    virtual std::vector<Parameter*> parameters() = 0;
    virtual nlohmann::json header() const = 0;
    virtual std::unique_ptr<SequenceEncoder> clone() const = 0;

    /// All rows: token count x output_dim.
    Mat encode(const MarkedSequence& seq) const;
};

struct ToyEncoderOptions {
    int token_dim = 16;
    int window = 4;
    int buckets = 4096;
};

/// Hashed token-embedding table followed by a mixing layer that combines
/// each token with the next `window - 1` tokens of its segment through
/// offset-specific matrices: out_t = tanh(sum_o A_o emb(tok_{t+o}) + c).
/// A segment is either one marked entity ([E11] .. [E12], [E21] .. [E22])
/// or a run of unmarked tokens, so marker rows only see entity words.
class ToyEncoder final : public SequenceEncoder {
public:
    ToyEncoder(const ToyEncoderOptions& options, Rng& init);

    std::string kind() const override { return "toy"; }
    int output_dim() const override { return options_.token_dim; }

    Mat encode_rows(const MarkedSequence& seq, std::span<const int> positions) const override;
    void backward_rows(const MarkedSequence& seq, std::span<const int> positions, const Mat& grad_rows) override;

    std::vector<Parameter*> parameters() override { return {&embedding_, &mixing_, &bias_}; }
    nlohmann::json header() const override;
    std::unique_ptr<SequenceEncoder> clone() const override { return std::make_unique<ToyEncoder>(*this); }

    int token_id(std::string_view token) const;
    const ToyEncoderOptions& options() const { return options_; }

private:
    // Last index (inclusive) of the segment containing position t.
    static int segment_end(const MarkedSequence& seq, int t);

    ToyEncoderOptions options_;
    Parameter embedding_;
    Parameter mixing_;
    Parameter bias_;
};

/// Encoder dimensions and the shared hidden layer options.
struct EncoderOptions {
    std::string kind = "toy";
    std::string model_name;
    ToyEncoderOptions toy;
    int hidden_dim = 16;
    MarkerMode marker_mode = MarkerMode::start;
    double dropout = 0.1;
    bool hidden_activation_in_encoder = false;
};

/// Builds a sequence encoder by kind. Only "toy" is built in; pretrained
/// transformer adapters are looked up by model name and raise Error when no
/// backend is compiled in.
std::unique_ptr<SequenceEncoder> make_sequence_encoder(const EncoderOptions& options, Rng& init);

/// e: the concatenated marker embeddings (dimension 2 * output_dim).
Vec instance_embedding(const MarkedSequence& marked, const SequenceEncoder& encoder, MarkerMode mode);

/// Marker positions whose rows feed instance_embedding under `mode`.
std::vector<int> marker_positions(const MarkedSequence& marked, MarkerMode mode);

struct HiddenCache {
    Vec dropped;  // Dropout(e)
    Vec mask;     // inverted-dropout scale per entry
    Vec pre;      // W * Dropout(e) + b
    LayerNormCache ln;
};

/// Shared hidden layer h = W Dropout(e) + b (d x 2h weights). With
/// `activation` set it instead computes LN(GELU(W Dropout(e) + b)).
class HiddenLayer {
public:
    HiddenLayer(int input_dim, int output_dim, double dropout, bool activation, Rng& init);

    int input_dim() const { return static_cast<int>(weight_.value.cols()); }
    int output_dim() const { return static_cast<int>(weight_.value.rows()); }
    double dropout() const { return dropout_; }
    bool activation() const { return activation_; }

    /// `dropout_rng == nullptr` disables dropout.
    Vec forward(const Vec& e, Rng* dropout_rng, HiddenCache* cache = nullptr) const;
    /// Returns d(loss)/d(e) and accumulates W, b gradients.
    Vec backward(const HiddenCache& cache, const Vec& grad_h);

    Parameter& weight() { return weight_; }
    Parameter& bias() { return bias_; }
    const Parameter& weight() const { return weight_; }
    const Parameter& bias() const { return bias_; }

private:
    Parameter weight_;
    Parameter bias_;
    double dropout_;
    bool activation_;
};

/// h_vec from e; deterministic given the rng state, identity dropout when
/// `dropout_enabled` is false.
Vec hidden_representation(const HiddenLayer& layer, const Vec& e, bool dropout_enabled, Rng& rng);

/// M independent stochastic forwards of e through the hidden layer.
std::vector<Vec> sample_representations(const HiddenLayer& layer, const Vec& e, int M, Rng& rng);

/// The shared encoding layer: sequence encoder, marker pooling and hidden
/// layer. Owns every parameter that persists across tasks.
class InstanceEncoder {
public:
    InstanceEncoder(const EncoderOptions& options, Rng& init);
    InstanceEncoder(const InstanceEncoder& other);
    InstanceEncoder& operator=(const InstanceEncoder& other);
    InstanceEncoder(InstanceEncoder&&) noexcept = default;
    InstanceEncoder& operator=(InstanceEncoder&&) noexcept = default;

    struct Trace {
        MarkedSequence marked;
        std::vector<int> positions;
        Vec e;
        HiddenCache hidden;
        Vec h;
    };

    int embedding_dim() const { return 2 * sequence_->output_dim(); }
    int hidden_dim() const { return hidden_.output_dim(); }
    const EncoderOptions& options() const { return options_; }

    Vec embed(const Instance& instance) const;
    /// Representation with dropout disabled.
    Vec represent(const Instance& instance) const;
    Trace forward(const Instance& instance, Rng* dropout_rng) const;
    /// Re-runs only the hidden layer of an existing trace with a new dropout draw.
    Trace resample(const Trace& base, Rng* dropout_rng) const;
    void backward(const Trace& trace, const Vec& grad_h);

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;

    SequenceEncoder& sequence_encoder() { return *sequence_; }
    const SequenceEncoder& sequence_encoder() const { return *sequence_; }
    HiddenLayer& hidden_layer() { return hidden_; }
    const HiddenLayer& hidden_layer() const { return hidden_; }

    Checkpoint to_checkpoint() const;
    static InstanceEncoder from_checkpoint(const Checkpoint& checkpoint);

private:
    EncoderOptions options_;
    std::unique_ptr<SequenceEncoder> sequence_;
    HiddenLayer hidden_;
};

nlohmann::json to_json(const EncoderOptions& options);

} // namespace crecl
