#include "crecl/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "crecl/error.hpp"

namespace crecl {

namespace {

struct AblationName {
    Ablation ablation;
    std::string_view tag;
    std::string_view label;
};

constexpr AblationName kAblationNames[] = {
    {Ablation::full, "full", "CRECL"},
    {Ablation::no_margin, "no_margin", "CRECL-MAG"},
    {Ablation::no_process1, "no_process1", "CRECL-CL1"},
    {Ablation::no_process2, "no_process2", "CRECL-CL2"},
    {Ablation::classifier_only, "classifier_only", "CRECL-CL"},
    {Ablation::random_exemplars, "random_exemplars", "CRECL-K"},
    {Ablation::classifier_prediction, "classifier_prediction", "CRECL(C)"},
};

const AblationName& name_of(Ablation ablation)
{
    for (const auto& n : kAblationNames) {
        if (n.ablation == ablation) {
            return n;
        }
    }
    throw Error("unknown ablation value");
}

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown.
class Section {
public:
    Section(const nlohmann::json& doc, std::string prefix) : doc_(doc), prefix_(std::move(prefix))
    {
        if (!doc_.is_object()) {
            throw ConfigError(prefix_.empty() ? std::string{} : prefix_, "must be a JSON object");
        }
    }

    std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

    bool has(const std::string& key) const { return doc_.contains(key); }

    const nlohmann::json& require(const std::string& key)
    {
        used_.insert(key);
        if (!doc_.contains(key)) {
            throw ConfigError(path(key), "missing required key");
        }
        return doc_.at(key);
    }

    template <class T>
    T get(const std::string& key)
    {
        return convert<T>(key, require(key));
    }

    template <class T>
    T get(const std::string& key, T fallback)
    {
        used_.insert(key);
        if (!doc_.contains(key)) {
            return fallback;
        }
        return convert<T>(key, doc_.at(key));
    }

    Section child(const std::string& key, bool required)
    {
        used_.insert(key);
        if (!doc_.contains(key)) {
            if (required) {
                throw ConfigError(path(key), "missing required key");
            }
            return Section(empty_object(), path(key));
        }
        return Section(doc_.at(key), path(key));
    }

    void finish() const
    {
        for (const auto& item : doc_.items()) {
            if (!used_.contains(item.key())) {
                throw ConfigError(path(item.key()), "unknown key");
            }
        }
    }

private:
    static const nlohmann::json& empty_object()
    {
        static const nlohmann::json obj = nlohmann::json::object();
        return obj;
    }

    template <class T>
    T convert(const std::string& key, const nlohmann::json& value) const
    {
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!value.is_boolean()) {
                    throw ConfigError(path(key), "expected a boolean");
                }
            } else if constexpr (std::is_integral_v<T>) {
                if (!value.is_number_integer()) {
                    throw ConfigError(path(key), "expected an integer");
                }
                if (std::is_unsigned_v<T> && value.is_number_integer() && !value.is_number_unsigned() &&
                    value.get<long long>() < 0) {
                    throw ConfigError(path(key), "must be non-negative");
                }
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!value.is_number()) {
                    throw ConfigError(path(key), "expected a number");
                }
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!value.is_string()) {
                    throw ConfigError(path(key), "expected a string");
                }
            }
            return value.get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path(key), e.what());
        }
    }

    const nlohmann::json& doc_;
    std::string prefix_;
    std::set<std::string> used_;
};

SyntheticSpec read_synthetic(Section s)
{
    SyntheticSpec d;
    SyntheticSpec spec;
    spec.relations = s.get("relations", d.relations);
    spec.instances_per_relation = s.get("instances_per_relation", d.instances_per_relation);
    spec.entity_pool = s.get("entity_pool", d.entity_pool);
    spec.shared_entity_pool = s.get("shared_entity_pool", d.shared_entity_pool);
    spec.filler_pool = s.get("filler_pool", d.filler_pool);
    spec.entity_noise = s.get("entity_noise", d.entity_noise);
    spec.max_entity_len = s.get("max_entity_len", d.max_entity_len);
    spec.max_filler_len = s.get("max_filler_len", d.max_filler_len);
    spec.seed = s.get("seed", d.seed);
    s.finish();
    return spec;
}

DatasetConfig read_dataset(Section s)
{
    DatasetConfig d;
    d.format = s.get<std::string>("format");
    if (d.format != "synthetic") {
        try {
            parse_corpus_format(d.format);
        } catch (const Error& e) {
            throw ConfigError(s.path("format"), "expected synthetic, fewrel or tacred");
        }
        d.path = s.get<std::string>("path");
    } else {
        d.path = s.get("path", std::string{});
    }
    d.num_tasks = s.get<int>("num_tasks");
    d.max_train = s.get("max_train", d.max_train);
    d.max_test = s.get("max_test", d.max_test);
    d.task_assignment = s.get("task_assignment", std::string{});
    d.synthetic = read_synthetic(s.child("synthetic", false));
    s.finish();
    return d;
}

EncoderOptions read_encoder(Section s)
{
    EncoderOptions o;
    o.kind = s.get("kind", o.kind);
    o.model_name = s.get("model_name", o.model_name);
    o.toy.token_dim = s.get("token_dim", o.toy.token_dim);
    o.toy.window = s.get("window", o.toy.window);
    o.toy.buckets = s.get("buckets", o.toy.buckets);
    o.hidden_dim = s.get("hidden_dim", o.hidden_dim);
    const auto mode = s.get("marker_mode", std::string(to_string(o.marker_mode)));
    try {
        o.marker_mode = parse_marker_mode(mode);
    } catch (const Error&) {
        throw ConfigError(s.path("marker_mode"), "expected start or start_end_avg");
    }
    o.dropout = s.get("dropout", o.dropout);
    o.hidden_activation_in_encoder = s.get("hidden_activation_in_encoder", o.hidden_activation_in_encoder);
    s.finish();
    return o;
}

ClassificationConfig read_classifier(Section s, const EncoderOptions& encoder, const DatasetConfig& dataset)
{
    ClassificationConfig c;
    c.epochs1 = s.get("epochs1", dataset.format == "fewrel" ? 15 : 10);
    c.learning_rate = s.get("learning_rate", encoder.kind == "toy" ? 1e-2 : 5e-5);
    c.batch_size = s.get("batch_size", c.batch_size);
    c.jsd_enabled = s.get("jsd_enabled", c.jsd_enabled);
    c.alpha = s.get("alpha", c.alpha);
    c.M = s.get("M", c.M);
    s.finish();
    return c;
}

MemoryConfig read_memory(Section s)
{
    MemoryConfig m;
    m.L = s.get("L", m.L);
    const auto selection = s.get("selection", std::string("kmeans"));
    if (selection == "kmeans") {
        m.selection = ExemplarSelection::kmeans;
    } else if (selection == "random") {
        m.selection = ExemplarSelection::random;
    } else {
        throw ConfigError(s.path("selection"), "expected kmeans or random");
    }
    Section k = s.child("kmeans", false);
    m.kmeans.restarts = k.get("restarts", m.kmeans.restarts);
    m.kmeans.max_iterations = k.get("max_iterations", m.kmeans.max_iterations);
    m.kmeans.tolerance = k.get("tolerance", m.kmeans.tolerance);
    k.finish();
    s.finish();
    return m;
}

ContrastConfig read_contrast(Section s, const EncoderOptions& encoder)
{
    ContrastConfig c;
    c.margin = s.get<double>("margin");
    c.lambda1 = s.get<double>("lambda1");
    c.tau = s.get("tau", c.tau);
    c.epochs2 = s.get("epochs2", c.epochs2);
    c.epochs3 = s.get("epochs3", c.epochs3);
    c.M = s.get("M", c.M);
    c.batch_size = s.get("batch_size", c.batch_size);
    c.learning_rate = s.get("learning_rate", encoder.kind == "toy" ? 1e-2 : 5e-5);
    c.max_negatives = s.get("max_negatives", c.max_negatives);
    c.refresh_prototypes_per_epoch = s.get("refresh_prototypes_per_epoch", c.refresh_prototypes_per_epoch);
    s.finish();
    return c;
}

} // namespace

Ablation parse_ablation(std::string_view tag)
{
    for (const auto& n : kAblationNames) {
        if (n.tag == tag || n.label == tag) {
            return n.ablation;
        }
    }
    throw ConfigError("ablation", "unknown ablation '" + std::string(tag) + "'");
}

std::string_view to_string(Ablation ablation) { return name_of(ablation).tag; }

std::string_view variant_label(Ablation ablation) { return name_of(ablation).label; }

void ExperimentConfig::validate() const
{
    if (runs < 1) {
        throw ConfigError("runs", "must be at least 1");
    }
    if (dataset.num_tasks < 1) {
        throw ConfigError("dataset.num_tasks", "must be at least 1");
    }
    if (dataset.max_train < 1) {
        throw ConfigError("dataset.max_train", "must be at least 1");
    }
    if (dataset.max_test < 1) {
        throw ConfigError("dataset.max_test", "must be at least 1");
    }
    if (dataset.format == "synthetic") {
        if (dataset.synthetic.relations < 1) {
            throw ConfigError("dataset.synthetic.relations", "must be at least 1");
        }
        if (dataset.synthetic.instances_per_relation < 2) {
            throw ConfigError("dataset.synthetic.instances_per_relation", "must be at least 2");
        }
    }
    if (encoder.kind != "toy" && encoder.kind != "transformer") {
        throw ConfigError("encoder.kind", "expected toy or transformer");
    }
    if (encoder.hidden_dim < 2 || encoder.hidden_dim % 2 != 0) {
        throw ConfigError("encoder.hidden_dim", "must be a positive even number");
    }
    if (encoder.toy.token_dim < 1) {
        throw ConfigError("encoder.token_dim", "must be at least 1");
    }
    if (encoder.toy.window < 1) {
        throw ConfigError("encoder.window", "must be at least 1");
    }
    if (encoder.toy.buckets < 1) {
        throw ConfigError("encoder.buckets", "must be at least 1");
    }
    if (encoder.dropout < 0.0 || encoder.dropout > 1.0) {
        throw ConfigError("encoder.dropout", "must lie in [0, 1]");
    }
    classifier.validate();
    if (memory.L < 1) {
        throw ConfigError("memory.L", "must be at least 1");
    }
    if (memory.kmeans.restarts < 1) {
        throw ConfigError("memory.kmeans.restarts", "must be at least 1");
    }
    if (memory.kmeans.max_iterations < 1) {
        throw ConfigError("memory.kmeans.max_iterations", "must be at least 1");
    }
    if (memory.kmeans.tolerance < 0.0) {
        throw ConfigError("memory.kmeans.tolerance", "must be non-negative");
    }
    contrast.validate();
}

ExperimentConfig config_from_json(const nlohmann::json& doc)
{
    Section root(doc, "");
    ExperimentConfig c;
    c.seed = root.get<std::uint64_t>("seed");
    c.run_id = root.get("run_id", std::string{});
    if (c.run_id.empty()) {
        c.run_id = "run-" + std::to_string(c.seed);
    }
    c.runs = root.get("runs", c.runs);
    c.ablation = parse_ablation(root.get("ablation", std::string("full")));
    c.dataset = read_dataset(root.child("dataset", true));
    c.encoder = read_encoder(root.child("encoder", false));
    c.classifier = read_classifier(root.child("classifier", false), c.encoder, c.dataset);
    c.memory = read_memory(root.child("memory", false));
    c.contrast = read_contrast(root.child("contrast", true), c.encoder);
    root.finish();
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open config '" + path.string() + "'");
    }
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("", "config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return config_from_json(doc);
}

nlohmann::json to_json(const ExperimentConfig& c)
{
    nlohmann::json dataset = {{"format", c.dataset.format},
                              {"path", c.dataset.path},
                              {"num_tasks", c.dataset.num_tasks},
                              {"max_train", c.dataset.max_train},
                              {"max_test", c.dataset.max_test},
                              {"task_assignment", c.dataset.task_assignment},
                              {"synthetic", to_json(c.dataset.synthetic)}};
    nlohmann::json memory = {
        {"L", c.memory.L},
        {"selection", c.memory.selection == ExemplarSelection::kmeans ? "kmeans" : "random"},
        {"kmeans",
         {{"restarts", c.memory.kmeans.restarts},
          {"max_iterations", c.memory.kmeans.max_iterations},
          {"tolerance", c.memory.kmeans.tolerance}}}};
    return {{"seed", c.seed},
            {"run_id", c.run_id},
            {"runs", c.runs},
            {"ablation", std::string(to_string(c.ablation))},
            {"dataset", std::move(dataset)},
            {"encoder", to_json(c.encoder)},
            {"classifier", to_json(c.classifier)},
            {"memory", std::move(memory)},
            {"contrast", to_json(c.contrast)}};
}

std::string config_hash(const ExperimentConfig& config)
{
    const std::string text = to_json(config).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace crecl
