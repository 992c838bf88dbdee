#include "crecl/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>

#include "crecl/checkpoint.hpp"
#include "crecl/error.hpp"
#include "crecl/synthetic.hpp"

namespace crecl {

namespace {

// Stream ids of the per-step generators; every (task, step) pair draws
// from its own stream so skipping a step leaves the others untouched.
enum Step : std::uint64_t {
    kStepClassification = 1,
    kStepExemplars = 2,
    kStepCurrent = 3,
    kStepMemory = 4,
};
constexpr std::uint64_t kInitEncoderStream = 0x10000;
constexpr std::uint64_t kInitProjectorStream = 0x10001;

Rng step_rng(std::uint64_t seed, int k, Step step)
{
    return Rng(seed).fork(static_cast<std::uint64_t>(k) * 16 + step);
}

class Fnv {
public:
    void bytes(const void* data, std::size_t n)
    {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ULL;
        }
    }
    void text(const std::string& s)
    {
        bytes(s.data(), s.size());
        bytes("\0", 1);
    }
    void matrix(const Mat& m)
    {
        const std::int64_t dims[2] = {m.rows(), m.cols()};
        bytes(dims, sizeof dims);
        bytes(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
    }
    std::string hex() const
    {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h_));
        return buf;
    }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

nlohmann::json tensor_shapes(const ClassifierHead& head)
{
    nlohmann::json out = nlohmann::json::array();
    out.push_back({{"name", head.weight().name}, {"rows", head.weight().value.rows()}, {"cols", head.weight().value.cols()}});
    out.push_back({{"name", head.bias().name}, {"rows", head.bias().value.rows()}, {"cols", head.bias().value.cols()}});
    return out;
}

void record_epochs(TaskTrace* trace, int k, const char* phase, const std::vector<EpochMetrics>& epochs)
{
    if (!trace) {
        return;
    }
    for (const auto& e : epochs) {
        trace->epochs.push_back({{"task", k}, {"phase", phase}, {"epoch", e.epoch}, {"loss", e.loss}, {"train_acc", e.train_acc}});
    }
}

void record_step(TaskTrace* trace, int k, const char* step, bool ran, const PipelineState& state,
                 nlohmann::json extra = nlohmann::json::object())
{
    if (!trace) {
        return;
    }
    nlohmann::json rec = {{"task", k}, {"step", step}, {"status", ran ? "run" : "skipped"}};
    for (auto& [key, value] : extra.items()) {
        rec[key] = value;
    }
    rec["state_checksum"] = state_checksum(state);
    trace->steps.push_back(std::move(rec));
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open '" + path.string() + "'");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

Corpus load_dataset(const DatasetConfig& dataset)
{
    if (dataset.format == "synthetic") {
        return make_synthetic_corpus(dataset.synthetic);
    }
    return load_corpus(dataset.path, parse_corpus_format(dataset.format));
}

TaskStream build_task_stream(const ExperimentConfig& config, const Corpus& corpus)
{
    const auto split = cap_samples(corpus, config.dataset.max_train, config.dataset.max_test, config.seed);
    if (config.dataset.task_assignment.empty()) {
        return partition_tasks(split, config.dataset.num_tasks, config.seed);
    }
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file(config.dataset.task_assignment));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("task assignment '" + config.dataset.task_assignment + "': " + e.what());
    }
    if (!doc.is_array() || static_cast<int>(doc.size()) != config.dataset.num_tasks) {
        throw FormatError("task assignment must list exactly " + std::to_string(config.dataset.num_tasks) +
                          " relation groups");
    }
    return assign_tasks(split, doc.get<std::vector<std::vector<std::string>>>(), config.seed);
}

TaskStream build_task_stream(const ExperimentConfig& config)
{
    return build_task_stream(config, load_dataset(config.dataset));
}

PipelineState initial_state(const ExperimentConfig& config)
{
    config.validate();
    Rng enc_init = Rng(config.seed).fork(kInitEncoderStream);
    Rng proj_init = Rng(config.seed).fork(kInitProjectorStream);
    InstanceEncoder encoder(config.encoder, enc_init);
    Projector projector(encoder.hidden_dim(), proj_init);
    return PipelineState{std::move(encoder), std::move(projector), EpisodicMemory(config.memory.L), {}, {}, {}, 0};
}

bool uses_growing_head(Ablation ablation)
{
    return ablation == Ablation::classifier_only || ablation == Ablation::classifier_prediction;
}

void run_task(const ExperimentConfig& config, const TaskStream& stream, int k, PipelineState& state, TaskTrace* trace)
{
    if (k != state.completed + 1) {
        throw Error("run_task: task " + std::to_string(k) + " requested after " + std::to_string(state.completed) +
                    " completed tasks");
    }
    if (k < 1 || static_cast<std::size_t>(k) > stream.size()) {
        throw Error("run_task: task " + std::to_string(k) + " is not in the stream");
    }
    const Task& task = stream.task(k);
    const Ablation ablation = config.ablation;
    const bool contrastive = ablation != Ablation::classifier_only;

    {
        Rng rng = step_rng(config.seed, k, kStepClassification);
        if (uses_growing_head(ablation)) {
            if (!state.growing_head) {
                state.growing_head.emplace(task.relations, state.encoder.hidden_dim(),
                                           !state.encoder.hidden_layer().activation(), rng);
            } else {
                state.growing_head->add_relations(task.relations, rng);
            }
            record_epochs(trace, k, "classification",
                          train_head(task.train, state.encoder, *state.growing_head, config.classifier, rng));
            record_step(trace, k, "train_classification", true, state,
                        {{"head", "growing"}, {"head_rows", state.growing_head->rows()},
                         {"head_tensors", tensor_shapes(*state.growing_head)}});
        } else {
            auto result = train_classification(task, state.encoder, config.classifier, rng);
            record_epochs(trace, k, "classification", result.epochs);
            state.task_head = std::move(result.head);
            record_step(trace, k, "train_classification", true, state,
                        {{"head", "task"}, {"head_rows", state.task_head->rows()},
                         {"head_tensors", tensor_shapes(*state.task_head)}});
        }
    }

    {
        Rng rng = step_rng(config.seed, k, kStepExemplars);
        const auto selection =
            ablation == Ablation::random_exemplars ? ExemplarSelection::random : config.memory.selection;
        store_task_exemplars(task, state.encoder, state.memory, rng, selection, config.memory.kmeans);
        record_step(trace, k, "store_task_exemplars", true, state,
                    {{"selection", selection == ExemplarSelection::kmeans ? "kmeans" : "random"},
                     {"memory_relations", state.memory.size()},
                     {"memory_instances", state.memory.instance_count()}});
    }

    const std::set<std::string> previous(state.seen.begin(), state.seen.end());
    std::set<std::string> seen = previous;
    seen.insert(task.relations.begin(), task.relations.end());
    state.seen.assign(seen.begin(), seen.end());

    if (contrastive) {
        const auto prototypes = compute_prototypes(state.memory, state.encoder);
        record_step(trace, k, "compute_prototypes", true, state, {{"prototypes", prototypes.size()}});
    } else {
        record_step(trace, k, "compute_prototypes", false, state);
    }

    ContrastConfig contrast = config.contrast;
    if (ablation == Ablation::no_margin) {
        contrast.lambda1 = 1.0;
    }

    if (contrastive && ablation != Ablation::no_process1) {
        Rng rng = step_rng(config.seed, k, kStepCurrent);
        record_epochs(trace, k, "contrastive_current",
                      train_contrastive_current(task, state.memory, state.encoder, state.projector, contrast, rng));
        record_step(trace, k, "train_contrastive_current", true, state, {{"lambda1", contrast.lambda1}});
    } else {
        record_step(trace, k, "train_contrastive_current", false, state);
    }

    if (contrastive && ablation != Ablation::no_process2) {
        Rng rng = step_rng(config.seed, k, kStepMemory);
        record_epochs(trace, k, "contrastive_memory",
                      train_contrastive_memory(state.memory, state.encoder, state.projector, contrast, previous, rng));
        record_step(trace, k, "train_contrastive_memory", true, state,
                    {{"lambda1", contrast.lambda1}, {"replayed_relations", previous.size()}});
    } else {
        record_step(trace, k, "train_contrastive_memory", false, state);
    }

    state.completed = k;
    if (trace) {
        nlohmann::json classifier = nlohmann::json::array();
        if (state.task_head) {
            classifier.push_back({{"head", "task"}, {"tensors", tensor_shapes(*state.task_head)}});
        }
        if (state.growing_head) {
            classifier.push_back({{"head", "growing"}, {"tensors", tensor_shapes(*state.growing_head)}});
        }
        record_step(trace, k, "task_complete", true, state,
                    {{"task_relations", task.relations.size()},
                     {"seen_relations", state.seen.size()},
                     {"prediction_space", prediction_space(config, state)},
                     {"classifier", std::move(classifier)}});
    }
}

std::vector<std::string> prediction_space(const ExperimentConfig& config, const PipelineState& state)
{
    if (uses_growing_head(config.ablation)) {
        if (!state.growing_head) {
            return {};
        }
        auto out = state.growing_head->relations();
        std::sort(out.begin(), out.end());
        return out;
    }
    return state.memory.relations();
}

std::vector<std::string> predict_batch(const ExperimentConfig& config, const PipelineState& state,
                                       std::span<const Instance> instances)
{
    std::vector<std::string> out;
    out.reserve(instances.size());
    if (uses_growing_head(config.ablation)) {
        if (!state.growing_head) {
            throw Error("predict: no task has been trained");
        }
        for (const auto& inst : instances) {
            out.push_back(state.growing_head->predict(state.encoder.represent(inst)));
        }
        return out;
    }
    const auto index = build_prototype_index(state.memory, state.encoder, state.projector);
    for (const auto& inst : instances) {
        out.push_back(predict(inst, index, state.encoder, state.projector));
    }
    return out;
}

double accuracy(std::span<const std::string> predicted, std::span<const Instance> instances)
{
    if (predicted.size() != instances.size()) {
        throw Error("accuracy: one prediction per instance required");
    }
    if (instances.empty()) {
        return 0.0;
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        hits += predicted[i] == instances[i].relation ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(instances.size());
}

std::vector<Instance> cumulative_test_set(const TaskStream& stream, int k)
{
    std::vector<Instance> out;
    for (int i = 1; i <= k; ++i) {
        const auto& test = stream.task(i).test;
        out.insert(out.end(), test.begin(), test.end());
    }
    return out;
}

double evaluate_cumulative(const ExperimentConfig& config, const TaskStream& stream, int k,
                           const PipelineState& state)
{
    if (k < 1 || k > state.completed) {
        throw Error("evaluate: task " + std::to_string(k) + " has not been completed");
    }
    const auto test = cumulative_test_set(stream, k);
    return accuracy(predict_batch(config, state, test), test);
}

double evaluate_current(const ExperimentConfig& config, const TaskStream& stream, int k, const PipelineState& state)
{
    if (k < 1 || k > state.completed) {
        throw Error("evaluate: task " + std::to_string(k) + " has not been completed");
    }
    const auto& test = stream.task(k).test;
    return accuracy(predict_batch(config, state, test), test);
}

EvalReport run_experiment(const ExperimentConfig& config, const TaskStream& stream, const RunHooks* hooks)
{
    config.validate();
    validate(stream);
    const auto started = std::chrono::steady_clock::now();
    EvalReport report;
    report.variant = std::string(variant_label(config.ablation));
    report.run_id = config.run_id;
    report.seed = config.seed;
    report.config = to_json(config);

    PipelineState state = initial_state(config);
    std::size_t cumulative = 0;
    for (int k = 1; k <= static_cast<int>(stream.size()); ++k) {
        TaskTrace trace;
        run_task(config, stream, k, state, &trace);
        cumulative += stream.task(k).test.size();
        TaskResult row;
        row.task = k;
        row.cumulative_accuracy = evaluate_cumulative(config, stream, k, state);
        row.current_accuracy = evaluate_current(config, stream, k, state);
        row.cumulative_size = cumulative;
        row.seen_relations = state.seen.size();
        report.tasks.push_back(row);
        if (hooks && hooks->on_task) {
            hooks->on_task(k, state, trace, row);
        }
    }
    report.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

EvalReport run_experiment(const ExperimentConfig& config, const RunHooks* hooks)
{
    return run_experiment(config, build_task_stream(config), hooks);
}

std::vector<EvalReport> run_repeated(const ExperimentConfig& config)
{
    const Corpus corpus = load_dataset(config.dataset);
    std::vector<EvalReport> out;
    for (int r = 0; r < config.runs; ++r) {
        ExperimentConfig run = config;
        run.seed = config.seed + static_cast<std::uint64_t>(r);
        run.runs = 1;
        run.run_id = config.run_id + "-s" + std::to_string(run.seed);
        out.push_back(run_experiment(run, build_task_stream(run, corpus)));
    }
    return out;
}

std::vector<EvalReport> run_ablation_suite(const ExperimentConfig& config)
{
    const TaskStream stream = build_task_stream(config);
    std::vector<EvalReport> out;
    for (const Ablation ablation : kAllAblations) {
        ExperimentConfig variant = config;
        variant.ablation = ablation;
        variant.run_id = config.run_id + "-" + std::string(to_string(ablation));
        out.push_back(run_experiment(variant, stream));
    }
    return out;
}

std::vector<EvalReport> run_memory_sweep(const ExperimentConfig& config, std::span<const int> sizes)
{
    const TaskStream stream = build_task_stream(config);
    std::vector<EvalReport> out;
    for (const int L : sizes) {
        ExperimentConfig variant = config;
        variant.memory.L = L;
        variant.run_id = config.run_id + "-L" + std::to_string(L);
        out.push_back(run_experiment(variant, stream));
        out.back().variant += " L=" + std::to_string(L);
    }
    return out;
}

std::string state_checksum(const PipelineState& state)
{
    Fnv h;
    for (const auto* p : state.encoder.parameters()) {
        h.text(p->name);
        h.matrix(p->value);
    }
    for (const auto* p : state.projector.parameters()) {
        h.text(p->name);
        h.matrix(p->value);
    }
    h.text(memory_to_json(state.memory).dump());
    for (const auto& r : state.seen) {
        h.text(r);
    }
    for (const auto* head : {state.task_head ? &*state.task_head : nullptr,
                             state.growing_head ? &*state.growing_head : nullptr}) {
        h.text(head ? "head" : "none");
        if (head) {
            for (const auto& r : head->relations()) {
                h.text(r);
            }
            h.matrix(head->weight().value);
            h.matrix(head->bias().value);
        }
    }
    h.bytes(&state.completed, sizeof state.completed);
    return h.hex();
}

Checkpoint head_to_checkpoint(const ClassifierHead& head)
{
    Checkpoint ck;
    ck.header = {{"kind", "classifier-head"},
                 {"relations", head.relations()},
                 {"input_dim", head.input_dim()},
                 {"apply_activation", head.apply_activation()}};
    ck.tensors.emplace_back(head.weight().name, head.weight().value);
    ck.tensors.emplace_back(head.bias().name, head.bias().value);
    return ck;
}

ClassifierHead head_from_checkpoint(const Checkpoint& checkpoint)
{
    if (checkpoint.header.value("kind", std::string{}) != "classifier-head") {
        throw FormatError("checkpoint does not hold a classifier head");
    }
    Rng scratch(0);
    ClassifierHead head(checkpoint.header.at("relations").get<std::vector<std::string>>(),
                        checkpoint.header.at("input_dim").get<int>(),
                        checkpoint.header.at("apply_activation").get<bool>(), scratch);
    for (auto* p : head.parameters()) {
        const Mat& m = checkpoint.tensor(p->name);
        if (m.rows() != p->value.rows() || m.cols() != p->value.cols()) {
            throw FormatError("classifier head tensor '" + p->name + "' has the wrong shape");
        }
        p->value = m;
        p->zero_grad();
    }
    return head;
}

void save_state(const PipelineState& state, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    write_checkpoint(state.encoder.to_checkpoint(), dir / "encoder.ckpt");
    write_checkpoint(state.projector.to_checkpoint(), dir / "projector.ckpt");
    save_memory(state.memory, dir / "memory.json");
    if (state.task_head) {
        write_checkpoint(head_to_checkpoint(*state.task_head), dir / "task_head.ckpt");
    }
    if (state.growing_head) {
        write_checkpoint(head_to_checkpoint(*state.growing_head), dir / "growing_head.ckpt");
    }
    const nlohmann::json meta = {{"completed", state.completed}, {"seen", state.seen}};
    std::ofstream out(dir / "state.json", std::ios::binary);
    out << meta.dump(2) << '\n';
    if (!out) {
        throw Error("cannot write '" + (dir / "state.json").string() + "'");
    }
}

PipelineState load_state(const std::filesystem::path& dir)
{
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_file(dir / "state.json"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("corrupt state file in '" + dir.string() + "': " + e.what());
    }
    PipelineState state{InstanceEncoder::from_checkpoint(read_checkpoint(dir / "encoder.ckpt")),
                        Projector::from_checkpoint(read_checkpoint(dir / "projector.ckpt")),
                        load_memory(dir / "memory.json"),
                        meta.at("seen").get<std::vector<std::string>>(),
                        {},
                        {},
                        meta.at("completed").get<int>()};
    if (std::filesystem::exists(dir / "task_head.ckpt")) {
        state.task_head = head_from_checkpoint(read_checkpoint(dir / "task_head.ckpt"));
    }
    if (std::filesystem::exists(dir / "growing_head.ckpt")) {
        state.growing_head = head_from_checkpoint(read_checkpoint(dir / "growing_head.ckpt"));
    }
    return state;
}

} // namespace crecl
