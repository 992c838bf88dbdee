#include "crecl/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <map>
#include <ostream>

#include <CLI11.hpp>

#include "crecl/analysis.hpp"
#include "crecl/error.hpp"
#include "crecl/pipeline.hpp"
#include "crecl/report.hpp"

namespace crecl {

namespace fs = std::filesystem;

namespace {

std::string utc_timestamp()
{
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string jsonl(const std::vector<nlohmann::json>& records)
{
    std::string out;
    for (const auto& r : records) {
        out += r.dump() + "\n";
    }
    return out;
}

nlohmann::json read_json(const fs::path& path)
{
    try {
        return nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

ExperimentConfig load_run_config(const fs::path& run_dir)
{
    verify_run_directory(run_dir);
    return config_from_json(read_json(run_dir / "config.json"));
}

int last_completed_task(const fs::path& run_dir)
{
    const auto manifest = manifest_from_json(read_json(run_dir / "manifest.json"));
    return static_cast<int>(manifest.checkpoints.size());
}

fs::path task_dir(const fs::path& run_dir, int k) { return run_dir / ("task_" + std::to_string(k)); }

void write_reports(const std::vector<EvalReport>& reports, const fs::path& dir, const std::string& stem)
{
    nlohmann::json all = nlohmann::json::array();
    for (const auto& r : reports) {
        all.push_back(report_to_json(r));
    }
    write_text_file(dir / (stem + ".json"), all.dump(2) + "\n");
    write_text_file(dir / (stem + ".csv"), reports_to_csv(reports));
}

// Groups reports by variant, preserving first-seen order.
std::vector<AggregateReport> aggregate_by_variant(const std::vector<EvalReport>& reports)
{
    std::vector<std::string> order;
    std::map<std::string, std::vector<EvalReport>> groups;
    for (const auto& r : reports) {
        if (!groups.contains(r.variant)) {
            order.push_back(r.variant);
        }
        groups[r.variant].push_back(r);
    }
    std::vector<AggregateReport> out;
    for (const auto& v : order) {
        out.push_back(aggregate_reports(groups.at(v)));
    }
    return out;
}

void write_aggregates(const std::vector<AggregateReport>& aggs, const fs::path& dir, const std::string& stem)
{
    nlohmann::json all = nlohmann::json::array();
    for (const auto& a : aggs) {
        all.push_back(aggregate_to_json(a));
    }
    write_text_file(dir / (stem + ".json"), all.dump(2) + "\n");
    write_text_file(dir / (stem + ".csv"), aggregates_to_csv(aggs));
}

} // namespace

nlohmann::json manifest_to_json(const RunManifest& m)
{
    return {{"format", "crecl-run-manifest"},
            {"version", 1},
            {"run_id", m.run_id},
            {"config_hash", m.config_hash},
            {"config", m.config_path},
            {"stream", m.stream_path},
            {"checkpoints", m.checkpoints},
            {"memory", m.memory},
            {"reports", m.reports},
            {"logs", m.logs},
            {"started_at", m.started_at},
            {"finished_at", m.finished_at},
            {"wall_clock_seconds", m.wall_clock_seconds}};
}

RunManifest manifest_from_json(const nlohmann::json& doc)
{
    try {
        if (doc.at("format").get<std::string>() != "crecl-run-manifest") {
            throw FormatError("not a run manifest");
        }
        RunManifest m;
        m.run_id = doc.at("run_id").get<std::string>();
        m.config_hash = doc.at("config_hash").get<std::string>();
        m.config_path = doc.at("config").get<std::string>();
        m.stream_path = doc.at("stream").get<std::string>();
        m.checkpoints = doc.at("checkpoints").get<std::vector<std::string>>();
        m.memory = doc.at("memory").get<std::vector<std::string>>();
        m.reports = doc.at("reports").get<std::vector<std::string>>();
        m.logs = doc.at("logs").get<std::vector<std::string>>();
        m.started_at = doc.at("started_at").get<std::string>();
        m.finished_at = doc.at("finished_at").get<std::string>();
        m.wall_clock_seconds = doc.at("wall_clock_seconds").get<double>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt run manifest: ") + e.what());
    }
}

void verify_run_directory(const fs::path& run_dir)
{
    const auto manifest = manifest_from_json(read_json(run_dir / "manifest.json"));
    const auto config = config_from_json(read_json(run_dir / manifest.config_path));
    if (config_hash(config) != manifest.config_hash) {
        throw Error("run '" + run_dir.string() + "': stored config does not match the manifest hash");
    }
    std::vector<std::string> paths = {manifest.stream_path};
    for (const auto* group : {&manifest.checkpoints, &manifest.memory, &manifest.reports, &manifest.logs}) {
        paths.insert(paths.end(), group->begin(), group->end());
    }
    for (const auto& p : paths) {
        if (!fs::exists(run_dir / p)) {
            throw Error("run '" + run_dir.string() + "': missing artifact '" + p + "'");
        }
    }
}

RunManifest execute_run(const ExperimentConfig& config, const fs::path& run_dir)
{
    RunManifest manifest;
    manifest.run_id = config.run_id;
    manifest.config_hash = config_hash(config);
    manifest.started_at = utc_timestamp();
    fs::create_directories(run_dir);

    manifest.config_path = "config.json";
    write_text_file(run_dir / manifest.config_path, to_json(config).dump(2) + "\n");
    const Corpus corpus = load_dataset(config.dataset);
    const TaskStream stream = build_task_stream(config, corpus);
    manifest.stream_path = "stream.json";
    save_stream(stream, run_dir / manifest.stream_path);

    std::vector<nlohmann::json> steps;
    std::vector<nlohmann::json> epochs;
    RunHooks hooks;
    hooks.on_task = [&](int k, const PipelineState& state, const TaskTrace& trace, const TaskResult&) {
        const std::string dir = "task_" + std::to_string(k);
        save_state(state, run_dir / dir);
        manifest.checkpoints.push_back(dir);
        manifest.memory.push_back(dir + "/memory.json");
        steps.insert(steps.end(), trace.steps.begin(), trace.steps.end());
        epochs.insert(epochs.end(), trace.epochs.begin(), trace.epochs.end());
    };
    const EvalReport report = run_experiment(config, stream, &hooks);

    write_text_file(run_dir / "trace.jsonl", jsonl(steps));
    write_text_file(run_dir / "training_log.jsonl", jsonl(epochs));
    manifest.logs = {"trace.jsonl", "training_log.jsonl"};
    write_text_file(run_dir / "report.json", report_to_json(report).dump(2) + "\n");
    write_text_file(run_dir / "report.csv", reports_to_csv(std::span<const EvalReport>(&report, 1)));
    manifest.reports = {"report.json", "report.csv"};
    manifest.finished_at = utc_timestamp();
    manifest.wall_clock_seconds = report.wall_clock_seconds;
    write_text_file(run_dir / "manifest.json", manifest_to_json(manifest).dump(2) + "\n");
    return manifest;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Continual relation extraction with a contrastive prototype network"};
    app.require_subcommand(1);

    // prepare
    auto* prepare = app.add_subcommand("prepare", "Split a corpus into a task stream file");
    std::string dataset;
    std::string format;
    int num_tasks = 0;
    std::uint64_t seed = 0;
    std::size_t max_train = DatasetConfig{}.max_train;
    std::size_t max_test = DatasetConfig{}.max_test;
    std::string out_path;
    prepare->add_option("--dataset", dataset, "Corpus file, or 'synthetic'")->required();
    prepare->add_option("--format", format, "Corpus format")
        ->required()
        ->check(CLI::IsMember({"fewrel", "tacred", "synthetic"}));
    prepare->add_option("--num-tasks", num_tasks, "Number of tasks")->required()->check(CLI::PositiveNumber);
    prepare->add_option("--seed", seed, "Split seed")->required();
    prepare->add_option("--max-train", max_train, "Training instances per relation");
    prepare->add_option("--max-test", max_test, "Test instances per relation");
    prepare->add_option("--out", out_path, "Output stream file")->required();

    // run
    auto* run = app.add_subcommand("run", "Run an experiment from a config file");
    std::string config_path;
    std::string ablation;
    std::string run_out;
    run->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("--ablation", ablation, "Override the ablation variant");
    run->add_option("--out", run_out, "Run directory (default runs/<run_id>)");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Re-evaluate a stored run after a task");
    std::string run_dir;
    int task = 0;
    std::string eval_out;
    evaluate->add_option("--run", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
    evaluate->add_option("--task", task, "Task index (default: last)");
    evaluate->add_option("--out", eval_out, "Write the result JSON here");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "Run every ablation variant, or a memory-size sweep");
    std::string ablate_config;
    std::string ablate_out;
    std::vector<int> memory_sizes;
    ablate->add_option("--config", ablate_config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    ablate->add_option("--out", ablate_out, "Output directory")->required();
    ablate->add_option("--memory-sizes", memory_sizes, "Sweep these memory sizes instead of the variants")
        ->delimiter(',')
        ->check(CLI::PositiveNumber);

    // export-embeddings
    auto* exporter = app.add_subcommand("export-embeddings", "Export test-set representations of a stored run");
    std::string export_run;
    int export_tasks = 0;
    std::string export_out;
    exporter->add_option("--run", export_run, "Run directory")->required()->check(CLI::ExistingDirectory);
    exporter->add_option("--tasks", export_tasks, "Export the test sets of tasks 1..k")
        ->required()
        ->check(CLI::PositiveNumber);
    exporter->add_option("--out", export_out, "Output CSV")->required();

    // report
    auto* report = app.add_subcommand("report", "Tabulate report files, averaging runs of the same variant");
    std::vector<std::string> inputs;
    std::string report_out;
    report->add_option("--inputs", inputs, "report.json files")->required()->check(CLI::ExistingFile);
    report->add_option("--out", report_out, "Output CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (*prepare) {
            ExperimentConfig config;
            config.seed = seed;
            config.dataset.format = format;
            config.dataset.path = format == "synthetic" ? std::string{} : dataset;
            config.dataset.num_tasks = num_tasks;
            config.dataset.max_train = max_train;
            config.dataset.max_test = max_test;
            const TaskStream stream = build_task_stream(config);
            save_stream(stream, out_path);
            out << "wrote " << stream.size() << " tasks to " << out_path << "\n";
        } else if (*run) {
            ExperimentConfig config = load_config(config_path);
            if (!ablation.empty()) {
                config.ablation = parse_ablation(ablation);
            }
            const fs::path dir = run_out.empty() ? fs::path("runs") / config.run_id : fs::path(run_out);
            if (config.runs == 1) {
                const auto manifest = execute_run(config, dir);
                out << read_text_file(dir / "report.csv");
                out << "run " << manifest.run_id << " written to " << dir.string() << "\n";
            } else {
                std::vector<EvalReport> reports;
                for (int r = 0; r < config.runs; ++r) {
                    ExperimentConfig single = config;
                    single.seed = config.seed + static_cast<std::uint64_t>(r);
                    single.runs = 1;
                    single.run_id = config.run_id + "-s" + std::to_string(single.seed);
                    const fs::path sub = dir / ("seed-" + std::to_string(single.seed));
                    execute_run(single, sub);
                    reports.push_back(report_from_json(read_json(sub / "report.json")));
                }
                write_aggregates(aggregate_by_variant(reports), dir, "aggregate");
                out << read_text_file(dir / "aggregate.csv");
            }
        } else if (*evaluate) {
            const ExperimentConfig config = load_run_config(run_dir);
            const int k = task > 0 ? task : last_completed_task(run_dir);
            const Corpus corpus = load_dataset(config.dataset);
            const TaskStream stream = load_stream(fs::path(run_dir) / "stream.json", corpus);
            const PipelineState state = load_state(task_dir(run_dir, k));
            const nlohmann::json result = {{"run_id", config.run_id},
                                           {"variant", std::string(variant_label(config.ablation))},
                                           {"task", k},
                                           {"cumulative_accuracy", evaluate_cumulative(config, stream, k, state)},
                                           {"current_accuracy", evaluate_current(config, stream, k, state)},
                                           {"cumulative_size", cumulative_test_set(stream, k).size()}};
            if (!eval_out.empty()) {
                write_text_file(eval_out, result.dump(2) + "\n");
            }
            out << result.dump(2) << "\n";
        } else if (*ablate) {
            const ExperimentConfig config = load_config(ablate_config);
            const Corpus corpus = load_dataset(config.dataset);
            std::vector<EvalReport> reports;
            for (int r = 0; r < config.runs; ++r) {
                ExperimentConfig single = config;
                single.seed = config.seed + static_cast<std::uint64_t>(r);
                single.runs = 1;
                single.run_id = config.run_id + "-s" + std::to_string(single.seed);
                auto batch = memory_sizes.empty() ? run_ablation_suite(single)
                                                  : run_memory_sweep(single, memory_sizes);
                reports.insert(reports.end(), batch.begin(), batch.end());
            }
            const std::string stem = memory_sizes.empty() ? "ablation" : "memory_sweep";
            write_reports(reports, ablate_out, stem + "_runs");
            write_aggregates(aggregate_by_variant(reports), ablate_out, stem);
            out << read_text_file(fs::path(ablate_out) / (stem + ".csv"));
        } else if (*exporter) {
            const ExperimentConfig config = load_run_config(export_run);
            const Corpus corpus = load_dataset(config.dataset);
            const TaskStream stream = load_stream(fs::path(export_run) / "stream.json", corpus);
            if (export_tasks > last_completed_task(export_run)) {
                throw Error("run has no state after task " + std::to_string(export_tasks));
            }
            const PipelineState state = load_state(task_dir(export_run, export_tasks));
            const auto instances = cumulative_test_set(stream, export_tasks);
            const auto rows = export_embeddings(state.encoder, instances);
            write_text_file(export_out, embeddings_to_csv(rows));
            out << "wrote " << rows.size() << " rows to " << export_out;
            if (state.seen.size() >= 2) {
                out << " (silhouette " << embedding_silhouette(rows) << ")";
            }
            out << "\n";
        } else if (*report) {
            std::vector<EvalReport> reports;
            for (const auto& path : inputs) {
                const auto doc = read_json(path);
                if (doc.is_array()) {
                    for (const auto& item : doc) {
                        reports.push_back(report_from_json(item));
                    }
                } else {
                    reports.push_back(report_from_json(doc));
                }
            }
            const auto aggs = aggregate_by_variant(reports);
            write_text_file(report_out, aggregates_to_csv(aggs));
            out << read_text_file(report_out);
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace crecl
