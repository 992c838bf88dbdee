#include <gtest/gtest.h>

#include "crecl/error.hpp"
#include "crecl/pipeline.hpp"
#include "crecl/report.hpp"

namespace crecl {
namespace {

nlohmann::json small_config_doc()
{
    return {
        {"seed", 3},
        {"dataset",
         {{"format", "synthetic"},
          {"num_tasks", 2},
          {"max_train", 20},
          {"max_test", 8},
          {"synthetic", {{"relations", 4}, {"instances_per_relation", 28}, {"entity_noise", 0.0}}}}},
        {"encoder", {{"kind", "toy"}, {"hidden_dim", 8}, {"token_dim", 8}}},
        {"classifier", {{"epochs1", 2}}},
        {"memory", {{"L", 3}}},
        {"contrast", {{"margin", 0.2}, {"lambda1", 0.5}, {"epochs2", 2}, {"epochs3", 2}, {"batch_size", 8}}},
    };
}

ExperimentConfig small_config(Ablation ablation = Ablation::full)
{
    auto c = config_from_json(small_config_doc());
    c.ablation = ablation;
    return c;
}

TEST(Pipeline, TasksMustRunInOrder)
{
    const auto config = small_config();
    const auto stream = build_task_stream(config);
    auto state = initial_state(config);
    EXPECT_THROW(run_task(config, stream, 2, state), Error);
    run_task(config, stream, 1, state);
    EXPECT_THROW(run_task(config, stream, 1, state), Error);
    EXPECT_THROW(run_task(config, stream, 3, state), Error);
}

TEST(Pipeline, FirstTaskSeesExactlyItsRelations)
{
    const auto config = small_config();
    const auto stream = build_task_stream(config);
    auto state = initial_state(config);
    run_task(config, stream, 1, state);
    EXPECT_EQ(state.seen, stream.tasks[0].relations);
    EXPECT_EQ(state.memory.relations(), stream.tasks[0].relations);
    EXPECT_EQ(prediction_space(config, state), stream.tasks[0].relations);
    ASSERT_TRUE(state.task_head.has_value());
    EXPECT_EQ(state.task_head->relations(), stream.tasks[0].relations);
}

TEST(Pipeline, TraceRecordsSkippedSteps)
{
    const auto config = small_config(Ablation::no_process2);
    const auto stream = build_task_stream(config);
    auto state = initial_state(config);
    TaskTrace trace;
    run_task(config, stream, 1, state, &trace);
    std::vector<std::string> skipped;
    std::vector<std::string> steps;
    for (const auto& s : trace.steps) {
        steps.push_back(s.at("step"));
        if (s.at("status") == "skipped") {
            skipped.push_back(s.at("step"));
        }
    }
    EXPECT_EQ(skipped, (std::vector<std::string>{"train_contrastive_memory"}));
    EXPECT_EQ(steps.front(), "train_classification");
    EXPECT_EQ(steps.back(), "task_complete");
    EXPECT_FALSE(trace.epochs.empty());
}

TEST(Pipeline, RunsAreDeterministic)
{
    const auto config = small_config();
    const auto stream = build_task_stream(config);
    auto a = initial_state(config);
    auto b = initial_state(config);
    EXPECT_EQ(state_checksum(a), state_checksum(b));
    for (int k = 1; k <= 2; ++k) {
        run_task(config, stream, k, a);
        run_task(config, stream, k, b);
        EXPECT_EQ(state_checksum(a), state_checksum(b));
    }
    EXPECT_EQ(report_to_json(run_experiment(config, stream)), report_to_json(run_experiment(config, stream)));
}

TEST(Pipeline, EvaluationDoesNotMutateState)
{
    const auto config = small_config();
    const auto stream = build_task_stream(config);
    auto state = initial_state(config);
    run_task(config, stream, 1, state);
    const auto before = state_checksum(state);
    const double acc = evaluate_cumulative(config, stream, 1, state);
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
    EXPECT_EQ(evaluate_cumulative(config, stream, 1, state), acc);
    EXPECT_EQ(state_checksum(state), before);
    EXPECT_THROW(evaluate_cumulative(config, stream, 2, state), Error);
}

TEST(Pipeline, CumulativeTestSetGrows)
{
    const auto config = small_config();
    const auto stream = build_task_stream(config);
    const auto one = cumulative_test_set(stream, 1);
    const auto two = cumulative_test_set(stream, 2);
    EXPECT_EQ(one.size(), stream.tasks[0].test.size());
    EXPECT_EQ(two.size(), stream.tasks[0].test.size() + stream.tasks[1].test.size());
    const auto report = run_experiment(config, stream);
    ASSERT_EQ(report.tasks.size(), 2u);
    EXPECT_EQ(report.tasks[1].cumulative_size, two.size());
    EXPECT_EQ(report.tasks[1].seen_relations, 4u);
    EXPECT_EQ(accuracy(std::vector<std::string>{}, std::vector<Instance>{}), 0.0);
}

TEST(Pipeline, GrowingHeadVariantsPredictOverSeenRelations)
{
    for (const auto ablation : {Ablation::classifier_only, Ablation::classifier_prediction}) {
        const auto config = small_config(ablation);
        const auto stream = build_task_stream(config);
        auto state = initial_state(config);
        run_task(config, stream, 1, state);
        run_task(config, stream, 2, state);
        ASSERT_TRUE(state.growing_head.has_value());
        EXPECT_EQ(state.growing_head->relations().size(), 4u);
        EXPECT_EQ(prediction_space(config, state), state.seen);
    }
}

TEST(Pipeline, SaveAndLoadState)
{
    const auto config = small_config(Ablation::classifier_prediction);
    const auto stream = build_task_stream(config);
    auto state = initial_state(config);
    run_task(config, stream, 1, state);
    const auto dir = std::filesystem::temp_directory_path() / "crecl_state_roundtrip";
    std::filesystem::remove_all(dir);
    save_state(state, dir);
    const auto back = load_state(dir);
    EXPECT_EQ(state_checksum(back), state_checksum(state));
    auto resumed = back;
    run_task(config, stream, 2, state);
    run_task(config, stream, 2, resumed);
    EXPECT_EQ(state_checksum(resumed), state_checksum(state));
    std::filesystem::remove_all(dir);
}

TEST(Config, MissingRequiredKeyIsNamed)
{
    for (const auto& key : {"seed", "dataset"}) {
        auto doc = small_config_doc();
        doc.erase(key);
        try {
            config_from_json(doc);
            FAIL() << key;
        } catch (const ConfigError& e) {
            EXPECT_EQ(e.key(), key);
        }
    }
    for (const auto& key : {"margin", "lambda1"}) {
        auto doc = small_config_doc();
        doc["contrast"].erase(key);
        try {
            config_from_json(doc);
            FAIL() << key;
        } catch (const ConfigError& e) {
            EXPECT_EQ(e.key(), std::string("contrast.") + key);
        }
    }
    auto doc = small_config_doc();
    doc["dataset"]["format"] = "fewrel";
    try {
        config_from_json(doc);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.key(), "dataset.path");
    }
}

TEST(Config, UnknownKeysAndBadValuesAreRejected)
{
    auto doc = small_config_doc();
    doc["contrast"]["lamda1"] = 0.5;
    EXPECT_THROW(config_from_json(doc), ConfigError);
    doc = small_config_doc();
    doc["contrast"]["tau"] = -1.0;
    EXPECT_THROW(config_from_json(doc), ConfigError);
    doc = small_config_doc();
    doc["ablation"] = "nonsense";
    EXPECT_THROW(config_from_json(doc), ConfigError);
}

TEST(Config, ResolvedRoundTripAndHash)
{
    const auto config = small_config();
    const auto resolved = to_json(config);
    const auto again = config_from_json(resolved);
    EXPECT_EQ(to_json(again), resolved);
    EXPECT_EQ(config_hash(again), config_hash(config));
    EXPECT_EQ(config_hash(config).size(), 16u);
    auto other = small_config();
    other.contrast.margin = 0.3;
    EXPECT_NE(config_hash(other), config_hash(config));
    EXPECT_EQ(config.run_id, "run-3");
}

TEST(Config, ShippedConfigsParse)
{
    for (const auto& entry : std::filesystem::directory_iterator(CRECL_CONFIG_DIR)) {
        EXPECT_NO_THROW(load_config(entry.path())) << entry.path();
    }
}

TEST(Config, AblationNames)
{
    EXPECT_EQ(variant_label(parse_ablation("no_margin")), "CRECL-MAG");
    EXPECT_EQ(parse_ablation("CRECL-CL2"), Ablation::no_process2);
    EXPECT_EQ(variant_label(Ablation::full), "CRECL");
    for (const auto a : kAllAblations) {
        EXPECT_EQ(parse_ablation(to_string(a)), a);
    }
}

TEST(Report, CsvQuoting)
{
    EXPECT_EQ(csv_field("plain"), "plain");
    EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
    EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
    EXPECT_EQ(csv_field("two\nlines"), "\"two\nlines\"");
}

TEST(Report, JsonRoundTripAndAggregate)
{
    EvalReport a;
    a.variant = "CRECL";
    a.run_id = "x, y";
    a.seed = 1;
    a.tasks = {{1, 0.5, 0.5, 10, 2}, {2, 0.25, 0.75, 20, 4}};
    a.config = {{"k", 1}};
    EvalReport b = a;
    b.seed = 2;
    b.tasks[0].cumulative_accuracy = 1.0;
    const auto back = report_from_json(report_to_json(a));
    EXPECT_EQ(report_to_json(back), report_to_json(a));
    const std::vector<EvalReport> both = {a, b};
    const auto csv = reports_to_csv(both);
    EXPECT_EQ(csv.substr(0, csv.find("\r\n")), "variant,run_id,T1,T2");
    EXPECT_NE(csv.find("CRECL,\"x, y\",50.00,25.00\r\n"), std::string::npos);
    const auto agg = aggregate_reports(both);
    EXPECT_EQ(agg.runs, 2u);
    EXPECT_DOUBLE_EQ(agg.tasks[0].mean_cumulative, 0.75);
    EXPECT_DOUBLE_EQ(agg.tasks[0].std_cumulative, 0.25);
}

} // namespace
} // namespace crecl
