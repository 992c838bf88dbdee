#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "crecl/pipeline.hpp"

namespace crecl {

/// Serialized form of a report; wall-clock time is deliberately absent.
nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& doc);

/// Quotes a CSV field when it holds a comma, quote, CR or LF; quotes are doubled.
std::string csv_field(std::string_view text);

/// One row per report: variant, run_id, T1..TK cumulative accuracy in percent.
std::string reports_to_csv(std::span<const EvalReport> reports);

struct AggregateRow {
    int task = 0;
    double mean_cumulative = 0.0;
    double std_cumulative = 0.0;
    double mean_current = 0.0;
    double std_current = 0.0;
};

/// Mean and (population) standard deviation over runs of one variant.
struct AggregateReport {
    std::string variant;
    std::size_t runs = 0;
    std::vector<AggregateRow> tasks;
};

/// Reports must share the variant and the task count.
AggregateReport aggregate_reports(std::span<const EvalReport> reports);
nlohmann::json aggregate_to_json(const AggregateReport& aggregate);
/// One row per aggregate: variant, runs, T1..TK mean cumulative accuracy in percent.
std::string aggregates_to_csv(std::span<const AggregateReport> aggregates);

void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

} // namespace crecl
