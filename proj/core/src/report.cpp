#include "crecl/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "crecl/error.hpp"

namespace crecl {

namespace {

std::string percent(double fraction)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
    return buf;
}

std::string header_row(std::string_view second, std::size_t tasks)
{
    std::string out = "variant," + std::string(second);
    for (std::size_t k = 1; k <= tasks; ++k) {
        out += ",T" + std::to_string(k);
    }
    return out + "\r\n";
}

double mean_of(const std::vector<double>& xs)
{
    double s = 0.0;
    for (const double x : xs) {
        s += x;
    }
    return s / static_cast<double>(xs.size());
}

double std_of(const std::vector<double>& xs, double mean)
{
    double s = 0.0;
    for (const double x : xs) {
        s += (x - mean) * (x - mean);
    }
    return std::sqrt(s / static_cast<double>(xs.size()));
}

} // namespace

nlohmann::json report_to_json(const EvalReport& report)
{
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& t : report.tasks) {
        tasks.push_back({{"task", t.task},
                         {"cumulative_accuracy", t.cumulative_accuracy},
                         {"current_accuracy", t.current_accuracy},
                         {"cumulative_size", t.cumulative_size},
                         {"seen_relations", t.seen_relations}});
    }
    return {{"format", "crecl-eval-report"},
            {"version", 1},
            {"variant", report.variant},
            {"run_id", report.run_id},
            {"seed", report.seed},
            {"tasks", std::move(tasks)},
            {"config", report.config}};
}

EvalReport report_from_json(const nlohmann::json& doc)
{
    try {
        if (doc.at("format").get<std::string>() != "crecl-eval-report") {
            throw FormatError("not an evaluation report");
        }
        if (doc.at("version").get<int>() != 1) {
            throw FormatError("unsupported report version");
        }
        EvalReport r;
        r.variant = doc.at("variant").get<std::string>();
        r.run_id = doc.at("run_id").get<std::string>();
        r.seed = doc.at("seed").get<std::uint64_t>();
        r.config = doc.at("config");
        for (const auto& t : doc.at("tasks")) {
            TaskResult row;
            row.task = t.at("task").get<int>();
            row.cumulative_accuracy = t.at("cumulative_accuracy").get<double>();
            row.current_accuracy = t.at("current_accuracy").get<double>();
            row.cumulative_size = t.at("cumulative_size").get<std::size_t>();
            row.seen_relations = t.at("seen_relations").get<std::size_t>();
            r.tasks.push_back(row);
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt report: ") + e.what());
    }
}

std::string csv_field(std::string_view text)
{
    if (text.find_first_of(",\"\r\n") == std::string_view::npos) {
        return std::string(text);
    }
    std::string out = "\"";
    for (const char c : text) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    return out + "\"";
}

std::string reports_to_csv(std::span<const EvalReport> reports)
{
    std::size_t tasks = 0;
    for (const auto& r : reports) {
        tasks = std::max(tasks, r.tasks.size());
    }
    std::string out = header_row("run_id", tasks);
    for (const auto& r : reports) {
        out += csv_field(r.variant) + "," + csv_field(r.run_id);
        for (std::size_t k = 0; k < tasks; ++k) {
            out += ",";
            if (k < r.tasks.size()) {
                out += percent(r.tasks[k].cumulative_accuracy);
            }
        }
        out += "\r\n";
    }
    return out;
}

AggregateReport aggregate_reports(std::span<const EvalReport> reports)
{
    if (reports.empty()) {
        throw Error("aggregate: no reports");
    }
    AggregateReport agg;
    agg.variant = reports.front().variant;
    agg.runs = reports.size();
    const std::size_t tasks = reports.front().tasks.size();
    for (const auto& r : reports) {
        if (r.variant != agg.variant) {
            throw Error("aggregate: reports of different variants");
        }
        if (r.tasks.size() != tasks) {
            throw Error("aggregate: reports with different task counts");
        }
    }
    for (std::size_t k = 0; k < tasks; ++k) {
        std::vector<double> cum;
        std::vector<double> cur;
        for (const auto& r : reports) {
            cum.push_back(r.tasks[k].cumulative_accuracy);
            cur.push_back(r.tasks[k].current_accuracy);
        }
        AggregateRow row;
        row.task = static_cast<int>(k + 1);
        row.mean_cumulative = mean_of(cum);
        row.std_cumulative = std_of(cum, row.mean_cumulative);
        row.mean_current = mean_of(cur);
        row.std_current = std_of(cur, row.mean_current);
        agg.tasks.push_back(row);
    }
    return agg;
}

nlohmann::json aggregate_to_json(const AggregateReport& agg)
{
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& t : agg.tasks) {
        tasks.push_back({{"task", t.task},
                         {"mean_cumulative_accuracy", t.mean_cumulative},
                         {"std_cumulative_accuracy", t.std_cumulative},
                         {"mean_current_accuracy", t.mean_current},
                         {"std_current_accuracy", t.std_current}});
    }
    return {{"variant", agg.variant}, {"runs", agg.runs}, {"tasks", std::move(tasks)}};
}

std::string aggregates_to_csv(std::span<const AggregateReport> aggregates)
{
    std::size_t tasks = 0;
    for (const auto& a : aggregates) {
        tasks = std::max(tasks, a.tasks.size());
    }
    std::string out = header_row("runs", tasks);
    for (const auto& a : aggregates) {
        out += csv_field(a.variant) + "," + std::to_string(a.runs);
        for (std::size_t k = 0; k < tasks; ++k) {
            out += ",";
            if (k < a.tasks.size()) {
                out += percent(a.tasks[k].mean_cumulative);
            }
        }
        out += "\r\n";
    }
    return out;
}

void write_text_file(const std::filesystem::path& path, std::string_view text)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) {
        throw Error("cannot write '" + path.string() + "'");
    }
}

std::string read_text_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open '" + path.string() + "'");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace crecl
