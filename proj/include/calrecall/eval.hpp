#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "calrecall/runlog.hpp"

namespace calrecall {

/// Relevant entries among the first min(n, |log|), divided by n: a log that
/// ends early counts the missing iterations as misses. n must be >= 1.
double precision_at(const RunLog& log, std::size_t n);

/// Relevant entries among the first min(n, |log|), divided by r_t.
/// r_t = 0 is vacuous recall and returns 1.0.
double recall_at(const RunLog& log, std::size_t n, std::size_t r_t);

/// Recall after 4 r_t + 1000 iterations.
double recall_at_4r_1000(const RunLog& log, std::size_t r_t);
inline std::size_t budget_4r_1000(std::size_t r_t) { return 4 * r_t + 1000; }

struct GainPoint {
    std::size_t shown = 0;
    double recall = 0.0;

    friend bool operator==(const GainPoint&, const GainPoint&) = default;
};

/// (i, recall_at(log, i, r_t)) for every i in 1..|log|.
std::vector<GainPoint> gain_curve(const RunLog& log, std::size_t r_t);

struct MetricsReport {
    std::string topic_id;
    std::size_t r_t = 0;
    std::size_t shown = 0;
    std::size_t relevant_found = 0;
    std::map<std::size_t, double> p_at;
    std::map<std::size_t, double> r_at;
    double recall_at_4r_1000 = 0.0;
    /// set when r_t = 0 and recall values are vacuous
    bool vacuous_recall = false;
    std::vector<GainPoint> gain_curve;
};

inline const std::vector<std::size_t> kDefaultCutoffs = {10, 100};

MetricsReport evaluate(const std::string& topic_id, const RunLog& log, std::size_t r_t,
                       std::span<const std::size_t> cutoffs = kDefaultCutoffs);

struct MetricsSummary {
    std::size_t topics = 0;
    std::map<std::size_t, double> p_at;
    std::map<std::size_t, double> r_at;
    double recall_at_4r_1000 = 0.0;
};

/// Arithmetic mean of every metric across reports. Cutoffs missing from any
/// report are left out. Throws on an empty input.
MetricsSummary aggregate(std::span<const MetricsReport> reports);

nlohmann::ordered_json to_json(const MetricsReport& report, bool with_gain_curve = true);
MetricsReport report_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const MetricsSummary& summary);

/// `{"reports": [...], "summary": {...}}`
nlohmann::ordered_json summary_document(std::span<const MetricsReport> reports);

/// Per-topic reports from a summary document, a single report object, or a
/// bare array of reports.
std::vector<MetricsReport> load_reports(const std::filesystem::path& path);

void write_json(const nlohmann::ordered_json& doc, const std::filesystem::path& path);
/// `iteration,recall` with a header line.
void write_gain_csv(const std::vector<GainPoint>& curve, const std::filesystem::path& path);

/// Per-topic percentages with a header row `topic<TAB>name<TAB>name...`.
/// Values of exactly 1.00 in a percent column are read as 100.00.
struct PercentTable {
    std::vector<std::string> columns;
    std::vector<std::string> topics;
    /// values[c][row] as fractions in [0, 1]
    std::vector<std::vector<double>> values;
};

PercentTable load_percent_table(const std::filesystem::path& path);

/// One report per topic carrying column `column` as recall_at_4r_1000.
std::vector<MetricsReport> reports_from_table(const PercentTable& table, std::size_t column);

}  // namespace calrecall
