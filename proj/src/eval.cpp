#include "calrecall/eval.hpp"

#include <algorithm>
#include <stdexcept>

#include "calrecall/error.hpp"
#include "calrecall/text_io.hpp"

namespace calrecall {

namespace {

std::size_t relevant_in_prefix(const RunLog& log, std::size_t n)
{
    const std::size_t end = std::min(n, log.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < end; ++i) {
        hits += log[i].judgment == Judgment::relevant ? 1 : 0;
    }
    return hits;
}

nlohmann::ordered_json cutoff_map(const std::map<std::size_t, double>& values)
{
    nlohmann::ordered_json out = nlohmann::ordered_json::object();
    for (const auto& [k, v] : values) {
        out[std::to_string(k)] = v;
    }
    return out;
}

std::map<std::size_t, double> cutoff_map_from(const nlohmann::json& j)
{
    std::map<std::size_t, double> out;
    if (j.is_null()) {
        return out;
    }
    for (const auto& [key, value] : j.items()) {
        auto k = parse_int(key);
        if (!k || *k < 1) {
            throw std::invalid_argument("bad cutoff key '" + key + "'");
        }
        out[static_cast<std::size_t>(*k)] = value.get<double>();
    }
    return out;
}

}  // namespace

double precision_at(const RunLog& log, std::size_t n)
{
    if (n == 0) {
        throw std::invalid_argument("precision_at: n must be >= 1");
    }
    return static_cast<double>(relevant_in_prefix(log, n)) / static_cast<double>(n);
}

double recall_at(const RunLog& log, std::size_t n, std::size_t r_t)
{
    if (r_t == 0) {
        return 1.0;
    }
    return static_cast<double>(relevant_in_prefix(log, n)) / static_cast<double>(r_t);
}

double recall_at_4r_1000(const RunLog& log, std::size_t r_t)
{
    return recall_at(log, budget_4r_1000(r_t), r_t);
}

std::vector<GainPoint> gain_curve(const RunLog& log, std::size_t r_t)
{
    std::vector<GainPoint> curve;
    curve.reserve(log.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < log.size(); ++i) {
        hits += log[i].judgment == Judgment::relevant ? 1 : 0;
        double recall = r_t == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(r_t);
        curve.push_back({i + 1, recall});
    }
    return curve;
}

MetricsReport evaluate(const std::string& topic_id, const RunLog& log, std::size_t r_t,
                       std::span<const std::size_t> cutoffs)
{
    MetricsReport report;
    report.topic_id = topic_id;
    report.r_t = r_t;
    report.shown = log.size();
    report.relevant_found = relevant_in_prefix(log, log.size());
    for (std::size_t k : cutoffs) {
        report.p_at[k] = precision_at(log, k);
        report.r_at[k] = recall_at(log, k, r_t);
    }
    report.recall_at_4r_1000 = recall_at_4r_1000(log, r_t);
    report.vacuous_recall = r_t == 0;
    report.gain_curve = gain_curve(log, r_t);
    return report;
}

MetricsSummary aggregate(std::span<const MetricsReport> reports)
{
    if (reports.empty()) {
        throw std::invalid_argument("aggregate: no reports");
    }
    MetricsSummary summary;
    summary.topics = reports.size();
    const double n = static_cast<double>(reports.size());

    auto mean_over = [&](auto member) {
        std::map<std::size_t, double> sums;
        for (const auto& [k, _] : reports.front().*member) {
            bool everywhere = std::all_of(reports.begin(), reports.end(),
                                          [&, k = k](const MetricsReport& r) { return (r.*member).count(k) > 0; });
            if (!everywhere) {
                continue;
            }
            double sum = 0.0;
            for (const auto& r : reports) {
                sum += (r.*member).at(k);
            }
            sums[k] = sum / n;
        }
        return sums;
    };
    summary.p_at = mean_over(&MetricsReport::p_at);
    summary.r_at = mean_over(&MetricsReport::r_at);
    double sum = 0.0;
    for (const auto& r : reports) {
        sum += r.recall_at_4r_1000;
    }
    summary.recall_at_4r_1000 = sum / n;
    return summary;
}

nlohmann::ordered_json to_json(const MetricsReport& report, bool with_gain_curve)
{
    nlohmann::ordered_json j;
    j["topic_id"] = report.topic_id;
    j["r_t"] = report.r_t;
    j["shown"] = report.shown;
    j["relevant_found"] = report.relevant_found;
    j["p_at"] = cutoff_map(report.p_at);
    j["r_at"] = cutoff_map(report.r_at);
    j["recall_at_4r_1000"] = report.recall_at_4r_1000;
    j["vacuous_recall"] = report.vacuous_recall;
    if (with_gain_curve) {
        auto curve = nlohmann::ordered_json::array();
        for (const auto& p : report.gain_curve) {
            curve.push_back({p.shown, p.recall});
        }
        j["gain_curve"] = std::move(curve);
    }
    return j;
}

MetricsReport report_from_json(const nlohmann::json& j)
{
    MetricsReport r;
    r.topic_id = j.at("topic_id").get<std::string>();
    r.r_t = j.value("r_t", std::size_t{0});
    r.shown = j.value("shown", std::size_t{0});
    r.relevant_found = j.value("relevant_found", std::size_t{0});
    r.p_at = cutoff_map_from(j.value("p_at", nlohmann::json()));
    r.r_at = cutoff_map_from(j.value("r_at", nlohmann::json()));
    r.recall_at_4r_1000 = j.at("recall_at_4r_1000").get<double>();
    r.vacuous_recall = j.value("vacuous_recall", false);
    if (j.contains("gain_curve")) {
        for (const auto& p : j["gain_curve"]) {
            r.gain_curve.push_back({p.at(0).get<std::size_t>(), p.at(1).get<double>()});
        }
    }
    return r;
}

nlohmann::ordered_json to_json(const MetricsSummary& summary)
{
    nlohmann::ordered_json j;
    j["topics"] = summary.topics;
    j["p_at"] = cutoff_map(summary.p_at);
    j["r_at"] = cutoff_map(summary.r_at);
    j["recall_at_4r_1000"] = summary.recall_at_4r_1000;
    return j;
}

nlohmann::ordered_json summary_document(std::span<const MetricsReport> reports)
{
    nlohmann::ordered_json doc;
    auto list = nlohmann::ordered_json::array();
    for (const auto& r : reports) {
        list.push_back(to_json(r, false));
    }
    doc["reports"] = std::move(list);
    doc["summary"] = to_json(aggregate(reports));
    return doc;
}

std::vector<MetricsReport> load_reports(const std::filesystem::path& path)
{
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string(), 0, std::string("invalid JSON: ") + e.what());
    }
    std::vector<MetricsReport> reports;
    try {
        const nlohmann::json* list = &doc;
        if (doc.is_object() && doc.contains("reports")) {
            list = &doc["reports"];
        }
        if (list->is_array()) {
            for (const auto& r : *list) {
                reports.push_back(report_from_json(r));
            }
        } else {
            reports.push_back(report_from_json(*list));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string(), 0, std::string("not a metrics report: ") + e.what());
    }
    return reports;
}

void write_json(const nlohmann::ordered_json& doc, const std::filesystem::path& path)
{
    auto out = open_for_write(path);
    out << doc.dump(2) << '\n';
}

void write_gain_csv(const std::vector<GainPoint>& curve, const std::filesystem::path& path)
{
    auto out = open_for_write(path);
    out << "iteration,recall\n";
    for (const auto& p : curve) {
        out << p.shown << ',' << format_double(p.recall) << '\n';
    }
}

PercentTable load_percent_table(const std::filesystem::path& path)
{
    PercentTable table;
    const std::string source = path.string();
    for_each_line(path, [&](std::string_view line, std::size_t number) {
        if (line.empty() || line.front() == '#') {
            return;
        }
        auto fields = split(line, '\t');
        if (table.columns.empty()) {
            if (fields.size() < 2) {
                throw ParseError(source, number, "header needs a topic column and at least one value column");
            }
            for (std::size_t c = 1; c < fields.size(); ++c) {
                table.columns.emplace_back(fields[c]);
            }
            table.values.resize(table.columns.size());
            return;
        }
        if (fields.size() != table.columns.size() + 1) {
            throw ParseError(source, number, "expected " + std::to_string(table.columns.size() + 1) + " fields");
        }
        table.topics.emplace_back(fields[0]);
        for (std::size_t c = 1; c < fields.size(); ++c) {
            auto v = parse_double(fields[c]);
            if (!v || *v < 0.0 || *v > 100.0) {
                throw ParseError(source, number, "bad percentage '" + std::string(fields[c]) + "'");
            }
            // "1.00" in a percent column stands for 100%
            double percent = *v == 1.0 ? 100.0 : *v;
            table.values[c - 1].push_back(percent / 100.0);
        }
    });
    if (table.columns.empty()) {
        throw ParseError(source, 0, "empty table");
    }
    return table;
}

std::vector<MetricsReport> reports_from_table(const PercentTable& table, std::size_t column)
{
    if (column >= table.columns.size()) {
        throw std::out_of_range("no column " + std::to_string(column));
    }
    std::vector<MetricsReport> reports;
    for (std::size_t row = 0; row < table.topics.size(); ++row) {
        MetricsReport r;
        r.topic_id = table.topics[row];
        r.recall_at_4r_1000 = table.values[column][row];
        reports.push_back(std::move(r));
    }
    return reports;
}

}  // namespace calrecall
