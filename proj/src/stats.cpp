#include "calrecall/stats.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include <boost/math/special_functions/beta.hpp>

namespace calrecall {

double student_t_two_tailed(double t, double df)
{
    if (std::isinf(t)) {
        return 0.0;
    }
    // P(|T| >= |t|) = I_{df / (df + t^2)}(df / 2, 1 / 2)
    const double x = df / (df + t * t);
    return std::clamp(boost::math::ibeta(df / 2.0, 0.5, x), 0.0, 1.0);
}

PairedTestResult paired_t_test(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) {
        throw std::invalid_argument("paired_t_test: samples have different lengths");
    }
    if (a.size() < 2) {
        throw std::invalid_argument("paired_t_test: need at least two pairs");
    }
    const std::size_t n = a.size();
    std::vector<double> d(n);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        d[i] = a[i] - b[i];
        sum += d[i];
    }
    const double mean = sum / static_cast<double>(n);
    bool constant = true;
    double ss = 0.0;
    for (double x : d) {
        constant = constant && x == d.front();
        ss += (x - mean) * (x - mean);
    }
    if (constant || ss == 0.0) {
        throw ZeroVarianceError(mean);
    }
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    PairedTestResult result;
    result.mean_difference = mean;
    result.degrees_of_freedom = n - 1;
    result.t_statistic = mean / (sd / std::sqrt(static_cast<double>(n)));
    result.p_value = student_t_two_tailed(result.t_statistic, static_cast<double>(n - 1));
    return result;
}

nlohmann::ordered_json compare_reports(std::span<const MetricsReport> a, std::span<const MetricsReport> b,
                                       double alpha)
{
    std::map<std::string, const MetricsReport*> right;
    for (const auto& r : b) {
        right[r.topic_id] = &r;
    }
    std::vector<std::pair<const MetricsReport*, const MetricsReport*>> pairs;
    for (const auto& l : a) {
        auto it = right.find(l.topic_id);
        if (it != right.end()) {
            pairs.emplace_back(&l, it->second);
        }
    }
    if (pairs.empty()) {
        throw std::invalid_argument("compare: the two reports share no topics");
    }

    // metric name -> (a values, b values), only for metrics on every pair
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> series;
    auto collect = [&](const std::string& name, auto getter) {
        std::vector<double> xs;
        std::vector<double> ys;
        for (const auto& [l, r] : pairs) {
            auto x = getter(*l);
            auto y = getter(*r);
            if (!x || !y) {
                return;
            }
            xs.push_back(*x);
            ys.push_back(*y);
        }
        series[name] = {std::move(xs), std::move(ys)};
    };
    collect("recall_at_4r_1000", [](const MetricsReport& r) { return std::optional<double>(r.recall_at_4r_1000); });
    for (const auto& [k, _] : pairs.front().first->p_at) {
        collect("p_at_" + std::to_string(k), [k = k](const MetricsReport& r) {
            auto it = r.p_at.find(k);
            return it == r.p_at.end() ? std::nullopt : std::optional<double>(it->second);
        });
    }
    for (const auto& [k, _] : pairs.front().first->r_at) {
        collect("r_at_" + std::to_string(k), [k = k](const MetricsReport& r) {
            auto it = r.r_at.find(k);
            return it == r.r_at.end() ? std::nullopt : std::optional<double>(it->second);
        });
    }

    nlohmann::ordered_json out;
    out["topics"] = pairs.size();
    out["alpha"] = alpha;
    nlohmann::ordered_json metrics = nlohmann::ordered_json::object();
    for (const auto& [name, xy] : series) {
        nlohmann::ordered_json m;
        try {
            auto res = paired_t_test(xy.first, xy.second);
            m["t_statistic"] = res.t_statistic;
            m["degrees_of_freedom"] = res.degrees_of_freedom;
            m["p_value"] = res.p_value;
            m["mean_difference"] = res.mean_difference;
            m["significant"] = res.p_value < alpha;
        } catch (const ZeroVarianceError& e) {
            m["zero_variance"] = true;
            m["mean_difference"] = e.mean_difference();
            m["degrees_of_freedom"] = xy.first.size() - 1;
        } catch (const std::invalid_argument& e) {
            m["error"] = e.what();
        }
        metrics[name] = std::move(m);
    }
    out["metrics"] = std::move(metrics);
    return out;
}

}  // namespace calrecall
