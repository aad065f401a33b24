#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "calrecall/eval.hpp"

namespace calrecall {

struct PairedTestResult {
    double t_statistic = 0.0;
    std::size_t degrees_of_freedom = 0;
    /// two-tailed
    double p_value = 1.0;
    double mean_difference = 0.0;
};

/// Every difference a_i - b_i is the same value, so t is undefined.
class ZeroVarianceError : public std::domain_error {
  public:
    explicit ZeroVarianceError(double mean_difference)
        : std::domain_error("paired differences have zero variance"), mean_difference_(mean_difference)
    {}

    double mean_difference() const { return mean_difference_; }

  private:
    double mean_difference_;
};

/// Student's paired t-test on d_i = a_i - b_i with n - 1 degrees of freedom.
/// Throws std::invalid_argument on length mismatch or fewer than two pairs.
PairedTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

/// Two-tailed P(|T| >= |t|) for Student's t with `df` degrees of freedom.
double student_t_two_tailed(double t, double df);

/// Paired tests of every shared metric over the topics both sides report.
/// Throws std::invalid_argument when the topic sets do not intersect.
nlohmann::ordered_json compare_reports(std::span<const MetricsReport> a, std::span<const MetricsReport> b,
                                       double alpha = 0.05);

}  // namespace calrecall
