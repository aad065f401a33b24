#include <doctest.h>

#include <cmath>

#include "calrecall/eval.hpp"
#include "calrecall/stats.hpp"
#include "support.hpp"

using namespace calrecall;

TEST_CASE("paired t-test on a hand-checked case")
{
    std::vector<double> a{1.0, 2.0, 3.0};
    std::vector<double> b{0.0, 0.0, 0.0};
    auto r = paired_t_test(a, b);
    // mean 2, sd 1, n 3: t = 2 / (1 / sqrt 3)
    CHECK(r.t_statistic == doctest::Approx(2.0 * std::sqrt(3.0)));
    CHECK(r.degrees_of_freedom == 2);
    CHECK(r.mean_difference == doctest::Approx(2.0));
    CHECK(r.p_value == doctest::Approx(0.0741799002).epsilon(1e-9));
}

TEST_CASE("p-value reference points")
{
    // t = 2.228 is the 97.5% quantile at 10 degrees of freedom
    CHECK(student_t_two_tailed(2.228138851986, 10) == doctest::Approx(0.05).epsilon(1e-9));
    CHECK(student_t_two_tailed(0.0, 5) == doctest::Approx(1.0));
    CHECK(student_t_two_tailed(-1.5, 7) == student_t_two_tailed(1.5, 7));
    // one degree of freedom is Cauchy: P(|T| > 1) = 1/2
    CHECK(student_t_two_tailed(1.0, 1) == doctest::Approx(0.5));
}

TEST_CASE("t-test edge cases")
{
    std::vector<double> a{1.0, 2.0};
    std::vector<double> b{1.0};
    CHECK_THROWS_AS(paired_t_test(a, b), std::invalid_argument);
    CHECK_THROWS_AS(paired_t_test(b, b), std::invalid_argument);
    std::vector<double> c{3.0, 4.0};
    try {
        paired_t_test(c, a);
        FAIL("expected zero variance");
    } catch (const ZeroVarianceError& e) {
        CHECK(e.mean_difference() == 2.0);
    }
}

TEST_CASE("compare matches topics by id and flags zero variance")
{
    auto r1 = evaluate("x", test_support::make_log({true, false}), 2);
    auto r2 = evaluate("y", test_support::make_log({false, true, true}), 3);
    auto r3 = evaluate("z", test_support::make_log({true}), 1);
    std::vector<MetricsReport> a{r1, r2, r3};
    std::vector<MetricsReport> reversed{r3, r2, r1};
    auto same = compare_reports(a, reversed);
    CHECK(same["topics"] == 3);
    CHECK(same["metrics"]["recall_at_4r_1000"]["zero_variance"] == true);

    std::vector<MetricsReport> other{evaluate("q", test_support::make_log({true}), 1)};
    CHECK_THROWS_AS(compare_reports(a, other), std::invalid_argument);
}
