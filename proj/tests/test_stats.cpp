#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "segclr/stats.hpp"

using namespace segclr;

TEST_CASE("special function spot values") {
    // chi-square: Q(1 dof at x=3.841) ~ 0.05, Q(2 dof at 5.991) ~ 0.05
    CHECK(chi_square_p_value(3.841, 1) == doctest::Approx(0.05).epsilon(2e-3));
    CHECK(chi_square_p_value(5.991, 2) == doctest::Approx(0.05).epsilon(2e-3));
    CHECK(chi_square_p_value(0.0, 4) == doctest::Approx(1.0));

    // Student t: classic two-sided quantiles
    CHECK(student_t_two_sided_p(2.776, 4) == doctest::Approx(0.05).epsilon(2e-3));
    CHECK(student_t_two_sided_p(2.262, 9) == doctest::Approx(0.05).epsilon(2e-3));
    CHECK(student_t_two_sided_p(0.0, 7) == doctest::Approx(1.0));

    CHECK(normal_cdf(0.0) == doctest::Approx(0.5));
    CHECK(normal_cdf(1.959963985) == doctest::Approx(0.975).epsilon(1e-6));
}

TEST_CASE("significance tiers follow the quoted thresholds") {
    CHECK(significance_tier(0.00005) == "****");
    CHECK(significance_tier(0.0001) == "****");
    CHECK(significance_tier(0.0005) == "***");
    CHECK(significance_tier(0.005) == "**");
    CHECK(significance_tier(0.03) == "*");
    CHECK(significance_tier(0.05) == "*");
    CHECK(significance_tier(0.051) == "n.s.");
    CHECK(significance_tier(0.9) == "n.s.");
}

TEST_CASE("paired t-test degenerate conventions") {
    const std::vector<double> a = {1.0, 2.0, 3.0, 4.0};
    auto same = paired_ttest(a, a);
    CHECK(same.p_value == 1.0);
    CHECK(same.tier == "n.s.");

    std::vector<double> shifted = a;
    for (auto& v : shifted) v += 0.5;  // constant nonzero difference
    auto sure = paired_ttest(shifted, a);
    CHECK(sure.p_value == 0.0);
    CHECK(sure.tier == "****");

    CHECK_THROWS_AS(paired_ttest(std::vector<double>{1.0}, std::vector<double>{2.0}),
                    std::invalid_argument);
    CHECK_THROWS_AS(paired_ttest(a, std::vector<double>{1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("paired t-test matches an independent t-CDF evaluation") {
    // textbook 5-pair example
    const std::vector<double> before = {51.0, 48.5, 47.0, 52.5, 44.0};
    const std::vector<double> after = {49.6, 47.2, 46.8, 50.1, 44.2};
    const auto r = paired_ttest(before, after);

    // oracle: compute t by hand and integrate the t density numerically
    std::vector<double> d(5);
    double mean = 0;
    for (int i = 0; i < 5; ++i) {
        d[i] = before[i] - after[i];
        mean += d[i];
    }
    mean /= 5;
    double ss = 0;
    for (double x : d) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / 4.0);
    const double t = mean / (sd / std::sqrt(5.0));
    CHECK(r.t_statistic == doctest::Approx(t).epsilon(1e-12));

    // numeric tail integral of the t(4) density (Simpson on [|t|, 60])
    const double nu = 4.0;
    const auto pdf = [&](double x) {
        return std::tgamma((nu + 1) / 2) / (std::sqrt(nu * M_PI) * std::tgamma(nu / 2)) *
               std::pow(1 + x * x / nu, -(nu + 1) / 2);
    };
    const double lo = std::abs(t), hi = 60.0;
    const int n = 20000;
    double integral = pdf(lo) + pdf(hi);
    for (int i = 1; i < n; ++i) {
        const double x = lo + (hi - lo) * i / n;
        integral += (i % 2 ? 4.0 : 2.0) * pdf(x);
    }
    integral *= (hi - lo) / (3.0 * n);
    CHECK(r.p_value == doctest::Approx(2.0 * integral).epsilon(1e-6));
}
