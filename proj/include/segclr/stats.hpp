// stats.hpp - special functions and the paired test used for reporting.

#pragma once

#include <span>
#include <string>

namespace segclr {

// Regularized incomplete gamma Q(a, x) = Gamma(a,x)/Gamma(a).
double gamma_q(double a, double x);

// Regularized incomplete beta I_x(a, b).
double beta_inc(double a, double b, double x);

double normal_cdf(double x);

// Survival function of the chi-square distribution (upper tail).
double chi_square_p_value(double statistic, int dof);

// Two-sided p-value for Student's t with dof degrees of freedom.
double student_t_two_sided_p(double t, int dof);

struct TTestResult {
    double p_value = 1.0;
    std::string tier;  // "****", "***", "**", "*", or "n.s."
    double t_statistic = 0.0;
    double mean_difference = 0.0;
};

std::string significance_tier(double p);

// Two-sided paired t-test, a vs b. Degenerate zero-variance differences map
// to p=0 (nonzero mean) or p=1 (all-zero).
TTestResult paired_ttest(std::span<const double> a, std::span<const double> b);

}  // namespace segclr
