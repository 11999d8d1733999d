#include "segclr/stats.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace segclr {

namespace {

double gamma_p_series(double a, double x) {
    double sum = 1.0 / a, term = sum;
    for (int n = 1; n < 500; ++n) {
        term *= x / (a + n);
        sum += term;
        if (std::abs(term) < std::abs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

double gamma_q_contfrac(double a, double x) {
    // modified Lentz continued fraction
    const double tiny = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
    for (int i = 1; i < 500; ++i) {
        const double an = -double(i) * (double(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

double betacf(double a, double b, double x) {
    const double tiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 500; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    return h;
}

}  // namespace

double gamma_q(double a, double x) {
    if (a <= 0 || x < 0) throw std::invalid_argument("gamma_q: a > 0 and x >= 0 required");
    if (x == 0) return 1.0;
    if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
    return gamma_q_contfrac(a, x);
}

double beta_inc(double a, double b, double x) {
    if (x < 0 || x > 1) throw std::invalid_argument("beta_inc: x must be in [0,1]");
    if (x == 0) return 0.0;
    if (x == 1) return 1.0;
    const double lbeta = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                         a * std::log(x) + b * std::log(1.0 - x);
    const double front = std::exp(lbeta);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / 1.4142135623730950488016887242097); }

double chi_square_p_value(double statistic, int dof) {
    if (dof < 1) throw std::invalid_argument("chi_square_p_value: dof must be >= 1");
    if (statistic < 0) throw std::invalid_argument("chi_square_p_value: statistic must be >= 0");
    return gamma_q(0.5 * dof, 0.5 * statistic);
}

double student_t_two_sided_p(double t, int dof) {
    if (dof < 1) throw std::invalid_argument("student_t_two_sided_p: dof must be >= 1");
    const double x = double(dof) / (double(dof) + t * t);
    return beta_inc(0.5 * dof, 0.5, x);
}

std::string significance_tier(double p) {
    if (p <= 0.0001) return "****";
    if (p <= 0.001) return "***";
    if (p <= 0.01) return "**";
    if (p <= 0.05) return "*";
    return "n.s.";
}

TTestResult paired_ttest(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("paired_ttest: samples must have equal length");
    const std::size_t n = a.size();
    if (n < 2) throw std::invalid_argument("paired_ttest: need at least 2 pairs");
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= double(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = (a[i] - b[i]) - mean;
        ss += d * d;
    }
    const double var = ss / double(n - 1);

    TTestResult r;
    r.mean_difference = mean;
    if (var == 0.0) {
        r.p_value = (mean == 0.0) ? 1.0 : 0.0;
        r.t_statistic = (mean == 0.0) ? 0.0 : std::numeric_limits<double>::infinity();
    } else {
        r.t_statistic = mean / std::sqrt(var / double(n));
        r.p_value = student_t_two_sided_p(r.t_statistic, int(n) - 1);
    }
    r.tier = significance_tier(r.p_value);
    return r;
}

}  // namespace segclr
