#pragma once

// Test-side statistics oracles, independent of the library under test.

#include <cmath>
#include <stdexcept>
#include <vector>

namespace test_stats {

inline double gammln(double x) {
    static const double cof[6] = {76.18009172947146,  -86.50532032941677, 24.01409824083091,
                                  -1.231739572450155, 0.1208650973866179e-2,
                                  -0.5395239384953e-5};
    double y = x, tmp = x + 5.5;
    tmp -= (x + 0.5) * std::log(tmp);
    double ser = 1.000000000190015;
    for (double c : cof) ser += c / ++y;
    return -tmp + std::log(2.5066282746310005 * ser / x);
}

// Regularized upper incomplete gamma Q(a, x).
inline double gammq(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw std::runtime_error("gammq domain");
    if (x < a + 1.0) {
        // series for P(a,x), return 1 - P
        double ap = a, sum = 1.0 / a, del = sum;
        for (int n = 0; n < 500; ++n) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::abs(del) < std::abs(sum) * 1e-14) break;
        }
        return 1.0 - sum * std::exp(-x + a * std::log(x) - gammln(a));
    }
    // continued fraction for Q
    double b = x + 1.0 - a, c = 1e308, d = 1.0 / b, h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < 1e-300) d = 1e-300;
        c = b + an / c;
        if (std::abs(c) < 1e-300) c = 1e-300;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-14) break;
    }
    return std::exp(-x + a * std::log(x) - gammln(a)) * h;
}

// p-value of a chi-square statistic with the given degrees of freedom.
inline double chi2_pvalue(double chi2, int dof) {
    return gammq(dof / 2.0, chi2 / 2.0);
}

// Goodness-of-fit p-value for observed counts against expected probabilities.
// Categories with zero expectation must have zero observations.
inline double chi2_gof_pvalue(const std::vector<long>& observed,
                              const std::vector<double>& probs, long n_draws) {
    double chi2 = 0.0;
    int dof = -1;
    for (size_t i = 0; i < observed.size(); ++i) {
        const double expected = probs[i] * static_cast<double>(n_draws);
        if (expected == 0.0) {
            if (observed[i] != 0) return 0.0;
            continue;
        }
        const double diff = static_cast<double>(observed[i]) - expected;
        chi2 += diff * diff / expected;
        dof += 1;
    }
    if (dof < 1) return 1.0;
    return chi2_pvalue(chi2, dof);
}

}  // namespace test_stats
