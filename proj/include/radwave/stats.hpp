#pragma once

#include "radwave/errors.hpp"
#include "radwave/summation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace radwave {

/// A Monte Carlo estimate with its standard error and effective sample size.
struct EstimateWithCI {
    double mean = 0.0;
    double std_error = 0.0;
    double n_effective = 0.0;
};

/// Plain sample mean with standard error sd / sqrt(n).
inline EstimateWithCI sample_mean(std::span<const double> x)
{
    require(!x.empty(), "sample_mean: no samples");
    const double n = static_cast<double>(x.size());
    const double mean = pairwise_sum(x) / n;
    std::vector<double> sq(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        sq[i] = (x[i] - mean) * (x[i] - mean);
    const double var = x.size() > 1 ? pairwise_sum(sq) / (n - 1.0) : 0.0;
    return {mean, std::sqrt(var / n), n};
}

/// Self-normalised importance estimate  sum w F / sum w  with the usual
/// delta-method standard error  sqrt(sum w^2 (F - mean)^2) / sum w.
inline EstimateWithCI self_normalized_mean(std::span<const double> w, std::span<const double> f)
{
    require(!w.empty() && w.size() == f.size(), "self_normalized_mean: weights and values must match");
    std::vector<double> wf(w.size()), w2(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        wf[i] = w[i] * f[i];
        w2[i] = w[i] * w[i];
    }
    const double sw = pairwise_sum(w);
    const double mean = pairwise_sum(wf) / sw;
    std::vector<double> dev(w.size());
    for (std::size_t i = 0; i < w.size(); ++i)
        dev[i] = w2[i] * (f[i] - mean) * (f[i] - mean);
    const double se = std::sqrt(pairwise_sum(dev)) / sw;
    return {mean, se, sw * sw / pairwise_sum(w2)};
}

/// z = mean / std_error, with 0/0 read as 0 (an exactly vanishing shift).
inline double z_score(double mean, double std_error)
{
    if (std_error > 0.0)
        return mean / std_error;
    if (mean == 0.0)
        return 0.0;
    return mean > 0 ? HUGE_VAL : -HUGE_VAL;
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov

/// Complementary Kolmogorov distribution Q(lambda) = P(K > lambda).
inline double kolmogorov_q(double lambda)
{
    if (lambda < 0.2)
        return 1.0;
    double sum = 0.0, sign = 1.0;
    for (int j = 1; j <= 200; ++j) {
        const double term = sign * std::exp(-2.0 * j * j * lambda * lambda);
        sum += term;
        if (std::abs(term) <= 1e-12 * std::abs(sum) || std::abs(term) <= 1e-300)
            break;
        sign = -sign;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

/// One-sample KS test of x against N(0, sd^2).
inline KsResult ks_test_normal(std::vector<double> x, double sd)
{
    require(!x.empty() && sd > 0.0, "ks_test_normal: need samples and sd > 0");
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double F = 0.5 * std::erfc(-x[i] / (sd * std::numbers::sqrt2));
        d = std::max({d, (i + 1) / n - F, F - i / n});
    }
    const double sn = std::sqrt(n);
    return {d, kolmogorov_q((sn + 0.12 + 0.11 / sn) * d)};
}

// ---------------------------------------------------------------------------
// Least squares line

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};

inline LineFit fit_line(std::span<const double> x, std::span<const double> y)
{
    require(x.size() == y.size() && x.size() >= 2, "fit_line: need at least two points");
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    require(sxx > 0.0, "fit_line: abscissae are all equal");
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return f;
}

} // namespace radwave
