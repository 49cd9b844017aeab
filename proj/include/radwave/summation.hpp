#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace radwave {

/// Pairwise (cascade) summation. The reduction tree depends only on the
/// length, so a fixed ordering of terms gives a machine-deterministic result.
inline double pairwise_sum(std::span<const double> x)
{
    constexpr std::size_t leaf = 32;
    if (x.size() <= leaf) {
        double s = 0.0;
        for (double v : x)
            s += v;
        return s;
    }
    const std::size_t half = x.size() / 2;
    return pairwise_sum(x.first(half)) + pairwise_sum(x.subspan(half));
}

inline double pairwise_sum(const std::vector<double>& x)
{
    return pairwise_sum(std::span<const double>(x));
}

/// Neumaier-compensated running sum, for long sequential accumulations.
class CompensatedSum {
public:
    CompensatedSum& operator+=(double v)
    {
        const double t = sum_ + v;
        if (std::abs(sum_) >= std::abs(v))
            comp_ += (sum_ - t) + v;
        else
            comp_ += (v - t) + sum_;
        sum_ = t;
        return *this;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

} // namespace radwave
