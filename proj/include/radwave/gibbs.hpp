#pragma once

// Gaussian measure mu (law of sum_n g_n/(n pi) e_n), the Gibbs densities
// f_N and f, and self-normalised estimation against rho_N = f_N dmu.

#include "radwave/errors.hpp"
#include "radwave/parallel.hpp"
#include "radwave/philox.hpp"
#include "radwave/spectral.hpp"
#include "radwave/stats.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

namespace radwave {

/// Coordinates of one draw from mu restricted to n_max modes.
///
/// Mode n of stream s under seed k is a pure function of (k, s, n), so the
/// first m modes of an n_max-mode draw equal the m-mode draw with the same
/// seed and stream.
struct GaussianSampler {
    int n_max = 32;
    std::uint64_t rng_seed = 0;
    std::uint64_t stream_id = 0;
};

/// c_n = a_n + i b_n with a_n, b_n independent N(0, 1/(n pi)^2).
inline CoeffVector sample_mu(const GaussianSampler& s)
{
    require(s.n_max >= 1, "sample_mu: n_max must be >= 1");
    const auto key = Philox4x32::key_from_seed(s.rng_seed);
    CoeffVector u(s.n_max);
    for (int n = 1; n <= s.n_max; ++n) {
        const Philox4x32::Counter ctr{static_cast<std::uint32_t>(s.stream_id),
                                      static_cast<std::uint32_t>(s.stream_id >> 32),
                                      static_cast<std::uint32_t>(n), 0u};
        const auto [a, b] = gaussian_pair(Philox4x32::block(ctr, key));
        const double sd = 1.0 / (n * pi);
        u.at_mode(n) = Complex(a * sd, b * sd);
    }
    return u;
}

/// Draws streams first_stream .. first_stream + count - 1.
inline std::vector<CoeffVector> sample_mu_batch(int n_max, std::uint64_t seed, std::size_t count,
                                                std::uint64_t first_stream = 0)
{
    std::vector<CoeffVector> out(count, CoeffVector(n_max));
    parallel_for_chunks(count, 1024, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i)
            out[i] = sample_mu({n_max, seed, first_stream + i});
    });
    return out;
}

namespace detail {

/// exp(-x/4), floored at the smallest subnormal so a weight never reaches 0.
inline double gibbs_factor(double quartic_integral)
{
    return std::max(std::exp(-0.25 * quartic_integral), std::numeric_limits<double>::denorm_min());
}

} // namespace detail

/// f_N(u) = exp(-1/4 int |S_N Re u|^4 r^2 dr)
inline double density_weight_fN(const CoeffVector& u, int N, const RadialQuadrature& q)
{
    return detail::gibbs_factor(quartic_SN(u, N, q));
}

/// f(u) = exp(-1/4 int |Re u|^4 r^2 dr)
inline double density_weight_f(const CoeffVector& u, const RadialQuadrature& q)
{
    return detail::gibbs_factor(quartic(u, q));
}

/// mu-samples with attached Gibbs weights f_N, representing rho_N.
struct WeightedEnsemble {
    struct Metadata {
        std::uint64_t seed = 0;
        int n_max = 0;
        int quadrature_nodes = 0;
    };

    std::vector<CoeffVector> samples;
    std::vector<double> weights;
    int N_cutoff = 1;
    Metadata metadata;

    std::size_t size() const { return samples.size(); }

    void validate() const
    {
        require(samples.size() == weights.size(), "WeightedEnsemble: samples and weights differ in length");
        require(N_cutoff >= 1, "WeightedEnsemble: N_cutoff must be >= 1");
        for (double w : weights)
            require(w > 0.0 && w <= 1.0, "WeightedEnsemble: weights must lie in (0, 1]");
    }
};

inline WeightedEnsemble make_ensemble(int n_max, int N, std::size_t count, std::uint64_t seed,
                                      const RadialQuadrature& q)
{
    require(N >= 1, "make_ensemble: N must be >= 1");
    WeightedEnsemble e;
    e.samples = sample_mu_batch(n_max, seed, count);
    e.weights.resize(count);
    parallel_for_chunks(count, 256, [&](std::size_t b, std::size_t end) {
        for (std::size_t i = b; i < end; ++i)
            e.weights[i] = density_weight_fN(e.samples[i], N, q);
    });
    e.N_cutoff = N;
    e.metadata = {seed, n_max, q.size()};
    return e;
}

inline constexpr double min_effective_samples = 10.0;

/// Self-normalised estimate of E_{rho_N}[F] = E_mu[F f_N] / E_mu[f_N].
template <class Observable>
EstimateWithCI weighted_expectation(const WeightedEnsemble& e, Observable&& F)
{
    require(e.size() > 0, "weighted_expectation: empty ensemble");
    require(e.samples.size() == e.weights.size(), "weighted_expectation: samples and weights differ in length");
    std::vector<double> values(e.size());
    for (std::size_t i = 0; i < e.size(); ++i)
        values[i] = F(e.samples[i]);
    const auto est = self_normalized_mean(e.weights, values);
    if (est.n_effective < min_effective_samples)
        throw DegenerateEnsemble("weighted_expectation: effective sample size " +
                                 std::to_string(est.n_effective) + " below " +
                                 std::to_string(min_effective_samples));
    return est;
}

/// Monte Carlo estimate of E_mu |f_N - f|, streams s.stream_id onwards.
inline EstimateWithCI l1_distance_fN_f(int n_max, int N, std::size_t sample_count, const GaussianSampler& s,
                                       const RadialQuadrature& q)
{
    require(sample_count > 0, "l1_distance_fN_f: sample_count must be positive");
    require(N >= 1, "l1_distance_fN_f: N must be >= 1");
    if (static_cast<double>(sample_count) < min_effective_samples)
        throw DegenerateEnsemble("l1_distance_fN_f: fewer than 10 samples");
    std::vector<double> gap(sample_count);
    parallel_for_chunks(sample_count, 256, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const CoeffVector u = sample_mu({n_max, s.rng_seed, s.stream_id + i});
            gap[i] = std::abs(density_weight_fN(u, N, q) - density_weight_f(u, q));
        }
    });
    return sample_mean(gap);
}

} // namespace radwave
