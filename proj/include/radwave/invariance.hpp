#pragma once

// Statistical checks of invariance and convergence at a fixed truncation
// level, the arithmetic of the globalization time ladder, and a finite
// difference probe of phase-space volume.

#include "radwave/batch_flow.hpp"
#include "radwave/dynamics.hpp"
#include "radwave/errors.hpp"
#include "radwave/gibbs.hpp"
#include "radwave/spectral.hpp"
#include "radwave/stats.hpp"
#include "radwave/summation.hpp"

#include <Eigen/LU>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace radwave {

inline constexpr double z_threshold = 3.0;
inline constexpr double ks_threshold = 0.01;

// ---------------------------------------------------------------------------
// Observables

enum class ObservableKind { l2_sq, projected_l2_sq, quartic_SN, hsigma_sq, coeff_moment };

/// A test functional F(u). Parameters not used by `kind` are ignored.
struct ObservableSpec {
    std::string name;
    ObservableKind kind = ObservableKind::l2_sq;
    int M = 0;          // projected_l2_sq
    double sigma = 0.0; // hsigma_sq
    int n = 0;          // coeff_moment
    int order = 0;      // coeff_moment

    static ObservableSpec l2_sq() { return {"l2_sq", ObservableKind::l2_sq}; }
    static ObservableSpec projected_l2_sq(int M)
    {
        return {fmt::format("projected_l2_sq({})", M), ObservableKind::projected_l2_sq, M};
    }
    static ObservableSpec quartic_SN() { return {"quartic_SN", ObservableKind::quartic_SN}; }
    static ObservableSpec hsigma_sq(double sigma)
    {
        return {fmt::format("hsigma_sq({:g})", sigma), ObservableKind::hsigma_sq, 0, sigma};
    }
    static ObservableSpec coeff_moment(int n, int order)
    {
        return {fmt::format("coeff_moment({},{})", n, order), ObservableKind::coeff_moment, 0, 0.0, n, order};
    }

    void validate(int n_max) const
    {
        switch (kind) {
        case ObservableKind::projected_l2_sq:
            require(M >= 1 && M <= n_max, fmt::format("observable {}: need 1 <= M <= n_max = {}", name, n_max));
            break;
        case ObservableKind::hsigma_sq:
            require(std::isfinite(sigma), fmt::format("observable {}: sigma must be finite", name));
            break;
        case ObservableKind::coeff_moment:
            require(n >= 1 && n <= n_max, fmt::format("observable {}: need 1 <= n <= n_max = {}", name, n_max));
            require(order >= 1, fmt::format("observable {}: order must be >= 1", name));
            break;
        default:
            break;
        }
    }

    /// F(u). The quartic functional uses the cutoff S_N.
    double evaluate(const CoeffVector& u, int N, const RadialQuadrature& q) const
    {
        switch (kind) {
        case ObservableKind::l2_sq:
            return std::pow(sobolev_norm(u, 0.0), 2);
        case ObservableKind::projected_l2_sq:
            return std::pow(sobolev_norm(project_Pi_N(u, M), 0.0), 2);
        case ObservableKind::quartic_SN:
            return radwave::quartic_SN(u, N, q);
        case ObservableKind::hsigma_sq:
            return std::pow(sobolev_norm(u, sigma), 2);
        case ObservableKind::coeff_moment:
            return std::pow(std::abs(u.at_mode(n)), order);
        }
        return 0.0;
    }

    /// F on every column of a packed ensemble. `flow` supplies the cutoff
    /// quartic; its mode count must match the rows.
    Vector evaluate(const Matrix& re, const Matrix& im, const EnsembleFlow& flow) const
    {
        const Eigen::Index rows = re.rows();
        auto weighted_sq = [&](Eigen::Index count, auto&& weight) {
            Vector out = Vector::Zero(re.cols());
            for (Eigen::Index i = 0; i < count; ++i)
                out += weight(static_cast<int>(i) + 1) *
                       (re.row(i).array().square() + im.row(i).array().square()).matrix().transpose();
            return out;
        };
        switch (kind) {
        case ObservableKind::l2_sq:
            return weighted_sq(rows, [](int) { return 1.0; });
        case ObservableKind::projected_l2_sq:
            return weighted_sq(std::min<Eigen::Index>(M, rows), [](int) { return 1.0; });
        case ObservableKind::quartic_SN:
            return flow.quartic(re);
        case ObservableKind::hsigma_sq:
            return weighted_sq(rows, [s = sigma](int m) { return std::pow(m * pi, 2.0 * s); });
        case ObservableKind::coeff_moment: {
            const Eigen::Index i = n - 1;
            const Eigen::ArrayXd mod = (re.row(i).array().square() + im.row(i).array().square()).sqrt().transpose();
            return mod.pow(order).matrix();
        }
        }
        return Vector::Zero(re.cols());
    }
};

inline std::vector<ObservableSpec> default_rho_observables()
{
    return {ObservableSpec::l2_sq(), ObservableSpec::projected_l2_sq(4), ObservableSpec::quartic_SN()};
}

inline std::vector<ObservableSpec> default_linear_observables()
{
    return {ObservableSpec::l2_sq(), ObservableSpec::projected_l2_sq(4), ObservableSpec::hsigma_sq(0.4),
            ObservableSpec::coeff_moment(1, 2), ObservableSpec::quartic_SN()};
}

// ---------------------------------------------------------------------------
// Reports

struct ObservableResult {
    std::string name;
    double mean_before = 0.0;
    double mean_after = 0.0;
    double std_error = 0.0;
    double z_score = 0.0;
};

struct KsModeResult {
    int mode = 0;
    double p_real = 1.0;
    double p_imag = 1.0;
};

/// Integrator bias probe: weighted means after the flow with steps dt, dt/2
/// and dt/4. shift_h = |m(dt) - m(dt/2)|, shift_h2 = |m(dt/2) - m(dt/4)|.
struct BiasProbe {
    std::string name;
    double mean_dt = 0.0;
    double mean_dt2 = 0.0;
    double mean_dt4 = 0.0;
    double shift_h = 0.0;
    double shift_h2 = 0.0;
    double ratio = 0.0;
};

struct InvarianceReport {
    struct Metadata {
        std::string test;
        int N = 0;
        int n_max = 0;
        int quadrature_nodes = 0;
        double t = 0.0;
        double dt = 0.0;
        std::size_t sample_count = 0;
        std::uint64_t seed = 0;
        double n_effective = 0.0;
    };

    std::vector<ObservableResult> observables;
    /// true iff every |z| <= 3.
    bool pass = true;
    Metadata metadata;

    // Linear flow only.
    std::vector<KsModeResult> ks;
    bool ks_pass = true;
    double max_state_change = 0.0;

    // rho_N flow only (absent when an external flow was supplied).
    std::vector<BiasProbe> bias;
    bool bias_pass = true;

    double max_abs_z() const
    {
        double m = 0.0;
        for (const auto& o : observables)
            m = std::max(m, std::abs(o.z_score));
        return m;
    }
};

namespace detail {

inline void finish(InvarianceReport& r)
{
    r.pass = std::all_of(r.observables.begin(), r.observables.end(),
                         [](const ObservableResult& o) { return std::abs(o.z_score) <= z_threshold; });
}

inline void check_observables(const std::vector<ObservableSpec>& obs, int n_max)
{
    require(!obs.empty(), "at least one observable is required");
    require(obs.size() <= 5, "at most 5 observables per report");
    for (const auto& o : obs)
        o.validate(n_max);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Linear flow

inline constexpr int default_ks_modes[] = {1, 5, 17};

/// Unweighted means of each F over mu-samples u_i and over S(t) u_i. The
/// z-score uses the two-sample standard error. Also runs a KS test of
/// Re and Im of the pushed coefficients for modes 1, 5 and 17 (those <= n_max).
inline InvarianceReport test_linear_invariance(int n_max, double t, std::size_t sample_count, std::uint64_t seed,
                                               const std::vector<ObservableSpec>& observables = default_linear_observables(),
                                               int quadrature_nodes = 0)
{
    require(sample_count >= 1000, "test_linear_invariance: sample_count must be >= 1000");
    require(std::isfinite(t), "test_linear_invariance: t must be finite");
    detail::check_observables(observables, n_max);
    const auto q = quadrature_nodes > 0 ? RadialQuadrature::gauss_legendre(quadrature_nodes)
                                        : RadialQuadrature::for_modes(n_max);
    // No cutoff on the resolved modes: chi(n^2 / N^2) = 1 for n <= n_max.
    const int N = 2 * n_max;
    const EnsembleFlow flow(n_max, N, q);

    InvarianceReport r;
    r.metadata = {"linear", N, n_max, q.size(), t, 0.0, sample_count, seed, static_cast<double>(sample_count)};

    const auto samples = sample_mu_batch(n_max, seed, sample_count);
    Matrix re0, im0;
    pack_columns(samples, re0, im0);
    Matrix re1 = re0, im1 = im0;
    flow.rotate(re1, im1, t);

    r.max_state_change = ((re1 - re0).array().square() + (im1 - im0).array().square()).sqrt().maxCoeff();

    for (const auto& obs : observables) {
        const Vector before = obs.evaluate(re0, im0, flow);
        const Vector after = obs.evaluate(re1, im1, flow);
        const auto b = sample_mean(std::span<const double>(before.data(), before.size()));
        const auto a = sample_mean(std::span<const double>(after.data(), after.size()));
        ObservableResult o{obs.name, b.mean, a.mean, std::hypot(a.std_error, b.std_error), 0.0};
        o.z_score = before == after ? 0.0 : z_score(a.mean - b.mean, o.std_error);
        r.observables.push_back(o);
    }

    for (int n : default_ks_modes) {
        if (n > n_max)
            continue;
        std::vector<double> x(sample_count), y(sample_count);
        for (std::size_t i = 0; i < sample_count; ++i) {
            x[i] = re1(n - 1, static_cast<Eigen::Index>(i));
            y[i] = im1(n - 1, static_cast<Eigen::Index>(i));
        }
        const double sd = 1.0 / (n * pi);
        KsModeResult k{n, ks_test_normal(std::move(x), sd).p_value, ks_test_normal(std::move(y), sd).p_value};
        r.ks_pass = r.ks_pass && k.p_real > ks_threshold && k.p_imag > ks_threshold;
        r.ks.push_back(k);
    }
    detail::finish(r);
    return r;
}

// ---------------------------------------------------------------------------
// Truncated nonlinear flow

struct RhoInvarianceOptions {
    int n_max = 32;
    /// 0 selects the default rule for n_max.
    int quadrature_nodes = 0;
    /// Columns evolved together.
    std::size_t block = 512;
    /// Repeat at dt/2 and dt/4 to measure the integrator bias.
    bool bias_probe = true;
    /// Replaces the splitting integrator: maps u0 to the state at time t.
    std::function<CoeffVector(const CoeffVector&)> flow;
};

/// Pushforward test of rho_N-invariance. Weights f_N(u_i) are computed at
/// time 0 and reused at time t; the z-score is that of the weighted mean of
/// F(psi_N(t) u_i) - F(u_i).
inline InvarianceReport test_rho_invariance(int N, double t, double dt, std::size_t sample_count, std::uint64_t seed,
                                            const std::vector<ObservableSpec>& observables = default_rho_observables(),
                                            const RhoInvarianceOptions& opts = {})
{
    const int n_max = opts.n_max;
    require(N >= 1, "test_rho_invariance: N must be >= 1");
    // N = n_max + 1 is the smallest level at which every resolved mode interacts.
    require(N <= n_max + 1, "test_rho_invariance: N must be <= n_max + 1");
    require(sample_count >= 1, "test_rho_invariance: sample_count must be positive");
    require(dt > 0.0 && std::isfinite(dt), "test_rho_invariance: dt must be > 0");
    require(std::isfinite(t), "test_rho_invariance: t must be finite");
    detail::check_observables(observables, n_max);

    const auto q = opts.quadrature_nodes > 0 ? RadialQuadrature::gauss_legendre(opts.quadrature_nodes)
                                             : RadialQuadrature::for_modes(n_max);
    const EnsembleFlow flow(n_max, N, q);
    const auto ens = make_ensemble(n_max, N, sample_count, seed, q);

    InvarianceReport r;
    r.metadata = {"rho", N, n_max, q.size(), t, dt, sample_count, seed, 0.0};
    const std::size_t S = sample_count;
    const std::size_t n_obs = observables.size();

    const bool probe = opts.bias_probe && !opts.flow && t != 0.0;
    const int n_runs = probe ? 3 : 1;
    // values[k][run][i]: observable k after run `run`; base[k][i] at time 0
    std::vector<std::vector<double>> base(n_obs, std::vector<double>(S));
    std::vector<std::vector<std::vector<double>>> after(
        n_obs, std::vector<std::vector<double>>(static_cast<std::size_t>(n_runs), std::vector<double>(S)));

    auto store = [&](std::vector<double>& dst, std::size_t offset, const Vector& v) {
        std::copy(v.data(), v.data() + v.size(), dst.begin() + static_cast<std::ptrdiff_t>(offset));
    };

    const double span = std::abs(t);
    const double dir = t < 0 ? -1.0 : 1.0;
    for (std::size_t b = 0; b < S; b += opts.block) {
        const std::size_t e = std::min(S, b + opts.block);
        Matrix re0, im0;
        pack_columns(std::span<const CoeffVector>(ens.samples).subspan(b, e - b), re0, im0);
        for (std::size_t k = 0; k < n_obs; ++k)
            store(base[k], b, observables[k].evaluate(re0, im0, flow));

        for (int run = 0; run < n_runs; ++run) {
            Matrix re = re0, im = im0;
            if (opts.flow) {
                for (std::size_t i = b; i < e; ++i) {
                    const auto u = opts.flow(ens.samples[i]);
                    require(u.n_max() == n_max, "test_rho_invariance: flow changed the mode count");
                    for (int m = 0; m < n_max; ++m) {
                        re(m, static_cast<Eigen::Index>(i - b)) = u[static_cast<std::size_t>(m)].real();
                        im(m, static_cast<Eigen::Index>(i - b)) = u[static_cast<std::size_t>(m)].imag();
                    }
                }
            } else if (span > 0.0) {
                const double h = std::ldexp(dt, -run); // dt, dt/2, dt/4
                auto steps = static_cast<long long>(std::floor(span / h + 1e-9));
                double rest = span - static_cast<double>(steps) * h;
                if (rest <= 1e-9 * h)
                    rest = 0.0;
                flow.evolve(re, im, dir * h, steps);
                if (rest > 0.0)
                    flow.step(re, im, dir * rest);
                if (!(re.allFinite() && im.allFinite()) ||
                    std::max(re.cwiseAbs().maxCoeff(), im.cwiseAbs().maxCoeff()) > blow_up_threshold)
                    throw BlowUp("test_rho_invariance: coefficients left the admissible range");
            }
            for (std::size_t k = 0; k < n_obs; ++k)
                store(after[k][static_cast<std::size_t>(run)], b, observables[k].evaluate(re, im, flow));
        }
    }

    for (std::size_t k = 0; k < n_obs; ++k) {
        std::vector<double> diff(S);
        for (std::size_t i = 0; i < S; ++i)
            diff[i] = after[k][0][i] - base[k][i];
        const auto mb = self_normalized_mean(ens.weights, base[k]);
        const auto ma = self_normalized_mean(ens.weights, after[k][0]);
        const auto md = self_normalized_mean(ens.weights, diff);
        if (md.n_effective < min_effective_samples)
            throw DegenerateEnsemble(fmt::format("test_rho_invariance: effective sample size {:.3g} below {:g}",
                                                 md.n_effective, min_effective_samples));
        r.metadata.n_effective = md.n_effective;
        const bool unchanged = after[k][0] == base[k];
        r.observables.push_back({observables[k].name, mb.mean, ma.mean, md.std_error,
                                 unchanged ? 0.0 : z_score(md.mean, md.std_error)});

        if (probe) {
            BiasProbe bp{observables[k].name};
            bp.mean_dt = ma.mean;
            bp.mean_dt2 = self_normalized_mean(ens.weights, after[k][1]).mean;
            bp.mean_dt4 = self_normalized_mean(ens.weights, after[k][2]).mean;
            bp.shift_h = std::abs(bp.mean_dt - bp.mean_dt2);
            bp.shift_h2 = std::abs(bp.mean_dt2 - bp.mean_dt4);
            bp.ratio = bp.shift_h2 > 0.0 ? bp.shift_h / bp.shift_h2 : HUGE_VAL;
            r.bias_pass = r.bias_pass && bp.ratio >= 2.0;
            r.bias.push_back(bp);
        }
    }
    detail::finish(r);
    return r;
}

// ---------------------------------------------------------------------------
// Gaussian tails

/// Raised when fewer than two thresholds keep enough exceedances for a fit.
class InsufficientExceedances : public Error {
public:
    using Error::Error;
};

inline constexpr std::size_t min_exceedances = 20;

struct TailFit {
    std::string norm;
    std::vector<double> D;
    std::vector<double> probability;
    std::vector<std::size_t> exceedances;
    /// Thresholds left out of the fit for lack of exceedances.
    std::vector<double> dropped;
    LineFit fit;
};

struct TailReport {
    TailFit hsigma;
    TailFit strichartz;
    double sigma = 0.0;
    double p = 0.0;
    int n_max = 0;
    std::size_t sample_count = 0;
    std::uint64_t seed = 0;
};

/// Fraction of values strictly above D.
inline std::pair<double, std::size_t> exceedance(std::span<const double> sorted, double D)
{
    const auto it = std::upper_bound(sorted.begin(), sorted.end(), D);
    const auto k = static_cast<std::size_t>(sorted.end() - it);
    return {static_cast<double>(k) / static_cast<double>(sorted.size()), k};
}

namespace detail {

inline double quantile(std::span<const double> sorted, double p)
{
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline TailFit fit_tail(std::string name, std::vector<double> values, std::vector<double> D_values, int grid_points)
{
    std::sort(values.begin(), values.end());
    if (D_values.empty()) {
        const double lo = quantile(values, 0.5), hi = quantile(values, 0.999);
        for (int i = 0; i < grid_points; ++i)
            D_values.push_back(lo + (hi - lo) * i / (grid_points - 1));
    }
    TailFit f;
    f.norm = std::move(name);
    std::vector<double> x, y;
    for (double D : D_values) {
        const auto [prob, k] = exceedance(values, D);
        f.D.push_back(D);
        f.probability.push_back(prob);
        f.exceedances.push_back(k);
        if (k < min_exceedances) {
            f.dropped.push_back(D);
            continue;
        }
        x.push_back(D * D);
        y.push_back(std::log(prob));
    }
    if (x.size() < 2)
        throw InsufficientExceedances(
            fmt::format("tail_estimate: fewer than two thresholds with >= {} exceedances for the {} norm",
                        min_exceedances, f.norm));
    f.fit = fit_line(x, y);
    return f;
}

} // namespace detail

struct TailOptions {
    int quadrature_nodes = 0;
    int t_nodes = 64;
    /// Threshold count when D_values is empty: evenly spaced between the
    /// sample median and the 0.999 quantile, separately for each norm.
    int grid_points = 12;
    std::size_t block = 512;
};

/// Tail probabilities mu(||u||_{H^sigma} > D) and mu(strichartz_norm(u, p) > D)
/// with least squares fits of log P against D^2.
inline TailReport tail_estimate(const std::vector<double>& D_values, double sigma, double p, int n_max,
                                std::size_t sample_count, std::uint64_t seed, const TailOptions& opts = {})
{
    require(sample_count >= 10000, "tail_estimate: sample_count must be >= 1e4");
    require(D_values.empty() || D_values.size() >= 4, "tail_estimate: need at least 4 thresholds");
    require(std::is_sorted(D_values.begin(), D_values.end()) &&
                std::adjacent_find(D_values.begin(), D_values.end()) == D_values.end(),
            "tail_estimate: D_values must be increasing");
    require(opts.grid_points >= 4, "tail_estimate: grid_points must be >= 4");
    const auto q = opts.quadrature_nodes > 0 ? RadialQuadrature::gauss_legendre(opts.quadrature_nodes)
                                             : RadialQuadrature::for_modes(n_max);
    const StrichartzEvaluator st(n_max, p, q, opts.t_nodes);

    std::vector<double> hs(sample_count), sn(sample_count);
    for (std::size_t b = 0; b < sample_count; b += opts.block) {
        const std::size_t e = std::min(sample_count, b + opts.block);
        const auto samples = sample_mu_batch(n_max, seed, e - b, b);
        Matrix re, im;
        pack_columns(samples, re, im);
        const Vector norms = st.norms(re, im);
        for (std::size_t i = b; i < e; ++i) {
            hs[i] = sobolev_norm(samples[i - b], sigma);
            sn[i] = norms(static_cast<Eigen::Index>(i - b));
        }
    }
    TailReport r;
    r.sigma = sigma;
    r.p = p;
    r.n_max = n_max;
    r.sample_count = sample_count;
    r.seed = seed;
    r.hsigma = detail::fit_tail("hsigma", std::move(hs), D_values, opts.grid_points);
    r.strichartz = detail::fit_tail("strichartz", std::move(sn), D_values, opts.grid_points);
    return r;
}

// ---------------------------------------------------------------------------
// Convergence of psi_N towards a reference level

struct ConvergenceOptions {
    int n_max = 64;
    int quadrature_nodes = 0;
    /// Initial data are kept only inside A(D): H^sigma norm and space-time
    /// norm both at most D.
    double membership_D = 4.0;
    double sigma = 0.4;
    double p = 5.0;
    /// Bootstrap resamples for the standard error of the max.
    int bootstrap = 200;
    /// Also run twice as many samples (a superset) to check the max is stable.
    bool stability_check = true;
    std::size_t block = 256;
};

struct ConvergenceRow {
    int N = 0;
    double max_gap = 0.0;
    double std_error = 0.0;
    /// Max over the doubled sample set (0 when the check is off).
    double max_gap_doubled = 0.0;
};

struct ConvergenceReport {
    std::vector<ConvergenceRow> rows;
    int N_ref = 0;
    double T = 0.0;
    double dt = 0.0;
    double s = 0.0;
    std::size_t sample_count = 0;
    std::size_t admitted = 0;
    std::size_t admitted_doubled = 0;
    std::uint64_t seed = 0;

    /// gap(N_{k+1}) <= gap(N_k) + 2 sqrt(se_k^2 + se_{k+1}^2) for consecutive rows.
    bool monotone() const
    {
        for (std::size_t k = 1; k < rows.size(); ++k) {
            const double tol = 2.0 * std::hypot(rows[k].std_error, rows[k - 1].std_error);
            if (rows[k].max_gap > rows[k - 1].max_gap + tol)
                return false;
        }
        return true;
    }

    /// Doubling the samples raises no max by more than 10%.
    bool stable() const
    {
        return std::all_of(rows.begin(), rows.end(),
                           [](const ConvergenceRow& r) { return r.max_gap_doubled <= 1.1 * r.max_gap; });
    }
};

namespace detail {

/// Per-sample sup over the step grid of ||psi_N - psi_ref||_{H^s}.
inline std::vector<std::vector<double>> convergence_gaps(const std::vector<CoeffVector>& data,
                                                         const std::vector<int>& N_values, int N_ref, double T,
                                                         double dt, double s, const RadialQuadrature& q,
                                                         std::size_t block)
{
    const int n_max = data.front().n_max();
    const EnsembleFlow ref(n_max, N_ref, q);
    std::vector<EnsembleFlow> flows;
    for (int N : N_values)
        flows.emplace_back(n_max, N, q);
    Vector weight(n_max);
    for (int n = 1; n <= n_max; ++n)
        weight(n - 1) = std::pow(n * pi, 2.0 * s);

    auto steps = static_cast<long long>(std::floor(T / dt + 1e-9));
    double rest = T - static_cast<double>(steps) * dt;
    if (rest <= 1e-9 * dt)
        rest = 0.0;

    std::vector<std::vector<double>> gaps(N_values.size(), std::vector<double>(data.size(), 0.0));
    for (std::size_t b = 0; b < data.size(); b += block) {
        const std::size_t e = std::min(data.size(), b + block);
        Matrix re0, im0;
        pack_columns(std::span<const CoeffVector>(data).subspan(b, e - b), re0, im0);
        // Reference states after every step.
        std::vector<std::pair<Matrix, Matrix>> path;
        Matrix re = re0, im = im0;
        ref.evolve(re, im, dt, steps, [&](long long, const Matrix& a, const Matrix& c) { path.emplace_back(a, c); });
        if (rest > 0.0) {
            ref.step(re, im, rest);
            path.emplace_back(re, im);
        }
        for (std::size_t k = 0; k < flows.size(); ++k) {
            Matrix ar = re0, ai = im0;
            auto update = [&](std::size_t idx, const Matrix& cr, const Matrix& ci) {
                const Vector d =
                    ((cr - path[idx].first).array().square() + (ci - path[idx].second).array().square())
                        .matrix()
                        .transpose() *
                    weight;
                for (std::size_t i = b; i < e; ++i)
                    gaps[k][i] = std::max(gaps[k][i], std::sqrt(d(static_cast<Eigen::Index>(i - b))));
            };
            flows[k].evolve(ar, ai, dt, steps,
                            [&](long long j, const Matrix& cr, const Matrix& ci) {
                                update(static_cast<std::size_t>(j - 1), cr, ci);
                            });
            if (rest > 0.0) {
                flows[k].step(ar, ai, rest);
                update(path.size() - 1, ar, ai);
            }
        }
    }
    return gaps;
}

/// Standard deviation of the max over bootstrap resamples (Philox driven).
inline double bootstrap_max_se(std::span<const double> x, int B, std::uint64_t seed)
{
    if (x.size() < 2 || B < 2)
        return 0.0;
    const auto key = Philox4x32::key_from_seed(seed);
    std::vector<double> maxima(static_cast<std::size_t>(B));
    for (int rep = 0; rep < B; ++rep) {
        double m = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const auto blk = Philox4x32::block(
                {static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(rep), 0xB007u, 0u}, key);
            const auto j = static_cast<std::size_t>(open_unit_interval(blk[0], blk[1]) * static_cast<double>(x.size()));
            m = std::max(m, x[std::min(j, x.size() - 1)]);
        }
        maxima[static_cast<std::size_t>(rep)] = m;
    }
    const auto est = sample_mean(maxima);
    return est.std_error * std::sqrt(static_cast<double>(B));
}

} // namespace detail

/// Sup over admitted samples of the C^0_t H^s distance between psi_N and
/// psi_{N_ref} on [0, T], for each N.
inline ConvergenceReport flow_convergence(std::size_t sample_count, const std::vector<int>& N_values, int N_ref,
                                          double T, double dt, double s, std::uint64_t seed,
                                          const ConvergenceOptions& opts = {})
{
    require(sample_count >= 1, "flow_convergence: sample_count must be positive");
    require(!N_values.empty(), "flow_convergence: N_values must not be empty");
    require(*std::max_element(N_values.begin(), N_values.end()) <= N_ref,
            "flow_convergence: N_values must not exceed N_ref");
    require(*std::min_element(N_values.begin(), N_values.end()) >= 1, "flow_convergence: N must be >= 1");
    require(N_ref <= 2 * opts.n_max, "flow_convergence: N_ref too large for n_max");
    require(T > 0.0 && T <= 1.0, "flow_convergence: T must lie in (0, 1]");
    require(dt > 0.0 && dt <= T, "flow_convergence: dt must lie in (0, T]");
    const auto q = opts.quadrature_nodes > 0 ? RadialQuadrature::gauss_legendre(opts.quadrature_nodes)
                                             : RadialQuadrature::for_modes(opts.n_max);

    const std::size_t total = opts.stability_check ? 2 * sample_count : sample_count;
    const auto all = sample_mu_batch(opts.n_max, seed, total);
    Matrix re, im;
    pack_columns(all, re, im);
    const Vector st = StrichartzEvaluator(opts.n_max, opts.p, q).norms(re, im);
    std::vector<CoeffVector> admitted;
    std::size_t admitted_first = 0;
    for (std::size_t i = 0; i < total; ++i) {
        if (sobolev_norm(all[i], opts.sigma) <= opts.membership_D &&
            st(static_cast<Eigen::Index>(i)) <= opts.membership_D) {
            admitted.push_back(all[i]);
            if (i < sample_count)
                ++admitted_first;
        }
    }
    require(admitted_first >= 2, "flow_convergence: fewer than two samples inside A(D)");

    const auto gaps = detail::convergence_gaps(admitted, N_values, N_ref, T, dt, s, q, opts.block);
    ConvergenceReport r;
    r.N_ref = N_ref;
    r.T = T;
    r.dt = dt;
    r.s = s;
    r.sample_count = sample_count;
    r.admitted = admitted_first;
    r.admitted_doubled = opts.stability_check ? admitted.size() : 0;
    r.seed = seed;
    for (std::size_t k = 0; k < N_values.size(); ++k) {
        const std::span<const double> first(gaps[k].data(), admitted_first);
        ConvergenceRow row;
        row.N = N_values[k];
        row.max_gap = *std::max_element(first.begin(), first.end());
        row.std_error = detail::bootstrap_max_se(first, opts.bootstrap, seed);
        if (opts.stability_check)
            row.max_gap_doubled = *std::max_element(gaps[k].begin(), gaps[k].end());
        r.rows.push_back(row);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Globalization ladder

struct ScheduleParams {
    long long i = 1;
    double gamma1 = 20.0;
    double c1 = 1.0;
    double c = 1.0;
    double gamma = 0.2;

    void validate() const
    {
        require(i >= 0, "ScheduleParams: i must be >= 0");
        require(gamma1 > 0.0 && c1 > 0.0 && c > 0.0 && gamma > 0.0,
                "ScheduleParams: gamma1, c1, c and gamma must be > 0");
        require(gamma1 >= gamma, "ScheduleParams: gamma1 must be >= gamma");
    }
};

/// gamma = 1 - 4/p
inline double exponent_gamma(double p) { return 1.0 - 4.0 / p; }
/// gamma_2 = (p - 4) / (6 p)
inline double exponent_gamma2(double p) { return (p - 4.0) / (6.0 * p); }
/// gamma_1 = max(gamma, 2 / (3 gamma_2))
inline double exponent_gamma1(double p) { return std::max(exponent_gamma(p), 2.0 / (3.0 * exponent_gamma2(p))); }

inline ScheduleParams schedule_params_for(double p, long long i = 1, double c = 1.0, double c1 = 1.0)
{
    require(p > 4.0 && p < 6.0, "p must lie in (4,6)");
    return {i, exponent_gamma1(p), c1, c, exponent_gamma(p)};
}

struct ScheduleRow {
    long long j = 0;
    double D = 0.0;
    double tau1 = 0.0;
    double T = 0.0;
};

/// D_{i,j} = (i + j^{1/gamma1})^{1/2}
inline double schedule_D(const ScheduleParams& sp, double j) { return std::sqrt(static_cast<double>(sp.i) + std::pow(j, 1.0 / sp.gamma1)); }

/// tau(D) = c (1 + D)^{-gamma}
inline double schedule_tau(const ScheduleParams& sp, double D) { return sp.c * std::pow(1.0 + D, -sp.gamma); }

/// tau_1(D) = min(c1 (1 + D)^{-gamma1}, tau(D))
inline double schedule_tau1(const ScheduleParams& sp, double D)
{
    return std::min(sp.c1 * std::pow(1.0 + D, -sp.gamma1), schedule_tau(sp, D));
}

/// log of sqrt(j) tau_1(D_{i,j}), safe for very large j.
inline double log_sqrt_j_tau1(const ScheduleParams& sp, double log_j)
{
    const double D = std::sqrt(static_cast<double>(sp.i) + std::exp(log_j / sp.gamma1));
    const double l1 = std::log(sp.c1) - sp.gamma1 * std::log1p(D);
    const double l0 = std::log(sp.c) - sp.gamma * std::log1p(D);
    return 0.5 * log_j + std::min(l0, l1);
}

/// Rows j = 1 .. j_max with T_{i,j} = sum_{l <= j} tau_1(D_{i,l}); T_{i,0} = 0.
inline std::vector<ScheduleRow> globalization_schedule(const ScheduleParams& sp, long long j_max)
{
    sp.validate();
    require(j_max >= 1, "globalization_schedule: j_max must be >= 1");
    std::vector<ScheduleRow> rows;
    rows.reserve(static_cast<std::size_t>(j_max));
    CompensatedSum T;
    for (long long j = 1; j <= j_max; ++j) {
        const double D = schedule_D(sp, static_cast<double>(j));
        const double tau1 = schedule_tau1(sp, D);
        T += tau1;
        rows.push_back({j, D, tau1, T.value()});
    }
    return rows;
}

/// T_{i,j} alone (0 for j = 0).
inline double schedule_time(const ScheduleParams& sp, long long j)
{
    require(j >= 0, "schedule_time: j must be >= 0");
    return j == 0 ? 0.0 : globalization_schedule(sp, j).back().T;
}

// ---------------------------------------------------------------------------
// Phase-space volume

enum class Substep { full, kick, rotation };

struct VolumeReport {
    double determinant = 0.0;
    int dimension = 0;
    Substep substep = Substep::full;
};

/// Central-difference Jacobian of one step map at `probe`, in the real
/// coordinates (Re c_1, Im c_1, ..., Re c_n, Im c_n), and its determinant.
inline VolumeReport volume_preservation_check(int N_small, double dt, const CoeffVector& probe,
                                              Substep substep = Substep::full, double fd_step = 1e-5)
{
    require(N_small >= 1 && N_small <= 3, "volume_preservation_check: N_small must lie in [1, 3]");
    require(std::isfinite(dt), "volume_preservation_check: dt must be finite");
    require(fd_step > 0.0, "volume_preservation_check: fd_step must be > 0");
    const int n_max = probe.n_max();
    const int dim = 2 * n_max;
    FlowParams fp;
    fp.N = N_small;
    fp.dt = dt;
    fp.quadrature = RadialQuadrature::for_modes(n_max);

    auto map = [&](const CoeffVector& u) {
        switch (substep) {
        case Substep::kick:
            return nonlinear_kick(u, N_small, dt, fp.quadrature);
        case Substep::rotation:
            return linear_flow(u, dt);
        case Substep::full:
            break;
        }
        return strang_step(u, fp);
    };
    auto coord = [](CoeffVector& u, int k) -> double& {
        return reinterpret_cast<double*>(&u[static_cast<std::size_t>(k / 2)])[k % 2];
    };

    Eigen::MatrixXd J(dim, dim);
    for (int k = 0; k < dim; ++k) {
        CoeffVector up = probe, dn = probe;
        coord(up, k) += fd_step;
        coord(dn, k) -= fd_step;
        CoeffVector fu = map(up), fd = map(dn);
        for (int m = 0; m < dim; ++m)
            J(m, k) = (coord(fu, m) - coord(fd, m)) / (2.0 * fd_step);
    }
    return {J.partialPivLu().determinant(), dim, substep};
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const InvarianceReport& r)
{
    nlohmann::json j;
    j["test"] = r.metadata.test;
    j["pass"] = r.pass;
    j["metadata"] = {{"N", r.metadata.N},
                     {"n_max", r.metadata.n_max},
                     {"K", r.metadata.quadrature_nodes},
                     {"t", r.metadata.t},
                     {"dt", r.metadata.dt},
                     {"sample_count", r.metadata.sample_count},
                     {"seed", r.metadata.seed},
                     {"n_effective", r.metadata.n_effective}};
    auto& obs = j["observables"] = nlohmann::json::array();
    for (const auto& o : r.observables)
        obs.push_back({{"name", o.name},
                       {"mean_before", o.mean_before},
                       {"mean_after", o.mean_after},
                       {"std_error", o.std_error},
                       {"z_score", o.z_score}});
    if (r.metadata.test == "linear") {
        j["ks_pass"] = r.ks_pass;
        j["max_state_change"] = r.max_state_change;
        auto& ks = j["ks"] = nlohmann::json::array();
        for (const auto& k : r.ks)
            ks.push_back({{"mode", k.mode}, {"p_real", k.p_real}, {"p_imag", k.p_imag}});
    } else {
        j["bias_pass"] = r.bias_pass;
        auto& bias = j["bias"] = nlohmann::json::array();
        for (const auto& b : r.bias)
            bias.push_back({{"name", b.name},
                            {"mean_dt", b.mean_dt},
                            {"mean_dt2", b.mean_dt2},
                            {"mean_dt4", b.mean_dt4},
                            {"shift_h", b.shift_h},
                            {"shift_h2", b.shift_h2},
                            {"ratio", b.ratio}});
    }
    return j;
}

inline std::string report_csv(const InvarianceReport& r)
{
    std::string out = "name,mean_before,mean_after,std_error,z_score\n";
    for (const auto& o : r.observables)
        out += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g}\n", o.name, o.mean_before, o.mean_after, o.std_error,
                           o.z_score);
    return out;
}

inline nlohmann::json to_json(const TailFit& f)
{
    return {{"norm", f.norm},
            {"D", f.D},
            {"probability", f.probability},
            {"exceedances", f.exceedances},
            {"dropped", f.dropped},
            {"slope", f.fit.slope},
            {"intercept", f.fit.intercept},
            {"r_squared", f.fit.r_squared}};
}

inline nlohmann::json to_json(const TailReport& r)
{
    return {{"sigma", r.sigma},         {"p", r.p},
            {"n_max", r.n_max},         {"sample_count", r.sample_count},
            {"seed", r.seed},           {"hsigma", to_json(r.hsigma)},
            {"strichartz", to_json(r.strichartz)}};
}

inline std::string tail_csv(const TailReport& r)
{
    std::string out = "norm,D,probability,exceedances,used\n";
    for (const TailFit* f : {&r.hsigma, &r.strichartz})
        for (std::size_t i = 0; i < f->D.size(); ++i)
            out += fmt::format("{},{:.17g},{:.17g},{},{}\n", f->norm, f->D[i], f->probability[i], f->exceedances[i],
                               f->exceedances[i] >= min_exceedances ? 1 : 0);
    return out;
}

inline nlohmann::json to_json(const ConvergenceReport& r)
{
    auto rows = nlohmann::json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"N", row.N},
                        {"max_gap", row.max_gap},
                        {"std_error", row.std_error},
                        {"max_gap_doubled", row.max_gap_doubled}});
    return {{"N_ref", r.N_ref},
            {"T", r.T},
            {"dt", r.dt},
            {"s", r.s},
            {"sample_count", r.sample_count},
            {"admitted", r.admitted},
            {"admitted_doubled", r.admitted_doubled},
            {"seed", r.seed},
            {"monotone", r.monotone()},
            {"stable", r.stable()},
            {"rows", rows}};
}

inline std::string convergence_csv(const ConvergenceReport& r)
{
    std::string out = "N,max_gap,std_error,max_gap_doubled\n";
    for (const auto& row : r.rows)
        out += fmt::format("{},{:.17g},{:.17g},{:.17g}\n", row.N, row.max_gap, row.std_error, row.max_gap_doubled);
    return out;
}

inline std::string schedule_csv(const std::vector<ScheduleRow>& rows)
{
    std::string out = "j,D,tau1,T\n";
    for (const auto& r : rows)
        out += fmt::format("{},{:.17g},{:.17g},{:.17g}\n", r.j, r.D, r.tau1, r.T);
    return out;
}

inline const char* substep_name(Substep s)
{
    switch (s) {
    case Substep::kick:
        return "kick";
    case Substep::rotation:
        return "rotation";
    case Substep::full:
        break;
    }
    return "full";
}

} // namespace radwave
