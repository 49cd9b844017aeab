#pragma once

// Truncated cubic wave dynamics in the radial eigenbasis.
//
// With u = f - i H^{-1} f_t the truncated equation reads
//
//     i u_t + H u + G(Re u) = 0,     G(a) = S_N H^{-1} (S_N a)^3,
//
// i.e.  u_t = i H u + i G(Re u).  The linear part is a phase rotation of each
// mode; the nonlinear part leaves Re u fixed, so its flow is the exact shear
// u -> u + i t G(Re u). Strang splitting of the two exact sub-flows gives a
// second order, volume preserving and time reversible one-step map.

#include "radwave/errors.hpp"
#include "radwave/spectral.hpp"
#include "radwave/summation.hpp"

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <fmt/format.h>

namespace radwave {

inline constexpr double blow_up_threshold = 1e12;

/// Time stepping configuration for the truncated flow.
struct FlowParams {
    int N = 16;
    double dt = 1e-3;
    double t_final = 0.0;
    RadialQuadrature quadrature = RadialQuadrature::for_modes(32);
    /// Store every k-th step in the trajectory (the final state is always stored).
    int record_every = 1;

    void validate() const
    {
        require(N >= 1, "FlowParams: N must be >= 1");
        require(dt > 0.0 && std::isfinite(dt), "FlowParams: dt must be > 0");
        require(std::isfinite(t_final) && std::abs(t_final) / dt <= 1e8,
                "FlowParams: |t_final| / dt must not exceed 1e8");
        require(record_every >= 1, "FlowParams: record_every must be >= 1");
    }
};

struct Trajectory {
    std::vector<double> times;
    std::vector<CoeffVector> states;
    std::vector<double> energies;
};

/// e^{i n pi t} rotation of mode n. The phase n t is reduced modulo 2 before
/// scaling by pi, so t = 2 (or any even integer) is reproduced exactly.
inline Complex mode_phase(int n, double t)
{
    const double theta = pi * std::remainder(static_cast<double>(n) * t, 2.0);
    return {std::cos(theta), std::sin(theta)};
}

/// S(t) = e^{iHt}: c_n -> e^{i n pi t} c_n.
inline CoeffVector linear_flow(CoeffVector u, double t)
{
    if (t == 0.0)
        return u;
    for (int n = 1; n <= u.n_max(); ++n)
        u.at_mode(n) *= mode_phase(n, t);
    return u;
}

/// G(u) = S_N H^{-1} ((S_N Re u)^3), returned as a real coefficient vector.
inline CoeffVector nonlinear_force(const CoeffVector& u, int N, const RadialQuadrature& q)
{
    PhysField g = eval_physical(cutoff_S_N(u.real_part(), N), q);
    for (auto& v : g.values) {
        const double a = v.real();
        v = a * a * a;
    }
    return cutoff_S_N(apply_H_power(analyze(g, q, u.n_max()), -1.0), N);
}

namespace detail {

/// u -> u + i dt G, written so that Re u is untouched bit for bit.
inline void apply_kick(CoeffVector& u, const CoeffVector& force, double dt)
{
    for (std::size_t i = 0; i < u.size(); ++i)
        u[i] = Complex(u[i].real(), u[i].imag() + dt * force[i].real());
}

inline void check_amplitude(const CoeffVector& u, double t)
{
    for (const Complex& z : u) {
        if (!(std::abs(z) <= blow_up_threshold))
            throw BlowUp(fmt::format("coefficient magnitude exceeded {:g} at t = {:g}", blow_up_threshold, t));
    }
}

} // namespace detail

/// Exact flow of u_t = i G(Re u) over time dt.
inline CoeffVector nonlinear_kick(CoeffVector u, int N, double dt, const RadialQuadrature& q)
{
    if (dt == 0.0)
        return u;
    const CoeffVector force = nonlinear_force(u, N, q);
    detail::apply_kick(u, force, dt);
    return u;
}

/// kick(dt/2) . S(dt) . kick(dt/2)
inline CoeffVector strang_step(CoeffVector u, const FlowParams& fp)
{
    u = nonlinear_kick(std::move(u), fp.N, 0.5 * fp.dt, fp.quadrature);
    u = linear_flow(std::move(u), fp.dt);
    return nonlinear_kick(std::move(u), fp.N, 0.5 * fp.dt, fp.quadrature);
}

/// E_N(u) = 1/2 ||H u||^2 + 1/4 int |S_N Re u|^4 r^2 dr
inline double energy_E_N(const CoeffVector& u, int N, const RadialQuadrature& q)
{
    const double h1 = sobolev_norm(u, 1.0);
    return 0.5 * h1 * h1 + 0.25 * quartic_SN(u, N, q);
}

/// psi_N(t) u0 by repeated Strang steps (backwards in time for t_final < 0).
/// A trailing partial step covers any remainder of |t_final| / dt.
inline Trajectory evolve_psi_N(const CoeffVector& u0, const FlowParams& fp)
{
    fp.validate();
    const auto& q = fp.quadrature;
    const double dir = fp.t_final < 0 ? -1.0 : 1.0;
    const double span = std::abs(fp.t_final);
    auto n_full = static_cast<long long>(std::floor(span / fp.dt + 1e-9));
    double remainder = span - static_cast<double>(n_full) * fp.dt;
    if (remainder <= 1e-9 * fp.dt) // includes floor rounding up across an exact multiple
        remainder = 0.0;

    Trajectory traj;
    CoeffVector u = u0;
    auto record = [&](double t) {
        traj.times.push_back(t);
        traj.states.push_back(u);
        traj.energies.push_back(energy_E_N(u, fp.N, q));
    };
    record(0.0);
    if (span == 0.0)
        return traj;

    // Consecutive half kicks share their force: Re u is unchanged by a kick.
    CoeffVector force = nonlinear_force(u, fp.N, q);
    auto step = [&](double h) {
        detail::apply_kick(u, force, 0.5 * h);
        u = linear_flow(std::move(u), h);
        force = nonlinear_force(u, fp.N, q);
        detail::apply_kick(u, force, 0.5 * h);
    };

    const long long total = n_full + (remainder > 0.0 ? 1 : 0);
    for (long long k = 1; k <= n_full; ++k) {
        step(dir * fp.dt);
        const double t = dir * static_cast<double>(k) * fp.dt;
        detail::check_amplitude(u, t);
        if (k % fp.record_every == 0 || k == total)
            record(t);
    }
    if (remainder > 0.0) {
        step(dir * remainder);
        detail::check_amplitude(u, fp.t_final);
        record(fp.t_final);
    }
    return traj;
}

// ---------------------------------------------------------------------------
// Picard / Duhamel local solver

struct PicardOptions {
    /// Simpson panels per unit of time on the s-grid (rounded up to an even count).
    int panels_per_unit_time = 4096;
    /// Increments below this absolute level are treated as converged noise
    /// by the contraction monitor.
    double noise_floor = 1e-13;
};

struct PicardResult {
    CoeffVector state;
    /// sup over grid and modes of |v_{k+1} - v_k| for k = 0 .. iters-1.
    std::vector<double> increments;
};

/// Iterates v_{k+1}(t) = i int_0^t S(t - s) G(S(s) u0 + v_k(s)) ds from v_0 = 0
/// on a uniform grid (cumulative Simpson in s) and returns S(T) u0 + v(T).
inline PicardResult picard_iterate(const CoeffVector& u0, int N, double T, int iters, const RadialQuadrature& q,
                                   const PicardOptions& opts = {})
{
    require(N >= 1, "picard_local: N must be >= 1");
    require(T >= 0.0 && std::isfinite(T), "picard_local: T must be >= 0");
    require(iters >= 1, "picard_local: iters must be >= 1");
    require(opts.panels_per_unit_time >= 2, "picard_local: need at least 2 panels per unit time");

    PicardResult result{u0, {}};
    if (T == 0.0)
        return result;

    int panels = static_cast<int>(std::ceil(T * opts.panels_per_unit_time));
    panels = std::max(2, panels + (panels % 2));
    const double h = T / panels;
    const int n_max = u0.n_max();
    const std::size_t n_pts = static_cast<std::size_t>(panels) + 1;

    std::vector<CoeffVector> base;
    base.reserve(n_pts);
    for (std::size_t j = 0; j < n_pts; ++j)
        base.push_back(linear_flow(u0, static_cast<double>(j) * h));

    std::vector<CoeffVector> v(n_pts, CoeffVector(n_max));
    std::vector<CoeffVector> integrand(n_pts, CoeffVector(n_max));
    std::vector<CoeffVector> next(n_pts, CoeffVector(n_max));

    for (int k = 0; k < iters; ++k) {
        for (std::size_t j = 0; j < n_pts; ++j) {
            const double s = static_cast<double>(j) * h;
            const CoeffVector force = nonlinear_force(base[j] + v[j], N, q);
            for (int n = 1; n <= n_max; ++n)
                integrand[j].at_mode(n) = std::conj(mode_phase(n, s)) * force.at_mode(n).real();
        }
        // Cumulative Simpson: even nodes by the composite rule, odd nodes by
        // the third order half-panel formula.
        CoeffVector acc_even(n_max), acc(n_max);
        for (std::size_t j = 0; j < n_pts; ++j) {
            if (j == 0) {
                acc = CoeffVector(n_max);
            } else if (j % 2 == 0) {
                for (std::size_t i = 0; i < acc.size(); ++i)
                    acc_even[i] += h / 3.0 * (integrand[j - 2][i] + 4.0 * integrand[j - 1][i] + integrand[j][i]);
                acc = acc_even;
            } else {
                acc = acc_even;
                for (std::size_t i = 0; i < acc.size(); ++i)
                    acc[i] += h / 12.0 * (5.0 * integrand[j - 1][i] + 8.0 * integrand[j][i] - integrand[j + 1][i]);
            }
            const double t = static_cast<double>(j) * h;
            for (int n = 1; n <= n_max; ++n)
                next[j].at_mode(n) = Complex(0.0, 1.0) * mode_phase(n, t) * acc.at_mode(n);
        }

        double inc = 0.0;
        for (std::size_t j = 0; j < n_pts; ++j)
            inc = std::max(inc, sup_distance(next[j], v[j]));
        if (k >= 1 && inc > result.increments.back() && inc > opts.noise_floor)
            throw NonContraction(fmt::format("picard_local: iterate increment grew from {:.3e} to {:.3e} at "
                                             "iteration {} (T = {:g} too long for this datum)",
                                             result.increments.back(), inc, k + 1, T));
        result.increments.push_back(inc);
        std::swap(v, next);
    }
    result.state = base.back() + v.back();
    return result;
}

inline CoeffVector picard_local(const CoeffVector& u0, int N, double T, int iters, const RadialQuadrature& q,
                                const PicardOptions& opts = {})
{
    return picard_iterate(u0, N, T, iters, q, opts).state;
}

// ---------------------------------------------------------------------------
// Space-time norm of the linear evolution

/// ( int_0^2 ||S(t) u0||_{L^p}^p dt )^{1/p}. S(t) is 2-periodic, so the
/// trapezoid rule on t_nodes equispaced points of [0, 2) is used.
inline double strichartz_norm(const CoeffVector& u0, double p, const RadialQuadrature& q, int t_nodes = 64)
{
    require(p > 4.0 && p < 6.0, "strichartz_norm: p must lie in (4,6)");
    require(t_nodes >= 32, "strichartz_norm: t_nodes must be >= 32");
    const double dt = 2.0 / t_nodes;
    std::vector<double> slices(static_cast<std::size_t>(t_nodes));
    for (int j = 0; j < t_nodes; ++j) {
        const double norm = lp_norm(eval_physical(linear_flow(u0, j * dt), q), p, q);
        slices[static_cast<std::size_t>(j)] = std::pow(norm, p) * dt;
    }
    return std::pow(pairwise_sum(slices), 1.0 / p);
}

// ---------------------------------------------------------------------------
// Export

/// CSV with columns t, E_N, H0, Hsigma (one row per stored state).
inline std::string trajectory_csv(const Trajectory& traj, double sigma)
{
    std::string out = "t,E_N,H0,Hsigma\n";
    for (std::size_t i = 0; i < traj.times.size(); ++i)
        out += fmt::format("{:.17g},{:.17g},{:.17g},{:.17g}\n", traj.times[i], traj.energies[i],
                           sobolev_norm(traj.states[i], 0.0), sobolev_norm(traj.states[i], sigma));
    return out;
}

} // namespace radwave
