#pragma once

// Radial Dirichlet eigenbasis of the unit ball and the spectral operations
// built on it.
//
// A radial function is stored through its coefficients in the orthonormal
// family
//
//     e_n(r) = sqrt(2) sin(n pi r) / r,      n = 1, 2, ...
//
// which satisfies  int_0^1 e_n e_m r^2 dr = delta_nm  and  -Lap e_n = (n pi)^2 e_n.
// All L^p integrals are taken against r^2 dr on [0, 1] (no 4 pi factor).

#include "radwave/errors.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace radwave {

using Complex = std::complex<double>;

inline constexpr double pi = std::numbers::pi;

// ---------------------------------------------------------------------------
// CoeffVector

/// Coefficients c_1..c_{n_max} of u = sum_n c_n e_n. Storage is 0-based:
/// element i holds mode n = i + 1.
class CoeffVector {
public:
    explicit CoeffVector(int n_max) : c_(check_size(n_max)) {}

    explicit CoeffVector(std::vector<Complex> coeffs) : c_(std::move(coeffs))
    {
        check_size(static_cast<long>(c_.size()));
        require(is_finite(), "CoeffVector: entries must be finite");
    }

    /// amplitude * e_n inside an n_max-mode vector.
    static CoeffVector mode(int n, int n_max, Complex amplitude = 1.0)
    {
        require(n >= 1 && n <= n_max, "CoeffVector::mode: need 1 <= n <= n_max");
        CoeffVector u(n_max);
        u.at_mode(n) = amplitude;
        return u;
    }

    int n_max() const { return static_cast<int>(c_.size()); }
    std::size_t size() const { return c_.size(); }

    Complex& operator[](std::size_t i) { return c_[i]; }
    const Complex& operator[](std::size_t i) const { return c_[i]; }

    Complex& at_mode(int n) { return c_.at(static_cast<std::size_t>(n - 1)); }
    const Complex& at_mode(int n) const { return c_.at(static_cast<std::size_t>(n - 1)); }

    std::span<Complex> coeffs() { return c_; }
    std::span<const Complex> coeffs() const { return c_; }

    auto begin() { return c_.begin(); }
    auto end() { return c_.end(); }
    auto begin() const { return c_.begin(); }
    auto end() const { return c_.end(); }

    bool is_finite() const
    {
        return std::all_of(c_.begin(), c_.end(), [](Complex z) {
            return std::isfinite(z.real()) && std::isfinite(z.imag());
        });
    }

    CoeffVector real_part() const
    {
        CoeffVector r(n_max());
        for (std::size_t i = 0; i < c_.size(); ++i)
            r.c_[i] = c_[i].real();
        return r;
    }

    CoeffVector imag_part() const
    {
        CoeffVector r(n_max());
        for (std::size_t i = 0; i < c_.size(); ++i)
            r.c_[i] = c_[i].imag();
        return r;
    }

    /// The first m modes (m <= n_max), or a zero-padded extension (m > n_max).
    CoeffVector resized(int m) const
    {
        CoeffVector r(m);
        const std::size_t k = std::min(c_.size(), r.c_.size());
        std::copy_n(c_.begin(), k, r.c_.begin());
        return r;
    }

    CoeffVector& operator+=(const CoeffVector& o)
    {
        same_size(o);
        for (std::size_t i = 0; i < c_.size(); ++i)
            c_[i] += o.c_[i];
        return *this;
    }
    CoeffVector& operator-=(const CoeffVector& o)
    {
        same_size(o);
        for (std::size_t i = 0; i < c_.size(); ++i)
            c_[i] -= o.c_[i];
        return *this;
    }
    CoeffVector& operator*=(Complex s)
    {
        for (auto& z : c_)
            z *= s;
        return *this;
    }

    friend CoeffVector operator+(CoeffVector a, const CoeffVector& b) { return a += b; }
    friend CoeffVector operator-(CoeffVector a, const CoeffVector& b) { return a -= b; }
    friend CoeffVector operator*(Complex s, CoeffVector a) { return a *= s; }
    friend CoeffVector operator*(CoeffVector a, Complex s) { return a *= s; }
    friend bool operator==(const CoeffVector&, const CoeffVector&) = default;

private:
    static std::size_t check_size(long n)
    {
        require(n >= 1, "CoeffVector: n_max must be >= 1");
        return static_cast<std::size_t>(n);
    }
    void same_size(const CoeffVector& o) const
    {
        require(o.c_.size() == c_.size(), "CoeffVector: mode counts differ");
    }

    std::vector<Complex> c_;
};

/// max_n |a_n - b_n|
inline double sup_distance(const CoeffVector& a, const CoeffVector& b)
{
    require(a.n_max() == b.n_max(), "sup_distance: mode counts differ");
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

// ---------------------------------------------------------------------------
// RadialQuadrature

/// Gauss-Legendre rule on [0, 1] with the r^2 factor folded into the weights,
/// so sum_k w_k g(r_k) approximates int_0^1 g(r) r^2 dr. Cheap to copy.
class RadialQuadrature {
public:
    static int default_nodes(int n_max) { return std::max(64, 8 * n_max); }

    static RadialQuadrature gauss_legendre(int K)
    {
        require(K >= 1, "RadialQuadrature: need at least one node");
        auto d = std::make_shared<Data>();
        d->nodes.resize(static_cast<std::size_t>(K));
        d->weights.resize(static_cast<std::size_t>(K));

        // Newton iteration on P_K, seeded with the asymptotic root estimate.
        const int half = (K + 1) / 2;
        for (int i = 0; i < half; ++i) {
            double x = std::cos(pi * (i + 0.75) / (K + 0.5));
            double dp = 0.0;
            for (int it = 0; it < 100; ++it) {
                double p0 = 1.0, p1 = x;
                for (int k = 2; k <= K; ++k) {
                    const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = K * (x * p1 - p0) / (x * x - 1.0);
                const double dx = p1 / dp;
                x -= dx;
                if (std::abs(dx) < 1e-16)
                    break;
            }
            // Recompute the derivative at the converged root.
            {
                double p0 = 1.0, p1 = x;
                for (int k = 2; k <= K; ++k) {
                    const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = K * (x * p1 - p0) / (x * x - 1.0);
            }
            const double w = 2.0 / ((1.0 - x * x) * dp * dp);
            // x_i is the i-th largest root; map both mirror roots to (0, 1).
            const std::size_t hi = static_cast<std::size_t>(K - 1 - i);
            const std::size_t lo = static_cast<std::size_t>(i);
            d->nodes[hi] = 0.5 * (1.0 + x);
            d->weights[hi] = 0.5 * w;
            d->nodes[lo] = 0.5 * (1.0 - x);
            d->weights[lo] = 0.5 * w;
        }
        for (std::size_t k = 0; k < d->nodes.size(); ++k)
            d->weights[k] *= d->nodes[k] * d->nodes[k];
        return RadialQuadrature(std::move(d));
    }

    /// Default rule for vectors with n_max modes.
    static RadialQuadrature for_modes(int n_max) { return gauss_legendre(default_nodes(n_max)); }

    int size() const { return static_cast<int>(d_->nodes.size()); }
    std::span<const double> nodes() const { return d_->nodes; }
    std::span<const double> weights() const { return d_->weights; }

    friend bool operator==(const RadialQuadrature& a, const RadialQuadrature& b)
    {
        return a.d_ == b.d_ || (a.d_->nodes == b.d_->nodes && a.d_->weights == b.d_->weights);
    }

private:
    struct Data {
        std::vector<double> nodes;
        std::vector<double> weights;
    };
    explicit RadialQuadrature(std::shared_ptr<const Data> d) : d_(std::move(d)) {}
    std::shared_ptr<const Data> d_;
};

// ---------------------------------------------------------------------------
// Basis evaluation

/// e_n(r) for a single mode, with the removable singularity at r = 0 handled.
inline double basis_value(int n, double r)
{
    const double x = n * pi * r;
    if (std::abs(x) < 1e-4)
        return std::numbers::sqrt2 * n * pi * (1.0 - x * x / 6.0);
    return std::numbers::sqrt2 * std::sin(x) / r;
}

/// Writes e_1(r) .. e_{out.size()}(r) into out.
inline void basis_values(double r, std::span<double> out)
{
    const int n_max = static_cast<int>(out.size());
    if (r < 0.05) {
        for (int n = 1; n <= n_max; ++n)
            out[n - 1] = basis_value(n, r);
        return;
    }
    // Angle-addition recurrence; the error grows like n * eps, which the
    // r >= 0.05 guard keeps far below every tolerance used downstream.
    const double x = pi * r;
    const double c1 = std::cos(x), s1 = std::sin(x);
    const double scale = std::numbers::sqrt2 / r;
    double s = s1, c = c1;
    for (int n = 1; n <= n_max; ++n) {
        out[n - 1] = scale * s;
        const double sn = s * c1 + c * s1;
        c = c * c1 - s * s1;
        s = sn;
    }
}

// ---------------------------------------------------------------------------
// Cutoff profile and spectral multipliers

/// The smooth cutoff: 1 on |x| <= 1/2, exp(1 - 1/(1 - y^2)) with y = 2|x| - 1
/// on 1/2 < |x| < 1, and 0 for |x| >= 1.
inline double chi(double x)
{
    const double a = std::abs(x);
    if (a <= 0.5)
        return 1.0;
    if (a >= 1.0)
        return 0.0;
    const double y = 2.0 * a - 1.0;
    return std::exp(1.0 - 1.0 / (1.0 - y * y));
}

/// Multiplier of mode n under S_N.
inline double cutoff_factor(int n, int N)
{
    const double nn = static_cast<double>(n) * n;
    const double NN = static_cast<double>(N) * N;
    return chi(nn / NN);
}

/// Highest mode S_N does not annihilate (modes n >= N are killed).
inline int cutoff_active_modes(int N, int n_max) { return std::min(N - 1, n_max); }

/// c_n -> (n pi)^alpha c_n
inline CoeffVector apply_H_power(CoeffVector u, double alpha)
{
    if (alpha == 0.0)
        return u;
    for (int n = 1; n <= u.n_max(); ++n)
        u.at_mode(n) *= std::pow(n * pi, alpha);
    return u;
}

/// c_n -> chi(n^2 / N^2) c_n
inline CoeffVector cutoff_S_N(CoeffVector u, int N)
{
    require(N >= 1, "cutoff_S_N: N must be >= 1");
    for (int n = 1; n <= u.n_max(); ++n)
        u.at_mode(n) *= cutoff_factor(n, N);
    return u;
}

/// Orthogonal projection onto span{e_1, ..., e_N}.
inline CoeffVector project_Pi_N(CoeffVector u, int N)
{
    require(N >= 1, "project_Pi_N: N must be >= 1");
    for (int n = N + 1; n <= u.n_max(); ++n)
        u.at_mode(n) = 0.0;
    return u;
}

/// ( sum_n (n pi)^{2 sigma} |c_n|^2 )^{1/2}
inline double sobolev_norm(const CoeffVector& u, double sigma)
{
    double s = 0.0;
    for (int n = 1; n <= u.n_max(); ++n)
        s += std::pow(n * pi, 2.0 * sigma) * std::norm(u.at_mode(n));
    return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Physical space

/// Samples of a radial function at the nodes of a quadrature rule.
struct PhysField {
    std::vector<Complex> values;
    RadialQuadrature quadrature;
};

inline PhysField eval_physical(const CoeffVector& u, const RadialQuadrature& q)
{
    const auto r = q.nodes();
    PhysField g{std::vector<Complex>(r.size()), q};
    std::vector<double> b(u.size());
    for (std::size_t k = 0; k < r.size(); ++k) {
        basis_values(r[k], b);
        Complex acc = 0.0;
        for (std::size_t i = 0; i < b.size(); ++i)
            acc += u[i] * b[i];
        g.values[k] = acc;
    }
    return g;
}

inline constexpr double default_roundtrip_tolerance = 1e-10;

/// c_n = sum_k w_k g(r_k) e_n(r_k), the discrete L^2(r^2 dr) projection.
///
/// Alongside the projection, the probe e_{n_max} is pushed through the same
/// rule; if its roundtrip error exceeds `roundtrip_tol` the rule cannot
/// resolve n_max modes and QuadratureError is thrown. A non-positive
/// tolerance skips the probe.
inline CoeffVector analyze(const PhysField& g, const RadialQuadrature& q, int n_max,
                           double roundtrip_tol = default_roundtrip_tolerance)
{
    require(n_max >= 1, "analyze: n_max must be >= 1");
    require(static_cast<int>(g.values.size()) == q.size(),
            "analyze: field length does not match quadrature");
    const auto r = q.nodes();
    const auto w = q.weights();
    const bool probe = roundtrip_tol > 0.0;

    CoeffVector c(n_max);
    std::vector<double> b(static_cast<std::size_t>(n_max));
    std::vector<double> probe_rt(probe ? b.size() : 0, 0.0);
    for (std::size_t k = 0; k < r.size(); ++k) {
        basis_values(r[k], b);
        const Complex wg = w[k] * g.values[k];
        for (std::size_t i = 0; i < b.size(); ++i)
            c[i] += wg * b[i];
        if (probe) {
            const double wp = w[k] * b.back();
            for (std::size_t i = 0; i < b.size(); ++i)
                probe_rt[i] += wp * b[i];
        }
    }
    if (probe) {
        double err = 0.0;
        for (std::size_t i = 0; i < probe_rt.size(); ++i)
            err = std::max(err, std::abs(probe_rt[i] - (i + 1 == probe_rt.size() ? 1.0 : 0.0)));
        if (err > roundtrip_tol)
            throw QuadratureError("analyze: " + std::to_string(q.size()) + "-node rule cannot resolve " +
                                  std::to_string(n_max) + " modes (probe roundtrip error " +
                                  std::to_string(err) + ")");
    }
    return c;
}

/// ( sum_k w_k |g(r_k)|^p )^{1/p}, i.e. the L^p(r^2 dr) norm on [0, 1].
inline double lp_norm(const PhysField& g, double p, const RadialQuadrature& q)
{
    require(p >= 1.0, "lp_norm: p must be >= 1");
    require(static_cast<int>(g.values.size()) == q.size(), "lp_norm: field length does not match quadrature");
    const auto w = q.weights();
    double s = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k)
        s += w[k] * std::pow(std::abs(g.values[k]), p);
    return std::pow(s, 1.0 / p);
}

/// int_0^1 (Re u)^4 r^2 dr.
inline double quartic(const CoeffVector& u, const RadialQuadrature& q)
{
    const PhysField g = eval_physical(u.real_part(), q);
    const auto w = q.weights();
    double s = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
        const double v = g.values[k].real();
        const double v2 = v * v;
        s += w[k] * v2 * v2;
    }
    return s;
}

/// int_0^1 |S_N Re u|^4 r^2 dr, the quartic part of the truncated energy.
inline double quartic_SN(const CoeffVector& u, int N, const RadialQuadrature& q)
{
    return quartic(cutoff_S_N(u.real_part(), N), q);
}

} // namespace radwave
