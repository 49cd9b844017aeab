#pragma once

// Column-batched versions of the truncated flow and the space-time norm.
// Each column of an (n_max x S) pair of real matrices holds Re c_n and Im c_n
// of one sample, so basis synthesis and projection become matrix products.

#include "radwave/dynamics.hpp"
#include "radwave/spectral.hpp"

#include <Eigen/Dense>

#include <vector>

namespace radwave {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Packs samples into (Re, Im) column matrices.
inline void pack_columns(std::span<const CoeffVector> samples, Matrix& re, Matrix& im)
{
    require(!samples.empty(), "pack_columns: no samples");
    const int n_max = samples.front().n_max();
    re.resize(n_max, static_cast<Eigen::Index>(samples.size()));
    im.resize(n_max, static_cast<Eigen::Index>(samples.size()));
    for (std::size_t s = 0; s < samples.size(); ++s) {
        require(samples[s].n_max() == n_max, "pack_columns: mode counts differ");
        for (int i = 0; i < n_max; ++i) {
            re(i, static_cast<Eigen::Index>(s)) = samples[s][static_cast<std::size_t>(i)].real();
            im(i, static_cast<Eigen::Index>(s)) = samples[s][static_cast<std::size_t>(i)].imag();
        }
    }
}

inline CoeffVector unpack_column(const Matrix& re, const Matrix& im, Eigen::Index col)
{
    CoeffVector u(static_cast<int>(re.rows()));
    for (Eigen::Index i = 0; i < re.rows(); ++i)
        u[static_cast<std::size_t>(i)] = Complex(re(i, col), im(i, col));
    return u;
}

/// psi_N on many samples at once. Only the modes n < N feel the nonlinearity;
/// the rest rotate freely.
class EnsembleFlow {
public:
    EnsembleFlow(int n_max, int N, RadialQuadrature q) : n_max_(n_max), N_(N), q_(std::move(q))
    {
        require(n_max >= 1 && N >= 1, "EnsembleFlow: need n_max >= 1 and N >= 1");
        active_ = cutoff_active_modes(N, n_max);
        const int K = q_.size();
        synth_.resize(K, std::max(active_, 0));
        proj_.resize(std::max(active_, 0), K);
        std::vector<double> b(static_cast<std::size_t>(std::max(active_, 1)));
        const auto r = q_.nodes();
        const auto w = q_.weights();
        for (int k = 0; k < K; ++k) {
            if (active_ == 0)
                break;
            basis_values(r[static_cast<std::size_t>(k)], b);
            for (int m = 0; m < active_; ++m) {
                const int n = m + 1;
                const double chi_n = cutoff_factor(n, N);
                synth_(k, m) = chi_n * b[static_cast<std::size_t>(m)];
                proj_(m, k) = chi_n / (n * pi) * w[static_cast<std::size_t>(k)] * b[static_cast<std::size_t>(m)];
            }
        }
        weights_ = Eigen::Map<const Vector>(w.data(), K);
        // Same adequacy probe as analyze(): roundtrip of e_{n_max}.
        (void)analyze(PhysField{std::vector<Complex>(static_cast<std::size_t>(K)), q_}, q_, n_max_);
    }

    int n_max() const { return n_max_; }
    int cutoff() const { return N_; }
    int active_modes() const { return active_; }
    const RadialQuadrature& quadrature() const { return q_; }

    /// G for every column (active_modes x S); inactive modes have zero force.
    Matrix force(const Matrix& re) const
    {
        if (active_ == 0)
            return Matrix::Zero(0, re.cols());
        Matrix phys = synth_ * re.topRows(active_);
        phys.array() = phys.array().cube();
        return proj_ * phys;
    }

    /// int |S_N Re u|^4 r^2 dr per column.
    Vector quartic(const Matrix& re) const
    {
        if (active_ == 0)
            return Vector::Zero(re.cols());
        Matrix phys = synth_ * re.topRows(active_);
        phys.array() = phys.array().square().square();
        return (weights_.transpose() * phys).transpose();
    }

    /// E_N per column.
    Vector energy(const Matrix& re, const Matrix& im) const
    {
        Vector e = Vector::Zero(re.cols());
        for (Eigen::Index i = 0; i < re.rows(); ++i) {
            const double k2 = ((i + 1) * pi) * ((i + 1) * pi);
            e += 0.5 * k2 * (re.row(i).array().square() + im.row(i).array().square()).matrix().transpose();
        }
        return e + 0.25 * quartic(re);
    }

    void rotate(Matrix& re, Matrix& im, double t) const
    {
        for (Eigen::Index i = 0; i < re.rows(); ++i) {
            const Complex ph = mode_phase(static_cast<int>(i) + 1, t);
            const Eigen::RowVectorXd a = re.row(i);
            re.row(i) = ph.real() * a - ph.imag() * im.row(i);
            im.row(i) = ph.imag() * a + ph.real() * im.row(i);
        }
    }

    /// One Strang step of size dt on all columns.
    void step(Matrix& re, Matrix& im, double dt) const
    {
        Matrix g = force(re);
        kick(im, g, 0.5 * dt);
        rotate(re, im, dt);
        g = force(re);
        kick(im, g, 0.5 * dt);
    }

    /// n_steps Strang steps of size dt (negative dt runs backwards). The
    /// callback, if any, sees the state after every step.
    template <class Callback>
    void evolve(Matrix& re, Matrix& im, double dt, long long n_steps, Callback&& after_step) const
    {
        if (n_steps <= 0)
            return;
        Matrix g = force(re);
        for (long long k = 1; k <= n_steps; ++k) {
            kick(im, g, 0.5 * dt);
            rotate(re, im, dt);
            g = force(re);
            kick(im, g, 0.5 * dt);
            after_step(k, re, im);
        }
    }

    void evolve(Matrix& re, Matrix& im, double dt, long long n_steps) const
    {
        evolve(re, im, dt, n_steps, [](long long, const Matrix&, const Matrix&) {});
    }

private:
    void kick(Matrix& im, const Matrix& g, double h) const
    {
        if (active_ > 0)
            im.topRows(active_).noalias() += h * g;
    }

    int n_max_;
    int N_;
    int active_ = 0;
    RadialQuadrature q_;
    Matrix synth_; // K x active: chi_n e_n(r_k)
    Matrix proj_;  // active x K: chi_n / (n pi) w_k e_n(r_k)
    Vector weights_;
};

/// Batched space-time norm ( int_0^2 ||S(t) u||_{L^p}^p dt )^{1/p}.
class StrichartzEvaluator {
public:
    StrichartzEvaluator(int n_max, double p, RadialQuadrature q, int t_nodes = 64)
        : n_max_(n_max), p_(p), t_nodes_(t_nodes), q_(std::move(q))
    {
        require(p > 4.0 && p < 6.0, "strichartz_norm: p must lie in (4,6)");
        require(t_nodes >= 32, "strichartz_norm: t_nodes must be >= 32");
        const int K = q_.size();
        basis_.resize(K, n_max);
        std::vector<double> b(static_cast<std::size_t>(n_max));
        for (int k = 0; k < K; ++k) {
            basis_values(q_.nodes()[static_cast<std::size_t>(k)], b);
            for (int n = 0; n < n_max; ++n)
                basis_(k, n) = b[static_cast<std::size_t>(n)];
        }
        weights_ = Eigen::Map<const Vector>(q_.weights().data(), K);
    }

    Vector norms(const Matrix& re, const Matrix& im) const
    {
        require(re.rows() == n_max_ && im.rows() == n_max_, "StrichartzEvaluator: mode count mismatch");
        const double dt = 2.0 / t_nodes_;
        std::vector<Vector> slices(static_cast<std::size_t>(t_nodes_));
        Matrix rre = re, rim = im, pre, pim;
        Eigen::ArrayXXd mod2;
        for (int j = 0; j < t_nodes_; ++j) {
            rre = re;
            rim = im;
            for (int i = 0; i < n_max_; ++i) {
                const Complex ph = mode_phase(i + 1, j * dt);
                rre.row(i) = ph.real() * re.row(i) - ph.imag() * im.row(i);
                rim.row(i) = ph.imag() * re.row(i) + ph.real() * im.row(i);
            }
            pre.noalias() = basis_ * rre;
            pim.noalias() = basis_ * rim;
            mod2 = pre.array().square() + pim.array().square();
            Eigen::ArrayXXd powp;
            if (p_ == 5.0)
                powp = mod2.square() * mod2.sqrt();
            else
                powp = mod2.pow(0.5 * p_);
            slices[static_cast<std::size_t>(j)] = (weights_.transpose() * powp.matrix()).transpose() * dt;
        }
        // Pairwise reduction over time slices.
        std::size_t len = slices.size();
        while (len > 1) {
            const std::size_t half = (len + 1) / 2;
            for (std::size_t i = 0; i + half < len; ++i)
                slices[i] += slices[i + half];
            len = half;
        }
        return slices[0].array().pow(1.0 / p_).matrix();
    }

private:
    int n_max_;
    double p_;
    int t_nodes_;
    RadialQuadrature q_;
    Matrix basis_;
    Vector weights_;
};

} // namespace radwave
