#include <catch2/catch_amalgamated.hpp>

#include "radwave/gibbs.hpp"
#include "radwave/io.hpp"

#include <cmath>
#include <filesystem>

using namespace radwave;
using Catch::Approx;

namespace {

// 4 int_0^1 sin^4(pi r) / r^2 dr, 30-digit offline quadrature.
constexpr double kI1 = 8.44549280448484372867633713971;

} // namespace

TEST_CASE("Philox4x32-10 known answers", "[gibbs][rng]")
{
    using P = Philox4x32;
    CHECK(P::block({0, 0, 0, 0}, {0, 0}) == P::Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
    CHECK(P::block({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}) ==
          P::Counter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
    CHECK(P::block({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}) ==
          P::Counter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});

    CHECK(open_unit_interval(0, 0) > 0.0);
    CHECK(open_unit_interval(0xffffffffu, 0xffffffffu) < 1.0);
}

TEST_CASE("sampler determinism and prefix structure", "[gibbs][sampler]")
{
    const auto a = sample_mu({32, 99, 7});
    CHECK(sample_mu({32, 99, 7}) == a);
    CHECK_FALSE(sample_mu({32, 99, 8}) == a);
    CHECK_FALSE(sample_mu({32, 100, 7}) == a);
    CHECK(sample_mu({16, 99, 7}) == a.resized(16));

    const auto batch = sample_mu_batch(8, 5, 300, 40);
    for (std::size_t i = 0; i < batch.size(); ++i)
        CHECK(batch[i] == sample_mu({8, 5, 40 + i}));
    CHECK_THROWS_AS(sample_mu({0, 1, 0}), InvalidArgument);
}

TEST_CASE("sampler second moments", "[gibbs][sampler]")
{
    const std::size_t count = 1'000'000;
    const int n_max = 4;
    const auto draws = sample_mu_batch(n_max, 12345, count);
    for (int n = 1; n <= n_max; ++n) {
        std::vector<double> m(count);
        for (std::size_t i = 0; i < count; ++i)
            m[i] = std::norm(draws[i].at_mode(n));
        const auto est = sample_mean(m);
        const double expect = 2.0 / ((n * pi) * (n * pi));
        INFO("mode " << n << " mean " << est.mean << " se " << est.std_error);
        CHECK(std::abs(est.mean - expect) <= 3.0 * est.std_error);
    }
    for (auto [n, m] : {std::pair{1, 2}, std::pair{1, 4}, std::pair{2, 3}}) {
        std::vector<double> re(count), im(count);
        for (std::size_t i = 0; i < count; ++i) {
            const Complex z = draws[i].at_mode(n) * std::conj(draws[i].at_mode(m));
            re[i] = z.real();
            im[i] = z.imag();
        }
        const auto er = sample_mean(re), ei = sample_mean(im);
        CHECK(std::abs(er.mean) <= 3.0 * er.std_error);
        CHECK(std::abs(ei.mean) <= 3.0 * ei.std_error);
    }
}

TEST_CASE("per-mode law passes KS", "[gibbs][sampler]")
{
    const std::size_t count = 100'000;
    const auto draws = sample_mu_batch(32, 777, count);
    for (int n : {1, 5, 17}) {
        std::vector<double> re(count), im(count);
        for (std::size_t i = 0; i < count; ++i) {
            re[i] = draws[i].at_mode(n).real();
            im[i] = draws[i].at_mode(n).imag();
        }
        const double sd = 1.0 / (n * pi);
        CHECK(ks_test_normal(re, sd).p_value > 0.01);
        CHECK(ks_test_normal(im, sd).p_value > 0.01);
    }
    // A wrong variance must be caught.
    std::vector<double> re(count);
    for (std::size_t i = 0; i < count; ++i)
        re[i] = draws[i].at_mode(1).real();
    CHECK(ks_test_normal(re, 1.05 / pi).p_value < 0.01);
}

TEST_CASE("expected H^sigma norm", "[gibbs][sampler]")
{
    const int n_max = 32;
    const std::size_t count = 100'000;
    const auto draws = sample_mu_batch(n_max, 4242, count);
    for (double sigma : {0.0, 0.4}) {
        std::vector<double> v(count);
        for (std::size_t i = 0; i < count; ++i) {
            const double h = sobolev_norm(draws[i], sigma);
            v[i] = h * h;
        }
        double expect = 0.0;
        for (int n = 1; n <= n_max; ++n)
            expect += 2.0 * std::pow(n * pi, 2.0 * sigma - 2.0);
        const auto est = sample_mean(v);
        CHECK(std::abs(est.mean - expect) <= 3.0 * est.std_error);
    }
}

TEST_CASE("Gibbs density factors", "[gibbs][density]")
{
    const auto q = RadialQuadrature::for_modes(32);
    CHECK(density_weight_fN(CoeffVector(32), 16, q) == 1.0);
    CHECK(density_weight_f(CoeffVector(32), q) == 1.0);

    for (double c : {0.3, 1.0, 1.7}) {
        const auto u = CoeffVector::mode(1, 32, c);
        const double expect = std::exp(-0.25 * std::pow(c, 4) * kI1);
        CHECK(density_weight_fN(u, 16, q) == Approx(expect).epsilon(1e-12));
        CHECK(density_weight_f(u, q) == Approx(expect).epsilon(1e-12));
        // Imaginary parts carry no weight.
        CHECK(density_weight_fN(CoeffVector::mode(1, 32, Complex(0.0, c)), 16, q) == 1.0);
    }

    const auto samples = sample_mu_batch(32, 31, 500);
    for (const auto& u : samples) {
        for (int N : {1, 2, 8, 40}) {
            const double w = density_weight_fN(u, N, q);
            CHECK(w > 0.0);
            CHECK(w <= 1.0);
        }
        const double f = density_weight_f(u, q);
        CHECK(f > 0.0);
        CHECK(f <= 1.0);
    }
    CHECK(density_weight_fN(CoeffVector::mode(1, 32, 100.0), 16, q) > 0.0);
    CHECK(density_weight_fN(samples[0], 1, q) == 1.0);
}

TEST_CASE("f_N tends to f pointwise", "[gibbs][density]")
{
    const int n_max = 32;
    const auto q = RadialQuadrature::for_modes(n_max);
    double gap8 = 0.0, gap32 = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto u = sample_mu({n_max, 2718, s});
        const double f = density_weight_f(u, q);
        gap8 += std::abs(density_weight_fN(u, 8, q) - f);
        gap32 += std::abs(density_weight_fN(u, 32, q) - f);
        // all 32 modes sit where the cutoff equals 1
        CHECK(density_weight_fN(u, 64, q) == f);
        CHECK(density_weight_fN(u, 1000, q) == f);
    }
    CHECK(gap32 < gap8);
}

TEST_CASE("weighted expectations", "[gibbs][estimator]")
{
    const auto q = RadialQuadrature::for_modes(32);
    const auto e = make_ensemble(32, 16, 2000, 8, q);
    e.validate();
    CHECK(e.size() == 2000);
    CHECK(e.metadata.n_max == 32);
    CHECK(e.metadata.quadrature_nodes == q.size());

    const auto one = weighted_expectation(e, [](const CoeffVector&) { return 1.0; });
    CHECK(one.mean == Approx(1.0).epsilon(1e-14));
    CHECK(one.std_error == Approx(0.0).margin(1e-15));
    CHECK(one.n_effective <= 2000.0 + 1e-9);

    WeightedEnsemble flat = e;
    std::fill(flat.weights.begin(), flat.weights.end(), 0.5);
    auto F = [](const CoeffVector& u) { return std::norm(u.at_mode(2)); };
    std::vector<double> vals;
    for (const auto& u : flat.samples)
        vals.push_back(F(u));
    const auto plain = sample_mean(vals);
    const auto wm = weighted_expectation(flat, F);
    CHECK(wm.mean == Approx(plain.mean).epsilon(1e-13));
    CHECK(wm.n_effective == Approx(2000.0).epsilon(1e-12));

    WeightedEnsemble spiky = e;
    std::fill(spiky.weights.begin(), spiky.weights.end(), 1e-300);
    spiky.weights[3] = 1.0;
    CHECK_THROWS_AS(weighted_expectation(spiky, F), DegenerateEnsemble);

    SECTION("second moment with the cutoff switched off")
    {
        // N = 1 leaves f_N = 1, so rho_N = mu.
        const auto big = make_ensemble(8, 1, 100'000, 91, RadialQuadrature::for_modes(8));
        const auto est = weighted_expectation(big, [](const CoeffVector& u) { return std::norm(u.at_mode(1)); });
        CHECK(std::abs(est.mean - 2.0 / (pi * pi)) <= 3.0 * est.std_error);
    }
}

TEST_CASE("L1 distance between f_N and f", "[gibbs][density]")
{
    const auto q = RadialQuadrature::for_modes(32);
    CHECK_THROWS_AS(l1_distance_fN_f(32, 8, 0, {32, 1, 0}, q), InvalidArgument);
    CHECK_THROWS_AS(l1_distance_fN_f(32, 8, 5, {32, 1, 0}, q), DegenerateEnsemble);

    const auto exact = l1_distance_fN_f(16, 23, 200, {16, 1, 0}, q);
    CHECK(exact.mean == 0.0);
    CHECK(exact.std_error == 0.0);

    const auto d8 = l1_distance_fN_f(32, 8, 2000, {32, 3, 0}, q);
    CHECK(d8.mean > 0.0);
}

TEST_CASE("ensemble persistence", "[gibbs][io]")
{
    const auto q = RadialQuadrature::for_modes(6);
    const auto e = make_ensemble(6, 4, 37, 17, q);
    const auto dir = std::filesystem::temp_directory_path() / "radwave_ensemble_test";
    std::filesystem::remove_all(dir);
    save_ensemble(e, dir);
    const auto back = load_ensemble(dir);
    CHECK(back.samples == e.samples);
    CHECK(back.weights == e.weights);
    CHECK(back.N_cutoff == 4);
    CHECK(back.metadata.seed == 17);
    CHECK(back.metadata.quadrature_nodes == q.size());
    CHECK(std::filesystem::file_size(dir / "samples.bin") == 37u * 6u * 16u);
    CHECK(std::filesystem::file_size(dir / "weights.bin") == 37u * 8u);

    // Same seed, same bytes.
    const auto again = make_ensemble(6, 4, 37, 17, q);
    CHECK(again.samples == e.samples);
    CHECK(again.weights == e.weights);
    std::filesystem::remove_all(dir);

    WeightedEnsemble bad = e;
    bad.weights.pop_back();
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}
