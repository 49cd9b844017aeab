#include <catch2/catch_amalgamated.hpp>

#include "radwave/invariance.hpp"

#include <cmath>

using namespace radwave;
using Catch::Approx;

TEST_CASE("observable validation", "[invariance][observables]")
{
    CHECK_THROWS_AS(ObservableSpec::projected_l2_sq(0).validate(8), InvalidArgument);
    CHECK_THROWS_AS(ObservableSpec::projected_l2_sq(9).validate(8), InvalidArgument);
    CHECK_THROWS_AS(ObservableSpec::coeff_moment(9, 2).validate(8), InvalidArgument);
    CHECK_THROWS_AS(ObservableSpec::coeff_moment(1, 0).validate(8), InvalidArgument);
    CHECK_NOTHROW(ObservableSpec::projected_l2_sq(8).validate(8));
    CHECK_NOTHROW(ObservableSpec::quartic_SN().validate(1));

    std::vector<ObservableSpec> six(6, ObservableSpec::l2_sq());
    CHECK_THROWS_AS(test_linear_invariance(8, 1.0, 1000, 1, six), InvalidArgument);
    CHECK_THROWS_AS(test_linear_invariance(8, 1.0, 1000, 1, {}), InvalidArgument);
}

TEST_CASE("batched observables match the scalar ones", "[invariance][observables]")
{
    const int n_max = 12, N = 10;
    const auto q = RadialQuadrature::for_modes(n_max);
    const EnsembleFlow flow(n_max, N, q);
    const auto samples = sample_mu_batch(n_max, 31, 7);
    Matrix re, im;
    pack_columns(samples, re, im);
    std::vector<ObservableSpec> all = default_linear_observables();
    all.push_back(ObservableSpec::coeff_moment(3, 4));
    for (const auto& obs : all) {
        const Vector v = obs.evaluate(re, im, flow);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            INFO(obs.name);
            CHECK(v(static_cast<Eigen::Index>(i)) == Approx(obs.evaluate(samples[i], N, q)).epsilon(1e-12));
        }
    }
}

TEST_CASE("linear invariance: trivial times", "[invariance][linear]")
{
    const auto r0 = test_linear_invariance(16, 0.0, 2000, 9);
    CHECK(r0.pass);
    CHECK(r0.max_state_change == 0.0);
    for (const auto& o : r0.observables)
        CHECK(o.z_score == 0.0);

    // S(2) is the identity on the eigenbasis.
    const auto r2 = test_linear_invariance(16, 2.0, 2000, 9);
    CHECK(r2.max_state_change <= 1e-12);
    CHECK(r2.metadata.N == 32);

    CHECK_THROWS_AS(test_linear_invariance(16, 1.0, 999, 9), InvalidArgument);
}

TEST_CASE("linear invariance: pushforward of mu", "[invariance][linear]")
{
    const auto r = test_linear_invariance(32, 0.7, 20000, 17);
    CHECK(r.pass);
    CHECK(r.ks.size() == 3);
    for (const auto& o : r.observables) {
        if (o.name != "coeff_moment(1,2)")
            continue;
        const double expect = 2.0 / (pi * pi);
        CHECK(std::abs(o.mean_before - expect) <= 4.0 * o.std_error);
    }
    // Modes above n_max are skipped.
    CHECK(test_linear_invariance(4, 0.7, 1000, 17).ks.size() == 1);
}

TEST_CASE("KS p-values are calibrated under the null", "[invariance][linear][ks]")
{
    // Under exact invariance the per-mode p-values are uniform, so about 1%
    // of them fall below 0.01.
    std::vector<double> pv;
    for (std::uint64_t seed = 1; seed <= 40; ++seed) {
        const auto r = test_linear_invariance(8, 0.7, 2000, 1000 + seed, {ObservableSpec::l2_sq()});
        for (const auto& k : r.ks) {
            pv.push_back(k.p_real);
            pv.push_back(k.p_imag);
        }
    }
    REQUIRE(pv.size() == 160);
    const auto below = std::count_if(pv.begin(), pv.end(), [](double p) { return p < 0.01; });
    const double mean = sample_mean(pv).mean;
    INFO("below 0.01: " << below << ", mean p " << mean);
    CHECK(below <= 7);
    CHECK(std::abs(mean - 0.5) <= 3.0 * std::sqrt(1.0 / 12.0 / 160.0));
}

TEST_CASE("rho invariance: preconditions and t = 0", "[invariance][rho]")
{
    RhoInvarianceOptions o;
    o.n_max = 8;
    CHECK_THROWS_AS(test_rho_invariance(10, 1.0, 1e-2, 100, 1, default_rho_observables(), o), InvalidArgument);
    CHECK_THROWS_AS(test_rho_invariance(4, 1.0, 0.0, 100, 1, default_rho_observables(), o), InvalidArgument);

    const auto r = test_rho_invariance(8, 0.0, 1e-2, 500, 3, default_rho_observables(), o);
    CHECK(r.pass);
    CHECK(r.bias.empty());
    for (const auto& obs : r.observables)
        CHECK(obs.z_score == 0.0);
}

TEST_CASE("rho invariance: small truncated flow", "[invariance][rho]")
{
    RhoInvarianceOptions o;
    o.n_max = 8;
    const auto r = test_rho_invariance(9, 0.5, 1e-2, 4000, 21, default_rho_observables(), o);
    CHECK(r.pass);
    CHECK(r.max_abs_z() <= z_threshold);
    REQUIRE(r.bias.size() == 3);
    CHECK(r.bias_pass);
    // Second-order splitting: the shift shrinks about 4x per halving.
    for (const auto& b : r.bias)
        CHECK(b.ratio == Approx(4.0).epsilon(0.2));
    CHECK(r.metadata.n_effective > 100.0);
}

TEST_CASE("rho invariance: a non-invariant map is rejected", "[invariance][rho]")
{
    RhoInvarianceOptions o;
    o.n_max = 8;
    o.flow = [](const CoeffVector& u) { return u * Complex(1.1, 0.0); };
    const auto r = test_rho_invariance(9, 1.0, 1e-2, 4000, 22, default_rho_observables(), o);
    CHECK_FALSE(r.pass);
    CHECK(r.bias.empty());

    o.flow = [](const CoeffVector& u) { return u; };
    const auto id = test_rho_invariance(9, 1.0, 1e-2, 500, 22, default_rho_observables(), o);
    CHECK(id.pass);
    CHECK(id.max_abs_z() == 0.0);
}

TEST_CASE("tail estimates", "[invariance][tails]")
{
    const auto r = tail_estimate({0.0, 1.0, 1.5, 2.0, 2.5}, 0.4, 5.0, 16, 10000, 70);
    for (const TailFit* f : {&r.hsigma, &r.strichartz}) {
        INFO(f->norm);
        CHECK(f->probability.front() == 1.0);
        for (std::size_t k = 1; k < f->probability.size(); ++k)
            CHECK(f->probability[k] <= f->probability[k - 1]);
        CHECK(f->fit.slope < 0.0);
    }

    CHECK_THROWS_AS(tail_estimate({10, 20, 30, 40}, 0.4, 5.0, 16, 10000, 70), InsufficientExceedances);
    CHECK_THROWS_AS(tail_estimate({}, 0.4, 5.0, 16, 9999, 70), InvalidArgument);
    CHECK_THROWS_AS(tail_estimate({1, 2, 3}, 0.4, 5.0, 16, 10000, 70), InvalidArgument);
    CHECK_THROWS_AS(tail_estimate({1, 3, 2, 4}, 0.4, 5.0, 16, 10000, 70), InvalidArgument);
}

TEST_CASE("tail thresholds without enough exceedances are dropped", "[invariance][tails]")
{
    const auto r = tail_estimate({0.5, 1.0, 1.5, 8.0}, 0.4, 5.0, 16, 10000, 71);
    CHECK(r.hsigma.dropped == std::vector<double>{8.0});
    CHECK(r.hsigma.exceedances.back() < min_exceedances);
}

TEST_CASE("automatic tail grid", "[invariance][tails]")
{
    TailOptions o;
    o.grid_points = 8;
    const auto r = tail_estimate({}, 0.4, 5.0, 16, 10000, 72, o);
    CHECK(r.hsigma.D.size() == 8);
    CHECK(r.hsigma.probability.front() == Approx(0.5).margin(0.01));
    CHECK(r.hsigma.fit.r_squared >= 0.9);
    CHECK(r.strichartz.fit.r_squared >= 0.9);
}

TEST_CASE("tail slopes are stable when n_max doubles", "[invariance][tails]")
{
    const auto a = tail_estimate({}, 0.4, 5.0, 16, 10000, 73);
    const auto b = tail_estimate({}, 0.4, 5.0, 32, 10000, 73);
    CHECK(std::abs(b.hsigma.fit.slope / a.hsigma.fit.slope - 1.0) < 0.25);
    CHECK(std::abs(b.strichartz.fit.slope / a.strichartz.fit.slope - 1.0) < 0.25);
}

TEST_CASE("convergence: reference level and monotonicity", "[invariance][convergence]")
{
    ConvergenceOptions o;
    o.n_max = 32;
    o.bootstrap = 50;
    o.stability_check = false;
    const auto same = flow_convergence(20, {32}, 32, 0.05, 1e-3, 0.7, 81, o);
    CHECK(same.rows.front().max_gap == 0.0);

    const auto r = flow_convergence(60, {4, 8, 16}, 32, 0.05, 1e-3, 0.7, 82, o);
    CHECK(r.monotone());
    for (const auto& row : r.rows)
        CHECK(row.max_gap > 0.0);
    CHECK(r.rows[2].max_gap < r.rows[0].max_gap);

    CHECK_THROWS_AS(flow_convergence(20, {64}, 32, 0.05, 1e-3, 0.7, 81, o), InvalidArgument);
    CHECK_THROWS_AS(flow_convergence(20, {8}, 32, 1.5, 1e-3, 0.7, 81, o), InvalidArgument);
}

TEST_CASE("convergence: bootstrap error of the max", "[invariance][convergence]")
{
    const std::vector<double> flat(50, 2.0);
    CHECK(detail::bootstrap_max_se(flat, 100, 1) == 0.0);
    std::vector<double> x;
    for (int i = 0; i < 50; ++i)
        x.push_back(i);
    const double se = detail::bootstrap_max_se(x, 200, 1);
    CHECK(se > 0.0);
    CHECK(se < 5.0);
}

// Stability of the sample-max proxy under doubling of the sample. Registered
// as its own ctest entry.
TEST_CASE("convergence: doubling the sample keeps the max within 10%", "[.][proxy_stability]")
{
    const auto r = flow_convergence(200, {8, 16, 32}, 64, 0.1, 1e-3, 0.7, 808);
    std::string gaps;
    for (const auto& row : r.rows)
        gaps += fmt::format("N {}: {:.4f} -> {:.4f}\n", row.N, row.max_gap, row.max_gap_doubled);
    INFO(gaps);
    CHECK(r.stable());
}

TEST_CASE("globalization schedule", "[invariance][schedule]")
{
    const auto sp = schedule_params_for(5.0);
    CHECK(sp.gamma == Approx(0.2));
    CHECK(sp.gamma1 == Approx(20.0));
    CHECK(exponent_gamma2(5.0) == Approx(1.0 / 30.0));

    const auto rows = globalization_schedule(sp, 200);
    REQUIRE(rows.size() == 200);
    CHECK(rows.front().j == 1);
    CHECK(rows.front().D == Approx(std::sqrt(2.0)));
    CHECK(rows.front().tau1 == Approx(std::pow(1.0 + std::sqrt(2.0), -20.0)));
    for (std::size_t k = 1; k < rows.size(); ++k) {
        CHECK(rows[k].T > rows[k - 1].T);
        CHECK(rows[k].D > rows[k - 1].D);
    }
    CHECK(schedule_time(sp, 0) == 0.0);
    CHECK(schedule_time(sp, 200) == rows.back().T);

    ScheduleParams g2{1, 2.0, 1.0, 1.0, 0.2};
    CHECK(globalization_schedule(g2, 4)[3].D == Approx(std::sqrt(3.0)));

    // tau binds when c is small.
    ScheduleParams small{1, 20.0, 1.0, 1e-12, 0.2};
    CHECK(schedule_tau1(small, 1.0) == Approx(1e-12 * std::pow(2.0, -0.2)));

    CHECK_THROWS_AS(globalization_schedule(sp, 0), InvalidArgument);
    CHECK_THROWS_AS(schedule_params_for(6.0), InvalidArgument);
    CHECK_THROWS_AS(globalization_schedule(ScheduleParams{1, 0.1, 1.0, 1.0, 0.2}, 5), InvalidArgument);
}

TEST_CASE("volume preservation on few modes", "[invariance][volume]")
{
    for (int N_small = 1; N_small <= 3; ++N_small) {
        const auto probe = sample_mu({N_small, 202, static_cast<std::uint64_t>(N_small)}) * Complex(3.0, 0.0);
        for (auto s : {Substep::full, Substep::kick, Substep::rotation}) {
            const auto r = volume_preservation_check(N_small, 0.05, probe, s);
            INFO(N_small << " " << substep_name(s));
            CHECK(r.dimension == 2 * N_small);
            CHECK(std::abs(r.determinant - 1.0) <= 1e-8);
        }
    }
    CHECK_THROWS_AS(volume_preservation_check(4, 0.1, CoeffVector(4)), InvalidArgument);
}

TEST_CASE("report serialization", "[invariance][io]")
{
    const auto r = test_linear_invariance(8, 0.3, 1000, 5);
    const auto j = to_json(r);
    CHECK(j["test"] == "linear");
    CHECK(j["pass"] == r.pass);
    const auto csv = report_csv(r);
    CHECK(csv.find("l2_sq") != std::string::npos);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + static_cast<long>(r.observables.size()));

    const auto rows = globalization_schedule(schedule_params_for(5.0), 3);
    const auto sc = schedule_csv(rows);
    CHECK(sc.rfind("j,D,tau1,T\n", 0) == 0);
    CHECK(std::count(sc.begin(), sc.end(), '\n') == 4);
}
