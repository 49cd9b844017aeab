#pragma once

// Experiment configuration, validation and execution with persisted results.
//
// A run writes its result files into the output directory and then
// manifest.json, which echoes the effective configuration and lists every
// result file with its SHA-256. Result files depend only on the
// configuration; timestamps live in the manifest alone.

#include "radwave/dynamics.hpp"
#include "radwave/errors.hpp"
#include "radwave/gibbs.hpp"
#include "radwave/invariance.hpp"
#include "radwave/io.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#ifndef RADWAVE_VERSION
#define RADWAVE_VERSION "0.0.0"
#endif

namespace radwave {

inline constexpr const char* version_string = RADWAVE_VERSION;

inline const std::vector<std::string>& experiment_names()
{
    static const std::vector<std::string> names{"sample", "evolve", "linear-invariance", "rho-invariance",
                                                "tails",  "converge", "schedule", "volume"};
    return names;
}

/// Every tunable of every experiment. Optional fields fall back to a value
/// derived from the others (see the effective_* helpers).
struct ExperimentConfig {
    std::string experiment = "schedule";
    std::string out = "out";
    std::optional<std::uint64_t> seed;

    int n_max = 32;
    int N = 16;
    /// Radial quadrature nodes; 0 means max(64, 8 n_max).
    int K = 0;
    double dt = 1e-3;
    /// Final time; unset means the experiment default (see effective_t).
    std::optional<double> t;
    double p = 5.0;
    double sigma = 0.4;
    /// Sobolev index of the convergence gaps; unset means 3/2 - 4/p.
    std::optional<double> s;
    std::size_t sample_count = 20000;
    int t_nodes = 64;

    // evolve
    int record_every = 10;

    // tails
    std::vector<double> D_values;

    // converge
    std::vector<int> N_values{8, 16, 32};
    int N_ref = 64;
    double membership_D = 4.0;

    // schedule
    long long i = 1;
    long long j_max = 10000;
    double c = 1.0;
    double c1 = 1.0;
    std::optional<double> gamma;
    std::optional<double> gamma1;

    // volume
    int N_small = 2;

    /// Exit nonzero when the experiment's own checks fail.
    bool check = true;
};

inline bool is_stochastic(const std::string& experiment)
{
    return experiment != "schedule" && experiment != "volume";
}

inline double effective_t(const ExperimentConfig& c)
{
    if (c.t)
        return *c.t;
    if (c.experiment == "evolve")
        return 2.0;
    if (c.experiment == "converge")
        return 0.1;
    if (c.experiment == "linear-invariance")
        return 1.3;
    return 1.0;
}

inline double effective_s(const ExperimentConfig& c) { return c.s ? *c.s : 1.5 - 4.0 / c.p; }
inline int effective_K(const ExperimentConfig& c) { return c.K > 0 ? c.K : RadialQuadrature::default_nodes(c.n_max); }

inline ScheduleParams effective_schedule(const ExperimentConfig& c)
{
    ScheduleParams sp;
    sp.i = c.i;
    sp.c = c.c;
    sp.c1 = c.c1;
    const bool p_ok = c.p > 4.0 && c.p < 6.0;
    sp.gamma = c.gamma ? *c.gamma : (p_ok ? exponent_gamma(c.p) : 0.2);
    sp.gamma1 = c.gamma1 ? *c.gamma1 : (p_ok ? exponent_gamma1(c.p) : 20.0);
    return sp;
}

// ---------------------------------------------------------------------------
// JSON round trip

inline nlohmann::json to_json(const ExperimentConfig& c)
{
    const auto sp = effective_schedule(c);
    nlohmann::json j{{"experiment", c.experiment},
                     {"out", c.out},
                     {"n_max", c.n_max},
                     {"N", c.N},
                     {"K", effective_K(c)},
                     {"dt", c.dt},
                     {"t", effective_t(c)},
                     {"p", c.p},
                     {"sigma", c.sigma},
                     {"s", effective_s(c)},
                     {"sample_count", c.sample_count},
                     {"t_nodes", c.t_nodes},
                     {"record_every", c.record_every},
                     {"D_values", c.D_values},
                     {"N_values", c.N_values},
                     {"N_ref", c.N_ref},
                     {"membership_D", c.membership_D},
                     {"i", c.i},
                     {"j_max", c.j_max},
                     {"c", c.c},
                     {"c1", c.c1},
                     {"gamma", sp.gamma},
                     {"gamma1", sp.gamma1},
                     {"N_small", c.N_small},
                     {"check", c.check}};
    j["seed"] = c.seed ? nlohmann::json(*c.seed) : nlohmann::json(nullptr);
    return j;
}

/// Reads a configuration object. Unknown keys are rejected.
inline ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig c = {})
{
    if (!j.is_object())
        throw InvalidArgument("config: expected a JSON object");
    static const std::set<std::string> known{
        "experiment", "out",     "seed",         "n_max",    "N",     "K",     "dt",   "t",
        "p",          "sigma",   "s",            "sample_count", "t_nodes", "record_every", "D_values",
        "N_values",   "N_ref",   "membership_D", "i",        "j_max", "c",     "c1",   "gamma",
        "gamma1",     "N_small", "check"};
    for (const auto& [key, value] : j.items())
        if (!known.count(key))
            throw InvalidArgument("config: unknown key '" + key + "'");
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key))
                j.at(key).get_to(field);
        };
        auto get_opt = [&](const char* key, auto& field) {
            if (j.contains(key) && !j.at(key).is_null())
                field = j.at(key).get<typename std::remove_reference_t<decltype(field)>::value_type>();
        };
        get("experiment", c.experiment);
        get("out", c.out);
        get_opt("seed", c.seed);
        get("n_max", c.n_max);
        get("N", c.N);
        get("K", c.K);
        get("dt", c.dt);
        get_opt("t", c.t);
        get("p", c.p);
        get("sigma", c.sigma);
        get_opt("s", c.s);
        get("sample_count", c.sample_count);
        get("t_nodes", c.t_nodes);
        get("record_every", c.record_every);
        get("D_values", c.D_values);
        get("N_values", c.N_values);
        get("N_ref", c.N_ref);
        get("membership_D", c.membership_D);
        get("i", c.i);
        get("j_max", c.j_max);
        get("c", c.c);
        get("c1", c.c1);
        get_opt("gamma", c.gamma);
        get_opt("gamma1", c.gamma1);
        get("N_small", c.N_small);
        get("check", c.check);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("config: ") + e.what());
    }
    return c;
}

// ---------------------------------------------------------------------------
// Validation

struct Violation {
    std::string field;
    std::string value;
    std::string constraint;
};

inline std::string describe(const Violation& v) { return v.field + " = " + v.value + ": " + v.constraint; }

/// Empty iff run_experiment accepts the configuration.
inline std::vector<Violation> validate_config(const ExperimentConfig& c)
{
    std::vector<Violation> out;
    auto check = [&](bool ok, const char* field, const auto& value, std::string constraint) {
        if (!ok)
            out.push_back({field, fmt::format("{}", value), std::move(constraint)});
    };
    const auto& names = experiment_names();
    const std::string& e = c.experiment;
    check(std::find(names.begin(), names.end(), e) != names.end(), "experiment", e,
          "experiment must be one of sample, evolve, linear-invariance, rho-invariance, tails, converge, schedule, "
          "volume");
    if (is_stochastic(e))
        check(c.seed.has_value(), "seed", "unset", "seed must be given for stochastic experiments");
    check(!c.out.empty(), "out", c.out, "out must name a directory");
    check(c.n_max >= 1, "n_max", c.n_max, "n_max >= 1");
    check(c.N >= 1, "N", c.N, "N >= 1");
    check(c.K == 0 || c.K >= 2, "K", c.K, "K >= 2 (or 0 for the default)");
    check(c.dt > 0.0 && std::isfinite(c.dt), "dt", c.dt, "dt > 0");
    const double t = effective_t(c);
    check(std::isfinite(t), "t", t, "t must be finite");
    if (c.dt > 0.0)
        check(std::abs(t) / c.dt <= 1e8, "t", t, "|t| / dt <= 1e8");
    check(c.p > 4.0 && c.p < 6.0, "p", c.p, "p must lie in (4,6)");
    check(c.sigma > 0.0 && c.sigma < 0.5, "sigma", c.sigma, "sigma must lie in (0,1/2)");
    check(std::isfinite(effective_s(c)), "s", effective_s(c), "s must be finite");
    check(c.t_nodes >= 32, "t_nodes", c.t_nodes, "t_nodes >= 32");

    if (e == "sample")
        check(c.sample_count >= 1, "sample_count", c.sample_count, "sample_count >= 1");
    if (e == "evolve") {
        check(c.record_every >= 1, "record_every", c.record_every, "record_every >= 1");
    }
    if (e == "linear-invariance")
        check(c.sample_count >= 1000, "sample_count", c.sample_count, "sample_count >= 1000");
    if (e == "rho-invariance") {
        check(c.sample_count >= 1, "sample_count", c.sample_count, "sample_count >= 1");
        check(c.N <= c.n_max + 1, "N", c.N, "N <= n_max + 1");
        check(c.n_max >= 4, "n_max", c.n_max, "n_max >= 4 (projected_l2_sq(4) is observed)");
    }
    if (e == "tails") {
        check(c.sample_count >= 10000, "sample_count", c.sample_count, "sample_count >= 1e4");
        check(c.D_values.empty() || c.D_values.size() >= 4, "D_values", c.D_values.size(),
              "D_values needs at least 4 entries (or none for an automatic grid)");
        bool inc = true;
        for (std::size_t k = 1; k < c.D_values.size(); ++k)
            inc = inc && c.D_values[k] > c.D_values[k - 1];
        check(inc, "D_values", "list", "D_values must be increasing");
    }
    if (e == "converge") {
        check(c.sample_count >= 2, "sample_count", c.sample_count, "sample_count >= 2");
        check(!c.N_values.empty(), "N_values", "empty", "N_values must not be empty");
        bool ok = true;
        for (int N : c.N_values)
            ok = ok && N >= 1 && N < c.N_ref;
        check(ok, "N_values", "list", "every N must satisfy 1 <= N < N_ref");
        check(c.N_ref <= 2 * c.n_max, "N_ref", c.N_ref, "N_ref <= 2 n_max");
        check(t > 0.0 && t <= 1.0, "t", t, "t must lie in (0,1] for converge");
        check(c.dt <= t, "dt", c.dt, "dt <= t");
        check(c.membership_D > 0.0, "membership_D", c.membership_D, "membership_D > 0");
    }
    if (e == "schedule") {
        const auto sp = effective_schedule(c);
        check(c.i >= 0, "i", c.i, "i >= 0");
        check(c.j_max >= 1, "j_max", c.j_max, "j_max >= 1");
        check(c.j_max <= 100000000, "j_max", c.j_max, "j_max <= 1e8");
        check(c.c > 0.0, "c", c.c, "c > 0");
        check(c.c1 > 0.0, "c1", c.c1, "c1 > 0");
        check(sp.gamma > 0.0, "gamma", sp.gamma, "gamma > 0");
        check(sp.gamma1 >= sp.gamma, "gamma1", sp.gamma1, "gamma1 >= gamma");
    }
    if (e == "volume")
        check(c.N_small >= 1 && c.N_small <= 3, "N_small", c.N_small, "N_small must lie in [1,3]");
    return out;
}

// ---------------------------------------------------------------------------
// Manifest

struct OutputFile {
    std::string name;
    std::string sha256;
    std::uintmax_t bytes = 0;
};

struct RunManifest {
    nlohmann::json config;
    std::string version = version_string;
    std::string started;
    std::string finished;
    std::vector<OutputFile> files;
    bool passed = true;
    std::vector<std::string> failed_checks;
};

inline std::string sha256_hex(std::string_view data)
{
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw IoError("sha256: digest failed");
    std::string hex;
    for (unsigned i = 0; i < len; ++i)
        hex += fmt::format("{:02x}", md[i]);
    return hex;
}

inline std::string utc_timestamp()
{
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline nlohmann::json to_json(const RunManifest& m)
{
    auto files = nlohmann::json::array();
    for (const auto& f : m.files)
        files.push_back({{"name", f.name}, {"sha256", f.sha256}, {"bytes", f.bytes}});
    return {{"config", m.config},     {"version", m.version}, {"started", m.started},
            {"finished", m.finished}, {"files", files},       {"passed", m.passed},
            {"failed_checks", m.failed_checks}};
}

/// Full effective defaults, as used when a field is not given.
inline nlohmann::json describe_defaults()
{
    nlohmann::json j = to_json(ExperimentConfig{});
    j.erase("experiment");
    j["t_by_experiment"] = nlohmann::json::object();
    for (const auto& e : experiment_names()) {
        ExperimentConfig c;
        c.experiment = e;
        j["t_by_experiment"][e] = effective_t(c);
    }
    j.erase("t");
    j["K_rule"] = "max(64, 8 n_max)";
    j["z_threshold"] = z_threshold;
    j["ks_threshold"] = ks_threshold;
    j["blow_up_threshold"] = blow_up_threshold;
    j["min_effective_samples"] = min_effective_samples;
    j["min_exceedances"] = min_exceedances;
    return j;
}

// ---------------------------------------------------------------------------
// Execution

namespace detail {

class RunWriter {
public:
    explicit RunWriter(std::filesystem::path dir) : dir_(std::move(dir)) {}

    void write(const std::string& name, std::string_view bytes)
    {
        write_file_atomic(dir_ / name, bytes);
        files_.push_back({name, sha256_hex(bytes), bytes.size()});
    }
    void write_json(const std::string& name, const nlohmann::json& j) { write(name, j.dump(2) + "\n"); }

    const std::filesystem::path& dir() const { return dir_; }
    std::vector<OutputFile>& files() { return files_; }

private:
    std::filesystem::path dir_;
    std::vector<OutputFile> files_;
};

struct Outcome {
    std::vector<std::string> failed;
    void expect(bool ok, std::string what)
    {
        if (!ok)
            failed.push_back(std::move(what));
    }
};

inline void run_sample(const ExperimentConfig& c, const RadialQuadrature& q, RunWriter& w, Outcome&)
{
    const auto e = make_ensemble(c.n_max, c.N, c.sample_count, *c.seed, q);
    save_ensemble(e, w.dir() / "ensemble");
    for (const char* f : {"manifest.json", "samples.bin", "weights.bin"}) {
        const auto bytes = read_all(w.dir() / "ensemble" / f);
        w.files().push_back({std::string("ensemble/") + f, sha256_hex({bytes.data(), bytes.size()}), bytes.size()});
    }
    std::vector<double> ww(e.weights);
    const auto est = self_normalized_mean(ww, std::vector<double>(ww.size(), 1.0));
    w.write_json("results.json", {{"count", e.size()},
                                  {"n_max", c.n_max},
                                  {"N_cutoff", c.N},
                                  {"mean_weight", sample_mean(ww).mean},
                                  {"n_effective", est.n_effective}});
}

inline void run_evolve(const ExperimentConfig& c, const RadialQuadrature& q, RunWriter& w, Outcome& out)
{
    FlowParams fp;
    fp.N = c.N;
    fp.dt = c.dt;
    fp.t_final = effective_t(c);
    fp.quadrature = q;
    fp.record_every = c.record_every;
    const auto u0 = sample_mu({c.n_max, *c.seed, 0});
    const auto tr = evolve_psi_N(u0, fp);
    double drift = 0.0;
    for (double e : tr.energies)
        drift = std::max(drift, std::abs(e - tr.energies.front()) / std::max(tr.energies.front(), 1.0));
    w.write("results.csv", trajectory_csv(tr, c.sigma));
    w.write_json("results.json", {{"initial", to_json(u0)},
                                  {"final", to_json(tr.states.back())},
                                  {"t_final", tr.times.back()},
                                  {"energy_initial", tr.energies.front()},
                                  {"energy_final", tr.energies.back()},
                                  {"max_relative_energy_drift", drift}});
    out.expect(drift <= 1e-4, fmt::format("relative energy drift {:.3e} exceeds 1e-4", drift));
}

inline void run_linear(const ExperimentConfig& c, RunWriter& w, Outcome& out)
{
    const double t = effective_t(c);
    const auto r = test_linear_invariance(c.n_max, t, c.sample_count, *c.seed, default_linear_observables(),
                                          effective_K(c));
    w.write("results.csv", report_csv(r));
    w.write_json("results.json", to_json(r));
    out.expect(r.pass, fmt::format("max |z| = {:.3f} above {}", r.max_abs_z(), z_threshold));
    out.expect(r.ks_pass, "a per-mode KS p-value is below 0.01");
    if (std::remainder(t, 2.0) == 0.0)
        out.expect(r.max_state_change <= 1e-12, "states changed under a full period");
}

inline void run_rho(const ExperimentConfig& c, RunWriter& w, Outcome& out)
{
    RhoInvarianceOptions o;
    o.n_max = c.n_max;
    o.quadrature_nodes = effective_K(c);
    const auto r = test_rho_invariance(c.N, effective_t(c), c.dt, c.sample_count, *c.seed, default_rho_observables(), o);
    w.write("results.csv", report_csv(r));
    w.write_json("results.json", to_json(r));
    out.expect(r.pass, fmt::format("max |z| = {:.3f} above {}", r.max_abs_z(), z_threshold));
    out.expect(r.bias_pass, "integrator bias did not shrink by a factor >= 2 at half the step");
}

inline void run_tails(const ExperimentConfig& c, RunWriter& w, Outcome& out)
{
    TailOptions o;
    o.quadrature_nodes = effective_K(c);
    o.t_nodes = c.t_nodes;
    const auto r = tail_estimate(c.D_values, c.sigma, c.p, c.n_max, c.sample_count, *c.seed, o);
    w.write("results.csv", tail_csv(r));
    w.write_json("results.json", to_json(r));
    for (const TailFit* f : {&r.hsigma, &r.strichartz}) {
        out.expect(f->fit.slope < 0.0, f->norm + ": tail slope is not negative");
        out.expect(f->fit.r_squared >= 0.9, fmt::format("{}: R^2 = {:.4f} below 0.9", f->norm, f->fit.r_squared));
    }
}

inline void run_converge(const ExperimentConfig& c, RunWriter& w, Outcome& out)
{
    ConvergenceOptions o;
    o.n_max = c.n_max;
    o.quadrature_nodes = effective_K(c);
    o.membership_D = c.membership_D;
    o.sigma = c.sigma;
    o.p = c.p;
    const auto r = flow_convergence(c.sample_count, c.N_values, c.N_ref, effective_t(c), c.dt, effective_s(c),
                                    *c.seed, o);
    w.write("results.csv", convergence_csv(r));
    w.write_json("results.json", to_json(r));
    out.expect(r.monotone(), "gaps are not nonincreasing in N within 2 SE");
    out.expect(r.stable(), "doubling the sample raised a max gap by more than 10%");
}

inline void run_schedule(const ExperimentConfig& c, RunWriter& w, Outcome& out)
{
    const auto sp = effective_schedule(c);
    const auto rows = globalization_schedule(sp, c.j_max);
    bool increasing = rows.front().T > 0.0;
    for (std::size_t k = 1; k < rows.size(); ++k)
        increasing = increasing && rows[k].T > rows[k - 1].T;
    w.write("results.csv", schedule_csv(rows));
    w.write_json("results.json", {{"i", sp.i},
                                  {"gamma", sp.gamma},
                                  {"gamma1", sp.gamma1},
                                  {"c", sp.c},
                                  {"c1", sp.c1},
                                  {"j_max", c.j_max},
                                  {"T_final", rows.back().T},
                                  {"T_over_sqrt_j_final", rows.back().T / std::sqrt(static_cast<double>(c.j_max))},
                                  {"strictly_increasing", increasing}});
    out.expect(increasing, "T_{i,j} is not strictly increasing");
}

inline void run_volume(const ExperimentConfig& c, RunWriter& w, Outcome& out)
{
    // Fixed probe: c_n = (0.6 - 0.3 i) / n on N_small modes.
    CoeffVector probe(c.N_small);
    for (int n = 1; n <= c.N_small; ++n)
        probe.at_mode(n) = Complex(0.6, -0.3) / static_cast<double>(n);
    std::string csv = "substep,dimension,determinant,tolerance\n";
    auto rows = nlohmann::json::array();
    for (auto [s, tol] : {std::pair{Substep::full, 1e-6}, std::pair{Substep::kick, 1e-8},
                          std::pair{Substep::rotation, 1e-8}}) {
        const auto r = volume_preservation_check(c.N_small, c.dt, probe, s);
        csv += fmt::format("{},{},{:.17g},{:g}\n", substep_name(s), r.dimension, r.determinant, tol);
        rows.push_back({{"substep", substep_name(s)}, {"dimension", r.dimension}, {"determinant", r.determinant}});
        out.expect(std::abs(r.determinant - 1.0) <= tol,
                   fmt::format("{} substep: |det - 1| = {:.3e} above {:g}", substep_name(s),
                               std::abs(r.determinant - 1.0), tol));
    }
    w.write("results.csv", csv);
    w.write_json("results.json", {{"N_small", c.N_small}, {"dt", c.dt}, {"probe", to_json(probe)}, {"rows", rows}});
}

} // namespace detail

/// Validates, runs, writes results and manifest.json. Throws InvalidArgument
/// naming every violation when the configuration is rejected.
inline RunManifest run_experiment(const ExperimentConfig& c)
{
    const auto violations = validate_config(c);
    if (!violations.empty()) {
        std::string msg = "invalid config:";
        for (const auto& v : violations)
            msg += "\n  " + describe(v);
        throw InvalidArgument(msg);
    }
    RunManifest m;
    m.config = to_json(c);
    m.started = utc_timestamp();
    std::filesystem::create_directories(c.out);
    detail::RunWriter w(c.out);
    detail::Outcome out;
    const auto& e = c.experiment;
    if (e == "sample" || e == "evolve") {
        const auto q = RadialQuadrature::gauss_legendre(effective_K(c));
        if (e == "sample")
            detail::run_sample(c, q, w, out);
        else
            detail::run_evolve(c, q, w, out);
    } else if (e == "linear-invariance") {
        detail::run_linear(c, w, out);
    } else if (e == "rho-invariance") {
        detail::run_rho(c, w, out);
    } else if (e == "tails") {
        detail::run_tails(c, w, out);
    } else if (e == "converge") {
        detail::run_converge(c, w, out);
    } else if (e == "schedule") {
        detail::run_schedule(c, w, out);
    } else if (e == "volume") {
        detail::run_volume(c, w, out);
    }
    m.files = w.files();
    m.failed_checks = out.failed;
    m.passed = !c.check || out.failed.empty();
    m.finished = utc_timestamp();
    write_file_atomic(std::filesystem::path(c.out) / "manifest.json", to_json(m).dump(2) + "\n");
    return m;
}

} // namespace radwave
