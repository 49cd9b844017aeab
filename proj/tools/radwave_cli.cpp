// radwave: run one experiment and write its results plus manifest.json.
//
//   radwave schedule --out runs/sched --j_max 10
//   radwave rho-invariance --seed 7 --N 16 --out runs/rho
//   radwave --config cfg.json tails --seed 3
//   radwave describe-defaults

#include "radwave/harness.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <fstream>
#include <iostream>
#include <optional>

namespace {

struct Overrides {
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<int> n_max, N, K, t_nodes, record_every, N_ref, N_small;
    std::optional<double> dt, t, p, sigma, s, membership_D, c, c1, gamma, gamma1;
    std::optional<std::size_t> sample_count;
    std::optional<long long> i, j_max;
    std::optional<std::vector<double>> D_values;
    std::optional<std::vector<int>> N_values;
    std::optional<bool> check;

    void apply(radwave::ExperimentConfig& cfg) const
    {
        auto set = [](auto& dst, const auto& src) {
            if (src)
                dst = *src;
        };
        set(cfg.out, out);
        if (seed)
            cfg.seed = seed;
        set(cfg.n_max, n_max);
        set(cfg.N, N);
        set(cfg.K, K);
        set(cfg.t_nodes, t_nodes);
        set(cfg.record_every, record_every);
        set(cfg.N_ref, N_ref);
        set(cfg.N_small, N_small);
        set(cfg.dt, dt);
        if (t)
            cfg.t = t;
        set(cfg.p, p);
        set(cfg.sigma, sigma);
        if (s)
            cfg.s = s;
        set(cfg.membership_D, membership_D);
        set(cfg.c, c);
        set(cfg.c1, c1);
        if (gamma)
            cfg.gamma = gamma;
        if (gamma1)
            cfg.gamma1 = gamma1;
        set(cfg.sample_count, sample_count);
        set(cfg.i, i);
        set(cfg.j_max, j_max);
        set(cfg.D_values, D_values);
        set(cfg.N_values, N_values);
        set(cfg.check, check);
    }
};

template <class T>
void add(CLI::App& app, const std::string& flag, std::optional<T>& dst, const std::string& help)
{
    app.add_option_function<T>(flag, [&dst](const T& v) { dst = v; }, help);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Truncated radial cubic wave experiments"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(radwave::version_string));

    std::string config_path;
    Overrides ov;
    app.add_option("--config", config_path, "JSON configuration file; flags override its values")
        ->check(CLI::ExistingFile);
    add(app, "--out", ov.out, "output directory");
    add(app, "--seed", ov.seed, "RNG seed (required for stochastic experiments)");
    add(app, "--n_max", ov.n_max, "number of radial modes");
    add(app, "--N", ov.N, "cutoff level of S_N");
    add(app, "--K", ov.K, "radial quadrature nodes (0: max(64, 8 n_max))");
    add(app, "--dt", ov.dt, "time step");
    add(app, "--t", ov.t, "final time");
    add(app, "--p", ov.p, "Lebesgue exponent in (4,6)");
    add(app, "--sigma", ov.sigma, "Sobolev index of the data norm");
    add(app, "--s", ov.s, "Sobolev index of the convergence gap (default 3/2 - 4/p)");
    add(app, "--sample_count", ov.sample_count, "number of samples");
    add(app, "--t_nodes", ov.t_nodes, "time nodes of the space-time norm");
    add(app, "--record_every", ov.record_every, "trajectory output stride (evolve)");
    add(app, "--D_values", ov.D_values, "tail thresholds (tails)");
    add(app, "--N_values", ov.N_values, "cutoff levels compared (converge)");
    add(app, "--N_ref", ov.N_ref, "reference level (converge)");
    add(app, "--membership_D", ov.membership_D, "data bound D of A(D) (converge)");
    add(app, "--i", ov.i, "ladder index i (schedule)");
    add(app, "--j_max", ov.j_max, "ladder length (schedule)");
    add(app, "--c", ov.c, "constant c of tau");
    add(app, "--c1", ov.c1, "constant c1 of tau1");
    add(app, "--gamma", ov.gamma, "exponent gamma (default 1 - 4/p)");
    add(app, "--gamma1", ov.gamma1, "exponent gamma1 (default from p)");
    add(app, "--N_small", ov.N_small, "cutoff of the volume probe (1..3)");
    add(app, "--check", ov.check, "exit nonzero when a check fails (default true)");
    app.fallthrough();

    std::string chosen;
    for (const auto& name : radwave::experiment_names())
        app.add_subcommand(name, "run the " + name + " experiment")->callback([&chosen, name] { chosen = name; });
    bool defaults = false;
    app.add_subcommand("describe-defaults", "print the effective defaults as JSON")->callback([&] { defaults = true; });

    CLI11_PARSE(app, argc, argv);

    if (defaults) {
        std::cout << radwave::describe_defaults().dump(2) << "\n";
        return 0;
    }
    try {
        radwave::ExperimentConfig cfg;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            cfg = radwave::config_from_json(nlohmann::json::parse(in));
        }
        ov.apply(cfg);
        cfg.experiment = chosen;
        const auto m = radwave::run_experiment(cfg);
        for (const auto& f : m.files)
            std::cout << f.sha256 << "  " << f.name << "\n";
        for (const auto& msg : m.failed_checks)
            std::cerr << "check failed: " << msg << "\n";
        return m.passed ? 0 : 1;
    } catch (const radwave::InvalidArgument& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
