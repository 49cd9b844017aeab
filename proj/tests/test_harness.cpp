#include <catch2/catch_amalgamated.hpp>

#include "radwave/harness.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace radwave;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    const auto p = fs::temp_directory_path() / ("radwave_harness_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool has_field(const std::vector<Violation>& v, const std::string& field)
{
    return std::any_of(v.begin(), v.end(), [&](const Violation& x) { return x.field == field; });
}

} // namespace

TEST_CASE("config validation", "[harness][config]")
{
    ExperimentConfig c;
    c.experiment = "rho-invariance";
    c.seed = 1;
    CHECK(validate_config(c).empty());

    auto bad = c;
    bad.p = 7.0;
    auto v = validate_config(bad);
    REQUIRE(v.size() == 1);
    CHECK(v[0].field == "p");
    CHECK(v[0].constraint == "p must lie in (4,6)");

    bad = c;
    bad.dt = -0.1;
    bad.sample_count = 0;
    v = validate_config(bad);
    CHECK(has_field(v, "dt"));
    CHECK(has_field(v, "sample_count"));

    bad = c;
    bad.seed.reset();
    CHECK(has_field(validate_config(bad), "seed"));

    bad = c;
    bad.N = 40;
    CHECK(has_field(validate_config(bad), "N"));

    bad = c;
    bad.experiment = "nope";
    CHECK(has_field(validate_config(bad), "experiment"));

    ExperimentConfig sched;
    CHECK(validate_config(sched).empty());
    sched.j_max = 0;
    CHECK(has_field(validate_config(sched), "j_max"));

    ExperimentConfig conv;
    conv.experiment = "converge";
    conv.seed = 2;
    conv.N_values = {8, 64};
    CHECK(has_field(validate_config(conv), "N_values"));

    ExperimentConfig vol;
    vol.experiment = "volume";
    vol.N_small = 4;
    CHECK(has_field(validate_config(vol), "N_small"));
}

TEST_CASE("run_experiment lists every violation", "[harness][config]")
{
    ExperimentConfig c;
    c.experiment = "tails";
    c.p = 3.0;
    c.dt = 0.0;
    c.out = scratch("invalid").string();
    try {
        run_experiment(c);
        FAIL("expected InvalidArgument");
    } catch (const InvalidArgument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("seed") != std::string::npos);
        CHECK(msg.find("p must lie in (4,6)") != std::string::npos);
        CHECK(msg.find("dt > 0") != std::string::npos);
    }
    CHECK_FALSE(fs::exists(c.out));
}

TEST_CASE("effective defaults", "[harness][config]")
{
    ExperimentConfig c;
    CHECK(effective_s(c) == Catch::Approx(0.7));
    CHECK(effective_K(c) == 256);
    c.experiment = "converge";
    CHECK(effective_t(c) == 0.1);
    c.t = 0.05;
    CHECK(effective_t(c) == 0.05);
    const auto sp = effective_schedule(ExperimentConfig{});
    CHECK(sp.gamma == Catch::Approx(0.2));
    CHECK(sp.gamma1 == Catch::Approx(20.0));

    const auto d = describe_defaults();
    CHECK(d["n_max"] == 32);
    CHECK(d["K"] == 256);
    CHECK(d["t_by_experiment"]["evolve"] == 2.0);
    CHECK(d["z_threshold"] == 3.0);
    CHECK(d["seed"].is_null());
}

TEST_CASE("config JSON round trip", "[harness][config]")
{
    ExperimentConfig c;
    c.experiment = "tails";
    c.seed = 77;
    c.D_values = {0.5, 1, 1.5, 2};
    c.sigma = 0.3;
    const auto back = config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(back.seed == c.seed);
    CHECK(back.D_values == c.D_values);

    // Later layers win over earlier ones.
    const auto layered = config_from_json({{"sigma", 0.2}}, back);
    CHECK(layered.sigma == 0.2);
    CHECK(layered.D_values == c.D_values);

    CHECK_THROWS_AS(config_from_json({{"sigmaa", 0.2}}), InvalidArgument);
    CHECK_THROWS_AS(config_from_json({{"n_max", "many"}}), InvalidArgument);
    CHECK_THROWS_AS(config_from_json(nlohmann::json::array()), InvalidArgument);
}

TEST_CASE("schedule run", "[harness][run]")
{
    ExperimentConfig c;
    c.experiment = "schedule";
    c.j_max = 10;
    c.out = scratch("schedule").string();
    const auto m = run_experiment(c);
    CHECK(m.passed);
    const auto csv = slurp(fs::path(c.out) / "results.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);
    std::istringstream lines(csv);
    std::string header, first;
    std::getline(lines, header);
    std::getline(lines, first);
    CHECK(first.rfind(fmt::format("1,{:.17g},", std::sqrt(2.0)), 0) == 0);

    const auto manifest = nlohmann::json::parse(slurp(fs::path(c.out) / "manifest.json"));
    CHECK(manifest["passed"] == true);
    CHECK(manifest["version"] == version_string);
    CHECK(manifest["config"]["j_max"] == 10);
    REQUIRE(manifest["files"].size() == 2);
    for (const auto& f : manifest["files"]) {
        const auto bytes = slurp(fs::path(c.out) / f["name"].get<std::string>());
        CHECK(f["sha256"] == sha256_hex(bytes));
        CHECK(f["bytes"] == bytes.size());
    }
    fs::remove_all(c.out);
}

TEST_CASE("reruns are byte identical", "[harness][run]")
{
    for (const std::string e : {"linear-invariance", "sample", "rho-invariance"}) {
        ExperimentConfig c;
        c.experiment = e;
        c.seed = 123;
        c.n_max = 8;
        c.N = 8;
        c.sample_count = 1000;
        c.dt = 1e-2;
        c.t = 0.2;
        c.out = scratch(e + "_a").string();
        const auto a = run_experiment(c);
        c.out = scratch(e + "_b").string();
        const auto b = run_experiment(c);
        REQUIRE(a.files.size() == b.files.size());
        for (std::size_t i = 0; i < a.files.size(); ++i) {
            INFO(e << " " << a.files[i].name);
            CHECK(a.files[i].name == b.files[i].name);
            CHECK(a.files[i].sha256 == b.files[i].sha256);
        }
        fs::remove_all(scratch(e + "_a"));
        fs::remove_all(scratch(e + "_b"));
    }
}

TEST_CASE("sha256", "[harness]")
{
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("volume and evolve runs", "[harness][run]")
{
    ExperimentConfig v;
    v.experiment = "volume";
    v.N_small = 3;
    v.dt = 0.05;
    v.out = scratch("volume").string();
    CHECK(run_experiment(v).passed);
    fs::remove_all(v.out);

    ExperimentConfig e;
    e.experiment = "evolve";
    e.seed = 5;
    e.n_max = 8;
    e.N = 8;
    e.t = 0.5;
    e.dt = 1e-3;
    e.out = scratch("evolve").string();
    const auto m = run_experiment(e);
    CHECK(m.passed);
    const auto res = nlohmann::json::parse(slurp(fs::path(e.out) / "results.json"));
    CHECK(res["max_relative_energy_drift"].get<double>() <= 1e-4);
    CHECK(res["t_final"].get<double>() == Catch::Approx(0.5));
    fs::remove_all(e.out);
}

TEST_CASE("failed checks and the check flag", "[harness][run]")
{
    // dt = 0.5 breaks the drift bound.
    ExperimentConfig e;
    e.experiment = "evolve";
    e.seed = 5;
    e.n_max = 8;
    e.N = 8;
    e.t = 1.0;
    e.dt = 0.5;
    e.out = scratch("drift").string();
    auto m = run_experiment(e);
    CHECK_FALSE(m.passed);
    CHECK_FALSE(m.failed_checks.empty());
    e.check = false;
    m = run_experiment(e);
    CHECK(m.passed);
    CHECK_FALSE(m.failed_checks.empty());
    fs::remove_all(e.out);
}
