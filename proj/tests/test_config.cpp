#include <gtest/gtest.h>

#include <atomic>
#include <cmath>

#include "qedlab/config.hpp"
#include "qedlab/experiments.hpp"

using namespace qedlab;

namespace {

Json sim_json()
{
    return Json::parse(R"({
      "schema_version": 1,
      "kind": "sim",
      "model": {
        "service": {"family": "lognormal", "params": {"sigma": 0.8}},
        "arrival": {"kind": "renewal", "lambda_bar": 1.0, "beta": 0.5, "sigma2": 2.0},
        "N": [10, 40],
        "initial": {"kind": "equilibrium", "x0_fraction": 0.5},
        "horizon": 3.0
      },
      "run": {"seeds": "2..4", "snapshot_times": [1.0]}
    })");
}

std::string error_path(const Json& j)
{
    try {
        parse_config(j);
    } catch (const ConfigError& e) {
        return e.path();
    }
    return "<no error>";
}

}  // namespace

TEST(Config, ParsesSimConfig)
{
    auto c = parse_config(sim_json());
    EXPECT_EQ(c.kind, "sim");
    EXPECT_EQ(c.model.Ns, (std::vector<int>{10, 40}));
    EXPECT_EQ(c.run.seeds, (std::vector<std::uint64_t>{2, 3, 4}));
    EXPECT_EQ(c.model.arrival.sigma2, 2.0);
    EXPECT_NEAR(c.model.service.mean(), 1.0, 1e-12);
    EXPECT_EQ(c.model.initial.customers(40), 20);
    auto s = build_sim_config(c, 40, 3);
    EXPECT_EQ(s.initial.x0, 20);
    EXPECT_EQ(s.initial.ages.size(), 20u);
    EXPECT_EQ(s.snapshot_times, (std::vector<double>{1.0}));
    auto p = simulate(s);
    EXPECT_TRUE(check_invariants(p).ok());
}

TEST(Config, FieldPathDiagnostics)
{
    auto j = sim_json();
    j["model"]["arrival"]["betta"] = 1.0;
    EXPECT_EQ(error_path(j), "model.arrival.betta");

    j = sim_json();
    j["model"]["service"]["params"]["sigma"] = "wide";
    EXPECT_EQ(error_path(j), "model.service.params.sigma");

    j = sim_json();
    j["model"]["service"]["params"]["shape"] = 2.0;
    EXPECT_EQ(error_path(j), "model.service.params.shape");

    j = sim_json();
    j["model"]["service"]["family"] = "cauchy";
    EXPECT_EQ(error_path(j), "model.service.family");

    j = sim_json();
    j["model"].erase("horizon");
    EXPECT_EQ(error_path(j), "model.horizon");

    j = sim_json();
    j["model"]["N"] = Json::array({10, 0});
    EXPECT_EQ(error_path(j), "model.N");

    j = sim_json();
    j["model"]["arrival"]["beta"] = 10.0;  // λ^N < 0 for N = 10
    EXPECT_EQ(error_path(j), "model.arrival");

    j = sim_json();
    j["run"]["seeds"] = "4..2";
    EXPECT_EQ(error_path(j), "run.seeds");

    j = sim_json();
    j["run"]["snapshot_times"] = Json::array({5.0});
    EXPECT_EQ(error_path(j), "run.snapshot_times");

    j = sim_json();
    j["schema_version"] = 2;
    EXPECT_EQ(error_path(j), "schema_version");

    j = sim_json();
    j["kind"] = "plot";
    EXPECT_EQ(error_path(j), "kind");

    j = sim_json();
    j["model"]["initial"] = {{"kind", "equilibrium"}, {"x0", 3}, {"x0_fraction", 0.5}};
    EXPECT_EQ(error_path(j), "model.initial.x0");

    j = sim_json();
    j["model"]["initial"] = {{"kind", "explicit"}, {"x0", 3}, {"ages", {0.1, 0.2}}};
    EXPECT_EQ(error_path(j), "model.initial.ages");

    EXPECT_EQ(error_path(Json::array()), "<root>");
}

TEST(Config, RateFunctionsAndInhomogeneousArrivals)
{
    auto j = sim_json();
    j["model"]["arrival"] = Json::parse(R"({"kind": "inhomogeneous_poisson",
        "lambda_bar": {"knots": [0, 3], "values": [0.5, 1.5]}, "beta": 0.2})");
    auto c = parse_config(j);
    EXPECT_EQ(c.model.arrival.kind, ArrivalKind::InhomPoisson);
    EXPECT_NEAR(c.model.arrival.lambda_bar(1.5), 1.0, 1e-15);
    j["model"]["arrival"]["lambda_bar"]["knots"] = Json::array({0, 0});
    EXPECT_EQ(error_path(j), "model.arrival.lambda_bar");
}

TEST(Config, Seeds)
{
    EXPECT_EQ(parse_seeds("0..3", "s"), (std::vector<std::uint64_t>{0, 1, 2, 3}));
    EXPECT_EQ(parse_seeds("7", "s"), (std::vector<std::uint64_t>{7}));
    EXPECT_EQ(parse_seeds("5,1,9", "s"), (std::vector<std::uint64_t>{5, 1, 9}));
    EXPECT_THROW(parse_seeds("a..3", "s"), ConfigError);
    EXPECT_THROW(parse_seeds("-1", "s"), ConfigError);
    EXPECT_THROW(parse_seeds("", "s"), ConfigError);
}

TEST(Config, VerifyParamsAcceptInfinity)
{
    auto j = Json::parse(R"({"schema_version": 1, "kind": "verify",
        "verify": {"test": "flln", "params": {"seeds": 5, "slope_tol": "inf", "Ns": [10, 20]}}})");
    auto c = parse_config(j);
    auto p = read_params<FllnParams>(c.verify_params, "verify.params");
    EXPECT_EQ(p.seeds, 5);
    EXPECT_TRUE(std::isinf(p.slope_tol));
    EXPECT_EQ(p.Ns, (std::vector<int>{10, 20}));
    EXPECT_EQ(p.sigma, 1.0);

    auto out = params_json(p);
    EXPECT_EQ(out["slope_tol"], "inf");
    auto back = read_params<FllnParams>(out, "x");
    EXPECT_TRUE(std::isinf(back.slope_tol));
    EXPECT_EQ(back.Ns, p.Ns);

    j["verify"]["params"]["slop_tol"] = 1.0;
    auto c2 = parse_config(j);
    try {
        read_params<FllnParams>(c2.verify_params, "verify.params");
        FAIL() << "unknown key accepted";
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.path(), "verify.params.slop_tol");
    }
    j["verify"]["test"] = "everything";
    EXPECT_EQ(error_path(j), "verify.test");
}

TEST(Config, FluidInitMatchesStart)
{
    auto j = sim_json();
    j["kind"] = "fluid";
    j.erase("run");
    auto c = parse_config(j);
    auto init = build_fluid_init(c);
    EXPECT_EQ(init.x0, 0.5);
    EXPECT_NEAR(init.nu0_density(0.3), 0.5 * c.model.service.survival(0.3), 1e-15);
    j["model"]["initial"] = {{"kind", "explicit"}, {"x0", 1}, {"ages", {0.1}}};
    EXPECT_THROW(build_fluid_init(parse_config(j)), ConfigError);
    j["model"]["initial"] = {{"kind", "empty"}};
    auto e = build_fluid_init(parse_config(j));
    EXPECT_EQ(e.x0, 0.0);
    EXPECT_FALSE(e.nu0_density);
}

TEST(Config, LimitModelFromConfig)
{
    auto j = sim_json();
    j["kind"] = "limit";
    j["model"]["initial"] = {{"kind", "equilibrium"}, {"x0_fraction", 1.0}};
    j["model"]["arrival"]["beta"] = 1.0;
    j["numerics"] = Json::parse(R"({"dt": 0.05, "test_functions": ["1", "h"], "x0hat": 0.3,
        "nu0hat_atoms": [[0.5, 0.1]]})");
    auto c = parse_config(j);
    auto fl = solve_fluid(build_fluid_init(c), c.model.service, 1.0, 0.05);
    auto m = build_limit_model(c, fl);
    EXPECT_EQ(m.regime, Regime::Critical);
    EXPECT_EQ(m.tests.size(), 2u);
    EXPECT_EQ(m.x0hat, 0.3);
    ASSERT_EQ(m.nu0hat.atoms.size(), 1u);
    j["numerics"]["test_functions"] = Json::array({"sin"});
    EXPECT_EQ(error_path(j), "numerics.test_functions");
    j["numerics"].erase("test_functions");
    j["numerics"]["regime"] = "critical-ish";
    EXPECT_EQ(error_path(j), "numerics.regime");
}

TEST(Config, ManifestUnwrapAndHash)
{
    auto j = sim_json();
    Json m = {{"qedlab_manifest", 1}, {"config", j}};
    EXPECT_EQ(unwrap_manifest(m), j);
    EXPECT_EQ(unwrap_manifest(j), j);
    auto h = config_hash(j);
    EXPECT_EQ(h.size(), 16u);
    auto j2 = j;
    j2["run"]["out"] = "elsewhere";
    j2["run"]["jobs"] = 4;
    EXPECT_EQ(config_hash(j2), h);
    j2["run"]["seeds"] = "2..5";
    EXPECT_NE(config_hash(j2), h);
}

TEST(Config, NumbersRoundTrip)
{
    for (double x : {0.0, 0.1, 1.0 / 3.0, 1e-300, 123456.789, -2.5}) EXPECT_EQ(std::stod(csv_num(x)), x);
    EXPECT_EQ(csv_num(2.0), "2");
    EXPECT_EQ(json_number(kInf), "inf");
    EXPECT_EQ(read_double(Json("-inf"), "x"), -kInf);
    EXPECT_THROW(read_double(Json("many"), "x"), ConfigError);
    EXPECT_THROW(read_int(Json(1.5), "x"), ConfigError);
    EXPECT_EQ(read_int(Json(3.0), "x"), 3);
}

TEST(Experiments, ParallelForIsIndexDeterministic)
{
    std::vector<double> a(100), b(100);
    auto fill = [](std::vector<double>& v) {
        return [&v](std::size_t i) {
            Engine e = make_engine(3, i, 0);
            v[i] = uniform_open(e);
        };
    };
    parallel_for(a.size(), 1, fill(a));
    parallel_for(b.size(), 4, fill(b));
    EXPECT_EQ(a, b);
    std::atomic<int> count{0};
    EXPECT_THROW(parallel_for(50, 3,
                              [&](std::size_t i) {
                                  ++count;
                                  if (i == 7) throw std::runtime_error("boom");
                              }),
                 std::runtime_error);
    EXPECT_LE(count.load(), 50);
}

TEST(Experiments, CumulativeHazardCompensatorMatchesQuadrature)
{
    for (const auto& d : {exponential_dist(), gamma_dist(2.0), lognormal_dist(0.5)}) {
        auto p = simulate(qed_config(d, 20, 1.0, 1.0, 1.0, 2.0, 5, 0));
        const Fn2 one = [](double, double) { return 1.0; };
        double exact = cumulative_hazard_compensator(p, 2.0);
        double coarse = compensator(p, one, 2.0, 2e-3), fine = compensator(p, one, 2.0, 1e-3);
        // left-point rule: error halves, so the Richardson value is second order
        EXPECT_NEAR(2.0 * fine - coarse, exact, 5e-3 * exact) << d.name();
    }
    // h ≡ 1: cumulative hazard is the occupied server time
    auto p = simulate(qed_config(exponential_dist(), 10, 1.0, 0.0, 0.5, 3.0, 6, 1));
    double occ = 0.0;
    for (const auto& r : p.services) occ += std::max(0.0, std::min(r.depart, 3.0) - std::max(r.start, 0.0));
    EXPECT_NEAR(cumulative_hazard_compensator(p, 3.0), occ, 1e-9);
}

TEST(Experiments, RandomConfigsAreValid)
{
    for (std::uint64_t i = 0; i < 40; ++i) {
        auto c = random_config(11, i);
        EXPECT_NO_THROW(validate(c)) << i;
        EXPECT_NEAR(c.service.mean(), 1.0, 1e-6) << c.service.name();
    }
    EXPECT_EQ(random_config(11, 3).N, random_config(11, 3).N);
}

TEST(Experiments, RatioReport)
{
    RatioSummary r;
    r.add(0.45);
    r.add(0.55);
    auto in = ratio_report("x", r, 0.3, 0.7, 1);
    EXPECT_TRUE(in.pass);
    EXPECT_EQ(in.value, 0.0);
    r.add(0.8);
    auto out = ratio_report("x", r, 0.3, 0.7, 1);
    EXPECT_FALSE(out.pass);
    EXPECT_NEAR(out.value, 0.1, 1e-12);
    EXPECT_TRUE(ratio_report("x", r, -kInf, kInf, 1).pass);
}

TEST(Experiments, SmallSuitesRun)
{
    IdentityParams ip;
    ip.configs = 5;
    ip.seeds = 2;
    auto id = identity_suite(ip);
    ASSERT_EQ(id.size(), 1u);
    EXPECT_TRUE(id[0].pass);
    EXPECT_EQ(id[0].replicates, 10u);

    CmseParams cp;
    cp.perturbations = 6;
    auto cm = cmse_suite(cp, 2);
    ASSERT_EQ(cm.size(), 2u);
    EXPECT_TRUE(cm[0].pass) << cm[0].value;
    EXPECT_EQ(cm[1].value, 0.0);
    EXPECT_EQ(cmse_suite(cp, 1)[0].value, cm[0].value);
}
