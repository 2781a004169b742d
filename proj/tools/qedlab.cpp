// qedlab: command-line front end for the many-server queue toolkit.
//
//   qedlab dists check --dist gamma:shape=2
//   qedlab sim run --config run.json --seeds 0..9 --out runs/
//   qedlab fluid solve --config fluid.json --out fluid.csv
//   qedlab limit run --config limit.json --paths 100 --seed 1 --out limit/
//   qedlab verify flln --config verify.json
//
// Exit codes: 0 success, 1 verification failure, 2 bad configuration or
// usage, 3 numerical failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "qedlab/config.hpp"
#include "qedlab/experiments.hpp"

namespace fs = std::filesystem;
using namespace qedlab;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string seeds;
    std::string out;
    std::optional<int> paths;
    std::optional<int> jobs;
    bool noise_off = false;
    std::string dist;
};

struct VerifyFailed {};

class Timer {
  public:
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

  private:
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

void write_file(const fs::path& p, const std::string& content)
{
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << content;
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

ExperimentConfig load_for(const Options& o, const std::string& kind)
{
    if (o.config.empty()) throw ConfigError("--config", "required for this command");
    auto c = load_config(o.config);
    if (c.kind != kind) throw ConfigError("kind", "'" + c.kind + "' config given to a " + kind + " command");
    return c;
}

int jobs_of(const Options& o, const ExperimentConfig* c)
{
    if (o.jobs) {
        if (*o.jobs < 1) throw ConfigError("--jobs", "must be at least 1");
        return *o.jobs;
    }
    return c ? c->run.jobs : 1;
}

std::string out_of(const Options& o, const ExperimentConfig& c)
{
    std::string out = o.out.empty() ? c.run.out : o.out;
    if (out.empty()) throw ConfigError("--out", "no output location (flag or run.out)");
    return out;
}

Json manifest(const std::string& command, const Json& effective, const std::vector<std::uint64_t>& seeds, double wall,
              const std::map<std::string, std::string>& outputs)
{
    Json m;
    m["qedlab_manifest"] = 1;
    m["command"] = command;
    m["tool_version"] = kToolVersion;
    m["config_hash"] = config_hash(effective);
    m["seeds"] = seeds;
    m["wall_time_s"] = wall;
    Json files = Json::object();
    for (const auto& [name, content] : outputs) files[name] = hex64(fnv1a64(content));
    m["outputs"] = files;
    m["config"] = effective;
    return m;
}

// ---------------------------------------------------------------- dists

DistSpec parse_dist_flag(const std::string& s)
{
    if (!s.empty() && s.front() == '{') {
        try {
            return read_dist_spec(Json::parse(s), "--dist");
        } catch (const Json::parse_error& e) {
            throw ConfigError("--dist", std::string("malformed JSON: ") + e.what());
        }
    }
    if (fs::exists(s)) {
        std::ifstream in(s);
        try {
            return read_dist_spec(Json::parse(in), "--dist");
        } catch (const Json::parse_error& e) {
            throw ConfigError("--dist", std::string("malformed JSON: ") + e.what());
        }
    }
    // family[:key=value,...]
    DistSpec d;
    auto colon = s.find(':');
    d.family = s.substr(0, colon);
    if (colon != std::string::npos) {
        std::stringstream ss(s.substr(colon + 1));
        std::string kv;
        while (std::getline(ss, kv, ',')) {
            auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--dist", "expected key=value, got '" + kv + "'");
            try {
                d.params[kv.substr(0, eq)] = std::stod(kv.substr(eq + 1));
            } catch (const std::exception&) {
                throw ConfigError("--dist." + kv.substr(0, eq), "not a number");
            }
        }
    }
    return d;
}

int cmd_dists_check(const Options& o)
{
    Timer timer;
    DistSpec spec;
    if (!o.dist.empty())
        spec = parse_dist_flag(o.dist);
    else
        spec = load_for(o, "dists").model.service_spec;
    auto d = build_dist(spec, o.dist.empty() ? "model.service" : "--dist");

    const double L = effective_support(d, 1e-12);
    const double span = std::min(L, 20.0);
    Json rep;
    rep["family"] = d.name();
    rep["normalize"] = spec.normalize;
    rep["mean"] = json_number(d.mean());
    rep["mean_by_quadrature"] = json_number(mean_by_quadrature(d));
    rep["support_end"] = json_number(d.support_end());
    rep["effective_support"] = json_number(L);
    double worst = 0.0;
    Json hz = Json::array();
    for (int i = 0; i < 200; ++i) {
        const double x = span * i / 200.0;
        const double h = d.hazard(x), S = d.survival(x), g = d.density(x);
        if (S > 0.0 && std::isfinite(h)) worst = std::max(worst, std::abs(h * S - g));
        if (i % 10 == 0) hz.push_back({{"x", x}, {"hazard", json_number(h)}, {"survival", S}});
    }
    rep["hazard_identity_max_error"] = worst;
    rep["hazard"] = hz;
    const double rdt = 1e-3;
    auto U = renewal_function(d, 5.0, rdt);
    Json ren = Json::object();
    for (double t : {1.0, 2.0, 5.0}) ren[csv_num(t)] = U[static_cast<std::size_t>(std::llround(t / rdt))];
    rep["renewal"] = {{"dt", rdt}, {"U", ren}};
    std::vector<double> xs, ys;
    for (int i = 0; i < 20; ++i) xs.push_back(span * i / 20.0);
    for (int i = 1; i <= 100; ++i) ys.push_back(std::min(2.0, span) * i / 100.0);
    auto hr = holder_check(d, xs, ys);
    rep["holder"] = {{"C_G", json_number(hr.C_G)}, {"gamma_G", hr.gamma_G}, {"max_violation", hr.max_violation}};

    const std::string text = dump(rep);
    std::cout << text;
    if (!o.out.empty()) {
        write_file(o.out, text);
        Json eff = {{"schema_version", kSchemaVersion}, {"kind", "dists"}, {"model", {{"service", Json::object()}}}};
        eff["model"]["service"]["family"] = spec.family;
        eff["model"]["service"]["params"] = spec.params;
        eff["model"]["service"]["normalize"] = spec.normalize;
        if (!spec.alpha.empty()) eff["model"]["service"]["alpha"] = spec.alpha;
        if (!spec.matrix.empty()) eff["model"]["service"]["matrix"] = spec.matrix;
        if (!spec.breaks.empty()) eff["model"]["service"]["breaks"] = spec.breaks;
        if (!spec.densities.empty()) eff["model"]["service"]["densities"] = spec.densities;
        write_file(o.out + ".manifest.json", dump(manifest("dists check", eff, {}, timer.seconds(), {{fs::path(o.out).filename().string(), text}})));
    }
    return 0;
}

// ---------------------------------------------------------------- sim

std::string path_csv(const PathRecord& p)
{
    std::string s = "time,kind,E,D,K,X,in_service\n";
    s += "0,initial,0,0,0," + std::to_string(p.x0) + "," + std::to_string(p.B0) + "\n";
    for (const auto& e : p.events) {
        s += csv_num(e.time);
        s += ',';
        s += to_string(e.kind);
        for (auto v : {e.E, e.D, e.K, e.X, e.B}) {
            s += ',';
            s += std::to_string(v);
        }
        s += '\n';
    }
    return s;
}

int cmd_sim_run(const Options& o)
{
    Timer timer;
    auto c = load_for(o, "sim");
    auto seeds = o.seeds.empty() ? c.run.seeds : parse_seeds(o.seeds, "--seeds");
    if (seeds.empty()) throw ConfigError("run.seeds", "stochastic runs need seeds (flag --seeds or run.seeds)");
    const fs::path out = out_of(o, c);
    const int jobs = jobs_of(o, &c);

    struct Job {
        int N;
        std::uint64_t seed;
    };
    std::vector<Job> work;
    for (int N : c.model.Ns)
        for (auto s : seeds) work.push_back({N, s});
    auto name = [&](const Job& j) { return "N" + std::to_string(j.N) + "_seed" + std::to_string(j.seed); };

    struct Result {
        PathRecord::Counters final;
        std::size_t events = 0;
        bool invariants = false;
        std::string csv, snaps;
    };
    std::vector<Result> res(work.size());
    parallel_for(work.size(), static_cast<unsigned>(jobs), [&](std::size_t i) {
        auto p = simulate(build_sim_config(c, work[i].N, work[i].seed));
        Result& r = res[i];
        r.final = p.counters_at(p.T);
        r.events = p.events.size();
        r.invariants = check_invariants(p).ok();
        r.csv = path_csv(p);
        write_file(out / (name(work[i]) + ".csv"), r.csv);
        if (!p.snapshots.empty()) {
            Json s = Json::array();
            for (const auto& sn : p.snapshots) s.push_back({{"time", sn.time}, {"ages", sn.ages}});
            r.snaps = dump(s);
            write_file(out / (name(work[i]) + "_snapshots.json"), r.snaps);
        }
    });

    Json summary;
    summary["kind"] = "sim";
    summary["horizon"] = c.model.horizon;
    summary["service"] = c.model.service.name();
    Json groups = Json::array();
    std::map<std::string, std::string> outputs;
    for (int N : c.model.Ns) {
        std::array<std::vector<double>, 5> fin;
        std::vector<double> ev;
        int ok = 0;
        for (std::size_t i = 0; i < work.size(); ++i) {
            if (work[i].N != N) continue;
            const auto& f = res[i].final;
            std::size_t q = 0;
            for (auto v : {f.E, f.D, f.K, f.X, f.B}) fin[q++].push_back(static_cast<double>(v));
            ev.push_back(static_cast<double>(res[i].events));
            ok += res[i].invariants;
            outputs[name(work[i]) + ".csv"] = res[i].csv;
            if (!res[i].snaps.empty()) outputs[name(work[i]) + "_snapshots.json"] = res[i].snaps;
        }
        Json g;
        g["N"] = N;
        g["replicates"] = ev.size();
        g["invariants_ok"] = ok;
        g["events_mean"] = sample_stats(ev).mean;
        Json at_T = Json::object();
        const char* names[] = {"E", "D", "K", "X", "in_service"};
        for (std::size_t q = 0; q < 5; ++q) {
            auto s = sample_stats(fin[q]);
            at_T[names[q]] = {{"mean", s.mean}, {"var", s.var}, {"se", s.se}};
        }
        g["at_horizon"] = at_T;
        groups.push_back(g);
    }
    summary["groups"] = groups;
    const std::string stext = dump(summary);
    write_file(out / "summary.json", stext);
    outputs["summary.json"] = stext;

    Json eff = c.raw;
    eff["run"]["seeds"] = seeds;
    write_file(out / "manifest.json", dump(manifest("sim run", eff, seeds, timer.seconds(), outputs)));
    return 0;
}

// ---------------------------------------------------------------- fluid

int cmd_fluid_solve(const Options& o)
{
    Timer timer;
    auto c = load_for(o, "fluid");
    const fs::path out = out_of(o, c);
    auto p = solve_fluid(build_fluid_init(c), c.model.service, c.model.horizon, c.numerics.dt);
    std::string s = "t,Xbar,Kbar,mass,hazard_load\n";
    for (std::size_t n = 0; n < p.t.size(); ++n)
        s += csv_num(p.t[n]) + "," + csv_num(p.Xbar[n]) + "," + csv_num(p.Kbar[n]) + "," + csv_num(p.Bbar[n]) + "," +
             csv_num(p.hazard_load[n]) + "\n";
    write_file(out, s);
    Json info = {{"regime", to_string(p.regime)}, {"steps", p.t.size() - 1}, {"Xbar_T", p.Xbar.back()}};
    std::cout << dump(info);
    auto m = manifest("fluid solve", c.raw, {}, timer.seconds(), {{out.filename().string(), s}});
    m["regime"] = to_string(p.regime);
    write_file(out.string() + ".manifest.json", dump(m));
    return 0;
}

// ---------------------------------------------------------------- limit

int cmd_limit_run(const Options& o)
{
    Timer timer;
    auto c = load_for(o, "limit");
    if (!o.seed && !c.run.has_seed) throw ConfigError("run.seed", "stochastic runs need a seed (flag --seed or run.seed)");
    const std::uint64_t seed = o.seed ? *o.seed : c.run.seed;
    const int P = o.paths ? *o.paths : c.run.paths;
    if (P < 1) throw ConfigError("--paths", "must be at least 1");
    const fs::path out = out_of(o, c);
    const int jobs = jobs_of(o, &c);
    const double T = c.model.horizon, dt = c.numerics.dt;

    auto fl = solve_fluid(build_fluid_init(c), c.model.service, T, dt);
    auto lm = build_limit_model(c, fl);
    if (lm.regime == Regime::Mixed)
        throw CmseError("fluid path is in a mixed regime; set numerics.regime to force one");
    auto g = make_limit_grid(fl, dt, T, c.numerics.tail, 1, c.numerics.dx);
    if (c.numerics.x_max > 0.0) g.x_max = g.dx * std::ceil(c.numerics.x_max / g.dx - 1e-9);
    const auto q = field_intensity(fl, g);

    std::vector<std::string> cols{"Ehat", "Mhat1", "Hhat1", "Khat", "Xhat", "vhat"};
    for (const auto& tf : lm.tests) cols.push_back("nuhat_" + tf.name);
    std::vector<std::vector<double>> final(static_cast<std::size_t>(P));
    std::vector<std::string> csvs(static_cast<std::size_t>(P));
    parallel_for(static_cast<std::size_t>(P), static_cast<unsigned>(jobs), [&](std::size_t i) {
        auto f = simulate_field(q, g, seed, i, o.noise_off);
        auto p = solve_limit_path(lm, f);
        std::vector<const std::vector<double>*> data{&p.Ehat, &p.Mhat1, &p.Hhat1, &p.Khat, &p.Xhat, &p.vhat};
        for (const auto& tf : lm.tests) data.push_back(&p.nuhat.at(tf.name));
        std::string s = "t";
        for (const auto& col : cols) s += "," + col;
        s += "\n";
        for (std::size_t n = 0; n < p.t.size(); ++n) {
            s += csv_num(p.t[n]);
            for (const auto* v : data) s += "," + csv_num((*v)[n]);
            s += "\n";
        }
        for (const auto* v : data) final[i].push_back(v->back());
        csvs[i] = s;
        write_file(out / ("path_" + std::to_string(i) + ".csv"), s);
    });

    // ensemble statistics of every column at the horizon
    const std::size_t K = cols.size();
    std::vector<double> mean(K, 0.0);
    for (const auto& f : final)
        for (std::size_t k = 0; k < K; ++k) mean[k] += f[k] / P;
    std::vector<std::vector<double>> cov(K, std::vector<double>(K, 0.0));
    if (P > 1)
        for (const auto& f : final)
            for (std::size_t a = 0; a < K; ++a)
                for (std::size_t b = 0; b < K; ++b) cov[a][b] += (f[a] - mean[a]) * (f[b] - mean[b]) / (P - 1);
    Json summary;
    summary["kind"] = "limit";
    summary["paths"] = P;
    summary["seed"] = seed;
    summary["regime"] = to_string(lm.regime);
    summary["noise_off"] = o.noise_off;
    summary["grid"] = {{"dt", g.dt}, {"dx", g.dx}, {"x_max", g.x_max}, {"T", g.T}};
    summary["columns"] = cols;
    summary["time"] = T;
    Json jm = Json::object(), jv = Json::object();
    for (std::size_t k = 0; k < K; ++k) {
        jm[cols[k]] = mean[k];
        jv[cols[k]] = cov[k][k];
    }
    summary["mean"] = jm;
    summary["variance"] = jv;
    summary["covariance"] = cov;
    const std::string stext = dump(summary);
    write_file(out / "summary.json", stext);

    std::map<std::string, std::string> outputs{{"summary.json", stext}};
    for (int i = 0; i < P; ++i) outputs["path_" + std::to_string(i) + ".csv"] = csvs[static_cast<std::size_t>(i)];
    Json eff = c.raw;
    eff["run"]["seed"] = seed;
    eff["run"]["paths"] = P;
    auto m = manifest("limit run", eff, {seed}, timer.seconds(), outputs);
    m["noise_off"] = o.noise_off;
    write_file(out / "manifest.json", dump(m));
    return 0;
}

// ---------------------------------------------------------------- verify

struct SeedOverride {
    std::uint64_t seed;
    void operator()(const char* key, std::uint64_t& v)
    {
        if (std::string(key) == "seed") v = seed;
    }
    template <class T>
    void operator()(const char*, T&)
    {
    }
};

template <class P>
P verify_params(const ExperimentConfig* c, const Options& o)
{
    P p = c ? read_params<P>(c->verify_params, "verify.params") : P{};
    if (o.seed) {
        SeedOverride s{*o.seed};
        p.visit(s);
    }
    return p;
}

std::vector<TestReport> run_verify(const std::string& test, const ExperimentConfig* c, const Options& o, Json& params)
{
    const unsigned jobs = static_cast<unsigned>(jobs_of(o, c));
    auto go = [&](auto p, auto&& fn) {
        params = params_json(p);
        return fn(p);
    };
    if (test == "fclt") return go(verify_params<FcltParams>(c, o), [&](auto& p) { return fclt_suite(p, jobs); });
    if (test == "insensitivity")
        return go(verify_params<InsensitivityParams>(c, o), [&](auto& p) { return insensitivity_suite(p, jobs); });
    if (test == "moments") return go(verify_params<MomentsParams>(c, o), [&](auto& p) { return moments_suite(p, jobs); });
    if (test == "flln") return go(verify_params<FllnParams>(c, o), [&](auto& p) { return flln_suite(p, jobs); });
    if (test == "sae") return go(verify_params<SaeParams>(c, o), [&](auto& p) { return sae_suite(p, jobs); });
    if (test == "representation")
        return go(verify_params<RepresentationParams>(c, o), [&](auto& p) { return representation_suite(p, jobs); });
    if (test == "identities") return go(verify_params<IdentityParams>(c, o), [&](auto& p) { return identity_suite(p, jobs); });
    if (test == "martingale")
        return go(verify_params<MartingaleParams>(c, o), [&](auto& p) {
            auto a = martingale_suite(exponential_dist(), p, jobs);
            auto b = martingale_suite(lognormal_dist(1.0), p, jobs);
            a.insert(a.end(), b.begin(), b.end());
            return a;
        });
    if (test == "fluid")
        return go(verify_params<FluidInvarianceParams>(c, o), [&](auto& p) { return fluid_invariance_suite(p, jobs); });
    if (test == "cmse") return go(verify_params<CmseParams>(c, o), [&](auto& p) { return cmse_suite(p, jobs); });
    throw ConfigError("verify.test", "unknown test '" + test + "'");
}

Json report_json(const TestReport& r)
{
    return {{"name", r.name},          {"value", json_number(r.value)},   {"threshold", json_number(r.threshold)},
            {"pass", r.pass},          {"replicates", r.replicates},      {"se", json_number(r.se)},
            {"detail", r.detail}};
}

int cmd_verify(const std::string& test, const Options& o)
{
    Timer timer;
    std::optional<ExperimentConfig> c;
    if (!o.config.empty()) {
        c = load_for(o, "verify");
        if (c->verify_test != test)
            throw ConfigError("verify.test", "config is for '" + c->verify_test + "', command asks for '" + test + "'");
    }
    Json params;
    auto reports = run_verify(test, c ? &*c : nullptr, o, params);
    Json arr = Json::array();
    bool ok = true;
    for (const auto& r : reports) {
        arr.push_back(report_json(r));
        ok = ok && r.pass;
    }
    const std::string text = dump(arr);
    std::cout << text;
    if (!o.out.empty()) {
        write_file(o.out, text);
        Json eff = c ? c->raw : Json{{"schema_version", kSchemaVersion}, {"kind", "verify"}, {"verify", {{"test", test}}}};
        eff["verify"]["params"] = params;
        write_file(o.out + ".manifest.json",
                   dump(manifest("verify " + test, eff, {}, timer.seconds(), {{fs::path(o.out).filename().string(), text}})));
    }
    if (!ok) throw VerifyFailed{};
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"qedlab: many-server queues in the QED regime, from discrete events to limit processes"};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&](CLI::App* a) {
        a->add_option("--config", o.config, "Experiment config (JSON), or a manifest from an earlier run");
        a->add_option("--out", o.out, "Output directory or file");
        a->add_option("--jobs", o.jobs, "Worker threads; results do not depend on this");
    };

    auto* dists = app.add_subcommand("dists", "Service-time distributions");
    dists->require_subcommand(1);
    auto* dcheck = dists->add_subcommand("check", "Hazard, renewal and Hölder report as JSON");
    dcheck->add_option("--config", o.config, "Config of kind dists");
    dcheck->add_option("--dist", o.dist, "family[:key=value,...], inline JSON or a JSON file");
    dcheck->add_option("--out", o.out, "Also write the report to this file");

    auto* sim = app.add_subcommand("sim", "Discrete-event simulation");
    sim->require_subcommand(1);
    auto* srun = sim->add_subcommand("run", "Simulate replicates; one CSV per (N, seed)");
    add_common(srun);
    srun->add_option("--seeds", o.seeds, "Seeds: a..b, a,b,c");

    auto* fluid = app.add_subcommand("fluid", "Fluid limit");
    fluid->require_subcommand(1);
    auto* fsolve = fluid->add_subcommand("solve", "Solve the fluid equations to a CSV");
    add_common(fsolve);

    auto* limit = app.add_subcommand("limit", "Diffusion limit paths");
    limit->require_subcommand(1);
    auto* lrun = limit->add_subcommand("run", "Simulate limit paths");
    add_common(lrun);
    lrun->add_option("--seed", o.seed, "Master seed");
    lrun->add_option("--paths", o.paths, "Number of paths");
    lrun->add_flag("--noise-off", o.noise_off, "Zero every Gaussian draw");

    auto* verify = app.add_subcommand("verify", "Statistical and numerical checks; exit 1 on failure");
    verify->require_subcommand(1);
    std::string chosen;
    for (const auto& t : verify_tests()) {
        auto* v = verify->add_subcommand(t, "Run the " + t + " check");
        v->add_option("--config", o.config, "Config of kind verify");
        v->add_option("--out", o.out, "Also write the report array to this file");
        v->add_option("--jobs", o.jobs, "Worker threads");
        v->add_option("--seed", o.seed, "Override the seed parameter");
        v->callback([&chosen, t] { chosen = t; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (dcheck->parsed()) return cmd_dists_check(o);
        if (srun->parsed()) return cmd_sim_run(o);
        if (fsolve->parsed()) return cmd_fluid_solve(o);
        if (lrun->parsed()) return cmd_limit_run(o);
        if (!chosen.empty()) return cmd_verify(chosen, o);
    } catch (const ConfigError& e) {
        std::cerr << "qedlab: config error at " << e.what() << "\n";
        return 2;
    } catch (const VerifyFailed&) {
        std::cerr << "qedlab: verification failed\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "qedlab: numerical failure: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
