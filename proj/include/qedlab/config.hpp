#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "arrivals.hpp"
#include "dists.hpp"
#include "fluid.hpp"
#include "limitsim.hpp"
#include "microsim.hpp"

namespace qedlab {

using Json = nlohmann::json;

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

// Schema violation at a dotted field path such as "model.arrival.beta".
class ConfigError : public std::runtime_error {
  public:
    ConfigError(std::string path, const std::string& msg) : std::runtime_error(path + ": " + msg), path_(std::move(path)) {}
    const std::string& path() const { return path_; }

  private:
    std::string path_;
};

inline std::string join_path(const std::string& base, const std::string& key)
{
    return base.empty() ? key : base + "." + key;
}

// Numbers, with "inf" and "-inf" accepted as strings since JSON has no infinity.
inline double read_double(const Json& j, const std::string& path)
{
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf" || s == "+inf" || s == "infinity") return kInf;
        if (s == "-inf" || s == "-infinity") return -kInf;
    }
    throw ConfigError(path, "expected a number");
}

inline std::int64_t read_int(const Json& j, const std::string& path)
{
    if (j.is_number_integer()) return j.get<std::int64_t>();
    if (j.is_number_float()) {
        double v = j.get<double>();
        if (v == std::floor(v) && std::abs(v) < 9e15) return static_cast<std::int64_t>(v);
    }
    throw ConfigError(path, "expected an integer");
}

inline std::uint64_t read_uint(const Json& j, const std::string& path)
{
    if (j.is_number_unsigned()) return j.get<std::uint64_t>();
    auto v = read_int(j, path);
    if (v < 0) throw ConfigError(path, "must be nonnegative");
    return static_cast<std::uint64_t>(v);
}

inline std::string read_string(const Json& j, const std::string& path)
{
    if (!j.is_string()) throw ConfigError(path, "expected a string");
    return j.get<std::string>();
}

template <class T>
T read_value(const Json& j, const std::string& path)
{
    if constexpr (std::is_same_v<T, double>) {
        return read_double(j, path);
    } else if constexpr (std::is_same_v<T, bool>) {
        if (!j.is_boolean()) throw ConfigError(path, "expected true or false");
        return j.get<bool>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
        return read_uint(j, path);
    } else if constexpr (std::is_integral_v<T>) {
        auto v = read_int(j, path);
        if (v < std::numeric_limits<T>::min() || v > std::numeric_limits<T>::max()) throw ConfigError(path, "out of range");
        return static_cast<T>(v);
    } else if constexpr (std::is_same_v<T, std::string>) {
        return read_string(j, path);
    } else {
        if (!j.is_array()) throw ConfigError(path, "expected an array");
        T out;
        for (std::size_t i = 0; i < j.size(); ++i)
            out.push_back(read_value<typename T::value_type>(j[i], path + "[" + std::to_string(i) + "]"));
        return out;
    }
}

// An object whose keys are checked off as they are read; finish() rejects
// anything left over.
class Fields {
  public:
    Fields(const Json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    bool has(const std::string& k) const { return j_.contains(k); }
    std::string path(const std::string& k) const { return join_path(path_, k); }

    const Json& at(const std::string& k)
    {
        if (!has(k)) throw ConfigError(path(k), "required field missing");
        used_.insert(k);
        return j_.at(k);
    }

    template <class T>
    T get(const std::string& k)
    {
        return read_value<T>(at(k), path(k));
    }

    template <class T>
    T get(const std::string& k, T fallback)
    {
        return has(k) ? get<T>(k) : fallback;
    }

    Fields object(const std::string& k) { return Fields(at(k), path(k)); }

    void finish() const
    {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key())) throw ConfigError(path(it.key()), "unknown field");
    }

  private:
    const Json& j_;
    std::string path_;
    std::set<std::string> used_;
};

// Visitor filling a parameter struct from a JSON object.
struct ParamReader {
    Fields& f;
    template <class T>
    void operator()(const char* key, T& v)
    {
        if (f.has(key)) v = f.get<T>(key);
    }
};

inline Json json_number(double x)
{
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    return x;
}

struct ParamWriter {
    Json& out;
    void operator()(const char* key, double v) { out[key] = json_number(v); }
    void operator()(const char* key, const std::vector<double>& v)
    {
        Json a = Json::array();
        for (double x : v) a.push_back(json_number(x));
        out[key] = a;
    }
    template <class T>
    void operator()(const char* key, const T& v)
    {
        out[key] = v;
    }
};

template <class P>
P read_params(const Json& j, const std::string& path)
{
    P p;
    if (j.is_null()) return p;
    Fields f(j, path);
    ParamReader r{f};
    p.visit(r);
    f.finish();
    return p;
}

template <class P>
Json params_json(P p)
{
    Json out = Json::object();
    ParamWriter w{out};
    p.visit(w);
    return out;
}

// "a..b" (inclusive), "a,b,c" or a single integer.
inline std::vector<std::uint64_t> parse_seeds(const std::string& s, const std::string& path)
{
    auto num = [&](const std::string& t) {
        if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos)
            throw ConfigError(path, "bad seed '" + t + "' (use a..b, a,b,c or a list of integers)");
        return static_cast<std::uint64_t>(std::stoull(t));
    };
    std::vector<std::uint64_t> out;
    if (auto dots = s.find(".."); dots != std::string::npos) {
        auto a = num(s.substr(0, dots)), b = num(s.substr(dots + 2));
        if (b < a) throw ConfigError(path, "empty seed range " + s);
        if (b - a > 10'000'000) throw ConfigError(path, "seed range too long");
        for (auto x = a; x <= b; ++x) out.push_back(x);
        return out;
    }
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(num(tok));
    if (out.empty()) throw ConfigError(path, "no seeds given");
    return out;
}

inline RateFunction read_rate(const Json& j, const std::string& path)
{
    if (!j.is_object()) return RateFunction::constant(read_double(j, path));
    Fields f(j, path);
    RateFunction r{f.get<std::vector<double>>("knots"), f.get<std::vector<double>>("values")};
    f.finish();
    try {
        r.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path, e.what());
    }
    return r;
}

inline DistSpec read_dist_spec(const Json& j, const std::string& path)
{
    Fields f(j, path);
    DistSpec d;
    d.family = f.get<std::string>("family");
    if (f.has("params")) {
        Fields p = f.object("params");
        for (auto it = f.at("params").begin(); it != f.at("params").end(); ++it) d.params[it.key()] = p.get<double>(it.key());
        p.finish();
    }
    d.alpha = f.get<std::vector<double>>("alpha", {});
    d.matrix = f.get<std::vector<std::vector<double>>>("matrix", {});
    d.breaks = f.get<std::vector<double>>("breaks", {});
    d.densities = f.get<std::vector<double>>("densities", {});
    d.normalize = f.get<bool>("normalize", true);
    f.finish();
    return d;
}

inline ServiceDistribution build_dist(const DistSpec& s, const std::string& path)
{
    static const std::map<std::string, std::set<std::string>> allowed{
        {"exponential", {"rate"}},         {"lognormal", {"sigma", "mu"}},   {"weibull", {"shape", "scale"}},
        {"gamma", {"shape", "scale"}},     {"pareto", {"shape", "scale"}},   {"logistic", {"shape", "scale"}},
        {"phase_type", {}},                {"piecewise", {}}};
    auto it = allowed.find(s.family);
    if (it == allowed.end()) throw ConfigError(join_path(path, "family"), "unknown family '" + s.family + "'");
    for (const auto& [k, v] : s.params)
        if (!it->second.count(k)) throw ConfigError(join_path(path, "params." + k), "not a parameter of " + s.family);
    try {
        return make_service_dist(s);
    } catch (const std::exception& e) {
        throw ConfigError(path, e.what());
    }
}

struct InitialSpec {
    std::string kind = "empty";  // empty | equilibrium | explicit
    std::int64_t x0 = -1;        // customers; -1 means use x0_fraction·N
    double x0_fraction = 0.0;
    std::vector<double> ages;
    ResidualSampling residual = ResidualSampling::ConditionalOnAge;

    std::int64_t customers(int N) const { return x0 >= 0 ? x0 : std::llround(x0_fraction * N); }
};

struct ModelSpec {
    DistSpec service_spec;
    ServiceDistribution service;
    ArrivalSpec arrival;
    std::vector<int> Ns{1};
    InitialSpec initial;
    double horizon = 1.0;
};

struct NumericsSpec {
    double dt = 0.01;
    double dx = 0.0;     // 0 means dx = dt
    double x_max = 0.0;  // 0 means chosen from the tail budget
    double tail = 1e-6;
    std::string regime = "auto";
    std::vector<std::string> test_functions{"1"};
    double x0hat = 0.0;
    std::vector<std::vector<double>> nu0hat_atoms;  // [age, weight] pairs
};

struct RunSpec {
    std::vector<std::uint64_t> seeds;
    bool has_seed = false;
    std::uint64_t seed = 0;
    int paths = 1;
    std::vector<double> snapshot_times;
    int jobs = 1;
    std::string out;
};

struct ExperimentConfig {
    int schema_version = kSchemaVersion;
    std::string kind;  // sim | fluid | limit | verify | dists
    bool has_model = false;
    ModelSpec model;
    NumericsSpec numerics;
    RunSpec run;
    std::string verify_test;
    Json verify_params;
    Json raw;
};

inline const std::set<std::string>& experiment_kinds()
{
    static const std::set<std::string> k{"sim", "fluid", "limit", "verify", "dists"};
    return k;
}

inline InitialSpec read_initial(Fields f)
{
    InitialSpec s;
    s.kind = f.get<std::string>("kind", "empty");
    if (s.kind == "empty") {
        s.x0 = 0;
    } else if (s.kind == "equilibrium") {
        if (f.has("x0") == f.has("x0_fraction")) throw ConfigError(f.path("x0"), "give exactly one of x0 and x0_fraction");
        if (f.has("x0")) {
            s.x0 = f.get<std::int64_t>("x0");
            if (s.x0 < 0) throw ConfigError(f.path("x0"), "must be nonnegative");
        } else {
            s.x0_fraction = f.get<double>("x0_fraction");
            if (!(s.x0_fraction >= 0.0) || !std::isfinite(s.x0_fraction))
                throw ConfigError(f.path("x0_fraction"), "must be finite and nonnegative");
        }
        auto r = f.get<std::string>("residual", "conditional_on_age");
        if (r == "fresh")
            s.residual = ResidualSampling::Fresh;
        else if (r != "conditional_on_age")
            throw ConfigError(f.path("residual"), "expected conditional_on_age or fresh");
    } else if (s.kind == "explicit") {
        s.x0 = f.get<std::int64_t>("x0");
        if (s.x0 < 0) throw ConfigError(f.path("x0"), "must be nonnegative");
        s.ages = f.get<std::vector<double>>("ages");
        for (double a : s.ages)
            if (!(a >= 0.0) || !std::isfinite(a)) throw ConfigError(f.path("ages"), "ages must be finite and nonnegative");
    } else {
        throw ConfigError(f.path("kind"), "expected empty, equilibrium or explicit");
    }
    f.finish();
    return s;
}

inline ModelSpec read_model(Fields f, bool service_only)
{
    ModelSpec m;
    m.service_spec = read_dist_spec(f.at("service"), f.path("service"));
    m.service = build_dist(m.service_spec, f.path("service"));
    if (service_only) {
        f.finish();
        return m;
    }
    m.horizon = f.get<double>("horizon");
    if (!(m.horizon > 0.0) || !std::isfinite(m.horizon)) throw ConfigError(f.path("horizon"), "must be positive and finite");
    const Json& jn = f.at("N");
    m.Ns = jn.is_array() ? read_value<std::vector<int>>(jn, f.path("N")) : std::vector<int>{read_value<int>(jn, f.path("N"))};
    if (m.Ns.empty()) throw ConfigError(f.path("N"), "empty list");
    for (int N : m.Ns)
        if (N < 1) throw ConfigError(f.path("N"), "every N must be at least 1");
    {
        Fields a = f.object("arrival");
        auto kind = a.get<std::string>("kind", "renewal");
        if (kind == "renewal")
            m.arrival.kind = ArrivalKind::Renewal;
        else if (kind == "inhomogeneous_poisson")
            m.arrival.kind = ArrivalKind::InhomPoisson;
        else
            throw ConfigError(a.path("kind"), "expected renewal or inhomogeneous_poisson");
        m.arrival.lambda_bar = read_rate(a.at("lambda_bar"), a.path("lambda_bar"));
        m.arrival.beta = a.has("beta") ? read_rate(a.at("beta"), a.path("beta")) : RateFunction::constant(0.0);
        m.arrival.sigma2 = a.get<double>("sigma2", 1.0);
        a.finish();
        for (int N : m.Ns) {
            try {
                m.arrival.validate(N, m.horizon);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(f.path("arrival"), std::string(e.what()) + " (N = " + std::to_string(N) + ")");
            }
        }
    }
    if (f.has("initial")) m.initial = read_initial(f.object("initial"));
    if (m.initial.kind == "explicit")
        for (int N : m.Ns)
            if (static_cast<std::int64_t>(m.initial.ages.size()) != std::min<std::int64_t>(m.initial.x0, N))
                throw ConfigError(f.path("initial.ages"), "need min(x0, N) ages for N = " + std::to_string(N));
    f.finish();
    return m;
}

inline NumericsSpec read_numerics(Fields f)
{
    NumericsSpec n;
    n.dt = f.get<double>("dt", n.dt);
    n.dx = f.get<double>("dx", n.dx);
    n.x_max = f.get<double>("x_max", n.x_max);
    n.tail = f.get<double>("tail", n.tail);
    if (!(n.dt > 0.0) || !std::isfinite(n.dt)) throw ConfigError(f.path("dt"), "must be positive");
    if (!(n.dx >= 0.0) || !std::isfinite(n.dx)) throw ConfigError(f.path("dx"), "must be nonnegative");
    if (!(n.x_max >= 0.0) || !std::isfinite(n.x_max)) throw ConfigError(f.path("x_max"), "must be nonnegative");
    if (!(n.tail > 0.0 && n.tail < 1.0)) throw ConfigError(f.path("tail"), "must lie in (0, 1)");
    n.regime = f.get<std::string>("regime", n.regime);
    static const std::set<std::string> regimes{"auto", "subcritical", "critical", "supercritical"};
    if (!regimes.count(n.regime)) throw ConfigError(f.path("regime"), "expected auto, subcritical, critical or supercritical");
    n.test_functions = f.get<std::vector<std::string>>("test_functions", n.test_functions);
    static const std::set<std::string> names{"1", "exp", "1-G", "h"};
    for (const auto& s : n.test_functions)
        if (!names.count(s)) throw ConfigError(f.path("test_functions"), "unknown test function '" + s + "'");
    n.x0hat = f.get<double>("x0hat", n.x0hat);
    n.nu0hat_atoms = f.get<std::vector<std::vector<double>>>("nu0hat_atoms", {});
    for (const auto& a : n.nu0hat_atoms)
        if (a.size() != 2 || !(a[0] >= 0.0)) throw ConfigError(f.path("nu0hat_atoms"), "each atom is [age >= 0, weight]");
    f.finish();
    return n;
}

inline RunSpec read_run(Fields f)
{
    RunSpec r;
    if (f.has("seeds")) {
        const Json& s = f.at("seeds");
        r.seeds = s.is_string() ? parse_seeds(s.get<std::string>(), f.path("seeds"))
                                : read_value<std::vector<std::uint64_t>>(s, f.path("seeds"));
        if (r.seeds.empty()) throw ConfigError(f.path("seeds"), "no seeds given");
    }
    if (f.has("seed")) {
        r.has_seed = true;
        r.seed = f.get<std::uint64_t>("seed");
    }
    r.paths = f.get<int>("paths", 1);
    if (r.paths < 1) throw ConfigError(f.path("paths"), "must be at least 1");
    r.snapshot_times = f.get<std::vector<double>>("snapshot_times", {});
    r.jobs = f.get<int>("jobs", 1);
    if (r.jobs < 1) throw ConfigError(f.path("jobs"), "must be at least 1");
    r.out = f.get<std::string>("out", "");
    f.finish();
    return r;
}

inline const std::set<std::string>& verify_tests()
{
    static const std::set<std::string> t{"fclt",       "insensitivity", "moments",    "flln",  "sae",
                                         "representation", "identities", "martingale", "fluid", "cmse"};
    return t;
}

inline ExperimentConfig parse_config(const Json& j)
{
    ExperimentConfig c;
    Fields f(j, "");
    c.raw = j;
    c.schema_version = f.get<int>("schema_version");
    if (c.schema_version != kSchemaVersion)
        throw ConfigError("schema_version", "unsupported version " + std::to_string(c.schema_version) + " (expected " +
                                                std::to_string(kSchemaVersion) + ")");
    c.kind = f.get<std::string>("kind");
    if (!experiment_kinds().count(c.kind)) throw ConfigError("kind", "expected sim, fluid, limit, verify or dists");
    if (c.kind != "verify") {
        c.model = read_model(f.object("model"), c.kind == "dists");
        c.has_model = true;
    }
    if (f.has("numerics")) c.numerics = read_numerics(f.object("numerics"));
    if (f.has("run")) c.run = read_run(f.object("run"));
    if (c.kind == "verify") {
        Fields v = f.object("verify");
        c.verify_test = v.get<std::string>("test");
        if (!verify_tests().count(c.verify_test)) throw ConfigError(v.path("test"), "unknown test '" + c.verify_test + "'");
        c.verify_params = v.has("params") ? v.at("params") : Json::object();
        if (!c.verify_params.is_object()) throw ConfigError(v.path("params"), "expected an object");
        v.finish();
    } else if (f.has("verify")) {
        throw ConfigError("verify", "only allowed for kind verify");
    }
    for (double t : c.run.snapshot_times)
        if (!(t >= 0.0) || (c.has_model && t > c.model.horizon)) throw ConfigError("run.snapshot_times", "times must lie in [0, horizon]");
    f.finish();
    return c;
}

// A manifest embeds the effective configuration, so it can be fed back in.
inline Json unwrap_manifest(const Json& j)
{
    if (j.is_object() && j.contains("qedlab_manifest")) {
        if (!j.contains("config")) throw ConfigError("config", "manifest without a config");
        return j.at("config");
    }
    return j;
}

inline ExperimentConfig load_config(const std::string& file)
{
    std::ifstream in(file);
    if (!in) throw ConfigError("--config", "cannot open '" + file + "'");
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
    }
    return parse_config(unwrap_manifest(j));
}

// ---------------------------------------------------------------- builders

inline SimConfig build_sim_config(const ExperimentConfig& c, int N, std::uint64_t seed)
{
    const auto& m = c.model;
    SimConfig s;
    s.N = N;
    s.arrival = m.arrival;
    s.service = m.service;
    s.T = m.horizon;
    s.seed = seed;
    s.replicate = 0;
    s.snapshot_times = c.run.snapshot_times;
    if (m.initial.kind == "explicit") {
        s.initial.x0 = m.initial.x0;
        s.initial.ages = m.initial.ages;
    } else if (m.initial.kind == "equilibrium") {
        s.initial = equilibrium_initial(m.service, m.initial.customers(N), N, seed, 0);
        s.initial.residual = m.initial.residual;
    }
    return s;
}

// Fluid data matching the configured start: x̄₀ customers with ν̄₀ = (x̄₀∧1)(1−G).
inline FluidInit build_fluid_init(const ExperimentConfig& c)
{
    const auto& m = c.model;
    if (m.initial.kind == "explicit")
        throw ConfigError("model.initial.kind", "explicit ages have no fluid counterpart; use empty or equilibrium");
    double x0 = 0.0;
    if (m.initial.kind == "equilibrium")
        x0 = m.initial.x0 >= 0 ? static_cast<double>(m.initial.x0) / m.Ns.front() : m.initial.x0_fraction;
    FluidInit init = invariant_start(m.service, 0.0, x0);
    init.lambda_bar = m.arrival.lambda_bar;
    return init;
}

inline Regime parse_regime(const std::string& s)
{
    if (s == "subcritical") return Regime::Subcritical;
    if (s == "critical") return Regime::Critical;
    if (s == "supercritical") return Regime::Supercritical;
    return Regime::Mixed;
}

inline LimitModel build_limit_model(const ExperimentConfig& c, const FluidPath& fluid)
{
    LimitModel lm;
    lm.dist = c.model.service;
    lm.arrival = c.model.arrival;
    lm.regime = c.numerics.regime == "auto" ? fluid.regime : parse_regime(c.numerics.regime);
    lm.x0hat = c.numerics.x0hat;
    for (const auto& a : c.numerics.nu0hat_atoms) lm.nu0hat.atoms.emplace_back(a[0], a[1]);
    for (const auto& name : c.numerics.test_functions) lm.tests.push_back(make_test_function(name, lm.dist));
    return lm;
}

// ---------------------------------------------------------------- output helpers

inline std::uint64_t fnv1a64(const std::string& s)
{
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t h)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Hash of the configuration with the fields that cannot change outputs
// (output location, thread count) removed.
inline std::string config_hash(Json j)
{
    if (j.contains("run") && j["run"].is_object()) {
        j["run"].erase("out");
        j["run"].erase("jobs");
    }
    return hex64(fnv1a64(j.dump()));
}

// Shortest decimal that round-trips.
inline std::string csv_num(double x)
{
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

}  // namespace qedlab
