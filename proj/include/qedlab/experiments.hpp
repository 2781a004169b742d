#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dists.hpp"
#include "fluid.hpp"
#include "limitsim.hpp"
#include "microsim.hpp"
#include "scalestats.hpp"

namespace qedlab {

// Runs fn(i) for i < n on up to `jobs` threads. Callers write results by
// index, so the outcome does not depend on the thread count.
template <class F>
void parallel_for(std::size_t n, unsigned jobs, F&& fn)
{
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex m;
    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(m);
                if (!err) err = std::current_exception();
                next = n;
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < std::min<std::size_t>(jobs, n); ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

// Shortest readable form: 1, 0.0025, 1.49027.
inline std::string fmt_num(double x)
{
    std::ostringstream os;
    os << x;
    return os.str();
}

inline TestReport make_report(std::string name, double value, double threshold, std::size_t replicates, double se = 0.0)
{
    TestReport r;
    r.name = std::move(name);
    r.value = value;
    r.threshold = threshold;
    r.pass = value <= threshold;
    r.replicates = replicates;
    r.se = se;
    return r;
}

// Exact ∫_0^t <h, ν_s> ds from the cumulative hazard along every stay.
inline double cumulative_hazard_compensator(const PathRecord& p, double t)
{
    const auto& d = p.service;
    double acc = 0.0;
    for (const auto& r : p.services) {
        double lo = std::max(r.start, 0.0), hi = std::min(r.depart, t);
        if (hi > lo) acc += d.cumulative_hazard(hi - r.start) - d.cumulative_hazard(lo - r.start);
    }
    return acc;
}

// M/GI/N with λ^N = λ̄N − β√N started at x0 = round(x̄₀N) with equilibrium ages.
inline SimConfig qed_config(const ServiceDistribution& d, int N, double lambda_bar, double beta, double xbar0, double T,
                            std::uint64_t seed, std::uint64_t rep, double sigma2 = 1.0)
{
    SimConfig c;
    c.N = N;
    c.service = d;
    c.T = T;
    c.arrival.kind = ArrivalKind::Renewal;
    c.arrival.lambda_bar = RateFunction::constant(lambda_bar);
    c.arrival.beta = RateFunction::constant(beta);
    c.arrival.sigma2 = sigma2;
    c.seed = seed;
    c.replicate = rep;
    c.initial = equilibrium_initial(d, std::llround(xbar0 * N), N, seed, rep);
    return c;
}

// ---------------------------------------------------------------- identities

struct IdentityParams {
    int configs = 200;
    int seeds = 10;
    std::uint64_t seed = 1;
    double max_failures = 0.0;

    template <class V>
    void visit(V& v)
    {
        v("configs", configs);
        v("seeds", seeds);
        v("seed", seed);
        v("max_failures", max_failures);
    }
};

// Random model configuration number i.
inline SimConfig random_config(std::uint64_t master, std::uint64_t i)
{
    Engine eng = make_engine(master, i, 40);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto pick = [&](int n) { return static_cast<int>(u(eng) * n) % n; };
    DistSpec ds;
    switch (pick(8)) {
        case 0: ds.family = "exponential"; break;
        case 1: ds = {.family = "lognormal", .params = {{"sigma", 0.2 + 1.3 * u(eng)}}}; break;
        case 2: ds = {.family = "weibull", .params = {{"shape", 0.6 + 2.4 * u(eng)}}}; break;
        case 3: ds = {.family = "gamma", .params = {{"shape", 0.5 + 3.0 * u(eng)}}}; break;
        case 4: ds = {.family = "pareto", .params = {{"shape", 2.1 + 2.0 * u(eng)}}}; break;
        case 5: ds = {.family = "logistic", .params = {{"shape", 2.0 + 3.0 * u(eng)}}}; break;
        case 6:
            ds.family = "phase_type";
            ds.alpha = {0.4, 0.6};
            ds.matrix = {{-0.5 - u(eng), 0.2}, {0.0, -2.0 - u(eng)}};
            break;
        default:
            ds.family = "piecewise";
            ds.breaks = {0.0, 0.5, 1.0 + u(eng), 3.0};
            ds.densities = {0.2 + u(eng), 1.0, 0.3};
            break;
    }
    SimConfig c;
    c.service = make_service_dist(ds);
    c.N = 1 + pick(40);
    c.T = 1.0 + 4.0 * u(eng);
    const double lb = 0.3 + 1.2 * u(eng);
    const double beta = (u(eng) - 0.5) * 0.9 * lb * std::sqrt(static_cast<double>(c.N));
    if (u(eng) < 0.5) {
        c.arrival.kind = ArrivalKind::Renewal;
        c.arrival.lambda_bar = RateFunction::constant(lb);
        c.arrival.beta = RateFunction::constant(beta);
        c.arrival.sigma2 = 0.2 + 2.0 * u(eng);
    } else {
        c.arrival.kind = ArrivalKind::InhomPoisson;
        c.arrival.lambda_bar = RateFunction::linear(lb, 0.3 * u(eng), c.T);
        c.arrival.beta = RateFunction::constant(beta);
    }
    const auto x0 = static_cast<std::int64_t>(pick(2 * c.N + 1));
    c.initial = equilibrium_initial(c.service, x0, c.N, master, i);
    if (u(eng) < 0.3) c.initial.residual = ResidualSampling::Fresh;
    return c;
}

inline std::vector<TestReport> identity_suite(const IdentityParams& prm, unsigned jobs = 1)
{
    const auto total = static_cast<std::size_t>(prm.configs) * static_cast<std::size_t>(prm.seeds);
    std::vector<char> bad(total, 0);
    parallel_for(total, jobs, [&](std::size_t i) {
        SimConfig c = random_config(prm.seed, i / static_cast<std::size_t>(prm.seeds));
        c.seed = prm.seed + 1000;
        c.replicate = i;
        bad[i] = !check_invariants(simulate(c)).ok();
    });
    double failures = 0.0;
    for (char b : bad) failures += b;
    return {make_report("identities_failed_paths", failures, prm.max_failures, total)};
}

// ---------------------------------------------------------------- martingale

struct MartingaleParams {
    int N = 50;
    double T = 5.0;
    int replicates = 10000;
    double lambda_bar = 1.0;
    double beta = 1.0;
    std::uint64_t seed = 2;
    double z_max = 3.0;
    double var_tol = 0.05;

    template <class V>
    void visit(V& v)
    {
        v("N", N);
        v("T", T);
        v("replicates", replicates);
        v("lambda_bar", lambda_bar);
        v("beta", beta);
        v("seed", seed);
        v("z_max", z_max);
        v("var_tol", var_tol);
    }
};

// M_1(T) = D(T) − A_1(T) over replicates of a QED system at its invariant state.
inline std::vector<TestReport> martingale_suite(const ServiceDistribution& d, const MartingaleParams& prm, unsigned jobs = 1)
{
    const auto R = static_cast<std::size_t>(prm.replicates);
    std::vector<double> M(R), A(R);
    parallel_for(R, jobs, [&](std::size_t r) {
        auto p = simulate(qed_config(d, prm.N, prm.lambda_bar, prm.beta, 1.0, prm.T, prm.seed, r));
        A[r] = cumulative_hazard_compensator(p, prm.T);
        M[r] = static_cast<double>(p.counters_at(prm.T).D) - A[r];
    });
    auto sm = sample_stats(M), sa = sample_stats(A);
    const std::string tag = d.name();
    return {make_report("martingale_mean_" + tag, std::abs(sm.mean) / sm.se, prm.z_max, R, sm.se),
            make_report("martingale_qv_" + tag, std::abs(sm.var - sa.mean) / sm.var, prm.var_tol, R, sa.se)};
}

// ---------------------------------------------------------------- representation

struct RepresentationParams {
    int N = 20;
    double T = 5.0;
    double shift = 1.0;
    std::vector<double> dts{0.02, 0.01, 0.005, 0.0025};
    int seeds = 3;
    std::uint64_t seed = 3;
    double ratio_lo = 0.3;
    double ratio_hi = 0.7;

    template <class V>
    void visit(V& v)
    {
        v("N", N);
        v("T", T);
        v("shift", shift);
        v("dts", dts);
        v("seeds", seeds);
        v("seed", seed);
        v("ratio_lo", ratio_lo);
        v("ratio_hi", ratio_hi);
    }
};

struct RatioSummary {
    double lo = kInf, hi = -kInf;
    void add(double r)
    {
        lo = std::min(lo, r);
        hi = std::max(hi, r);
    }
};

// Distance of the observed ratios outside [lo, hi]; 0 when all are inside.
inline TestReport ratio_report(std::string name, const RatioSummary& r, double lo, double hi, std::size_t replicates)
{
    const double out = std::max({0.0, lo - r.lo, r.hi - hi});
    auto t = make_report(std::move(name), std::isnan(out) ? kInf : out, 0.0, replicates);
    t.detail = "ratios in [" + fmt_num(r.lo) + ", " + fmt_num(r.hi) + "], allowed [" + fmt_num(lo) + ", " + fmt_num(hi) + "]";
    return t;
}

// Successive ratios of the max-grid residual as dt halves, for the pre-limit
// representation and for the shifted identity.
inline std::vector<TestReport> representation_suite(const RepresentationParams& prm, unsigned jobs = 1)
{
    struct Case {
        ServiceDistribution d;
        std::string f;
    };
    std::vector<Case> cases{{exponential_dist(), "1"}, {lognormal_dist(0.5), "1-G"}};
    const std::size_t S = static_cast<std::size_t>(prm.seeds), L = prm.dts.size();
    std::vector<double> rep(cases.size() * S * L), shf(cases.size() * S * L);
    parallel_for(cases.size() * S, jobs, [&](std::size_t i) {
        const auto& cs = cases[i / S];
        auto p = simulate(qed_config(cs.d, prm.N, 1.0, 1.0, 1.0, prm.T, prm.seed, i % S));
        auto tf = make_test_function(cs.f, cs.d);
        for (std::size_t l = 0; l < L; ++l) {
            rep[i * L + l] = representation_residual(p, tf.f, prm.dts[l], prm.T).max_abs();
            shf[i * L + l] = shift_consistency_check(p, prm.shift, tf.f, prm.dts[l], prm.T).max_abs();
        }
    });
    RatioSummary a, b;
    for (std::size_t i = 0; i < cases.size() * S; ++i)
        for (std::size_t l = 1; l < L; ++l) {
            a.add(rep[i * L + l] / rep[i * L + l - 1]);
            b.add(shf[i * L + l] / shf[i * L + l - 1]);
        }
    return {ratio_report("representation_ratio_excess", a, prm.ratio_lo, prm.ratio_hi, cases.size() * S),
            ratio_report("shift_ratio_excess", b, prm.ratio_lo, prm.ratio_hi, cases.size() * S)};
}

// ---------------------------------------------------------------- FLLN

struct FllnParams {
    std::vector<int> Ns{25, 100, 400};
    int seeds = 200;
    double sigma = 1.0;
    double lambda_bar = 0.9;
    double T = 5.0;
    double grid_dt = 0.01;
    double fluid_dt = 1e-3;
    std::uint64_t seed = 4;
    double slope_target = -0.5;
    double slope_tol = 0.2;

    template <class V>
    void visit(V& v)
    {
        v("Ns", Ns);
        v("seeds", seeds);
        v("sigma", sigma);
        v("lambda_bar", lambda_bar);
        v("T", T);
        v("grid_dt", grid_dt);
        v("fluid_dt", fluid_dt);
        v("seed", seed);
        v("slope_target", slope_target);
        v("slope_tol", slope_tol);
    }
};

// sup_t |X^N(t)/N − X̄(t)| from an empty start, averaged over seeds, against
// log N.
inline std::vector<TestReport> flln_suite(const FllnParams& prm, unsigned jobs = 1)
{
    auto d = lognormal_dist(prm.sigma);
    auto fl = solve_fluid(empty_start(prm.lambda_bar), d, prm.T, prm.fluid_dt);
    auto grid = uniform_grid(prm.T, prm.grid_dt);
    std::vector<double> xbar(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) xbar[k] = interpolate(fl, fl.Xbar, grid[k]);
    std::vector<double> lx, ly;
    const auto S = static_cast<std::size_t>(prm.seeds);
    for (int N : prm.Ns) {
        std::vector<double> err(S);
        parallel_for(S, jobs, [&](std::size_t r) {
            SimConfig c = qed_config(d, N, prm.lambda_bar, 0.0, 0.0, prm.T, prm.seed + static_cast<std::uint64_t>(N), r);
            auto p = simulate(c);
            double worst = 0.0;
            for (std::size_t k = 0; k < grid.size(); ++k)
                worst = std::max(worst, std::abs(static_cast<double>(p.counters_at(grid[k]).X) / N - xbar[k]));
            err[r] = worst;
        });
        lx.push_back(std::log(static_cast<double>(N)));
        ly.push_back(std::log(sample_stats(err).mean));
    }
    const double slope = ls_slope(lx, ly);
    auto t = make_report("flln_slope_dev", std::abs(slope - prm.slope_target), prm.slope_tol, S * prm.Ns.size());
    t.detail = "slope " + fmt_num(slope);
    return {t};
}

// ---------------------------------------------------------------- fluid invariance

struct FluidInvarianceParams {
    double dt = 1e-3;
    double T = 10.0;
    double factor = 10.0;

    template <class V>
    void visit(V& v)
    {
        v("dt", dt);
        v("T", T);
        v("factor", factor);
    }
};

inline std::vector<TestReport> fluid_invariance_suite(const FluidInvarianceParams& prm, unsigned jobs = 1)
{
    std::vector<ServiceDistribution> ds{exponential_dist(), lognormal_dist(1.0), gamma_dist(2.0)};
    std::vector<TestReport> out(ds.size());
    parallel_for(ds.size(), jobs, [&](std::size_t i) {
        auto p = solve_fluid(invariant_start(ds[i], 1.0, 1.0), ds[i], prm.T, prm.dt);
        double worst = 0.0;
        for (double x : p.Xbar) worst = std::max(worst, std::abs(x - 1.0));
        out[i] = make_report("fluid_invariance_" + ds[i].name(), worst, prm.factor * prm.dt, p.t.size());
    });
    return out;
}

// ---------------------------------------------------------------- FCLT / Halfin–Whitt

struct FcltParams {
    int N = 400;
    double beta = 1.0;
    int des_replicates = 2000;
    int euler_paths = 200000;
    double euler_dt = 1e-3;
    std::vector<double> times{1.0, 5.0};
    std::uint64_t seed = 6;
    double ks_max = 0.06;

    template <class V>
    void visit(V& v)
    {
        v("N", N);
        v("beta", beta);
        v("des_replicates", des_replicates);
        v("euler_paths", euler_paths);
        v("euler_dt", euler_dt);
        v("times", times);
        v("seed", seed);
        v("ks_max", ks_max);
    }
};

// M/M/N started at the critical invariant state: marginals of X̂^N against
// Euler paths of the Halfin–Whitt diffusion with σ² = 1.
inline std::vector<TestReport> fclt_suite(const FcltParams& prm, unsigned jobs = 1)
{
    auto d = exponential_dist();
    const double T = *std::max_element(prm.times.begin(), prm.times.end());
    auto fl = solve_fluid(invariant_start(d, 1.0, 1.0), d, T, 0.01);
    const auto R = static_cast<std::size_t>(prm.des_replicates), P = static_cast<std::size_t>(prm.euler_paths);
    const std::size_t nt = prm.times.size();
    std::vector<double> des(R * nt), hw(P * nt);
    parallel_for(R, jobs, [&](std::size_t r) {
        auto p = simulate(qed_config(d, prm.N, 1.0, prm.beta, 1.0, T, prm.seed, r));
        auto s = diffusion_scale(p, fl, prm.times);
        for (std::size_t j = 0; j < nt; ++j) des[r * nt + j] = s.values[Quantity::X][j];
    });
    std::vector<std::size_t> idx(nt);
    for (std::size_t j = 0; j < nt; ++j) idx[j] = static_cast<std::size_t>(std::llround(prm.times[j] / prm.euler_dt));
    parallel_for(P, jobs, [&](std::size_t r) {
        auto x = simulate_hw(prm.beta, 1.0, 0.0, prm.euler_dt, T, prm.seed + 1, r);
        for (std::size_t j = 0; j < nt; ++j) hw[r * nt + j] = x[idx[j]];
    });
    std::vector<TestReport> out;
    for (std::size_t j = 0; j < nt; ++j) {
        std::vector<double> a(R), b(P);
        for (std::size_t r = 0; r < R; ++r) a[r] = des[r * nt + j];
        for (std::size_t r = 0; r < P; ++r) b[r] = hw[r * nt + j];
        auto t = make_report("fclt_ks_t" + fmt_num(prm.times[j]), ks_distance(a, b), prm.ks_max, R);
        t.detail = "var DES " + fmt_num(sample_stats(a).var) + ", var HW " + fmt_num(sample_stats(b).var);
        out.push_back(t);
    }
    return out;
}

// ---------------------------------------------------------------- insensitivity

struct InsensitivityParams {
    int N = 400;
    double T = 5.0;
    double dt = 1e-3;
    double sigma2 = 1.0;
    double beta = 1.0;
    double lognormal_sigma = 1.0;
    int replicates = 20;
    std::uint64_t seed = 7;
    double tol = 0.1;

    template <class V>
    void visit(V& v)
    {
        v("N", N);
        v("T", T);
        v("dt", dt);
        v("sigma2", sigma2);
        v("beta", beta);
        v("lognormal_sigma", lognormal_sigma);
        v("replicates", replicates);
        v("seed", seed);
        v("tol", tol);
    }
};

// Grid path of the martingale part (E − ∫λ^N)/√N − (D − A_1)/√N.
inline std::vector<double> martingale_part(const PathRecord& p, double dt, double T)
{
    auto A = compensator_path(p, [](double, double) { return 1.0; }, dt, T);
    auto grid = uniform_grid(T, dt);
    const double rn = std::sqrt(static_cast<double>(p.N));
    std::vector<double> m(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        auto c = p.counters_at(grid[k]);
        m[k] = (static_cast<double>(c.E) - static_cast<double>(c.D) + A[k]) / rn;
    }
    return m;
}

inline std::vector<TestReport> insensitivity_suite(const InsensitivityParams& prm, unsigned jobs = 1)
{
    std::vector<ServiceDistribution> ds{exponential_dist(), lognormal_dist(prm.lognormal_sigma)};
    const auto R = static_cast<std::size_t>(prm.replicates);
    std::vector<double> qv(ds.size() * R);
    parallel_for(ds.size() * R, jobs, [&](std::size_t i) {
        const auto& d = ds[i / R];
        auto p = simulate(qed_config(d, prm.N, 1.0, prm.beta, 1.0, prm.T, prm.seed, i % R, prm.sigma2));
        auto m = martingale_part(p, prm.dt, prm.T);
        // the deterministic λ^N t term has vanishing quadratic variation
        const double drift = (prm.N - prm.beta * std::sqrt(prm.N)) * prm.dt / std::sqrt(prm.N);
        for (std::size_t k = 1; k < m.size(); ++k) m[k] -= drift * static_cast<double>(k);
        qv[i] = qv_estimate(m);
    });
    std::vector<double> means;
    std::vector<TestReport> out;
    const double target = (1.0 + prm.sigma2) * prm.T;
    for (std::size_t j = 0; j < ds.size(); ++j) {
        std::vector<double> q(qv.begin() + static_cast<std::ptrdiff_t>(j * R), qv.begin() + static_cast<std::ptrdiff_t>((j + 1) * R));
        auto s = sample_stats(q);
        means.push_back(s.mean);
        auto t = make_report("qv_coefficient_" + ds[j].name(), std::abs(s.mean / target - 1.0), prm.tol, R, s.se);
        t.detail = "mean QV " + fmt_num(s.mean) + " vs " + fmt_num(target);
        out.push_back(t);
    }
    out.insert(out.begin(), make_report("qv_exponential_vs_lognormal", std::abs(means[1] / means[0] - 1.0), prm.tol, R));
    return out;
}

// ---------------------------------------------------------------- moments

struct MomentsParams {
    int N = 100;
    int replicates = 1000;
    std::vector<double> horizons{1.0, 2.0};
    double beta = 1.0;
    double renewal_dt = 1e-3;
    std::uint64_t seed = 8;
    double bound_factor = 1.0;

    template <class V>
    void visit(V& v)
    {
        v("N", N);
        v("replicates", replicates);
        v("horizons", horizons);
        v("beta", beta);
        v("renewal_dt", renewal_dt);
        v("seed", seed);
        v("bound_factor", bound_factor);
    }
};

// Ā₁(T) uses the exact cumulative hazard (φ ≡ 1).
inline std::vector<TestReport> moments_suite(const MomentsParams& prm, unsigned jobs = 1)
{
    std::vector<ServiceDistribution> ds{exponential_dist(), gamma_dist(2.0)};
    std::vector<TestReport> out;
    const auto R = static_cast<std::size_t>(prm.replicates);
    for (const auto& d : ds)
        for (double T : prm.horizons) {
            std::vector<double> abar(R);
            parallel_for(R, jobs, [&](std::size_t r) {
                auto p = simulate(qed_config(d, prm.N, 1.0, prm.beta, 1.0, T, prm.seed, r));
                abar[r] = cumulative_hazard_compensator(p, T) / prm.N;
            });
            const double U = renewal_function(d, T, prm.renewal_dt).back();
            for (int k = 1; k <= 3; ++k) {
                auto t = moment_bound_from_samples(abar, U, k, prm.seed);
                t.threshold *= prm.bound_factor;
                t.pass = t.value <= t.threshold;
                t.name = "moment_" + d.name() + "_T" + fmt_num(T) + "_k" + fmt_num(k);
                out.push_back(t);
            }
        }
    return out;
}

// ---------------------------------------------------------------- CMSE

struct CmseParams {
    int perturbations = 100;
    double T = 5.0;
    double dt = 0.01;
    double eps = 0.05;
    std::uint64_t seed = 9;
    double constant = 3.0;
    double sub_tol = 0.0;

    template <class V>
    void visit(V& v)
    {
        v("perturbations", perturbations);
        v("T", T);
        v("dt", dt);
        v("eps", eps);
        v("seed", seed);
        v("constant", constant);
        v("sub_tol", sub_tol);
    }
};

// Largest output deviation over (1+U(T))ε across random perturbations in every
// regime, against the Lipschitz constant 3; plus the subcritical K̂ = Ê.
inline std::vector<TestReport> cmse_suite(const CmseParams& prm, unsigned jobs = 1)
{
    std::vector<ServiceDistribution> ds{exponential_dist(), lognormal_dist(0.5), gamma_dist(2.0)};
    const Regime regimes[] = {Regime::Subcritical, Regime::Critical, Regime::Supercritical};
    const auto n = static_cast<std::size_t>(std::llround(prm.T / prm.dt));
    const auto P = static_cast<std::size_t>(prm.perturbations);
    std::vector<double> ratio(P, 0.0), sub_gap(P, 0.0);
    std::vector<double> bound(ds.size());
    for (std::size_t j = 0; j < ds.size(); ++j)
        bound[j] = (1.0 + renewal_function(ds[j], prm.T, prm.dt).back()) * prm.eps;
    parallel_for(P, jobs, [&](std::size_t i) {
        Engine eng = make_engine(prm.seed, i, 50);
        std::normal_distribution<double> z;
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        const std::size_t j = i % ds.size();
        const Regime r = regimes[(i / ds.size()) % 3];
        std::vector<double> E(n + 1, 0.0), Z(n + 1, 0.0);
        for (std::size_t k = 1; k <= n; ++k) {
            E[k] = E[k - 1] + std::sqrt(prm.dt) * z(eng) - prm.dt;
            Z[k] = Z[k - 1] + std::sqrt(prm.dt) * z(eng);
        }
        const double x0 = z(eng);
        // smooth and rough perturbations, each of sup-size ≤ ε
        const double a = u(eng), b = u(eng), w = 1.0 + 5.0 * std::abs(u(eng));
        const double x0p = x0 + prm.eps * u(eng);
        std::vector<double> Ep(n + 1), Zp(n + 1);
        for (std::size_t k = 0; k <= n; ++k) {
            const double t = static_cast<double>(k) * prm.dt;
            const bool rough = i % 2 == 1;
            Ep[k] = E[k] + prm.eps * (rough ? u(eng) : a * std::sin(w * t));
            Zp[k] = Z[k] + prm.eps * (rough ? u(eng) : b * std::cos(w * t));
        }
        Ep[0] = E[0] = 0.0;
        Z[0] = regime_F(r, x0);
        Zp[0] = regime_F(r, x0p);
        auto s1 = solve_cmse(r, E, x0, Z, ds[j], prm.dt);
        auto s2 = solve_cmse(r, Ep, x0p, Zp, ds[j], prm.dt);
        double dev = 0.0;
        for (std::size_t k = 0; k <= n; ++k)
            dev = std::max({dev, std::abs(s1.X[k] - s2.X[k]), std::abs(s1.K[k] - s2.K[k]), std::abs(s1.v[k] - s2.v[k])});
        ratio[i] = dev / bound[j];
        if (r == Regime::Subcritical)
            for (std::size_t k = 0; k <= n; ++k)
                sub_gap[i] = std::max({sub_gap[i], std::abs(s1.K[k] - E[k]), std::abs(s2.K[k] - Ep[k])});
    });
    double worst = 0.0, gap = 0.0;
    for (std::size_t i = 0; i < P; ++i) {
        worst = std::max(worst, ratio[i]);
        gap = std::max(gap, sub_gap[i]);
    }
    return {make_report("cmse_lipschitz_constant", worst, prm.constant, P),
            make_report("cmse_subcritical_K_minus_E", gap, prm.sub_tol, P)};
}

// ---------------------------------------------------------------- SAE

struct SaeParams {
    double fine_dt = 0.0025;
    std::vector<int> factors{8, 4, 2, 1};
    double T = 1.0;
    int paths = 8;
    std::uint64_t seed = 10;
    double ratio_lo = 0.3;
    double ratio_hi = 0.7;
    double noise_off_tol = 0.0;

    template <class V>
    void visit(V& v)
    {
        v("fine_dt", fine_dt);
        v("factors", factors);
        v("T", T);
        v("paths", paths);
        v("seed", seed);
        v("ratio_lo", ratio_lo);
        v("ratio_hi", ratio_hi);
        v("noise_off_tol", noise_off_tol);
    }
};

// Residual of the stochastic age equation for φ = e^{−x} and φ ≡ 1 at the
// exponential critical invariant state. Each path is simulated once on the
// finest grid and coarsened, so every dt sees the same noise.
inline std::vector<TestReport> sae_suite(const SaeParams& prm, unsigned jobs = 1)
{
    LimitModel m;
    m.dist = exponential_dist();
    m.arrival.kind = ArrivalKind::Renewal;
    m.arrival.lambda_bar = RateFunction::constant(1.0);
    m.arrival.beta = RateFunction::constant(1.0);
    m.arrival.sigma2 = 1.0;
    m.regime = Regime::Critical;
    auto fl = solve_fluid(invariant_start(m.dist, 1.0, 1.0), m.dist, prm.T, prm.fine_dt);
    const auto coarsest = static_cast<std::size_t>(*std::max_element(prm.factors.begin(), prm.factors.end()));
    auto g = make_limit_grid(fl, prm.fine_dt, prm.T, 1e-6, coarsest);
    auto q = field_intensity(fl, g);
    const std::vector<std::string> names{"exp", "1"};
    const auto P = static_cast<std::size_t>(prm.paths), L = prm.factors.size();
    std::vector<double> err(names.size() * P * L);
    parallel_for(P, jobs, [&](std::size_t r) {
        auto fine = simulate_field(q, g, prm.seed, r);
        for (std::size_t l = 0; l < L; ++l) {
            auto f = coarsen(fine, static_cast<std::size_t>(prm.factors[l]));
            auto path = solve_limit_path(m, f);
            for (std::size_t j = 0; j < names.size(); ++j) {
                auto res = sae_residual(m, f, path.Khat, make_test_function(names[j], m.dist));
                err[(j * P + r) * L + l] = *std::max_element(res.begin(), res.end());
            }
        }
    });
    std::vector<TestReport> out;
    for (std::size_t j = 0; j < names.size(); ++j) {
        std::vector<double> mean(L, 0.0);
        for (std::size_t r = 0; r < P; ++r)
            for (std::size_t l = 0; l < L; ++l) mean[l] += err[(j * P + r) * L + l] / static_cast<double>(P);
        RatioSummary rs;
        for (std::size_t l = 1; l < L; ++l) rs.add(mean[l] / mean[l - 1]);
        out.push_back(ratio_report("sae_ratio_excess_phi_" + names[j], rs, prm.ratio_lo, prm.ratio_hi, P));
    }
    // noise off, K̂ ≡ 0, ν̂₀ = 0
    auto quiet = simulate_field(q, g, prm.seed, 0, true);
    std::vector<double> K(quiet.nt + 1, 0.0);
    double worst = 0.0;
    for (const auto& name : names) {
        auto res = sae_residual(m, quiet, K, make_test_function(name, m.dist));
        worst = std::max(worst, *std::max_element(res.begin(), res.end()));
    }
    out.push_back(make_report("sae_noise_off_residual", worst, prm.noise_off_tol, 1));
    return out;
}

}  // namespace qedlab
