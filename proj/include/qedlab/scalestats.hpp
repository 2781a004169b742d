#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dists.hpp"
#include "fluid.hpp"
#include "microsim.hpp"
#include "rng.hpp"

namespace qedlab {

enum class Quantity { E, X, K, D, B };
inline constexpr std::array<Quantity, 5> kQuantities{Quantity::E, Quantity::X, Quantity::K, Quantity::D, Quantity::B};

inline const char* to_string(Quantity q)
{
    switch (q) {
        case Quantity::E: return "E";
        case Quantity::X: return "X";
        case Quantity::K: return "K";
        case Quantity::D: return "D";
        case Quantity::B: return "B";
    }
    return "?";
}

// Counters of a PathRecord read right-continuously on a time grid.
struct CounterPath {
    std::vector<double> t;
    std::array<std::vector<double>, 5> y;

    std::vector<double>& operator[](Quantity q) { return y[static_cast<std::size_t>(q)]; }
    const std::vector<double>& operator[](Quantity q) const { return y[static_cast<std::size_t>(q)]; }
};

inline CounterPath sample_counters(const PathRecord& p, const std::vector<double>& grid)
{
    CounterPath c;
    c.t = grid;
    for (auto& v : c.y) v.resize(grid.size());
    for (std::size_t n = 0; n < grid.size(); ++n) {
        auto k = p.counters_at(grid[n]);
        c[Quantity::E][n] = static_cast<double>(k.E);
        c[Quantity::X][n] = static_cast<double>(k.X);
        c[Quantity::K][n] = static_cast<double>(k.K);
        c[Quantity::D][n] = static_cast<double>(k.D);
        c[Quantity::B][n] = static_cast<double>(k.B);
    }
    return c;
}

inline std::vector<double> uniform_grid(double T, double dt)
{
    const auto n = static_cast<std::size_t>(std::llround(T / dt));
    std::vector<double> g(n + 1);
    for (std::size_t k = 0; k <= n; ++k) g[k] = static_cast<double>(k) * dt;
    return g;
}

enum class Scaling { Fluid, Diffusion };

struct ScaledPath {
    Scaling scaling = Scaling::Fluid;
    double N = 1.0;
    CounterPath values;
};

class ScaleError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// Ȳ^N = Y^N / N.
inline ScaledPath fluid_scale(const CounterPath& raw, double N)
{
    ScaledPath s{Scaling::Fluid, N, raw};
    for (auto& v : s.values.y)
        for (auto& x : v) x /= N;
    return s;
}

// Fluid counterpart of each counter at time t.
inline double fluid_value(const FluidPath& f, Quantity q, double t)
{
    switch (q) {
        case Quantity::E: return f.init.Ebar(t);
        case Quantity::X: return interpolate(f, f.Xbar, t);
        case Quantity::K: return interpolate(f, f.Kbar, t);
        case Quantity::D: return interpolate(f, f.Dbar, t);
        case Quantity::B: return interpolate(f, f.Bbar, t);
    }
    return 0.0;
}

// Ŷ^N = √N (Y^N/N − Ȳ).
inline ScaledPath diffusion_scale(const CounterPath& raw, const FluidPath& fluid, double N)
{
    if (!raw.t.empty() && raw.t.back() > fluid.t.back() + 1e-9)
        throw ScaleError("diffusion_scale: fluid path does not cover the sample grid");
    ScaledPath s{Scaling::Diffusion, N, raw};
    const double rn = std::sqrt(N);
    for (Quantity q : kQuantities) {
        auto& v = s.values[q];
        for (std::size_t n = 0; n < v.size(); ++n) v[n] = rn * (v[n] / N - fluid_value(fluid, q, raw.t[n]));
    }
    return s;
}

inline ScaledPath diffusion_scale(const PathRecord& p, const FluidPath& fluid, const std::vector<double>& grid)
{
    return diffusion_scale(sample_counters(p, grid), fluid, static_cast<double>(p.N));
}

// Inverse transforms. Raw counters are integers, so rounding removes the
// floating-point residue and the round trip is exact.
inline CounterPath unscale(const ScaledPath& s, const FluidPath* fluid = nullptr)
{
    CounterPath raw = s.values;
    const double N = s.N, rn = std::sqrt(N);
    if (s.scaling == Scaling::Diffusion && fluid == nullptr) throw ScaleError("unscale: diffusion scaling needs the fluid path");
    for (Quantity q : kQuantities) {
        auto& v = raw[q];
        for (std::size_t n = 0; n < v.size(); ++n) {
            double y = s.scaling == Scaling::Fluid ? v[n] * N : N * (v[n] / rn + fluid_value(*fluid, q, raw.t[n]));
            v[n] = std::round(y);
        }
    }
    return raw;
}

// Two-sample Kolmogorov–Smirnov statistic sup|F_a − F_b|.
inline double ks_distance(std::vector<double> a, std::vector<double> b)
{
    if (a.empty() || b.empty()) throw std::invalid_argument("ks_distance: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] == x) ++i;
        while (j < b.size() && b[j] == x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

// Asymptotic critical value c(α)·sqrt((n+m)/(nm)), c(α) = sqrt(−ln(α/2)/2).
inline double ks_critical(double alpha, std::size_t n, std::size_t m)
{
    const double c = std::sqrt(-0.5 * std::log(0.5 * alpha));
    return c * std::sqrt(static_cast<double>(n + m) / (static_cast<double>(n) * static_cast<double>(m)));
}

// Realized quadratic variation Σ(ΔX)².
inline double qv_estimate(const std::vector<double>& x)
{
    double acc = 0.0;
    for (std::size_t k = 1; k < x.size(); ++k) acc += (x[k] - x[k - 1]) * (x[k] - x[k - 1]);
    return acc;
}

// Least-squares slope of y on x.
inline double ls_slope(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("ls_slope: need two or more points");
    double mx = 0.0, my = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        mx += x[k];
        my += y[k];
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(y.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        sxy += (x[k] - mx) * (y[k] - my);
        sxx += (x[k] - mx) * (x[k] - mx);
    }
    return sxy / sxx;
}

struct SampleStats {
    double mean = 0.0, var = 0.0, se = 0.0;
    std::size_t n = 0;
};

inline SampleStats sample_stats(const std::vector<double>& x)
{
    SampleStats s;
    s.n = x.size();
    if (s.n == 0) return s;
    for (double v : x) s.mean += v;
    s.mean /= static_cast<double>(s.n);
    if (s.n > 1) {
        for (double v : x) s.var += (v - s.mean) * (v - s.mean);
        s.var /= static_cast<double>(s.n - 1);
    }
    s.se = std::sqrt(s.var / static_cast<double>(s.n));
    return s;
}

struct TestReport {
    std::string name;
    double value = 0.0;
    double threshold = 0.0;
    bool pass = false;
    std::size_t replicates = 0;
    double se = 0.0;
    std::string detail;
};

// One-sided 95% upper confidence bound on a mean: normal approximation from
// 1000 samples on, percentile bootstrap below.
inline double mean_ucb95(const std::vector<double>& x, std::uint64_t seed = 0)
{
    auto s = sample_stats(x);
    if (s.n == 0) throw std::invalid_argument("mean_ucb95: empty sample");
    if (s.n >= 1000) return s.mean + 1.6448536269514722 * s.se;
    Engine eng = make_engine(seed, 0, 30);
    std::uniform_int_distribution<std::size_t> pick(0, s.n - 1);
    const int B = 4000;
    std::vector<double> means(B);
    for (int b = 0; b < B; ++b) {
        double acc = 0.0;
        for (std::size_t k = 0; k < s.n; ++k) acc += x[pick(eng)];
        means[static_cast<std::size_t>(b)] = acc / static_cast<double>(s.n);
    }
    std::sort(means.begin(), means.end());
    return means[static_cast<std::size_t>(0.95 * (B - 1))];
}

// E[(Ā₁(T))^k] ≤ k!·U(T)^k from samples of Ā₁(T).
inline TestReport moment_bound_from_samples(const std::vector<double>& abar, double U_T, int k, std::uint64_t seed = 0)
{
    if (k < 1 || k > 3) throw std::invalid_argument("moment_bound_check: k must be 1, 2 or 3");
    std::vector<double> p(abar.size());
    for (std::size_t i = 0; i < abar.size(); ++i) p[i] = std::pow(abar[i], k);
    TestReport r;
    r.name = "moment_k" + std::to_string(k);
    r.value = mean_ucb95(p, seed);
    r.threshold = std::tgamma(k + 1.0) * std::pow(U_T, k);
    r.pass = r.value <= r.threshold;
    r.replicates = p.size();
    r.se = sample_stats(p).se;
    return r;
}

// Ā₁(T) = A_1(T)/N computed from each path's compensator.
inline TestReport moment_bound_check(const std::vector<PathRecord>& paths, const ServiceDistribution& d, double T, int k,
                                     double dt = 1e-3)
{
    std::vector<double> abar;
    abar.reserve(paths.size());
    const Fn2 one = [](double, double) { return 1.0; };
    for (const auto& p : paths) abar.push_back(compensator(p, one, T, dt) / static_cast<double>(p.N));
    return moment_bound_from_samples(abar, renewal_function(d, T, dt).back(), k);
}

}  // namespace qedlab
