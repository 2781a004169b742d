#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "arrivals.hpp"
#include "dists.hpp"

namespace qedlab {

struct FluidInit {
    RateFunction lambda_bar = RateFunction::constant(1.0);
    double x0 = 0.0;
    Fn1 nu0_density;          // empty means ν̄₀ = 0
    double nu0_support = 0.0;  // density vanishes beyond this age

    double Ebar(double t) const { return lambda_bar.integral(0.0, t); }
};

inline Fn1 invariant_measure(const ServiceDistribution& d)
{
    return [d](double x) { return x < 0.0 ? 0.0 : d.survival(x); };
}

// (λ̄, x̄₀, ν̄₀) = (λ̄, x0, a·(1−G)) with a = min(x0, 1).
inline FluidInit invariant_start(const ServiceDistribution& d, double lambda_bar, double x0)
{
    FluidInit init;
    init.lambda_bar = RateFunction::constant(lambda_bar);
    init.x0 = x0;
    double a = std::min(x0, 1.0);
    if (a > 0.0) {
        init.nu0_density = [d, a](double x) { return x < 0.0 ? 0.0 : a * d.survival(x); };
        init.nu0_support = effective_support(d, 1e-14);
    }
    return init;
}

inline FluidInit empty_start(double lambda_bar)
{
    FluidInit init;
    init.lambda_bar = RateFunction::constant(lambda_bar);
    return init;
}

enum class Regime { Subcritical, Critical, Supercritical, Mixed };

inline const char* to_string(Regime r)
{
    switch (r) {
        case Regime::Subcritical: return "subcritical";
        case Regime::Critical: return "critical";
        case Regime::Supercritical: return "supercritical";
        case Regime::Mixed: return "mixed";
    }
    return "?";
}

class FluidError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct FluidPath {
    double dt = 0.0;
    std::vector<double> t, Xbar, Kbar, Bbar, Dbar, hazard_load;
    std::vector<double> dK;  // dK[k] = K̄(t_k) − K̄(t_{k−1}), dK[0] = 0
    FluidInit init;
    ServiceDistribution dist;
    Regime regime = Regime::Mixed;

    std::size_t steps() const { return t.empty() ? 0 : t.size() - 1; }

    // Rate of entry into service near time u (piecewise constant per cell).
    double entry_rate(double u) const
    {
        if (u < 0.0 || steps() == 0) return 0.0;
        auto k = static_cast<std::size_t>(std::floor(u / dt));
        if (k >= steps()) k = steps() - 1;
        return dK[k + 1] / dt;
    }

    // Hazard-weighted age density h(x)·ν̄_s(dx)/dx of the fluid measure.
    double hazard_density(double x, double s) const
    {
        if (x < 0.0) return 0.0;
        if (x < s) return entry_rate(s - x) * dist.density(x);
        if (!init.nu0_density) return 0.0;
        double y = x - s;
        double sy = dist.survival(y);
        if (!(sy > 0.0)) return 0.0;
        return init.nu0_density(y) * dist.density(x) / sy;
    }
};

// ∫ ν̄₀(x) w(x+t)(1−G(x+t))/(1−G(x)) dx.
inline double initial_age_term(const FluidInit& init, const ServiceDistribution& d, const Fn1& w, double t)
{
    if (!init.nu0_density || !(init.nu0_support > 0.0)) return 0.0;
    auto integrand = [&](double x) {
        double r = d.survival_ratio(x, t);
        return r == 0.0 ? 0.0 : init.nu0_density(x) * w(x + t) * r;
    };
    const int pieces = 16;
    double acc = 0.0;
    const double L = init.nu0_support;
    for (int i = 0; i < pieces; ++i) acc += integrate(integrand, L * i / pieces, L * (i + 1) / pieces, 1e-12);
    return acc;
}

// ∫ ν̄₀(x) g(x+t)/(1−G(x)) dx, the initial part of <h, ν̄_t>.
inline double initial_hazard_term(const FluidInit& init, const ServiceDistribution& d, double t)
{
    if (!init.nu0_density || !(init.nu0_support > 0.0)) return 0.0;
    auto integrand = [&](double x) {
        double s = d.survival(x);
        return s > 0.0 ? init.nu0_density(x) * d.density(x + t) / s : 0.0;
    };
    const int pieces = 16;
    double acc = 0.0;
    const double L = init.nu0_support;
    for (int i = 0; i < pieces; ++i) acc += integrate(integrand, L * i / pieces, L * (i + 1) / pieces, 1e-12);
    return acc;
}

inline Regime classify_regime(const FluidPath& p, double T, double tol)
{
    double lo = kInf, hi = -kInf;
    for (std::size_t k = 0; k < p.t.size() && p.t[k] <= T + 1e-12; ++k) {
        lo = std::min(lo, p.Xbar[k]);
        hi = std::max(hi, p.Xbar[k]);
    }
    if (hi < 1.0 - tol) return Regime::Subcritical;
    if (lo > 1.0 + tol) return Regime::Supercritical;
    if (std::max(std::abs(hi - 1.0), std::abs(lo - 1.0)) <= tol) return Regime::Critical;
    return Regime::Mixed;
}

// Time-steps the fluid equations. At step n the mass in service is
//   B̄_n = (initial-age term) + Σ_k (1−G(t_n − s_{k−1/2})) ΔK̄_k,
// and the queue is x̄₀ − B̄₀ + Ē(t_n) − K̄_n. The step unknown ΔK̄_n enters
// linearly, so the non-idling condition 1 − B̄ = (1 − X̄)^+ picks one of two
// linear branches: admit everything waiting, or fill the capacity exactly.
inline FluidPath solve_fluid(const FluidInit& init, const ServiceDistribution& d, double T, double dt,
                             double regime_tol = -1.0)
{
    if (!(dt > 0.0) || !(T >= dt)) throw std::invalid_argument("solve_fluid: need 0 < dt <= T");
    if (init.x0 < 0.0) throw std::invalid_argument("solve_fluid: x0 must be nonnegative");
    const auto n = static_cast<std::size_t>(std::llround(T / dt));
    FluidPath p;
    p.dt = dt;
    p.init = init;
    p.dist = d;
    const Fn1 one = [](double) { return 1.0; };
    const double B0 = initial_age_term(init, d, one, 0.0);
    if (std::abs((1.0 - B0) - std::max(1.0 - init.x0, 0.0)) > 1e-6)
        throw std::invalid_argument("solve_fluid: initial data violates 1 − <1,ν̄₀> = (1 − x̄₀)^+");
    const double Q0 = std::max(init.x0 - B0, 0.0);

    std::vector<double> S(n + 1), g(n + 1);
    for (std::size_t k = 1; k <= n; ++k) {
        double u = (static_cast<double>(k) - 0.5) * dt;
        S[k] = d.survival(u);
        g[k] = d.density(u);
    }
    p.t.resize(n + 1);
    p.Xbar.resize(n + 1);
    p.Kbar.assign(n + 1, 0.0);
    p.Bbar.resize(n + 1);
    p.Dbar.resize(n + 1);
    p.hazard_load.resize(n + 1);
    p.dK.assign(n + 1, 0.0);

    p.t[0] = 0.0;
    p.Bbar[0] = B0;
    p.Xbar[0] = init.x0;
    p.Dbar[0] = 0.0;
    p.hazard_load[0] = initial_hazard_term(init, d, 0.0);

    for (std::size_t m = 1; m <= n; ++m) {
        const double tm = static_cast<double>(m) * dt;
        double conv = 0.0, hconv = 0.0;
        for (std::size_t k = 1; k < m; ++k) {
            conv += S[m - k + 1] * p.dK[k];
            hconv += g[m - k + 1] * p.dK[k];
        }
        const double base = initial_age_term(init, d, one, tm) + conv;
        const double w = S[1];
        const double waiting = Q0 + init.Ebar(tm) - p.Kbar[m - 1];
        double dk = std::max(waiting, 0.0);
        double B = base + w * dk;
        if (B > 1.0) {
            dk = std::max((1.0 - base) / w, 0.0);
            B = base + w * dk;
        }
        if (!std::isfinite(B) || !std::isfinite(dk)) throw FluidError("fluid step " + std::to_string(m) + " failed");
        p.t[m] = tm;
        p.dK[m] = dk;
        p.Kbar[m] = p.Kbar[m - 1] + dk;
        p.Bbar[m] = B;
        const double queue = std::max(Q0 + init.Ebar(tm) - p.Kbar[m], 0.0);
        p.Xbar[m] = B + queue;
        p.Dbar[m] = p.Kbar[m] - B + B0;
        p.hazard_load[m] = initial_hazard_term(init, d, tm) + hconv + g[1] * dk;
    }
    p.regime = classify_regime(p, T, regime_tol > 0.0 ? regime_tol : std::max(1e-6, 10.0 * dt));
    return p;
}

// <f, ν̄_t> at the grid point t_n, with the same quadrature as the solver.
inline double fluid_age_eval(const FluidPath& p, const Fn1& f, std::size_t n)
{
    const double tn = p.t.at(n);
    double acc = initial_age_term(p.init, p.dist, f, tn);
    for (std::size_t k = 1; k <= n; ++k) {
        double u = (static_cast<double>(n - k) + 0.5) * p.dt;
        double s = p.dist.survival(u);
        if (s > 0.0) acc += f(u) * s * p.dK[k];
    }
    return acc;
}

// Linear interpolation of a fluid grid quantity at time t.
inline double interpolate(const FluidPath& p, const std::vector<double>& y, double t)
{
    if (t <= 0.0) return y.front();
    double pos = t / p.dt;
    auto k = static_cast<std::size_t>(std::floor(pos));
    if (k >= p.steps()) return y.back();
    double w = pos - static_cast<double>(k);
    return (1.0 - w) * y[k] + w * y[k + 1];
}

}  // namespace qedlab
