#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "arrivals.hpp"
#include "dists.hpp"
#include "fluid.hpp"
#include "rng.hpp"

namespace qedlab {

struct LimitGrid {
    double dt = 0.01;
    double T = 1.0;
    double dx = 0.01;
    double x_max = 10.0;

    std::size_t steps() const { return static_cast<std::size_t>(std::llround(T / dt)); }
    std::size_t cells() const { return static_cast<std::size_t>(std::llround(x_max / dx)); }
    double time(std::size_t n) const { return static_cast<double>(n) * dt; }
    double x_mid(std::size_t i) const { return (static_cast<double>(i) + 0.5) * dx; }
    double u_mid(std::size_t k) const { return (static_cast<double>(k) + 0.5) * dt; }
};

// Grid with dx = dt by default and x_max large enough that the hazard-weighted
// fluid intensity beyond it is below `tail` of the total. `multiple` forces the
// number of age cells to be divisible (for later coarsening).
inline LimitGrid make_limit_grid(const FluidPath& fluid, double dt, double T, double tail = 1e-6,
                                 std::size_t multiple = 1, double dx = 0.0)
{
    if (!(dt > 0.0) || !(T >= 0.0)) throw std::invalid_argument("limit grid: need dt > 0 and T >= 0");
    if (T > fluid.t.back() + 1e-9) throw std::invalid_argument("limit grid: fluid path does not cover the horizon");
    LimitGrid g;
    g.dt = dt;
    g.T = T;
    g.dx = dx > 0.0 ? dx : dt;
    const auto& d = fluid.dist;
    // Every fluid age at time s ≤ T is below T + (support of ν̄₀). The hazard
    // density there is at most (max entry rate + sup ν̄₀/(1−G)) times g, so the
    // tail mass is controlled by the survival function.
    double total = 0.0;
    for (std::size_t k = 1; k < fluid.t.size() && fluid.t[k] <= T + 1e-12; ++k)
        total += 0.5 * (fluid.hazard_load[k] + fluid.hazard_load[k - 1]) * fluid.dt;
    double x = effective_support(d, std::max(tail * std::max(total, 1e-3) / std::max(T, 1.0) * 1e-2, 1e-16));
    double L = d.support_end();
    if (std::isfinite(L)) x = std::min(x, L);
    if (fluid.init.nu0_density) x = std::min(x, fluid.init.nu0_support + T);
    x = std::max(x, T);
    const double block = g.dx * static_cast<double>(multiple);
    g.x_max = std::ceil(x / block - 1e-9) * block;
    if (!(g.x_max > 0.0)) g.x_max = block;
    return g;
}

// Discretized Gaussian white noise with intensity h(x) ν̄_s(dx) ds, stored as
// one increment per (time cell k, age cell i), plus the Brownian increments
// driving Ê.
struct MartingaleField {
    LimitGrid grid;
    std::size_t nt = 0, nx = 0;
    std::vector<double> intensity;   // nt * nx, index k*nx + i
    std::vector<double> increments;  // nt * nx
    std::vector<double> dB;          // nt

    double at(std::size_t k, std::size_t i) const { return increments[k * nx + i]; }
};

// Cell masses ∫∫_cell h(x) ν̄_s(dx) ds: midpoint in time, two-point Gauss in age.
inline std::vector<double> field_intensity(const FluidPath& fluid, const LimitGrid& g)
{
    const std::size_t nt = g.steps(), nx = g.cells();
    std::vector<double> q(nt * nx, 0.0);
    const double r = 0.5 / std::sqrt(3.0);
    for (std::size_t k = 0; k < nt; ++k) {
        const double s = g.u_mid(k);
        for (std::size_t i = 0; i < nx; ++i) {
            const double xm = g.x_mid(i);
            double v = 0.5 * (fluid.hazard_density(xm - r * g.dx, s) + fluid.hazard_density(xm + r * g.dx, s));
            v *= g.dx * g.dt;
            if (v < 0.0 || !std::isfinite(v)) throw FluidError("field: negative or non-finite cell intensity");
            q[k * nx + i] = v;
        }
    }
    return q;
}

inline MartingaleField simulate_field(const std::vector<double>& intensity, const LimitGrid& g, std::uint64_t seed,
                                      std::uint64_t replicate, bool noise_off = false)
{
    MartingaleField f;
    f.grid = g;
    f.nt = g.steps();
    f.nx = g.cells();
    if (intensity.size() != f.nt * f.nx) throw std::invalid_argument("field: intensity does not match the grid");
    f.intensity = intensity;
    f.increments.assign(f.nt * f.nx, 0.0);
    f.dB.assign(f.nt, 0.0);
    if (noise_off) return f;
    Engine eng = make_engine(seed, replicate, 10);
    std::normal_distribution<double> z;
    for (std::size_t c = 0; c < f.increments.size(); ++c) {
        double q = intensity[c];
        f.increments[c] = q > 0.0 ? std::sqrt(q) * z(eng) : 0.0;
    }
    Engine beng = make_engine(seed, replicate, 11);
    std::normal_distribution<double> zb;
    const double sdt = std::sqrt(g.dt);
    for (auto& b : f.dB) b = sdt * zb(beng);
    return f;
}

inline MartingaleField simulate_field(const FluidPath& fluid, const LimitGrid& g, std::uint64_t seed,
                                      std::uint64_t replicate = 0, bool noise_off = false)
{
    return simulate_field(field_intensity(fluid, g), g, seed, replicate, noise_off);
}

// Sums blocks of factor×factor cells (time and age), giving the same noise on
// a grid with dt and dx multiplied by `factor`.
inline MartingaleField coarsen(const MartingaleField& f, std::size_t factor)
{
    if (factor == 1) return f;
    if (f.nt % factor != 0 || f.nx % factor != 0) throw std::invalid_argument("coarsen: grid not divisible");
    MartingaleField c;
    c.grid = f.grid;
    c.grid.dt *= static_cast<double>(factor);
    c.grid.dx *= static_cast<double>(factor);
    c.nt = f.nt / factor;
    c.nx = f.nx / factor;
    c.intensity.assign(c.nt * c.nx, 0.0);
    c.increments.assign(c.nt * c.nx, 0.0);
    c.dB.assign(c.nt, 0.0);
    for (std::size_t k = 0; k < f.nt; ++k) {
        c.dB[k / factor] += f.dB[k];
        for (std::size_t i = 0; i < f.nx; ++i) {
            std::size_t cc = (k / factor) * c.nx + i / factor;
            c.intensity[cc] += f.intensity[k * f.nx + i];
            c.increments[cc] += f.increments[k * f.nx + i];
        }
    }
    return c;
}

// Ê on the grid: Ê_{n+1} = Ê_n + σ(t_n) ΔB_n − β(t_n) dt.
inline std::vector<double> simulate_hatE(const ArrivalSpec& arr, const LimitGrid& g, const std::vector<double>& dB)
{
    const std::size_t n = g.steps();
    if (dB.size() < n) throw std::invalid_argument("hatE: not enough Brownian increments");
    std::vector<double> E(n + 1, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        const double t = g.time(k);
        E[k + 1] = E[k] + arr.sigma(t) * dB[k] - arr.beta(t) * g.dt;
    }
    return E;
}

inline std::vector<double> simulate_hatE(const ArrivalSpec& arr, const LimitGrid& g, std::uint64_t seed,
                                         std::uint64_t replicate = 0, bool noise_off = false)
{
    std::vector<double> dB(g.steps(), 0.0);
    if (!noise_off) {
        Engine eng = make_engine(seed, replicate, 11);
        std::normal_distribution<double> z;
        const double sdt = std::sqrt(g.dt);
        for (auto& b : dB) b = sdt * z(eng);
    }
    return simulate_hatE(arr, g, dB);
}

// M̂_{t_n}(φ) with midpoint weights.
inline double field_integral(const MartingaleField& f, const Fn2& phi, std::size_t n)
{
    double acc = 0.0;
    n = std::min(n, f.nt);
    for (std::size_t k = 0; k < n; ++k) {
        const double u = f.grid.u_mid(k);
        for (std::size_t i = 0; i < f.nx; ++i) {
            double m = f.increments[k * f.nx + i];
            if (m != 0.0) acc += phi(f.grid.x_mid(i), u) * m;
        }
    }
    return acc;
}

// Path of M̂_{t_n}(φ) for an age-only φ, n = 0..nt.
inline std::vector<double> field_integral_path(const MartingaleField& f, const Fn1& phi)
{
    std::vector<double> w(f.nx), out(f.nt + 1, 0.0);
    for (std::size_t i = 0; i < f.nx; ++i) w[i] = phi(f.grid.x_mid(i));
    for (std::size_t k = 0; k < f.nt; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < f.nx; ++i) acc += w[i] * f.increments[k * f.nx + i];
        out[k + 1] = out[k] + acc;
    }
    return out;
}

// Ĥ_t(f) = M̂_t(Ψ_t f).
inline double conv_H(const MartingaleField& field, const ServiceDistribution& d, const Fn1& f, std::size_t n)
{
    return field_integral(field, psi_op(d, f, field.grid.time(n)), n);
}

// Ĥ_{t_n}(f) for every n. With dx = dt the kernel Ψ_{t_n}f at cell midpoints
// depends on (i, n−k) only through i + n − k, so running diagonal sums give
// the whole path in O(nt·(nt+nx)).
inline std::vector<double> conv_H_path(const MartingaleField& field, const ServiceDistribution& d, const Fn1& f)
{
    const auto& g = field.grid;
    const std::size_t nt = field.nt, nx = field.nx;
    std::vector<double> out(nt + 1, 0.0);
    if (std::abs(g.dx - g.dt) > 1e-12 * g.dt) {
        for (std::size_t n = 1; n <= nt; ++n) out[n] = conv_H(field, d, f, n);
        return out;
    }
    std::vector<double> F(nt + nx + 1, 0.0), invS(nx, 0.0);
    for (std::size_t j = 0; j < F.size(); ++j) {
        double a = static_cast<double>(j) * g.dt;
        double s = d.survival(a);
        F[j] = s > 0.0 ? f(a) * s : 0.0;
    }
    for (std::size_t i = 0; i < nx; ++i) {
        double s = d.survival(g.x_mid(i));
        invS[i] = s > 0.0 ? 1.0 / s : 0.0;
    }
    // Y[d + nt] accumulates W_{k+d,k} over k < n, d = i − k.
    std::vector<double> Y(nt + nx, 0.0);
    for (std::size_t n = 1; n <= nt; ++n) {
        const std::size_t k = n - 1;
        for (std::size_t i = 0; i < nx; ++i) Y[i + nt - k] += field.increments[k * nx + i] * invS[i];
        double acc = 0.0;
        // d ranges over [−(n−1), nx−1]; kernel index n + d.
        for (std::size_t di = nt - (n - 1); di < nt + nx; ++di) acc += F[n + di - nt] * Y[di];
        out[n] = acc;
    }
    return out;
}

// Initial fluctuation ν̂₀ as weighted atoms plus an optional density.
struct NuHat0 {
    std::vector<std::pair<double, double>> atoms;  // (age, weight)
    Fn1 density;
    double support = 0.0;
    bool is_zero() const { return atoms.empty() && !density; }
};

// 𝒮_t^{ν̂₀}(f) = ν̂₀(Φ_t f).
inline double s_op(const NuHat0& nu0, const ServiceDistribution& d, const Fn1& f, double t)
{
    if (nu0.is_zero()) return 0.0;
    Fn1 pf = phi_op(d, f, t);
    double acc = 0.0;
    for (const auto& [x, w] : nu0.atoms) acc += w * pf(x);
    if (nu0.density && nu0.support > 0.0)
        acc += integrate([&](double x) { return nu0.density(x) * pf(x); }, 0.0, nu0.support, 1e-12);
    return acc;
}

struct CmseSolution {
    std::vector<double> K, X, v;
};

class CmseError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

inline double regime_F(Regime r, double x)
{
    switch (r) {
        case Regime::Subcritical: return x;
        case Regime::Critical: return std::min(x, 0.0);
        case Regime::Supercritical: return 0.0;
        case Regime::Mixed: break;
    }
    throw CmseError("CMSE: mixed regime has no limit map");
}

// Centered many-server equations on the grid t_n = n·dt:
//   v = Z + K − ∫ g(t−s) K(s) ds,  K = E + x0 − X + v − v(0),  v = F(X),
// with F(x) = x, x∧0, 0 for the sub-, critical and supercritical regimes and
// v(0) = Z(0). Eliminating v gives X = x0 − v(0) + E + Z − ∫ g K, and K is
// E + x0 − v(0) − X + F(X). The trapezoid convolution has the end-point term
// ½dt g(0) K_n; the step equation in X_n is piecewise linear and is solved on
// its branches exactly.
inline CmseSolution solve_cmse(Regime regime, const std::vector<double>& E, double x0, const std::vector<double>& Z,
                               const ServiceDistribution& d, double dt)
{
    if (regime == Regime::Mixed) throw CmseError("CMSE: mixed regime rejected");
    if (E.size() != Z.size() || E.empty()) throw CmseError("CMSE: inputs must share a nonempty grid");
    const double v0 = regime_F(regime, x0);
    if (std::abs(Z[0] - v0) > 1e-9 * (1.0 + std::abs(v0)))
        throw CmseError("CMSE: Z(0) must equal v(0) = F(x0) for this regime");
    const std::size_t n = E.size() - 1;
    std::vector<double> g(n + 1);
    for (std::size_t j = 0; j <= n; ++j) g[j] = d.density(static_cast<double>(j) * dt);
    const double c = 0.5 * dt * g[0];
    if (regime != Regime::Subcritical && !(c < 1.0)) throw CmseError("CMSE: dt too coarse for g(0)");
    CmseSolution s;
    s.K.assign(n + 1, 0.0);
    s.X.assign(n + 1, 0.0);
    s.v.assign(n + 1, 0.0);
    s.X[0] = x0;
    s.v[0] = v0;
    s.K[0] = E[0];
    for (std::size_t m = 1; m <= n; ++m) {
        double hist = 0.5 * g[m] * s.K[0];
        for (std::size_t k = 1; k < m; ++k) hist += g[m - k] * s.K[k];
        hist *= dt;
        const double P = x0 - v0 + E[m] + Z[m] - hist;  // X = P − c K_m
        const double a = E[m] + x0 - v0;               // K = a − X + F(X)
        double X = 0.0, K = 0.0;
        switch (regime) {
            case Regime::Subcritical:
                K = E[m];  // a = E when x0 = v(0)
                X = P - c * K;
                break;
            case Regime::Supercritical:
                X = (P - c * a) / (1.0 - c);
                K = a - X;
                break;
            case Regime::Critical:
                X = P - c * a;  // branch X ≤ 0, where K = a
                if (X > 0.0) X = (P - c * a) / (1.0 - c);
                K = a - X + std::min(X, 0.0);
                break;
            case Regime::Mixed: break;
        }
        s.X[m] = X;
        s.K[m] = K;
        s.v[m] = regime_F(regime, X);
    }
    return s;
}

// Trapezoid weights on [0, t_n].
inline double trap_weight(std::size_t k, std::size_t n) { return (k == 0 || k == n) ? 0.5 : 1.0; }

inline Fn1 finite_difference(Fn1 f, double h = 1e-5)
{
    return [f = std::move(f), h](double x) {
        if (x < h) return (f(x + h) - f(x)) / h;
        return (f(x + h) - f(x - h)) / (2.0 * h);
    };
}

// Γ map: 𝒦_t(f) = f(0)K(t) + ∫_0^t K(u) ξ_f(t−u) du, ξ_f = f′(1−G) − f g.
inline double gamma_map(const std::vector<double>& K, const ServiceDistribution& d, const Fn1& f, const Fn1& df,
                        std::size_t n, double dt)
{
    double acc = 0.0;
    for (std::size_t k = 0; k <= n; ++k) {
        const double u = static_cast<double>(n - k) * dt;
        const double xi = df(u) * d.survival(u) - f(u) * d.density(u);
        acc += trap_weight(k, n) * K[k] * xi;
    }
    return f(0.0) * K[n] + dt * acc;
}

// ν̂_t(f) = 𝒮_t(f) + f(0)K̂(t) + ∫K̂(s)f′(t−s)(1−G(t−s))ds − ∫K̂(s)g(t−s)f(t−s)ds − Ĥ_t(f).
inline double hat_nu(double S_f, const std::vector<double>& K, double H_f, const ServiceDistribution& d, const Fn1& f,
                     const Fn1& df, std::size_t n, double dt)
{
    double a = 0.0, b = 0.0;
    for (std::size_t k = 0; k <= n; ++k) {
        const double u = static_cast<double>(n - k) * dt;
        const double w = trap_weight(k, n) * K[k];
        a += w * df(u) * d.survival(u);
        b += w * d.density(u) * f(u);
    }
    return S_f + f(0.0) * K[n] + dt * a - dt * b - H_f;
}

// Euler–Maruyama for dX = (−β − X∧0) dt + √(1+σ²) dW.
inline std::vector<double> simulate_hw(double beta, double sigma2, double x0, double dt, double T, std::uint64_t seed,
                                       std::uint64_t replicate = 0, bool noise_off = false)
{
    const auto n = static_cast<std::size_t>(std::llround(T / dt));
    std::vector<double> X(n + 1, x0);
    Engine eng = make_engine(seed, replicate, 20);
    std::normal_distribution<double> z;
    const double vol = std::sqrt((1.0 + sigma2) * dt);
    for (std::size_t k = 0; k < n; ++k) {
        double x = X[k];
        double dW = noise_off ? 0.0 : vol * z(eng);
        X[k + 1] = x + (-beta - std::min(x, 0.0)) * dt + dW;
    }
    return X;
}

// Named test functions with derivatives.
struct TestFunction {
    std::string name;
    Fn1 f;
    Fn1 df;
};

inline TestFunction make_test_function(const std::string& name, const ServiceDistribution& d)
{
    if (name == "1") return {name, [](double) { return 1.0; }, [](double) { return 0.0; }};
    if (name == "exp") return {name, [](double x) { return std::exp(-x); }, [](double x) { return -std::exp(-x); }};
    if (name == "1-G")
        return {name, [d](double x) { return d.survival(x); }, [d](double x) { return -d.density(x); }};
    if (name == "h") {
        Fn1 h = [d](double x) { return d.hazard(x); };
        return {name, h, finite_difference(h)};
    }
    throw std::invalid_argument("unknown test function '" + name + "'");
}

struct LimitModel {
    ServiceDistribution dist;
    ArrivalSpec arrival;
    Regime regime = Regime::Critical;
    double x0hat = 0.0;
    NuHat0 nu0hat;
    std::vector<TestFunction> tests;
};

struct LimitPath {
    std::vector<double> t, Ehat, Mhat1, Hhat1, Shat1, Khat, Xhat, vhat;
    std::map<std::string, std::vector<double>> nuhat;
};

// Paths of 𝒮_t(f), Ĥ_t(f) and ν̂_t(f) on the grid.
inline std::vector<double> nuhat_path(const LimitModel& m, const MartingaleField& field, const std::vector<double>& K,
                                      const TestFunction& tf)
{
    const auto& g = field.grid;
    const std::size_t nt = field.nt;
    std::vector<double> H = conv_H_path(field, m.dist, tf.f);
    std::vector<double> out(nt + 1);
    for (std::size_t n = 0; n <= nt; ++n) {
        double S = s_op(m.nu0hat, m.dist, tf.f, g.time(n));
        out[n] = hat_nu(S, K, H[n], m.dist, tf.f, tf.df, n, g.dt);
    }
    return out;
}

inline LimitPath solve_limit_path(const LimitModel& m, const MartingaleField& field)
{
    const auto& g = field.grid;
    const std::size_t nt = field.nt;
    LimitPath p;
    p.t.resize(nt + 1);
    for (std::size_t n = 0; n <= nt; ++n) p.t[n] = g.time(n);
    p.Ehat = simulate_hatE(m.arrival, g, field.dB);
    const Fn1 one = [](double) { return 1.0; };
    p.Mhat1 = field_integral_path(field, one);
    p.Hhat1 = conv_H_path(field, m.dist, one);
    p.Shat1.resize(nt + 1);
    std::vector<double> Z(nt + 1);
    for (std::size_t n = 0; n <= nt; ++n) {
        p.Shat1[n] = s_op(m.nu0hat, m.dist, one, g.time(n));
        Z[n] = p.Shat1[n] - p.Hhat1[n];
    }
    CmseSolution c = solve_cmse(m.regime, p.Ehat, m.x0hat, Z, m.dist, g.dt);
    p.Khat = std::move(c.K);
    p.Xhat = std::move(c.X);
    p.vhat = std::move(c.v);
    for (const auto& tf : m.tests) p.nuhat[tf.name] = nuhat_path(m, field, p.Khat, tf);
    return p;
}

// Residual of the stochastic age equation for an age-only test function φ:
//   ν̂_t(φ) = ν̂₀(φ) + ∫_0^t ν̂_s(φ′ − φh) ds − M̂_t(φ) + φ(0) K̂(t),
// left-point rules in time on the grid.
inline std::vector<double> sae_residual(const LimitModel& m, const MartingaleField& field, const std::vector<double>& K,
                                        const TestFunction& phi)
{
    const auto& d = m.dist;
    double hmax = 0.0;
    for (std::size_t i = 0; i < field.nx; ++i) hmax = std::max(hmax, d.hazard(field.grid.x_mid(i)));
    if (!std::isfinite(hmax)) throw std::invalid_argument("SAE residual: hazard unbounded on the age grid");
    const auto& g = field.grid;
    const std::size_t nt = field.nt;
    Fn1 psi = [d, phi](double x) { return phi.df(x) - phi.f(x) * d.hazard(x); };
    TestFunction tpsi{"psi", psi, finite_difference(psi)};
    std::vector<double> lhs = nuhat_path(m, field, K, phi);
    std::vector<double> nu_psi = nuhat_path(m, field, K, tpsi);
    std::vector<double> M = field_integral_path(field, phi.f);
    const double nu0 = s_op(m.nu0hat, d, phi.f, 0.0);
    const double f0 = phi.f(0.0);
    std::vector<double> res(nt + 1, 0.0);
    double drift = 0.0, inflow = 0.0;
    for (std::size_t n = 0; n <= nt; ++n) {
        if (n > 0) {
            drift += g.dt * nu_psi[n - 1];
            inflow += f0 * (K[n] - K[n - 1]);
        }
        const double rhs = nu0 + drift - M[n] + inflow;
        res[n] = std::abs(lhs[n] - rhs);
    }
    return res;
}

}  // namespace qedlab
