#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "qedlab/limitsim.hpp"

using namespace qedlab;

namespace {

const Fn1 kOne = [](double) { return 1.0; };
const Fn1 kZero = [](double) { return 0.0; };

FluidPath critical_fluid(const ServiceDistribution& d, double T, double dt)
{
    return solve_fluid(invariant_start(d, 1.0, 1.0), d, T, dt);
}

ArrivalSpec renewal(double sigma2, double beta)
{
    ArrivalSpec a;
    a.kind = ArrivalKind::Renewal;
    a.lambda_bar = RateFunction::constant(1.0);
    a.beta = RateFunction::constant(beta);
    a.sigma2 = sigma2;
    return a;
}

struct Moments {
    double n = 0, s = 0, s2 = 0;
    void add(double x)
    {
        ++n;
        s += x;
        s2 += x * x;
    }
    double mean() const { return s / n; }
    double var() const { return (s2 - s * s / n) / (n - 1); }
};

LimitModel exp_critical_model(double x0 = 0.0)
{
    LimitModel m;
    m.dist = exponential_dist();
    m.arrival = renewal(1.0, 1.0);
    m.regime = Regime::Critical;
    m.x0hat = x0;
    return m;
}

}  // namespace

TEST(HatE, BrownianVariance)
{
    LimitGrid g;
    g.dt = 0.1;
    g.T = 1.0;
    Moments m;
    auto a = renewal(1.0, 0.0);
    for (std::uint64_t r = 0; r < 100000; ++r) m.add(simulate_hatE(a, g, 7, r).back());
    EXPECT_NEAR(m.var(), 1.0, 0.02);
}

TEST(HatE, NoiseOffIsMinusIntegratedBeta)
{
    LimitGrid g;
    g.dt = 0.01;
    g.T = 2.0;
    ArrivalSpec a = renewal(1.0, 0.0);
    a.beta = RateFunction::linear(0.5, 1.0, 2.0);  // β(t) = 0.5 + t
    auto E = simulate_hatE(a, g, 1, 0, true);
    for (std::size_t n = 0; n < E.size(); n += 20) {
        double t = g.time(n);
        double left = 0.0;  // left-point sum of β
        for (std::size_t k = 0; k < n; ++k) left += a.beta(g.time(k)) * g.dt;
        EXPECT_NEAR(E[n], -left, 1e-12);
        EXPECT_NEAR(E[n], -a.beta.integral(0.0, t), g.dt);
    }
}

TEST(HatE, InhomogeneousPoissonVariance)
{
    LimitGrid g;
    g.dt = 0.01;
    g.T = 1.0;
    ArrivalSpec a;
    a.kind = ArrivalKind::InhomPoisson;
    a.lambda_bar = RateFunction::linear(1.0, 1.0, 1.0);
    a.beta = RateFunction::constant(0.0);
    Moments m;
    for (std::uint64_t r = 0; r < 100000; ++r) m.add(simulate_hatE(a, g, 3, r).back());
    EXPECT_NEAR(m.var(), 1.5, 0.03);
}

TEST(Field, CriticalExponentialVarianceIsT)
{
    auto d = exponential_dist();
    auto fl = critical_fluid(d, 1.0, 0.01);
    auto g = make_limit_grid(fl, 0.25, 1.0);
    auto q = field_intensity(fl, g);
    double total = 0.0;
    for (double v : q) total += v;
    EXPECT_NEAR(total, 1.0, 1e-3);
    Moments m1, mh;
    for (std::uint64_t r = 0; r < 100000; ++r) {
        auto f = simulate_field(q, g, 11, r);
        auto M = field_integral_path(f, kOne);
        m1.add(M.back());
        mh.add(M[2]);
    }
    EXPECT_NEAR(m1.var(), 1.0, 0.02);
    EXPECT_NEAR(mh.var(), 0.5, 0.01);
}

TEST(Field, DisjointAgeBandsUncorrelated)
{
    auto d = lognormal_dist(0.5);
    auto fl = critical_fluid(d, 1.0, 0.01);
    auto g = make_limit_grid(fl, 0.25, 1.0);
    auto q = field_intensity(fl, g);
    Fn1 band1 = [](double x) { return x < 0.5 ? 1.0 : 0.0; };
    Fn1 band2 = [](double x) { return x >= 0.5 && x < 1.5 ? 1.0 : 0.0; };
    const int R = 20000;
    double sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
    for (int r = 0; r < R; ++r) {
        auto f = simulate_field(q, g, 12, static_cast<std::uint64_t>(r));
        double a = field_integral_path(f, band1).back(), b = field_integral_path(f, band2).back();
        sa += a;
        sb += b;
        sab += a * b;
        saa += a * a;
        sbb += b * b;
    }
    double cov = sab / R - (sa / R) * (sb / R);
    double se = std::sqrt((saa / R) * (sbb / R) / R);
    EXPECT_LE(std::abs(cov), 3.0 * se);
}

TEST(Field, ZeroHorizonIsEmpty)
{
    auto d = exponential_dist();
    auto fl = critical_fluid(d, 1.0, 0.1);
    auto g = make_limit_grid(fl, 0.1, 0.0);
    auto f = simulate_field(fl, g, 1);
    EXPECT_EQ(f.nt, 0u);
    EXPECT_TRUE(f.increments.empty());
    EXPECT_EQ(field_integral(f, [](double, double) { return 1.0; }, 0), 0.0);
}

TEST(Field, CoarsenPreservesSums)
{
    auto d = exponential_dist();
    auto fl = critical_fluid(d, 1.0, 0.01);
    auto g = make_limit_grid(fl, 0.05, 1.0, 1e-6, 2);
    auto f = simulate_field(fl, g, 4);
    auto c = coarsen(f, 2);
    EXPECT_EQ(c.nt * 2, f.nt);
    auto a = field_integral_path(f, kOne), b = field_integral_path(c, kOne);
    for (std::size_t n = 0; n < c.nt; ++n) EXPECT_NEAR(b[n], a[2 * n], 1e-12);
    double sa = 0.0, sb = 0.0;
    for (double v : f.dB) sa += v;
    for (double v : c.dB) sb += v;
    EXPECT_NEAR(sa, sb, 1e-12);
}

TEST(FieldIntegral, TrivialTestFunctions)
{
    auto d = gamma_dist(2.0);
    auto fl = critical_fluid(d, 1.0, 0.01);
    auto g = make_limit_grid(fl, 0.1, 1.0);
    auto f = simulate_field(fl, g, 5);
    double sum = 0.0;
    for (double v : f.increments) sum += v;
    EXPECT_NEAR(field_integral(f, [](double, double) { return 1.0; }, f.nt), sum, 1e-12);
    EXPECT_EQ(field_integral(f, [](double, double) { return 0.0; }, f.nt), 0.0);
    EXPECT_NEAR(field_integral_path(f, kOne).back(), sum, 1e-12);
}

TEST(FieldIntegral, ExponentialWeightVariance)
{
    auto d = exponential_dist();
    auto fl = critical_fluid(d, 1.0, 0.01);
    auto g = make_limit_grid(fl, 0.1, 1.0, 1e-4);
    auto q = field_intensity(fl, g);
    // oracle: ∫_0^1 ∫ e^{−2x} e^{−x} dx ds = 1/3; the midpoint weights are
    // exact cellwise up to O(dx²)
    double quad = 0.0;
    for (std::size_t k = 0; k < g.steps(); ++k)
        for (std::size_t i = 0; i < g.cells(); ++i) quad += std::exp(-2.0 * g.x_mid(i)) * q[k * g.cells() + i];
    EXPECT_NEAR(quad, 1.0 / 3.0, 2e-3);
    Fn1 w = [](double x) { return std::exp(-x); };
    Moments m;
    for (std::uint64_t r = 0; r < 100000; ++r) m.add(field_integral_path(simulate_field(q, g, 6, r), w).back());
    EXPECT_NEAR(m.var(), quad, 0.02 * quad);
}

TEST(ConvH, CriticalExponentialVariance)
{
    auto d = exponential_dist();
    auto fl = critical_fluid(d, 1.0, 0.01);
    // a 1e−4 tail budget moves the variance by at most 0.01%
    auto g = make_limit_grid(fl, 0.1, 1.0, 1e-4);
    auto q = field_intensity(fl, g);
    Moments m;
    for (std::uint64_t r = 0; r < 100000; ++r) m.add(conv_H_path(simulate_field(q, g, 8, r), d, kOne).back());
    const double oracle = 0.5 * (1.0 - std::exp(-2.0));
    EXPECT_NEAR(m.var(), oracle, 0.02 * oracle);
}

TEST(ConvH, PathMatchesDirectEvaluation)
{
    for (const auto& d : {exponential_dist(), lognormal_dist(0.7)}) {
        auto fl = critical_fluid(d, 2.0, 0.01);
        auto g = make_limit_grid(fl, 0.05, 2.0);
        auto f = simulate_field(fl, g, 9);
        Fn1 test = [](double x) { return std::cos(x); };
        auto H = conv_H_path(f, d, test);
        EXPECT_EQ(H[0], 0.0);
        EXPECT_EQ(conv_H(f, d, test, 0), 0.0);
        for (std::size_t n = 1; n <= f.nt; n += 7) {
            EXPECT_NEAR(H[n], conv_H(f, d, test, n), 1e-10);
            EXPECT_EQ(conv_H(f, d, test, n), field_integral(f, psi_op(d, test, g.time(n)), n));
        }
    }
}

TEST(SOp, Examples)
{
    NuHat0 zero;
    auto ln = lognormal_dist(0.5);
    EXPECT_EQ(s_op(zero, ln, kOne, 1.3), 0.0);
    NuHat0 dipole;
    dipole.atoms = {{0.5, 1.0}, {1.0, -1.0}};
    EXPECT_NEAR(s_op(dipole, exponential_dist(), kOne, 0.7), 0.0, 1e-15);
    NuHat0 atom0;
    atom0.atoms = {{0.0, 1.0}};
    EXPECT_NEAR(s_op(atom0, ln, kOne, 1.0), ln.survival(1.0), 1e-14);
    NuHat0 dens;
    dens.density = [](double x) { return std::exp(-x); };
    dens.support = 40.0;
    // exponential: ∫ e^{−x} e^{−t} dx = e^{−t}
    EXPECT_NEAR(s_op(dens, exponential_dist(), kOne, 0.4), std::exp(-0.4), 1e-9);
}

TEST(Cmse, ZeroInputsGiveZero)
{
    const std::size_t n = 200;
    std::vector<double> z(n + 1, 0.0);
    for (Regime r : {Regime::Subcritical, Regime::Critical, Regime::Supercritical}) {
        auto s = solve_cmse(r, z, 0.0, z, lognormal_dist(0.5), 0.01);
        for (std::size_t k = 0; k <= n; ++k) {
            EXPECT_EQ(s.K[k], 0.0);
            EXPECT_EQ(s.X[k], 0.0);
            EXPECT_EQ(s.v[k], 0.0);
        }
    }
    EXPECT_THROW(solve_cmse(Regime::Mixed, z, 0.0, z, exponential_dist(), 0.01), CmseError);
    std::vector<double> bad = z;
    bad[0] = 1.0;
    EXPECT_THROW(solve_cmse(Regime::Critical, z, 0.0, bad, exponential_dist(), 0.01), CmseError);
}

TEST(Cmse, SubcriticalKEqualsE)
{
    std::mt19937_64 eng(3);
    std::normal_distribution<double> z;
    const std::size_t n = 300;
    std::vector<double> E(n + 1, 0.0), Z(n + 1, 0.0);
    for (std::size_t k = 1; k <= n; ++k) {
        E[k] = E[k - 1] + 0.1 * z(eng);
        Z[k] = Z[k - 1] + 0.1 * z(eng);
    }
    Z[0] = 0.4;
    auto s = solve_cmse(Regime::Subcritical, E, 0.4, Z, gamma_dist(2.0), 0.01);
    for (std::size_t k = 0; k <= n; ++k) EXPECT_EQ(s.K[k], E[k]);
    for (std::size_t k = 0; k <= n; ++k) EXPECT_EQ(s.v[k], s.X[k]);
}

TEST(Cmse, RegimeBookkeeping)
{
    std::mt19937_64 eng(4);
    std::normal_distribution<double> z;
    const std::size_t n = 400;
    const double x0 = 0.3;
    std::vector<double> E(n + 1, 0.0), Z(n + 1, 0.0);
    for (std::size_t k = 1; k <= n; ++k) {
        E[k] = E[k - 1] + 0.1 * z(eng) - 0.01;
        Z[k] = Z[k - 1] + 0.1 * z(eng);
    }
    auto d = lognormal_dist(0.5);
    auto sup = solve_cmse(Regime::Supercritical, E, x0, Z, d, 0.01);
    for (std::size_t k = 0; k <= n; ++k) EXPECT_NEAR(sup.K[k], E[k] + x0 - sup.X[k], 1e-12);
    auto crit = solve_cmse(Regime::Critical, E, x0, Z, d, 0.01);
    bool both_signs[2] = {false, false};
    for (std::size_t k = 0; k <= n; ++k) {
        EXPECT_NEAR(crit.K[k], E[k] + x0 - std::max(crit.X[k], 0.0), 1e-12);
        EXPECT_EQ(crit.v[k], std::min(crit.X[k], 0.0));
        both_signs[crit.X[k] > 0.0] = true;
    }
    EXPECT_TRUE(both_signs[0] && both_signs[1]);
    // the step equation itself: X = x0 + E + Z − v0 − ∫g K with trapezoid weights
    for (std::size_t m = 1; m <= n; m += 37) {
        double conv = 0.0;
        for (std::size_t k = 0; k <= m; ++k)
            conv += trap_weight(k, m) * d.density(static_cast<double>(m - k) * 0.01) * crit.K[k];
        EXPECT_NEAR(crit.X[m], x0 + E[m] + Z[m] - conv * 0.01, 1e-12);
    }
}

TEST(Cmse, LipschitzBound)
{
    std::mt19937_64 eng(5);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double dt = 0.01, T = 2.0, eps = 0.05;
    const auto n = static_cast<std::size_t>(T / dt);
    auto d = gamma_dist(2.0);
    const double bound = 3.0 * (1.0 + renewal_function(d, T, dt).back()) * eps;
    for (Regime r : {Regime::Subcritical, Regime::Critical, Regime::Supercritical}) {
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> E(n + 1, 0.0), Z(n + 1, 0.0), E2(n + 1), Z2(n + 1);
            for (std::size_t k = 1; k <= n; ++k) {
                E[k] = E[k - 1] + std::sqrt(dt) * z(eng);
                Z[k] = Z[k - 1] + std::sqrt(dt) * z(eng);
            }
            double x0 = 0.5 * z(eng), x02 = x0 + eps * u(eng);
            Z[0] = regime_F(r, x0);
            for (std::size_t k = 0; k <= n; ++k) {
                E2[k] = E[k] + eps * u(eng);
                Z2[k] = Z[k] + eps * u(eng);
            }
            E2[0] = E[0];
            Z2[0] = regime_F(r, x02);
            if (std::abs(Z2[0] - Z[0]) > eps) continue;
            auto a = solve_cmse(r, E, x0, Z, d, dt), b = solve_cmse(r, E2, x02, Z2, d, dt);
            for (std::size_t k = 0; k <= n; ++k) {
                EXPECT_LE(std::abs(a.X[k] - b.X[k]), bound);
                EXPECT_LE(std::abs(a.K[k] - b.K[k]), bound);
                EXPECT_LE(std::abs(a.v[k] - b.v[k]), bound);
            }
        }
    }
}

TEST(GammaMap, Examples)
{
    auto e = exponential_dist();
    const double dt = 1e-3;
    const std::size_t n = 1000;
    std::vector<double> zero(n + 1, 0.0), K(n + 1);
    for (std::size_t k = 0; k <= n; ++k) K[k] = static_cast<double>(k) * dt;
    EXPECT_EQ(gamma_map(zero, e, kOne, kZero, n, dt), 0.0);
    // 1 − ∫_0^1 u e^{−(1−u)} du = 1 − e^{−1}
    EXPECT_NEAR(gamma_map(K, e, kOne, kZero, n, dt), 1.0 - std::exp(-1.0), 1e-4);
    // f ≡ 1 reduces to K(t) − ∫K g
    auto ln = lognormal_dist(0.5);
    double conv = 0.0;
    for (std::size_t k = 0; k <= n; ++k) conv += trap_weight(k, n) * K[k] * ln.density((n - k) * dt);
    EXPECT_NEAR(gamma_map(K, ln, kOne, kZero, n, dt), K[n] - dt * conv, 1e-14);
}

TEST(HatNu, OneEqualsCmseV)
{
    auto m = exp_critical_model(0.2);
    m.tests = {make_test_function("1", m.dist)};
    auto fl = critical_fluid(m.dist, 2.0, 0.01);
    auto g = make_limit_grid(fl, 0.02, 2.0);
    auto p = solve_limit_path(m, simulate_field(fl, g, 13));
    const auto& nu1 = p.nuhat.at("1");
    for (std::size_t n = 0; n < nu1.size(); ++n) EXPECT_NEAR(nu1[n], p.vhat[n], 1e-10);
}

TEST(HatNu, ZeroInputs)
{
    auto ln = lognormal_dist(0.5);
    std::vector<double> K(101, 0.0);
    auto tf = make_test_function("exp", ln);
    EXPECT_EQ(hat_nu(0.0, K, 0.0, ln, tf.f, tf.df, 100, 0.01), 0.0);
}

TEST(HatNu, SurvivalTestFunctionAlternativeRoute)
{
    auto d = lognormal_dist(0.5);
    auto fl = critical_fluid(d, 1.0, 0.01);
    auto g = make_limit_grid(fl, 0.02, 1.0);
    auto f = simulate_field(fl, g, 14);
    LimitModel m;
    m.dist = d;
    m.arrival = renewal(1.0, 0.5);
    m.nu0hat.atoms = {{0.3, 0.5}, {1.2, -0.5}};
    m.x0hat = 0.0;
    m.regime = Regime::Critical;
    auto tf = make_test_function("1-G", d);
    auto p = solve_limit_path(m, f);
    for (std::size_t n = 0; n <= f.nt; n += 5) {
        double S = s_op(m.nu0hat, d, tf.f, g.time(n));
        double H = conv_H(f, d, tf.f, n);
        double direct = hat_nu(S, p.Khat, H, d, tf.f, tf.df, n, g.dt);
        double alt = S + gamma_map(p.Khat, d, tf.f, tf.df, n, g.dt) - H;
        EXPECT_NEAR(direct, alt, 1e-10);
    }
}

TEST(HalfinWhitt, NoiseOffOdes)
{
    const double dt = 1e-3;
    auto a = simulate_hw(0.0, 1.0, -1.0, dt, 5.0, 1, 0, true);
    for (std::size_t n = 0; n < a.size(); ++n) EXPECT_NEAR(a[n], -std::exp(-static_cast<double>(n) * dt), 5.0 * dt);
    auto b = simulate_hw(1.0, 1.0, 1.0, dt, 4.0, 1, 0, true);
    for (std::size_t n = 0; n < b.size(); ++n) {
        double t = static_cast<double>(n) * dt;
        double exact = t <= 1.0 ? 1.0 - t : -1.0 + std::exp(-(t - 1.0));
        EXPECT_NEAR(b[n], exact, 5.0 * dt);
    }
}

TEST(HalfinWhitt, QuadraticVariationCoefficient)
{
    auto x = simulate_hw(1.0, 1.0, 0.0, 1e-4, 1.0, 2);
    double qv = 0.0;
    for (std::size_t n = 1; n < x.size(); ++n) qv += (x[n] - x[n - 1]) * (x[n] - x[n - 1]);
    EXPECT_NEAR(qv, 2.0, 0.1);
}

TEST(Sae, NoiseOffZeroInputsExactlyZero)
{
    auto m = exp_critical_model();
    m.arrival = renewal(1.0, 0.0);
    auto fl = critical_fluid(m.dist, 1.0, 0.01);
    auto g = make_limit_grid(fl, 0.02, 1.0);
    auto f = simulate_field(fl, g, 1, 0, true);
    std::vector<double> K(f.nt + 1, 0.0);
    for (const char* name : {"1", "exp"}) {
        auto r = sae_residual(m, f, K, make_test_function(name, m.dist));
        for (double v : r) EXPECT_EQ(v, 0.0);
    }
}

TEST(Sae, ResidualFirstOrderUnderRefinement)
{
    auto m = exp_critical_model();
    auto fl = critical_fluid(m.dist, 1.0, 0.005);
    auto g = make_limit_grid(fl, 0.005, 1.0, 1e-6, 4);
    auto fine = simulate_field(fl, g, 15);
    auto tf = make_test_function("exp", m.dist);
    std::vector<double> err;
    for (std::size_t factor : {4u, 2u, 1u}) {
        auto f = coarsen(fine, factor);
        auto p = solve_limit_path(m, f);
        auto r = sae_residual(m, f, p.Khat, tf);
        err.push_back(*std::max_element(r.begin(), r.end()));
    }
    EXPECT_GT(err[1] / err[0], 0.3);
    EXPECT_LT(err[1] / err[0], 0.7);
    EXPECT_GT(err[2] / err[1], 0.3);
    EXPECT_LT(err[2] / err[1], 0.7);
}

TEST(LimitPath, RepresentationOfX)
{
    auto m = exp_critical_model(0.4);
    m.dist = gamma_dist(2.0);
    auto fl = critical_fluid(m.dist, 2.0, 0.01);
    auto g = make_limit_grid(fl, 0.02, 2.0);
    auto f = simulate_field(fl, g, 16);
    auto p = solve_limit_path(m, f);
    const double nu0 = s_op(m.nu0hat, m.dist, kOne, 0.0);
    for (std::size_t n = 0; n <= f.nt; ++n) {
        double conv = 0.0;
        for (std::size_t k = 0; k <= n; ++k)
            conv += trap_weight(k, n) * m.dist.density(static_cast<double>(n - k) * g.dt) * p.Khat[k];
        double Dtilde = nu0 - p.Shat1[n] - p.Mhat1[n] + p.Hhat1[n] + g.dt * conv;
        EXPECT_NEAR(p.Xhat[n], m.x0hat + p.Ehat[n] - p.Mhat1[n] - Dtilde, 1e-10);
    }
}

TEST(LimitPath, ExponentialDriftIdentity)
{
    auto m = exp_critical_model(0.0);
    m.tests = {make_test_function("h", m.dist)};
    auto fl = critical_fluid(m.dist, 2.0, 0.01);
    auto g = make_limit_grid(fl, 0.02, 2.0);
    auto p = solve_limit_path(m, simulate_field(fl, g, 17));
    const auto& nh = p.nuhat.at("h");
    double a = 0.0, b = 0.0;
    for (std::size_t n = 1; n < nh.size(); ++n) {
        a += 0.5 * (nh[n] + nh[n - 1]) * g.dt;
        b += 0.5 * (std::min(p.Xhat[n], 0.0) + std::min(p.Xhat[n - 1], 0.0)) * g.dt;
        EXPECT_NEAR(a, b, 1e-8);
    }
}

TEST(LimitPath, ArrivalAndDepartureNoiseIndependent)
{
    auto d = exponential_dist();
    auto fl = critical_fluid(d, 1.0, 0.01);
    auto g = make_limit_grid(fl, 0.25, 1.0);
    auto q = field_intensity(fl, g);
    auto a = renewal(1.0, 1.0);
    const int R = 100000;
    double se = 0, sm = 0, sem = 0, see = 0, smm = 0;
    for (int r = 0; r < R; ++r) {
        auto f = simulate_field(q, g, 18, static_cast<std::uint64_t>(r));
        double e = simulate_hatE(a, g, f.dB).back(), mm = field_integral_path(f, kOne).back();
        se += e;
        sm += mm;
        sem += e * mm;
        see += e * e;
        smm += mm * mm;
    }
    double cov = sem / R - (se / R) * (sm / R);
    double ve = see / R - (se / R) * (se / R), vm = smm / R - (sm / R) * (sm / R);
    double corr = cov / std::sqrt(ve * vm);
    EXPECT_LE(std::abs(corr), 3.0 / std::sqrt(static_cast<double>(R)));
}

TEST(LimitGrid, TruncationAndDivisibility)
{
    auto d = lognormal_dist(1.0);
    auto fl = critical_fluid(d, 2.0, 0.01);
    auto g = make_limit_grid(fl, 0.01, 2.0, 1e-6, 8);
    EXPECT_EQ(g.cells() % 8, 0u);
    EXPECT_GE(g.x_max, 2.0);
    auto q = field_intensity(fl, g);
    double total = 0.0;
    for (double v : q) total += v;
    // total hazard load over [0,2] is 2 at the invariant state
    EXPECT_NEAR(total, 2.0, 2e-3);
    EXPECT_THROW(make_limit_grid(fl, 0.01, 3.0), std::invalid_argument);
}
