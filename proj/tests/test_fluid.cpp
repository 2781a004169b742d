#include <gtest/gtest.h>

#include <cmath>

#include "qedlab/fluid.hpp"

using namespace qedlab;

namespace {

const Fn1 kOne = [](double) { return 1.0; };

std::vector<ServiceDistribution> families()
{
    return {exponential_dist(), lognormal_dist(0.5), gamma_dist(2.0),
            make_service_dist({.family = "weibull", .params = {{"shape", 1.5}}})};
}

double max_dev(const std::vector<double>& y, double target)
{
    double m = 0.0;
    for (double v : y) m = std::max(m, std::abs(v - target));
    return m;
}

}  // namespace

TEST(Fluid, CriticalInvariantStaysAtOne)
{
    // midpoint survival weights are second order: about dt²/24 off the line
    for (const auto& d : families()) {
        auto p = solve_fluid(invariant_start(d, 1.0, 1.0), d, d.name() == "exponential" ? 10.0 : 3.0, 1e-3);
        EXPECT_LE(max_dev(p.Xbar, 1.0), 1e-6) << d.name();
        EXPECT_EQ(p.regime, Regime::Critical) << d.name();
    }
}

TEST(Fluid, InvariantAgeFunctionalsStationary)
{
    const double dt = 1e-2;
    for (const auto& d : families()) {
        auto p = solve_fluid(invariant_start(d, 1.0, 1.0), d, 5.0, dt);
        auto nu = invariant_measure(d);
        for (const auto& f : {kOne, Fn1([d](double x) { return d.hazard(x); }), Fn1([d](double x) { return d.survival(x); })}) {
            double ref = integrate([&](double x) { return f(x) * nu(x); }, 0.0, effective_support(d, 1e-14), 1e-12);
            for (std::size_t n = 0; n < p.t.size(); n += 50)
                EXPECT_NEAR(fluid_age_eval(p, f, n), ref, 10.0 * dt) << d.name() << " t=" << p.t[n];
        }
    }
}

TEST(Fluid, EmptyStartIsSubcritical)
{
    for (double lb : {0.5, 1.0}) {
        auto d = lognormal_dist(1.0);
        auto p = solve_fluid(empty_start(lb), d, 10.0, 1e-2);
        for (double x : p.Xbar) EXPECT_LT(x, 1.0);
        if (lb == 0.5) EXPECT_EQ(p.regime, Regime::Subcritical);
    }
}

TEST(Fluid, OverloadedInvariantIsSupercritical)
{
    auto d = gamma_dist(2.0);
    auto p = solve_fluid(invariant_start(d, 1.0, 2.0), d, 3.0, 1e-3);
    EXPECT_EQ(p.regime, Regime::Supercritical);
    EXPECT_LE(max_dev(p.Xbar, 2.0), 1e-6);
}

TEST(Fluid, ExponentialDrain)
{
    auto d = exponential_dist();
    FluidInit init = invariant_start(d, 0.0, 1.0);
    const double dt = 1e-3;
    auto p = solve_fluid(init, d, 5.0, dt);
    double worst = 0.0;
    for (std::size_t n = 0; n < p.t.size(); ++n) worst = std::max(worst, std::abs(p.Xbar[n] - std::exp(-p.t[n])));
    EXPECT_LE(worst, 1e-6);
    EXPECT_EQ(p.regime, Regime::Mixed);
}

TEST(Fluid, RegimeClassification)
{
    FluidPath p;
    p.t = {0.0, 1.0, 2.0};
    p.Xbar = {0.5, 0.6, 0.7};
    EXPECT_EQ(classify_regime(p, 2.0, 1e-3), Regime::Subcritical);
    p.Xbar = {1.0, 1.0 + 1e-4, 1.0 - 1e-4};
    EXPECT_EQ(classify_regime(p, 2.0, 1e-3), Regime::Critical);
    p.Xbar = {1.5, 1.2, 1.1};
    EXPECT_EQ(classify_regime(p, 2.0, 1e-3), Regime::Supercritical);
    p.Xbar = {0.5, 1.0, 1.5};
    EXPECT_EQ(classify_regime(p, 2.0, 1e-3), Regime::Mixed);
    // horizon restricts the window
    EXPECT_EQ(classify_regime(p, 0.5, 1e-3), Regime::Subcritical);
    EXPECT_STREQ(to_string(Regime::Critical), "critical");
}

TEST(Fluid, InvariantMeasureMassAndHazardLoad)
{
    for (const auto& d : families()) {
        auto nu = invariant_measure(d);
        const double L = effective_support(d, 1e-14);
        EXPECT_NEAR(integrate(nu, 0.0, L, 1e-12), 1.0, 1e-6) << d.name();
        EXPECT_NEAR(integrate([&](double x) { return d.hazard(x) * nu(x); }, 0.0, L, 1e-12), 1.0, 1e-6) << d.name();
    }
    auto e = invariant_measure(exponential_dist());
    for (double x : {0.0, 0.3, 2.0}) EXPECT_NEAR(e(x), std::exp(-x), 1e-15);
}

TEST(Fluid, AgeEvalMatchesMassAndInitialData)
{
    auto d = lognormal_dist(0.8);
    auto p = solve_fluid(invariant_start(d, 0.7, 0.9), d, 4.0, 1e-2);
    for (std::size_t n = 0; n < p.t.size(); n += 37) EXPECT_NEAR(fluid_age_eval(p, kOne, n), p.Bbar[n], 1e-12);
    Fn1 f = [](double x) { return std::cos(x); };
    auto nu0 = [&](double x) { return 0.9 * d.survival(x); };
    double ref = integrate([&](double x) { return f(x) * nu0(x); }, 0.0, effective_support(d, 1e-14), 1e-12);
    EXPECT_NEAR(fluid_age_eval(p, f, 0), ref, 1e-9);
    auto e = exponential_dist();
    auto pe = solve_fluid(invariant_start(e, 1.0, 1.0), e, 3.0, 1e-3);
    Fn1 h = [e](double x) { return e.hazard(x); };
    for (std::size_t n = 0; n < pe.t.size(); n += 250) EXPECT_NEAR(fluid_age_eval(pe, h, n), 1.0, 1e-6);
}

TEST(Fluid, BalanceAndNonIdling)
{
    const double dt = 1e-2;
    auto d = make_service_dist({.family = "weibull", .params = {{"shape", 2.0}}});
    FluidInit init = empty_start(1.3);
    auto p = solve_fluid(init, d, 8.0, dt);
    double integ = 0.0;
    for (std::size_t n = 0; n < p.t.size(); ++n) {
        if (n > 0) integ += 0.5 * (p.hazard_load[n] + p.hazard_load[n - 1]) * dt;
        EXPECT_NEAR(p.Xbar[n], init.x0 + init.Ebar(p.t[n]) - integ, 10.0 * dt) << p.t[n];
        EXPECT_NEAR(1.0 - p.Bbar[n], std::max(1.0 - p.Xbar[n], 0.0), 10.0 * dt);
        EXPECT_NEAR(p.Dbar[n], integ, 10.0 * dt);
        if (n > 0) EXPECT_GE(p.Kbar[n], p.Kbar[n - 1]);
    }
    EXPECT_EQ(p.regime, Regime::Mixed);
}

TEST(Fluid, EqFxErrorShrinksWithDt)
{
    auto d = lognormal_dist(0.5);
    auto err = [&](double dt) {
        FluidInit init = empty_start(1.2);
        auto p = solve_fluid(init, d, 4.0, dt);
        double integ = 0.0, worst = 0.0;
        for (std::size_t n = 1; n < p.t.size(); ++n) {
            integ += 0.5 * (p.hazard_load[n] + p.hazard_load[n - 1]) * dt;
            worst = std::max(worst, std::abs(p.Xbar[n] - init.Ebar(p.t[n]) + integ));
        }
        return worst;
    };
    double e1 = err(0.02), e2 = err(0.01);
    EXPECT_LT(e2, 0.6 * e1);
}

TEST(Fluid, RejectsInconsistentInitialData)
{
    auto d = exponential_dist();
    FluidInit bad = invariant_start(d, 1.0, 1.0);
    bad.x0 = 0.5;  // mass 1 in service but only half a unit present
    EXPECT_THROW(solve_fluid(bad, d, 1.0, 0.1), std::invalid_argument);
    EXPECT_THROW(solve_fluid(empty_start(1.0), d, 1.0, 0.0), std::invalid_argument);
}

TEST(Fluid, InterpolateBetweenGridPoints)
{
    auto d = exponential_dist();
    auto p = solve_fluid(invariant_start(d, 0.0, 1.0), d, 1.0, 0.1);
    EXPECT_DOUBLE_EQ(interpolate(p, p.Xbar, 0.0), p.Xbar[0]);
    EXPECT_NEAR(interpolate(p, p.Xbar, 0.25), 0.5 * (p.Xbar[2] + p.Xbar[3]), 1e-15);
    EXPECT_DOUBLE_EQ(interpolate(p, p.Xbar, 7.0), p.Xbar.back());
}
