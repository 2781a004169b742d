#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "rng.hpp"

namespace qedlab {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

using Fn1 = std::function<double(double)>;
using Fn2 = std::function<double(double, double)>;

class DistError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// Raw (unscaled) service law. Subclasses provide the survival function, the
// density and an inverse of the survival function.
class ServiceLaw {
  public:
    virtual ~ServiceLaw() = default;
    virtual double survival(double x) const = 0;
    virtual double density(double x) const = 0;
    virtual double inverse_survival(double p) const = 0;
    virtual double mean() const = 0;
    virtual double support_end() const { return kInf; }
    virtual double cumulative_hazard(double x) const
    {
        double s = survival(x);
        return s > 0.0 ? -std::log(s) : kInf;
    }
    virtual double sample(Engine& eng) const { return inverse_survival(uniform_open(eng)); }
};

namespace laws {

class Exponential final : public ServiceLaw {
  public:
    double survival(double x) const override { return x <= 0.0 ? 1.0 : std::exp(-x); }
    double density(double x) const override { return x < 0.0 ? 0.0 : std::exp(-x); }
    double inverse_survival(double p) const override { return -std::log(p); }
    double mean() const override { return 1.0; }
    double cumulative_hazard(double x) const override { return std::max(x, 0.0); }
};

class Lognormal final : public ServiceLaw {
  public:
    Lognormal(double mu, double sigma) : mu_(mu), sigma_(sigma)
    {
        if (!(sigma > 0.0)) throw DistError("lognormal: sigma must be positive");
    }
    double survival(double x) const override
    {
        if (x <= 0.0) return 1.0;
        return 0.5 * std::erfc((std::log(x) - mu_) / (sigma_ * std::numbers::sqrt2));
    }
    double density(double x) const override
    {
        if (x <= 0.0) return 0.0;
        double z = (std::log(x) - mu_) / sigma_;
        return std::exp(-0.5 * z * z) / (x * sigma_ * std::sqrt(2.0 * std::numbers::pi));
    }
    double inverse_survival(double p) const override
    {
        return std::exp(mu_ + sigma_ * std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p));
    }
    double mean() const override { return std::exp(mu_ + 0.5 * sigma_ * sigma_); }

  private:
    double mu_, sigma_;
};

class Weibull final : public ServiceLaw {
  public:
    explicit Weibull(double k) : k_(k)
    {
        if (!(k > 0.0)) throw DistError("weibull: shape must be positive");
    }
    double survival(double x) const override { return x <= 0.0 ? 1.0 : std::exp(-std::pow(x, k_)); }
    double density(double x) const override
    {
        if (x < 0.0) return 0.0;
        if (x == 0.0) return k_ == 1.0 ? 1.0 : (k_ < 1.0 ? kInf : 0.0);
        return k_ * std::pow(x, k_ - 1.0) * std::exp(-std::pow(x, k_));
    }
    double inverse_survival(double p) const override { return std::pow(-std::log(p), 1.0 / k_); }
    double mean() const override { return std::tgamma(1.0 + 1.0 / k_); }
    double cumulative_hazard(double x) const override { return x <= 0.0 ? 0.0 : std::pow(x, k_); }

  private:
    double k_;
};

class Gamma final : public ServiceLaw {
  public:
    explicit Gamma(double k) : k_(k)
    {
        if (!(k > 0.0)) throw DistError("gamma: shape must be positive");
    }
    double survival(double x) const override { return x <= 0.0 ? 1.0 : boost::math::gamma_q(k_, x); }
    double density(double x) const override
    {
        if (x < 0.0) return 0.0;
        if (x == 0.0) return k_ == 1.0 ? 1.0 : (k_ < 1.0 ? kInf : 0.0);
        return boost::math::gamma_p_derivative(k_, x);
    }
    double inverse_survival(double p) const override { return boost::math::gamma_q_inv(k_, p); }
    double mean() const override { return k_; }

  private:
    double k_;
};

// Classical Pareto with unit minimum and shape a.
class Pareto final : public ServiceLaw {
  public:
    explicit Pareto(double a) : a_(a)
    {
        if (!(a > 1.0)) throw DistError("pareto: shape must exceed 1 for a finite mean");
    }
    double survival(double x) const override { return x <= 1.0 ? 1.0 : std::pow(x, -a_); }
    double density(double x) const override { return x < 1.0 ? 0.0 : a_ * std::pow(x, -a_ - 1.0); }
    double inverse_survival(double p) const override { return std::pow(p, -1.0 / a_); }
    double mean() const override { return a_ / (a_ - 1.0); }

  private:
    double a_;
};

// Log-logistic (Fisk) law with unit scale, the nonnegative member of the
// logistic family.
class LogLogistic final : public ServiceLaw {
  public:
    explicit LogLogistic(double k) : k_(k)
    {
        if (!(k > 1.0)) throw DistError("logistic: shape must exceed 1 for a finite mean");
    }
    double survival(double x) const override { return x <= 0.0 ? 1.0 : 1.0 / (1.0 + std::pow(x, k_)); }
    double density(double x) const override
    {
        if (x <= 0.0) return 0.0;
        double xk = std::pow(x, k_);
        return k_ * xk / x / ((1.0 + xk) * (1.0 + xk));
    }
    double inverse_survival(double p) const override { return std::pow((1.0 - p) / p, 1.0 / k_); }
    double mean() const override { return (std::numbers::pi / k_) / std::sin(std::numbers::pi / k_); }

  private:
    double k_;
};

// Phase-type law: absorption time of a CTMC with initial vector alpha and
// sub-generator T.
class PhaseType final : public ServiceLaw {
  public:
    PhaseType(Eigen::RowVectorXd alpha, Eigen::MatrixXd T) : alpha_(std::move(alpha)), T_(std::move(T))
    {
        const auto n = alpha_.size();
        if (n == 0 || T_.rows() != n || T_.cols() != n) throw DistError("phase_type: dimension mismatch");
        if (std::abs(alpha_.sum() - 1.0) > 1e-9 || (alpha_.array() < 0.0).any())
            throw DistError("phase_type: alpha must be a probability vector");
        exit_ = -T_ * Eigen::VectorXd::Ones(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!(T_(i, i) < 0.0)) throw DistError("phase_type: diagonal of T must be negative");
            for (Eigen::Index j = 0; j < n; ++j)
                if (i != j && T_(i, j) < 0.0) throw DistError("phase_type: off-diagonal of T must be nonnegative");
            if (exit_(i) < -1e-12) throw DistError("phase_type: row sums of T must be nonpositive");
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lu(T_);
        if (!lu.isInvertible()) throw DistError("phase_type: T must be invertible");
        mean_ = -(alpha_ * lu.solve(Eigen::VectorXd::Ones(n)))(0);
        if (!(mean_ > 0.0) || !std::isfinite(mean_)) throw DistError("phase_type: mean not finite");
    }
    double survival(double x) const override
    {
        if (x <= 0.0) return 1.0;
        return std::clamp(state(x).sum(), 0.0, 1.0);
    }
    double density(double x) const override
    {
        if (x < 0.0) return 0.0;
        return std::max(0.0, state(x).dot(exit_.transpose()));
    }
    double inverse_survival(double p) const override
    {
        double lo = 0.0, hi = mean_;
        while (survival(hi) > p) hi *= 2.0;
        for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
            double mid = 0.5 * (lo + hi);
            (survival(mid) > p ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
    }
    double mean() const override { return mean_; }
    double sample(Engine& eng) const override
    {
        const auto n = alpha_.size();
        Eigen::Index phase = pick(alpha_, uniform_open(eng));
        double t = 0.0;
        for (;;) {
            double rate = -T_(phase, phase);
            t += -std::log(uniform_open(eng)) / rate;
            Eigen::RowVectorXd jump(n + 1);
            for (Eigen::Index j = 0; j < n; ++j) jump(j) = j == phase ? 0.0 : T_(phase, j) / rate;
            jump(n) = exit_(phase) / rate;
            Eigen::Index next = pick(jump, uniform_open(eng));
            if (next == n) return t;
            phase = next;
        }
    }

  private:
    Eigen::RowVectorXd state(double x) const { return alpha_ * (T_ * x).exp(); }
    static Eigen::Index pick(const Eigen::RowVectorXd& w, double u)
    {
        double acc = 0.0, total = w.sum();
        for (Eigen::Index j = 0; j < w.size(); ++j) {
            acc += w(j) / total;
            if (u <= acc) return j;
        }
        return w.size() - 1;
    }
    Eigen::RowVectorXd alpha_;
    Eigen::MatrixXd T_;
    Eigen::VectorXd exit_;
    double mean_ = 1.0;
};

// Piecewise-constant density on [b_0=0, b_m], weights renormalized to one.
class Piecewise final : public ServiceLaw {
  public:
    Piecewise(std::vector<double> breaks, std::vector<double> dens) : b_(std::move(breaks)), c_(std::move(dens))
    {
        if (b_.size() < 2 || c_.size() + 1 != b_.size()) throw DistError("piecewise: need m+1 breaks for m densities");
        if (b_.front() != 0.0) throw DistError("piecewise: first break must be 0");
        double mass = 0.0;
        for (std::size_t i = 0; i < c_.size(); ++i) {
            if (!(b_[i + 1] > b_[i])) throw DistError("piecewise: breaks must increase");
            if (c_[i] < 0.0) throw DistError("piecewise: densities must be nonnegative");
            mass += c_[i] * (b_[i + 1] - b_[i]);
        }
        if (!(mass > 0.0)) throw DistError("piecewise: zero mass");
        S_.assign(b_.size(), 1.0);
        mean_ = 0.0;
        for (std::size_t i = 0; i < c_.size(); ++i) {
            c_[i] /= mass;
            S_[i + 1] = S_[i] - c_[i] * (b_[i + 1] - b_[i]);
            mean_ += c_[i] * 0.5 * (b_[i + 1] * b_[i + 1] - b_[i] * b_[i]);
        }
        S_.back() = 0.0;
    }
    double survival(double x) const override
    {
        if (x <= 0.0) return 1.0;
        if (x >= b_.back()) return 0.0;
        std::size_t i = segment(x);
        return std::max(0.0, S_[i] - c_[i] * (x - b_[i]));
    }
    double density(double x) const override
    {
        if (x < 0.0 || x >= b_.back()) return 0.0;
        return c_[segment(x)];
    }
    double inverse_survival(double p) const override
    {
        for (std::size_t i = 0; i < c_.size(); ++i) {
            if (p >= S_[i + 1] && c_[i] > 0.0) return b_[i] + (S_[i] - p) / c_[i];
        }
        return b_.back();
    }
    double mean() const override { return mean_; }
    double support_end() const override { return b_.back(); }

  private:
    std::size_t segment(double x) const
    {
        auto it = std::upper_bound(b_.begin(), b_.end(), x);
        return static_cast<std::size_t>(std::distance(b_.begin(), it)) - 1;
    }
    std::vector<double> b_, c_, S_;
    double mean_ = 0.0;
};

}  // namespace laws

// Service distribution: a raw law stretched by a time scale c, so that
// G(x) = G_raw(x/c). With normalization c = 1/mean_raw and the mean is 1.
class ServiceDistribution {
  public:
    ServiceDistribution() = default;
    ServiceDistribution(std::string name, std::shared_ptr<const ServiceLaw> law, double scale)
        : name_(std::move(name)), law_(std::move(law)), c_(scale)
    {
        if (!law_) throw DistError("null law");
        if (!(c_ > 0.0) || !std::isfinite(c_)) throw DistError(name_ + ": scale must be positive and finite");
        double m = law_->mean();
        if (!(m > 0.0) || !std::isfinite(m)) throw DistError(name_ + ": mean is zero or infinite");
    }

    const std::string& name() const { return name_; }
    double scale() const { return c_; }
    double mean() const { return c_ * law_->mean(); }
    double support_end() const { return c_ * law_->support_end(); }

    double survival(double x) const { return law_->survival(x / c_); }
    double cdf(double x) const { return 1.0 - survival(x); }
    double density(double x) const { return law_->density(x / c_) / c_; }
    double hazard(double x) const
    {
        double s = survival(x);
        if (!(s > 0.0) || x >= support_end()) return 0.0;
        return density(x) / s;
    }
    double cumulative_hazard(double x) const { return law_->cumulative_hazard(x / c_); }

    // (1-G(x+t))/(1-G(x)); zero where G(x)=1.
    double survival_ratio(double x, double t) const
    {
        double s = survival(x);
        if (!(s > 0.0)) return 0.0;
        return survival(x + t) / s;
    }

    double sample(Engine& eng) const { return c_ * law_->sample(eng); }
    // Service requirement drawn from G conditioned on exceeding the age a.
    double sample_given_age(double a, Engine& eng) const
    {
        if (a <= 0.0) return sample(eng);
        double sa = survival(a);
        if (!(sa > 0.0)) throw DistError(name_ + ": age beyond support");
        double v = c_ * law_->inverse_survival(uniform_open(eng) * sa);
        return std::max(v, std::nextafter(a, kInf));
    }

  private:
    std::string name_;
    std::shared_ptr<const ServiceLaw> law_;
    double c_ = 1.0;
};

struct DistSpec {
    std::string family;
    std::map<std::string, double> params;
    std::vector<double> alpha;                 // phase-type initial vector
    std::vector<std::vector<double>> matrix;   // phase-type sub-generator
    std::vector<double> breaks, densities;     // piecewise
    bool normalize = true;
};

inline double param(const DistSpec& s, const std::string& key, double fallback)
{
    auto it = s.params.find(key);
    return it == s.params.end() ? fallback : it->second;
}

inline ServiceDistribution make_service_dist(const DistSpec& s)
{
    std::shared_ptr<const ServiceLaw> law;
    double raw_scale = 1.0;
    const std::string& f = s.family;
    if (f == "exponential") {
        law = std::make_shared<laws::Exponential>();
        raw_scale = 1.0 / param(s, "rate", 1.0);
    } else if (f == "lognormal") {
        double sigma = param(s, "sigma", 0.5);
        double mu = s.normalize ? -0.5 * sigma * sigma : param(s, "mu", 0.0);
        law = std::make_shared<laws::Lognormal>(mu, sigma);
    } else if (f == "weibull") {
        law = std::make_shared<laws::Weibull>(param(s, "shape", 1.0));
        raw_scale = param(s, "scale", 1.0);
    } else if (f == "gamma") {
        law = std::make_shared<laws::Gamma>(param(s, "shape", 1.0));
        raw_scale = param(s, "scale", 1.0);
    } else if (f == "pareto") {
        law = std::make_shared<laws::Pareto>(param(s, "shape", 2.0));
        raw_scale = param(s, "scale", 1.0);
    } else if (f == "logistic") {
        law = std::make_shared<laws::LogLogistic>(param(s, "shape", 3.0));
        raw_scale = param(s, "scale", 1.0);
    } else if (f == "phase_type") {
        const auto n = static_cast<Eigen::Index>(s.alpha.size());
        if (static_cast<Eigen::Index>(s.matrix.size()) != n) throw DistError("phase_type: matrix rows must match alpha");
        Eigen::RowVectorXd a(n);
        Eigen::MatrixXd T(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            a(i) = s.alpha[static_cast<std::size_t>(i)];
            const auto& row = s.matrix[static_cast<std::size_t>(i)];
            if (static_cast<Eigen::Index>(row.size()) != n) throw DistError("phase_type: matrix must be square");
            for (Eigen::Index j = 0; j < n; ++j) T(i, j) = row[static_cast<std::size_t>(j)];
        }
        law = std::make_shared<laws::PhaseType>(a, T);
    } else if (f == "piecewise") {
        law = std::make_shared<laws::Piecewise>(s.breaks, s.densities);
    } else {
        throw DistError("unsupported family '" + f + "'");
    }
    double m = law->mean();
    if (!(m > 0.0) || !std::isfinite(m)) throw DistError(f + ": mean is zero or infinite");
    double c = s.normalize ? 1.0 / m : raw_scale;
    return ServiceDistribution(f, law, c);
}

inline ServiceDistribution exponential_dist() { return make_service_dist({.family = "exponential"}); }
inline ServiceDistribution lognormal_dist(double sigma)
{
    return make_service_dist({.family = "lognormal", .params = {{"sigma", sigma}}});
}
inline ServiceDistribution gamma_dist(double shape)
{
    return make_service_dist({.family = "gamma", .params = {{"shape", shape}}});
}

// Age beyond which the survival function is negligible (or the support end).
inline double effective_support(const ServiceDistribution& d, double tail = 1e-12)
{
    double L = d.support_end();
    if (std::isfinite(L)) return L;
    double x = 1.0;
    while (d.survival(x) > tail && x < 1e12) x *= 2.0;
    double lo = 0.0, hi = x;
    for (int it = 0; it < 100; ++it) {
        double mid = 0.5 * (lo + hi);
        (d.survival(mid) > tail ? lo : hi) = mid;
    }
    return hi;
}

// Adaptive Gauss-Kronrod on [a,b].
template <class F>
double integrate(F&& f, double a, double b, double tol = 1e-10)
{
    if (!(b > a)) return 0.0;
    return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(std::forward<F>(f), a, b, 15, tol);
}

// ∫_0^∞ (1-G), split at powers of two so heavy tails are resolved.
inline double mean_by_quadrature(const ServiceDistribution& d)
{
    double L = d.support_end();
    if (std::isfinite(L)) {
        double acc = 0.0;
        const int pieces = 64;
        for (int i = 0; i < pieces; ++i)
            acc += integrate([&](double x) { return d.survival(x); }, L * i / pieces, L * (i + 1) / pieces);
        return acc;
    }
    auto S = [&](double x) { return d.survival(x); };
    double acc = integrate(S, 0.0, 0.125);
    for (double a = 0.125; a < 1e15; a *= 2.0) {
        double piece = integrate(S, a, 2.0 * a);
        acc += piece;
        if (piece < 1e-14 * acc && d.survival(2.0 * a) < 1e-14) break;
        if (a > 1e6) {
            // power-law tail: close the sum analytically from the last ratio
            double r = integrate(S, 2.0 * a, 4.0 * a) / piece;
            if (r < 1.0) acc += piece * r / (1.0 - r);
            break;
        }
    }
    return acc;
}

// Renewal function U(t) = 1 + ∫_0^t U(t-s) dG(s) on the grid t_n = n·dt,
// trapezoidal in the Stieltjes form so that singular g at 0 is harmless.
inline std::vector<double> renewal_function(const ServiceDistribution& d, double T, double dt)
{
    if (!(dt > 0.0) || dt > T + 1e-15) throw DistError("renewal_function: need 0 < dt <= T");
    const auto n = static_cast<std::size_t>(std::llround(T / dt));
    std::vector<double> G(n + 1), dG(n + 1, 0.0), U(n + 1, 1.0);
    for (std::size_t k = 0; k <= n; ++k) G[k] = d.cdf(static_cast<double>(k) * dt);
    for (std::size_t k = 1; k <= n; ++k) dG[k] = G[k] - G[k - 1];
    const double diag = 1.0 - 0.5 * dG[1];
    if (!(diag > 0.0)) throw DistError("renewal_function: step too coarse for the law near 0");
    for (std::size_t m = 1; m <= n; ++m) {
        double acc = 1.0 + 0.5 * U[m - 1] * dG[1];
        for (std::size_t k = 2; k <= m; ++k) acc += 0.5 * (U[m - k] + U[m - k + 1]) * dG[k];
        U[m] = acc / diag;
        if (!std::isfinite(U[m])) throw DistError("renewal_function: diverged");
    }
    return U;
}

struct HolderReport {
    double C_G = 0.0;
    double gamma_G = 1.0;
    double max_violation = 0.0;
    std::size_t x_points = 0;
    std::size_t y_points = 0;
    double y_min = 0.0, y_max = 0.0;
};

inline double holder_constant(const ServiceDistribution& d, const std::vector<double>& xs,
                              const std::vector<double>& ys, double gamma)
{
    double C = 0.0;
    for (double x : xs) {
        double s = d.survival(x);
        if (!(s > 0.0)) continue;
        for (std::size_t i = 0; i < ys.size(); ++i)
            for (std::size_t j = i + 1; j < ys.size(); ++j) {
                double dy = std::abs(ys[i] - ys[j]);
                if (dy == 0.0) continue;
                double r = std::abs(d.survival(x + ys[j]) - d.survival(x + ys[i])) / s;
                C = std::max(C, r / std::pow(dy, gamma));
            }
    }
    return C;
}

inline double holder_violation(const ServiceDistribution& d, const std::vector<double>& xs,
                               const std::vector<double>& ys, double C, double gamma)
{
    double worst = 0.0;
    for (double x : xs) {
        double s = d.survival(x);
        if (!(s > 0.0)) continue;
        for (std::size_t i = 0; i < ys.size(); ++i)
            for (std::size_t j = i + 1; j < ys.size(); ++j) {
                double dy = std::abs(ys[i] - ys[j]);
                double r = std::abs(d.survival(x + ys[j]) - d.survival(x + ys[i])) / s;
                worst = std::max(worst, r - C * std::pow(dy, gamma));
            }
    }
    return worst;
}

// Fits the smallest constant for gamma = 1; falls back to gamma = 1/2 when
// the gamma = 1 constant keeps growing under refinement of the y grid.
inline HolderReport holder_check(const ServiceDistribution& d, const std::vector<double>& xs,
                                 const std::vector<double>& ys)
{
    HolderReport rep;
    rep.x_points = xs.size();
    rep.y_points = ys.size();
    if (!ys.empty()) {
        rep.y_min = *std::min_element(ys.begin(), ys.end());
        rep.y_max = *std::max_element(ys.begin(), ys.end());
    }
    std::vector<double> sorted(ys);
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> refined;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        refined.push_back(sorted[i]);
        if (i + 1 < sorted.size()) refined.push_back(0.5 * (sorted[i] + sorted[i + 1]));
    }
    double c1 = holder_constant(d, xs, ys, 1.0);
    double c1_fine = holder_constant(d, xs, refined, 1.0);
    if (c1_fine <= 1.1 * c1 + 1e-300) {
        rep.gamma_G = 1.0;
        rep.C_G = c1;
    } else {
        rep.gamma_G = 0.5;
        rep.C_G = holder_constant(d, xs, ys, 0.5);
    }
    double v = holder_violation(d, xs, ys, rep.C_G, rep.gamma_G);
    rep.max_violation = v > 1e-12 * rep.C_G ? v : 0.0;
    return rep;
}

// Φ_t f(x) = f(x+t)(1-G(x+t))/(1-G(x)).
inline Fn1 phi_op(const ServiceDistribution& d, Fn1 f, double t)
{
    return [d, f = std::move(f), t](double x) {
        double r = d.survival_ratio(x, t);
        return r == 0.0 ? 0.0 : f(x + t) * r;
    };
}

// Ψ_t f(x,s) = f(x+(t-s)^+)(1-G(x+(t-s)^+))/(1-G(x)).
inline Fn2 psi_op(const ServiceDistribution& d, Fn1 f, double t)
{
    return [d, f = std::move(f), t](double x, double s) {
        double u = std::max(t - s, 0.0);
        double r = d.survival_ratio(x, u);
        return r == 0.0 ? 0.0 : f(x + u) * r;
    };
}

inline double psi_h(const ServiceDistribution& d, double x, double t)
{
    double s = d.survival(x);
    if (!(s > 0.0)) return 0.0;
    if (t <= x) return s / d.survival(x - t);
    return s;
}

}  // namespace qedlab
