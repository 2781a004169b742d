#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "rng.hpp"

namespace qedlab {

// Piecewise-linear function of time given by knots; constant outside.
struct RateFunction {
    std::vector<double> t{0.0};
    std::vector<double> v{0.0};

    static RateFunction constant(double c) { return RateFunction{{0.0}, {c}}; }
    static RateFunction linear(double a, double b, double T)
    {
        return RateFunction{{0.0, T}, {a, a + b * T}};
    }

    bool is_constant() const
    {
        return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
    }

    double operator()(double s) const
    {
        if (s <= t.front()) return v.front();
        if (s >= t.back()) return v.back();
        auto it = std::upper_bound(t.begin(), t.end(), s);
        auto i = static_cast<std::size_t>(std::distance(t.begin(), it)) - 1;
        double w = (s - t[i]) / (t[i + 1] - t[i]);
        return v[i] + w * (v[i + 1] - v[i]);
    }

    // Exact integral over [a,b]: the function is linear between the points
    // collected here.
    double integral(double a, double b) const
    {
        if (!(b > a)) return 0.0;
        std::vector<double> pts{a};
        for (double k : t)
            if (k > a && k < b) pts.push_back(k);
        pts.push_back(b);
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < pts.size(); ++i)
            acc += 0.5 * ((*this)(pts[i]) + (*this)(pts[i + 1])) * (pts[i + 1] - pts[i]);
        return acc;
    }

    double max_on(double a, double b) const
    {
        double m = std::max((*this)(a), (*this)(b));
        for (double k : t)
            if (k > a && k < b) m = std::max(m, (*this)(k));
        return m;
    }
    double min_on(double a, double b) const
    {
        double m = std::min((*this)(a), (*this)(b));
        for (double k : t)
            if (k > a && k < b) m = std::min(m, (*this)(k));
        return m;
    }

    void validate() const
    {
        if (t.empty() || t.size() != v.size()) throw std::invalid_argument("rate function: knots and values differ in length");
        for (std::size_t i = 1; i < t.size(); ++i)
            if (!(t[i] > t[i - 1])) throw std::invalid_argument("rate function: knots must increase");
    }
};

enum class ArrivalKind { Renewal, InhomPoisson };

struct ArrivalSpec {
    ArrivalKind kind = ArrivalKind::Renewal;
    RateFunction lambda_bar = RateFunction::constant(1.0);
    RateFunction beta = RateFunction::constant(0.0);
    double sigma2 = 1.0;

    double rate_N(double s, double N) const { return lambda_bar(s) * N - beta(s) * std::sqrt(N); }

    // σ(s) driving the limit input Ê.
    double sigma(double s) const
    {
        return kind == ArrivalKind::Renewal ? std::sqrt(sigma2) : std::sqrt(std::max(lambda_bar(s), 0.0));
    }

    void validate(double N, double T) const
    {
        lambda_bar.validate();
        beta.validate();
        if (kind == ArrivalKind::Renewal) {
            if (!lambda_bar.is_constant() || !beta.is_constant())
                throw std::invalid_argument("renewal arrivals need constant lambda_bar and beta");
            if (!(sigma2 > 0.0)) throw std::invalid_argument("renewal arrivals need sigma2 > 0");
            if (rate_N(0.0, N) < 0.0) throw std::invalid_argument("lambda^N = lambda_bar N - beta sqrt(N) must be positive");
            if (lambda_bar(0.0) < 0.0) throw std::invalid_argument("lambda_bar must be nonnegative");
        } else {
            std::vector<double> pts{0.0, T};
            pts.insert(pts.end(), lambda_bar.t.begin(), lambda_bar.t.end());
            pts.insert(pts.end(), beta.t.begin(), beta.t.end());
            for (double s : pts)
                if (s >= 0.0 && s <= T && rate_N(s, N) < 0.0)
                    throw std::invalid_argument("lambda^N(t) must be nonnegative on [0,T]");
        }
    }
};

// Successive arrival epochs for one replicate.
class ArrivalStream {
  public:
    ArrivalStream(const ArrivalSpec& spec, double N, double T, Engine eng)
        : spec_(spec), N_(N), T_(T), eng_(std::move(eng))
    {
        if (spec_.kind == ArrivalKind::Renewal) {
            rate_ = spec_.rate_N(0.0, N_);
            // Gamma inter-arrivals with squared coefficient of variation σ²/λ̄
            // have mean 1/λ^N and variance (σ²/λ̄)/(λ^N)².
            double scv = spec_.lambda_bar(0.0) > 0.0 ? spec_.sigma2 / spec_.lambda_bar(0.0) : 1.0;
            gamma_ = std::gamma_distribution<double>(1.0 / scv, scv / std::max(rate_, 1e-300));
            exponential_ = scv == 1.0;
        } else {
            std::vector<double> pts{0.0, T};
            pts.insert(pts.end(), spec_.lambda_bar.t.begin(), spec_.lambda_bar.t.end());
            pts.insert(pts.end(), spec_.beta.t.begin(), spec_.beta.t.end());
            for (double s : pts)
                if (s >= 0.0 && s <= T) rate_ = std::max(rate_, spec_.rate_N(s, N_));
        }
    }

    // Next arrival time, or +inf when none occurs before the horizon.
    double next()
    {
        if (!(rate_ > 0.0)) return std::numeric_limits<double>::infinity();
        if (spec_.kind == ArrivalKind::Renewal) {
            now_ += exponential_ ? -std::log(uniform_open(eng_)) / rate_ : gamma_(eng_);
            return now_;
        }
        for (;;) {
            now_ += -std::log(uniform_open(eng_)) / rate_;
            if (now_ > T_) return std::numeric_limits<double>::infinity();
            if (uniform_open(eng_) * rate_ <= spec_.rate_N(now_, N_)) return now_;
        }
    }

  private:
    ArrivalSpec spec_;
    double N_, T_;
    Engine eng_;
    double rate_ = 0.0;
    double now_ = 0.0;
    bool exponential_ = false;
    std::gamma_distribution<double> gamma_;
};

}  // namespace qedlab
