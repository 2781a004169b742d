#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <queue>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "arrivals.hpp"
#include "dists.hpp"
#include "rng.hpp"

namespace qedlab {

enum class EventKind : std::uint8_t { Arrival, ServiceStart, Departure };

inline const char* to_string(EventKind k)
{
    switch (k) {
        case EventKind::Arrival: return "arrival";
        case EventKind::ServiceStart: return "service_start";
        case EventKind::Departure: return "departure";
    }
    return "?";
}

// Counters are the values right after the event.
struct Event {
    double time;
    EventKind kind;
    std::uint64_t id;
    double age;
    std::int64_t E, D, K, X, B;
};

// One customer's stay in service: enters at `start` (negative for customers
// already in service at time 0, so the age is t - start), leaves at `depart`,
// possibly beyond the horizon.
struct ServiceRecord {
    std::uint64_t id;
    double start;
    double depart;
    bool initial;
};

enum class ResidualSampling { ConditionalOnAge, Fresh };

struct InitialCondition {
    std::int64_t x0 = 0;
    std::vector<double> ages;
    ResidualSampling residual = ResidualSampling::ConditionalOnAge;
};

struct SimConfig {
    int N = 1;
    ArrivalSpec arrival;
    ServiceDistribution service;
    double T = 1.0;
    InitialCondition initial;
    std::uint64_t seed = 0;
    std::uint64_t replicate = 0;
    std::vector<double> snapshot_times;
    std::size_t max_events = 100'000'000;
};

struct Snapshot {
    double time;
    std::vector<double> ages;
};

struct PathRecord {
    int N = 0;
    double T = 0.0;
    std::int64_t x0 = 0;
    std::int64_t B0 = 0;
    ServiceDistribution service;
    std::vector<Event> events;
    std::vector<ServiceRecord> services;
    std::vector<Snapshot> snapshots;

    struct Counters {
        std::int64_t E = 0, D = 0, K = 0, X = 0, B = 0;
    };

    // Right-continuous counters at time t.
    Counters counters_at(double t) const
    {
        auto it = std::upper_bound(events.begin(), events.end(), t,
                                   [](double v, const Event& e) { return v < e.time; });
        if (it == events.begin()) return {0, 0, 0, x0, B0};
        const Event& e = *std::prev(it);
        return {e.E, e.D, e.K, e.X, e.B};
    }

    // Sorted ages of the customers in service at time t.
    std::vector<double> ages_at(double t) const
    {
        std::vector<double> a;
        for (const auto& r : services)
            if (r.start <= t && t < r.depart) a.push_back(t - r.start);
        std::sort(a.begin(), a.end());
        return a;
    }
};

class SimError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline void validate(const SimConfig& cfg)
{
    if (cfg.N < 1) throw std::invalid_argument("N must be positive");
    if (!(cfg.T > 0.0)) throw std::invalid_argument("horizon T must be positive");
    cfg.arrival.validate(cfg.N, cfg.T);
    const auto& ic = cfg.initial;
    if (ic.x0 < 0) throw std::invalid_argument("x0 must be nonnegative");
    if (static_cast<std::int64_t>(ic.ages.size()) != std::min<std::int64_t>(ic.x0, cfg.N))
        throw std::invalid_argument("initial ages must number x0 ∧ N");
    double L = cfg.service.support_end();
    for (double a : ic.ages)
        if (!(a >= 0.0) || !(a < L) || !(cfg.service.survival(a) > 0.0))
            throw std::invalid_argument("initial ages must lie in [0, L)");
}

inline PathRecord simulate(const SimConfig& cfg)
{
    validate(cfg);
    const auto& G = cfg.service;
    const int N = cfg.N;
    Engine arr_eng = make_engine(cfg.seed, cfg.replicate, 0);
    Engine svc_eng = make_engine(cfg.seed, cfg.replicate, 1);
    ArrivalStream arrivals(cfg.arrival, N, cfg.T, std::move(arr_eng));

    PathRecord path;
    path.N = N;
    path.T = cfg.T;
    path.x0 = cfg.initial.x0;
    path.B0 = std::min<std::int64_t>(cfg.initial.x0, N);
    path.service = G;

    using Pending = std::pair<double, int>;  // (departure time, server)
    std::priority_queue<Pending, std::vector<Pending>, std::greater<>> departures;
    std::priority_queue<int, std::vector<int>, std::greater<>> idle;
    std::vector<std::size_t> on_server(static_cast<std::size_t>(N), 0);
    std::deque<std::uint64_t> waiting;

    std::int64_t E = 0, D = 0, K = 0, X = cfg.initial.x0, B = path.B0;
    std::uint64_t next_id = 0;

    for (int s = 0; s < N; ++s) {
        if (s < path.B0) {
            double a = cfg.initial.ages[static_cast<std::size_t>(s)];
            double v = cfg.initial.residual == ResidualSampling::ConditionalOnAge ? G.sample_given_age(a, svc_eng)
                                                                                  : a + G.sample(svc_eng);
            path.services.push_back({next_id++, -a, v - a, true});
            on_server[static_cast<std::size_t>(s)] = path.services.size() - 1;
            departures.emplace(v - a, s);
        } else {
            idle.push(s);
        }
    }
    for (std::int64_t q = path.B0; q < cfg.initial.x0; ++q) waiting.push_back(next_id++);

    auto log = [&](double t, EventKind k, std::uint64_t id, double age) {
        if (path.events.size() >= cfg.max_events) throw SimError("event budget exceeded");
        path.events.push_back({t, k, id, age, E, D, K, X, B});
    };
    auto start_service = [&](double t, std::uint64_t id) {
        int s = idle.top();
        idle.pop();
        double v = G.sample(svc_eng);
        path.services.push_back({id, t, t + v, false});
        on_server[static_cast<std::size_t>(s)] = path.services.size() - 1;
        departures.emplace(t + v, s);
        ++K;
        ++B;
        log(t, EventKind::ServiceStart, id, 0.0);
    };

    double next_arrival = arrivals.next();
    for (;;) {
        double next_departure = departures.empty() ? kInf : departures.top().first;
        double t = std::min(next_arrival, next_departure);
        if (!(t <= cfg.T)) break;
        if (next_departure <= next_arrival) {
            int s = departures.top().second;
            departures.pop();
            const ServiceRecord& r = path.services[on_server[static_cast<std::size_t>(s)]];
            ++D;
            --X;
            --B;
            log(t, EventKind::Departure, r.id, t - r.start);
            idle.push(s);
            if (!waiting.empty()) {
                std::uint64_t id = waiting.front();
                waiting.pop_front();
                start_service(t, id);
            }
        } else {
            std::uint64_t id = next_id++;
            ++E;
            ++X;
            log(t, EventKind::Arrival, id, 0.0);
            if (!idle.empty())
                start_service(t, id);
            else
                waiting.push_back(id);
            next_arrival = arrivals.next();
        }
    }

    for (double ts : cfg.snapshot_times)
        if (ts >= 0.0 && ts <= cfg.T) path.snapshots.push_back({ts, path.ages_at(ts)});
    return path;
}

inline double eval_age_functional(const std::vector<double>& ages, const Fn1& f)
{
    double acc = 0.0;
    for (double a : ages) acc += f(a);
    return acc;
}

struct InvariantReport {
    std::int64_t worst_dn = 0;         // D - (X(0) - X + E)
    std::int64_t worst_kn = 0;         // K - (B - B0 + D)
    std::int64_t worst_nonidling = 0;  // (N - B) - (N - X)^+
    std::int64_t worst_eq2 = 0;        // K - (X∧N - X(0)∧N + D)
    std::int64_t max_jump_D = 0;
    bool departures_distinct = true;
    bool ok() const
    {
        return worst_dn == 0 && worst_kn == 0 && worst_nonidling == 0 && worst_eq2 == 0 && max_jump_D <= 1 &&
               departures_distinct;
    }
};

inline InvariantReport check_invariants(const PathRecord& p)
{
    InvariantReport r;
    auto upd = [](std::int64_t& w, std::int64_t v) {
        if (std::llabs(v) > std::llabs(w)) w = v;
    };
    std::int64_t prevD = 0;
    double last_dep = -kInf;
    const std::int64_t N = p.N;
    auto check = [&](std::int64_t E, std::int64_t D, std::int64_t K, std::int64_t X, std::int64_t B) {
        upd(r.worst_dn, D - (p.x0 - X + E));
        upd(r.worst_kn, K - (B - p.B0 + D));
        upd(r.worst_nonidling, (N - B) - std::max<std::int64_t>(N - X, 0));
        upd(r.worst_eq2, K - (std::min(X, N) - std::min(p.x0, N) + D));
    };
    check(0, 0, 0, p.x0, p.B0);
    // Counters are checked at event times, i.e. after all events sharing a time.
    for (std::size_t i = 0; i < p.events.size(); ++i) {
        const Event& e = p.events[i];
        if (e.kind == EventKind::Departure) {
            if (!(e.time > last_dep)) r.departures_distinct = false;
            last_dep = e.time;
        }
        bool last_at_time = i + 1 == p.events.size() || p.events[i + 1].time != e.time;
        if (!last_at_time) continue;
        check(e.E, e.D, e.K, e.X, e.B);
        r.max_jump_D = std::max(r.max_jump_D, e.D - prevD);
        prevD = e.D;
    }
    return r;
}

// Calls fn(u, len) for the pieces of [lo, hi) cut at the grid origin + k·dt.
template <class Fn>
void for_each_piece(double lo, double hi, double origin, double dt, Fn&& fn)
{
    if (!(hi > lo)) return;
    double k = std::floor((lo - origin) / dt);
    double u = lo;
    while (u < hi) {
        double edge = origin + (k + 1.0) * dt;
        if (edge <= u) {
            k += 1.0;
            continue;
        }
        double v = std::min(edge, hi);
        fn(u, v - u);
        u = v;
        k += 1.0;
    }
}

// Upper age limit for quadrature: ages within dt of a finite support end are
// excluded (the hazard blows up there).
inline double quadrature_age_cap(const ServiceDistribution& d, double dt)
{
    double L = d.support_end();
    return std::isfinite(L) ? L - dt : kInf;
}

// Left-point quadrature of ∫_0^t <φ(·,s) h, ν_s> ds on pieces cut at the grid
// k·dt and at each customer's own entry and exit.
inline double compensator(const PathRecord& p, const Fn2& phi, double t, double dt)
{
    const auto& d = p.service;
    const double cap = quadrature_age_cap(d, dt);
    double acc = 0.0;
    for (const auto& r : p.services) {
        double lo = std::max(r.start, 0.0), hi = std::min(r.depart, t);
        for_each_piece(lo, hi, 0.0, dt, [&](double u, double len) {
            double a = u - r.start;
            if (a >= cap) return;
            double h = d.hazard(a);
            if (!std::isfinite(h)) throw SimError("unbounded hazard on an occupied age");
            acc += len * phi(a, u) * h;
        });
    }
    return acc;
}

// Compensator on the whole grid t_n = n·dt, n = 0..round(T/dt).
inline std::vector<double> compensator_path(const PathRecord& p, const Fn2& phi, double dt, double T)
{
    const auto n = static_cast<std::size_t>(std::llround(T / dt));
    std::vector<double> A(n + 1, 0.0);
    const auto& d = p.service;
    const double cap = quadrature_age_cap(d, dt);
    for (const auto& r : p.services) {
        double lo = std::max(r.start, 0.0), hi = std::min(r.depart, static_cast<double>(n) * dt);
        for_each_piece(lo, hi, 0.0, dt, [&](double u, double len) {
            double a = u - r.start;
            if (a >= cap) return;
            auto cell = static_cast<std::size_t>(std::floor(u / dt + 1e-9));
            if (cell >= n) cell = n - 1;
            double h = d.hazard(a);
            if (!std::isfinite(h)) throw SimError("unbounded hazard on an occupied age");
            A[cell + 1] += len * phi(a, u) * h;
        });
    }
    for (std::size_t k = 1; k <= n; ++k) A[k] += A[k - 1];
    return A;
}

// Q_φ(t): sum over departures in [0,t] of φ(age at departure, departure time).
inline double departure_sum(const PathRecord& p, const Fn2& phi, double t)
{
    double acc = 0.0;
    for (const auto& e : p.events)
        if (e.kind == EventKind::Departure && e.time <= t) acc += phi(e.age, e.time);
    return acc;
}

inline double martingale(const PathRecord& p, const Fn2& phi, double t, double dt)
{
    return departure_sum(p, phi, t) - compensator(p, phi, t, dt);
}

struct ResidualPath {
    std::vector<double> t;         // offsets from the base time
    std::vector<double> residual;  // signed discrepancy at each offset
    double max_abs() const
    {
        double m = 0.0;
        for (double r : residual) m = std::max(m, std::abs(r));
        return m;
    }
};

// Checks ν_{s+t}(f) = S_t^{ν_s}(f) + (Θ_s𝒦)_t(f) − (Θ_sℋ)_t(f) for t on the
// grid k·dt with s + t ≤ horizon. With s = 0 this is the pre-limit
// representation of ⟨f,ν_t⟩.
inline ResidualPath shift_consistency_check(const PathRecord& p, double s, const Fn1& f, double dt, double horizon)
{
    const auto& d = p.service;
    const double cap = quadrature_age_cap(d, dt);
    const auto n = static_cast<std::size_t>(std::floor((horizon - s) / dt + 1e-9));
    const std::size_t R = p.services.size();
    std::vector<double> I(R, 0.0);  // running quadrature of ∫ h(a)/(1-G(a)) du on [s, s+t)
    ResidualPath out;
    auto fs = [&](double a) {
        double sv = d.survival(a);
        return sv > 0.0 ? f(a) * sv : 0.0;
    };
    for (std::size_t k = 0; k <= n; ++k) {
        const double tk = static_cast<double>(k) * dt;
        const double tau = s + tk;
        if (k > 0) {
            const double a0 = s + static_cast<double>(k - 1) * dt;
            for (std::size_t j = 0; j < R; ++j) {
                const auto& r = p.services[j];
                double lo = std::max({r.start, s, a0}), hi = std::min(r.depart, tau);
                for_each_piece(lo, hi, s, dt, [&](double u, double len) {
                    double a = u - r.start;
                    if (a >= cap) return;
                    double sv = d.survival(a);
                    if (sv > 0.0) I[j] += len * d.hazard(a) / sv;
                });
            }
        }
        double direct = 0.0, S = 0.0, Kt = 0.0, Q = 0.0, A = 0.0;
        for (std::size_t j = 0; j < R; ++j) {
            const auto& r = p.services[j];
            if (r.start > tau) continue;
            const double age = tau - r.start;
            if (tau < r.depart) direct += f(age);
            if (r.depart <= s) continue;
            const double w = fs(age);
            if (r.start <= s) {
                double ss = d.survival(s - r.start);
                if (ss > 0.0) S += w / ss;
            } else {
                Kt += w;
            }
            if (r.depart <= tau) {
                double sd = d.survival(r.depart - r.start);
                if (sd > 0.0) Q += w / sd;
            }
            A += w * I[j];
        }
        out.t.push_back(tk);
        out.residual.push_back(direct - (S + Kt - (Q - A)));
    }
    return out;
}

inline ResidualPath representation_residual(const PathRecord& p, const Fn1& f, double dt, double horizon)
{
    return shift_consistency_check(p, 0.0, f, dt, horizon);
}

// Sampler for ages drawn from the equilibrium density 1-G (mean-one law).
class EquilibriumAgeSampler {
  public:
    explicit EquilibriumAgeSampler(const ServiceDistribution& d) : d_(d)
    {
        exponential_ = d.name() == "exponential" && std::abs(d.scale() - 1.0) < 1e-15;
        if (exponential_) return;
        double end = effective_support(d, 1e-13);
        x_.push_back(0.0);
        cdf_.push_back(0.0);
        double x = 0.0, acc = 0.0;
        const double fine = std::min(1e-3, end / 4096.0);
        while (x < end) {
            double step = x < 20.0 ? fine : std::max(fine, x * 1e-3);
            double nx = std::min(end, x + step);
            acc += 0.5 * (d.survival(x) + d.survival(nx)) * (nx - x);
            x = nx;
            x_.push_back(x);
            cdf_.push_back(acc);
        }
        total_ = acc;
    }
    double operator()(Engine& eng) const
    {
        double u = uniform_open(eng);
        if (exponential_) return -std::log(u);
        double target = u * total_;
        auto it = std::lower_bound(cdf_.begin(), cdf_.end(), target);
        if (it == cdf_.begin()) return 0.0;
        auto i = static_cast<std::size_t>(std::distance(cdf_.begin(), it));
        if (i >= cdf_.size()) return x_.back();
        double w = (target - cdf_[i - 1]) / (cdf_[i] - cdf_[i - 1]);
        double a = x_[i - 1] + w * (x_[i] - x_[i - 1]);
        double L = d_.support_end();
        return std::isfinite(L) ? std::min(a, std::nextafter(L, 0.0)) : a;
    }

  private:
    ServiceDistribution d_;
    bool exponential_ = false;
    std::vector<double> x_, cdf_;
    double total_ = 1.0;
};

// Initial condition with x0 customers and i.i.d. equilibrium ages for the
// ones in service.
inline InitialCondition equilibrium_initial(const ServiceDistribution& d, std::int64_t x0, int N, std::uint64_t seed,
                                            std::uint64_t replicate)
{
    InitialCondition ic;
    ic.x0 = x0;
    Engine eng = make_engine(seed, replicate, 2);
    EquilibriumAgeSampler sampler(d);
    const auto n = std::min<std::int64_t>(x0, N);
    for (std::int64_t i = 0; i < n; ++i) ic.ages.push_back(sampler(eng));
    return ic;
}

}  // namespace qedlab
