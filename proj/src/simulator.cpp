#include "bm/simulator.hpp"

#include "bm/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace bm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_initial_state(const ModelParams& p, const InitialState& init) {
    const bool ok = init.t >= 0.0 && init.t <= p.horizon_T && init.s >= 0.0 && init.s <= init.t &&
                    (init.cls == InsuranceClass::C1 || init.s <= p.class2_reset_S) && std::isfinite(init.x);
    if (!ok) throw std::domain_error("initial state outside the class domain");
}

/// Neumaier-compensated sum in index order.
double compensated_sum(std::span<const double> v) {
    double sum = 0.0, comp = 0.0;
    for (double x : v) {
        const double t = sum + x;
        comp += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
        sum = t;
    }
    return sum + comp;
}

struct Moments {
    double mean = 0.0;
    double std_error = 0.0;
};

Moments moments(std::span<const double> v) {
    const double n = static_cast<double>(v.size());
    Moments m;
    m.mean = compensated_sum(v) / n;
    std::vector<double> sq(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) sq[k] = (v[k] - m.mean) * (v[k] - m.mean);
    const double var = compensated_sum(sq) / (n - 1.0);
    m.std_error = std::sqrt(var / n);
    return m;
}

struct State {
    InsuranceClass cls;
    double t, s, x;
};

/// Advances the process from `init` until `t_stop` (<= T), or until just
/// after the first event when `first_event_stops` is set.
State simulate(const ModelParams& p, const PolicySpec& policy, const InitialState& init, PathStream& rng,
               double t_stop, bool first_event_stops, std::vector<PathEvent>* log) {
    State st{init.cls, init.t, init.s, init.x};
    const double lambda = p.intensity_lambda;
    auto draw_wait = [&] { return lambda > 0.0 ? -std::log1p(-rng.uniform()) / lambda : kInf; };

    double next_claim = st.t + draw_wait();
    while (true) {
        const double boundary = st.cls == InsuranceClass::C2 ? st.t + (p.class2_reset_S - st.s) : kInf;
        const double t_next = std::min(next_claim, boundary);
        if (t_next > t_stop) {
            const double dt = t_stop - st.t;
            st.x += drift_integral(p, st.cls, st.s, dt);
            st.s += dt;
            st.t = t_stop;
            return st;
        }
        if (boundary <= next_claim) {
            st.x += drift_integral(p, InsuranceClass::C2, st.s, p.class2_reset_S - st.s);
            st.t = boundary;
            st.cls = InsuranceClass::C1;
            st.s = 0.0;
            if (log) log->push_back({PathEvent::Kind::class_upgrade, st.t, 0.0, false});
            if (first_event_stops) return st;
            continue;
        }
        const double dt = next_claim - st.t;
        st.x += drift_integral(p, st.cls, st.s, dt);
        st.s += dt;
        st.t = next_claim;
        const double y = p.claim_law.quantile(rng.uniform());
        const bool report = y > policy.barrier(st.cls, st.t, st.s, st.x);
        if (report) {
            st.x -= retention(y, p.deductible(st.cls));
            st.cls = InsuranceClass::C2;
            st.s = 0.0;
        } else {
            st.x -= y;
        }
        if (log) log->push_back({PathEvent::Kind::claim, st.t, y, report});
        if (first_event_stops) return st;
        next_claim = st.t + draw_wait();
    }
}

std::vector<double> terminal_utilities(const ModelParams& p, const PolicySpec& policy, const InitialState& init,
                                       std::uint64_t n_paths, std::uint64_t seed, unsigned threads) {
    std::vector<double> values(n_paths);
    parallel_chunks(n_paths, threads, [&](unsigned, std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) {
            PathStream rng(seed, k);
            const State st = simulate(p, policy, init, rng, p.horizon_T, false, nullptr);
            values[k] = p.utility(st.x);
        }
    });
    return values;
}

}  // namespace

// ---------------------------------------------------------------------------

PathStream::PathStream(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                      0x9e3779b9u};
    engine_.seed(seq);
}

double PathStream::uniform() { return std::generate_canonical<double, 53>(engine_); }

PolicySpec PolicySpec::constant(double b) {
    if (!(b >= 0.0)) throw std::invalid_argument("constant barrier must be >= 0");
    PolicySpec p;
    p.kind_ = Kind::constant;
    p.constant_ = b;
    return p;
}

PolicySpec PolicySpec::from_grid(std::shared_ptr<const BarrierField> field) {
    if (!field || !field->grid()) throw std::invalid_argument("grid policy needs a barrier field");
    PolicySpec p;
    p.kind_ = Kind::grid;
    p.field_ = std::move(field);
    return p;
}

std::string PolicySpec::label() const {
    if (kind_ == Kind::grid) return "grid";
    if (std::isinf(constant_)) return "const:inf";
    std::ostringstream os;
    os << "const:" << constant_;
    return os.str();
}

double PolicySpec::barrier(InsuranceClass i, double t, double s, double x) const {
    if (kind_ == Kind::constant) return constant_;
    const Grid& g = *field_->grid();
    const int kt = std::clamp(static_cast<int>(std::lround(t / g.h())), 0, g.nt());
    const int ks = std::clamp(static_cast<int>(std::lround(s / g.h())), 0, g.ks_max(i, kt));
    const auto row = field_->row(i, kt, ks);
    const auto& cand = g.candidates();

    const double pos = (x - g.x_bottom()) / g.hx();
    if (!(pos > 0.0)) return cand[row.front()];
    if (pos >= g.nx() - 1) return cand[row.back()];
    const int j = static_cast<int>(pos);
    const double w = pos - j;
    const double b0 = cand[row[j]];
    const double b1 = cand[row[j + 1]];
    if (std::isinf(b0) || std::isinf(b1)) return w < 0.5 ? b0 : b1;
    const double h_y = g.stride() * g.hx();
    const double c = std::round(((1.0 - w) * b0 + w * b1) / h_y);
    return cand[static_cast<std::size_t>(std::clamp(c, 0.0, static_cast<double>(g.infinite_candidate() - 1)))];
}

PathRecord sample_path(const ModelParams& params, const PolicySpec& policy, const InitialState& init,
                       std::uint64_t seed, std::uint64_t path_index) {
    require_initial_state(params, init);
    PathRecord rec;
    rec.init = init;
    PathStream rng(seed, path_index);
    const State st = simulate(params, policy, init, rng, params.horizon_T, false, &rec.events);
    rec.terminal_wealth = st.x;
    rec.terminal_utility = params.utility(st.x);
    return rec;
}

double replay_wealth(const ModelParams& p, const PathRecord& path) {
    InsuranceClass cls = path.init.cls;
    double t = path.init.t, s = path.init.s, x = path.init.x;
    for (const auto& ev : path.events) {
        const double dt = ev.time - t;
        x += drift_integral(p, cls, s, dt);
        s += dt;
        t = ev.time;
        if (ev.kind == PathEvent::Kind::class_upgrade) {
            cls = InsuranceClass::C1;
            s = 0.0;
        } else if (ev.reported) {
            x -= retention(ev.size, p.deductible(cls));
            cls = InsuranceClass::C2;
            s = 0.0;
        } else {
            x -= ev.size;
        }
    }
    return x + drift_integral(p, cls, s, p.horizon_T - t);
}

MCResult estimate_value(const ModelParams& params, const PolicySpec& policy, const InitialState& init,
                        std::uint64_t n_paths, std::uint64_t seed, unsigned threads) {
    if (n_paths < 2) throw std::invalid_argument("estimate_value needs n_paths >= 2");
    require_initial_state(params, init);
    const auto values = terminal_utilities(params, policy, init, n_paths, seed, threads);
    const Moments m = moments(values);
    return {m.mean, m.std_error, n_paths, seed};
}

DppResult dpp_residual(const ModelParams& params, const SolveResult& solve, const InitialState& init,
                       std::uint64_t n_paths, std::uint64_t seed, double horizon, unsigned threads) {
    if (!solve.barrier) throw std::invalid_argument("dpp_residual needs a solve with an extracted barrier");
    const Grid& g = *solve.value.grid();
    if (std::abs(g.t(g.nt()) - params.horizon_T) > 1e-9 || std::abs(g.s(g.ns2()) - params.class2_reset_S) > 1e-9)
        throw std::invalid_argument("dpp_residual: solve grid does not match the model horizon");
    if (n_paths < 2) throw std::invalid_argument("dpp_residual needs n_paths >= 2");
    if (!(horizon >= 0.0)) throw std::invalid_argument("dpp_residual: horizon must be >= 0");
    require_initial_state(params, init);

    DppResult out;
    out.value_at_init = interp_value(solve.value, params, init.cls, init.t, init.s, init.x);
    const double t_stop = std::min(init.t + horizon, params.horizon_T);
    if (t_stop <= init.t) {
        out.mc_mean = out.value_at_init;
        return out;
    }

    const PolicySpec policy = PolicySpec::from_grid(std::make_shared<BarrierField>(*solve.barrier));
    std::vector<double> values(n_paths);
    parallel_chunks(n_paths, threads, [&](unsigned, std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) {
            PathStream rng(seed, k);
            const State st = simulate(params, policy, init, rng, t_stop, true, nullptr);
            values[k] = interp_value(solve.value, params, st.cls, st.t, st.s, st.x);
        }
    });
    const Moments m = moments(values);
    out.mc_mean = m.mean;
    out.std_error = m.std_error;
    out.residual = std::abs(out.value_at_init - m.mean);
    return out;
}

std::vector<PolicyRow> compare_policies(const ModelParams& params, std::span<const PolicySpec> policies,
                                        const InitialState& init, std::uint64_t n_paths, std::uint64_t seed,
                                        unsigned threads) {
    if (policies.empty()) throw std::invalid_argument("compare_policies needs at least one policy");
    if (n_paths < 2) throw std::invalid_argument("compare_policies needs n_paths >= 2");
    require_initial_state(params, init);

    std::vector<std::vector<double>> values;
    values.reserve(policies.size());
    for (const auto& pol : policies) values.push_back(terminal_utilities(params, pol, init, n_paths, seed, threads));

    std::vector<PolicyRow> rows;
    std::vector<double> diff(n_paths);
    for (std::size_t p = 0; p < policies.size(); ++p) {
        const Moments m = moments(values[p]);
        for (std::size_t k = 0; k < n_paths; ++k) diff[k] = values[p][k] - values[0][k];
        rows.push_back({policies[p].label(), p, m.mean, m.std_error, moments(diff).std_error});
    }
    std::stable_sort(rows.begin(), rows.end(), [](const PolicyRow& a, const PolicyRow& b) { return a.mean > b.mean; });
    return rows;
}

}  // namespace bm
