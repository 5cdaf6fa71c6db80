#include "bm/solver.hpp"

#include "bm/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

namespace bm {

void SolveControl::validate() const {
    if (stop.kind == StopRule::Kind::fixed_iterations && stop.n < 0)
        throw ValidationError("control.stop.n must be >= 0");
    if (stop.kind == StopRule::Kind::sup_change_below && !(stop.tol > 0.0))
        throw ValidationError("control.stop.tol must be > 0");
    if (max_iterations < 1) throw ValidationError("control.max_iterations must be >= 1");
    if (mode == Mode::fixed_barrier && !barrier_field && !(constant_barrier >= 0.0))
        throw ValidationError("control.barrier must be >= 0");
}

JumpQuadrature::JumpQuadrature(const ModelParams& params, const Grid& grid) {
    const int K = grid.knots();
    const double hx = grid.hx();
    const ClaimLaw& law = params.claim_law;
    lower_.resize(K);
    upper_.resize(K);
    survival_.resize(K + 1);
    for (int k = 0; k <= K; ++k) survival_[k] = law.survival(k * hx);
    for (int l = 0; l < K; ++l) {
        const double a = l * hx;
        const double b = (l + 1) * hx;
        const double mass = survival_[l] - survival_[l + 1];
        const double first = law.partial_moment(a, b);
        // int (y - a)/h dF  and  int (b - y)/h dF over the cell
        upper_[l] = std::max(0.0, (first - a * mass) / hx);
        lower_[l] = std::max(0.0, (b * mass - first) / hx);
    }
}

namespace {

// ---------------------------------------------------------------------------
// Row kernel: the expected post-claim value G_b at every wealth node of one
// (t, s) node, for all barrier candidates at once via running prefix sums.

/// A larger barrier replaces the incumbent only if it beats it by more than rounding noise.
bool strictly_better(double v, double best) {
    if (!std::isfinite(best)) return v > best;
    return v > best + 64.0 * std::numeric_limits<double>::epsilon() * std::abs(best);
}

struct Selection {
    enum class Kind { optimize, constant, per_node };
    Kind kind = Kind::optimize;
    int constant = 0;
    std::span<const std::uint16_t> targets;
};

struct RowScratch {
    std::vector<double> keep, rep, rep_full, qm;
};

/// acc[j] += lower[l] f(x_j - y_l) + upper[l] f(x_j - y_{l+1}), f clamped below the grid.
void add_cell(std::span<const double> f, int l, double lo, double up, std::vector<double>& acc) {
    const int nx = static_cast<int>(f.size());
    const int split = std::min(l + 1, nx);
    const double flat = (lo + up) * f[0];
    for (int j = 0; j < split; ++j) acc[j] += flat;
    const double* fa = f.data() - l;
    const double* fb = f.data() - l - 1;
    double* out = acc.data();
    for (int j = split; j < nx; ++j) out[j] += lo * fa[j] + up * fb[j];
}

void evaluate_row(const Grid& g, const JumpQuadrature& quad, std::span<const double> p,
                  std::span<const double> q, int M, const Selection& sel, RowScratch& sc, std::span<double> out,
                  std::span<std::uint16_t> arg_out) {
    const int nx = g.nx();
    const int K = g.knots();
    const int stride = g.stride();
    const int inf_c = g.infinite_candidate();
    const auto lo = quad.lower();
    const auto up = quad.upper();
    const auto surv = quad.survival();

    sc.keep.assign(nx, 0.0);
    sc.qm.resize(nx);
    for (int j = 0; j < nx; ++j) sc.qm[j] = q[std::max(j - M, 0)];
    if (M > 0) {
        sc.rep.assign(nx, 0.0);
        sc.rep_full.assign(nx, 0.0);
        for (int l = 0; l < M; ++l) add_cell(q, l, lo[l], up[l], sc.rep_full);
    }

    const bool optimize = sel.kind == Selection::Kind::optimize;
    if (optimize) std::fill(out.begin(), out.end(), -std::numeric_limits<double>::infinity());

    int last_knot = K;
    if (sel.kind == Selection::Kind::constant) {
        last_knot = sel.constant == inf_c ? K : sel.constant * stride;
    } else if (sel.kind == Selection::Kind::per_node) {
        last_knot = 0;
        for (auto c : sel.targets) last_knot = std::max(last_knot, c == inf_c ? K : c * stride);
    }

    auto wanted = [&](int c, int j) {
        return sel.kind == Selection::Kind::constant ? c == sel.constant : sel.targets[j] == c;
    };

    auto candidate = [&](int c, int k) {
        const double sk = surv[std::max(k, M)];
        for (int j = 0; j < nx; ++j) {
            double v = sc.keep[j] + sc.qm[j] * sk;
            if (k < M) v += sc.rep_full[j] - sc.rep[j];
            if (optimize) {
                if (strictly_better(v, out[j])) {
                    out[j] = v;
                    arg_out[j] = static_cast<std::uint16_t>(c);
                }
            } else if (wanted(c, j)) {
                out[j] = v;
            }
        }
    };

    candidate(0, 0);
    for (int l = 0; l < last_knot; ++l) {
        add_cell(p, l, lo[l], up[l], sc.keep);
        if (l < M) add_cell(q, l, lo[l], up[l], sc.rep);
        const int k = l + 1;
        if (k % stride == 0) candidate(k / stride, k);
    }
    if (last_knot == K) {
        // Never report: claims beyond y_max fall on the flat extension.
        const double sK = surv[K];
        for (int j = 0; j < nx; ++j) {
            const double v = sc.keep[j] + p[std::max(j - K, 0)] * sK;
            if (optimize) {
                if (strictly_better(v, out[j])) {
                    out[j] = v;
                    arg_out[j] = static_cast<std::uint16_t>(inf_c);
                }
            } else if (wanted(inf_c, j)) {
                out[j] = v;
            }
        }
    }
}

struct RowTask {
    InsuranceClass cls;
    int ks;
};

std::vector<RowTask> layer_rows(const Grid& g, int kt) {
    std::vector<RowTask> rows;
    for (int ks = 0; ks <= kt; ++ks) rows.push_back({InsuranceClass::C1, ks});
    for (int ks = 0; ks <= std::min(kt, g.ns2()); ++ks) {
        if (ks == g.ns2()) continue;  // boundary node, set by coupling
        rows.push_back({InsuranceClass::C2, ks});
    }
    return rows;
}

/// One time layer worth of wealth rows, indexed by (class, ks).
class LayerBuffer {
public:
    explicit LayerBuffer(const Grid& g)
        : nx_(static_cast<std::size_t>(g.nx())),
          c1_(static_cast<std::size_t>(g.nt() + 1) * nx_),
          c2_(static_cast<std::size_t>(g.ns2() + 1) * nx_) {}

    std::span<double> row(InsuranceClass i, int ks) {
        auto& v = i == InsuranceClass::C1 ? c1_ : c2_;
        return {v.data() + static_cast<std::size_t>(ks) * nx_, nx_};
    }

private:
    std::size_t nx_;
    std::vector<double> c1_, c2_;
};

void require_same_grid(const ValueField& a, const ValueField& b) {
    if (!a.grid() || !b.grid()) throw std::invalid_argument("value field without grid");
    if (a.grid() != b.grid()) {
        const Grid& ga = *a.grid();
        const Grid& gb = *b.grid();
        if (ga.nt() != gb.nt() || ga.ns2() != gb.ns2() || ga.nx() != gb.nx() || ga.h() != gb.h() ||
            ga.hx() != gb.hx())
            throw std::invalid_argument("value fields live on different grids");
    }
}

}  // namespace

// ---------------------------------------------------------------------------

double jump_operator(const ValueField& prev, const ModelParams& params, InsuranceClass i, int kt, int ks,
                     double x, double b) {
    const Grid& g = *prev.grid();
    if (!g.valid(i, kt, ks)) throw std::out_of_range("jump_operator: node outside the domain");
    const int c = g.candidate_index(b);
    const JumpQuadrature quad(params, g);
    const double hx = g.hx();
    const int K = g.knots();
    const int M = g.deductible_knots(i);
    const bool never = c == g.infinite_candidate();
    const int kb = never ? K : c * g.stride();
    const auto lo = quad.lower();
    const auto up = quad.upper();
    const auto surv = quad.survival();

    auto keep_at = [&](double y) { return interp_x(prev, i, kt, ks, x - y); };
    auto report_at = [&](double y) { return interp_x(prev, InsuranceClass::C2, kt, 0, x - y); };

    double total = 0.0;
    for (int l = 0; l < kb; ++l) total += lo[l] * keep_at(l * hx) + up[l] * keep_at((l + 1) * hx);
    if (never) {
        total += keep_at(K * hx) * surv[K];
    } else {
        for (int l = kb; l < M; ++l) total += lo[l] * report_at(l * hx) + up[l] * report_at((l + 1) * hx);
        total += report_at(M * hx) * surv[std::max(kb, M)];
    }
    return params.intensity_lambda * total;
}

std::pair<double, double> optimal_jump_operator(const ValueField& prev, const ModelParams& params,
                                                InsuranceClass i, int kt, int ks, double x,
                                                std::span<const double> candidates) {
    if (candidates.empty()) throw std::invalid_argument("optimal_jump_operator: empty candidate set");
    std::vector<double> sorted(candidates.begin(), candidates.end());
    std::sort(sorted.begin(), sorted.end());
    double best = -std::numeric_limits<double>::infinity();
    double arg = sorted.front();
    for (double b : sorted) {
        const double v = jump_operator(prev, params, i, kt, ks, x, b);
        if (strictly_better(v, best)) {
            best = v;
            arg = b;
        }
    }
    return {best, arg};
}

ValueField initial_iterate(const ModelParams& params, const GridPtr& grid) {
    const Grid& g = *grid;
    ValueField v(grid);
    for (auto i : {InsuranceClass::C1, InsuranceClass::C2}) {
        for (int kt = 0; kt <= g.nt(); ++kt) {
            for (int ks = 0; ks <= g.ks_max(i, kt); ++ks) {
                auto r = v.row(i, kt, ks);
                for (int j = 0; j < g.nx(); ++j) r[j] = v0(params, i, g.t(kt), g.s(ks), g.x(j));
            }
        }
    }
    return v;
}

void sweep_characteristic(const ValueField& prev_iterate, ValueField& current, const ModelParams& params,
                          const SolveControl& control, BarrierField* barrier_out) {
    require_same_grid(prev_iterate, current);
    control.validate();
    const GridPtr& gp = current.grid();
    const Grid& g = *gp;
    const int nx = g.nx();
    const double h = g.h();
    const double decay = std::exp(-params.intensity_lambda * h);
    const double mix = -std::expm1(-params.intensity_lambda * h);
    const bool optimize = control.mode == SolveControl::Mode::optimize;
    const JumpQuadrature quad(params, g);

    Selection base;
    if (optimize) {
        base.kind = Selection::Kind::optimize;
    } else if (control.barrier_field) {
        if (control.barrier_field->grid()->nx() != nx || control.barrier_field->grid()->nt() != g.nt())
            throw std::invalid_argument("barrier field lives on a different grid");
        base.kind = Selection::Kind::per_node;
    } else {
        base.kind = Selection::Kind::constant;
        base.constant = g.candidate_index(control.constant_barrier);
    }
    BarrierField* record = optimize ? barrier_out : nullptr;

    std::vector<double> terminal(nx);
    for (int j = 0; j < nx; ++j) terminal[j] = params.utility(g.x(j));

    const unsigned threads = control.threads == 0 ? default_threads() : control.threads;
    std::vector<RowScratch> scratch(threads);
    std::vector<std::vector<std::uint16_t>> args(threads, std::vector<std::uint16_t>(nx, 0));

    // Source weights over one step, exact for a source linear in the elapsed
    // time u: int_0^h lambda e^{-lambda u} (1 - u/h, u/h) du.
    const double lh = params.intensity_lambda * h;
    const double w_far = lh > 0.0 ? (1.0 - decay * (1.0 + lh)) / lh : 0.0;
    const double w_near = mix - w_far;
    const bool with_jumps = mix > 0.0;

    // Expected post-claim values G on the layer being computed and on the one
    // after it, indexed by (class, ks).
    LayerBuffer g_cur(g), g_next(g);

    auto compute_jump = [&](unsigned w, InsuranceClass cls, int kt, int ks) {
        Selection sel = base;
        if (sel.kind == Selection::Kind::per_node) sel.targets = control.barrier_field->row(cls, kt, ks);
        evaluate_row(g, quad, prev_iterate.row(cls, kt, ks), prev_iterate.row(InsuranceClass::C2, kt, 0),
                     g.deductible_knots(cls), sel, scratch[w], g_cur.row(cls, ks), args[w]);
        if (record) {
            auto dst = record->row(cls, kt, ks);
            std::copy(args[w].begin(), args[w].end(), dst.begin());
        }
    };

    for (int kt = g.nt(); kt >= 0; --kt) {
        const auto rows = layer_rows(g, kt);
        parallel_chunks(rows.size(), threads, [&](unsigned w, std::size_t begin, std::size_t end) {
            for (std::size_t r = begin; r < end; ++r) {
                const auto [cls, ks] = rows[r];
                auto out = current.row(cls, kt, ks);
                if (with_jumps) compute_jump(w, cls, kt, ks);
                if (kt == g.nt()) {
                    std::copy(terminal.begin(), terminal.end(), out.begin());
                    continue;
                }
                const auto next = std::as_const(current).row(cls, kt + 1, ks + 1);
                const double nu = drift_integral(params, cls, g.s(ks), h) / g.hx();
                const double* wv = next.data();
                if (with_jumps) {
                    const double* gn = g_next.row(cls, ks + 1).data();
                    const double* gc = g_cur.row(cls, ks).data();
                    for (int j = 0; j + 1 < nx; ++j) {
                        out[j] = decay * ((1.0 - nu) * wv[j] + nu * wv[j + 1]) + w_near * gc[j] +
                                 w_far * ((1.0 - nu) * gn[j] + nu * gn[j + 1]);
                    }
                    out[nx - 1] = decay * wv[nx - 1] + w_near * gc[nx - 1] + w_far * gn[nx - 1];
                } else {
                    for (int j = 0; j + 1 < nx; ++j) out[j] = decay * ((1.0 - nu) * wv[j] + nu * wv[j + 1]);
                    out[nx - 1] = decay * wv[nx - 1];
                }
                for (int j = 0; j < nx; ++j) {
                    if (!std::isfinite(out[j])) {
                        std::ostringstream os;
                        os << "non-finite value at class " << to_int(cls) << ", t = " << g.t(kt)
                           << ", s = " << g.s(ks) << ", x = " << g.x(j);
                        throw NumericalError(os.str());
                    }
                }
            }
        });
        apply_boundary(current, kt);
        if (kt >= g.ns2()) {
            // At clock S the process is in class 1 with clock 0.
            if (with_jumps) {
                const auto src = g_cur.row(InsuranceClass::C1, 0);
                std::copy(src.begin(), src.end(), g_cur.row(InsuranceClass::C2, g.ns2()).begin());
            }
            if (record) {
                const auto src = std::as_const(*record).row(InsuranceClass::C1, kt, 0);
                auto dst = record->row(InsuranceClass::C2, kt, g.ns2());
                std::copy(src.begin(), src.end(), dst.begin());
            }
        }
        std::swap(g_cur, g_next);
    }
}

SolveResult iterate(const ModelParams& params, const GridPtr& grid, const SolveControl& control) {
    control.validate();
    const StopRule stop = control.effective_stop();
    const Grid& g = *grid;

    SolveResult result;
    result.value = initial_iterate(params, grid);
    if (stop.kind == StopRule::Kind::fixed_iterations && stop.n == 0) return result;

    const bool optimize = control.mode == SolveControl::Mode::optimize;
    if (optimize) result.barrier.emplace(grid);

    for (int it = 1;; ++it) {
        ValueField next(grid);
        sweep_characteristic(result.value, next, params, control, optimize ? &*result.barrier : nullptr);

        double sup_change = 0.0;
        double max_increase = -std::numeric_limits<double>::infinity();
        for (auto i : {InsuranceClass::C1, InsuranceClass::C2}) {
            const auto& a = next.data(i);
            const auto& b = result.value.data(i);
            const std::size_t nx = static_cast<std::size_t>(g.nx());
            for (std::size_t r = 0; r < g.n_nodes(i); ++r) {
                for (std::size_t j = 0; j < nx; ++j) {
                    const double d = a[r * nx + j] - b[r * nx + j];
                    max_increase = std::max(max_increase, d);
                    if (static_cast<int>(j) >= g.j_lo() && static_cast<int>(j) <= g.j_hi())
                        sup_change = std::max(sup_change, std::abs(d));
                }
            }
        }
        result.value = std::move(next);
        result.iterations_used = it;
        result.sup_change_history.push_back(sup_change);
        result.max_increase_history.push_back(max_increase);

        if (stop.kind == StopRule::Kind::fixed_iterations) {
            if (it >= stop.n) break;
        } else {
            if (sup_change < stop.tol) break;
            if (it >= control.max_iterations) {
                std::ostringstream os;
                os << "no convergence after " << it << " iterations: sup change " << sup_change
                   << " >= tol " << stop.tol;
                throw NumericalError(os.str());
            }
        }
    }
    return result;
}

}  // namespace bm
