#include "bm/acceptance.hpp"

#include "bm/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <sstream>

namespace bm {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr auto C1 = InsuranceClass::C1;
constexpr auto C2 = InsuranceClass::C2;

SolveControl check_control(const RunSpec& spec) {
    SolveControl c = spec.control;
    c.mode = SolveControl::Mode::optimize;
    c.paper_mode = false;
    c.barrier_field = nullptr;
    if (c.stop.kind == StopRule::Kind::fixed_iterations) c.stop = StopRule::sup_change(1e-6);
    return c;
}

SolveControl fixed_control(const RunSpec& spec, double b) {
    SolveControl c = check_control(spec);
    c.mode = SolveControl::Mode::fixed_barrier;
    c.constant_barrier = b;
    return c;
}

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class F>
void for_each_node(const Grid& g, F&& f) {
    for (auto i : {C1, C2})
        for (int kt = 0; kt <= g.nt(); ++kt)
            for (int ks = 0; ks <= g.ks_max(i, kt); ++ks) f(i, kt, ks);
}

/// Largest decrease along x, over the whole axis, at every node.
double worst_x_decrease(const ValueField& V) {
    const Grid& g = *V.grid();
    double worst = 0.0;
    for_each_node(g, [&](InsuranceClass i, int kt, int ks) {
        const auto row = V.row(i, kt, ks);
        for (std::size_t j = 1; j < row.size(); ++j) worst = std::max(worst, row[j - 1] - row[j]);
    });
    return worst;
}

struct Decrease {
    double raw = 0.0;
    /// Decrease beyond a rounding allowance of 8 ulps of the compared values.
    double beyond_rounding = 0.0;
};

/// Largest decrease along the clock s.
Decrease worst_s_decrease(const ValueField& V) {
    const Grid& g = *V.grid();
    constexpr double ulp = std::numeric_limits<double>::epsilon();
    Decrease worst;
    for_each_node(g, [&](InsuranceClass i, int kt, int ks) {
        if (ks == 0) return;
        const auto lo = V.row(i, kt, ks - 1);
        const auto hi = V.row(i, kt, ks);
        for (std::size_t j = 0; j < hi.size(); ++j) {
            const double d = lo[j] - hi[j];
            worst.raw = std::max(worst.raw, d);
            worst.beyond_rounding =
                std::max(worst.beyond_rounding, d - 8.0 * ulp * std::max(std::abs(lo[j]), std::abs(hi[j])));
        }
    });
    return worst;
}

/// Largest amount by which V2(t, s, x) exceeds V1(t, 0, x).
double worst_class_violation(const ValueField& V) {
    const Grid& g = *V.grid();
    double worst = -kInf;
    for (int kt = 0; kt <= g.nt(); ++kt) {
        const auto v1 = V.row(C1, kt, 0);
        for (int ks = 0; ks <= g.ks_max(C2, kt); ++ks) {
            const auto v2 = V.row(C2, kt, ks);
            for (std::size_t j = 0; j < v1.size(); ++j) worst = std::max(worst, v2[j] - v1[j]);
        }
    }
    return worst;
}

double max_increase(const SolveResult& r) {
    double m = 0.0;
    for (double v : r.max_increase_history) m = std::max(m, v);
    return m;
}

bool nondecreasing(const Series& s, std::size_t col, double slack) {
    for (std::size_t k = 1; k < s.rows.size(); ++k)
        if (s.rows[k][col] < s.rows[k - 1][col] - slack) return false;
    return true;
}

}  // namespace

// ---------------------------------------------------------------------------

bool AcceptanceReport::all_passed() const {
    return !criteria.empty() && std::all_of(criteria.begin(), criteria.end(), [](const auto& c) { return c.passed; });
}

bool AcceptanceReport::validation_failed() const {
    return std::any_of(criteria.begin(), criteria.end(), [](const auto& c) { return c.id == 0 && !c.passed; });
}

json AcceptanceReport::to_json() const {
    json list = json::array();
    for (const auto& c : criteria) {
        json metrics = json::object();
        for (const auto& [k, v] : c.metrics) metrics[k] = std::isfinite(v) ? json(v) : json(nullptr);
        list.push_back({{"id", c.id},
                        {"name", c.name},
                        {"passed", c.passed},
                        {"detail", c.detail},
                        {"metrics", metrics},
                        {"seconds", c.seconds}});
    }
    return {{"schema_version", 1}, {"all_passed", all_passed()}, {"criteria", list}};
}

std::string format_line(const CriterionResult& r) {
    char head[96];
    std::snprintf(head, sizeof head, "criterion %2d %s %s (%.1f s): ", r.id, r.passed ? "PASS" : "FAIL",
                  r.name.c_str(), r.seconds);
    return head + r.detail;
}

std::string AcceptanceReport::summary() const {
    std::string out;
    for (const auto& c : criteria) out += format_line(c) + "\n";
    out += all_passed() ? "all criteria passed\n" : "some criteria FAILED\n";
    return out;
}

AcceptanceReport run_acceptance(const RunSpec& spec, const AcceptanceOptions& opts) {
    AcceptanceReport report;
    const ModelParams& P = spec.model;
    const McSpec& mc = spec.mc;

    auto record = [&](CriterionResult r) {
        if (opts.on_result) opts.on_result(r);
        report.criteria.push_back(std::move(r));
    };

    GridPtr grid;
    try {
        grid = Grid::build(P, spec.grid);
        check_control(spec).validate();
    } catch (const std::exception& e) {
        const std::string msg = e.what();
        const bool cfl = msg.find("CFL") != std::string::npos;
        record({0, cfl ? "cfl_condition" : "config_validation", false, msg, {}, 0.0});
        return report;
    }
    const Grid& g = *grid;
    const double hx = g.hx();

    std::optional<SolveResult> opt;
    auto optimized = [&]() -> const SolveResult& {
        if (!opt) opt = iterate(P, grid, check_control(spec));
        return *opt;
    };
    std::vector<std::pair<double, SolveResult>> fixed_solves;

    auto run = [&](int id, const char* name, auto&& body) {
        CriterionResult r;
        r.id = id;
        r.name = name;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            body(r);
        } catch (const std::exception& e) {
            r.passed = false;
            r.detail = std::string("error: ") + e.what();
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        record(std::move(r));
    };

    run(1, "terminal_identity", [&](CriterionResult& r) {
        const ValueField& V = optimized().value;
        double err = 0.0;
        for (auto i : {C1, C2})
            for (int ks = 0; ks <= g.ks_max(i, g.nt()); ++ks)
                for (int j = 0; j < g.nx(); ++j)
                    err = std::max(err, std::abs(V.at(i, g.nt(), ks, j) - P.utility(g.x(j))));
        r.metrics["max_error"] = err;
        r.passed = err <= 1e-12;
        r.detail = "max |V(i,T,s,x) - h(x)| = " + fmt(err) + " (tolerance 1e-12)";
    });

    run(2, "boundary_identity", [&](CriterionResult& r) {
        const ValueField& V = optimized().value;
        std::size_t mismatches = 0, checked = 0;
        for (int kt = g.ns2(); kt <= g.nt(); ++kt) {
            const auto v1 = V.row(C1, kt, 0);
            const auto v2 = V.row(C2, kt, g.ns2());
            for (std::size_t j = 0; j < v1.size(); ++j, ++checked) mismatches += v1[j] != v2[j];
        }
        r.metrics["mismatches"] = static_cast<double>(mismatches);
        r.metrics["nodes_checked"] = static_cast<double>(checked);
        r.passed = mismatches == 0;
        r.detail = std::to_string(mismatches) + " of " + std::to_string(checked) +
                   " shared nodes differ between V2(t,S,x) and V1(t,0,x)";
    });

    run(3, "base_case_oracles", [&](CriterionResult& r) {
        SolveControl zero = fixed_control(spec, kInf);
        zero.stop = StopRule::fixed(0);
        const SolveResult base = iterate(P, grid, zero);
        double v0_err = 0.0;
        for_each_node(g, [&](InsuranceClass i, int kt, int ks) {
            const auto row = base.value.row(i, kt, ks);
            for (int j = 0; j < g.nx(); ++j)
                v0_err = std::max(v0_err, std::abs(row[j] - v0(P, i, g.t(kt), g.s(ks), g.x(j))));
        });

        ModelParams still = P;
        still.intensity_lambda = 0.0;
        ValueField transported(grid);
        sweep_characteristic(base.value, transported, still, fixed_control(spec, kInf));
        double adv_err = 0.0;
        for_each_node(g, [&](InsuranceClass i, int kt, int ks) {
            const auto row = transported.row(i, kt, ks);
            const double shift = flow_drift(still, i, g.s(ks), P.horizon_T - g.t(kt));
            for (int j = g.j_lo(); j <= g.j_hi(); ++j)
                adv_err = std::max(adv_err, std::abs(row[j] - P.utility(g.x(j) + shift)));
        });
        const double adv_tol = 2.0 * hx * g.utility_lipschitz(P);
        r.metrics["v0_max_error"] = v0_err;
        r.metrics["advection_max_error"] = adv_err;
        r.metrics["advection_tolerance"] = adv_tol;
        r.passed = v0_err <= 1e-10 && adv_err <= adv_tol;
        r.detail = "v0 max error " + fmt(v0_err) + " (tolerance 1e-10); advection sup error " + fmt(adv_err) +
                   " (tolerance 2 h_x L_h = " + fmt(adv_tol) + ")";
    });

    run(4, "solver_vs_monte_carlo", [&](CriterionResult& r) {
        double worst_margin = -kInf;
        std::string worst;
        int failures = 0;
        for (double b : {0.0, 1.0, kInf}) {
            fixed_solves.emplace_back(b, iterate(P, grid, fixed_control(spec, b)));
            const SolveResult& sol = fixed_solves.back().second;
            for (auto i : {C1, C2}) {
                for (double x : {0.0, 2.5, 5.0}) {
                    const double v = interp_value(sol.value, P, i, 0.0, 0.0, x);
                    const MCResult m =
                        estimate_value(P, PolicySpec::constant(b), {i, 0.0, 0.0, x}, mc.n_paths, mc.seed, mc.threads);
                    const double margin = std::abs(v - m.mean) - (3.0 * m.std_error + 0.02);
                    if (margin > 0) ++failures;
                    if (margin > worst_margin) {
                        worst_margin = margin;
                        worst = "b=" + fmt(b) + " i=" + std::to_string(to_int(i)) + " x=" + fmt(x) + ": V=" + fmt(v) +
                                " MC=" + fmt(m.mean) + " +- " + fmt(m.std_error);
                    }
                }
            }
        }
        r.metrics["worst_margin"] = worst_margin;
        r.metrics["failures"] = failures;
        r.passed = failures == 0;
        r.detail = std::to_string(failures) + " of 18 points outside 3 se + 0.02; tightest " + worst +
                   " (margin " + fmt(worst_margin) + ")";
    });

    run(5, "extracted_policy_optimality", [&](CriterionResult& r) {
        const auto barrier = std::make_shared<BarrierField>(*optimized().barrier);
        std::vector<PolicySpec> pols{PolicySpec::from_grid(barrier)};
        for (double b : {0.0, 0.25, 0.5, 1.0, kInf}) pols.push_back(PolicySpec::constant(b));
        double worst_margin = -kInf;
        std::string worst;
        for (auto i : {C1, C2}) {
            const auto rows = compare_policies(P, pols, {i, 0.0, 0.0, 2.5}, mc.n_paths, mc.seed, mc.threads);
            const auto grid_row = std::find_if(rows.begin(), rows.end(), [](const auto& x) { return x.input_index == 0; });
            for (const auto& row : rows) {
                if (row.input_index == 0) continue;
                const double margin = row.mean - 3.0 * row.paired_std_error - grid_row->mean;
                if (margin > worst_margin) {
                    worst_margin = margin;
                    worst = "i=" + std::to_string(to_int(i)) + " grid " + fmt(grid_row->mean) + " vs " + row.label +
                            " " + fmt(row.mean) + " (paired se " + fmt(row.paired_std_error) + ")";
                }
            }
        }
        r.metrics["worst_margin"] = worst_margin;
        r.passed = worst_margin <= 0.0;
        r.detail = "tightest comparison " + worst + ", margin " + fmt(worst_margin);
    });

    run(6, "dpp_residual", [&](CriterionResult& r) {
        const DppResult d = dpp_residual(P, optimized(), {C1, 0.0, 0.0, 2.5}, mc.n_paths, mc.seed, 0.5, mc.threads);
        const double tol = 3.0 * d.std_error + 0.02;
        r.metrics["residual"] = d.residual;
        r.metrics["stderr"] = d.std_error;
        r.metrics["tolerance"] = tol;
        r.passed = d.residual <= tol;
        r.detail = "residual " + fmt(d.residual) + " (V=" + fmt(d.value_at_init) + ", MC " + fmt(d.mc_mean) +
                   " +- " + fmt(d.std_error) + "), tolerance " + fmt(tol);
    });

    run(7, "monotonicity", [&](CriterionResult& r) {
        const ValueField& V = optimized().value;
        const double dx = worst_x_decrease(V);
        const Decrease ds = worst_s_decrease(V);
        const double dc = worst_class_violation(V);
        double inc = max_increase(optimized());
        for (const auto& [b, sol] : fixed_solves) inc = std::max(inc, max_increase(sol));
        r.metrics["max_x_decrease"] = dx;
        r.metrics["max_s_decrease"] = ds.raw;
        r.metrics["max_s_decrease_beyond_rounding"] = ds.beyond_rounding;
        r.metrics["max_class_violation"] = dc;
        r.metrics["max_iterate_increase"] = inc;
        r.passed = dx <= 1e-10 && ds.beyond_rounding <= 1e-10 && dc <= 1e-9 && inc <= 1e-12;
        r.detail = "x decrease " + fmt(dx) + ", s decrease " + fmt(ds.raw) + " (beyond 8 ulp rounding " +
                   fmt(ds.beyond_rounding) + "), V2 - V1(t,0) " + fmt(dc) +
                   ", iterate increase " + fmt(inc);
    });

    run(8, "lipschitz_bound", [&](CriterionResult& r) {
        const ValueField& V = optimized().value;
        double lip = 0.0;
        for_each_node(g, [&](InsuranceClass i, int kt, int ks) {
            const auto row = V.row(i, kt, ks);
            for (int j = g.j_lo(); j < g.j_hi(); ++j) lip = std::max(lip, std::abs(row[j + 1] - row[j]) / hx);
        });
        const double bound = g.utility_lipschitz(P) + 0.05;
        r.metrics["measured"] = lip;
        r.metrics["bound"] = bound;
        r.passed = lip <= bound;
        r.detail = "measured x-Lipschitz constant " + fmt(lip) + ", bound L_h + 0.05 = " + fmt(bound);
    });

    std::optional<FigureRun> figs;
    const fs::path dir_a = opts.scratch_dir / "figures_a";
    const fs::path dir_b = opts.scratch_dir / "figures_b";

    run(9, "figure_reproduction", [&](CriterionResult& r) {
        figs = run_figures(spec, dir_a);
        const auto& s = figs->series;
        const Series& f1 = s[0];
        const Series& f2 = s[1];
        const Series& f3 = s[2];
        const Series& f4a = s[3];
        const Series& f4b = s[4];

        bool tail_monotone = true;
        double prev = kInf;
        for (const auto& row : f4a.rows) {
            if (row[0] < 0.75 * P.horizon_T - 1e-12) continue;
            if (row[1] > prev + 1e-12) tail_monotone = false;
            prev = row[1];
        }
        const double b_last = f4a.rows[f4a.rows.size() - 2][1];
        const double b16 = f4b.rows.front()[1];

        bool curves = nondecreasing(f1, 1, 1e-10) && nondecreasing(f1, 2, 1e-10);
        for (const auto& row : f1.rows) curves = curves && row[1] >= row[2] - 1e-9;
        for (const auto& row : f2.rows) curves = curves && row[1] >= row[2] - 1e-9;
        curves = curves && nondecreasing(f3, 1, 1e-10) && nondecreasing(f3, 2, 1e-10);
        for (const auto& row : f3.rows) curves = curves && f3.rows.front()[1] >= row[2] - 1e-9;

        r.metrics["b1_last_interior"] = b_last;
        r.metrics["b2_at_1_6"] = b16;
        r.metrics["iterations"] = figs->solve.iterations_used;
        r.passed = tail_monotone && std::abs(b_last) <= 2 * hx && std::abs(b16 - 0.15) <= 2 * hx && curves;
        r.detail = std::string("fig4a final quarter ") + (tail_monotone ? "nonincreasing" : "NOT nonincreasing") +
                   ", b1 at t=T-h " + fmt(b_last) + "; fig4b b2(1.6,1.6,5) = " + fmt(b16) +
                   " (target 0.15 +- " + fmt(2 * hx) + "); fig1-3 curves " + (curves ? "monotone" : "NOT monotone");
    });

    run(10, "determinism", [&](CriterionResult& r) {
        if (!figs) figs = run_figures(spec, dir_a);
        run_figures(spec, dir_b);
        int differing = 0;
        for (const auto& s : figs->series)
            if (read_file(dir_a / s.file) != read_file(dir_b / s.file)) ++differing;

        const auto barrier = std::make_shared<BarrierField>(*figs->solve.barrier);
        const PolicySpec pol = PolicySpec::from_grid(barrier);
        const InitialState init{C1, 0.0, 0.0, 2.5};
        const MCResult one = estimate_value(P, pol, init, mc.n_paths, mc.seed, 1);
        const MCResult many = estimate_value(P, pol, init, mc.n_paths, mc.seed, opts.determinism_threads);
        const bool mc_same = one.mean == many.mean && one.std_error == many.std_error && one.n_paths == many.n_paths;

        r.metrics["differing_csv_files"] = differing;
        r.passed = differing == 0 && mc_same;
        r.detail = std::to_string(differing) + " of " + std::to_string(figs->series.size()) +
                   " figure CSVs differ between two runs; MC at 1 and " + std::to_string(opts.determinism_threads) +
                   " threads " + (mc_same ? "identical" : "DIFFERENT") + " (" + fmt(one.mean) + ")";
    });

    return report;
}

}  // namespace bm
