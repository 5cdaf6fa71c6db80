#include "bm/cli.hpp"

#include "bm/acceptance.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace bm {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr const char* kVersion = "0.1.0";

/// A JSON object section that remembers which keys were read, so that
/// leftovers can be reported as unknown.
class Section {
public:
    Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
        if (!doc_.is_object()) throw ValidationError(path_ + " must be an object");
    }

    bool has(const std::string& key) const { return doc_.contains(key); }

    const json& required(const std::string& key) {
        if (!doc_.contains(key)) throw ValidationError("missing required key " + name(key));
        used_.insert(key);
        return doc_.at(key);
    }

    const json* optional(const std::string& key) {
        if (!doc_.contains(key)) return nullptr;
        used_.insert(key);
        return &doc_.at(key);
    }

    double number(const std::string& key) { return as_number(required(key), key); }

    double number_or(const std::string& key, double fallback) {
        const json* v = optional(key);
        return v ? as_number(*v, key) : fallback;
    }

    std::optional<double> maybe_number(const std::string& key) {
        const json* v = optional(key);
        if (!v) return std::nullopt;
        return as_number(*v, key);
    }

    std::uint64_t count(const std::string& key) { return as_count(required(key), key); }

    std::uint64_t count_or(const std::string& key, std::uint64_t fallback) {
        const json* v = optional(key);
        return v ? as_count(*v, key) : fallback;
    }

    std::string text(const std::string& key) {
        const json& v = required(key);
        if (!v.is_string()) throw ValidationError(name(key) + " must be a string");
        return v.get<std::string>();
    }

    /// A number, or the string "inf".
    double extended(const json& v, const std::string& key) const {
        if (v.is_string() && v.get<std::string>() == "inf") return kInf;
        return as_number(v, key);
    }

    Section child(const std::string& key) { return Section(required(key), name(key)); }

    std::string name(const std::string& key) const { return path_ + "." + key; }

    void finish() const {
        for (auto it = doc_.begin(); it != doc_.end(); ++it)
            if (!used_.count(it.key())) throw ValidationError("unknown key " + name(it.key()));
    }

private:
    double as_number(const json& v, const std::string& key) const {
        if (!v.is_number()) throw ValidationError(name(key) + " must be a number");
        return v.get<double>();
    }
    std::uint64_t as_count(const json& v, const std::string& key) const {
        if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0 && !v.is_number_unsigned()))
            throw ValidationError(name(key) + " must be a non-negative integer");
        return v.get<std::uint64_t>();
    }

    const json& doc_;
    std::string path_;
    std::set<std::string> used_;
};

PremiumSpec parse_premium(Section&& sec) {
    const std::string kind = sec.text("kind");
    PremiumSpec ps;
    if (kind == "affine") {
        ps = PremiumSpec::affine(sec.number("intercept"), sec.number("slope"));
    } else if (kind == "constant") {
        ps = PremiumSpec::constant(sec.number("rate"));
    } else {
        throw ValidationError(sec.name("kind") + " must be \"affine\" or \"constant\"");
    }
    sec.finish();
    return ps;
}

json premium_json(const PremiumSpec& ps) {
    if (ps.kind == PremiumSpec::Kind::affine)
        return {{"kind", "affine"}, {"intercept", ps.intercept}, {"slope", ps.slope}};
    return {{"kind", "constant"}, {"rate", ps.intercept}};
}

json extended_json(double v) { return std::isinf(v) ? json("inf") : json(v); }

std::uint64_t env_count(const char* var) {
    const char* raw = std::getenv(var);
    std::string s(raw);
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (s.empty() || used != s.size() || s.front() == '-')
        throw ValidationError(std::string(var) + " must be a non-negative integer");
    return v;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << text;
    if (!out) throw ValidationError("failed writing " + path.string());
}

std::string csv_text(const Series& s) {
    std::string out;
    for (std::size_t c = 0; c < s.header.size(); ++c) {
        if (c) out += ',';
        out += s.header[c];
    }
    out += '\n';
    for (const auto& row : s.rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (!std::isfinite(row[c])) throw NumericalError("non-finite value in " + s.file);
            if (c) out += ',';
            out += format_number(row[c]);
        }
        out += '\n';
    }
    return out;
}

/// Removes the listed files unless release() was called.
class OutputGuard {
public:
    void track(fs::path p) { files_.push_back(std::move(p)); }
    void release() { files_.clear(); }
    ~OutputGuard() {
        std::error_code ec;
        for (const auto& f : files_) fs::remove(f, ec);
    }

private:
    std::vector<fs::path> files_;
};

int wealth_index(const Grid& g, double x) {
    const int j = static_cast<int>(std::lround((x - g.x_bottom()) / g.hx()));
    if (j < g.j_lo() || j > g.j_hi() || std::abs(g.x(j) - x) > 1e-9)
        throw ValidationError("figures need x = " + format_number(x) + " on the wealth window grid");
    return j;
}

int time_index(const Grid& g, double t) {
    const int k = static_cast<int>(std::lround(t / g.h()));
    if (std::abs(g.t(k) - t) > 1e-9) throw ValidationError("figures need t = " + format_number(t) + " on the time grid");
    return k;
}

double finite_barrier(const Grid& g, double b) { return std::isinf(b) ? g.y_max() : b; }

}  // namespace

// ---------------------------------------------------------------------------

RunSpec parse_config(const json& doc) {
    Section root(doc, "config");
    RunSpec spec;

    {
        Section m = root.child("model");
        ModelParams& p = spec.model;
        p.horizon_T = m.number("T");
        p.class2_reset_S = m.number("S");
        p.intensity_lambda = m.number("lambda");
        const double mu = m.number("mu");
        if (!(mu > 0.0) || !std::isfinite(mu)) throw ValidationError("model.mu must be finite and > 0");
        p.claim_law = ClaimLaw::exponential(mu);
        p.deductible_m1 = m.number("m1");
        p.deductible_m2 = m.number("m2");
        p.premium1 = parse_premium(m.child("pi1"));
        p.premium2 = parse_premium(m.child("pi2"));
        p.income_c = m.number("c");
        p.utility.gamma = m.number("gamma");
        p.utility.floor = m.number("floor");
        m.finish();
        p.validate();
    }

    if (root.has("grid")) {
        Section g = root.child("grid");
        GridSpec& gs = spec.grid;
        gs.h_t = g.number_or("h_t", gs.h_t);
        gs.h_x = g.number_or("h_x", gs.h_x);
        gs.x_lo = g.number_or("x_lo", gs.x_lo);
        gs.x_hi = g.number_or("x_hi", gs.x_hi);
        gs.tail_eps = g.number_or("tail_eps", gs.tail_eps);
        gs.y_max = g.maybe_number("y_max");
        gs.h_y = g.maybe_number("h_y");
        gs.x_pad_hi = g.maybe_number("x_pad_hi");
        gs.x_pad_lo = g.maybe_number("x_pad_lo");
        g.finish();
    }

    if (root.has("control")) {
        Section c = root.child("control");
        SolveControl& ctl = spec.control;
        if (const json* mode = c.optional("mode")) {
            if (*mode == "optimize") ctl.mode = SolveControl::Mode::optimize;
            else if (*mode == "fixed") ctl.mode = SolveControl::Mode::fixed_barrier;
            else throw ValidationError("control.mode must be \"optimize\" or \"fixed\"");
        }
        if (const json* b = c.optional("barrier")) ctl.constant_barrier = c.extended(*b, "barrier");
        if (c.has("stop")) {
            Section s = c.child("stop");
            const std::string kind = s.text("kind");
            if (kind == "sup_change") {
                ctl.stop = StopRule::sup_change(s.number("tol"));
            } else if (kind == "fixed") {
                ctl.stop = StopRule::fixed(static_cast<int>(s.count("n")));
            } else {
                throw ValidationError("control.stop.kind must be \"sup_change\" or \"fixed\"");
            }
            s.finish();
        }
        if (const json* pm = c.optional("paper_mode")) {
            if (!pm->is_boolean()) throw ValidationError("control.paper_mode must be a boolean");
            ctl.paper_mode = pm->get<bool>();
        }
        ctl.max_iterations = static_cast<int>(c.count_or("max_iterations", ctl.max_iterations));
        ctl.threads = static_cast<unsigned>(c.count_or("threads", ctl.threads));
        c.finish();
        ctl.validate();
    }

    {
        Section mc = root.child("mc");
        spec.mc.n_paths = mc.count("n_paths");
        spec.mc.seed = mc.count("seed");
        spec.mc.threads = static_cast<unsigned>(mc.count_or("threads", 1));
        mc.finish();
        if (spec.mc.n_paths < 2) throw ValidationError("mc.n_paths must be >= 2");
        if (spec.mc.threads < 1) throw ValidationError("mc.threads must be >= 1");
    }

    if (root.has("outputs")) {
        Section o = root.child("outputs");
        if (const json* dir = o.optional("dir")) {
            if (!dir->is_string()) throw ValidationError("outputs.dir must be a string");
            spec.output_dir = dir->get<std::string>();
        }
        if (const json* arts = o.optional("artifacts")) {
            if (!arts->is_array()) throw ValidationError("outputs.artifacts must be an array");
            for (const auto& a : *arts) {
                if (!a.is_string() || (a != "value_field" && a != "barrier_field"))
                    throw ValidationError("outputs.artifacts entries must be \"value_field\" or \"barrier_field\"");
                spec.artifacts.push_back(a.get<std::string>());
            }
        }
        o.finish();
    }

    root.finish();
    return spec;
}

RunSpec load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(doc);
}

json serialize(const RunSpec& spec) {
    const ModelParams& p = spec.model;
    json model = {{"T", p.horizon_T},
                  {"S", p.class2_reset_S},
                  {"lambda", p.intensity_lambda},
                  {"mu", p.claim_law.mean()},
                  {"m1", p.deductible_m1},
                  {"m2", p.deductible_m2},
                  {"pi1", premium_json(p.premium1)},
                  {"pi2", premium_json(p.premium2)},
                  {"c", p.income_c},
                  {"gamma", p.utility.gamma},
                  {"floor", p.utility.floor}};

    const GridSpec& g = spec.grid;
    json grid = {{"h_t", g.h_t}, {"h_x", g.h_x}, {"x_lo", g.x_lo}, {"x_hi", g.x_hi}, {"tail_eps", g.tail_eps}};
    if (g.y_max) grid["y_max"] = *g.y_max;
    if (g.h_y) grid["h_y"] = *g.h_y;
    if (g.x_pad_hi) grid["x_pad_hi"] = *g.x_pad_hi;
    if (g.x_pad_lo) grid["x_pad_lo"] = *g.x_pad_lo;

    const SolveControl& c = spec.control;
    json stop = c.stop.kind == StopRule::Kind::fixed_iterations ? json{{"kind", "fixed"}, {"n", c.stop.n}}
                                                                 : json{{"kind", "sup_change"}, {"tol", c.stop.tol}};
    json control = {{"mode", c.mode == SolveControl::Mode::optimize ? "optimize" : "fixed"},
                    {"barrier", extended_json(c.constant_barrier)},
                    {"stop", stop},
                    {"paper_mode", c.paper_mode},
                    {"max_iterations", c.max_iterations},
                    {"threads", c.threads}};

    json mc = {{"n_paths", spec.mc.n_paths}, {"seed", spec.mc.seed}, {"threads", spec.mc.threads}};
    json outputs = {{"dir", spec.output_dir.string()}, {"artifacts", spec.artifacts}};
    return {{"model", model}, {"grid", grid}, {"control", control}, {"mc", mc}, {"outputs", outputs}};
}

void apply_env_overrides(RunSpec& spec) {
    if (std::getenv("BMCTL_SEED")) spec.mc.seed = env_count("BMCTL_SEED");
    if (std::getenv("BMCTL_N_PATHS")) {
        spec.mc.n_paths = env_count("BMCTL_N_PATHS");
        if (spec.mc.n_paths < 2) throw ValidationError("BMCTL_N_PATHS must be >= 2");
    }
}

std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

json run_metadata(const RunSpec& spec, const Grid& g, const SolveResult& r) {
    const SolveControl& c = spec.control;
    return {
        {"version", kVersion},
        {"compiler", __VERSION__},
        {"config", serialize(spec)},
        {"grid",
         {{"h_t", g.h()},
          {"h_s", g.h()},
          {"h_x", g.hx()},
          {"x_lo", g.x(g.j_lo())},
          {"x_hi", g.x(g.j_hi())},
          {"x_bottom", g.x_bottom()},
          {"x_top", g.x_top()},
          {"nx", g.nx()},
          {"y_max", g.y_max()},
          {"h_y", g.stride() * g.hx()},
          {"n_candidates", g.n_candidates()},
          {"nodes_class1", g.n_nodes(InsuranceClass::C1)},
          {"nodes_class2", g.n_nodes(InsuranceClass::C2)}}},
        {"solve",
         {{"mode", c.mode == SolveControl::Mode::optimize ? "optimize" : "fixed"},
          {"paper_mode", c.paper_mode},
          {"iterations_used", r.iterations_used},
          {"sup_change_history", r.sup_change_history},
          {"max_increase_history", r.max_increase_history}}},
        {"scheme",
         {{"time_stepping", "exponential integrator along t - s characteristics, claim source linear in time"},
          {"transport", "first-order upwind, exact flow increment per step"},
          {"quadrature", "product trapezoid with exact claim-law cell weights, analytic tail beyond max(b, m)"},
          {"x_interpolation", "linear, flat beyond the axis ends"},
          {"boundary_coupling", "V2(t, S, x) = V1(t, 0, x) from the current iterate after every layer"},
          {"argmax_ties", "smallest candidate"},
          {"infinite_barrier_in_csv", "written as y_max"}}},
    };
}

SolveResult run_solve(const RunSpec& spec, const fs::path& out_dir) {
    const auto grid = Grid::build(spec.model, spec.grid);
    SolveResult r = iterate(spec.model, grid, spec.control);

    fs::create_directories(out_dir);
    OutputGuard guard;
    const Grid& g = *grid;

    json values = json::object();
    for (auto i : {InsuranceClass::C1, InsuranceClass::C2}) {
        json xs = json::array(), vs = json::array();
        for (int j = g.j_lo(); j <= g.j_hi(); ++j) {
            xs.push_back(g.x(j));
            vs.push_back(r.value.at(i, 0, 0, j));
        }
        values[i == InsuranceClass::C1 ? "class1" : "class2"] = {{"x", xs}, {"V", vs}};
    }
    json summary = {{"iterations_used", r.iterations_used},
                    {"sup_change_history", r.sup_change_history},
                    {"value_at_t0_s0", values}};

    auto emit = [&](const std::string& name, const std::string& text) {
        guard.track(out_dir / name);
        write_text(out_dir / name, text);
    };
    emit("solve_summary.json", summary.dump(2) + "\n");
    emit("run_meta.json", run_metadata(spec, g, r).dump(2) + "\n");

    for (const auto& art : spec.artifacts) {
        const bool barrier = art == "barrier_field";
        if (barrier && !r.barrier) continue;
        Series s{art + ".csv", {"class", "t", "s", "x", barrier ? "b" : "V"}, {}};
        for (auto i : {InsuranceClass::C1, InsuranceClass::C2}) {
            for (int kt = 0; kt <= g.nt(); ++kt) {
                for (int ks = 0; ks <= g.ks_max(i, kt); ++ks) {
                    for (int j = g.j_lo(); j <= g.j_hi(); ++j) {
                        const double v =
                            barrier ? finite_barrier(g, r.barrier->at(i, kt, ks, j)) : r.value.at(i, kt, ks, j);
                        s.rows.push_back({static_cast<double>(to_int(i)), g.t(kt), g.s(ks), g.x(j), v});
                    }
                }
            }
        }
        emit(s.file, csv_text(s));
    }
    guard.release();
    return r;
}

FigureRun compute_figures(const RunSpec& spec) {
    FigureRun run;
    run.grid = Grid::build(spec.model, spec.grid);
    SolveControl control = spec.control;
    control.mode = SolveControl::Mode::optimize;
    control.paper_mode = true;
    run.solve = iterate(spec.model, run.grid, control);

    const Grid& g = *run.grid;
    const ValueField& V = run.solve.value;
    const BarrierField& B = *run.solve.barrier;
    const auto C1 = InsuranceClass::C1;
    const auto C2 = InsuranceClass::C2;
    const int j5 = wealth_index(g, 5.0);
    const int kS = g.ns2();
    const int k16 = time_index(g, 1.6);
    if (k16 > kS) throw ValidationError("figures need 1.6 <= S");

    Series fig1{"fig1.csv", {"x", "V1", "V2"}, {}};
    for (int j = g.j_lo(); j <= g.j_hi(); ++j) fig1.rows.push_back({g.x(j), V.at(C1, 0, 0, j), V.at(C2, 0, 0, j)});

    Series fig2{"fig2.csv", {"t", "V1", "V2"}, {}};
    for (int kt = 0; kt <= g.nt(); ++kt) fig2.rows.push_back({g.t(kt), V.at(C1, kt, 0, j5), V.at(C2, kt, 0, j5)});

    Series fig3{"fig3.csv", {"s", "V1", "V2"}, {}};
    for (int ks = 0; ks <= kS; ++ks) fig3.rows.push_back({g.s(ks), V.at(C1, kS, ks, j5), V.at(C2, kS, ks, j5)});

    Series fig4a{"fig4a.csv", {"t", "b1"}, {}};
    for (int kt = 0; kt <= g.nt(); ++kt) fig4a.rows.push_back({g.t(kt), finite_barrier(g, B.at(C1, kt, 0, j5))});

    Series fig4b{"fig4b.csv", {"t", "b2"}, {}};
    for (int kt = k16; kt <= g.nt(); ++kt) fig4b.rows.push_back({g.t(kt), finite_barrier(g, B.at(C2, kt, k16, j5))});

    run.series = {std::move(fig1), std::move(fig2), std::move(fig3), std::move(fig4a), std::move(fig4b)};
    return run;
}

void write_series(const Series& series, const fs::path& out_dir) {
    write_text(out_dir / series.file, csv_text(series));
}

FigureRun run_figures(const RunSpec& spec, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    OutputGuard guard;
    for (const char* name : {"fig1.csv", "fig2.csv", "fig3.csv", "fig4a.csv", "fig4b.csv", "run_meta.json"})
        guard.track(out_dir / name);
    FigureRun run = compute_figures(spec);
    for (const auto& s : run.series) write_series(s, out_dir);
    RunSpec meta_spec = spec;
    meta_spec.control.mode = SolveControl::Mode::optimize;
    meta_spec.control.paper_mode = true;
    write_text(out_dir / "run_meta.json", run_metadata(meta_spec, *run.grid, run.solve).dump(2) + "\n");
    guard.release();
    return run;
}

PolicySpec parse_policy(const std::string& text, const std::shared_ptr<const BarrierField>& grid_barrier) {
    if (text == "grid") {
        if (!grid_barrier) throw ValidationError("policy grid needs an optimize-mode solve");
        return PolicySpec::from_grid(grid_barrier);
    }
    if (text.rfind("const:", 0) == 0) {
        const std::string v = text.substr(6);
        if (v == "inf") return PolicySpec::constant(kInf);
        std::size_t used = 0;
        double b = 0.0;
        try {
            b = std::stod(v, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != v.size() || !(b >= 0.0))
            throw ValidationError("policy barrier must be a number >= 0 or inf, got '" + v + "'");
        return PolicySpec::constant(b);
    }
    throw ValidationError("policy must be 'grid' or 'const:B', got '" + text + "'");
}

InitialState parse_init(const std::string& text) {
    std::vector<double> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size()) throw ValidationError("--init expects i,t,s,x; bad entry '" + item + "'");
        parts.push_back(v);
    }
    if (parts.size() != 4) throw ValidationError("--init expects four comma-separated numbers i,t,s,x");
    if (parts[0] != 1.0 && parts[0] != 2.0) throw ValidationError("--init class must be 1 or 2");
    return {class_from_int(static_cast<int>(parts[0])), parts[1], parts[2], parts[3]};
}

json mc_result_json(const MCResult& r) {
    return {{"mean", r.mean}, {"stderr", r.std_error}, {"n_paths", r.n_paths}, {"seed", r.seed}};
}

int run_check(const RunSpec& spec, const fs::path& out_dir, std::ostream* progress) {
    fs::create_directories(out_dir);
    AcceptanceOptions opts;
    opts.scratch_dir = out_dir / "check_scratch";
    if (progress) opts.on_result = [progress](const CriterionResult& r) { *progress << format_line(r) << std::endl; };
    const AcceptanceReport report = run_acceptance(spec, opts);
    std::error_code ec;
    fs::remove_all(opts.scratch_dir, ec);
    json doc = report.to_json();
    doc["config"] = serialize(spec);
    write_text(out_dir / "check_report.json", doc.dump(2) + "\n");
    write_text(out_dir / "check_summary.txt", report.summary());
    if (report.validation_failed()) return kExitValidation;
    return report.all_passed() ? kExitOk : kExitAcceptance;
}

}  // namespace bm
