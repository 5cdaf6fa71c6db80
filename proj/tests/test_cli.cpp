#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bm/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <string>

using namespace bm;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json table1_doc() {
    std::ifstream in(BM_SOURCE_DIR "/configs/table1.json");
    return json::parse(in);
}

/// A quick configuration that still contains x = 5 and t = 1.6.
json small_doc() {
    json d = table1_doc();
    d["model"]["T"] = 2.0;
    d["model"]["S"] = 1.6;
    d["model"]["pi1"]["slope"] = -0.35;
    d["grid"]["h_t"] = 0.1;
    d["grid"]["h_x"] = 0.1;
    d["mc"]["n_paths"] = 2000;
    return d;
}

std::string error_of(const json& doc) {
    try {
        parse_config(doc);
    } catch (const ValidationError& e) {
        return e.what();
    }
    return "";
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("bm_test_cli_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("shipped table1.json") {
    const RunSpec s = load_config(BM_SOURCE_DIR "/configs/table1.json");
    const ModelParams& p = s.model;
    CHECK(p.horizon_T == 5.0);
    CHECK(p.class2_reset_S == 2.0);
    CHECK(p.intensity_lambda == 1.0);
    CHECK(p.claim_law.mean() == 1.0);
    CHECK(p.deductible_m1 == 0.0);
    CHECK(p.deductible_m2 == 0.0);
    CHECK(p.premium1.intercept == 1.0);
    CHECK(p.premium1.slope == doctest::Approx(-7.0 / 50.0));
    CHECK(p.premium2.rate(0.7) == 1.1);
    CHECK(p.income_c == 1.2);
    CHECK(p.utility.gamma == 0.5);
    CHECK(p.utility.floor == -1e10);
    CHECK(s.mc.n_paths == 100000);
}

TEST_CASE("round trip") {
    const RunSpec s = parse_config(table1_doc());
    const json once = serialize(s);
    const json twice = serialize(parse_config(once));
    CHECK(once == twice);

    json d = small_doc();
    d["grid"]["x_pad_lo"] = 20.0;
    d["grid"]["h_y"] = 0.2;
    d["control"]["mode"] = "fixed";
    d["control"]["barrier"] = "inf";
    d["control"]["stop"] = {{"kind", "fixed"}, {"n", 3}};
    d["outputs"]["artifacts"] = {"value_field"};
    const RunSpec t = parse_config(d);
    CHECK(std::isinf(t.control.constant_barrier));
    CHECK(t.control.stop.n == 3);
    CHECK(*t.grid.x_pad_lo == 20.0);
    CHECK(serialize(parse_config(serialize(t))) == serialize(t));
}

TEST_CASE("config errors name the key") {
    json d = table1_doc();
    d["model"].erase("lambda");
    CHECK(error_of(d).find("model.lambda") != std::string::npos);

    d = table1_doc();
    d["model"]["lamda"] = 1.0;
    CHECK(error_of(d).find("model.lamda") != std::string::npos);

    d = table1_doc();
    d["grid"]["hx"] = 0.1;
    CHECK(error_of(d).find("grid.hx") != std::string::npos);

    d = table1_doc();
    d["model"]["T"] = "five";
    CHECK(error_of(d).find("model.T") != std::string::npos);

    d = table1_doc();
    d["model"]["pi1"].erase("slope");
    CHECK(error_of(d).find("model.pi1.slope") != std::string::npos);

    d = table1_doc();
    d["model"]["c"] = 1.0;
    CHECK(error_of(d).find("model.c") != std::string::npos);

    d = table1_doc();
    d.erase("mc");
    CHECK(error_of(d).find("config.mc") != std::string::npos);

    d = table1_doc();
    d["surprise"] = 1;
    CHECK(error_of(d).find("config.surprise") != std::string::npos);

    d = table1_doc();
    d["mc"]["n_paths"] = -5;
    CHECK(error_of(d).find("mc.n_paths") != std::string::npos);
}

TEST_CASE("grid and control defaults") {
    json d = table1_doc();
    d.erase("grid");
    d.erase("control");
    d.erase("outputs");
    const RunSpec s = parse_config(d);
    CHECK(s.grid.h_t == 0.05);
    CHECK(s.control.mode == SolveControl::Mode::optimize);
    CHECK(s.control.stop.kind == StopRule::Kind::sup_change_below);
}

TEST_CASE("environment overrides") {
    RunSpec s = parse_config(table1_doc());
    setenv("BMCTL_SEED", "77", 1);
    setenv("BMCTL_N_PATHS", "1234", 1);
    apply_env_overrides(s);
    CHECK(s.mc.seed == 77);
    CHECK(s.mc.n_paths == 1234);
    setenv("BMCTL_SEED", "x7", 1);
    CHECK_THROWS_AS(apply_env_overrides(s), ValidationError);
    unsetenv("BMCTL_SEED");
    unsetenv("BMCTL_N_PATHS");
}

TEST_CASE("policy and init parsing") {
    CHECK(parse_policy("const:0.5", nullptr).barrier(InsuranceClass::C1, 0, 0, 0) == 0.5);
    CHECK(std::isinf(parse_policy("const:inf", nullptr).barrier(InsuranceClass::C1, 0, 0, 0)));
    CHECK_THROWS_AS(parse_policy("const:abc", nullptr), ValidationError);
    CHECK_THROWS_AS(parse_policy("grid", nullptr), ValidationError);
    CHECK_THROWS_AS(parse_policy("sometimes", nullptr), ValidationError);

    const InitialState s = parse_init("2,0.5,0.25,3");
    CHECK(s.cls == InsuranceClass::C2);
    CHECK(s.t == 0.5);
    CHECK(s.s == 0.25);
    CHECK(s.x == 3.0);
    CHECK_THROWS_AS(parse_init("3,0,0,0"), ValidationError);
    CHECK_THROWS_AS(parse_init("1,0,0"), ValidationError);
}

TEST_CASE("number formatting") {
    CHECK(format_number(-std::exp(-2.5)) == "-0.0820849986239");
    CHECK(format_number(0.1) == "0.1");
    CHECK(format_number(1e10) == "10000000000");
}

TEST_CASE("figures") {
    RunSpec spec = parse_config(small_doc());
    const fs::path a = scratch("fig_a");
    const fs::path b = scratch("fig_b");
    const FigureRun run = run_figures(spec, a);
    CHECK(run.solve.iterations_used == SolveControl::kPaperIterations);

    const Series& fig2 = run.series[1];
    const Series& fig3 = run.series[2];
    CHECK(fig2.rows.back()[0] == 2.0);
    CHECK(fig2.rows.back()[1] == spec.model.utility(5.0));
    CHECK(fig2.rows.back()[2] == spec.model.utility(5.0));
    const auto at_S = std::find_if(fig2.rows.begin(), fig2.rows.end(), [](const auto& r) { return std::abs(r[0] - 1.6) < 1e-9; });
    REQUIRE(at_S != fig2.rows.end());
    CHECK(fig3.rows.back()[2] == (*at_S)[1]);
    CHECK(run.series[4].rows.front()[0] == doctest::Approx(1.6));

    for (const char* f : {"fig1.csv", "fig2.csv", "fig3.csv", "fig4a.csv", "fig4b.csv", "run_meta.json"})
        CHECK(fs::exists(a / f));
    CHECK(slurp(a / "fig2.csv").rfind("t,V1,V2\n", 0) == 0);
    CHECK(slurp(a / "fig4b.csv").rfind("t,b2\n", 0) == 0);

    spec.control.threads = 3;
    run_figures(spec, b);
    for (const char* f : {"fig1.csv", "fig2.csv", "fig3.csv", "fig4a.csv", "fig4b.csv"}) CHECK(slurp(a / f) == slurp(b / f));

    const json meta = json::parse(slurp(a / "run_meta.json"));
    CHECK(meta["solve"]["paper_mode"] == true);
    CHECK(meta["grid"]["h_x"] == 0.1);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("failed figure runs leave no partial output") {
    json d = small_doc();
    d["grid"]["x_hi"] = 4.0;
    const RunSpec spec = parse_config(d);
    const fs::path out = scratch("fig_fail");
    CHECK_THROWS_AS(run_figures(spec, out), ValidationError);
    CHECK(fs::is_empty(out));
    fs::remove_all(out);
}

TEST_CASE("solve artifacts") {
    json d = small_doc();
    d["outputs"]["artifacts"] = {"value_field", "barrier_field"};
    const RunSpec spec = parse_config(d);
    const fs::path out = scratch("solve");
    const SolveResult r = run_solve(spec, out);
    CHECK(r.barrier.has_value());
    const json summary = json::parse(slurp(out / "solve_summary.json"));
    CHECK(summary["iterations_used"] == r.iterations_used);
    const std::string vf = slurp(out / "value_field.csv");
    CHECK(vf.rfind("class,t,s,x,V\n", 0) == 0);
    CHECK(vf.find("nan") == std::string::npos);
    CHECK(vf.find("inf") == std::string::npos);
    CHECK(slurp(out / "barrier_field.csv").find("inf") == std::string::npos);
    fs::remove_all(out);
}

TEST_CASE("check on a CFL-violating grid") {
    json d = small_doc();
    d["grid"]["h_t"] = 0.2;
    const RunSpec spec = parse_config(d);
    const fs::path out = scratch("check_cfl");
    CHECK(run_check(spec, out) == kExitValidation);
    const json report = json::parse(slurp(out / "check_report.json"));
    CHECK(report["all_passed"] == false);
    CHECK(report["criteria"][0]["name"] == "cfl_condition");
    fs::remove_all(out);
}
