#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bm/simulator.hpp"

#include <cmath>

using namespace bm;

namespace {

const ModelParams P = ModelParams::table1();
constexpr auto C1 = InsuranceClass::C1;
constexpr auto C2 = InsuranceClass::C2;
constexpr double kInf = INFINITY;

ModelParams no_claims() {
    ModelParams p = P;
    p.intensity_lambda = 0.0;
    return p;
}

bool same(const PathRecord& a, const PathRecord& b) {
    if (a.events.size() != b.events.size() || a.terminal_wealth != b.terminal_wealth) return false;
    for (std::size_t k = 0; k < a.events.size(); ++k) {
        const auto& x = a.events[k];
        const auto& y = b.events[k];
        if (x.kind != y.kind || x.time != y.time || x.size != y.size || x.reported != y.reported) return false;
    }
    return true;
}

/// Short-horizon problem solved in optimize mode, for grid policies.
struct SmallSolve {
    ModelParams p;
    SolveResult r;
    SmallSolve() : p(P) {
        p.horizon_T = 1.0;
        p.class2_reset_S = 0.5;
        p.premium1 = PremiumSpec::affine(1.0, -0.7);
        GridSpec spec;
        spec.h_t = 0.1;
        spec.h_x = 0.1;
        r = iterate(p, Grid::build(p, spec), SolveControl::optimize());
    }
};

}  // namespace

TEST_CASE("sample_path is deterministic") {
    const auto pol = PolicySpec::constant(0.5);
    const PathRecord a = sample_path(P, pol, {C1, 0.0, 0.0, 2.5}, 99, 7);
    const PathRecord b = sample_path(P, pol, {C1, 0.0, 0.0, 2.5}, 99, 7);
    CHECK(same(a, b));
    const PathRecord c = sample_path(P, pol, {C1, 0.0, 0.0, 2.5}, 99, 8);
    CHECK_FALSE(same(a, c));
    CHECK_THROWS_AS(sample_path(P, pol, {C2, 3.0, 2.5, 0.0}, 1), std::domain_error);
    CHECK_THROWS_AS(sample_path(P, pol, {C1, 1.0, 2.0, 0.0}, 1), std::domain_error);
}

TEST_CASE("deterministic flow without claims") {
    const ModelParams p = no_claims();
    const PathRecord r = sample_path(p, PolicySpec::constant(0.0), {C1, 0.0, 0.0, 0.0}, 1);
    CHECK(r.events.empty());
    CHECK(r.terminal_wealth == doctest::Approx(2.75).epsilon(1e-14));
    CHECK(r.terminal_utility == p.utility(r.terminal_wealth));

    const PathRecord up = sample_path(p, PolicySpec::constant(0.0), {C2, 0.0, 0.0, 1.0}, 1);
    REQUIRE(up.events.size() == 1);
    CHECK(up.events[0].kind == PathEvent::Kind::class_upgrade);
    CHECK(up.events[0].time == 2.0);
    // 0.1 per year for 2 years in class 2, then class 1 from clock 0 for 3 years.
    CHECK(up.terminal_wealth == doctest::Approx(1.0 + 0.2 + 0.2 * 3 + 0.07 * 9).epsilon(1e-14));

    const MCResult m = estimate_value(p, PolicySpec::constant(1.0), {C1, 0.0, 0.0, 2.5}, 50, 3);
    CHECK(m.std_error == 0.0);
    CHECK(m.mean == doctest::Approx(p.utility(5.25)).epsilon(1e-14));
    CHECK(m.n_paths == 50);
    CHECK(m.seed == 3);
}

TEST_CASE("path bookkeeping") {
    const auto pol = PolicySpec::constant(0.4);
    for (std::uint64_t k = 0; k < 3000; ++k) {
        const InitialState init = k % 2 ? InitialState{C1, 0.5, 0.2, 1.0} : InitialState{C2, 1.0, 0.5, 1.0};
        const PathRecord r = sample_path(P, pol, init, 5, k);

        InsuranceClass cls = init.cls;
        double prev_time = init.t, s = init.s;
        int reported = 0, entries_into_c2 = 0;
        for (const auto& e : r.events) {
            REQUIRE(e.time > prev_time);
            REQUIRE(e.time <= P.horizon_T);
            s += e.time - prev_time;
            prev_time = e.time;
            if (cls == C2) REQUIRE(s <= P.class2_reset_S + 1e-12);
            REQUIRE(s <= e.time - init.t + init.s + 1e-12);
            if (e.kind == PathEvent::Kind::class_upgrade) {
                REQUIRE(cls == C2);
                REQUIRE(std::abs(s - P.class2_reset_S) < 1e-9);
                cls = C1;
                s = 0.0;
            } else if (e.reported) {
                REQUIRE(e.size > 0.4);
                ++reported;
                entries_into_c2 += 1;
                cls = C2;
                s = 0.0;
            } else {
                REQUIRE(e.size <= 0.4);
            }
        }
        CHECK(reported == entries_into_c2);
        CHECK(std::abs(replay_wealth(P, r) - r.terminal_wealth) <= 1e-12);
    }
}

TEST_CASE("full insurance: reported claims cost nothing") {
    // Reporting everything with m = 0 leaves only the flow, which earns at
    // least c - max premium per year.
    for (std::uint64_t k = 0; k < 500; ++k) {
        const PathRecord r = sample_path(P, PolicySpec::constant(0.0), {C1, 0.0, 0.0, 0.0}, 17, k);
        for (const auto& e : r.events)
            if (e.kind == PathEvent::Kind::claim) REQUIRE(e.reported);
        CHECK(r.terminal_wealth >= 0.5 - 1e-12);
        CHECK(r.terminal_wealth <= 2.75 + 1e-12);
    }
}

TEST_CASE("standard error scales with the path count") {
    const auto pol = PolicySpec::constant(0.5);
    const MCResult a = estimate_value(P, pol, {C1, 0.0, 0.0, 2.5}, 20000, 1);
    const MCResult b = estimate_value(P, pol, {C1, 0.0, 0.0, 2.5}, 80000, 2);
    CHECK(a.std_error / b.std_error == doctest::Approx(2.0).epsilon(0.15));
    CHECK_THROWS_AS(estimate_value(P, pol, {C1, 0.0, 0.0, 2.5}, 1, 1), std::invalid_argument);
}

TEST_CASE("disjoint seeds agree for the never-report policy") {
    const auto pol = PolicySpec::constant(kInf);
    const MCResult a = estimate_value(P, pol, {C1, 0.0, 0.0, 2.5}, 100000, 101);
    const MCResult b = estimate_value(P, pol, {C1, 0.0, 0.0, 2.5}, 100000, 202);
    CHECK(std::abs(a.mean - b.mean) <= 3 * (a.std_error + b.std_error));
}

TEST_CASE("results do not depend on the thread count") {
    const auto pol = PolicySpec::constant(0.3);
    const MCResult a = estimate_value(P, pol, {C2, 0.0, 0.0, 1.0}, 20001, 9, 1);
    const MCResult b = estimate_value(P, pol, {C2, 0.0, 0.0, 1.0}, 20001, 9, 4);
    CHECK(a.mean == b.mean);
    CHECK(a.std_error == b.std_error);
}

TEST_CASE("policy comparison uses common random numbers") {
    const InitialState init{C1, 0.0, 0.0, 2.5};
    const auto one = compare_policies(P, std::vector{PolicySpec::constant(0.5)}, init, 5000, 12);
    REQUIRE(one.size() == 1);
    const MCResult m = estimate_value(P, PolicySpec::constant(0.5), init, 5000, 12);
    CHECK(one[0].mean == m.mean);
    CHECK(one[0].std_error == m.std_error);
    CHECK(one[0].paired_std_error == 0.0);

    const auto dup = compare_policies(
        P, std::vector{PolicySpec::constant(1.0), PolicySpec::constant(0.0), PolicySpec::constant(1.0)}, init, 5000, 12);
    REQUIRE(dup.size() == 3);
    const PolicyRow* first = nullptr;
    for (const auto& r : dup) {
        if (r.input_index == 0) first = &r;
    }
    for (const auto& r : dup) {
        if (r.input_index == 2) {
            CHECK(r.mean == first->mean);
            CHECK(r.paired_std_error == 0.0);
        }
    }
    for (std::size_t k = 1; k < dup.size(); ++k) CHECK(dup[k - 1].mean >= dup[k].mean);
    CHECK_THROWS_AS(compare_policies(P, std::vector<PolicySpec>{}, init, 10, 1), std::invalid_argument);
}

TEST_CASE("grid policy lookup") {
    SmallSolve s;
    const auto field = std::make_shared<BarrierField>(*s.r.barrier);
    const Grid& g = *field->grid();
    const PolicySpec pol = PolicySpec::from_grid(field);
    CHECK(pol.label() == "grid");
    for (auto i : {C1, C2})
        for (int kt = 0; kt <= g.nt(); ++kt)
            for (int ks = 0; ks <= g.ks_max(i, kt); ++ks)
                for (int j = g.j_lo(); j <= g.j_hi(); j += 7)
                    CHECK(pol.barrier(i, g.t(kt), g.s(ks), g.x(j)) == field->at(i, kt, ks, j));
    // Off-node times snap to the nearest node.
    CHECK(pol.barrier(C1, 0.31, 0.19, g.x(g.j_lo() + 3)) == field->at(C1, 3, 2, g.j_lo() + 3));
    CHECK(PolicySpec::constant(kInf).label() == "const:inf");
    CHECK_THROWS_AS(PolicySpec::constant(-1.0), std::invalid_argument);
}

TEST_CASE("dpp residual degenerate cases") {
    SmallSolve s;
    const DppResult zero = dpp_residual(s.p, s.r, {C1, 0.0, 0.0, 2.5}, 1000, 4, 0.0);
    CHECK(zero.residual == 0.0);
    const DppResult end = dpp_residual(s.p, s.r, {C2, 1.0, 0.5, 2.5}, 1000, 4, 0.3);
    CHECK(end.residual == 0.0);
    CHECK(end.value_at_init == s.p.utility(2.5));

    const DppResult live = dpp_residual(s.p, s.r, {C1, 0.0, 0.0, 2.5}, 20000, 4, 0.3);
    CHECK(live.residual <= 3 * live.std_error + 0.02);

    SolveResult no_barrier = s.r;
    no_barrier.barrier.reset();
    CHECK_THROWS_AS(dpp_residual(s.p, no_barrier, {C1, 0.0, 0.0, 2.5}, 100, 4, 0.3), std::invalid_argument);
    CHECK_THROWS_AS(dpp_residual(P, s.r, {C1, 0.0, 0.0, 2.5}, 100, 4, 0.3), std::invalid_argument);
}
