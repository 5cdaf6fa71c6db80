#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bm/grid.hpp"

#include <cmath>
#include <set>
#include <string>

using namespace bm;

namespace {

const ModelParams P = ModelParams::table1();
constexpr auto C1 = InsuranceClass::C1;
constexpr auto C2 = InsuranceClass::C2;

GridPtr table1_grid() { return Grid::build(P, GridSpec{}); }

}  // namespace

TEST_CASE("node counts") {
    const auto g = table1_grid();
    CHECK(g->nt() + 1 == 101);
    CHECK(g->ns2() + 1 == 41);
    CHECK(g->ks_max(C1, 100) == 100);
    CHECK(g->ks_max(C2, 100) == 40);
    CHECK(g->ks_max(C2, 10) == 10);
    CHECK(g->n_nodes(C1) == 101u * 102u / 2u);
    CHECK(g->n_nodes(C2) == 41u * 42u / 2u + 60u * 41u);
    CHECK(g->x(g->j_lo()) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(g->x(g->j_hi()) == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(g->j_hi() - g->j_lo() == 100);
}

TEST_CASE("minimal horizon has two layers") {
    auto p = P;
    p.horizon_T = 0.05;
    p.class2_reset_S = 0.05;
    p.premium1 = PremiumSpec::affine(1.0, -0.7 / 0.05);
    GridSpec spec;
    const auto g = Grid::build(p, spec);
    CHECK(g->nt() == 1);
    CHECK(g->n_nodes(C1) == 3u);
}

TEST_CASE("construction errors") {
    GridSpec spec;
    spec.h_t = 0.1;  // 0.1 * 0.9 > 0.05
    try {
        Grid::build(P, spec);
        FAIL("expected a CFL error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("CFL") != std::string::npos);
    }

    spec = GridSpec{};
    spec.h_t = 0.03;
    CHECK_THROWS_AS(Grid::build(P, spec), ValidationError);

    spec = GridSpec{};
    spec.h_x = 0.03;
    spec.h_t = 0.03;
    CHECK_THROWS_AS(Grid::build(P, spec), ValidationError);

    spec = GridSpec{};
    spec.y_max = 5.0;
    CHECK_THROWS_AS(Grid::build(P, spec), ValidationError);

    spec = GridSpec{};
    spec.h_y = 0.075;
    CHECK_THROWS_AS(Grid::build(P, spec), ValidationError);

    auto p = P;
    p.deductible_m1 = 0.123;
    CHECK_THROWS_AS(Grid::build(p, GridSpec{}), ValidationError);
}

TEST_CASE("claim truncation and candidates") {
    const auto g = table1_grid();
    CHECK(P.claim_law.survival(g->y_max()) <= 1e-8);
    CHECK(P.claim_law.survival(g->y_max() - g->hx()) > 1e-8);
    const auto& c = g->candidates();
    CHECK(c.front() == 0.0);
    CHECK(std::isinf(c.back()));
    CHECK(c[c.size() - 2] == doctest::Approx(g->y_max()));
    CHECK(g->candidate_index(1.0) == 20);
    CHECK(g->candidate_index(INFINITY) == g->infinite_candidate());
    CHECK_THROWS_AS(g->candidate_index(0.01), ValidationError);

    GridSpec coarse;
    coarse.h_y = 0.25;
    const auto gc = Grid::build(P, coarse);
    CHECK(gc->stride() == 5);
    CHECK(gc->candidates()[1] == doctest::Approx(0.25));
}

TEST_CASE("layout properties") {
    const auto g = table1_grid();
    for (auto i : {C1, C2}) {
        std::set<std::size_t> rows;
        for (int kt = 0; kt <= g->nt(); ++kt) {
            for (int ks = 0; ks <= g->ks_max(i, kt); ++ks) {
                REQUIRE(g->valid(i, kt, ks));
                const std::size_t r = g->row(i, kt, ks);
                CHECK(g->node(i, r) == NodeIndex{kt, ks});
                rows.insert(r);
                if (kt > 0 && ks > 0) CHECK(g->valid(i, kt - 1, ks - 1));
                if (ks > 0) CHECK(g->row(i, kt, ks) == g->row(i, kt - 1, ks - 1) + 1);
            }
        }
        CHECK(rows.size() == g->n_nodes(i));
        CHECK(*rows.rbegin() == g->n_nodes(i) - 1);
    }
    CHECK_FALSE(g->valid(C1, 3, 4));
    CHECK_FALSE(g->valid(C2, 90, 41));
    CHECK_THROWS_AS(g->row(C2, 90, 41), std::out_of_range);
}

TEST_CASE("padding sufficiency") {
    const auto g = table1_grid();
    for (int j = g->j_lo(); j <= g->j_hi(); ++j) CHECK(g->x(j) - g->y_max() >= g->x_bottom() - 1e-12);
    // The default lower padding reaches the utility floor.
    CHECK(P.utility(g->x_bottom()) == P.utility.floor);
    // Upper padding covers the largest flow over the horizon.
    CHECK(g->x_top() >= 5.0 + 2.75);

    GridSpec tight;
    tight.x_pad_lo = 18.45;
    const auto gt = Grid::build(P, tight);
    CHECK(gt->x_bottom() == doctest::Approx(-18.45));
    tight.x_pad_lo = 10.0;
    CHECK_THROWS_AS(Grid::build(P, tight), ValidationError);
}

TEST_CASE("interp_x") {
    const auto g = table1_grid();
    ValueField f(g);
    for (auto i : {C1, C2})
        for (int kt = 0; kt <= g->nt(); ++kt)
            for (int ks = 0; ks <= g->ks_max(i, kt); ++ks) {
                auto row = f.row(i, kt, ks);
                for (int j = 0; j < g->nx(); ++j) row[j] = 3.0 * g->x(j) - 1.0 + kt;
            }
    CHECK(interp_x(f, C1, 10, 3, g->x(700)) == f.at(C1, 10, 3, 700));
    const double mid = 0.5 * (g->x(700) + g->x(701));
    CHECK(interp_x(f, C2, 10, 3, mid) == doctest::Approx(0.5 * (f.at(C2, 10, 3, 700) + f.at(C2, 10, 3, 701))).epsilon(1e-12));
    CHECK(interp_x(f, C1, 0, 0, g->x_bottom() - 1.0) == f.at(C1, 0, 0, 0));
    CHECK(interp_x(f, C1, 0, 0, g->x_top() + 1.0) == f.at(C1, 0, 0, g->nx() - 1));
    CHECK_THROWS_AS(interp_x(f, C1, 3, 4, 0.0), std::out_of_range);
    CHECK_THROWS_AS(f.at(C1, 0, 0, g->nx()), std::out_of_range);
}

TEST_CASE("interp_value") {
    const auto g = table1_grid();
    ValueField f(g, -1.0);
    CHECK(interp_value(f, P, C1, 5.0, 1.0, 2.0) == P.utility(2.0));
    CHECK(interp_value(f, P, C2, 1.3, 0.7, 2.0) == -1.0);
}

TEST_CASE("apply_boundary") {
    const auto g = table1_grid();
    ValueField f(g, 0.0);
    for (int kt = 0; kt <= g->nt(); ++kt) {
        auto r1 = f.row(C1, kt, 0);
        for (int j = 0; j < g->nx(); ++j) r1[j] = kt * 1000.0 + j;
    }
    auto& d2 = f.data(C2);
    for (std::size_t k = 0; k < d2.size(); ++k) d2[k] = -static_cast<double>(k);
    const auto before = d2;

    apply_boundary(f);
    double diff = 0.0;
    for (int kt = g->ns2(); kt <= g->nt(); ++kt)
        for (int j = 0; j < g->nx(); ++j) diff = std::max(diff, std::abs(f.at(C2, kt, g->ns2(), j) - f.at(C1, kt, 0, j)));
    CHECK(diff == 0.0);

    std::size_t touched = 0;
    for (std::size_t k = 0; k < d2.size(); ++k) touched += d2[k] != before[k];
    CHECK(touched == static_cast<std::size_t>((g->nt() - g->ns2() + 1) * g->nx()));

    const auto once = d2;
    apply_boundary(f);
    CHECK(d2 == once);

    ValueField k(g, 0.0);
    for (int kt = 0; kt <= g->nt(); ++kt)
        for (double& v : k.row(C1, kt, 0)) v = 4.25;
    apply_boundary(k);
    for (int kt = g->ns2(); kt <= g->nt(); ++kt)
        for (double v : k.row(C2, kt, g->ns2())) CHECK(v == 4.25);
}

TEST_CASE("barrier field stores candidates") {
    const auto g = table1_grid();
    BarrierField b(g, g->candidate_index(0.5));
    CHECK(b.at(C1, 4, 2, 10) == doctest::Approx(0.5));
    b.row(C2, 4, 2)[10] = static_cast<std::uint16_t>(g->infinite_candidate());
    CHECK(std::isinf(b.at(C2, 4, 2, 10)));
}

TEST_CASE("utility Lipschitz constant") {
    const auto g = table1_grid();
    const double L = g->utility_lipschitz(P);
    const double x0 = g->x(g->j_lo() - g->knots());
    // Secant slope of h over the first cell is below gamma e^{-gamma x0}.
    CHECK(L <= 0.5 * std::exp(-0.5 * x0));
    CHECK(L >= 0.5 * std::exp(-0.5 * (x0 + g->hx())));
}
