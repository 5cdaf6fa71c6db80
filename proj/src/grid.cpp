#include "bm/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace bm {

namespace {

constexpr double kStepSlack = 1e-9;

/// n with |n * step - length| small, or nullopt when step does not divide length.
std::optional<int> exact_steps(double length, double step) {
    const double q = length / step;
    const double n = std::round(q);
    if (std::abs(n * step - length) > 1e-12 * std::max(1.0, std::abs(length)) &&
        std::abs(q - n) > kStepSlack)
        return std::nullopt;
    return static_cast<int>(n);
}

int steps_or_throw(double length, double step, const char* what) {
    auto n = exact_steps(length, step);
    if (!n) {
        std::ostringstream os;
        os << what << ": step " << step << " does not divide " << length;
        throw ValidationError(os.str());
    }
    return *n;
}

}  // namespace

std::shared_ptr<const Grid> Grid::build(const ModelParams& params, const GridSpec& spec) {
    params.validate();

    if (!(spec.h_t > 0.0) || !(spec.h_x > 0.0)) throw ValidationError("grid.h_t and grid.h_x must be > 0");
    if (!(spec.x_hi > spec.x_lo)) throw ValidationError("grid.x_hi must exceed grid.x_lo");
    if (!(spec.tail_eps > 0.0 && spec.tail_eps < 1.0)) throw ValidationError("grid.tail_eps must lie in (0, 1)");

    std::shared_ptr<Grid> g(new Grid());
    g->spec_ = spec;
    g->h_ = spec.h_t;
    g->hx_ = spec.h_x;
    g->nt_ = steps_or_throw(params.horizon_T, spec.h_t, "grid.h_t vs model.T");
    g->ns2_ = steps_or_throw(params.class2_reset_S, spec.h_t, "grid.h_t vs model.S");
    const int window = steps_or_throw(spec.x_hi - spec.x_lo, spec.h_x, "grid.h_x vs window x_hi - x_lo");

    // CFL: the largest one-step wealth shift must not exceed one wealth cell.
    double max_drift = 0.0;
    for (auto i : {InsuranceClass::C1, InsuranceClass::C2}) {
        const double hi = params.clock_limit(i);
        const auto& ps = params.premium_spec(i);
        max_drift = std::max({max_drift, params.income_c - ps.rate(0.0), params.income_c - ps.rate(hi)});
    }
    if (spec.h_t * max_drift > spec.h_x * (1.0 + 1e-12)) {
        std::ostringstream os;
        os << "CFL violation: h_t * max drift = " << spec.h_t * max_drift << " exceeds h_x = " << spec.h_x
           << "; reduce h_t below " << spec.h_x / max_drift << " or increase h_x";
        throw ValidationError(os.str());
    }

    // Candidate stride.
    g->stride_ = 1;
    if (spec.h_y) {
        if (!(*spec.h_y > 0.0)) throw ValidationError("grid.h_y must be > 0");
        g->stride_ = steps_or_throw(*spec.h_y, spec.h_x, "grid.h_y must be a multiple of grid.h_x");
        if (g->stride_ < 1) throw ValidationError("grid.h_y must be >= grid.h_x");
    }
    const double h_y = g->stride_ * spec.h_x;

    // Claim truncation.
    const ClaimLaw& law = params.claim_law;
    if (spec.y_max) {
        const double y = *spec.y_max;
        if (!(y > 0.0)) throw ValidationError("grid.y_max must be > 0");
        g->n_knots_ = steps_or_throw(y, h_y, "grid.y_max must be a multiple of the candidate spacing h_y");
        g->n_knots_ *= g->stride_;
        if (law.survival(y) > spec.tail_eps) {
            std::ostringstream os;
            os << "grid.y_max = " << y << " leaves claim tail mass " << law.survival(y)
               << " > tail_eps = " << spec.tail_eps;
            throw ValidationError(os.str());
        }
    } else {
        double y = law.mean();
        while (law.survival(y) > spec.tail_eps) y *= 1.25;
        double lo = 0.0, hi = y;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            (law.survival(mid) > spec.tail_eps ? lo : hi) = mid;
        }
        int cells = static_cast<int>(std::ceil(hi / h_y - kStepSlack));
        while (law.survival(cells * h_y) > spec.tail_eps) ++cells;
        g->n_knots_ = cells * g->stride_;
    }
    g->y_max_ = g->n_knots_ * spec.h_x;

    for (auto i : {InsuranceClass::C1, InsuranceClass::C2}) {
        const double m = params.deductible(i);
        int mk = 0;
        if (m > 0.0) {
            auto n = exact_steps(m, spec.h_x);
            if (!n) throw ValidationError("deductibles must be multiples of grid.h_x");
            mk = *n;
        }
        if (mk > g->n_knots_) throw ValidationError("deductibles must not exceed grid.y_max");
        g->m_knots_[to_int(i) - 1] = mk;
    }

    // Upper padding: the upwind stencil draws information from larger wealth.
    double pad_hi;
    if (spec.x_pad_hi) {
        if (!(*spec.x_pad_hi >= 0.0)) throw ValidationError("grid.x_pad_hi must be >= 0");
        pad_hi = *spec.x_pad_hi;
    } else {
        double max_flow = 0.0;
        for (int kt = 0; kt <= g->nt_; ++kt) {
            const double tau = params.horizon_T - g->t(kt);
            for (auto i : {InsuranceClass::C1, InsuranceClass::C2}) {
                const int top = i == InsuranceClass::C1 ? kt : std::min(kt, g->ns2_);
                for (int ks = 0; ks <= top; ++ks)
                    max_flow = std::max(max_flow, flow_drift(params, i, g->s(ks), tau));
            }
        }
        pad_hi = max_flow + 1.0;
    }
    const int pad_nodes = static_cast<int>(std::ceil(pad_hi / spec.h_x - kStepSlack));

    // Lower padding: at least one maximal claim, and by default down to the
    // wealth where the utility floor takes over and h is constant.
    double pad_lo = g->y_max_;
    if (spec.x_pad_lo) {
        if (!(*spec.x_pad_lo >= g->y_max_ - 1e-12))
            throw ValidationError("grid.x_pad_lo must be >= the claim truncation y_max");
        pad_lo = *spec.x_pad_lo;
    } else {
        const double x_floor = -std::log(-params.utility.floor) / params.utility.gamma;
        pad_lo = std::max(pad_lo, spec.x_lo - x_floor);
    }
    const int pad_lo_nodes = static_cast<int>(std::ceil(pad_lo / spec.h_x - kStepSlack));
    if (pad_lo_nodes + window + pad_nodes > 200000)
        throw ValidationError("wealth axis exceeds 200000 nodes; set grid.x_pad_lo or coarsen grid.h_x");

    g->x_bottom_ = spec.x_lo - pad_lo_nodes * spec.h_x;
    g->j_lo_ = pad_lo_nodes;
    g->j_hi_ = g->j_lo_ + window;
    g->nx_ = g->j_hi_ + pad_nodes + 1;

    for (int c = 0; c * g->stride_ <= g->n_knots_; ++c) g->candidates_.push_back(c * h_y);
    g->candidates_.push_back(std::numeric_limits<double>::infinity());
    if (g->candidates_.size() > 65535) throw ValidationError("too many barrier candidates");

    for (auto i : {InsuranceClass::C1, InsuranceClass::C2}) {
        auto& off = g->offsets_[to_int(i) - 1];
        off.assign(g->nt_ + 2, 0);
        for (int d = 0; d <= g->nt_; ++d) off[d + 1] = off[d] + g->line_length(i, d);
        g->total_[to_int(i) - 1] = off.back();
    }
    return g;
}

int Grid::line_length(InsuranceClass i, int d) const {
    return i == InsuranceClass::C1 ? nt_ - d + 1 : std::min(nt_ - d, ns2_) + 1;
}

int Grid::candidate_index(double b) const {
    if (std::isinf(b) && b > 0) return infinite_candidate();
    const double h_y = stride_ * hx_;
    const double q = b / h_y;
    const double c = std::round(q);
    if (!(b >= 0.0) || std::abs(q - c) > kStepSlack || c > infinite_candidate() - 1) {
        std::ostringstream os;
        os << "barrier " << b << " is not on the candidate ladder (spacing " << h_y << ", max " << y_max_
           << ")";
        throw ValidationError(os.str());
    }
    return static_cast<int>(c);
}

bool Grid::valid(InsuranceClass i, int kt, int ks) const {
    return kt >= 0 && kt <= nt_ && ks >= 0 && ks <= ks_max(i, kt);
}

int Grid::ks_max(InsuranceClass i, int kt) const {
    return i == InsuranceClass::C1 ? kt : std::min(kt, ns2_);
}

std::size_t Grid::row(InsuranceClass i, int kt, int ks) const {
    if (!valid(i, kt, ks)) {
        std::ostringstream os;
        os << "node (class " << to_int(i) << ", kt " << kt << ", ks " << ks << ") is outside the domain";
        throw std::out_of_range(os.str());
    }
    return offsets_[to_int(i) - 1][kt - ks] + static_cast<std::size_t>(ks);
}

NodeIndex Grid::node(InsuranceClass i, std::size_t r) const {
    const auto& off = offsets_[to_int(i) - 1];
    if (r >= off.back()) throw std::out_of_range("row index outside the domain");
    const auto it = std::upper_bound(off.begin(), off.end(), r);
    const int d = static_cast<int>(it - off.begin()) - 1;
    const int ks = static_cast<int>(r - off[d]);
    return {d + ks, ks};
}

double Grid::utility_lipschitz(const ModelParams& p) const {
    double L = 0.0;
    const int j0 = std::max(0, j_lo_ - n_knots_);
    double prev = p.utility(x(j0));
    for (int j = j0 + 1; j < nx_; ++j) {
        const double cur = p.utility(x(j));
        L = std::max(L, std::abs(cur - prev) / hx_);
        prev = cur;
    }
    return L;
}

// ---------------------------------------------------------------------------

ValueField::ValueField(GridPtr grid, double fill) : grid_(std::move(grid)) {
    for (auto i : {InsuranceClass::C1, InsuranceClass::C2})
        data_[to_int(i) - 1].assign(grid_->n_nodes(i) * static_cast<std::size_t>(grid_->nx()), fill);
}

std::span<double> ValueField::row(InsuranceClass i, int kt, int ks) {
    const auto nx = static_cast<std::size_t>(grid_->nx());
    return {data_[to_int(i) - 1].data() + grid_->row(i, kt, ks) * nx, nx};
}

std::span<const double> ValueField::row(InsuranceClass i, int kt, int ks) const {
    const auto nx = static_cast<std::size_t>(grid_->nx());
    return {data_[to_int(i) - 1].data() + grid_->row(i, kt, ks) * nx, nx};
}

int ValueField::checked_j(int j) const {
    if (j < 0 || j >= grid_->nx()) throw std::out_of_range("wealth index outside the grid");
    return j;
}

BarrierField::BarrierField(GridPtr grid, int fill_candidate) : grid_(std::move(grid)) {
    for (auto i : {InsuranceClass::C1, InsuranceClass::C2})
        data_[to_int(i) - 1].assign(grid_->n_nodes(i) * static_cast<std::size_t>(grid_->nx()),
                                    static_cast<std::uint16_t>(fill_candidate));
}

std::span<std::uint16_t> BarrierField::row(InsuranceClass i, int kt, int ks) {
    const auto nx = static_cast<std::size_t>(grid_->nx());
    return {data_[to_int(i) - 1].data() + grid_->row(i, kt, ks) * nx, nx};
}

std::span<const std::uint16_t> BarrierField::row(InsuranceClass i, int kt, int ks) const {
    const auto nx = static_cast<std::size_t>(grid_->nx());
    return {data_[to_int(i) - 1].data() + grid_->row(i, kt, ks) * nx, nx};
}

double BarrierField::at(InsuranceClass i, int kt, int ks, int j) const {
    if (j < 0 || j >= grid_->nx()) throw std::out_of_range("wealth index outside the grid");
    return grid_->candidates()[row(i, kt, ks)[j]];
}

// ---------------------------------------------------------------------------

double interp_x(const ValueField& field, InsuranceClass i, int kt, int ks, double x) {
    const Grid& g = *field.grid();
    const auto r = field.row(i, kt, ks);
    const double pos = (x - g.x_bottom()) / g.hx();
    if (!(pos > 0.0)) return r.front();
    if (pos >= g.nx() - 1) return r.back();
    const int j = static_cast<int>(pos);
    const double w = pos - j;
    if (w == 0.0) return r[j];
    return (1.0 - w) * r[j] + w * r[j + 1];
}

double interp_value(const ValueField& field, const ModelParams& params, InsuranceClass i, double t,
                    double s, double x) {
    const Grid& g = *field.grid();
    if (t >= params.horizon_T) return params.utility(x);

    const double pos_t = std::max(0.0, t / g.h());
    const int kt0 = std::min(static_cast<int>(pos_t), g.nt() - 1);
    const double wt = std::clamp(pos_t - kt0, 0.0, 1.0);

    auto layer_value = [&](int kt) {
        double sc = std::clamp(s, 0.0, g.t(kt));
        if (i == InsuranceClass::C2) sc = std::min(sc, params.class2_reset_S);
        const double pos_s = sc / g.h();
        int ks0 = static_cast<int>(pos_s);
        double ws = pos_s - ks0;
        if (ks0 >= g.ks_max(i, kt)) {
            ks0 = g.ks_max(i, kt);
            ws = 0.0;
        }
        const double v0 = interp_x(field, i, kt, ks0, x);
        if (ws == 0.0) return v0;
        return (1.0 - ws) * v0 + ws * interp_x(field, i, kt, ks0 + 1, x);
    };

    const double lower = layer_value(kt0);
    if (wt == 0.0) return lower;
    return (1.0 - wt) * lower + wt * layer_value(kt0 + 1);
}

void apply_boundary(ValueField& field, int kt) {
    const Grid& g = *field.grid();
    if (kt < g.ns2()) return;
    const auto src = field.row(InsuranceClass::C1, kt, 0);
    auto dst = field.row(InsuranceClass::C2, kt, g.ns2());
    std::copy(src.begin(), src.end(), dst.begin());
}

void apply_boundary(ValueField& field) {
    for (int kt = field.grid()->ns2(); kt <= field.grid()->nt(); ++kt) apply_boundary(field, kt);
}

}  // namespace bm
