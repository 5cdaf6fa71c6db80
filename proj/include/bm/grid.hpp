#pragma once

// Discretization of the triangular domains
//   D1 = {0 <= s <= t <= T},   D2 = {0 <= s <= min(t, S)}
// with equal steps in t and s, so that the characteristics t - s = const pass
// through grid nodes, and a wealth axis padded below (jump convolution) and
// above (upwind transport inflow).

#include "bm/model.hpp"

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace bm {

struct GridSpec {
    double h_t = 0.05;  ///< time step, also the clock step
    double h_x = 0.05;  ///< wealth step
    double x_lo = 0.0;  ///< wealth window of interest
    double x_hi = 5.0;
    /// Claim integral truncation. Derived from tail_eps when absent.
    std::optional<double> y_max;
    double tail_eps = 1e-8;
    /// Spacing of the finite barrier candidates; a multiple of h_x. Defaults to h_x.
    std::optional<double> h_y;
    /// Wealth padding above x_hi. Defaults to the largest deterministic flow
    /// over the horizon plus one unit.
    std::optional<double> x_pad_hi;
    /// Wealth padding below x_lo, at least y_max. Defaults to reaching the
    /// wealth at which the utility floor becomes active.
    std::optional<double> x_pad_lo;
};

/// Node index along the time and clock axes.
struct NodeIndex {
    int kt = 0;
    int ks = 0;
    bool operator==(const NodeIndex&) const = default;
};

class Grid {
public:
    /// Throws ValidationError on CFL violation, non-divisible steps, or a
    /// claim truncation whose tail mass exceeds tail_eps.
    static std::shared_ptr<const Grid> build(const ModelParams& params, const GridSpec& spec);

    const GridSpec& spec() const { return spec_; }

    double h() const { return h_; }
    double hx() const { return hx_; }
    int nt() const { return nt_; }        ///< index of t = T
    int ns2() const { return ns2_; }      ///< index of s = S
    int nx() const { return nx_; }        ///< number of wealth nodes
    int j_lo() const { return j_lo_; }    ///< wealth index of x_lo
    int j_hi() const { return j_hi_; }    ///< wealth index of x_hi
    double x_bottom() const { return x_bottom_; }
    double x_top() const { return x_bottom_ + (nx_ - 1) * hx_; }
    double y_max() const { return y_max_; }
    int knots() const { return n_knots_; }     ///< y_max / h_x
    int stride() const { return stride_; }     ///< candidate spacing in knots
    int deductible_knots(InsuranceClass i) const { return m_knots_[to_int(i) - 1]; }

    double t(int kt) const { return kt * h_; }
    double s(int ks) const { return ks * h_; }
    double x(int j) const { return x_bottom_ + j * hx_; }

    /// Barrier candidates {0, h_y, ..., y_max, +inf}.
    const std::vector<double>& candidates() const { return candidates_; }
    int n_candidates() const { return static_cast<int>(candidates_.size()); }
    int infinite_candidate() const { return n_candidates() - 1; }
    /// Candidate index of a barrier value on the ladder (or +inf); throws otherwise.
    int candidate_index(double b) const;

    bool valid(InsuranceClass i, int kt, int ks) const;
    /// Maximal clock index at time layer kt.
    int ks_max(InsuranceClass i, int kt) const;

    std::size_t n_nodes(InsuranceClass i) const { return total_[to_int(i) - 1]; }
    /// Row number of (kt, ks) in the characteristic-major layout. Nodes on one
    /// characteristic kt - ks = d occupy consecutive rows ordered by ks.
    std::size_t row(InsuranceClass i, int kt, int ks) const;
    NodeIndex node(InsuranceClass i, std::size_t row) const;

    /// Discrete Lipschitz constant of h over [x_lo - y_max, x_top], the part
    /// of the axis a single claim can reach from the window.
    double utility_lipschitz(const ModelParams& p) const;

private:
    Grid() = default;
    int line_length(InsuranceClass i, int d) const;

    GridSpec spec_;
    double h_ = 0, hx_ = 0, x_bottom_ = 0, y_max_ = 0;
    int nt_ = 0, ns2_ = 0, nx_ = 0, j_lo_ = 0, j_hi_ = 0;
    int n_knots_ = 0, stride_ = 1;
    int m_knots_[2] = {0, 0};
    std::vector<double> candidates_;
    std::vector<std::size_t> offsets_[2];
    std::size_t total_[2] = {0, 0};
};

using GridPtr = std::shared_ptr<const Grid>;

/// Paired value surfaces V1, V2 over the D1 and D2 nodes; each node holds a
/// contiguous row of nx wealth values.
class ValueField {
public:
    ValueField() = default;
    explicit ValueField(GridPtr grid, double fill = 0.0);

    const GridPtr& grid() const { return grid_; }

    std::span<double> row(InsuranceClass i, int kt, int ks);
    std::span<const double> row(InsuranceClass i, int kt, int ks) const;
    double at(InsuranceClass i, int kt, int ks, int j) const { return row(i, kt, ks)[checked_j(j)]; }

    std::vector<double>& data(InsuranceClass i) { return data_[to_int(i) - 1]; }
    const std::vector<double>& data(InsuranceClass i) const { return data_[to_int(i) - 1]; }

private:
    int checked_j(int j) const;
    GridPtr grid_;
    std::vector<double> data_[2];
};

/// Markovian barrier b(i, t, s, x), stored as candidate indices.
class BarrierField {
public:
    BarrierField() = default;
    explicit BarrierField(GridPtr grid, int fill_candidate = 0);

    const GridPtr& grid() const { return grid_; }

    std::span<std::uint16_t> row(InsuranceClass i, int kt, int ks);
    std::span<const std::uint16_t> row(InsuranceClass i, int kt, int ks) const;
    /// Barrier value (possibly +inf) at a node.
    double at(InsuranceClass i, int kt, int ks, int j) const;

private:
    GridPtr grid_;
    std::vector<std::uint16_t> data_[2];
};

/// Linear interpolation in x at node (kt, ks), clamped flat beyond both ends.
double interp_x(const ValueField& field, InsuranceClass i, int kt, int ks, double x);

/// Value at an arbitrary state: linear in t between layers, linear in s within
/// a layer (s clamped to the layer's clock range), linear in x. At t = T this
/// returns h(x) exactly.
double interp_value(const ValueField& field, const ModelParams& params, InsuranceClass i,
                    double t, double s, double x);

/// Copies V1(t, 0, .) into V2(t, S, .) on every layer with t >= S.
void apply_boundary(ValueField& field);
/// Same, for a single time layer.
void apply_boundary(ValueField& field, int kt);

}  // namespace bm
