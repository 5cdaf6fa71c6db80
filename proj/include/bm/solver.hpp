#pragma once

// Jump-count iteration for the coupled HJB system.
//
// Iterate n+1 is obtained from iterate n by a backward sweep along the
// characteristics t - s = const. Per step of length h the wealth is shifted
// by the exact flow increment and interpolated upwind (U); the claim term
// enters through an exponential integrator with a source linear in time:
//
//   v^{n+1}(t) = e^{-lambda h} U[v^{n+1}(t + h)] + w0 G(t) + w1 U[G(t + h)]
//
// where G = G_b[v^n] is the expected post-claim value under barrier b and
// w0 + w1 = 1 - e^{-lambda h}. In optimize mode b maximizes G_b pointwise
// over the candidate ladder.

#include "bm/grid.hpp"
#include "bm/model.hpp"

#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace bm {

struct StopRule {
    enum class Kind { fixed_iterations, sup_change_below };
    Kind kind = Kind::sup_change_below;
    int n = 0;
    double tol = 1e-6;

    static StopRule fixed(int n) { return {Kind::fixed_iterations, n, 0.0}; }
    static StopRule sup_change(double tol) { return {Kind::sup_change_below, 0, tol}; }
};

struct SolveControl {
    enum class Mode { fixed_barrier, optimize };
    static constexpr int kPaperIterations = 5;

    Mode mode = Mode::optimize;
    /// Used in fixed mode when no barrier field is given. Must lie on the
    /// candidate ladder or be +inf.
    double constant_barrier = std::numeric_limits<double>::infinity();
    std::shared_ptr<const BarrierField> barrier_field;
    StopRule stop = StopRule::sup_change(1e-6);
    /// Forces exactly kPaperIterations iterations.
    bool paper_mode = false;
    int max_iterations = 200;
    unsigned threads = 1;

    static SolveControl optimize() { return {}; }
    static SolveControl fixed(double b) {
        SolveControl c;
        c.mode = Mode::fixed_barrier;
        c.constant_barrier = b;
        return c;
    }
    void validate() const;
    StopRule effective_stop() const {
        return paper_mode ? StopRule::fixed(kPaperIterations) : stop;
    }
};

struct SolveResult {
    ValueField value;
    /// Barrier chosen in the final sweep; present in optimize mode once at
    /// least one sweep ran.
    std::optional<BarrierField> barrier;
    int iterations_used = 0;
    /// max |v^{n+1} - v^n| over the wealth window, one entry per sweep.
    std::vector<double> sup_change_history;
    /// max (v^{n+1} - v^n) over all nodes, one entry per sweep.
    std::vector<double> max_increase_history;
};

/// Cell weights of the product trapezoid rule on the knots y_l = l h_x: over
/// [y_l, y_{l+1}] a piecewise-linear integrand g integrates against dF to
/// lower[l] g(y_l) + upper[l] g(y_{l+1}) exactly.
class JumpQuadrature {
public:
    JumpQuadrature(const ModelParams& params, const Grid& grid);

    std::span<const double> lower() const { return lower_; }
    std::span<const double> upper() const { return upper_; }
    /// 1 - F(y_k) for k = 0..K.
    std::span<const double> survival() const { return survival_; }

private:
    std::vector<double> lower_, upper_, survival_;
};

/// The jump terms of the generator at (t_kt, s_ks, x) under barrier b:
///   lambda [ int_0^b v_i(t,s,x-y) dF + int_b^inf v_2(t,0,x-r(y,m_i)) dF ].
/// b must be a ladder candidate or +inf. Field lookups go through interp_x.
double jump_operator(const ValueField& prev, const ModelParams& params, InsuranceClass i, int kt, int ks,
                     double x, double b);

/// Maximum of jump_operator over the candidates and the smallest maximizer.
std::pair<double, double> optimal_jump_operator(const ValueField& prev, const ModelParams& params,
                                                InsuranceClass i, int kt, int ks, double x,
                                                std::span<const double> candidates);

/// v^0 from the closed forms at every node.
ValueField initial_iterate(const ModelParams& params, const GridPtr& grid);

/// Fills `current` with the next iterate, backward in time from h(x) at T.
/// Records the chosen barriers into `barrier_out` when it is non-null.
void sweep_characteristic(const ValueField& prev_iterate, ValueField& current, const ModelParams& params,
                          const SolveControl& control, BarrierField* barrier_out = nullptr);

/// Runs the jump-count iteration from v^0 until the stop rule fires.
/// Throws NumericalError when sup_change_below does not fire within
/// control.max_iterations sweeps.
SolveResult iterate(const ModelParams& params, const GridPtr& grid, const SolveControl& control);

}  // namespace bm
