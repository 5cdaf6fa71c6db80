#pragma once

// Event-driven Monte Carlo simulation of the controlled process
// (I, t, S, X). Between events the clock and wealth follow the closed-form
// flow; the only randomness is the claim arrival times and sizes.

#include "bm/grid.hpp"
#include "bm/model.hpp"
#include "bm/solver.hpp"

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace bm {

struct InitialState {
    InsuranceClass cls = InsuranceClass::C1;
    double t = 0.0;
    double s = 0.0;
    double x = 0.0;
};

/// Reporting rule: report a claim of size y iff y > b(state).
class PolicySpec {
public:
    enum class Kind { constant, grid };

    static PolicySpec constant(double b);
    /// Nearest (t, s) node; linear in x, then rounded to the candidate ladder.
    static PolicySpec from_grid(std::shared_ptr<const BarrierField> field);

    Kind kind() const { return kind_; }
    double barrier(InsuranceClass i, double t, double s, double x) const;
    std::string label() const;

private:
    Kind kind_ = Kind::constant;
    double constant_ = 0.0;
    std::shared_ptr<const BarrierField> field_;
};

struct PathEvent {
    enum class Kind { claim, class_upgrade };
    Kind kind = Kind::claim;
    double time = 0.0;
    double size = 0.0;      ///< claim size, 0 for upgrades
    bool reported = false;
};

struct PathRecord {
    InitialState init;
    std::vector<PathEvent> events;
    double terminal_wealth = 0.0;
    double terminal_utility = 0.0;
};

struct MCResult {
    double mean = 0.0;
    double std_error = 0.0;  ///< sample standard deviation / sqrt(n_paths)
    std::uint64_t n_paths = 0;
    std::uint64_t seed = 0;
};

/// Independent random stream of path `index` under `seed`.
class PathStream {
public:
    PathStream(std::uint64_t seed, std::uint64_t index);
    /// Uniform on [0, 1).
    double uniform();

private:
    std::mt19937_64 engine_;
};

/// Deterministic in (seed, path_index, inputs).
PathRecord sample_path(const ModelParams& params, const PolicySpec& policy, const InitialState& init,
                       std::uint64_t seed, std::uint64_t path_index = 0);

/// Replays an event log through the flow and retention; returns X_T.
double replay_wealth(const ModelParams& params, const PathRecord& path);

MCResult estimate_value(const ModelParams& params, const PolicySpec& policy, const InitialState& init,
                        std::uint64_t n_paths, std::uint64_t seed, unsigned threads = 1);

struct DppResult {
    double residual = 0.0;
    double std_error = 0.0;
    double value_at_init = 0.0;
    double mc_mean = 0.0;
};

/// |V(init) - E[V(state at tau)]| with tau the first event, init.t + horizon,
/// or T, whichever comes first, simulated under the solve's extracted policy.
DppResult dpp_residual(const ModelParams& params, const SolveResult& solve, const InitialState& init,
                       std::uint64_t n_paths, std::uint64_t seed, double horizon, unsigned threads = 1);

struct PolicyRow {
    std::string label;
    std::size_t input_index = 0;
    double mean = 0.0;
    double std_error = 0.0;
    /// Standard error of the per-path difference to the first listed policy.
    double paired_std_error = 0.0;
};

/// Evaluates every policy on the same claim streams; rows sorted by mean,
/// best first.
std::vector<PolicyRow> compare_policies(const ModelParams& params, std::span<const PolicySpec> policies,
                                        const InitialState& init, std::uint64_t n_paths, std::uint64_t seed,
                                        unsigned threads = 1);

}  // namespace bm
