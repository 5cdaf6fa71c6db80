#pragma once

// Run configuration, orchestration of the solve / simulate / figures / check
// commands, and CSV/JSON export.

#include "bm/grid.hpp"
#include "bm/model.hpp"
#include "bm/simulator.hpp"
#include "bm/solver.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace bm {

struct McSpec {
    std::uint64_t n_paths = 100000;
    std::uint64_t seed = 20261016;
    unsigned threads = 1;
};

struct RunSpec {
    ModelParams model;
    GridSpec grid;
    SolveControl control;
    McSpec mc;
    /// Extra artifacts for `solve`: "value_field", "barrier_field".
    std::vector<std::string> artifacts;
    std::filesystem::path output_dir = "out";
};

/// Parses a RunSpec document. Unknown keys and missing model keys are
/// ValidationErrors naming the offending key path.
RunSpec parse_config(const nlohmann::json& doc);
RunSpec load_config(const std::filesystem::path& path);
nlohmann::json serialize(const RunSpec& spec);

/// Applies BMCTL_SEED and BMCTL_N_PATHS from the environment, if set.
void apply_env_overrides(RunSpec& spec);

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitNumerical = 2, kExitAcceptance = 3 };

/// Formats a number with 12 significant digits.
std::string format_number(double v);

/// Scheme description and grid metadata recorded next to every output.
nlohmann::json run_metadata(const RunSpec& spec, const Grid& grid, const SolveResult& result);

/// Solves with spec.control and writes solve_summary.json, run_meta.json and
/// any requested field artifacts.
SolveResult run_solve(const RunSpec& spec, const std::filesystem::path& out_dir);

struct Series {
    std::string file;  ///< e.g. "fig1.csv"
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

struct FigureRun {
    GridPtr grid;
    SolveResult solve;
    std::vector<Series> series;  ///< fig1, fig2, fig3, fig4a, fig4b
};

/// Fixed-count optimize solve (paper_mode) and the series behind the figures. Infinite
/// barriers are reported as y_max so that every value is finite.
FigureRun compute_figures(const RunSpec& spec);
void write_series(const Series& series, const std::filesystem::path& out_dir);

/// compute_figures, then writes the CSVs and run_meta.json. Partial outputs
/// are removed when anything fails.
FigureRun run_figures(const RunSpec& spec, const std::filesystem::path& out_dir);

/// Parses "grid" or "const:B" (B a number or "inf").
PolicySpec parse_policy(const std::string& text, const std::shared_ptr<const BarrierField>& grid_barrier);
/// Parses "i,t,s,x".
InitialState parse_init(const std::string& text);

nlohmann::json mc_result_json(const MCResult& r);

/// Runs the acceptance suite, writes check_report.json and check_summary.txt,
/// and returns kExitOk iff every criterion passed. Result lines are streamed
/// to `progress` when given.
int run_check(const RunSpec& spec, const std::filesystem::path& out_dir, std::ostream* progress = nullptr);

}  // namespace bm
