#pragma once

// The acceptance suite: ten pass/fail criteria covering exact identities,
// closed-form oracles, Monte Carlo agreement, structural properties, figure
// shapes and determinism.

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace bm {

struct RunSpec;

struct CriterionResult {
    int id = 0;  ///< 1..10; 0 for configuration validation
    std::string name;
    bool passed = false;
    std::string detail;
    std::map<std::string, double> metrics;
    double seconds = 0.0;
};

struct AcceptanceReport {
    std::vector<CriterionResult> criteria;

    bool all_passed() const;
    /// True when the configuration itself was rejected before any criterion ran.
    bool validation_failed() const;
    nlohmann::json to_json() const;
    /// One line per criterion.
    std::string summary() const;
};

/// "criterion  4 PASS solver_vs_monte_carlo: ..."
std::string format_line(const CriterionResult& r);

struct AcceptanceOptions {
    /// Thread count compared against one thread in the determinism check.
    unsigned determinism_threads = 4;
    /// Scratch space for the repeated figure runs.
    std::filesystem::path scratch_dir = "check_scratch";
    /// Called as soon as each criterion finishes.
    std::function<void(const CriterionResult&)> on_result;
};

AcceptanceReport run_acceptance(const RunSpec& spec, const AcceptanceOptions& options = {});

}  // namespace bm
