// Runs the acceptance suite on the shipped Table 1 configuration and prints
// one line per criterion.

#include "bm/acceptance.hpp"
#include "bm/cli.hpp"

#include <filesystem>
#include <iostream>

int main(int argc, char** argv) {
    const std::filesystem::path config = argc > 1 ? argv[1] : BM_SOURCE_DIR "/configs/table1.json";
    bm::RunSpec spec = bm::load_config(config);
    bm::apply_env_overrides(spec);

    bm::AcceptanceOptions opts;
    opts.scratch_dir = std::filesystem::temp_directory_path() / "bm_acceptance_scratch";
    opts.on_result = [](const bm::CriterionResult& r) { std::cout << bm::format_line(r) << std::endl; };
    const bm::AcceptanceReport report = bm::run_acceptance(spec, opts);
    std::filesystem::remove_all(opts.scratch_dir);

    const bool ok = report.all_passed();
    std::cout << (ok ? "acceptance: all criteria passed" : "acceptance: FAILED") << std::endl;
    return ok ? 0 : 1;
}
