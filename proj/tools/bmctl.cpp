// bmctl: solve, simulate, figures and check for the two-class bonus-malus
// claim-reporting problem.

#include "bm/acceptance.hpp"
#include "bm/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace bm;

namespace {

RunSpec prepare(const std::string& config, const std::string& out) {
    RunSpec spec = load_config(config);
    apply_env_overrides(spec);
    if (!out.empty()) spec.output_dir = out;
    return spec;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Optimal claim reporting under a two-class bonus-malus system"};
    app.require_subcommand(1);

    std::string config, out, policy = "grid", init = "1,0,0,2.5";
    int threads = 0;

    auto* solve = app.add_subcommand("solve", "Solve the HJB system and write the value summary");
    solve->add_option("config", config, "JSON config")->required()->check(CLI::ExistingFile);
    solve->add_option("--out", out, "Output directory (overrides outputs.dir)");

    auto* simulate = app.add_subcommand("simulate", "Monte Carlo estimate of the value of a policy");
    simulate->add_option("config", config, "JSON config")->required()->check(CLI::ExistingFile);
    simulate->add_option("--policy", policy, "grid or const:B (B a number or inf)");
    simulate->add_option("--init", init, "Initial state i,t,s,x");
    simulate->add_option("--threads", threads, "Worker threads (overrides mc.threads)");

    auto* figures = app.add_subcommand("figures", "Write the figure series as CSV");
    figures->add_option("config", config, "JSON config")->required()->check(CLI::ExistingFile);
    figures->add_option("--out", out, "Output directory (overrides outputs.dir)");

    auto* check = app.add_subcommand("check", "Run the acceptance suite");
    check->add_option("config", config, "JSON config")->required()->check(CLI::ExistingFile);
    check->add_option("--out", out, "Output directory (overrides outputs.dir)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        RunSpec spec = prepare(config, out);
        for (const auto& w : spec.model.validate()) std::cerr << "warning: " << w << "\n";

        if (*solve) {
            const SolveResult r = run_solve(spec, spec.output_dir);
            std::cout << "solved in " << r.iterations_used << " iterations; wrote " << spec.output_dir.string()
                      << "\n";
        } else if (*simulate) {
            if (threads > 0) spec.mc.threads = static_cast<unsigned>(threads);
            const InitialState state = parse_init(init);
            std::shared_ptr<const BarrierField> barrier;
            if (policy == "grid") {
                SolveControl control = spec.control;
                control.mode = SolveControl::Mode::optimize;
                const SolveResult r = iterate(spec.model, Grid::build(spec.model, spec.grid), control);
                barrier = std::make_shared<BarrierField>(*r.barrier);
            }
            const PolicySpec pol = parse_policy(policy, barrier);
            const MCResult m = estimate_value(spec.model, pol, state, spec.mc.n_paths, spec.mc.seed, spec.mc.threads);
            nlohmann::json doc = mc_result_json(m);
            doc["policy"] = pol.label();
            doc["init"] = init;
            std::cout << doc.dump(2) << "\n";
        } else if (*figures) {
            const FigureRun run = run_figures(spec, spec.output_dir);
            std::cout << "figures from " << run.solve.iterations_used << " iterations; wrote "
                      << spec.output_dir.string() << "\n";
        } else if (*check) {
            return run_check(spec, spec.output_dir, &std::cout);
        }
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::invalid_argument& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::domain_error& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitOk;
}
