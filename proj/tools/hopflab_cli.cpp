// hopflab: batch front end. Runs the command named in a JSON configuration
// and writes its artifacts to the output directory.

#include <CLI11.hpp>

#include "hopflab/cli.hpp"

int main(int argc, char** argv)
{
    CLI::App app{"Flux-tube helicity and asymptotic linking computations"};
    std::string config;
    std::string output;
    std::uint64_t seed = 0;
    unsigned workers = 0;
    bool quiet = false;
    app.add_option("--config", config, "Run configuration (JSON)")->required();
    auto* out_opt = app.add_option("--output", output, "Output directory (overrides the config)");
    auto* seed_opt = app.add_option("--seed", seed, "Random seed (overrides the config)");
    auto* workers_opt = app.add_option("--workers", workers, "Worker threads (default: available cores)")
                            ->check(CLI::PositiveNumber);
    app.add_flag("--quiet", quiet, "Suppress progress output");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : hopflab::exit_validation;
    }

    hopflab::RunOptions ro;
    if (*out_opt)
        ro.output_dir = output;
    if (*seed_opt)
        ro.seed = seed;
    if (*workers_opt)
        ro.workers = workers;
    ro.quiet = quiet;
    return hopflab::run_file(config, ro);
}
