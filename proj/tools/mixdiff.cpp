#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mixdiff/error.hpp"
#include "mixdiff/pipeline.hpp"

namespace {

int fail(const std::string& kind, const std::string& what, int code) {
    std::cerr << nlohmann::json{{"error", kind}, {"message", what}}.dump() << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mixdiff: diffusion synthesis and evaluation of mixed-type longitudinal records"};
    app.require_subcommand(1, 1);

    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    bool plots = false, quiet = false, verbose = false;

    const char* commands[][2] = {
        {"toygen", "generate the toy cohort (train and holdout CSVs plus schema)"},
        {"train", "train the noise predictor and write checkpoints and the loss log"},
        {"sample", "draw synthetic patients from a checkpoint"},
        {"evaluate", "fidelity and structure metrics of synthetic against real"},
        {"privacy", "minimum distance and disclosure risk"},
        {"utility", "offline-RL policy comparison"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "override the run seed");
        sub->add_option("--out", out, "override the output directory");
        sub->add_flag("--plots", plots, "also render SVG figures from the CSV artifacts");
        sub->add_flag("-q,--quiet", quiet, "only errors on stderr");
        sub->add_flag("-v,--verbose", verbose, "per-iteration progress");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        return fail("usage", e.what(), 2);
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        mixdiff::RunConfig::Overrides o;
        if (app.get_subcommands().front()->count("--seed")) o.seed = seed;
        if (!out.empty()) o.output_dir = out;
        if (plots) o.plots = true;
        o.verbosity = quiet ? 0 : verbose ? 2 : 1;
        const auto cfg = mixdiff::RunConfig::load(config, o);
        const auto summary = mixdiff::run_command(command, cfg);
        std::cout << summary.dump(2) << '\n';
        return 0;
    } catch (const mixdiff::UsageError& e) {
        return fail(e.kind(), e.what(), 2);
    } catch (const mixdiff::Error& e) {
        return fail(e.kind(), e.what(), 1);
    } catch (const nlohmann::json::exception& e) {
        return fail("config", e.what(), 2);
    } catch (const std::exception& e) {
        return fail("internal", e.what(), 1);
    }
}
