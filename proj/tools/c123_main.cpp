#include <CLI11.hpp>

#include <cstdio>
#include <optional>
#include <string>

#include "c123/commands.hpp"
#include "c123/config.hpp"
#include "c123/errors.hpp"

using namespace c123;

int main(int argc, char** argv) {
    CLI::App app{"consistent multi-view synthesis at desk scale"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<uint64_t> seed_override;
    int jobs = static_cast<int>(std::thread::hardware_concurrency());
    std::string out_dir = "run";
    std::string ablate_axis = "pcfg_kind";

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "config file (defaults apply when omitted)");
        cmd->add_option("--seed", seed_override, "override the root seed");
        cmd->add_option("--jobs", jobs, "worker pool size for per-object fan-out");
        cmd->add_option("--out", out_dir, "run directory");
    };

    CLI::App* dataset = app.add_subcommand("dataset", "render the posed multi-view dataset");
    add_common(dataset);
    CLI::App* train = app.add_subcommand("train", "train a stage (train.stage = base|consistency)");
    add_common(train);
    CLI::App* sample = app.add_subcommand("sample", "synthesize novel views from a checkpoint");
    add_common(sample);
    CLI::App* eval = app.add_subcommand("eval", "score a view set (eval.mode = consistency|gt)");
    add_common(eval);
    CLI::App* ablate = app.add_subcommand("ablate", "sweep one axis with everything else fixed");
    add_common(ablate);
    ablate->add_option("--axis", ablate_axis, "pcfg_kind | ssa_placement | n_sample_views");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = config_path.empty() ? RunConfig{} : parse_config_file(config_path);
        if (seed_override) cfg.seed = *seed_override;
        if (jobs < 1) jobs = 1;

        if (dataset->parsed()) cmd_dataset(cfg, out_dir, jobs);
        if (train->parsed()) cmd_train(cfg, out_dir);
        if (sample->parsed()) cmd_sample(cfg, out_dir);
        if (eval->parsed()) cmd_eval(cfg, out_dir, jobs);
        if (ablate->parsed()) cmd_ablate(cfg, out_dir, ablate_axis, jobs);
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
