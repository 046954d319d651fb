#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "classkit/commands.hpp"

namespace {

void add_common(CLI::App* cmd, classkit::CliOptions& o) {
    cmd->add_option("--config", o.config, "JSON config document")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "Run seed (overrides config and CLASSKIT_SEED)");
    cmd->add_option("--out", o.out, "Artifact directory")->capture_default_str();
    cmd->add_option("--threads", o.threads, "Worker thread cap");
    cmd->add_option("--k-quantile", o.k_quantile, "Fraction of smallest window distances kept as positives");
    cmd->add_option("--window", o.window, "DTW window length");
    cmd->add_option("--metric", o.metric, "dtw|l2");
    cmd->add_option("--weighting", o.weighting, "soft|hard");
    cmd->add_option("--hetero", o.hetero, "fixed|rand_rot|dyn_rot|rand_appearance");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"classkit: action-sequence contrastive retrieval on a 2D toy benchmark"};
    app.require_subcommand(1);
    classkit::CliOptions opts;
    const std::vector<std::pair<std::string, std::string>> help{
        {"collect", "Collect scripted demonstrations"},
        {"mine", "Mine positive window pairs"},
        {"train", "Train the contrastive encoder"},
        {"train-bc", "Train the behaviour-cloning baseline"},
        {"eval", "Evaluate the configured methods"},
        {"ablate", "Run the design-choice ablation grid"},
        {"diag-kl", "Dump per-anchor loss, KL and entropy"},
        {"export-embeddings", "Write per-timestep latents as CSV"}};
    for (const auto& [name, text] : help) {
        CLI::App* cmd = app.add_subcommand(name, text);
        add_common(cmd, opts);
        if (name == "eval") cmd->add_option("--eval-every", opts.eval_every, "Evaluate every N epochs and report the best");
        if (name == "ablate")
            cmd->add_option("--axis", opts.axes, "weighting|window|metric|k_quantile (repeatable; default all)");
        if (name == "diag-kl") cmd->add_option("--batches", opts.diag_batches, "Batches to sample")->capture_default_str();
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }
    const std::string name = app.get_subcommands().front()->get_name();
    return classkit::run_command(name, opts, std::getenv("CLASSKIT_SEED"), std::cout, std::cerr);
}
