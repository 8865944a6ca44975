#include <CLI11.hpp>

#include <ostream>

#include "faceval/errors.hpp"
#include "faceval/evaluator.hpp"
#include "faceval/metrics.hpp"
#include "faceval_app/commands.hpp"

namespace faceval::app {

namespace {

struct Overrides {
    std::string config;
    std::optional<std::string> output_dir;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> aspects;
    std::optional<std::string> instructions;
    std::optional<std::string> mode;
    std::optional<std::string> estimator;
    std::optional<int> samples;
    std::optional<int> iterations;
    std::optional<std::size_t> beam_width;
    std::optional<std::size_t> candidates;
    std::optional<int> gradients;
    std::optional<double> exploration;
    std::optional<std::size_t> final_size;
    std::optional<std::string> correlation;
    std::optional<std::string> count_mode;
    bool combined = false;
    std::optional<std::size_t> trials;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("-c,--config", o.config, "Run config (JSON)")->required();
    cmd->add_option("-o,--output-dir", o.output_dir, "Override output_dir");
    cmd->add_option("--seed", o.seed, "Override the master seed")->default_str("0");
    cmd->add_option("-a,--aspect", o.aspects, "Aspect to process (repeatable; default: all corpus aspects)");
}

RunConfig apply(const Overrides& o) {
    RunConfig c = RunConfig::from_file(o.config);
    if (o.output_dir) c.output_dir = *o.output_dir;
    if (o.seed) c.seed = *o.seed;
    if (!o.aspects.empty()) c.aspects = o.aspects;
    if (o.instructions) c.instructions = *o.instructions;
    if (o.mode) c.mode = *o.mode;
    if (o.estimator) c.evaluation.estimator = estimator_from_string(*o.estimator);
    auto& hp = c.hyperparams;
    if (o.samples) hp.samples = *o.samples;
    if (o.iterations) hp.iterations = *o.iterations;
    if (o.beam_width) hp.beam_width = *o.beam_width;
    if (o.candidates) hp.candidates_kept = *o.candidates;
    if (o.gradients) hp.gradients = *o.gradients;
    if (o.exploration) hp.exploration = *o.exploration;
    if (o.final_size) hp.final_set_size = *o.final_size;
    if (o.correlation) hp.correlation = metrics::correlation_from_string(*o.correlation);
    if (o.count_mode) hp.count_mode = count_mode_from_string(*o.count_mode);
    if (o.combined) hp.combined = true;
    if (o.trials) c.report.trials = *o.trials;
    if (c.mode != "face" && c.mode != "direct") throw ConfigError("--mode must be face or direct");
    hp.validate();
    return c;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"faceval: fine-grained, reference-free conversation evaluation"};
    app.require_subcommand(1);
    Overrides o;
    OptimizeFlags flags;

    auto* decompose = app.add_subcommand("decompose", "Split every system turn of the corpus into particles");
    add_common(decompose, o);

    auto* evaluate = app.add_subcommand("evaluate", "Score every unit of the requested aspects");
    add_common(evaluate, o);
    evaluate->add_option("--instructions", o.instructions, "Instruction set file (face mode)");
    evaluate->add_option("--mode", o.mode, "face or direct")->default_str("face");
    evaluate->add_option("--estimator", o.estimator, "empirical or logprob")->default_str("empirical");
    evaluate->add_option("-n,--samples", o.samples, "Samples per particle score")->default_str("5");

    auto* optimize = app.add_subcommand("optimize", "Search evaluation instructions and export the final set");
    add_common(optimize, o);
    optimize->add_option("--instructions", o.instructions, "Where to write the instruction set");
    optimize->add_option("-K,--iterations", o.iterations, "Optimization iterations")->default_str("6");
    optimize->add_option("-b,--beam-width", o.beam_width, "Instructions carried between iterations")->default_str("4");
    optimize->add_option("--candidates", o.candidates, "Candidates kept per iteration by the bandit")->default_str("16");
    optimize->add_option("--gradients", o.gradients, "Critiques per instruction and particle")->default_str("2");
    optimize->add_option("--exploration", o.exploration, "UCB exploration constant")->default_str("1");
    optimize->add_option("-n,--samples", o.samples, "Samples per particle score")->default_str("5");
    optimize->add_option("--final-size", o.final_size, "Size of the exported instruction set")->default_str("16");
    optimize->add_option("--correlation", o.correlation, "pearson or spearman")->default_str("pearson");
    optimize->add_option("--count-mode", o.count_mode, "Bandit count update: samples or pulls")->default_str("samples");
    optimize->add_flag("--combined", o.combined, "Critique and rewrite in one call");
    optimize->add_flag("--resume", flags.resume, "Continue from the pool checkpoint when present");
    optimize->add_option("--stop-after", flags.stop_after, "Stop after this iteration (checkpoint kept)");
    optimize->add_flag("--reselect-only", flags.reselect_only,
                       "Re-select the final set from the checkpointed pool on the validation split");

    auto* report = app.add_subcommand("report", "Write correlation tables and plot data");
    add_common(report, o);
    report->add_option("--trials", o.trials, "Subsampling trials per sample-efficiency point")->default_str("200");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kExitOk : kExitConfig;
    }

    try {
        const RunConfig config = apply(o);
        if (report->parsed()) return cmd_report(config, err);
        Gateway gateway(make_backend(config.backend), gateway_options(config.backend));
        if (decompose->parsed()) return cmd_decompose(config, gateway, err);
        if (evaluate->parsed()) return cmd_evaluate(config, gateway, err);
        return cmd_optimize(config, gateway, flags, err);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const SchemaError& e) {
        err << "input error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const BackendError& e) {
        err << "backend error after " << e.attempts() << " attempt(s): " << e.what() << "\n";
        return kExitBackend;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

}  // namespace faceval::app
