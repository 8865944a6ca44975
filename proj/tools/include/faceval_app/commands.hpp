#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "faceval/corpus.hpp"
#include "faceval/gateway.hpp"
#include "faceval_app/run_config.hpp"

namespace faceval::app {

enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitConfig = 2,
    kExitBackend = 3,
    kExitPartial = 4,
};

struct OptimizeFlags {
    bool resume = false;
    std::optional<int> stop_after;
    bool reselect_only = false;
};

/// Filesystem-safe, lowercase form of an aspect name ("TaskCompletion" -> "taskcompletion").
std::string slug(std::string_view name);

/// Aspects requested by the config (or every corpus aspect), validated against the registry.
std::vector<std::string> resolve_aspects(const RunConfig& config, const Corpus& corpus);

/// Cached particles of every dialogue. Throws ConfigError naming the first missing cache file.
ParticleMap load_particles(const RunConfig& config, const Corpus& corpus);

std::filesystem::path score_table_path(const RunConfig& config, std::string_view aspect, std::string_view method);
std::filesystem::path particle_scores_path(const RunConfig& config, std::string_view aspect);

int cmd_decompose(const RunConfig& config, Gateway& gateway, std::ostream& log);
int cmd_evaluate(const RunConfig& config, Gateway& gateway, std::ostream& log);
int cmd_optimize(const RunConfig& config, Gateway& gateway, const OptimizeFlags& flags, std::ostream& log);
int cmd_report(const RunConfig& config, std::ostream& log);

/// Parses arguments, runs one subcommand and maps errors to exit codes.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace faceval::app
