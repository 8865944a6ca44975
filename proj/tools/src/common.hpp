#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "faceval/corpus.hpp"
#include "faceval/evaluator.hpp"
#include "faceval_app/run_config.hpp"

namespace faceval::app {

Corpus load_run_corpus(const RunConfig& config);

void write_particle_results(const std::filesystem::path& path, const std::string& aspect,
                            const std::vector<ParticleResult>& results, const std::string& config_hash);
std::vector<ParticleResult> read_particle_results(const std::filesystem::path& path);

/// Writes `content` to `path`, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& content);

}  // namespace faceval::app
