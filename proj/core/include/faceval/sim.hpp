#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "faceval/evaluator.hpp"
#include "faceval/gateway.hpp"
#include "faceval/model.hpp"

namespace faceval::sim {

struct OracleParticle {
    std::string mention;
    int gold = 0;
};

/// A synthetic judge. An instruction's quality q is the fraction of `good_tokens` its text
/// contains. Each sampled score equals the particle's gold score with probability q and is
/// uniform over the scale otherwise, so q = 1 is noiseless.
struct OracleWorld {
    std::uint64_t seed = 0;
    std::string aspect = "Relevance";
    int min_score = 0;
    int max_score = 3;
    std::vector<std::string> good_tokens;
    std::vector<OracleParticle> particles;

    double quality(std::string_view instruction_text) const;
    std::vector<std::string> missing_tokens(std::string_view instruction_text) const;
    std::optional<int> gold(std::string_view mention) const;

    static OracleWorld from_json(const json& doc);
    static OracleWorld from_file(const std::filesystem::path& path);
    json to_json() const;
};

/// Backend that answers every prompt kind from an OracleWorld. Pure function of (world, request).
///   evaluation    -> "Score: N" drawn from the world's noise model
///   gradient      -> a critique naming one planted token the instruction lacks
///   rewrite       -> the current instruction plus the token named in the feedback
///   combined      -> both of the above in one completion
///   decomposition -> one particle per target response (mention = response text)
///   direct        -> uniform noise
/// Unrecognised prompts throw ConfigError in strict mode and yield empty completions otherwise.
class OracleBackend : public Backend {
public:
    explicit OracleBackend(OracleWorld world, bool strict = true, std::string id = "oracle");

    std::string id() const override { return id_; }
    GenResponse generate(const GenRequest& req) override;
    const OracleWorld& world() const noexcept { return world_; }

private:
    OracleWorld world_;
    bool strict_;
    std::string id_;
};

/// Planted tokens used when a world does not list its own.
const std::vector<std::string>& default_tokens();

struct SyntheticOptions {
    std::size_t dialogues = 12;
    std::size_t systems = 3;
    std::size_t tokens = 4;
    std::uint64_t seed = 0;
};

/// Small corpus with one system turn and one particle per dialogue, gold labels spread over the
/// Relevance scale, and the matching OracleWorld.
struct SyntheticCorpus {
    AspectSpec aspect;
    std::vector<Dialogue> dialogues;
    std::vector<AnnotationRecord> annotations;
    ParticleMap particles;
    OracleWorld world;
};

SyntheticCorpus make_synthetic_corpus(const SyntheticOptions& options);

}  // namespace faceval::sim
