#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "faceval/gateway.hpp"
#include "faceval/model.hpp"

namespace faceval {

/// An (act, mention, feedback) triple as emitted by the decomposer model, before ids are assigned.
struct ParticleDraft {
    DialogueAct act = DialogueAct::Others;
    std::string mention;
    std::optional<std::string> feedback;

    friend bool operator==(const ParticleDraft&, const ParticleDraft&) = default;
};

/// Case-insensitive act mapping with a small synonym table; anything unmapped is Others.
DialogueAct normalize_act(std::string_view raw);

/// Parses a JSON array of {act, mention, feedback}. Tolerates surrounding prose or code
/// fences by reading from the first '[' to the last ']'. Throws SchemaError on malformed
/// JSON, a missing act/mention key, or an empty mention.
std::vector<ParticleDraft> parse_particles(std::string_view raw);

struct DecomposerOptions {
    std::size_t history_word_budget = 2048;  // 0 = unlimited
    int parse_retries = 3;                   // resamples after a failed parse
    double temperature = kDefaultTemperature;
    int max_tokens = 1024;
    std::uint64_t seed = 0;
    std::size_t workers = 4;  // concurrent per-turn calls in decompose_dialogue
};

class Decomposer {
public:
    explicit Decomposer(Gateway& gateway, DecomposerOptions options = {}) : gateway_(gateway), options_(options) {}

    /// Particles of one system response. `history` is every utterance before `response`.
    std::vector<Particle> decompose(const std::string& dialogue_id, const std::vector<Utterance>& history,
                                    const Utterance& response, const std::optional<Utterance>& user_reply) const;

    /// Particles of every system turn of `d`, in turn order.
    std::vector<Particle> decompose_dialogue(const Dialogue& d) const;

    const DecomposerOptions& options() const noexcept { return options_; }

private:
    Gateway& gateway_;
    DecomposerOptions options_;
};

/// JSON-lines particle cache, one file per dialogue.
std::filesystem::path particle_cache_path(const std::filesystem::path& dir, const std::string& dialogue_id);
void write_particles(const std::filesystem::path& path, const std::vector<Particle>& particles);
std::vector<Particle> read_particles(const std::filesystem::path& path);

}  // namespace faceval
