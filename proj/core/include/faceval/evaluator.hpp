#pragma once

#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "faceval/gateway.hpp"
#include "faceval/model.hpp"

namespace faceval {

/// How sampled scores are weighted into a particle score.
enum class Estimator {
    Empirical,  // each distinct score weighted by its frequency among the samples
    LogProb,    // weights from backend-reported sequence log-probabilities; Empirical when absent
};

std::string to_string(Estimator e);
Estimator estimator_from_string(std::string_view s);

/// Frequency-weighted sum: sum over distinct s of s * count(s) / |samples|.
double weighted_score(std::span<const int> samples);

/// Softmax-of-logprob weighted sum. Falls back to weighted_score when any logprob is missing.
double weighted_score(std::span<const int> samples, std::span<const std::optional<double>> logprobs);

/// Mean that does not depend on the order of `values` (sums in sorted order).
double stable_mean(std::span<const double> values);

struct ParticleScore {
    std::string particle_id;
    std::string instruction_id;
    std::vector<int> samples;
    double value = 0.0;
};

struct ScoreRow {
    UnitRef unit;
    double score = 0.0;

    friend bool operator==(const ScoreRow&, const ScoreRow&) = default;
};

struct ScoreProvenance {
    std::string method = "face";  // "face" or "direct"
    std::vector<std::string> instruction_ids;
    std::string backend_id;
    std::uint64_t seed = 0;
    int samples = 0;
    std::string estimator = "empirical";
    std::string config_hash;

    friend bool operator==(const ScoreProvenance&, const ScoreProvenance&) = default;
};

struct ScoreTable {
    std::string aspect;
    AspectLevel level = AspectLevel::Turn;
    std::vector<ScoreRow> rows;  // sorted by (dialogue_id, turn_index)
    ScoreProvenance provenance;

    std::optional<double> find(const UnitRef& unit) const;
    friend bool operator==(const ScoreTable&, const ScoreTable&) = default;
};

/// JSON-lines: a header record with provenance, then one row per unit in stable order.
void write_score_table(const std::filesystem::path& path, const ScoreTable& table);
ScoreTable read_score_table(const std::filesystem::path& path);

struct UnitFailure {
    UnitRef unit;
    std::string error;
};

/// Ensemble score of one particle (mean over instructions), kept for per-act and per-turn breakdowns.
struct ParticleResult {
    std::string particle_id;
    std::string dialogue_id;
    int turn_index = 0;
    DialogueAct act = DialogueAct::Others;
    double score = 0.0;
};

struct CorpusScores {
    ScoreTable table;
    std::vector<UnitFailure> failures;
    std::vector<UnitRef> skipped;  // turn units without particles
    std::vector<ParticleResult> particles;

    bool complete() const noexcept { return failures.empty(); }
};

using DialogueMap = std::map<std::string, Dialogue>;
using ParticleMap = std::map<std::string, std::vector<Particle>>;  // dialogue_id -> particles

struct EvaluatorOptions {
    int samples = 5;
    double temperature = kDefaultTemperature;
    int max_tokens = 512;
    std::uint64_t seed = 0;
    int parse_retries = 3;
    Estimator estimator = Estimator::Empirical;
    std::size_t workers = 8;
    bool memoize = true;
};

class Evaluator {
public:
    /// `dialogues`, when given, supplies the context rendered around each particle.
    Evaluator(Gateway& gateway, AspectRegistry aspects, EvaluatorOptions options = {},
              const DialogueMap* dialogues = nullptr);

    ParticleScore score_particle(const Instruction& instruction, const Particle& particle) const;
    double particle_score(const Instruction& instruction, const Particle& particle) const;

    /// Mean particle score over a non-empty particle list of one unit.
    double unit_score(const Instruction& instruction, std::span<const Particle> particles) const;

    /// Mean of unit_score over a non-empty instruction set for one aspect.
    double face_score(std::span<const Instruction> instructions, std::span<const Particle> particles) const;

    /// scores[i][j] = particle_score(instructions[i], particles[j]), computed concurrently.
    std::vector<std::vector<double>> score_matrix(std::span<const Instruction> instructions,
                                                  std::span<const Particle> particles) const;

    CorpusScores evaluate_corpus(const AspectSpec& aspect, const std::vector<Dialogue>& dialogues,
                                 const ParticleMap& particles, std::span<const Instruction> instructions) const;

    /// Single-prompt baseline on raw unit text using the annotator-facing aspect description.
    double direct_baseline(const AspectSpec& aspect, std::string_view unit_content) const;
    CorpusScores evaluate_corpus_direct(const AspectSpec& aspect, const std::vector<Dialogue>& dialogues) const;

    const AspectRegistry& aspects() const noexcept { return aspects_; }
    const EvaluatorOptions& options() const noexcept { return options_; }
    Gateway& gateway() const noexcept { return gateway_; }

private:
    struct Drawn {
        std::vector<int> samples;
        std::vector<std::optional<double>> logprobs;
    };
    Drawn draw_scores(const std::string& prompt, const AspectSpec& aspect) const;
    double estimate(const Drawn& d) const;

    Gateway& gateway_;
    AspectRegistry aspects_;
    EvaluatorOptions options_;
    const DialogueMap* dialogues_;

    mutable std::mutex memo_mu_;
    // One entry per (aspect, instruction text, particle); concurrent callers share one computation.
    mutable std::unordered_map<std::string, std::shared_future<ParticleScore>> memo_;
};

/// Units an aspect is scored on: every system turn (Turn) or every dialogue (Dialogue).
std::vector<UnitRef> units_of(const AspectSpec& aspect, const std::vector<Dialogue>& dialogues);

/// The unit a particle belongs to under an aspect's level.
UnitRef unit_of(const Particle& p, AspectLevel level);

}  // namespace faceval
