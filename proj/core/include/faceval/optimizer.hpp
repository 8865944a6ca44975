#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "faceval/bandit.hpp"
#include "faceval/evaluator.hpp"
#include "faceval/gateway.hpp"
#include "faceval/metrics.hpp"
#include "faceval/model.hpp"

namespace faceval {

struct Hyperparams {
    int iterations = 6;                   // K
    std::size_t beam_width = 4;           // b
    std::size_t candidates_kept = 16;     // b'
    int gradients = 2;                    // alpha, critiques per (instruction, particle) pair
    double exploration = 1.0;             // c
    std::size_t ucb_iterations = 0;       // T; 0 means 5 * batch
    std::size_t ucb_batch = 0;            // B; 0 means max(1, candidates / 2)
    int samples = 5;                      // n, samples per particle score
    std::size_t final_set_size = 16;
    std::size_t gradient_minibatch = 8;   // train particles critiqued per iteration
    std::size_t ucb_minibatch = 8;        // particles scored per bandit pull
    metrics::CorrelationKind correlation = metrics::CorrelationKind::Pearson;
    bool combined = false;                // one call yields critique and rewrite
    CountMode count_mode = CountMode::Samples;

    /// Throws ConfigError on an inconsistent setting (e.g. beam_width > candidates_kept).
    void validate() const;
};

void to_json(json& j, const Hyperparams& hp);
void from_json(const json& j, Hyperparams& hp);

/// Labelled units of one aspect with their particles. A particle's label is its unit's label.
struct LabeledSet {
    std::vector<UnitRef> units;
    std::vector<double> labels;
    std::vector<std::vector<std::size_t>> unit_particles;  // indices into `particles`
    std::vector<Particle> particles;
    std::vector<double> particle_labels;
    std::vector<UnitRef> dropped;  // labelled units without particles
};

/// Units of `dialogue_ids` that carry a label for `aspect` and at least one particle.
LabeledSet build_labeled_set(const AspectSpec& aspect, std::span<const std::string> dialogue_ids,
                             const ParticleMap& particles, const std::vector<AnnotationRecord>& annotations);

struct PoolEntry {
    Instruction instruction;
    std::optional<std::string> gradient;  // critique that produced it
};

/// Append-only instruction archive. Texts are unique; insertion order is the tie-break order.
class InstructionPool {
public:
    /// False (and no insertion) when the text is already present.
    bool add(PoolEntry entry);
    bool contains_text(std::string_view text) const;
    const PoolEntry* find(std::string_view instruction_id) const;
    std::size_t size() const noexcept { return entries_.size(); }
    const std::vector<PoolEntry>& entries() const noexcept { return entries_; }
    std::vector<Instruction> instructions() const;

    /// Throws SchemaError unless every parent chain ends at `root_id`.
    void check_lineage(std::string_view root_id) const;

private:
    std::vector<PoolEntry> entries_;
};

void to_json(json& j, const InstructionPool& pool);
void from_json(const json& j, InstructionPool& pool);

/// Greedy forward selection: start empty and repeatedly add the member whose inclusion maximises
/// the correlation of the averaged unit scores with `labels`. Ties go to the lower index.
/// `unit_scores[i]` holds member i's score per unit. Returns indices in selection order.
std::vector<std::size_t> greedy_select(std::span<const std::vector<double>> unit_scores, std::span<const double> labels,
                                       std::size_t size, metrics::CorrelationKind kind);

/// Correlation of the element-wise mean of `members` rows with `labels`; 0 when undefined.
double ensemble_correlation(std::span<const std::vector<double>> unit_scores, std::span<const std::size_t> members,
                            std::span<const double> labels, metrics::CorrelationKind kind);

struct IterationRecord {
    int iteration = 0;
    std::vector<std::string> gradient_sample;  // particle ids critiqued
    std::size_t candidates_generated = 0;
    std::size_t candidates_new = 0;  // after removing texts already seen
    std::size_t candidates_selected = 0;
    std::size_t rewrite_failures = 0;
    std::size_t ucb_iterations = 0;
    std::size_t ucb_batch = 0;
    std::size_t pool_size = 0;
    std::vector<std::string> beam;
    double beam_correlation = 0.0;
    std::map<std::string, std::uint64_t> requests;  // gateway requests per phase
    std::uint64_t requests_total = 0;               // cumulative over the run segment
    std::uint64_t request_bound = 0;                // cumulative analytic bound

    friend bool operator==(const IterationRecord&, const IterationRecord&) = default;
};

void to_json(json& j, const IterationRecord& r);
void from_json(const json& j, IterationRecord& r);

/// Everything needed to resume a run after any completed iteration.
struct OptimizerCheckpoint {
    std::string aspect;
    std::uint64_t seed = 0;
    Hyperparams hyperparams;
    int completed_iterations = 0;
    std::string seed_instruction_id;
    InstructionPool pool;
    std::vector<std::string> beam;
    std::vector<IterationRecord> journal;
};

void write_checkpoint(const std::filesystem::path& path, const OptimizerCheckpoint& cp,
                      const std::string& config_hash = {});
OptimizerCheckpoint read_checkpoint(const std::filesystem::path& path);

struct OptimizerOptions {
    Hyperparams hp;
    std::uint64_t seed = 0;
    EvaluatorOptions evaluation;  // `samples` is overridden by hp.samples
    double temperature = kDefaultTemperature;  // for critique and rewrite calls
    int max_tokens = 1024;
    int rewrite_retries = 3;
    std::size_t workers = 8;
    std::filesystem::path checkpoint_path;  // written after every iteration when set
    std::filesystem::path journal_path;     // JSON-lines, rewritten after every iteration when set
    std::optional<int> stop_after_iteration;
    std::string config_hash;  // copied into every journal line and the checkpoint
};

struct OptimizeResult {
    std::vector<Instruction> final_set;  // empty when stopped early
    double validation_correlation = 0.0;
    double seed_validation_correlation = 0.0;
    bool stopped_early = false;
    std::optional<std::string> warning;
    OptimizerCheckpoint state;
    std::uint64_t requests = 0;      // gateway requests issued by this call
    std::uint64_t request_bound = 0; // analytic bound for a full run
};

/// Analytic ceiling on gateway requests for a full run. Every particle score costs at most
/// 1 + parse_retries requests, every critique batch and every rewrite at most 1 + rewrite_retries.
std::uint64_t request_bound(const Hyperparams& hp, std::size_t train_particles, std::size_t val_particles,
                            int parse_retries, int rewrite_retries);
/// Bound for a single iteration (scoring, critiques, rewrites, bandit and beam selection).
std::uint64_t iteration_request_bound(const Hyperparams& hp, std::size_t train_particles, int parse_retries,
                                      int rewrite_retries, bool first_iteration);

class Optimizer {
public:
    Optimizer(Gateway& gateway, AspectSpec aspect, OptimizerOptions options, const DialogueMap* dialogues = nullptr);

    /// `alpha` critiques of `instruction` on one particle. Deterministic for a fixed seed.
    std::vector<std::string> generate_gradients(const Instruction& instruction, const Particle& particle,
                                                double predicted, int gold, int alpha, std::uint64_t seed) const;

    /// One rewrite per critique; children carry parent_id and iteration_born.
    std::vector<Instruction> rewrite_instruction(const Instruction& instruction, std::span<const std::string> gradients,
                                                 int iteration, std::uint64_t seed) const;

    /// Critique and rewrite in a single call returning `alpha` completions.
    std::vector<Instruction> grad_rewrite_combined(const Instruction& instruction, const Particle& particle,
                                                   double predicted, int gold, int alpha, int iteration,
                                                   std::uint64_t seed) const;

    /// Bandit-ranked top-b' candidates. One candidate is returned without any pulls.
    std::vector<Instruction> ucb_select(std::span<const Instruction> candidates, const LabeledSet& train,
                                        std::uint64_t seed, BanditRun* run = nullptr) const;

    /// Greedy top-b by train ensemble correlation. Throws PreconditionError when the pool is smaller than b.
    std::vector<Instruction> select_beam(const InstructionPool& pool, const LabeledSet& train, std::size_t b) const;

    /// Greedy top-size by validation ensemble correlation; a smaller pool is returned whole with a warning.
    std::vector<Instruction> select_final(const InstructionPool& pool, const LabeledSet& val, std::size_t size,
                                          std::optional<std::string>* warning = nullptr) const;

    /// Ensemble correlation of `instructions` over the units of `set`.
    double correlation(std::span<const Instruction> instructions, const LabeledSet& set) const;

    /// Full search from `seed_instruction`, or from `resume` when given.
    OptimizeResult optimize(const Instruction& seed_instruction, const LabeledSet& train, const LabeledSet& val,
                            const OptimizerCheckpoint* resume = nullptr);

    const Evaluator& evaluator() const noexcept { return evaluator_; }
    const OptimizerOptions& options() const noexcept { return options_; }

private:
    std::vector<std::vector<double>> unit_scores(std::span<const Instruction> instructions, const LabeledSet& set) const;
    std::vector<std::pair<Instruction, std::string>> combined_children(const Instruction& instruction,
                                                                       const Particle& particle, double predicted,
                                                                       int gold, int alpha, int iteration,
                                                                       std::uint64_t seed) const;
    void persist(const OptimizerCheckpoint& cp) const;

    Gateway& gateway_;
    AspectSpec aspect_;
    OptimizerOptions options_;
    Evaluator evaluator_;
};

/// Instruction sets keyed by aspect: {"config_hash": "...", "aspects": {"Relevance": {"instructions": [...],
/// "validation_correlation": r}}}. Serialisation is deterministic.
struct InstructionSet {
    std::vector<Instruction> instructions;
    std::optional<double> validation_correlation;
};
using InstructionSets = std::map<std::string, InstructionSet>;

void write_instruction_sets(const std::filesystem::path& path, const InstructionSets& sets,
                            const std::string& config_hash = {});
InstructionSets read_instruction_sets(const std::filesystem::path& path);

}  // namespace faceval
