#include "faceval/optimizer.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "faceval/errors.hpp"
#include "faceval/hashing.hpp"
#include "faceval/parallel.hpp"
#include "faceval/prompts.hpp"

namespace faceval {

namespace {

const std::set<std::string>& hyperparam_keys() {
    static const std::set<std::string> keys = {
        "iterations", "beam_width",    "candidates_kept", "gradients",          "exploration",
        "ucb_iterations", "ucb_batch", "samples",         "final_set_size",     "gradient_minibatch",
        "ucb_minibatch", "correlation", "combined",       "count_mode"};
    return keys;
}

void write_atomically(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
        if (!out) throw ConfigError("cannot write " + tmp.string());
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

json read_json_file(const std::filesystem::path& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw ConfigError(std::string("cannot open ") + what + " " + path.string());
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw SchemaError(std::string(what) + " is not valid JSON", path.string());
    return doc;
}

struct Child {
    Instruction instruction;
    std::string gradient;
};

Instruction make_child(const Instruction& parent, std::string text, int iteration) {
    Instruction child;
    child.aspect = parent.aspect;
    child.instruction_id = make_instruction_id(parent.aspect, text);
    child.text = std::move(text);
    child.parent_id = parent.instruction_id;
    child.iteration_born = iteration;
    return child;
}

std::optional<std::string> parse_instruction(const std::string& completion) {
    auto text = prompts::extract_section(completion, "instruction");
    if (!text || text->empty()) return std::nullopt;
    return text;
}

std::string parse_gradient(const std::string& completion) {
    if (auto fb = prompts::extract_section(completion, "feedback")) return *fb;
    return prompts::trim(completion);
}

}  // namespace

void Hyperparams::validate() const {
    if (iterations < 1) throw ConfigError("iterations (K) must be >= 1");
    if (beam_width < 1) throw ConfigError("beam_width (b) must be >= 1");
    if (beam_width > candidates_kept) throw ConfigError("beam_width (b) must not exceed candidates_kept (b')");
    if (gradients < 1) throw ConfigError("gradients (alpha) must be >= 1");
    if (!(exploration >= 0.0)) throw ConfigError("exploration (c) must be >= 0");
    if (samples < 1) throw ConfigError("samples (n) must be >= 1");
    if (final_set_size < 1) throw ConfigError("final_set_size must be >= 1");
    if (gradient_minibatch < 1) throw ConfigError("gradient_minibatch must be >= 1");
    if (ucb_minibatch < 1) throw ConfigError("ucb_minibatch must be >= 1");
}

void to_json(json& j, const Hyperparams& hp) {
    j = json{{"iterations", hp.iterations},
             {"beam_width", hp.beam_width},
             {"candidates_kept", hp.candidates_kept},
             {"gradients", hp.gradients},
             {"exploration", hp.exploration},
             {"ucb_iterations", hp.ucb_iterations},
             {"ucb_batch", hp.ucb_batch},
             {"samples", hp.samples},
             {"final_set_size", hp.final_set_size},
             {"gradient_minibatch", hp.gradient_minibatch},
             {"ucb_minibatch", hp.ucb_minibatch},
             {"correlation", metrics::to_string(hp.correlation)},
             {"combined", hp.combined},
             {"count_mode", to_string(hp.count_mode)}};
}

void from_json(const json& j, Hyperparams& hp) {
    if (!j.is_object()) throw ConfigError("hyperparams must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (!hyperparam_keys().count(key)) throw ConfigError("unknown hyperparameter '" + key + "'");
    Hyperparams d;
    try {
        hp.iterations = j.value("iterations", d.iterations);
        hp.beam_width = j.value("beam_width", d.beam_width);
        hp.candidates_kept = j.value("candidates_kept", d.candidates_kept);
        hp.gradients = j.value("gradients", d.gradients);
        hp.exploration = j.value("exploration", d.exploration);
        hp.ucb_iterations = j.value("ucb_iterations", d.ucb_iterations);
        hp.ucb_batch = j.value("ucb_batch", d.ucb_batch);
        hp.samples = j.value("samples", d.samples);
        hp.final_set_size = j.value("final_set_size", d.final_set_size);
        hp.gradient_minibatch = j.value("gradient_minibatch", d.gradient_minibatch);
        hp.ucb_minibatch = j.value("ucb_minibatch", d.ucb_minibatch);
        hp.correlation = metrics::correlation_from_string(j.value("correlation", std::string("pearson")));
        hp.combined = j.value("combined", d.combined);
        hp.count_mode = count_mode_from_string(j.value("count_mode", std::string("samples")));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed hyperparams: ") + e.what());
    }
}

LabeledSet build_labeled_set(const AspectSpec& aspect, std::span<const std::string> dialogue_ids,
                             const ParticleMap& particles, const std::vector<AnnotationRecord>& annotations) {
    const std::set<std::string> wanted(dialogue_ids.begin(), dialogue_ids.end());
    std::map<UnitRef, double> labels;
    for (const auto& a : annotations)
        if (a.aspect == aspect.name && wanted.count(a.unit.dialogue_id)) labels[a.unit] = a.label;

    std::map<UnitRef, std::vector<const Particle*>> members;
    for (const auto& id : wanted) {
        auto it = particles.find(id);
        if (it == particles.end()) continue;
        for (const auto& p : it->second) members[unit_of(p, aspect.level)].push_back(&p);
    }

    LabeledSet set;
    for (const auto& [unit, label] : labels) {
        auto it = members.find(unit);
        if (it == members.end() || it->second.empty()) {
            set.dropped.push_back(unit);
            continue;
        }
        std::vector<std::size_t> idx;
        for (const Particle* p : it->second) {
            idx.push_back(set.particles.size());
            set.particles.push_back(*p);
            set.particle_labels.push_back(label);
        }
        set.units.push_back(unit);
        set.labels.push_back(label);
        set.unit_particles.push_back(std::move(idx));
    }
    return set;
}

bool InstructionPool::add(PoolEntry entry) {
    if (entry.instruction.text.empty()) throw PreconditionError("instruction text must be non-empty");
    if (contains_text(entry.instruction.text)) return false;
    entries_.push_back(std::move(entry));
    return true;
}

bool InstructionPool::contains_text(std::string_view text) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const PoolEntry& e) { return e.instruction.text == text; });
}

const PoolEntry* InstructionPool::find(std::string_view id) const {
    for (const auto& e : entries_)
        if (e.instruction.instruction_id == id) return &e;
    return nullptr;
}

std::vector<Instruction> InstructionPool::instructions() const {
    std::vector<Instruction> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.instruction);
    return out;
}

void InstructionPool::check_lineage(std::string_view root_id) const {
    validate_lineage(instructions());
    for (const auto& e : entries_) {
        const PoolEntry* cur = &e;
        while (cur->instruction.parent_id) {
            const PoolEntry* parent = find(*cur->instruction.parent_id);
            if (!parent)
                throw SchemaError("instruction " + cur->instruction.instruction_id + " has parent outside the pool");
            cur = parent;
        }
        if (cur->instruction.instruction_id != root_id)
            throw SchemaError("instruction " + e.instruction.instruction_id + " does not descend from " +
                              std::string(root_id));
    }
}

void to_json(json& j, const InstructionPool& pool) {
    j = json::array();
    for (const auto& e : pool.entries()) {
        json item = e.instruction;
        item["gradient"] = e.gradient ? json(*e.gradient) : json(nullptr);
        j.push_back(std::move(item));
    }
}

void from_json(const json& j, InstructionPool& pool) {
    pool = InstructionPool{};
    for (const auto& item : j) {
        PoolEntry e{item.get<Instruction>(), std::nullopt};
        if (item.contains("gradient") && !item.at("gradient").is_null()) e.gradient = item.at("gradient").get<std::string>();
        if (!pool.add(std::move(e))) throw SchemaError("duplicate instruction text in pool");
    }
}

double ensemble_correlation(std::span<const std::vector<double>> unit_scores, std::span<const std::size_t> members,
                            std::span<const double> labels, metrics::CorrelationKind kind) {
    if (members.empty()) throw PreconditionError("ensemble needs at least one member");
    std::vector<double> mean(labels.size());
    std::vector<double> column(members.size());
    for (std::size_t u = 0; u < labels.size(); ++u) {
        for (std::size_t m = 0; m < members.size(); ++m) column[m] = unit_scores[members[m]].at(u);
        mean[u] = stable_mean(column);
    }
    return metrics::correlation_or_zero(kind, mean, labels);
}

std::vector<std::size_t> greedy_select(std::span<const std::vector<double>> unit_scores, std::span<const double> labels,
                                       std::size_t size, metrics::CorrelationKind kind) {
    if (size == 0) throw PreconditionError("selection size must be >= 1");
    if (size > unit_scores.size()) throw PreconditionError("selection size exceeds the number of candidates");
    for (const auto& row : unit_scores)
        if (row.size() != labels.size()) throw PreconditionError("score rows must cover every labelled unit");
    std::vector<std::size_t> chosen;
    std::vector<bool> taken(unit_scores.size(), false);
    while (chosen.size() < size) {
        std::size_t best = 0;
        double best_corr = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < unit_scores.size(); ++i) {
            if (taken[i]) continue;
            chosen.push_back(i);
            const double c = ensemble_correlation(unit_scores, chosen, labels, kind);
            chosen.pop_back();
            if (c > best_corr) {
                best = i;
                best_corr = c;
            }
        }
        taken[best] = true;
        chosen.push_back(best);
    }
    return chosen;
}

void to_json(json& j, const IterationRecord& r) {
    j = json{{"type", "iteration"},
             {"iteration", r.iteration},
             {"gradient_sample", r.gradient_sample},
             {"candidates_generated", r.candidates_generated},
             {"candidates_new", r.candidates_new},
             {"candidates_selected", r.candidates_selected},
             {"rewrite_failures", r.rewrite_failures},
             {"ucb_iterations", r.ucb_iterations},
             {"ucb_batch", r.ucb_batch},
             {"pool_size", r.pool_size},
             {"beam", r.beam},
             {"beam_correlation", r.beam_correlation},
             {"requests", r.requests},
             {"requests_total", r.requests_total},
             {"request_bound", r.request_bound}};
}

void from_json(const json& j, IterationRecord& r) {
    r.iteration = j.at("iteration").get<int>();
    r.gradient_sample = j.at("gradient_sample").get<std::vector<std::string>>();
    r.candidates_generated = j.at("candidates_generated").get<std::size_t>();
    r.candidates_new = j.at("candidates_new").get<std::size_t>();
    r.candidates_selected = j.at("candidates_selected").get<std::size_t>();
    r.rewrite_failures = j.value("rewrite_failures", std::size_t{0});
    r.ucb_iterations = j.value("ucb_iterations", std::size_t{0});
    r.ucb_batch = j.value("ucb_batch", std::size_t{0});
    r.pool_size = j.at("pool_size").get<std::size_t>();
    r.beam = j.at("beam").get<std::vector<std::string>>();
    r.beam_correlation = j.at("beam_correlation").get<double>();
    r.requests = j.at("requests").get<std::map<std::string, std::uint64_t>>();
    r.requests_total = j.at("requests_total").get<std::uint64_t>();
    r.request_bound = j.at("request_bound").get<std::uint64_t>();
}

void write_checkpoint(const std::filesystem::path& path, const OptimizerCheckpoint& cp, const std::string& config_hash) {
    json doc{{"config_hash", config_hash},
             {"aspect", cp.aspect},
             {"seed", cp.seed},
             {"hyperparams", cp.hyperparams},
             {"completed_iterations", cp.completed_iterations},
             {"seed_instruction_id", cp.seed_instruction_id},
             {"pool", cp.pool},
             {"beam", cp.beam},
             {"journal", cp.journal}};
    write_atomically(path, doc.dump(2) + "\n");
}

OptimizerCheckpoint read_checkpoint(const std::filesystem::path& path) {
    const json doc = read_json_file(path, "checkpoint");
    OptimizerCheckpoint cp;
    try {
        cp.aspect = doc.at("aspect").get<std::string>();
        cp.seed = doc.at("seed").get<std::uint64_t>();
        cp.hyperparams = doc.at("hyperparams").get<Hyperparams>();
        cp.completed_iterations = doc.at("completed_iterations").get<int>();
        cp.seed_instruction_id = doc.at("seed_instruction_id").get<std::string>();
        cp.pool = doc.at("pool").get<InstructionPool>();
        cp.beam = doc.at("beam").get<std::vector<std::string>>();
        cp.journal = doc.at("journal").get<std::vector<IterationRecord>>();
    } catch (const json::exception& e) {
        throw SchemaError(e.what(), path.string());
    }
    for (const auto& id : cp.beam)
        if (!cp.pool.find(id)) throw SchemaError("beam member " + id + " missing from pool", path.string());
    return cp;
}

std::uint64_t iteration_request_bound(const Hyperparams& hp, std::size_t train_particles, int parse_retries,
                                      int rewrite_retries, bool first_iteration) {
    const std::uint64_t e = 1 + static_cast<std::uint64_t>(std::max(0, parse_retries));
    const std::uint64_t r = 1 + static_cast<std::uint64_t>(std::max(0, rewrite_retries));
    const std::uint64_t p = train_particles;
    const std::uint64_t g = std::min<std::uint64_t>(hp.gradient_minibatch, p);
    const std::uint64_t b = hp.beam_width;
    const std::uint64_t alpha = static_cast<std::uint64_t>(hp.gradients);
    const std::uint64_t score = b * g * e;
    const std::uint64_t rewrite = hp.combined ? b * g * r : b * g * (r + alpha * r);
    const std::uint64_t candidates = b * g * alpha;
    const std::uint64_t batch = hp.ucb_batch > 0 ? hp.ucb_batch : std::max<std::uint64_t>(1, candidates / 2);
    const std::uint64_t pulls = hp.ucb_iterations > 0 ? hp.ucb_iterations : 5 * batch;
    const std::uint64_t ucb = pulls * std::min<std::uint64_t>(hp.ucb_minibatch, p) * e;
    const std::uint64_t beam = (hp.candidates_kept + (first_iteration ? 1 : 0)) * p * e;
    return score + rewrite + ucb + beam;
}

std::uint64_t request_bound(const Hyperparams& hp, std::size_t train_particles, std::size_t val_particles,
                            int parse_retries, int rewrite_retries) {
    std::uint64_t total = 0;
    for (int k = 1; k <= hp.iterations; ++k)
        total += iteration_request_bound(hp, train_particles, parse_retries, rewrite_retries, k == 1);
    const std::uint64_t e = 1 + static_cast<std::uint64_t>(std::max(0, parse_retries));
    const std::uint64_t pool_max = 1 + static_cast<std::uint64_t>(hp.iterations) * hp.candidates_kept;
    return total + pool_max * val_particles * e;
}

namespace {

EvaluatorOptions evaluator_options(const OptimizerOptions& o) {
    EvaluatorOptions e = o.evaluation;
    e.samples = o.hp.samples;
    e.memoize = true;  // the request bound counts each (instruction, particle) score once
    return e;
}

AspectRegistry registry_with(const AspectSpec& aspect) {
    AspectRegistry r;
    if (!r.find(aspect.name)) r.add(aspect);
    return r;
}

}  // namespace

Optimizer::Optimizer(Gateway& gateway, AspectSpec aspect, OptimizerOptions options, const DialogueMap* dialogues)
    : gateway_(gateway),
      aspect_(std::move(aspect)),
      options_(std::move(options)),
      evaluator_(gateway, registry_with(aspect_), evaluator_options(options_), dialogues) {
    options_.hp.validate();
    if (options_.rewrite_retries < 0) throw ConfigError("rewrite_retries must be >= 0");
}

std::vector<std::string> Optimizer::generate_gradients(const Instruction& instruction, const Particle& particle,
                                                       double predicted, int gold, int alpha,
                                                       std::uint64_t seed) const {
    if (alpha < 1) throw PreconditionError("alpha must be >= 1");
    GenRequest req;
    req.prompt = prompts::render_gradient(aspect_, instruction.text, particle, predicted, gold);
    req.temperature = options_.temperature;
    req.max_tokens = options_.max_tokens;
    std::vector<std::string> out;
    for (int round = 0; round <= options_.rewrite_retries && static_cast<int>(out.size()) < alpha; ++round) {
        req.n_samples = alpha - static_cast<int>(out.size());
        req.seed = mix_seed(seed, static_cast<std::uint64_t>(round));
        for (const auto& c : gateway_.complete(req).completions) {
            auto g = parse_gradient(c);
            if (!g.empty()) out.push_back(std::move(g));
        }
    }
    if (static_cast<int>(out.size()) < alpha)
        throw OptimizationError("critique call returned empty output after " +
                                std::to_string(options_.rewrite_retries + 1) + " rounds");
    return out;
}

std::vector<Instruction> Optimizer::rewrite_instruction(const Instruction& instruction,
                                                        std::span<const std::string> gradients, int iteration,
                                                        std::uint64_t seed) const {
    if (gradients.empty()) throw PreconditionError("rewrite needs at least one critique");
    std::vector<Instruction> out;
    for (std::size_t i = 0; i < gradients.size(); ++i) {
        GenRequest req;
        req.prompt = prompts::render_rewrite(aspect_, instruction.text, gradients[i]);
        req.temperature = options_.temperature;
        req.max_tokens = options_.max_tokens;
        std::optional<std::string> text;
        std::string last;
        for (int round = 0; round <= options_.rewrite_retries && !text; ++round) {
            req.seed = mix_seed(mix_seed(seed, i), static_cast<std::uint64_t>(round));
            last = gateway_.complete(req).completions.front();
            text = parse_instruction(last);
        }
        if (!text)
            throw OptimizationError("rewrite output has no <instruction> section after " +
                                    std::to_string(options_.rewrite_retries + 1) + " rounds: " + last.substr(0, 120));
        out.push_back(make_child(instruction, std::move(*text), iteration));
    }
    return out;
}

std::vector<Instruction> Optimizer::grad_rewrite_combined(const Instruction& instruction, const Particle& particle,
                                                          double predicted, int gold, int alpha, int iteration,
                                                          std::uint64_t seed) const {
    std::vector<Instruction> out;
    for (auto& [child, critique] : combined_children(instruction, particle, predicted, gold, alpha, iteration, seed))
        out.push_back(std::move(child));
    return out;
}

std::vector<std::pair<Instruction, std::string>> Optimizer::combined_children(const Instruction& instruction,
                                                                              const Particle& particle, double predicted,
                                                                              int gold, int alpha, int iteration,
                                                                              std::uint64_t seed) const {
    if (alpha < 1) throw PreconditionError("alpha must be >= 1");
    GenRequest req;
    req.prompt = prompts::render_combined(aspect_, instruction.text, particle, predicted, gold);
    req.temperature = options_.temperature;
    req.max_tokens = options_.max_tokens;
    std::vector<std::pair<Instruction, std::string>> out;
    std::string last;
    for (int round = 0; round <= options_.rewrite_retries && static_cast<int>(out.size()) < alpha; ++round) {
        req.n_samples = alpha - static_cast<int>(out.size());
        req.seed = mix_seed(seed, static_cast<std::uint64_t>(round));
        for (const auto& c : gateway_.complete(req).completions) {
            if (auto text = parse_instruction(c)) {
                out.emplace_back(make_child(instruction, std::move(*text), iteration),
                                 prompts::extract_section(c, "feedback").value_or(""));
            } else {
                last = c;
            }
        }
    }
    if (static_cast<int>(out.size()) < alpha)
        throw OptimizationError("combined output has no <instruction> section after " +
                                std::to_string(options_.rewrite_retries + 1) + " rounds: " + last.substr(0, 120));
    return out;
}

std::vector<Instruction> Optimizer::ucb_select(std::span<const Instruction> candidates, const LabeledSet& train,
                                               std::uint64_t seed, BanditRun* run) const {
    if (candidates.empty()) throw PreconditionError("ucb_select needs at least one candidate");
    if (candidates.size() == 1) return {candidates.front()};
    if (train.particles.empty()) throw PreconditionError("ucb_select needs labelled training particles");

    const auto& hp = options_.hp;
    BanditOptions bo;
    bo.exploration = hp.exploration;
    bo.iterations = hp.ucb_iterations;
    bo.batch = hp.ucb_batch;
    bo.minibatch = hp.ucb_minibatch;
    bo.count_mode = hp.count_mode;
    bo.seed = seed;
    bo.workers = options_.workers;

    auto reward = [&](std::size_t arm, std::span<const std::size_t> sample) {
        std::vector<double> scores;
        std::vector<double> labels;
        for (auto i : sample) {
            scores.push_back(evaluator_.particle_score(candidates[arm], train.particles[i]));
            labels.push_back(train.particle_labels[i]);
        }
        return metrics::correlation_or_zero(hp.correlation, scores, labels);
    };
    auto accept = [&](std::span<const std::size_t> sample) {
        if (sample.size() < 3) return false;
        const double first = train.particle_labels[sample.front()];
        return std::any_of(sample.begin(), sample.end(), [&](std::size_t i) { return train.particle_labels[i] != first; });
    };

    BanditRun result = run_ucb(candidates.size(), train.particles.size(), reward, bo, accept);
    std::vector<Instruction> out;
    for (std::size_t i = 0; i < std::min(hp.candidates_kept, candidates.size()); ++i)
        out.push_back(candidates[result.ranking[i]]);
    if (run) *run = std::move(result);
    return out;
}

std::vector<std::vector<double>> Optimizer::unit_scores(std::span<const Instruction> instructions,
                                                        const LabeledSet& set) const {
    const auto matrix = evaluator_.score_matrix(instructions, set.particles);
    std::vector<std::vector<double>> out(instructions.size(), std::vector<double>(set.units.size()));
    for (std::size_t i = 0; i < instructions.size(); ++i) {
        for (std::size_t u = 0; u < set.units.size(); ++u) {
            std::vector<double> members;
            for (auto p : set.unit_particles[u]) members.push_back(matrix[i][p]);
            out[i][u] = stable_mean(members);
        }
    }
    return out;
}

double Optimizer::correlation(std::span<const Instruction> instructions, const LabeledSet& set) const {
    if (instructions.empty()) throw PreconditionError("correlation needs at least one instruction");
    const auto scores = unit_scores(instructions, set);
    std::vector<std::size_t> all(instructions.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return ensemble_correlation(scores, all, set.labels, options_.hp.correlation);
}

std::vector<Instruction> Optimizer::select_beam(const InstructionPool& pool, const LabeledSet& train,
                                                std::size_t b) const {
    if (pool.size() < b)
        throw PreconditionError("pool has " + std::to_string(pool.size()) + " instructions, beam needs " +
                                std::to_string(b));
    const auto instructions = pool.instructions();
    const auto scores = unit_scores(instructions, train);
    std::vector<Instruction> out;
    for (auto i : greedy_select(scores, train.labels, b, options_.hp.correlation)) out.push_back(instructions[i]);
    return out;
}

std::vector<Instruction> Optimizer::select_final(const InstructionPool& pool, const LabeledSet& val, std::size_t size,
                                                 std::optional<std::string>* warning) const {
    if (pool.size() == 0) throw PreconditionError("cannot select from an empty pool");
    if (pool.size() < size) {
        if (warning)
            *warning = "pool holds " + std::to_string(pool.size()) + " instructions, fewer than the requested " +
                       std::to_string(size) + "; returning the whole pool";
        size = pool.size();
    }
    const auto instructions = pool.instructions();
    const auto scores = unit_scores(instructions, val);
    std::vector<Instruction> out;
    for (auto i : greedy_select(scores, val.labels, size, options_.hp.correlation)) out.push_back(instructions[i]);
    return out;
}

void Optimizer::persist(const OptimizerCheckpoint& cp) const {
    if (!options_.checkpoint_path.empty()) write_checkpoint(options_.checkpoint_path, cp, options_.config_hash);
    if (!options_.journal_path.empty()) {
        std::string lines;
        for (const auto& r : cp.journal) {
            json line = r;
            line["config_hash"] = options_.config_hash;
            lines += line.dump() + "\n";
        }
        write_atomically(options_.journal_path, lines);
    }
}

OptimizeResult Optimizer::optimize(const Instruction& seed_instruction, const LabeledSet& train, const LabeledSet& val,
                                   const OptimizerCheckpoint* resume) {
    const auto& hp = options_.hp;
    if (train.particles.empty() || train.units.empty()) throw PreconditionError("training set has no labelled particles");
    if (val.units.empty()) throw PreconditionError("validation set has no labelled particles");
    {
        std::set<std::string> train_ids;
        for (const auto& u : train.units) train_ids.insert(u.dialogue_id);
        for (const auto& u : val.units)
            if (train_ids.count(u.dialogue_id))
                throw PreconditionError("dialogue " + u.dialogue_id + " appears in both train and validation");
    }

    Instruction root = seed_instruction;
    if (root.aspect.empty()) root.aspect = aspect_.name;
    if (root.aspect != aspect_.name) throw PreconditionError("seed instruction targets " + root.aspect);
    if (root.instruction_id.empty()) root.instruction_id = make_instruction_id(root.aspect, root.text);
    root.parent_id.reset();
    root.iteration_born = 0;

    OptimizeResult result;
    OptimizerCheckpoint& st = result.state;
    if (resume) {
        st = *resume;
        if (st.aspect != aspect_.name || st.seed != options_.seed || json(st.hyperparams) != json(hp))
            throw ConfigError("checkpoint was written by a run with a different aspect, seed or hyperparameters");
        if (st.seed_instruction_id != root.instruction_id)
            throw ConfigError("checkpoint starts from a different seed instruction");
    } else {
        st.aspect = aspect_.name;
        st.seed = options_.seed;
        st.hyperparams = hp;
        st.seed_instruction_id = root.instruction_id;
        st.pool.add({root, std::nullopt});
        st.beam = {root.instruction_id};
    }

    const int parse_retries = options_.evaluation.parse_retries;
    result.request_bound = request_bound(hp, train.particles.size(), val.particles.size(), parse_retries,
                                         options_.rewrite_retries);
    const std::uint64_t start = gateway_.requests();
    std::uint64_t prior_total = st.journal.empty() ? 0 : st.journal.back().requests_total;
    std::uint64_t prior_bound = st.journal.empty() ? 0 : st.journal.back().request_bound;

    auto beam_of = [&](const std::vector<std::string>& ids) {
        std::vector<Instruction> out;
        for (const auto& id : ids) out.push_back(st.pool.find(id)->instruction);
        return out;
    };

    for (int k = st.completed_iterations + 1; k <= hp.iterations; ++k) {
        IterationRecord rec;
        rec.iteration = k;
        const std::uint64_t it_start = gateway_.requests();
        auto phase_mark = it_start;
        auto close_phase = [&](const char* name) {
            const auto now = gateway_.requests();
            rec.requests[name] = now - phase_mark;
            phase_mark = now;
        };

        const std::uint64_t base = mix_seed(options_.seed, static_cast<std::uint64_t>(k));
        const std::vector<Instruction> beam = beam_of(st.beam);
        const auto picks = sample_without_replacement(
            train.particles.size(), std::min(hp.gradient_minibatch, train.particles.size()), mix_seed(base, "critique-sample"));
        std::vector<Particle> sample;
        for (auto i : picks) {
            sample.push_back(train.particles[i]);
            rec.gradient_sample.push_back(train.particles[i].particle_id);
        }

        // Wave A: current beam scored on the critique sample.
        const auto predicted = evaluator_.score_matrix(beam, sample);
        close_phase("score");

        // Wave B: critiques and rewrites for every (beam member, sampled particle) pair.
        const std::size_t pairs = beam.size() * sample.size();
        std::vector<std::vector<Child>> children(pairs);
        const auto errors = parallel_for_collect(pairs, options_.workers, [&](std::size_t q) {
            const Instruction& ins = beam[q / sample.size()];
            const Particle& p = sample[q % sample.size()];
            const double pred = predicted[q / sample.size()][q % sample.size()];
            const int gold = static_cast<int>(train.particle_labels[picks[q % sample.size()]]);
            const std::uint64_t pair_seed =
                mix_seed(mix_seed(base, "rewrite"), fnv1a64(ins.instruction_id + "|" + p.particle_id));
            if (hp.combined) {
                for (auto& [child, critique] : combined_children(ins, p, pred, gold, hp.gradients, k, pair_seed))
                    children[q].push_back({std::move(child), std::move(critique)});
            } else {
                const auto grads = generate_gradients(ins, p, pred, gold, hp.gradients, mix_seed(pair_seed, "critique"));
                auto kids = rewrite_instruction(ins, grads, k, mix_seed(pair_seed, "rewrite"));
                for (std::size_t i = 0; i < kids.size(); ++i) children[q].push_back({std::move(kids[i]), grads[i]});
            }
        });
        for (const auto& err : errors) {
            if (!err) continue;
            try {
                std::rethrow_exception(err);
            } catch (const OptimizationError&) {
                ++rec.rewrite_failures;
            }
        }
        close_phase("rewrite");

        std::vector<Instruction> candidates;
        std::map<std::string, std::string> gradient_of;
        std::set<std::string> seen;
        for (auto& group : children) {
            for (auto& child : group) {
                ++rec.candidates_generated;
                if (st.pool.contains_text(child.instruction.text) || !seen.insert(child.instruction.text).second) continue;
                if (!child.gradient.empty()) gradient_of[child.instruction.instruction_id] = child.gradient;
                candidates.push_back(std::move(child.instruction));
            }
        }
        rec.candidates_new = candidates.size();

        if (!candidates.empty()) {
            BanditRun run;
            const auto selected = ucb_select(candidates, train, mix_seed(base, "bandit"), &run);
            rec.ucb_iterations = run.iterations;
            rec.ucb_batch = run.batch;
            rec.candidates_selected = selected.size();
            for (const auto& ins : selected) {
                auto g = gradient_of.find(ins.instruction_id);
                st.pool.add({ins, g == gradient_of.end() ? std::nullopt : std::optional<std::string>(g->second)});
            }
        }
        close_phase("bandit");

        const auto next = select_beam(st.pool, train, std::min(hp.beam_width, st.pool.size()));
        const double next_corr = correlation(next, train);
        // Greedy selection from a superset pool can score below the previous beam; a full-width
        // previous beam is kept in that case. A narrower one (pool was smaller than b) is replaced.
        const double prev_corr = correlation(beam, train);
        if (beam.size() < next.size() || next_corr >= prev_corr) {
            st.beam.clear();
            for (const auto& ins : next) st.beam.push_back(ins.instruction_id);
            rec.beam_correlation = next_corr;
        } else {
            rec.beam_correlation = prev_corr;
        }
        close_phase("beam");

        rec.pool_size = st.pool.size();
        rec.beam = st.beam;
        rec.requests_total = prior_total + (gateway_.requests() - start);
        prior_bound += iteration_request_bound(hp, train.particles.size(), parse_retries, options_.rewrite_retries, k == 1);
        rec.request_bound = prior_bound;
        st.journal.push_back(std::move(rec));
        st.completed_iterations = k;
        persist(st);

        if (options_.stop_after_iteration && k >= *options_.stop_after_iteration && k < hp.iterations) {
            result.stopped_early = true;
            result.requests = gateway_.requests() - start;
            return result;
        }
    }

    st.pool.check_lineage(st.seed_instruction_id);
    result.seed_validation_correlation = correlation(std::span<const Instruction>(&root, 1), val);
    result.final_set = select_final(st.pool, val, hp.final_set_size, &result.warning);
    result.validation_correlation = correlation(result.final_set, val);
    result.requests = gateway_.requests() - start;
    return result;
}

void write_instruction_sets(const std::filesystem::path& path, const InstructionSets& sets,
                            const std::string& config_hash) {
    json aspects = json::object();
    for (const auto& [aspect, set] : sets) {
        json entry{{"instructions", set.instructions}};
        entry["validation_correlation"] = set.validation_correlation ? json(*set.validation_correlation) : json(nullptr);
        aspects[aspect] = std::move(entry);
    }
    json doc{{"config_hash", config_hash}, {"aspects", aspects}};
    write_atomically(path, doc.dump(2) + "\n");
}

InstructionSets read_instruction_sets(const std::filesystem::path& path) {
    const json doc = read_json_file(path, "instruction set");
    InstructionSets out;
    try {
        for (const auto& [aspect, entry] : doc.at("aspects").items()) {
            InstructionSet set;
            set.instructions = entry.at("instructions").get<std::vector<Instruction>>();
            if (entry.contains("validation_correlation") && !entry.at("validation_correlation").is_null())
                set.validation_correlation = entry.at("validation_correlation").get<double>();
            for (const auto& ins : set.instructions)
                if (ins.aspect != aspect)
                    throw SchemaError("instruction " + ins.instruction_id + " is filed under " + aspect +
                                      " but targets " + ins.aspect);
            if (set.instructions.empty()) throw SchemaError("aspect " + aspect + " has no instructions");
            out.emplace(aspect, std::move(set));
        }
    } catch (const json::exception& e) {
        throw SchemaError(e.what(), path.string());
    }
    return out;
}

}  // namespace faceval
