#include "faceval_app/commands.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <mutex>

#include "common.hpp"
#include "faceval/decomposer.hpp"
#include "faceval/errors.hpp"
#include "faceval/optimizer.hpp"
#include "faceval/parallel.hpp"
#include "faceval/prompts.hpp"

namespace faceval::app {

std::string slug(std::string_view name) {
    std::string out;
    for (char c : name) {
        const auto u = static_cast<unsigned char>(c);
        if (std::isalnum(u))
            out += static_cast<char>(std::tolower(u));
        else if (!out.empty() && out.back() != '_')
            out += '_';
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out.empty() ? "aspect" : out;
}

Corpus load_run_corpus(const RunConfig& config) {
    if (config.corpus.empty()) throw ConfigError("run config names no corpus manifest");
    if (!std::filesystem::exists(config.corpus))
        throw ConfigError("corpus manifest " + config.corpus.string() + " does not exist");
    return load_corpus(CorpusManifest::from_file(config.corpus));
}

void write_text(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << content;
}

void write_particle_results(const std::filesystem::path& path, const std::string& aspect,
                            const std::vector<ParticleResult>& results, const std::string& config_hash) {
    std::string s = json{{"type", "header"}, {"aspect", aspect}, {"config_hash", config_hash}}.dump() + "\n";
    auto sorted = results;
    std::sort(sorted.begin(), sorted.end(), [](const ParticleResult& a, const ParticleResult& b) {
        return std::tie(a.dialogue_id, a.turn_index, a.particle_id) < std::tie(b.dialogue_id, b.turn_index, b.particle_id);
    });
    for (const auto& r : sorted)
        s += json{{"particle_id", r.particle_id},
                  {"dialogue_id", r.dialogue_id},
                  {"turn_index", r.turn_index},
                  {"act", to_string(r.act)},
                  {"score", r.score}}
                 .dump() +
             "\n";
    write_text(path, s);
}

std::vector<ParticleResult> read_particle_results(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read particle scores " + path.string());
    std::vector<ParticleResult> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            if (j.value("type", std::string{}) == "header") continue;
            out.push_back({j.at("particle_id").get<std::string>(), j.at("dialogue_id").get<std::string>(),
                           j.at("turn_index").get<int>(), act_from_string(j.at("act").get<std::string>()),
                           j.at("score").get<double>()});
        } catch (const std::exception& e) {
            throw SchemaError(e.what(), path.string() + ":" + std::to_string(lineno));
        }
    }
    return out;
}

std::vector<std::string> resolve_aspects(const RunConfig& config, const Corpus& corpus) {
    const auto& names = config.aspects.empty() ? corpus.aspect_names : config.aspects;
    if (names.empty()) throw ConfigError("no aspects requested and the corpus has no annotations");
    for (const auto& n : names) corpus.aspects.get(n);
    return names;
}

ParticleMap load_particles(const RunConfig& config, const Corpus& corpus) {
    ParticleMap out;
    for (const auto& d : corpus.dialogues) {
        const auto path = particle_cache_path(config.particle_dir(), d.dialogue_id);
        if (!std::filesystem::exists(path))
            throw ConfigError("no particles for dialogue " + d.dialogue_id + " (" + path.string() +
                              "); run `faceval decompose` first");
        out[d.dialogue_id] = read_particles(path);
    }
    return out;
}

std::filesystem::path score_table_path(const RunConfig& config, std::string_view aspect, std::string_view method) {
    return config.score_dir() / (slug(aspect) + "." + std::string(method) + ".scores.jsonl");
}

std::filesystem::path particle_scores_path(const RunConfig& config, std::string_view aspect) {
    return config.score_dir() / (slug(aspect) + ".face.particles.jsonl");
}

namespace {

EvaluatorOptions evaluation_options(const RunConfig& config) {
    EvaluatorOptions o = config.evaluation;
    o.samples = config.hyperparams.samples;
    o.seed = config.seed;
    return o;
}

void log_gateway(std::ostream& log, const Gateway& g) {
    log << "  gateway: " << g.requests() << " requests, " << g.backend_calls() << " backend calls, "
        << g.cache_hits() << " cache hits\n";
}

}  // namespace

int cmd_decompose(const RunConfig& config, Gateway& gateway, std::ostream& log) {
    const Corpus corpus = load_run_corpus(config);
    DecomposerOptions opts;
    opts.history_word_budget = config.history_word_budget;
    opts.parse_retries = config.decompose_retries;
    opts.temperature = config.evaluation.temperature;
    opts.seed = config.seed;
    const Decomposer decomposer(gateway, opts);

    std::vector<const Dialogue*> todo;
    std::size_t cached = 0;
    for (const auto& d : corpus.dialogues) {
        if (std::filesystem::exists(particle_cache_path(config.particle_dir(), d.dialogue_id)))
            ++cached;
        else
            todo.push_back(&d);
    }
    std::mutex log_mu;
    std::size_t failed = 0;
    const auto errors = parallel_for_collect(todo.size(), config.evaluation.workers, [&](std::size_t i) {
        const Dialogue& d = *todo[i];
        write_particles(particle_cache_path(config.particle_dir(), d.dialogue_id), decomposer.decompose_dialogue(d));
    });
    for (std::size_t i = 0; i < errors.size(); ++i) {
        if (!errors[i]) continue;
        try {
            std::rethrow_exception(errors[i]);
        } catch (const BackendError&) {
            throw;
        } catch (const std::exception& e) {
            std::lock_guard lock(log_mu);
            log << "  dialogue " << todo[i]->dialogue_id << ": " << e.what() << "\n";
            ++failed;
        }
    }

    json index{{"config_hash", config.hash()}, {"dialogues", json::object()}};
    for (const auto& d : corpus.dialogues) {
        const auto path = particle_cache_path(config.particle_dir(), d.dialogue_id);
        if (std::filesystem::exists(path)) index["dialogues"][d.dialogue_id] = path.filename().string();
    }
    write_text(config.particle_dir() / "index.json", index.dump(2) + "\n");

    log << "decompose: " << corpus.dialogues.size() << " dialogues, " << (todo.size() - failed) << " decomposed, "
        << cached << " cached, " << failed << " failed\n";
    log_gateway(log, gateway);
    return failed > 0 ? kExitPartial : kExitOk;
}

int cmd_evaluate(const RunConfig& config, Gateway& gateway, std::ostream& log) {
    const Corpus corpus = load_run_corpus(config);
    const auto aspects = resolve_aspects(config, corpus);
    const DialogueMap dialogue_map = corpus.by_id();
    const Evaluator evaluator(gateway, corpus.aspects, evaluation_options(config), &dialogue_map);
    const std::string hash = config.hash();

    InstructionSets sets;
    ParticleMap particles;
    if (config.mode == "face") {
        const auto path = config.instructions_path();
        if (!std::filesystem::exists(path))
            throw ConfigError("instruction set " + path.string() + " does not exist; run `faceval optimize` first");
        sets = read_instruction_sets(path);
        for (const auto& a : aspects)
            if (!sets.count(a)) throw ConfigError("instruction set " + path.string() + " has no entry for " + a);
        particles = load_particles(config, corpus);
    }

    bool partial = false;
    for (const auto& name : aspects) {
        const AspectSpec& aspect = corpus.aspects.get(name);
        CorpusScores scores = config.mode == "face"
                                  ? evaluator.evaluate_corpus(aspect, corpus.dialogues, particles, sets.at(name).instructions)
                                  : evaluator.evaluate_corpus_direct(aspect, corpus.dialogues);
        scores.table.provenance.config_hash = hash;
        const auto path = score_table_path(config, name, config.mode);
        write_score_table(path, scores.table);
        if (config.mode == "face") write_particle_results(particle_scores_path(config, name), name, scores.particles, hash);
        log << "evaluate " << name << " (" << config.mode << "): " << scores.table.rows.size() << " units scored, "
            << scores.skipped.size() << " without particles, " << scores.failures.size() << " failed -> "
            << path.string() << "\n";
        for (const auto& f : scores.failures) log << "  " << to_string(f.unit) << ": " << f.error << "\n";
        partial = partial || !scores.complete();
    }
    log_gateway(log, gateway);
    return partial ? kExitPartial : kExitOk;
}

int cmd_optimize(const RunConfig& config, Gateway& gateway, const OptimizeFlags& flags, std::ostream& log) {
    const Corpus corpus = load_run_corpus(config);
    const auto aspects = resolve_aspects(config, corpus);
    const DialogueMap dialogue_map = corpus.by_id();
    const ParticleMap particles = load_particles(config, corpus);
    const Split split = split_dialogues(corpus.dialogues, corpus.split);
    const std::string hash = config.hash();

    InstructionSets sets;
    bool stopped = false;
    for (const auto& name : aspects) {
        const AspectSpec& aspect = corpus.aspects.get(name);
        const auto train = build_labeled_set(aspect, split.train, particles, corpus.annotations);
        const auto val = build_labeled_set(aspect, split.validation, particles, corpus.annotations);
        if (train.units.empty() || val.units.empty())
            throw ConfigError("aspect " + name + " needs labelled units with particles in both train and validation");

        OptimizerOptions opts;
        opts.hp = config.hyperparams;
        opts.seed = config.seed;
        opts.evaluation = evaluation_options(config);
        opts.temperature = config.evaluation.temperature;
        opts.workers = config.evaluation.workers;
        opts.checkpoint_path = config.optimize_dir() / (slug(name) + ".checkpoint.json");
        opts.journal_path = config.optimize_dir() / (slug(name) + ".journal.jsonl");
        opts.stop_after_iteration = flags.stop_after;
        opts.config_hash = hash;
        Optimizer optimizer(gateway, aspect, opts, &dialogue_map);

        if (flags.reselect_only) {
            if (!std::filesystem::exists(opts.checkpoint_path))
                throw ConfigError("--reselect-only needs an existing pool checkpoint at " + opts.checkpoint_path.string());
            const auto cp = read_checkpoint(opts.checkpoint_path);
            std::optional<std::string> warning;
            auto chosen = optimizer.select_final(cp.pool, val, config.hyperparams.final_set_size, &warning);
            const double r = optimizer.correlation(chosen, val);
            if (warning) log << "  warning: " << *warning << "\n";
            log << "reselect " << name << ": " << chosen.size() << " of " << cp.pool.size()
                << " pool instructions, validation correlation " << r << "\n";
            sets[name] = {std::move(chosen), r};
            continue;
        }

        std::optional<OptimizerCheckpoint> resume;
        if (flags.resume && std::filesystem::exists(opts.checkpoint_path)) {
            resume = read_checkpoint(opts.checkpoint_path);
            log << "optimize " << name << ": resuming after iteration " << resume->completed_iterations << "\n";
        }
        Instruction seed;
        seed.aspect = name;
        seed.text = prompts::seed_instruction_text();
        auto result = optimizer.optimize(seed, train, val, resume ? &*resume : nullptr);
        for (const auto& rec : result.state.journal)
            if (!resume || rec.iteration > resume->completed_iterations)
                log << "  iteration " << rec.iteration << ": pool " << rec.pool_size << ", beam correlation "
                    << rec.beam_correlation << ", requests " << rec.requests_total << " (bound " << rec.request_bound
                    << ")\n";
        if (result.stopped_early) {
            log << "optimize " << name << ": stopped after iteration " << result.state.completed_iterations
                << "; continue with --resume\n";
            stopped = true;
            continue;
        }
        if (result.warning) log << "  warning: " << *result.warning << "\n";
        log << "optimize " << name << ": seed validation correlation " << result.seed_validation_correlation
            << ", final " << result.validation_correlation << " with " << result.final_set.size()
            << " instructions; " << result.requests << " requests (bound " << result.request_bound << ")\n";
        sets[name] = {std::move(result.final_set), result.validation_correlation};
    }
    if (stopped) return kExitOk;
    const auto path = config.instructions_path();
    write_instruction_sets(path, sets, hash);
    log << "instruction set -> " << path.string() << "\n";
    log_gateway(log, gateway);
    return kExitOk;
}

}  // namespace faceval::app
