#include "faceval/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "faceval/errors.hpp"
#include "faceval/hashing.hpp"
#include "faceval/parallel.hpp"
#include "faceval/prompts.hpp"

namespace faceval {

std::string to_string(Estimator e) { return e == Estimator::Empirical ? "empirical" : "logprob"; }

Estimator estimator_from_string(std::string_view s) {
    if (s == "empirical") return Estimator::Empirical;
    if (s == "logprob") return Estimator::LogProb;
    throw ConfigError("unknown estimator '" + std::string(s) + "' (expected empirical or logprob)");
}

double weighted_score(std::span<const int> samples) {
    if (samples.empty()) throw PreconditionError("weighted_score needs at least one sample");
    std::map<int, std::size_t> freq;
    for (int s : samples) ++freq[s];
    const double n = static_cast<double>(samples.size());
    double total = 0.0;
    for (const auto& [score, count] : freq) total += score * (static_cast<double>(count) / n);
    return total;
}

double weighted_score(std::span<const int> samples, std::span<const std::optional<double>> logprobs) {
    if (logprobs.size() != samples.size() ||
        std::any_of(logprobs.begin(), logprobs.end(), [](const auto& lp) { return !lp.has_value(); }))
        return weighted_score(samples);
    double top = -std::numeric_limits<double>::infinity();
    for (const auto& lp : logprobs) top = std::max(top, *lp);
    double z = 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double w = std::exp(*logprobs[i] - top);
        z += w;
        total += w * samples[i];
    }
    return total / z;
}

double stable_mean(std::span<const double> values) {
    if (values.empty()) throw PreconditionError("mean of empty list");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (double v : sorted) sum += v;
    return sum / static_cast<double>(sorted.size());
}

std::optional<double> ScoreTable::find(const UnitRef& unit) const {
    auto it = std::lower_bound(rows.begin(), rows.end(), unit,
                               [](const ScoreRow& r, const UnitRef& u) { return r.unit < u; });
    if (it != rows.end() && it->unit == unit) return it->score;
    return std::nullopt;
}

void write_score_table(const std::filesystem::path& path, const ScoreTable& table) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write score table " + path.string());
    const auto& p = table.provenance;
    json header{{"type", "header"},
                {"aspect", table.aspect},
                {"level", to_string(table.level)},
                {"method", p.method},
                {"instruction_ids", p.instruction_ids},
                {"backend_id", p.backend_id},
                {"seed", p.seed},
                {"samples", p.samples},
                {"estimator", p.estimator},
                {"config_hash", p.config_hash}};
    out << header.dump() << '\n';
    auto rows = table.rows;
    std::sort(rows.begin(), rows.end(), [](const ScoreRow& a, const ScoreRow& b) { return a.unit < b.unit; });
    for (const auto& r : rows) {
        json j = r.unit;
        j["score"] = r.score;
        out << j.dump() << '\n';
    }
}

ScoreTable read_score_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read score table " + path.string());
    ScoreTable t;
    std::string line;
    int lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            if (!have_header) {
                if (j.value("type", std::string{}) != "header") throw SchemaError("first record must be the header");
                t.aspect = j.at("aspect").get<std::string>();
                t.level = level_from_string(j.at("level").get<std::string>());
                auto& p = t.provenance;
                p.method = j.value("method", std::string("face"));
                p.instruction_ids = j.value("instruction_ids", std::vector<std::string>{});
                p.backend_id = j.value("backend_id", std::string{});
                p.seed = j.value("seed", std::uint64_t{0});
                p.samples = j.value("samples", 0);
                p.estimator = j.value("estimator", std::string("empirical"));
                p.config_hash = j.value("config_hash", std::string{});
                have_header = true;
                continue;
            }
            t.rows.push_back({j.get<UnitRef>(), j.at("score").get<double>()});
        } catch (const std::exception& e) {
            throw SchemaError(e.what(), path.string() + ":" + std::to_string(lineno));
        }
    }
    if (!have_header) throw SchemaError("score table has no header", path.string());
    std::sort(t.rows.begin(), t.rows.end(), [](const ScoreRow& a, const ScoreRow& b) { return a.unit < b.unit; });
    return t;
}

std::vector<UnitRef> units_of(const AspectSpec& aspect, const std::vector<Dialogue>& dialogues) {
    std::vector<UnitRef> out;
    for (const auto& d : dialogues) {
        if (aspect.level == AspectLevel::Dialogue) {
            out.push_back({d.dialogue_id, std::nullopt});
            continue;
        }
        for (const auto& u : d.utterances)
            if (u.speaker == Speaker::System) out.push_back({d.dialogue_id, u.index});
    }
    std::sort(out.begin(), out.end());
    return out;
}

UnitRef unit_of(const Particle& p, AspectLevel level) {
    if (level == AspectLevel::Dialogue) return {p.dialogue_id, std::nullopt};
    return {p.dialogue_id, p.turn_index};
}

Evaluator::Evaluator(Gateway& gateway, AspectRegistry aspects, EvaluatorOptions options, const DialogueMap* dialogues)
    : gateway_(gateway), aspects_(std::move(aspects)), options_(options), dialogues_(dialogues) {
    if (options_.samples < 1) throw PreconditionError("sample count n must be >= 1");
}

Evaluator::Drawn Evaluator::draw_scores(const std::string& prompt, const AspectSpec& aspect) const {
    GenRequest req;
    req.prompt = prompt;
    req.n_samples = options_.samples;
    req.temperature = options_.temperature;
    req.max_tokens = options_.max_tokens;

    Drawn out;
    int missing = options_.samples;
    std::string last_bad;
    for (int round = 0; round <= options_.parse_retries && missing > 0; ++round) {
        req.n_samples = missing;
        req.seed = mix_seed(options_.seed, static_cast<std::uint64_t>(round));
        const GenResponse resp = gateway_.complete(req);
        for (std::size_t i = 0; i < resp.completions.size(); ++i) {
            const auto parsed = parse_integer_score(resp.completions[i], aspect);
            if (!parsed.ok()) {
                last_bad = resp.completions[i];
                continue;
            }
            out.samples.push_back(*parsed.score);
            out.logprobs.push_back(i < resp.logprobs.size() ? resp.logprobs[i] : std::nullopt);
            --missing;
        }
    }
    if (out.samples.empty())
        throw EvaluationError("no parseable " + aspect.name + " score after " +
                              std::to_string(options_.parse_retries + 1) + " rounds; last output: " +
                              last_bad.substr(0, 120));
    return out;
}

double Evaluator::estimate(const Drawn& d) const {
    if (options_.estimator == Estimator::LogProb) return weighted_score(d.samples, d.logprobs);
    return weighted_score(d.samples);
}

ParticleScore Evaluator::score_particle(const Instruction& instruction, const Particle& particle) const {
    const AspectSpec& aspect = aspects_.get(instruction.aspect);
    auto compute = [&] {
        std::string context;
        if (dialogues_) {
            if (auto it = dialogues_->find(particle.dialogue_id); it != dialogues_->end())
                context = prompts::particle_context(it->second, particle.turn_index);
        }
        const auto drawn =
            draw_scores(prompts::render_evaluation(aspect, context, particle, instruction.text), aspect);
        return ParticleScore{particle.particle_id, instruction.instruction_id, drawn.samples, estimate(drawn)};
    };
    if (!options_.memoize) return compute();

    const std::string key = instruction.aspect + '|' + to_hex(fnv1a64(instruction.text)) + '|' +
                            particle.particle_id + '|' + to_hex(fnv1a64(particle.mention));
    std::promise<ParticleScore> promise;
    std::shared_future<ParticleScore> pending;
    bool owner = false;
    {
        std::lock_guard lock(memo_mu_);
        auto it = memo_.find(key);
        if (it == memo_.end()) {
            it = memo_.emplace(key, promise.get_future().share()).first;
            owner = true;
        }
        pending = it->second;
    }
    if (owner) {
        try {
            promise.set_value(compute());
        } catch (...) {
            promise.set_exception(std::current_exception());
            std::lock_guard lock(memo_mu_);
            memo_.erase(key);
        }
    }
    ParticleScore out = pending.get();
    out.instruction_id = instruction.instruction_id;
    return out;
}

double Evaluator::particle_score(const Instruction& instruction, const Particle& particle) const {
    return score_particle(instruction, particle).value;
}

std::vector<std::vector<double>> Evaluator::score_matrix(std::span<const Instruction> instructions,
                                                         std::span<const Particle> particles) const {
    std::vector<std::vector<double>> out(instructions.size(), std::vector<double>(particles.size()));
    const std::size_t cols = particles.size();
    parallel_for(instructions.size() * cols, options_.workers, [&](std::size_t k) {
        out[k / cols][k % cols] = particle_score(instructions[k / cols], particles[k % cols]);
    });
    return out;
}

double Evaluator::unit_score(const Instruction& instruction, std::span<const Particle> particles) const {
    if (particles.empty()) throw EvaluationError("unit has no particles");
    const auto m = score_matrix(std::span<const Instruction>(&instruction, 1), particles);
    return stable_mean(m.front());
}

double Evaluator::face_score(std::span<const Instruction> instructions, std::span<const Particle> particles) const {
    if (instructions.empty()) throw PreconditionError("face_score needs at least one instruction");
    if (particles.empty()) throw EvaluationError("unit has no particles");
    for (const auto& ins : instructions)
        if (ins.aspect != instructions.front().aspect)
            throw PreconditionError("face_score instructions must target one aspect");
    const auto m = score_matrix(instructions, particles);
    std::vector<double> per_instruction;
    per_instruction.reserve(m.size());
    for (const auto& row : m) per_instruction.push_back(stable_mean(row));
    return stable_mean(per_instruction);
}

CorpusScores Evaluator::evaluate_corpus(const AspectSpec& aspect, const std::vector<Dialogue>& dialogues,
                                        const ParticleMap& particles,
                                        std::span<const Instruction> instructions) const {
    if (instructions.empty()) throw PreconditionError("evaluate_corpus needs at least one instruction");
    for (const auto& ins : instructions)
        if (ins.aspect != aspect.name)
            throw PreconditionError("instruction " + ins.instruction_id + " targets " + ins.aspect + ", not " +
                                    aspect.name);

    CorpusScores result;
    result.table.aspect = aspect.name;
    result.table.level = aspect.level;
    auto& prov = result.table.provenance;
    prov.method = "face";
    for (const auto& ins : instructions) prov.instruction_ids.push_back(ins.instruction_id);
    prov.backend_id = gateway_.backend_id();
    prov.seed = options_.seed;
    prov.samples = options_.samples;
    prov.estimator = to_string(options_.estimator);

    // Flatten every (instruction, particle) pair of the corpus into one concurrent wave.
    std::vector<const Particle*> flat;
    std::map<UnitRef, std::vector<std::size_t>> by_unit;
    for (const auto& unit : units_of(aspect, dialogues)) by_unit[unit];
    for (const auto& d : dialogues) {
        auto it = particles.find(d.dialogue_id);
        if (it == particles.end()) continue;
        for (const auto& p : it->second) {
            by_unit[unit_of(p, aspect.level)].push_back(flat.size());
            flat.push_back(&p);
        }
    }
    const std::size_t n_ins = instructions.size();
    std::vector<double> scores(flat.size() * n_ins, 0.0);
    const auto errors = parallel_for_collect(flat.size() * n_ins, options_.workers, [&](std::size_t k) {
        scores[k] = particle_score(instructions[k % n_ins], *flat[k / n_ins]);
    });

    std::vector<bool> particle_ok(flat.size(), true);
    std::vector<std::string> particle_error(flat.size());
    for (std::size_t k = 0; k < errors.size(); ++k) {
        if (!errors[k] || !particle_ok[k / n_ins]) continue;
        particle_ok[k / n_ins] = false;
        try {
            std::rethrow_exception(errors[k]);
        } catch (const std::exception& e) {
            particle_error[k / n_ins] = e.what();
        }
    }

    for (const auto& [unit, members] : by_unit) {
        if (members.empty()) {
            if (aspect.level == AspectLevel::Turn)
                result.skipped.push_back(unit);
            else
                result.failures.push_back({unit, "dialogue has no particles"});
            continue;
        }
        const auto bad = std::find_if(members.begin(), members.end(), [&](std::size_t i) { return !particle_ok[i]; });
        if (bad != members.end()) {
            result.failures.push_back({unit, particle_error[*bad]});
            continue;
        }
        std::vector<double> per_instruction(n_ins);
        for (std::size_t i = 0; i < n_ins; ++i) {
            std::vector<double> column;
            column.reserve(members.size());
            for (auto m : members) column.push_back(scores[m * n_ins + i]);
            per_instruction[i] = stable_mean(column);
        }
        result.table.rows.push_back({unit, stable_mean(per_instruction)});
    }

    for (std::size_t j = 0; j < flat.size(); ++j) {
        if (!particle_ok[j]) continue;
        const auto row = std::span<const double>(scores).subspan(j * n_ins, n_ins);
        result.particles.push_back({flat[j]->particle_id, flat[j]->dialogue_id, flat[j]->turn_index, flat[j]->act,
                                    stable_mean(row)});
    }
    return result;
}

double Evaluator::direct_baseline(const AspectSpec& aspect, std::string_view unit_content) const {
    return estimate(draw_scores(prompts::render_direct(aspect, unit_content), aspect));
}

CorpusScores Evaluator::evaluate_corpus_direct(const AspectSpec& aspect, const std::vector<Dialogue>& dialogues) const {
    CorpusScores result;
    result.table.aspect = aspect.name;
    result.table.level = aspect.level;
    auto& prov = result.table.provenance;
    prov.method = "direct";
    prov.backend_id = gateway_.backend_id();
    prov.seed = options_.seed;
    prov.samples = options_.samples;
    prov.estimator = to_string(options_.estimator);

    std::map<std::string, const Dialogue*> by_id;
    for (const auto& d : dialogues) by_id[d.dialogue_id] = &d;
    const auto units = units_of(aspect, dialogues);
    std::vector<double> scores(units.size());
    const auto errors = parallel_for_collect(units.size(), options_.workers, [&](std::size_t i) {
        const Dialogue& d = *by_id.at(units[i].dialogue_id);
        scores[i] = direct_baseline(aspect, prompts::unit_content(d, units[i].turn_index));
    });
    for (std::size_t i = 0; i < units.size(); ++i) {
        if (!errors[i]) {
            result.table.rows.push_back({units[i], scores[i]});
            continue;
        }
        try {
            std::rethrow_exception(errors[i]);
        } catch (const std::exception& e) {
            result.failures.push_back({units[i], e.what()});
        }
    }
    return result;
}

}  // namespace faceval
