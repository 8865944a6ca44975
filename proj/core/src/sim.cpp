#include "faceval/sim.hpp"

#include <algorithm>
#include <fstream>
#include <random>

#include "faceval/errors.hpp"
#include "faceval/hashing.hpp"
#include "faceval/prompts.hpp"

namespace faceval::sim {

namespace {

std::string mention_of(std::string_view prompt) {
    const auto block = prompts::extract_section(prompt, "particle");
    if (!block) return {};
    constexpr std::string_view key = "Mention: ";
    const auto pos = block->find(key);
    if (pos == std::string::npos) return {};
    const auto start = pos + key.size();
    const auto end = block->find('\n', start);
    return prompts::trim(std::string_view(*block).substr(start, end == std::string::npos ? end : end - start));
}

std::string critique(std::string_view token) {
    return "The predicted score disagrees with the gold score because the instruction never tells the evaluator "
           "to " + std::string(token) + " the nugget against the dialogue. Add the keyword \"" + std::string(token) +
           "\" as an explicit step.";
}

const std::string kSaturated = "The instruction already covers every check; no edit is necessary.";

}  // namespace

const std::vector<std::string>& default_tokens() {
    static const std::vector<std::string> tokens = {"crosscheck", "calibrate", "substantiate", "contrast",
                                                    "corroborate", "triangulate", "benchmark", "scrutinize"};
    return tokens;
}

double OracleWorld::quality(std::string_view text) const {
    if (good_tokens.empty()) return 1.0;
    std::size_t present = 0;
    for (const auto& t : good_tokens)
        if (text.find(t) != std::string_view::npos) ++present;
    return static_cast<double>(present) / static_cast<double>(good_tokens.size());
}

std::vector<std::string> OracleWorld::missing_tokens(std::string_view text) const {
    std::vector<std::string> out;
    for (const auto& t : good_tokens)
        if (text.find(t) == std::string_view::npos) out.push_back(t);
    return out;
}

std::optional<int> OracleWorld::gold(std::string_view mention) const {
    for (const auto& p : particles)
        if (p.mention == mention) return p.gold;
    return std::nullopt;
}

OracleWorld OracleWorld::from_json(const json& doc) {
    OracleWorld w;
    try {
        w.seed = doc.value("seed", std::uint64_t{0});
        w.aspect = doc.value("aspect", std::string("Relevance"));
        w.min_score = doc.value("min_score", 0);
        w.max_score = doc.value("max_score", 3);
        w.good_tokens = doc.value("good_tokens", std::vector<std::string>{});
        for (const auto& p : doc.at("particles")) w.particles.push_back({p.at("mention").get<std::string>(), p.at("gold").get<int>()});
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed oracle world: ") + e.what());
    }
    if (w.min_score > w.max_score) throw ConfigError("oracle world has min_score > max_score");
    for (const auto& t : w.good_tokens)
        if (t.empty()) throw ConfigError("oracle world has an empty good token");
    for (const auto& p : w.particles)
        if (p.gold < w.min_score || p.gold > w.max_score)
            throw ConfigError("oracle particle gold " + std::to_string(p.gold) + " outside scale");
    return w;
}

OracleWorld OracleWorld::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open oracle world " + path.string());
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("oracle world " + path.string() + " is not valid JSON");
    return from_json(doc);
}

json OracleWorld::to_json() const {
    json ps = json::array();
    for (const auto& p : particles) ps.push_back({{"mention", p.mention}, {"gold", p.gold}});
    return json{{"seed", seed},          {"aspect", aspect},           {"min_score", min_score},
                {"max_score", max_score}, {"good_tokens", good_tokens}, {"particles", ps}};
}

OracleBackend::OracleBackend(OracleWorld world, bool strict, std::string id)
    : world_(std::move(world)), strict_(strict), id_(std::move(id)) {}

GenResponse OracleBackend::generate(const GenRequest& req) {
    validate(req);
    GenResponse resp;
    resp.backend_id = id_;
    std::mt19937_64 rng(mix_seed(world_.seed, mix_seed(fnv1a64(req.prompt), req.seed.value_or(0))));
    const auto span = static_cast<std::size_t>(world_.max_score - world_.min_score + 1);
    auto pick_missing = [&](const std::vector<std::string>& missing) -> const std::string& {
        return missing[uniform_index(rng, missing.size())];
    };

    const auto kind = prompts::classify(req.prompt);
    for (int i = 0; i < req.n_samples; ++i) {
        std::string out;
        switch (kind) {
            case prompts::Kind::Evaluation: {
                const std::string mention = mention_of(req.prompt);
                const auto gold = world_.gold(mention);
                if (!gold) throw ConfigError("oracle world has no particle with mention '" + mention + "'");
                const double q = world_.quality(prompts::extract_section(req.prompt, "instruction").value_or(""));
                const int score = uniform_unit(rng) < q
                                      ? *gold
                                      : world_.min_score + static_cast<int>(uniform_index(rng, span));
                out = "The nugget was checked against the instruction. Score: " + std::to_string(score);
                break;
            }
            case prompts::Kind::Direct:
                out = "Score: " + std::to_string(world_.min_score + static_cast<int>(uniform_index(rng, span)));
                break;
            case prompts::Kind::Gradient: {
                const auto missing =
                    world_.missing_tokens(prompts::extract_section(req.prompt, "current_instruction").value_or(""));
                out = "<feedback>" + (missing.empty() ? kSaturated : critique(pick_missing(missing))) + "</feedback>";
                break;
            }
            case prompts::Kind::Rewrite: {
                const std::string parent = prompts::extract_section(req.prompt, "current_instruction").value_or("");
                const std::string feedback = prompts::extract_section(req.prompt, "feedback").value_or("");
                const auto missing = world_.missing_tokens(parent);
                std::string text = parent;
                if (!missing.empty()) {
                    auto named = std::find_if(missing.begin(), missing.end(),
                                              [&](const std::string& t) { return feedback.find(t) != std::string::npos; });
                    text += " Step: " + (named != missing.end() ? *named : pick_missing(missing)) + " the nugget.";
                }
                out = "<instruction>" + text + "</instruction>";
                break;
            }
            case prompts::Kind::Combined: {
                const std::string parent = prompts::extract_section(req.prompt, "current_instruction").value_or("");
                const auto missing = world_.missing_tokens(parent);
                if (missing.empty()) {
                    out = "<feedback>" + kSaturated + "</feedback>\n<instruction>" + parent + "</instruction>";
                } else {
                    const std::string& token = pick_missing(missing);
                    out = "<feedback>" + critique(token) + "</feedback>\n<instruction>" + parent + " Step: " + token +
                          " the nugget.</instruction>";
                }
                break;
            }
            case prompts::Kind::Decomposition: {
                const std::string response = prompts::extract_section(req.prompt, "target_response").value_or("");
                const std::string reply = prompts::extract_section(req.prompt, "user_reply").value_or("");
                json particle{{"act", "recommendation"}, {"mention", response}};
                particle["feedback"] = reply.empty() || reply == prompts::kNoFeedback ? json(nullptr) : json(reply);
                out = json::array({particle}).dump();
                break;
            }
            case prompts::Kind::Unknown:
                if (strict_) throw ConfigError("oracle backend cannot classify prompt: " + req.prompt.substr(0, 80));
                break;
        }
        resp.usage.completion += static_cast<std::int64_t>(word_count(out));
        resp.completions.push_back(std::move(out));
    }
    resp.usage.prompt = static_cast<std::int64_t>(word_count(req.prompt));
    return resp;
}

SyntheticCorpus make_synthetic_corpus(const SyntheticOptions& options) {
    if (options.dialogues < 2) throw PreconditionError("synthetic corpus needs at least 2 dialogues");
    if (options.systems < 1) throw PreconditionError("synthetic corpus needs at least 1 system");
    if (options.tokens > default_tokens().size())
        throw PreconditionError("at most " + std::to_string(default_tokens().size()) + " planted tokens");

    SyntheticCorpus c;
    c.aspect = AspectRegistry().get("Relevance");
    c.world.seed = options.seed;
    c.world.aspect = c.aspect.name;
    c.world.min_score = c.aspect.min_score;
    c.world.max_score = c.aspect.max_score;
    c.world.good_tokens.assign(default_tokens().begin(), default_tokens().begin() + static_cast<std::ptrdiff_t>(options.tokens));

    const int levels = c.aspect.max_score - c.aspect.min_score + 1;
    std::vector<int> golds;
    for (std::size_t i = 0; i < options.dialogues; ++i) golds.push_back(c.aspect.min_score + static_cast<int>(i % levels));
    std::mt19937_64 rng(mix_seed(options.seed, "synthetic-golds"));
    for (std::size_t i = golds.size() - 1; i > 0; --i) std::swap(golds[i], golds[uniform_index(rng, i + 1)]);

    static const char* const genres[] = {"comedy", "thriller", "documentary", "western", "musical", "drama"};
    for (std::size_t i = 0; i < options.dialogues; ++i) {
        const std::string n = std::to_string(i + 1);
        Dialogue d;
        d.dialogue_id = "syn-" + std::string(i + 1 < 10 ? "0" : "") + n;
        d.system_id = "system-" + std::string(1, static_cast<char>('a' + i % options.systems));
        const std::string genre = genres[i % std::size(genres)];
        d.utterances = {{0, Speaker::User, "Can you suggest a " + genre + " for tonight?"},
                        {1, Speaker::System, "You could watch Feature " + n + ", a " + genre + " many people enjoy."},
                        {2, Speaker::User, "Thanks, I will think about Feature " + n + "."}};
        Particle p;
        p.particle_id = make_particle_id(d.dialogue_id, 1, 0);
        p.dialogue_id = d.dialogue_id;
        p.turn_index = 1;
        p.act = DialogueAct::Recommendation;
        p.mention = d.utterances[1].text;
        p.feedback = d.utterances[2].text;
        c.world.particles.push_back({p.mention, golds[i]});
        c.annotations.push_back({{d.dialogue_id, 1}, c.aspect.name, golds[i]});
        c.particles[d.dialogue_id].push_back(std::move(p));
        c.dialogues.push_back(std::move(d));
    }
    return c;
}

}  // namespace faceval::sim
