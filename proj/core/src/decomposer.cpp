#include "faceval/decomposer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "faceval/errors.hpp"
#include "faceval/hashing.hpp"
#include "faceval/parallel.hpp"
#include "faceval/prompts.hpp"

namespace faceval {

namespace {

std::string squash(std::string_view raw) {
    std::string out;
    for (unsigned char c : raw)
        if (std::isalnum(c)) out.push_back(static_cast<char>(std::tolower(c)));
    return out;
}

bool has_prefix(const std::string& s, std::string_view p) { return s.compare(0, p.size(), p) == 0; }

}  // namespace

DialogueAct normalize_act(std::string_view raw) {
    const std::string s = squash(raw);
    if (has_prefix(s, "greet") || s == "hello" || s == "hi" || has_prefix(s, "welcome")) return DialogueAct::Greetings;
    if (has_prefix(s, "preference") || has_prefix(s, "elicit") || has_prefix(s, "ask") ||
        has_prefix(s, "question") || has_prefix(s, "request"))
        return DialogueAct::PreferenceElicitation;
    if (has_prefix(s, "recommend") || has_prefix(s, "suggest")) return DialogueAct::Recommendation;
    if (has_prefix(s, "goodbye") || has_prefix(s, "bye") || has_prefix(s, "farewell") || has_prefix(s, "closing"))
        return DialogueAct::Goodbye;
    return DialogueAct::Others;
}

std::vector<ParticleDraft> parse_particles(std::string_view raw) {
    const auto open = raw.find('[');
    const auto close = raw.rfind(']');
    if (open == std::string_view::npos || close == std::string_view::npos || close < open)
        throw SchemaError("decomposer output contains no JSON array");
    json doc = json::parse(raw.substr(open, close - open + 1), nullptr, false);
    if (doc.is_discarded() || !doc.is_array()) throw SchemaError("decomposer output is not a valid JSON array");

    std::vector<ParticleDraft> out;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& item = doc[i];
        const std::string where = "particle " + std::to_string(i);
        if (!item.is_object()) throw SchemaError(where + " is not an object");
        if (!item.contains("act") || !item["act"].is_string()) throw SchemaError(where + " missing string key 'act'");
        if (!item.contains("mention") || !item["mention"].is_string())
            throw SchemaError(where + " missing string key 'mention'");
        ParticleDraft d;
        d.act = normalize_act(item["act"].get<std::string>());
        d.mention = prompts::trim(item["mention"].get<std::string>());
        if (d.mention.empty()) throw SchemaError(where + " has empty mention");
        if (auto it = item.find("feedback"); it != item.end() && !it->is_null()) {
            if (!it->is_string()) throw SchemaError(where + " feedback must be a string or null");
            std::string fb = prompts::trim(it->get<std::string>());
            if (!fb.empty()) d.feedback = std::move(fb);
        }
        out.push_back(std::move(d));
    }
    return out;
}

std::vector<Particle> Decomposer::decompose(const std::string& dialogue_id, const std::vector<Utterance>& history,
                                            const Utterance& response,
                                            const std::optional<Utterance>& user_reply) const {
    if (response.speaker != Speaker::System)
        throw PreconditionError("decompose target must be a system utterance");
    if (user_reply && user_reply->speaker != Speaker::User)
        throw PreconditionError("decompose reply must be a user utterance");

    GenRequest req;
    req.prompt = prompts::render_decomposer({history, response, user_reply}, options_.history_word_budget);
    req.temperature = options_.temperature;
    req.max_tokens = options_.max_tokens;

    std::string last_raw;
    std::string last_error;
    for (int attempt = 0; attempt <= options_.parse_retries; ++attempt) {
        req.seed = mix_seed(options_.seed, static_cast<std::uint64_t>(attempt));
        last_raw = gateway_.complete(req).completions.front();
        try {
            auto drafts = parse_particles(last_raw);
            std::vector<Particle> out;
            out.reserve(drafts.size());
            for (std::size_t i = 0; i < drafts.size(); ++i) {
                Particle p;
                p.particle_id = make_particle_id(dialogue_id, response.index, static_cast<int>(i));
                p.dialogue_id = dialogue_id;
                p.turn_index = response.index;
                p.act = drafts[i].act;
                p.mention = std::move(drafts[i].mention);
                if (user_reply) p.feedback = std::move(drafts[i].feedback);
                out.push_back(std::move(p));
            }
            return out;
        } catch (const SchemaError& e) {
            last_error = e.what();
        }
    }
    throw DecompositionError("turn " + std::to_string(response.index) + " of " + dialogue_id + ": " + last_error +
                                 " (after " + std::to_string(options_.parse_retries + 1) + " attempts)",
                             last_raw, response.index);
}

std::vector<Particle> Decomposer::decompose_dialogue(const Dialogue& d) const {
    std::vector<std::size_t> system_turns;
    for (std::size_t i = 0; i < d.utterances.size(); ++i)
        if (d.utterances[i].speaker == Speaker::System) system_turns.push_back(i);

    std::vector<std::vector<Particle>> per_turn(system_turns.size());
    parallel_for(system_turns.size(), options_.workers, [&](std::size_t k) {
        const std::size_t t = system_turns[k];
        std::vector<Utterance> history(d.utterances.begin(), d.utterances.begin() + static_cast<std::ptrdiff_t>(t));
        std::optional<Utterance> reply;
        if (t + 1 < d.utterances.size() && d.utterances[t + 1].speaker == Speaker::User) reply = d.utterances[t + 1];
        per_turn[k] = decompose(d.dialogue_id, history, d.utterances[t], reply);
    });

    std::vector<Particle> out;
    for (auto& v : per_turn) std::move(v.begin(), v.end(), std::back_inserter(out));
    return out;
}

std::filesystem::path particle_cache_path(const std::filesystem::path& dir, const std::string& dialogue_id) {
    std::string safe;
    for (char c : dialogue_id) safe.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_');
    return dir / (safe + "-" + to_hex(fnv1a64(dialogue_id), 8) + ".jsonl");
}

void write_particles(const std::filesystem::path& path, const std::vector<Particle>& particles) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + tmp);
        for (const auto& p : particles) out << json(p).dump() << '\n';
    }
    std::filesystem::rename(tmp, path);
}

std::vector<Particle> read_particles(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read particle cache " + path.string());
    std::vector<Particle> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line).get<Particle>());
        } catch (const std::exception& e) {
            throw SchemaError(e.what(), path.string() + ":" + std::to_string(lineno));
        }
    }
    return out;
}

}  // namespace faceval
