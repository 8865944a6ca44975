#include <fstream>
#include <random>

#include "faceval/backends.hpp"
#include "faceval/errors.hpp"
#include "faceval/hashing.hpp"

namespace faceval {

bool ScriptedRule::matches(std::string_view prompt) const {
    switch (match) {
        case Match::Any: return true;
        case Match::Substring: return prompt.find(pattern) != std::string_view::npos;
        case Match::PromptHash: return to_hex(fnv1a64(prompt)) == pattern;
    }
    return false;
}

ScriptedBackend::ScriptedBackend(std::vector<ScriptedRule> rules, bool strict, std::string id)
    : rules_(std::move(rules)), strict_(strict), id_(std::move(id)) {
    for (const auto& r : rules_) {
        if (r.replies.empty()) throw ConfigError("scripted rule has no replies");
        for (const auto& reply : r.replies)
            if (!(reply.weight > 0.0)) throw ConfigError("scripted reply weights must be positive");
    }
}

ScriptedBackend ScriptedBackend::from_json(const json& doc) try {
    std::vector<ScriptedRule> rules;
    for (const auto& jr : doc.at("rules")) {
        ScriptedRule r;
        const auto& m = jr.at("match");
        if (m.is_string()) {
            if (m.get<std::string>() == "*") {
                r.match = ScriptedRule::Match::Any;
            } else {
                r.match = ScriptedRule::Match::Substring;
                r.pattern = m.get<std::string>();
            }
        } else if (m.contains("substring")) {
            r.match = ScriptedRule::Match::Substring;
            r.pattern = m.at("substring").get<std::string>();
        } else if (m.contains("hash")) {
            r.match = ScriptedRule::Match::PromptHash;
            r.pattern = m.at("hash").get<std::string>();
        } else {
            throw ConfigError("scripted rule matcher must be \"*\", a substring, or {\"hash\": ...}");
        }
        for (const auto& jp : jr.at("replies")) {
            if (jp.is_string())
                r.replies.push_back({jp.get<std::string>(), 1.0});
            else
                r.replies.push_back({jp.at("text").get<std::string>(), jp.value("weight", 1.0)});
        }
        r.cycle = jr.value("cycle", false);
        r.seeded = jr.value("seeded", true);
        rules.push_back(std::move(r));
    }
    return ScriptedBackend(std::move(rules), doc.value("strict", true), doc.value("id", std::string("scripted")));
} catch (const json::exception& e) {
    throw ConfigError(std::string("scripted rule table: ") + e.what());
}

ScriptedBackend ScriptedBackend::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scripted rule table " + path.string());
    try {
        return from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw ConfigError("malformed scripted rule table " + path.string() + ": " + e.what());
    }
}

ScriptedBackend ScriptedBackend::constant(std::string reply) {
    ScriptedRule r;
    r.replies.push_back({std::move(reply), 1.0});
    return ScriptedBackend({std::move(r)});
}

ScriptedBackend ScriptedBackend::cycling(std::vector<std::string> replies) {
    ScriptedRule r;
    r.cycle = true;
    for (auto& s : replies) r.replies.push_back({std::move(s), 1.0});
    return ScriptedBackend({std::move(r)});
}

GenResponse ScriptedBackend::generate(const GenRequest& req) {
    GenResponse resp;
    resp.backend_id = id_;
    resp.usage.prompt = static_cast<std::int64_t>(word_count(req.prompt));
    for (std::size_t ri = 0; ri < rules_.size(); ++ri) {
        const auto& rule = rules_[ri];
        if (!rule.matches(req.prompt)) continue;
        std::uint64_t s = mix_seed(fnv1a64(req.prompt), ri);
        if (rule.seeded) s = mix_seed(s, req.seed.value_or(0));
        std::mt19937_64 rng(s);
        double total = 0.0;
        for (const auto& r : rule.replies) total += r.weight;
        for (int i = 0; i < req.n_samples; ++i) {
            const ScriptedReply* pick = &rule.replies.back();
            if (rule.cycle) {
                pick = &rule.replies[static_cast<std::size_t>(i) % rule.replies.size()];
            } else if (rule.replies.size() > 1) {
                double u = uniform_unit(rng) * total;
                for (const auto& r : rule.replies) {
                    if (u < r.weight) {
                        pick = &r;
                        break;
                    }
                    u -= r.weight;
                }
            }
            resp.completions.push_back(pick->text);
            resp.usage.completion += static_cast<std::int64_t>(word_count(pick->text));
        }
        return resp;
    }
    if (strict_)
        throw ConfigError("scripted backend " + id_ + ": no rule matches prompt " + to_hex(fnv1a64(req.prompt)));
    resp.completions.assign(static_cast<std::size_t>(req.n_samples), std::string{});
    return resp;
}

GenResponse CallbackBackend::generate(const GenRequest& req) {
    GenResponse resp;
    resp.backend_id = id_;
    for (int i = 0; i < req.n_samples; ++i) resp.completions.push_back(fn_(req.prompt, i, req.seed.value_or(0)));
    return resp;
}

}  // namespace faceval
