#include "faceval_app/run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "faceval/backends.hpp"
#include "faceval/errors.hpp"
#include "faceval/hashing.hpp"
#include "faceval/sim.hpp"

namespace faceval::app {

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    if (p.empty()) return {};
    std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& where) {
    for (const auto& [key, value] : obj.items())
        if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

}  // namespace

RunConfig RunConfig::from_json(const json& doc, const std::filesystem::path& base) {
    if (!doc.is_object()) throw ConfigError("run config must be a JSON object");
    reject_unknown(doc,
                   {"backend", "corpus", "aspects", "instructions", "output_dir", "seed", "hyperparams", "evaluation",
                    "decomposition", "mode", "report"},
                   "run config");
    RunConfig c;
    try {
        if (doc.contains("backend")) {
            const auto& b = doc.at("backend");
            reject_unknown(b,
                           {"kind", "base_url", "model", "api_key_env", "retries", "timeout_s", "logprobs", "rules",
                            "world", "max_in_flight", "cache", "cache_path"},
                           "backend");
            c.backend.kind = b.value("kind", c.backend.kind);
            c.backend.base_url = b.value("base_url", c.backend.base_url);
            c.backend.model = b.value("model", c.backend.model);
            c.backend.api_key_env = b.value("api_key_env", c.backend.api_key_env);
            c.backend.retries = b.value("retries", c.backend.retries);
            c.backend.timeout_s = b.value("timeout_s", c.backend.timeout_s);
            c.backend.logprobs = b.value("logprobs", c.backend.logprobs);
            c.backend.rules = resolve(base, b.value("rules", std::string{}));
            c.backend.world = resolve(base, b.value("world", std::string{}));
            c.backend.max_in_flight = b.value("max_in_flight", c.backend.max_in_flight);
            c.backend.cache = b.value("cache", c.backend.cache);
            c.backend.cache_path = resolve(base, b.value("cache_path", std::string{}));
        }
        c.corpus = resolve(base, doc.value("corpus", std::string{}));
        c.aspects = doc.value("aspects", std::vector<std::string>{});
        c.instructions = resolve(base, doc.value("instructions", std::string{}));
        c.output_dir = resolve(base, doc.value("output_dir", std::string("faceval-out")));
        c.seed = doc.value("seed", std::uint64_t{0});
        if (doc.contains("hyperparams")) c.hyperparams = doc.at("hyperparams").get<Hyperparams>();
        if (doc.contains("evaluation")) {
            const auto& e = doc.at("evaluation");
            reject_unknown(e, {"estimator", "parse_retries", "temperature", "max_tokens", "workers"}, "evaluation");
            c.evaluation.estimator = estimator_from_string(e.value("estimator", std::string("empirical")));
            c.evaluation.parse_retries = e.value("parse_retries", c.evaluation.parse_retries);
            c.evaluation.temperature = e.value("temperature", c.evaluation.temperature);
            c.evaluation.max_tokens = e.value("max_tokens", c.evaluation.max_tokens);
            c.evaluation.workers = e.value("workers", c.evaluation.workers);
        }
        if (doc.contains("decomposition")) {
            const auto& d = doc.at("decomposition");
            reject_unknown(d, {"history_word_budget", "parse_retries"}, "decomposition");
            c.history_word_budget = d.value("history_word_budget", c.history_word_budget);
            c.decompose_retries = d.value("parse_retries", c.decompose_retries);
        }
        c.mode = doc.value("mode", c.mode);
        if (doc.contains("report")) {
            const auto& r = doc.at("report");
            reject_unknown(r, {"sizes", "trials", "pairs"}, "report");
            c.report.sizes = r.value("sizes", std::vector<std::size_t>{});
            c.report.trials = r.value("trials", c.report.trials);
            c.report.pairs = resolve(base, r.value("pairs", std::string{}));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed run config: ") + e.what());
    }
    if (c.backend.kind != "openai" && c.backend.kind != "scripted" && c.backend.kind != "oracle")
        throw ConfigError("backend.kind must be openai, scripted or oracle, not '" + c.backend.kind + "'");
    if (c.mode != "face" && c.mode != "direct") throw ConfigError("mode must be face or direct");
    c.hyperparams.validate();
    return c;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open run config " + path.string());
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("run config " + path.string() + " is not valid JSON");
    return from_json(doc, path.parent_path());
}

json RunConfig::canonical() const {
    json backend_json{{"kind", backend.kind}};
    if (backend.kind == "openai") {
        backend_json["base_url"] = backend.base_url;
        backend_json["model"] = backend.model;
        backend_json["logprobs"] = backend.logprobs;
    } else if (backend.kind == "scripted") {
        backend_json["rules"] = backend.rules.filename().string();
    } else {
        backend_json["world"] = backend.world.filename().string();
    }
    return json{{"backend", backend_json},
                {"corpus", corpus.filename().string()},
                {"aspects", aspects},
                {"seed", seed},
                {"hyperparams", hyperparams},
                {"evaluation",
                 {{"estimator", to_string(evaluation.estimator)},
                  {"parse_retries", evaluation.parse_retries},
                  {"temperature", evaluation.temperature},
                  {"max_tokens", evaluation.max_tokens}}},
                {"decomposition", {{"history_word_budget", history_word_budget}, {"parse_retries", decompose_retries}}},
                {"mode", mode}};
}

std::string RunConfig::hash() const { return to_hex(fnv1a64(canonical().dump())); }

std::filesystem::path RunConfig::instructions_path() const {
    return instructions.empty() ? output_dir / "instructions.json" : instructions;
}

std::shared_ptr<Backend> make_backend(const BackendConfig& config) {
    if (config.kind == "scripted") {
        if (config.rules.empty()) throw ConfigError("backend.rules is required for the scripted backend");
        return std::make_shared<ScriptedBackend>(ScriptedBackend::from_file(config.rules));
    }
    if (config.kind == "oracle") {
        if (config.world.empty()) throw ConfigError("backend.world is required for the oracle backend");
        return std::make_shared<sim::OracleBackend>(sim::OracleWorld::from_file(config.world));
    }
    OpenAIConfig oc;
    oc.base_url = config.base_url;
    oc.model = config.model;
    if (const char* key = std::getenv(config.api_key_env.c_str())) oc.api_key = key;
    oc.retries = config.retries;
    oc.timeout = std::chrono::seconds(config.timeout_s);
    oc.request_logprobs = config.logprobs;
    oc.apply_environment();
    if (oc.model.empty()) throw ConfigError("backend.model (or FACEVAL_MODEL) is required for the openai backend");
    return std::make_shared<OpenAIBackend>(oc);
}

GatewayOptions gateway_options(const BackendConfig& config) {
    GatewayOptions o;
    o.max_in_flight = config.max_in_flight;
    o.cache = config.cache;
    o.cache_path = config.cache_path;
    return o;
}

}  // namespace faceval::app
