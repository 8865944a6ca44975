#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "faceval/gateway.hpp"

namespace faceval {

// ---------------------------------------------------------------------------
// Scripted backend: a rule table mapping prompts to reply distributions.
// Output is a pure function of (rule table, request), which makes it the test
// oracle for every LLM-facing component.
// ---------------------------------------------------------------------------

struct ScriptedReply {
    std::string text;
    double weight = 1.0;
};

struct ScriptedRule {
    enum class Match { Any, Substring, PromptHash };

    Match match = Match::Any;
    std::string pattern;  // substring, or to_hex(fnv1a64(prompt)) for PromptHash
    std::vector<ScriptedReply> replies;
    bool cycle = false;   // completion i is replies[i % size], ignoring weights
    bool seeded = true;   // draws depend on the request seed; otherwise on the prompt alone

    bool matches(std::string_view prompt) const;
};

class ScriptedBackend final : public Backend {
public:
    explicit ScriptedBackend(std::vector<ScriptedRule> rules, bool strict = true, std::string id = "scripted");

    /// Rule table document:
    /// {"strict": true, "id": "scripted", "rules": [
    ///    {"match": "*" | {"substring": "..."} | {"hash": "..."},
    ///     "replies": ["2", {"text": "1", "weight": 2}], "cycle": false, "seeded": true}]}
    static ScriptedBackend from_json(const json& doc);
    static ScriptedBackend from_file(const std::filesystem::path& path);

    /// Single rule matching everything.
    static ScriptedBackend constant(std::string reply);
    static ScriptedBackend cycling(std::vector<std::string> replies);

    std::string id() const override { return id_; }
    GenResponse generate(const GenRequest& req) override;

private:
    std::vector<ScriptedRule> rules_;
    bool strict_;
    std::string id_;
};

/// Adapts a callable (prompt, sample index, seed) -> completion into a backend.
class CallbackBackend final : public Backend {
public:
    using Fn = std::function<std::string(const std::string& prompt, int sample, std::uint64_t seed)>;
    explicit CallbackBackend(Fn fn, std::string id = "callback") : fn_(std::move(fn)), id_(std::move(id)) {}

    std::string id() const override { return id_; }
    GenResponse generate(const GenRequest& req) override;

private:
    Fn fn_;
    std::string id_;
};

// ---------------------------------------------------------------------------
// OpenAI-compatible chat-completions client.
// ---------------------------------------------------------------------------

struct OpenAIConfig {
    std::string base_url = "http://localhost:8000/v1";
    std::string model;
    std::string api_key;
    int retries = 3;
    std::chrono::milliseconds backoff{250};
    std::chrono::seconds timeout{120};
    bool request_logprobs = false;

    /// Overrides base_url, model and api_key from FACEVAL_BASE_URL, FACEVAL_MODEL, FACEVAL_API_KEY.
    void apply_environment();
};

class OpenAIBackend final : public Backend {
public:
    explicit OpenAIBackend(OpenAIConfig config);

    std::string id() const override { return "openai:" + config_.model; }
    GenResponse generate(const GenRequest& req) override;

    const OpenAIConfig& config() const noexcept { return config_; }

private:
    OpenAIConfig config_;
    std::string scheme_host_port_;
    std::string path_prefix_;
};

/// JSON body for POST {base_url}/chat/completions.
json build_chat_request(const OpenAIConfig& config, const GenRequest& req);

/// Extracts completions (and per-choice log-probabilities when present) from a response body.
GenResponse parse_chat_response(const json& body, int expected, const std::string& backend_id);

}  // namespace faceval
