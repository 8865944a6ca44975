#include <algorithm>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "faceval/backends.hpp"
#include "faceval/errors.hpp"

namespace faceval {

void OpenAIConfig::apply_environment() {
    if (const char* v = std::getenv("FACEVAL_BASE_URL"); v && *v) base_url = v;
    if (const char* v = std::getenv("FACEVAL_MODEL"); v && *v) model = v;
    if (const char* v = std::getenv("FACEVAL_API_KEY"); v && *v) api_key = v;
}

OpenAIBackend::OpenAIBackend(OpenAIConfig config) : config_(std::move(config)) {
    const auto scheme_end = config_.base_url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("base_url needs a scheme: " + config_.base_url);
    const auto path_start = config_.base_url.find('/', scheme_end + 3);
    scheme_host_port_ = config_.base_url.substr(0, path_start);
    path_prefix_ = path_start == std::string::npos ? std::string{} : config_.base_url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
    if (config_.model.empty()) throw ConfigError("openai backend requires a model name");
}

json build_chat_request(const OpenAIConfig& config, const GenRequest& req) {
    json body{{"model", config.model},
              {"messages", json::array({{{"role", "user"}, {"content", req.prompt}}})},
              {"n", req.n_samples},
              {"temperature", req.temperature},
              {"max_tokens", req.max_tokens}};
    if (req.seed) body["seed"] = *req.seed;
    if (config.request_logprobs) body["logprobs"] = true;
    return body;
}

GenResponse parse_chat_response(const json& body, int expected, const std::string& backend_id) {
    GenResponse resp;
    resp.backend_id = backend_id;
    const auto& choices = body.at("choices");
    bool any_logprob = false;
    std::vector<std::pair<int, std::string>> ordered;
    std::vector<std::optional<double>> lps;
    for (const auto& c : choices) {
        const auto& content = c.at("message").at("content");
        ordered.emplace_back(c.value("index", static_cast<int>(ordered.size())),
                             content.is_null() ? std::string{} : content.get<std::string>());
        std::optional<double> lp;
        if (auto it = c.find("logprobs"); it != c.end() && it->is_object() && it->contains("content")) {
            double sum = 0.0;
            for (const auto& tok : it->at("content")) sum += tok.value("logprob", 0.0);
            lp = sum;
            any_logprob = true;
        }
        lps.push_back(lp);
    }
    std::vector<std::size_t> order(ordered.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return ordered[a].first < ordered[b].first; });
    for (auto i : order) {
        resp.completions.push_back(ordered[i].second);
        if (any_logprob) resp.logprobs.push_back(lps[i]);
    }
    if (static_cast<int>(resp.completions.size()) != expected)
        throw BackendError("expected " + std::to_string(expected) + " choices, got " +
                               std::to_string(resp.completions.size()),
                           1, false);
    if (auto it = body.find("usage"); it != body.end() && it->is_object()) {
        resp.usage.prompt = it->value("prompt_tokens", 0);
        resp.usage.completion = it->value("completion_tokens", 0);
    }
    return resp;
}

GenResponse OpenAIBackend::generate(const GenRequest& req) {
    const std::string body = build_chat_request(config_, req).dump();
    const std::string path = path_prefix_ + "/chat/completions";
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    const int attempts_allowed = 1 + std::max(0, config_.retries);
    std::string last_error;
    for (int attempt = 1; attempt <= attempts_allowed; ++attempt) {
        httplib::Client client(scheme_host_port_);
        client.set_connection_timeout(std::chrono::seconds(10));
        client.set_read_timeout(config_.timeout);
        auto res = client.Post(path, headers, body, "application/json");
        if (!res) {
            last_error = "transport failure: " + httplib::to_string(res.error());
        } else if (res->status == 429 || res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
        } else if (res->status != 200) {
            throw BackendError("HTTP " + std::to_string(res->status) + " from " + scheme_host_port_ + path + ": " +
                                   res->body.substr(0, 200),
                               attempt, false);
        } else {
            json parsed = json::parse(res->body, nullptr, false);
            if (parsed.is_discarded())
                throw BackendError("unparseable response body from " + scheme_host_port_ + path, attempt, false);
            try {
                return parse_chat_response(parsed, req.n_samples, id());
            } catch (const json::exception& e) {
                throw BackendError(std::string("malformed chat response: ") + e.what(), attempt, false);
            }
        }
        if (attempt < attempts_allowed) std::this_thread::sleep_for(config_.backoff * attempt);
    }
    throw BackendError(last_error + " after " + std::to_string(attempts_allowed) + " attempts", attempts_allowed,
                       true);
}

}  // namespace faceval
