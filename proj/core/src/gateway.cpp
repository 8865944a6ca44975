#include "faceval/gateway.hpp"

#include <cctype>

#include "faceval/errors.hpp"
#include "faceval/hashing.hpp"

namespace faceval {

void validate(const GenRequest& req) {
    if (req.n_samples < 1) throw PreconditionError("n_samples must be >= 1");
    if (req.temperature < 0.0) throw PreconditionError("temperature must be non-negative");
    if (req.max_tokens < 1) throw PreconditionError("max_tokens must be >= 1");
}

std::string cache_key(std::string_view backend_id, const GenRequest& req) {
    std::string key(backend_id);
    key += '|';
    key += to_hex(fnv1a64(req.prompt));
    key += '|';
    key += req.seed ? std::to_string(*req.seed) : std::string("-");
    key += '|';
    key += std::to_string(req.n_samples);
    return key;
}

GenResponse complete(const GenRequest& req, Backend& backend) {
    validate(req);
    GenResponse resp = backend.generate(req);
    if (resp.completions.size() != static_cast<std::size_t>(req.n_samples))
        throw BackendError("backend " + backend.id() + " returned " + std::to_string(resp.completions.size()) +
                               " completions, expected " + std::to_string(req.n_samples),
                           1, false);
    if (resp.backend_id.empty()) resp.backend_id = backend.id();
    return resp;
}

Gateway::Gateway(std::shared_ptr<Backend> backend, GatewayOptions options)
    : backend_(std::move(backend)), options_(std::move(options)) {
    if (!backend_) throw ConfigError("gateway requires a backend");
    if (options_.max_in_flight == 0) options_.max_in_flight = 1;
    if (options_.cache && !options_.cache_path.empty()) load_cache();
}

void Gateway::acquire() {
    std::unique_lock lock(slots_mu_);
    slots_cv_.wait(lock, [&] { return in_flight_ < options_.max_in_flight; });
    ++in_flight_;
    std::size_t peak = peak_in_flight_.load();
    while (in_flight_ > peak && !peak_in_flight_.compare_exchange_weak(peak, in_flight_)) {
    }
}

void Gateway::release() {
    {
        std::lock_guard lock(slots_mu_);
        --in_flight_;
    }
    slots_cv_.notify_one();
}

GenResponse Gateway::complete(const GenRequest& req) {
    validate(req);
    ++requests_;
    const std::string key = options_.cache ? cache_key(backend_->id(), req) : std::string{};
    if (options_.cache) {
        std::lock_guard lock(cache_mu_);
        if (auto it = cache_.find(key); it != cache_.end()) {
            ++cache_hits_;
            return it->second;
        }
    }
    acquire();
    GenResponse resp;
    try {
        ++backend_calls_;
        resp = faceval::complete(req, *backend_);
    } catch (...) {
        release();
        throw;
    }
    release();
    if (options_.cache) store(key, resp);
    return resp;
}

void Gateway::load_cache() {
    const auto& path = options_.cache_path;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (std::ifstream in{path}) {
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            json j = json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.contains("key")) continue;  // torn trailing write
            GenResponse r;
            r.completions = j.at("completions").get<std::vector<std::string>>();
            r.backend_id = j.value("backend_id", std::string{});
            r.usage.prompt = j.value("prompt_tokens", 0);
            r.usage.completion = j.value("completion_tokens", 0);
            if (auto it = j.find("logprobs"); it != j.end())
                for (const auto& lp : *it)
                    r.logprobs.push_back(lp.is_null() ? std::nullopt : std::optional<double>(lp.get<double>()));
            cache_.emplace(j.at("key").get<std::string>(), std::move(r));
        }
    }
    cache_file_.open(path, std::ios::app);
    if (!cache_file_) throw ConfigError("cannot open response cache " + path.string());
}

void Gateway::store(const std::string& key, const GenResponse& resp) {
    std::lock_guard lock(cache_mu_);
    if (!cache_.emplace(key, resp).second) return;
    if (!cache_file_.is_open()) return;
    json j{{"key", key},
           {"backend_id", resp.backend_id},
           {"completions", resp.completions},
           {"prompt_tokens", resp.usage.prompt},
           {"completion_tokens", resp.usage.completion}};
    if (!resp.logprobs.empty()) {
        json lps = json::array();
        for (const auto& lp : resp.logprobs) lps.push_back(lp ? json(*lp) : json(nullptr));
        j["logprobs"] = std::move(lps);
    }
    cache_file_ << j.dump() << '\n';
    cache_file_.flush();
}

ScoreParse parse_integer_score(std::string_view text, const AspectSpec& spec) {
    // Last maximal digit run; a '-' counts as a sign only when it does not follow
    // an alphanumeric character ("0-3" is a range, " -1" is negative).
    std::optional<long long> last;
    std::size_t i = 0;
    while (i < text.size()) {
        if (!std::isdigit(static_cast<unsigned char>(text[i]))) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
        const bool fractional = j + 1 < text.size() && text[j] == '.' &&
                                std::isdigit(static_cast<unsigned char>(text[j + 1]));
        const bool after_point = i > 0 && text[i - 1] == '.' && i > 1 &&
                                 std::isdigit(static_cast<unsigned char>(text[i - 2]));
        if (!fractional && !after_point) {
            const std::string_view digits = text.substr(i, j - i);
            long long v = digits.size() > 12 ? (1LL << 40) : std::stoll(std::string(digits));
            const bool negative =
                i > 0 && text[i - 1] == '-' &&
                (i == 1 || !std::isalnum(static_cast<unsigned char>(text[i - 2])));
            last = negative ? -v : v;
        } else {
            last.reset();
        }
        i = j;
        if (fractional) {
            ++i;
            while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
        }
    }
    ScoreParse out;
    if (!last) return out;
    if (*last < spec.min_score || *last > spec.max_score) {
        out.failure = ScoreParseFailure::OutOfRange;
        out.raw = last;
        return out;
    }
    out.score = static_cast<int>(*last);
    return out;
}

}  // namespace faceval
