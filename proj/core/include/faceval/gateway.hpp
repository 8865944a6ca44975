#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "faceval/model.hpp"

namespace faceval {

inline constexpr double kDefaultTemperature = 0.6;

struct GenRequest {
    std::string prompt;
    int n_samples = 1;
    double temperature = kDefaultTemperature;
    int max_tokens = 512;
    std::optional<std::uint64_t> seed;
};

/// Throws PreconditionError for n_samples < 1, negative temperature, or max_tokens < 1.
void validate(const GenRequest& req);

struct TokenUsage {
    std::int64_t prompt = 0;
    std::int64_t completion = 0;
};

struct GenResponse {
    std::vector<std::string> completions;
    std::string backend_id;
    TokenUsage usage;
    // Per-completion sequence log-probability, when the backend reports one. Empty otherwise.
    std::vector<std::optional<double>> logprobs;
};

/// A text-generation backend. Implementations must be safe to call from many threads.
class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string id() const = 0;
    virtual GenResponse generate(const GenRequest& req) = 0;
};

struct GatewayOptions {
    std::size_t max_in_flight = 8;
    bool cache = true;
    std::filesystem::path cache_path;  // empty: in-memory cache only
};

/// Front door for all sampling: in-flight cap, response cache, request accounting.
class Gateway {
public:
    explicit Gateway(std::shared_ptr<Backend> backend, GatewayOptions options = {});
    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    GenResponse complete(const GenRequest& req);

    std::string backend_id() const { return backend_->id(); }
    std::size_t max_in_flight() const noexcept { return options_.max_in_flight; }
    bool caching() const noexcept { return options_.cache; }

    std::uint64_t requests() const noexcept { return requests_.load(); }
    std::uint64_t backend_calls() const noexcept { return backend_calls_.load(); }
    std::uint64_t cache_hits() const noexcept { return cache_hits_.load(); }
    std::size_t peak_in_flight() const noexcept { return peak_in_flight_.load(); }

private:
    void acquire();
    void release();
    void load_cache();
    void store(const std::string& key, const GenResponse& resp);

    std::shared_ptr<Backend> backend_;
    GatewayOptions options_;

    std::mutex slots_mu_;
    std::condition_variable slots_cv_;
    std::size_t in_flight_ = 0;

    std::mutex cache_mu_;
    std::unordered_map<std::string, GenResponse> cache_;
    std::ofstream cache_file_;

    std::atomic<std::uint64_t> requests_{0};
    std::atomic<std::uint64_t> backend_calls_{0};
    std::atomic<std::uint64_t> cache_hits_{0};
    std::atomic<std::size_t> peak_in_flight_{0};
};

/// Cache key over (backend id, prompt hash, seed, sample count).
std::string cache_key(std::string_view backend_id, const GenRequest& req);

/// Direct call without gateway bookkeeping. Checks the sample-count postcondition.
GenResponse complete(const GenRequest& req, Backend& backend);

enum class ScoreParseFailure { NotFound, OutOfRange };

struct ScoreParse {
    std::optional<int> score;
    ScoreParseFailure failure = ScoreParseFailure::NotFound;
    std::optional<long long> raw;  // the offending integer on OutOfRange

    bool ok() const noexcept { return score.has_value(); }
};

/// Takes the last integer token of a completion and checks it against the aspect's scale.
ScoreParse parse_integer_score(std::string_view completion, const AspectSpec& spec);

}  // namespace faceval
