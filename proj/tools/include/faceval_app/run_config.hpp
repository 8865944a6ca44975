#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "faceval/evaluator.hpp"
#include "faceval/gateway.hpp"
#include "faceval/optimizer.hpp"

namespace faceval::app {

struct BackendConfig {
    std::string kind = "openai";  // openai | scripted | oracle
    std::string base_url = "http://localhost:8000/v1";
    std::string model;
    std::string api_key_env = "FACEVAL_API_KEY";
    int retries = 3;
    int timeout_s = 120;
    bool logprobs = false;
    std::filesystem::path rules;  // scripted
    std::filesystem::path world;  // oracle
    std::size_t max_in_flight = 8;
    bool cache = true;
    std::filesystem::path cache_path;
};

struct ReportConfig {
    std::vector<std::size_t> sizes;  // empty: 1..smallest per-system dialogue count
    std::size_t trials = 200;
    std::filesystem::path pairs;     // optional preference pairs (JSON-lines)
};

/// Single JSON document describing a run. Relative paths resolve against the config file.
struct RunConfig {
    BackendConfig backend;
    std::filesystem::path corpus;
    std::vector<std::string> aspects;  // empty: the corpus aspects
    std::filesystem::path instructions;
    std::filesystem::path output_dir = "faceval-out";
    std::uint64_t seed = 0;
    Hyperparams hyperparams;
    EvaluatorOptions evaluation;
    std::size_t history_word_budget = 2048;
    int decompose_retries = 3;
    std::string mode = "face";  // face | direct
    ReportConfig report;

    static RunConfig from_json(const json& doc, const std::filesystem::path& base_dir = {});
    static RunConfig from_file(const std::filesystem::path& path);

    /// Every setting that can change an output. Omits output locations and secrets.
    json canonical() const;
    /// 16 hex digits over canonical().
    std::string hash() const;

    std::filesystem::path instructions_path() const;
    std::filesystem::path particle_dir() const { return output_dir / "particles"; }
    std::filesystem::path score_dir() const { return output_dir / "scores"; }
    std::filesystem::path optimize_dir() const { return output_dir / "optimize"; }
    std::filesystem::path report_dir() const { return output_dir / "report"; }
};

std::shared_ptr<Backend> make_backend(const BackendConfig& config);
GatewayOptions gateway_options(const BackendConfig& config);

}  // namespace faceval::app
