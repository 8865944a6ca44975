#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <chrono>
#include <thread>

#include "faceval/backends.hpp"
#include "faceval/hashing.hpp"
#include "faceval/errors.hpp"
#include "faceval/gateway.hpp"
#include "faceval/parallel.hpp"
#include "support.hpp"

using namespace faceval;

namespace {

const AspectSpec kRel{"Relevance", AspectLevel::Turn, 0, 3, ""};

class SlowCounting : public Backend {
public:
    std::string id() const override { return "slow"; }
    GenResponse generate(const GenRequest& req) override {
        const int now = ++live;
        int seen = peak.load();
        while (now > seen && !peak.compare_exchange_weak(seen, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
        --live;
        ++calls;
        return {std::vector<std::string>(static_cast<std::size_t>(req.n_samples), req.prompt), id(), {}, {}};
    }
    std::atomic<int> live{0}, peak{0}, calls{0};
};

class ShortBackend : public Backend {
public:
    std::string id() const override { return "short"; }
    GenResponse generate(const GenRequest&) override { return {{"only one"}, id(), {}, {}}; }
};

}  // namespace

TEST_CASE("request validation") {
    CHECK_THROWS_AS(validate(GenRequest{"p", 0}), PreconditionError);
    CHECK_THROWS_AS(validate(GenRequest{"p", 1, -0.1}), PreconditionError);
    CHECK_THROWS_AS(validate(GenRequest{"p", 1, 0.6, 0}), PreconditionError);
    CHECK_NOTHROW(validate(GenRequest{"p", 3}));
}

TEST_CASE("score parsing takes the last integer token") {
    CHECK(parse_integer_score("Reasoning... Score: 2", kRel).score == 2);
    CHECK(parse_integer_score("On a 0-3 scale I give 1", kRel).score == 1);
    CHECK(parse_integer_score("Score: 3\n", kRel).score == 3);
    CHECK_FALSE(parse_integer_score("no digits here", kRel).ok());
    CHECK(parse_integer_score("no digits here", kRel).failure == ScoreParseFailure::NotFound);
    const auto oor = parse_integer_score("Score: 7", kRel);
    CHECK_FALSE(oor.ok());
    CHECK(oor.failure == ScoreParseFailure::OutOfRange);
    CHECK(*oor.raw == 7);
    CHECK(parse_integer_score("Score: -1", kRel).failure == ScoreParseFailure::OutOfRange);
    CHECK_FALSE(parse_integer_score("Score: 2.5", kRel).ok());
    CHECK(parse_integer_score("It is 2.5 or so. Final: 2", kRel).score == 2);
}

TEST_CASE("scripted backend is a pure function of the request") {
    auto b = ScriptedBackend::from_file(test::fixture("mini/scripted_rules.json"));
    GenRequest r{"You are an expert evaluator of conversational assistants. x", 5, 0.6, 64, 11};
    const auto a1 = b.generate(r), a2 = b.generate(r);
    CHECK(a1.completions == a2.completions);
    CHECK(a1.completions.size() == 5);
    r.seed = 12;
    bool differs = false;
    for (std::uint64_t s = 12; s < 40 && !differs; ++s) {
        r.seed = s;
        differs = b.generate(r).completions != a1.completions;
    }
    CHECK(differs);
    CHECK_THROWS_AS(b.generate(GenRequest{"unmatched prompt"}), ConfigError);
}

TEST_CASE("scripted rules: cycling, order, non-strict misses, bad tables") {
    auto cyc = ScriptedBackend::cycling({"a", "b"});
    CHECK(cyc.generate(GenRequest{"x", 3}).completions == std::vector<std::string>{"a", "b", "a"});
    auto c = ScriptedBackend::constant("k");
    CHECK(c.generate(GenRequest{"anything", 2}).completions == std::vector<std::string>{"k", "k"});

    json doc{{"strict", false},
             {"rules",
              {{{"match", {{"substring", "alpha"}}}, {"replies", {"first"}}},
               {{"match", {{"hash", to_hex(fnv1a64("exact"))}}}, {"replies", {"hashed"}}},
               {{"match", {{"substring", "a"}}}, {"replies", {"second"}}}}}};
    auto b = ScriptedBackend::from_json(doc);
    CHECK(b.generate(GenRequest{"alphabet"}).completions[0] == "first");
    CHECK(b.generate(GenRequest{"exact"}).completions[0] == "hashed");
    CHECK(b.generate(GenRequest{"banana"}).completions[0] == "second");
    CHECK(b.generate(GenRequest{"zzz", 2}).completions == std::vector<std::string>{"", ""});

    CHECK_THROWS_AS(ScriptedBackend::from_json(json{{"rules", {{{"match", "*"}, {"replies", json::array()}}}}}),
                    ConfigError);
    CHECK_THROWS_AS(ScriptedBackend::from_json(json{{"rules", 3}}), ConfigError);
    CHECK_THROWS_AS(ScriptedBackend::from_file("/nonexistent/rules.json"), ConfigError);
}

TEST_CASE("weighted replies follow their weights") {
    json doc{{"rules", {{{"match", "*"}, {"replies", {{{"text", "a"}, {"weight", 3}}, {{"text", "b"}, {"weight", 1}}}}}}}};
    auto b = ScriptedBackend::from_json(doc);
    const auto r = b.generate(GenRequest{"p", 4000, 0.6, 8, 1});
    const auto as = std::count(r.completions.begin(), r.completions.end(), "a");
    CHECK(as > 2850);
    CHECK(as < 3150);
}

TEST_CASE("gateway caches by (backend, prompt, seed, n) and counts requests") {
    auto backend = std::make_shared<SlowCounting>();
    Gateway g(backend);
    g.complete({"p", 2, 0.6, 8, 1});
    g.complete({"p", 2, 0.6, 8, 1});
    g.complete({"p", 2, 0.6, 8, 2});
    g.complete({"p", 3, 0.6, 8, 1});
    CHECK(g.requests() == 4);
    CHECK(g.backend_calls() == 3);
    CHECK(g.cache_hits() == 1);
    CHECK(cache_key("x", {"p", 1, 0.6, 8, std::nullopt}) != cache_key("x", {"p", 1, 0.6, 8, 0}));

    Gateway nocache(backend, {8, false, {}});
    nocache.complete({"p", 1});
    nocache.complete({"p", 1});
    CHECK(nocache.backend_calls() == 2);
}

TEST_CASE("gateway caps concurrent backend calls") {
    auto backend = std::make_shared<SlowCounting>();
    Gateway g(backend, {3, false, {}});
    parallel_for(40, 16, [&](std::size_t i) { g.complete({"p" + std::to_string(i), 1}); });
    CHECK(backend->calls == 40);
    CHECK(backend->peak <= 3);
    CHECK(g.peak_in_flight() <= 3);
    CHECK(g.max_in_flight() == 3);
}

TEST_CASE("gateway rejects short responses") {
    Gateway g(std::make_shared<ShortBackend>());
    CHECK_THROWS_AS(g.complete({"p", 2}), BackendError);
}

TEST_CASE("persistent cache survives a restart") {
    test::TempDir dir;
    const auto path = dir / "cache/responses.jsonl";
    auto backend = std::make_shared<SlowCounting>();
    {
        Gateway g(backend, {4, true, path});
        g.complete({"persist me", 2, 0.6, 8, 5});
    }
    test::write_file(dir / "cache/extra", "");
    {
        std::ofstream torn(path, std::ios::app);
        torn << "{\"key\": \"trunc";
    }
    Gateway g2(backend, {4, true, path});
    const auto r = g2.complete({"persist me", 2, 0.6, 8, 5});
    CHECK(r.completions == std::vector<std::string>{"persist me", "persist me"});
    CHECK(g2.backend_calls() == 0);
    CHECK(g2.cache_hits() == 1);
}

TEST_CASE("chat request and response shapes") {
    OpenAIConfig cfg;
    cfg.model = "m";
    cfg.request_logprobs = true;
    const auto body = build_chat_request(cfg, {"hello", 3, 0.6, 100, 9});
    CHECK(body.at("model") == "m");
    CHECK(body.at("n") == 3);
    CHECK(body.at("seed") == 9);
    CHECK(body.at("messages")[0].at("content") == "hello");
    CHECK(body.at("logprobs") == true);

    json resp{{"choices",
               {{{"index", 1}, {"message", {{"content", "b"}}}},
                {{"index", 0},
                 {"message", {{"content", "a"}}},
                 {"logprobs", {{"content", {{{"logprob", -0.5}}, {{"logprob", -0.25}}}}}}}}},
              {"usage", {{"prompt_tokens", 10}, {"completion_tokens", 4}}}};
    const auto r = parse_chat_response(resp, 2, "id");
    CHECK(r.completions == std::vector<std::string>{"a", "b"});
    REQUIRE(r.logprobs.size() == 2);
    CHECK(*r.logprobs[0] == -0.75);
    CHECK_FALSE(r.logprobs[1].has_value());
    CHECK(r.usage.prompt == 10);
    CHECK_THROWS_AS(parse_chat_response(resp, 3, "id"), BackendError);
    CHECK_THROWS_AS(OpenAIBackend(OpenAIConfig{"localhost:1", "m"}), ConfigError);
    CHECK_THROWS_AS(OpenAIBackend(OpenAIConfig{"http://localhost:1", ""}), ConfigError);
}

TEST_CASE("openai backend against an in-process server") {
    httplib::Server server;
    std::atomic<int> hits{0};
    json last_body;
    std::mutex mu;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        const int hit = ++hits;
        json body = json::parse(req.body);
        {
            std::lock_guard lock(mu);
            last_body = body;
        }
        if (body.at("messages")[0].at("content") == "flaky" && hit == 1) {
            res.status = 503;
            return;
        }
        if (body.at("messages")[0].at("content") == "bad") {
            res.status = 400;
            res.set_content("nope", "text/plain");
            return;
        }
        json choices = json::array();
        for (int i = 0; i < body.at("n").get<int>(); ++i)
            choices.push_back({{"index", i}, {"message", {{"content", "Score: " + std::to_string(i)}}}});
        res.set_content(json{{"choices", choices}}.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    OpenAIConfig cfg{"http://127.0.0.1:" + std::to_string(port) + "/v1/", "test-model", "secret"};
    cfg.backoff = std::chrono::milliseconds(1);
    OpenAIBackend backend(cfg);
    CHECK(backend.id() == "openai:test-model");
    const auto r = backend.generate({"hello", 3, 0.6, 16, 4});
    CHECK(r.completions == std::vector<std::string>{"Score: 0", "Score: 1", "Score: 2"});
    {
        std::lock_guard lock(mu);
        CHECK(last_body.at("seed") == 4);
        CHECK(last_body.at("model") == "test-model");
    }

    hits = 0;
    CHECK(backend.generate({"flaky", 1}).completions.size() == 1);
    CHECK(hits == 2);

    try {
        backend.generate({"bad", 1});
        FAIL("expected BackendError");
    } catch (const BackendError& e) {
        CHECK_FALSE(e.retriable());
        CHECK(e.attempts() == 1);
    }
    server.stop();
    t.join();
}

TEST_CASE("unreachable endpoint fails after the configured retries") {
    httplib::Server probe;
    const int port = probe.bind_to_any_port("127.0.0.1");
    std::thread t([&] { probe.listen_after_bind(); });
    probe.wait_until_ready();
    probe.stop();  // closes the listening socket
    t.join();
    OpenAIConfig cfg{"http://127.0.0.1:" + std::to_string(port) + "/v1", "m"};
    cfg.retries = 2;
    cfg.backoff = std::chrono::milliseconds(1);
    cfg.timeout = std::chrono::seconds(2);
    OpenAIBackend backend(cfg);
    try {
        backend.generate({"x", 1});
        FAIL("expected BackendError");
    } catch (const BackendError& e) {
        CHECK(e.retriable());
        CHECK(e.attempts() == 3);
    }
}

TEST_CASE("callback backend and environment overrides") {
    CallbackBackend cb([](const std::string& p, int i, std::uint64_t s) { return p + std::to_string(i) + std::to_string(s); });
    CHECK(cb.generate({"x", 2, 0.6, 8, 7}).completions == std::vector<std::string>{"x07", "x17"});

    ::setenv("FACEVAL_MODEL", "env-model", 1);
    ::setenv("FACEVAL_BASE_URL", "http://example.invalid/v1", 1);
    OpenAIConfig cfg;
    cfg.apply_environment();
    CHECK(cfg.model == "env-model");
    CHECK(cfg.base_url == "http://example.invalid/v1");
    ::unsetenv("FACEVAL_MODEL");
    ::unsetenv("FACEVAL_BASE_URL");
}

TEST_CASE("parallel_for reports the lowest failing index") {
    try {
        parallel_for(20, 4, [](std::size_t i) {
            if (i == 7 || i == 13) throw std::runtime_error(std::to_string(i));
        });
        FAIL("expected throw");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()) == "7");
    }
    const auto errs = parallel_for_collect(5, 2, [](std::size_t i) {
        if (i % 2) throw std::runtime_error("x");
    });
    CHECK(static_cast<bool>(errs[1]));
    CHECK_FALSE(static_cast<bool>(errs[2]));
}
