#include <doctest.h>

#include <atomic>

#include "faceval/backends.hpp"
#include "faceval/decomposer.hpp"
#include "faceval/errors.hpp"
#include "faceval/prompts.hpp"
#include "support.hpp"

using namespace faceval;

TEST_CASE("act normalisation") {
    CHECK(normalize_act("Greeting") == DialogueAct::Greetings);
    CHECK(normalize_act("hi") == DialogueAct::Greetings);
    CHECK(normalize_act("Preference Elicitation") == DialogueAct::PreferenceElicitation);
    CHECK(normalize_act("ask_question") == DialogueAct::PreferenceElicitation);
    CHECK(normalize_act("RECOMMENDATION") == DialogueAct::Recommendation);
    CHECK(normalize_act("suggest") == DialogueAct::Recommendation);
    CHECK(normalize_act("farewell") == DialogueAct::Goodbye);
    CHECK(normalize_act("chit-chat") == DialogueAct::Others);
}

TEST_CASE("particle parsing tolerates prose and fences") {
    const auto ps = parse_particles(
        "Here you go:\n```json\n[{\"act\": \"recommendation\", \"mention\": \"  Try Alien. \", \"feedback\": \"\"},"
        " {\"act\": \"greeting\", \"mention\": \"Hello\", \"feedback\": \"hi there\"}]\n```");
    REQUIRE(ps.size() == 2);
    CHECK(ps[0].mention == "Try Alien.");
    CHECK_FALSE(ps[0].feedback.has_value());
    CHECK(ps[1].act == DialogueAct::Greetings);
    CHECK(*ps[1].feedback == "hi there");
    CHECK(parse_particles("[]").empty());
}

TEST_CASE("particle parsing rejects malformed output") {
    CHECK_THROWS_AS(parse_particles("no array"), SchemaError);
    CHECK_THROWS_AS(parse_particles("[{\"act\": 1, \"mention\": \"x\"}]"), SchemaError);
    CHECK_THROWS_AS(parse_particles("[{\"act\": \"x\"}]"), SchemaError);
    CHECK_THROWS_AS(parse_particles("[{\"act\": \"x\", \"mention\": \"  \"}]"), SchemaError);
    CHECK_THROWS_AS(parse_particles("[{\"act\": \"x\", \"mention\": \"m\", \"feedback\": 3}]"), SchemaError);
    CHECK_THROWS_AS(parse_particles("[1, 2]"), SchemaError);
    CHECK_THROWS_AS(parse_particles("[{broken"), SchemaError);
}

TEST_CASE("decomposer prompt truncates history oldest first") {
    std::vector<Utterance> history;
    for (int i = 0; i < 6; ++i)
        history.push_back({i, i % 2 ? Speaker::System : Speaker::User, "w w w w w turn" + std::to_string(i)});
    const Utterance response{6, Speaker::System, "target"};
    const auto full = prompts::render_decomposer({history, response, std::nullopt}, 0);
    CHECK(full.rfind(prompts::kDecomposerOpening, 0) == 0);
    CHECK(full.find("turn0") != std::string::npos);
    const auto cut = prompts::render_decomposer({history, response, std::nullopt}, 13);
    CHECK(cut.find("turn0") == std::string::npos);
    CHECK(cut.find("turn3") == std::string::npos);
    CHECK(cut.find("turn4") != std::string::npos);
    CHECK(cut.find("turn5") != std::string::npos);
    CHECK(cut.find("4 earlier turns omitted") != std::string::npos);
    CHECK(cut.find(std::string(prompts::kNoFeedback)) != std::string::npos);
    CHECK(prompts::classify(cut) == prompts::Kind::Decomposition);
}

TEST_CASE("decompose assigns ids and drops feedback without a user reply") {
    Gateway g(std::make_shared<ScriptedBackend>(ScriptedBackend::from_file(test::fixture("mini/scripted_rules.json"))));
    Decomposer dec(g);
    const auto d = test::make_dialogue("d1", "s", {"hi", "Which genre?", "comedy", "Try Airplane!"});
    const auto ps = dec.decompose_dialogue(d);
    REQUIRE(ps.size() == 4);
    CHECK(ps[0].turn_index == 1);
    CHECK(ps[2].turn_index == 3);
    CHECK(ps[0].particle_id == make_particle_id("d1", 1, 0));
    CHECK(ps[1].particle_id == make_particle_id("d1", 1, 1));
    CHECK(ps[0].act == DialogueAct::PreferenceElicitation);
    CHECK(ps[0].feedback.has_value());
    CHECK_FALSE(ps[2].feedback.has_value());  // last system turn has no reply
    CHECK(dec.decompose_dialogue(d) == ps);
    CHECK_THROWS_AS(dec.decompose("d1", {}, d.utterances[0], std::nullopt), PreconditionError);
}

TEST_CASE("decompose retries unparseable output and then gives up") {
    std::atomic<int> calls{0};
    auto flaky = std::make_shared<CallbackBackend>([&](const std::string&, int, std::uint64_t) {
        return ++calls < 3 ? std::string("garbage") : std::string("[{\"act\": \"others\", \"mention\": \"m\"}]");
    });
    Gateway g(flaky);
    Decomposer dec(g, {0, 3});
    const Utterance resp{1, Speaker::System, "x"};
    CHECK(dec.decompose("d", {{0, Speaker::User, "u"}}, resp, std::nullopt).size() == 1);
    CHECK(calls == 3);

    Gateway never(std::make_shared<CallbackBackend>([](const std::string&, int, std::uint64_t) { return "nope"; }));
    Decomposer dec2(never, {0, 2});
    try {
        dec2.decompose("d", {}, resp, std::nullopt);
        FAIL("expected DecompositionError");
    } catch (const DecompositionError& e) {
        CHECK(e.raw_output() == "nope");
        CHECK(e.turn_index() == 1);
    }
    CHECK(never.requests() == 3);
}

TEST_CASE("particle cache round trip") {
    test::TempDir dir;
    const std::vector<Particle> ps{{"p1", "d/1", 1, DialogueAct::Recommendation, "m", "fb"},
                                   {"p2", "d/1", 3, DialogueAct::Others, "n", std::nullopt}};
    const auto path = particle_cache_path(dir.path(), "d/1");
    CHECK(path.filename().string().find('/') == std::string::npos);
    CHECK(particle_cache_path(dir.path(), "d/1") != particle_cache_path(dir.path(), "d_1"));
    write_particles(path, ps);
    CHECK(read_particles(path) == ps);
    test::write_file(dir / "bad.jsonl", "{\"particle_id\": 1}\n");
    CHECK_THROWS_AS(read_particles(dir / "bad.jsonl"), SchemaError);
    CHECK_THROWS_AS(read_particles(dir / "missing.jsonl"), ConfigError);
}
