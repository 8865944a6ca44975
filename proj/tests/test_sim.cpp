#include <doctest.h>

#include <map>

#include "faceval/decomposer.hpp"
#include "faceval/errors.hpp"
#include "faceval/evaluator.hpp"
#include "faceval/prompts.hpp"
#include "faceval/sim.hpp"
#include "support.hpp"

using namespace faceval;
using namespace faceval::sim;

namespace {

OracleWorld small_world() {
    OracleWorld w;
    w.seed = 5;
    w.good_tokens = {"alpha", "beta"};
    w.particles = {{"mention one", 2}, {"mention two", 0}};
    return w;
}

Particle particle(const std::string& mention) {
    return {"p", "d", 1, DialogueAct::Recommendation, mention, std::nullopt};
}

}  // namespace

TEST_CASE("quality is the fraction of planted tokens present") {
    const auto w = small_world();
    CHECK(w.quality("nothing") == 0.0);
    CHECK(w.quality("use alpha") == 0.5);
    CHECK(w.quality("alpha then beta") == 1.0);
    CHECK(w.missing_tokens("alpha") == std::vector<std::string>{"beta"});
    CHECK(OracleWorld{}.quality("x") == 1.0);
    CHECK(*w.gold("mention two") == 0);
    CHECK_FALSE(w.gold("other").has_value());
}

TEST_CASE("world json round trip and validation") {
    const auto w = small_world();
    const auto back = OracleWorld::from_json(w.to_json());
    CHECK(back.to_json() == w.to_json());
    auto bad = w.to_json();
    bad["particles"][0]["gold"] = 9;
    CHECK_THROWS_AS(OracleWorld::from_json(bad), ConfigError);
    CHECK_THROWS_AS(OracleWorld::from_json(json{{"seed", 1}}), ConfigError);
    CHECK_THROWS_AS(OracleWorld::from_file("/nonexistent/world.json"), ConfigError);
}

TEST_CASE("evaluation samples follow the noise model") {
    const auto w = small_world();
    OracleBackend b(w);
    const AspectSpec rel = AspectRegistry{}.get("Relevance");
    auto draw = [&](const std::string& instruction, const std::string& mention, int n) {
        const auto prompt = prompts::render_evaluation(rel, "", particle(mention), instruction);
        std::map<int, int> counts;
        for (const auto& c : b.generate({prompt, n, 0.6, 64, 3}).completions)
            ++counts[*parse_integer_score(c, rel).score];
        return counts;
    };
    const auto perfect = draw("alpha beta", "mention one", 200);
    CHECK(perfect.size() == 1);
    CHECK(perfect.at(2) == 200);

    // q = 0: uniform over 0..3.
    const auto noise = draw("plain", "mention one", 4000);
    for (int s = 0; s <= 3; ++s) {
        CHECK(noise.at(s) > 900);
        CHECK(noise.at(s) < 1100);
    }
    // q = 0.5: gold with probability 0.5 + 0.5 / 4.
    const auto half = draw("alpha only", "mention two", 4000);
    CHECK(half.at(0) > 2400);
    CHECK(half.at(0) < 2600);

    const auto prompt = prompts::render_evaluation(rel, "", particle("unknown"), "x");
    CHECK_THROWS_AS(b.generate({prompt, 1}), ConfigError);
}

TEST_CASE("critiques name a missing token and rewrites add it") {
    OracleBackend b(small_world());
    const AspectSpec rel = AspectRegistry{}.get("Relevance");
    const auto g = b.generate({prompts::render_gradient(rel, "uses alpha", particle("mention one"), 1.0, 2), 1});
    const auto feedback = prompts::extract_section(g.completions[0], "feedback");
    REQUIRE(feedback.has_value());
    CHECK(feedback->find("beta") != std::string::npos);

    const auto r = b.generate({prompts::render_rewrite(rel, "uses alpha", *feedback), 1});
    const auto text = prompts::extract_section(r.completions[0], "instruction");
    REQUIRE(text.has_value());
    CHECK(*text == "uses alpha Step: beta the nugget.");

    const auto c = b.generate({prompts::render_combined(rel, "plain", particle("mention one"), 1.0, 2), 1});
    const auto child = prompts::extract_section(c.completions[0], "instruction");
    REQUIRE(child.has_value());
    CHECK(small_world().quality(*child) == 0.5);
    CHECK(prompts::extract_section(c.completions[0], "feedback").has_value());

    const auto saturated =
        b.generate({prompts::render_gradient(rel, "alpha beta", particle("mention one"), 1.0, 2), 1});
    CHECK(saturated.completions[0].find("no edit is necessary") != std::string::npos);
}

TEST_CASE("decomposition yields the target response as a single particle") {
    auto backend = std::make_shared<OracleBackend>(small_world());
    Gateway g(backend);
    Decomposer dec(g);
    const auto d = test::make_dialogue("d", "s", {"hi", "mention one", "ok thanks"});
    const auto ps = dec.decompose_dialogue(d);
    REQUIRE(ps.size() == 1);
    CHECK(ps[0].mention == "mention one");
    CHECK(*ps[0].feedback == "ok thanks");
}

TEST_CASE("unknown prompts: strict throws, lenient returns empty text") {
    OracleBackend strict(small_world());
    CHECK_THROWS_AS(strict.generate({"what is this", 1}), ConfigError);
    OracleBackend lenient(small_world(), false);
    CHECK(lenient.generate({"what is this", 2}).completions == std::vector<std::string>{"", ""});
}

TEST_CASE("synthetic corpus is valid, balanced and deterministic") {
    const auto c = make_synthetic_corpus({});
    CHECK(c.dialogues.size() == 12);
    std::map<int, int> golds;
    std::map<std::string, int> systems;
    for (const auto& a : c.annotations) {
        ++golds[a.label];
        CHECK(validate_annotation(a, c.aspect).empty());
    }
    for (const auto& d : c.dialogues) {
        CHECK(validate_dialogue(d).empty());
        ++systems[d.system_id];
        CHECK(c.particles.at(d.dialogue_id).size() == 1);
        CHECK(c.world.gold(c.particles.at(d.dialogue_id)[0].mention).has_value());
    }
    CHECK(golds == std::map<int, int>{{0, 3}, {1, 3}, {2, 3}, {3, 3}});
    CHECK(systems.size() == 3);
    CHECK(c.world.particles.size() == 12);
    CHECK(c.world.good_tokens.size() == 4);
    CHECK(make_synthetic_corpus({}).annotations == c.annotations);
    SyntheticOptions other;
    other.seed = 1;
    CHECK(make_synthetic_corpus(other).annotations != c.annotations);
    SyntheticOptions too_many;
    too_many.tokens = 99;
    CHECK_THROWS_AS(make_synthetic_corpus(too_many), PreconditionError);
}
