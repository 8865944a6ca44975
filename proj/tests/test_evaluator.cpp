#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <random>

#include "faceval/backends.hpp"
#include "faceval/corpus.hpp"
#include "faceval/errors.hpp"
#include "faceval/evaluator.hpp"
#include "faceval/hashing.hpp"
#include "faceval/prompts.hpp"
#include "support.hpp"

using namespace faceval;

namespace {

/// Score = hash of (prompt, sample, seed) mod 4, rendered with some prose around it.
std::shared_ptr<Backend> hashed_backend(std::atomic<int>* calls = nullptr) {
    return std::make_shared<CallbackBackend>([calls](const std::string& prompt, int i, std::uint64_t seed) {
        if (calls) ++*calls;
        const auto h = mix_seed(mix_seed(fnv1a64(prompt), static_cast<std::uint64_t>(i)), seed);
        return "Step 1 done, step 2 done. Score: " + std::to_string(h % 4);
    });
}

Instruction ins(std::string text, std::string aspect = "Relevance") {
    return {make_instruction_id(aspect, text), aspect, text, std::nullopt, 0};
}

std::vector<Particle> particles(int n, const std::string& dialogue = "d1", int turn = 1) {
    std::vector<Particle> out;
    for (int i = 0; i < n; ++i)
        out.push_back({make_particle_id(dialogue, turn, i), dialogue, turn, DialogueAct::Recommendation,
                       "mention " + std::to_string(i), std::nullopt});
    return out;
}

}  // namespace

TEST_CASE("weighted score equals the arithmetic mean of the samples") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<int> s(1 + uniform_index(rng, 12));
        for (auto& v : s) v = static_cast<int>(uniform_index(rng, 5));
        double mean = 0;
        for (int v : s) mean += v;
        mean /= static_cast<double>(s.size());
        CHECK(weighted_score(s) == doctest::Approx(mean).epsilon(1e-12));
    }
    CHECK(weighted_score(std::vector<int>{2, 2, 0}) == doctest::Approx(4.0 / 3));
    CHECK_THROWS_AS(weighted_score(std::vector<int>{}), PreconditionError);
}

TEST_CASE("logprob weighting is a softmax and falls back when any logprob is missing") {
    const std::vector<int> s{0, 3};
    const std::vector<std::optional<double>> lp{std::log(1.0), std::log(3.0)};
    CHECK(weighted_score(s, lp) == doctest::Approx(9.0 / 4));
    const std::vector<std::optional<double>> partial{-1.0, std::nullopt};
    CHECK(weighted_score(s, partial) == 1.5);
    const std::vector<std::optional<double>> equal{-2.0, -2.0};
    CHECK(weighted_score(s, equal) == doctest::Approx(1.5));
}

TEST_CASE("stable mean does not depend on order") {
    std::vector<double> v{0.1, 1e16, -1e16, 0.3, 0.7, 2.5};
    const double m = stable_mean(v);
    std::sort(v.begin(), v.end());
    do {
        CHECK(stable_mean(v) == m);
    } while (std::next_permutation(v.begin(), v.end()));
}

TEST_CASE("particle scores are deterministic, memoised and in range") {
    std::atomic<int> calls{0};
    Gateway g(hashed_backend(&calls), {8, false, {}});
    Evaluator ev(g, AspectRegistry{}, {.samples = 5, .seed = 9});
    const auto ps = particles(4);
    const auto i1 = ins("first instruction");
    const auto a = ev.score_particle(i1, ps[0]);
    CHECK(a.samples.size() == 5);
    CHECK(a.value >= 0.0);
    CHECK(a.value <= 3.0);
    CHECK(a.instruction_id == i1.instruction_id);
    CHECK(ev.score_particle(i1, ps[0]).value == a.value);
    CHECK(g.requests() == 1);

    // Same text under a different id shares the memo entry and reports the caller's id.
    auto alias = i1;
    alias.instruction_id = "other";
    CHECK(ev.score_particle(alias, ps[0]).instruction_id == "other");
    CHECK(g.requests() == 1);

    Gateway g2(hashed_backend(), {8, false, {}});
    Evaluator fresh(g2, AspectRegistry{}, {.samples = 5, .seed = 9});
    CHECK(fresh.score_particle(i1, ps[0]).samples == a.samples);
}

TEST_CASE("concurrent callers share one computation per memo key") {
    Gateway g(hashed_backend(), {4, false, {}});
    Evaluator ev(g, AspectRegistry{}, {.samples = 3, .workers = 16});
    const auto ps = particles(3);
    std::vector<Instruction> many(20, ins("shared"));
    ev.score_matrix(many, ps);
    CHECK(g.requests() == 3);
}

TEST_CASE("unit and face scores are plain means") {
    Gateway g(hashed_backend());
    Evaluator ev(g, AspectRegistry{});
    const auto ps = particles(5);
    const std::vector<Instruction> set{ins("a"), ins("b"), ins("c")};
    std::vector<double> per_ins;
    for (const auto& i : set) {
        std::vector<double> row;
        for (const auto& p : ps) row.push_back(ev.particle_score(i, p));
        const double mean = stable_mean(row);
        CHECK(ev.unit_score(i, ps) == mean);
        per_ins.push_back(mean);
    }
    CHECK(ev.face_score(set, ps) == stable_mean(per_ins));
    CHECK_THROWS_AS(ev.unit_score(set[0], {}), EvaluationError);
    CHECK_THROWS_AS(ev.face_score({}, ps), PreconditionError);
    const std::vector<Instruction> mixed{ins("a"), ins("a", "Interestingness")};
    CHECK_THROWS_AS(ev.face_score(mixed, ps), PreconditionError);
}

TEST_CASE("scores are invariant to instruction and particle order") {
    Gateway g(hashed_backend());
    Evaluator ev(g, AspectRegistry{});
    auto ps = particles(6);
    std::vector<Instruction> set{ins("a"), ins("b"), ins("c"), ins("d")};
    const double face = ev.face_score(set, ps);
    const double unit = ev.unit_score(set[0], ps);
    std::mt19937_64 rng(1);
    for (int t = 0; t < 10; ++t) {
        std::shuffle(set.begin(), set.end(), rng);
        std::shuffle(ps.begin(), ps.end(), rng);
        CHECK(ev.face_score(set, ps) == face);
        CHECK(ev.unit_score(ins("a"), ps) == unit);
    }
}

TEST_CASE("cache on and off give identical scores") {
    Gateway cached(hashed_backend(), {8, true, {}});
    Gateway uncached(hashed_backend(), {8, false, {}});
    Evaluator a(cached, AspectRegistry{}, {.memoize = false});
    Evaluator b(uncached, AspectRegistry{}, {.memoize = false});
    const auto ps = particles(4);
    const std::vector<Instruction> set{ins("a"), ins("b")};
    CHECK(a.face_score(set, ps) == b.face_score(set, ps));
    CHECK(a.face_score(set, ps) == b.face_score(set, ps));
    CHECK(cached.cache_hits() > 0);
}

TEST_CASE("unparseable completions are retried, then reported") {
    std::atomic<int> calls{0};
    Gateway g(std::make_shared<CallbackBackend>([&](const std::string&, int, std::uint64_t) {
        return ++calls == 1 ? std::string("Score: 9") : std::string("Score: 2");
    }));
    Evaluator ev(g, AspectRegistry{}, {.samples = 3, .parse_retries = 2});
    const auto s = ev.score_particle(ins("x"), particles(1)[0]);
    CHECK(s.samples.size() == 3);
    CHECK(s.value == 2.0);
    CHECK(g.requests() == 2);

    Gateway bad(std::make_shared<CallbackBackend>([](const std::string&, int, std::uint64_t) { return "no score"; }));
    Evaluator ev2(bad, AspectRegistry{}, {.samples = 2, .parse_retries = 1});
    CHECK_THROWS_AS(ev2.score_particle(ins("x"), particles(1)[0]), EvaluationError);
    CHECK(bad.requests() == 2);
    // A failed computation is not memoised.
    CHECK_THROWS_AS(ev2.score_particle(ins("x"), particles(1)[0]), EvaluationError);
    CHECK(bad.requests() == 4);
}

TEST_CASE("evaluation prompt carries the particle, context and instruction") {
    const auto d = test::make_dialogue("d1", "s", {"I like comedies", "Try Airplane!", "Great, thanks", "Bye"});
    const Particle p{"p", "d1", 1, DialogueAct::Recommendation, "Try Airplane!", "Great"};
    const auto prompt =
        prompts::render_evaluation(AspectRegistry{}.get("Relevance"), prompts::particle_context(d, 1), p, "INSTR");
    CHECK(prompts::classify(prompt) == prompts::Kind::Evaluation);
    CHECK(prompt.find("Mention: Try Airplane!") != std::string::npos);
    CHECK(prompt.find("Great, thanks") != std::string::npos);
    CHECK(prompt.find("Bye") == std::string::npos);
    CHECK(prompt.find("INSTR") != std::string::npos);
    CHECK(prompt.find("0-3") != std::string::npos);
}

TEST_CASE("corpus evaluation over the fixture") {
    const Corpus corpus = load_corpus(CorpusManifest::from_file(test::fixture("mini/manifest.json")));
    Gateway g(hashed_backend());
    const auto dm = corpus.by_id();
    Evaluator ev(g, corpus.aspects, {}, &dm);
    ParticleMap pm;
    for (const auto& d : corpus.dialogues) {
        if (d.dialogue_id == "d06") continue;  // no particles at all
        auto& v = pm[d.dialogue_id];
        v.push_back({make_particle_id(d.dialogue_id, 1, 0), d.dialogue_id, 1, DialogueAct::PreferenceElicitation,
                     "asks", "answers"});
        if (d.dialogue_id != "d05")
            v.push_back({make_particle_id(d.dialogue_id, 3, 0), d.dialogue_id, 3, DialogueAct::Recommendation,
                         "suggests", std::nullopt});
    }
    const std::vector<Instruction> set{ins("a"), ins("b")};
    const auto rel = ev.evaluate_corpus(corpus.aspects.get("Relevance"), corpus.dialogues, pm, set);
    CHECK(rel.complete());
    CHECK(rel.table.rows.size() == 9);
    CHECK(rel.skipped.size() == 3);
    CHECK(std::is_sorted(rel.table.rows.begin(), rel.table.rows.end(),
                         [](const ScoreRow& a, const ScoreRow& b) { return a.unit < b.unit; }));
    CHECK(rel.particles.size() == 9);
    CHECK(rel.table.provenance.instruction_ids.size() == 2);
    const auto& p0 = pm.at("d01")[0];
    CHECK(*rel.table.find({"d01", 1}) == ev.face_score(set, std::span<const Particle>(&p0, 1)));

    std::vector<Instruction> und_set{ins("a", "Understanding")};
    const auto und = ev.evaluate_corpus(corpus.aspects.get("Understanding"), corpus.dialogues, pm, und_set);
    CHECK(und.table.rows.size() == 5);
    REQUIRE(und.failures.size() == 1);
    CHECK(und.failures[0].unit.dialogue_id == "d06");
    CHECK(*und.table.find({"d01", std::nullopt}) == ev.face_score(und_set, pm.at("d01")));
    CHECK_THROWS_AS(ev.evaluate_corpus(corpus.aspects.get("Understanding"), corpus.dialogues, pm, set),
                    PreconditionError);

    const auto direct = ev.evaluate_corpus_direct(corpus.aspects.get("Relevance"), corpus.dialogues);
    CHECK(direct.table.rows.size() == 12);
    CHECK(direct.table.provenance.method == "direct");
}

TEST_CASE("score table round trip") {
    test::TempDir dir;
    ScoreTable t{"Relevance", AspectLevel::Turn, {{{"b", 1}, 2.5}, {{"a", 3}, 1.0}, {{"a", 1}, 0.25}}, {}};
    t.provenance.instruction_ids = {"i1"};
    t.provenance.config_hash = "abc";
    write_score_table(dir / "t.jsonl", t);
    const auto back = read_score_table(dir / "t.jsonl");
    CHECK(back.rows.front().unit == UnitRef{"a", 1});
    CHECK(*back.find({"b", 1}) == 2.5);
    CHECK_FALSE(back.find({"c", 1}).has_value());
    CHECK(back.provenance.config_hash == "abc");
    test::write_file(dir / "bad.jsonl", "{\"dialogue_id\": \"a\"}\n");
    CHECK_THROWS_AS(read_score_table(dir / "bad.jsonl"), SchemaError);
}

TEST_CASE("units of an aspect") {
    const std::vector<Dialogue> ds{test::make_dialogue("b", "s", {"u", "s1", "u", "s2"}),
                                   test::make_dialogue("a", "s", {"u", "s1"})};
    const auto turns = units_of({"T", AspectLevel::Turn, 0, 1, ""}, ds);
    CHECK(turns == std::vector<UnitRef>{{"a", 1}, {"b", 1}, {"b", 3}});
    CHECK(units_of({"D", AspectLevel::Dialogue, 0, 1, ""}, ds).size() == 2);
    const Particle p{"p", "a", 1, DialogueAct::Others, "m", std::nullopt};
    CHECK(unit_of(p, AspectLevel::Dialogue) == UnitRef{"a", std::nullopt});
    CHECK(unit_of(p, AspectLevel::Turn) == UnitRef{"a", 1});
}
