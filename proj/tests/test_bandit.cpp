#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "faceval/bandit.hpp"
#include "faceval/errors.hpp"
#include "faceval/hashing.hpp"

using namespace faceval;

TEST_CASE("bound is the upper confidence value and infinite for untouched arms") {
    UcbBandit b(3, 1.5, CountMode::Pulls);
    CHECK(std::isinf(b.bound(0, 10)));
    b.update(0, 0.4, 8);
    b.update(0, 0.8, 8);
    CHECK(b.count(0) == 2.0);
    CHECK(b.value(0) == doctest::Approx(0.6));
    CHECK(b.bound(0, 10) == doctest::Approx(0.6 + 1.5 * std::sqrt(std::log(10.0) / 2)));
    CHECK(b.bound(0, 10, 2.0) == doctest::Approx(0.6 + 1.5 * std::sqrt(std::log(10.0) / 4)));
    CHECK(b.bound(0, 0) == doctest::Approx(0.6));  // ln(max(t, 1)) = 0
    CHECK(b.step() == 2);
}

TEST_CASE("sample counting follows the published update") {
    UcbBandit b(1, 1.0, CountMode::Samples);
    b.update(0, 0.8, 8);
    CHECK(b.count(0) == 8.0);
    CHECK(b.value(0) == doctest::Approx(0.1));
    b.update(0, 0.8, 8);
    CHECK(b.count(0) == 16.0);
    CHECK(b.value(0) == doctest::Approx(0.1 + 0.7 / 16));
    // A constant reward r is approached from below as r * (1 - prod_j (1 - 1 / (8 j))).
    double prod = (1 - 1.0 / 8) * (1 - 1.0 / 16);
    for (int j = 3; j <= 500; ++j) {
        b.update(0, 0.8, 8);
        prod *= 1 - 1.0 / (8.0 * j);
    }
    CHECK(b.value(0) == doctest::Approx(0.8 * (1 - prod)).epsilon(1e-12));
    CHECK(b.value(0) < 0.8);
}

TEST_CASE("choose breaks ties toward the lowest index and respects pending counts") {
    UcbBandit b(3, 1.0);
    std::vector<double> pending(3, 0.0);
    CHECK(b.choose(pending, 1) == 0);
    pending[0] = 1;
    CHECK(b.choose(pending, 2) == 1);
    pending[1] = 1;
    CHECK(b.choose(pending, 3) == 2);
    UcbBandit z(2, 0.0, CountMode::Pulls);
    z.update(0, 0.5, 1);
    z.update(1, 0.5, 1);
    CHECK(z.choose({}, 3) == 0);
    CHECK(z.ranking() == std::vector<std::size_t>{0, 1});
}

TEST_CASE("invalid bandit arguments") {
    CHECK_THROWS_AS(UcbBandit(0, 1.0), PreconditionError);
    CHECK_THROWS_AS(UcbBandit(2, -1.0), PreconditionError);
    UcbBandit b(2, 1.0);
    CHECK_THROWS_AS(b.update(0, std::numeric_limits<double>::quiet_NaN(), 1), PreconditionError);
    CHECK_THROWS_AS(b.update(0, 0.5, 0), PreconditionError);
    CHECK_THROWS_AS(count_mode_from_string("draws"), ConfigError);
    CHECK(count_mode_from_string(to_string(CountMode::Pulls)) == CountMode::Pulls);
}

TEST_CASE("sequential run matches a reference UCB1 loop") {
    const std::size_t arms = 5;
    auto reward_of = [](std::size_t arm, int k) {
        return static_cast<double>(mix_seed(arm, static_cast<std::uint64_t>(k)) % 1000) / 1000.0 * (0.3 + 0.1 * arm);
    };
    for (CountMode mode : {CountMode::Pulls, CountMode::Samples}) {
        std::vector<int> pulls_so_far(arms, 0);
        BanditOptions o;
        o.iterations = 60;
        o.batch = 1;
        o.minibatch = 4;
        o.count_mode = mode;
        const auto run = run_ucb(
            arms, 10, [&](std::size_t arm, std::span<const std::size_t>) { return reward_of(arm, pulls_so_far[arm]++); },
            o);

        std::vector<double> n(arms, 0), q(arms, 0);
        std::vector<int> k(arms, 0);
        const double inc = mode == CountMode::Pulls ? 1.0 : 4.0;
        for (std::uint64_t t = 1; t <= 60; ++t) {
            std::size_t best = 0;
            double best_u = -1;
            for (std::size_t a = 0; a < arms; ++a) {
                const double u = n[a] == 0 ? std::numeric_limits<double>::infinity()
                                           : q[a] + std::sqrt(std::log(double(t)) / n[a]);
                if (u > best_u) {
                    best_u = u;
                    best = a;
                }
            }
            REQUIRE(run.pulls[t - 1].arm == best);
            const double r = reward_of(best, k[best]++);
            n[best] += inc;
            q[best] += (r - q[best]) / n[best];
        }
        for (std::size_t a = 0; a < arms; ++a) {
            CHECK(run.values[a] == doctest::Approx(q[a]).epsilon(1e-12));
            CHECK(run.counts[a] == n[a]);
        }
    }
}

TEST_CASE("batches spread pulls over untouched arms and default sizes derive from the arm count") {
    BanditOptions o;
    const auto run = run_ucb(6, 20, [](std::size_t arm, std::span<const std::size_t>) { return arm * 0.1; }, o);
    CHECK(run.batch == 3);
    CHECK(run.iterations == 15);
    CHECK(run.pulls.size() == 15);
    std::set<std::size_t> first_batch{run.pulls[0].arm, run.pulls[1].arm, run.pulls[2].arm};
    CHECK(first_batch.size() == 3);
    std::set<std::size_t> first_six;
    for (int i = 0; i < 6; ++i) first_six.insert(run.pulls[i].arm);
    CHECK(first_six.size() == 6);
    CHECK(run.ranking.front() == 5);
    for (std::size_t i = 0; i < run.pulls.size(); ++i) CHECK(run.pulls[i].step == i + 1);
    CHECK(resolve_batch(BanditOptions{}, 1) == 1);
}

TEST_CASE("runs are deterministic and independent of worker count") {
    auto reward = [](std::size_t arm, std::span<const std::size_t> s) {
        double x = 0;
        for (auto i : s) x += static_cast<double>(mix_seed(arm, i) % 100);
        return x / (100.0 * static_cast<double>(s.size()));
    };
    BanditOptions o;
    o.seed = 42;
    o.minibatch = 5;
    o.workers = 1;
    const auto a = run_ucb(8, 30, reward, o);
    o.workers = 8;
    const auto b = run_ucb(8, 30, reward, o);
    CHECK(a.ranking == b.ranking);
    CHECK(a.values == b.values);
    for (std::size_t i = 0; i < a.pulls.size(); ++i) CHECK(a.pulls[i].sample == b.pulls[i].sample);
    o.seed = 43;
    const auto c = run_ucb(8, 30, reward, o);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.pulls.size(); ++i) any_diff |= a.pulls[i].sample != c.pulls[i].sample;
    CHECK(any_diff);
}

TEST_CASE("minibatches are redrawn until accepted") {
    BanditOptions o;
    o.minibatch = 3;
    o.iterations = 20;
    std::size_t rejected = 0;
    const auto run = run_ucb(
        2, 10, [](std::size_t, std::span<const std::size_t>) { return 0.5; }, o,
        [&](std::span<const std::size_t> s) {
            const bool ok = std::find(s.begin(), s.end(), std::size_t{0}) == s.end();
            rejected += !ok;
            return ok;
        });
    for (const auto& p : run.pulls) {
        CHECK(p.sample.size() == 3);
        CHECK(std::find(p.sample.begin(), p.sample.end(), std::size_t{0}) == p.sample.end());
    }
    CHECK(rejected > 0);
    // Minibatch larger than the population is capped.
    o.minibatch = 50;
    CHECK(run_ucb(2, 4, [](std::size_t, std::span<const std::size_t>) { return 0.0; }, o).pulls[0].sample.size() == 4);
    CHECK_THROWS_AS(run_ucb(2, 0, [](std::size_t, std::span<const std::size_t>) { return 0.0; }, o), PreconditionError);
}

TEST_CASE("sampling without replacement") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto s = sample_without_replacement(20, 7, seed);
        CHECK(std::set<std::size_t>(s.begin(), s.end()).size() == 7);
        for (auto i : s) CHECK(i < 20);
        CHECK(sample_without_replacement(20, 7, seed) == s);
    }
    CHECK(sample_without_replacement(5, 5, 1).size() == 5);
    CHECK_THROWS_AS(sample_without_replacement(3, 4, 1), PreconditionError);
}
