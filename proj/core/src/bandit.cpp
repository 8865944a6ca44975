#include "faceval/bandit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "faceval/errors.hpp"
#include "faceval/hashing.hpp"
#include "faceval/parallel.hpp"

namespace faceval {

std::string to_string(CountMode m) { return m == CountMode::Samples ? "samples" : "pulls"; }

CountMode count_mode_from_string(std::string_view s) {
    if (s == "samples") return CountMode::Samples;
    if (s == "pulls") return CountMode::Pulls;
    throw ConfigError("unknown bandit count mode '" + std::string(s) + "' (expected samples or pulls)");
}

UcbBandit::UcbBandit(std::size_t arms, double exploration, CountMode mode)
    : counts_(arms, 0.0), values_(arms, 0.0), exploration_(exploration), mode_(mode) {
    if (arms == 0) throw PreconditionError("bandit needs at least one arm");
    if (!(exploration >= 0.0) || !std::isfinite(exploration))
        throw PreconditionError("exploration constant must be finite and >= 0");
}

double UcbBandit::bound(std::size_t arm, std::uint64_t t, double extra_count) const {
    const double n = counts_.at(arm) + extra_count;
    if (n <= 0.0) return std::numeric_limits<double>::infinity();
    const double log_t = std::log(static_cast<double>(std::max<std::uint64_t>(t, 1)));
    return values_[arm] + exploration_ * std::sqrt(log_t / n);
}

std::size_t UcbBandit::choose(std::span<const double> pending, std::uint64_t t) const {
    std::size_t best = 0;
    double best_bound = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < arms(); ++i) {
        const double u = bound(i, t, i < pending.size() ? pending[i] : 0.0);
        if (u > best_bound) {
            best = i;
            best_bound = u;
        }
    }
    return best;
}

double UcbBandit::increment(std::size_t samples) const noexcept {
    return mode_ == CountMode::Samples ? static_cast<double>(samples) : 1.0;
}

void UcbBandit::update(std::size_t arm, double reward, std::size_t samples) {
    if (!std::isfinite(reward)) throw PreconditionError("bandit reward must be finite");
    if (samples == 0) throw PreconditionError("a pull must evaluate at least one sample");
    counts_.at(arm) += increment(samples);
    values_[arm] += (reward - values_[arm]) / counts_[arm];
    ++step_;
}

std::vector<std::size_t> UcbBandit::ranking() const {
    std::vector<std::size_t> order(arms());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values_[a] > values_[b]; });
    return order;
}

std::size_t resolve_batch(const BanditOptions& options, std::size_t arms) {
    return options.batch > 0 ? options.batch : std::max<std::size_t>(1, arms / 2);
}

std::size_t resolve_iterations(const BanditOptions& options, std::size_t arms) {
    return options.iterations > 0 ? options.iterations : 5 * resolve_batch(options, arms);
}

std::vector<std::size_t> sample_without_replacement(std::size_t population, std::size_t k, std::uint64_t seed) {
    if (k > population) throw PreconditionError("sample larger than population");
    std::vector<std::size_t> idx(population);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + uniform_index(rng, population - i)]);
    idx.resize(k);
    return idx;
}

BanditRun run_ucb(std::size_t arms, std::size_t population, const RewardFn& reward, const BanditOptions& options,
                  const SampleFilter& accept) {
    if (population == 0) throw PreconditionError("bandit needs a non-empty sample population");
    UcbBandit bandit(arms, options.exploration, options.count_mode);
    BanditRun run;
    run.batch = resolve_batch(options, arms);
    run.iterations = resolve_iterations(options, arms);
    const std::size_t m = std::clamp<std::size_t>(options.minibatch, 1, population);

    std::uint64_t step = 0;
    while (step < run.iterations) {
        const std::size_t width = std::min<std::size_t>(run.batch, run.iterations - step);
        std::vector<BanditPull> planned(width);
        std::vector<double> pending(arms, 0.0);
        for (std::size_t j = 0; j < width; ++j) {
            const std::uint64_t t = step + j + 1;
            auto& pull = planned[j];
            pull.step = t;
            pull.arm = bandit.choose(pending, t);
            const std::uint64_t base = mix_seed(options.seed, t);
            const std::size_t attempts = std::max<std::size_t>(1, options.sample_attempts);
            for (std::size_t a = 0; a < attempts; ++a) {
                pull.sample = sample_without_replacement(population, m, mix_seed(base, a));
                if (!accept || accept(pull.sample)) break;
            }
            pending[pull.arm] += bandit.increment(m);
        }
        parallel_for(width, options.workers,
                     [&](std::size_t j) { planned[j].reward = reward(planned[j].arm, planned[j].sample); });
        for (auto& pull : planned) {
            bandit.update(pull.arm, pull.reward, pull.sample.size());
            run.pulls.push_back(std::move(pull));
        }
        step += width;
    }

    run.ranking = bandit.ranking();
    for (std::size_t i = 0; i < arms; ++i) {
        run.values.push_back(bandit.value(i));
        run.counts.push_back(bandit.count(i));
    }
    return run;
}

}  // namespace faceval
