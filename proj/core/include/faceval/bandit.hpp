#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace faceval {

/// What an arm's count N accumulates per pull.
enum class CountMode {
    Samples,  // N += minibatch size (the update as published)
    Pulls,    // N += 1 (a plain running mean of rewards)
};

std::string to_string(CountMode m);
CountMode count_mode_from_string(std::string_view s);

/// UCB1-style tallies. Arms never pulled have an infinite bound; ties resolve to the lowest index.
class UcbBandit {
public:
    UcbBandit(std::size_t arms, double exploration, CountMode mode = CountMode::Samples);

    std::size_t arms() const noexcept { return counts_.size(); }
    std::uint64_t step() const noexcept { return step_; }
    double count(std::size_t arm) const { return counts_.at(arm); }
    double value(std::size_t arm) const { return values_.at(arm); }
    double exploration() const noexcept { return exploration_; }
    CountMode mode() const noexcept { return mode_; }

    /// Q + c*sqrt(ln t / N) at global step t (>= 1); +inf when N == 0.
    double bound(std::size_t arm, std::uint64_t t, double extra_count = 0.0) const;

    /// Arm to pull next. `pending[arm]` is count already committed to in-flight pulls this batch.
    std::size_t choose(std::span<const double> pending, std::uint64_t t) const;

    /// Applies one pull: N += increment(samples), Q += (r - Q) / N.
    void update(std::size_t arm, double reward, std::size_t samples);

    double increment(std::size_t samples) const noexcept;

    /// Arm indices by Q descending, ties by index.
    std::vector<std::size_t> ranking() const;

private:
    std::vector<double> counts_;
    std::vector<double> values_;
    double exploration_;
    CountMode mode_;
    std::uint64_t step_ = 0;
};

struct BanditOptions {
    double exploration = 1.0;          // c
    std::size_t iterations = 0;        // T; 0 means 5 * batch
    std::size_t batch = 0;             // B; 0 means max(1, arms / 2)
    std::size_t minibatch = 8;         // particles per pull, capped at the population
    std::size_t sample_attempts = 10;  // redraws when `accept` rejects a minibatch
    CountMode count_mode = CountMode::Samples;
    std::uint64_t seed = 0;
    std::size_t workers = 8;
};

struct BanditPull {
    std::uint64_t step = 0;
    std::size_t arm = 0;
    std::vector<std::size_t> sample;
    double reward = 0.0;
};

struct BanditRun {
    std::vector<std::size_t> ranking;  // every arm, best first
    std::vector<double> values;
    std::vector<double> counts;
    std::vector<BanditPull> pulls;  // in step order
    std::size_t iterations = 0;
    std::size_t batch = 0;
};

/// Reward of pulling `arm` on the population indices in `sample`. Called concurrently.
using RewardFn = std::function<double(std::size_t arm, std::span<const std::size_t> sample)>;
/// Optional minibatch filter (e.g. "labels are not all equal").
using SampleFilter = std::function<bool(std::span<const std::size_t> sample)>;

std::size_t resolve_batch(const BanditOptions& options, std::size_t arms);
std::size_t resolve_iterations(const BanditOptions& options, std::size_t arms);

/// Runs T pulls in sequential batches of B. Within a batch, arms are chosen one after another
/// with in-flight pulls counted as pending, rewards are computed concurrently, and updates are
/// applied in step order once the batch completes.
BanditRun run_ucb(std::size_t arms, std::size_t population, const RewardFn& reward, const BanditOptions& options,
                  const SampleFilter& accept = {});

/// `k` distinct indices drawn uniformly from [0, population), in draw order.
std::vector<std::size_t> sample_without_replacement(std::size_t population, std::size_t k, std::uint64_t seed);

}  // namespace faceval
