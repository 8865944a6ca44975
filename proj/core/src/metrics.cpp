#include "faceval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <boost/math/distributions/students_t.hpp>

#include "faceval/errors.hpp"
#include "faceval/hashing.hpp"

namespace faceval::metrics {

std::string to_string(CorrelationKind k) { return k == CorrelationKind::Pearson ? "pearson" : "spearman"; }

CorrelationKind correlation_from_string(std::string_view s) {
    if (s == "pearson") return CorrelationKind::Pearson;
    if (s == "spearman") return CorrelationKind::Spearman;
    throw ConfigError("unknown correlation '" + std::string(s) + "' (expected pearson or spearman)");
}

double correlation_p_value(double r, std::size_t n) {
    if (n < 3) return 1.0;
    const double df = static_cast<double>(n - 2);
    const double r2 = r * r;
    if (r2 >= 1.0) return 0.0;
    const double t = std::abs(r) * std::sqrt(df / (1.0 - r2));
    boost::math::students_t dist(df);
    return std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, t)), 0.0, 1.0);
}

CorrelationResult pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw PreconditionError("correlation inputs differ in length");
    const std::size_t n = xs.size();
    if (n < 3) throw UndefinedStatistic("correlation needs at least 3 pairs, got " + std::to_string(n));
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(n);
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(n);
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw UndefinedStatistic("correlation undefined for a constant vector");
    const double r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    return {r, correlation_p_value(r, n), n};
}

std::vector<double> fractional_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

CorrelationResult spearman(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw PreconditionError("correlation inputs differ in length");
    const auto rx = fractional_ranks(xs);
    const auto ry = fractional_ranks(ys);
    return pearson(rx, ry);
}

CorrelationResult correlate(CorrelationKind kind, std::span<const double> xs, std::span<const double> ys) {
    return kind == CorrelationKind::Pearson ? pearson(xs, ys) : spearman(xs, ys);
}

double correlation_or_zero(CorrelationKind kind, std::span<const double> xs, std::span<const double> ys) {
    try {
        return correlate(kind, xs, ys).coefficient;
    } catch (const UndefinedStatistic&) {
        return 0.0;
    }
}

double krippendorff_alpha_ordinal(const RatingMatrix& ratings) {
    // Category values present in pairable units.
    std::vector<double> categories;
    for (const auto& unit : ratings) {
        std::size_t m = 0;
        for (const auto& r : unit) m += r.has_value();
        if (m < 2) continue;
        for (const auto& r : unit)
            if (r) categories.push_back(*r);
    }
    if (categories.empty()) throw UndefinedStatistic("no unit has two or more ratings");
    std::sort(categories.begin(), categories.end());
    categories.erase(std::unique(categories.begin(), categories.end()), categories.end());
    const std::size_t k = categories.size();
    auto index_of = [&](double v) {
        return static_cast<std::size_t>(std::lower_bound(categories.begin(), categories.end(), v) - categories.begin());
    };

    std::vector<std::vector<double>> coincidence(k, std::vector<double>(k, 0.0));
    for (const auto& unit : ratings) {
        std::vector<std::size_t> vals;
        for (const auto& r : unit)
            if (r) vals.push_back(index_of(*r));
        if (vals.size() < 2) continue;
        const double w = 1.0 / static_cast<double>(vals.size() - 1);
        for (std::size_t i = 0; i < vals.size(); ++i)
            for (std::size_t j = 0; j < vals.size(); ++j)
                if (i != j) coincidence[vals[i]][vals[j]] += w;
    }

    std::vector<double> marginal(k, 0.0);
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t d = 0; d < k; ++d) marginal[c] += coincidence[c][d];
    const double n = std::accumulate(marginal.begin(), marginal.end(), 0.0);

    auto delta2 = [&](std::size_t c, std::size_t d) {
        if (c > d) std::swap(c, d);
        double s = 0.0;
        for (std::size_t g = c; g <= d; ++g) s += marginal[g];
        s -= (marginal[c] + marginal[d]) / 2.0;
        return s * s;
    };

    double observed = 0.0;
    double expected = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t d = 0; d < k; ++d) {
            const double dd = delta2(c, d);
            observed += coincidence[c][d] * dd;
            expected += marginal[c] * marginal[d] * dd;
        }
    }
    if (expected == 0.0) throw UndefinedStatistic("alpha undefined: all pairable ratings share one value");
    return 1.0 - (n - 1.0) * observed / expected;
}

namespace {

struct SystemAggregate {
    double predicted_sum = 0.0;
    double gold_sum = 0.0;
    std::size_t count = 0;
};

}  // namespace

RankingCorrelation system_ranking_correlation(std::span<const SystemUnit> units) {
    std::map<std::string, SystemAggregate> by_system;
    for (const auto& u : units) {
        auto& a = by_system[u.system_id];
        a.predicted_sum += u.predicted;
        a.gold_sum += u.gold;
        ++a.count;
    }
    if (by_system.size() < 3)
        throw UndefinedStatistic("system ranking correlation needs at least 3 systems, got " +
                                 std::to_string(by_system.size()));
    RankingCorrelation out;
    for (const auto& [system, a] : by_system) {
        out.systems.push_back(system);
        out.predicted_means.push_back(a.predicted_sum / static_cast<double>(a.count));
        out.gold_means.push_back(a.gold_sum / static_cast<double>(a.count));
    }
    out.pearson = pearson(out.predicted_means, out.gold_means);
    out.spearman = spearman(out.predicted_means, out.gold_means);
    return out;
}

std::vector<SystemUnit> system_units(const ScoreTable& scores, const std::vector<AnnotationRecord>& annotations,
                                     const std::vector<Dialogue>& dialogues) {
    std::map<std::string, std::string> system_of;
    for (const auto& d : dialogues) system_of[d.dialogue_id] = d.system_id;
    std::vector<SystemUnit> out;
    for (const auto& a : annotations) {
        if (a.aspect != scores.aspect) continue;
        const auto predicted = scores.find(a.unit);
        if (!predicted) continue;
        auto it = system_of.find(a.unit.dialogue_id);
        if (it == system_of.end())
            throw SchemaError("annotation references unknown dialogue " + a.unit.dialogue_id);
        out.push_back({it->second, a.unit.dialogue_id, *predicted, static_cast<double>(a.label)});
    }
    return out;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw PreconditionError("percentile of empty list");
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    return values[lo] + (values[hi] - values[lo]) * (pos - static_cast<double>(lo));
}

std::vector<CurvePoint> sample_efficiency_curve(std::span<const SystemUnit> units, std::span<const std::size_t> sizes,
                                                std::size_t trials, std::uint64_t seed) {
    if (trials == 0) throw PreconditionError("trials must be >= 1");
    // system -> dialogue -> unit indices
    std::map<std::string, std::map<std::string, std::vector<std::size_t>>> layout;
    std::map<std::string, SystemAggregate> gold;
    for (std::size_t i = 0; i < units.size(); ++i) {
        layout[units[i].system_id][units[i].dialogue_id].push_back(i);
        auto& g = gold[units[i].system_id];
        g.gold_sum += units[i].gold;
        ++g.count;
    }
    if (layout.size() < 3) throw UndefinedStatistic("sample-efficiency curve needs at least 3 systems");
    std::vector<double> gold_means;
    for (const auto& [system, g] : gold) gold_means.push_back(g.gold_sum / static_cast<double>(g.count));

    std::vector<CurvePoint> curve;
    for (std::size_t size : sizes) {
        for (const auto& [system, dialogues] : layout)
            if (size == 0 || size > dialogues.size())
                throw PreconditionError("system " + system + " has " + std::to_string(dialogues.size()) +
                                        " dialogues; cannot sample " + std::to_string(size));
        std::vector<double> correlations;
        correlations.reserve(trials);
        for (std::size_t trial = 0; trial < trials; ++trial) {
            std::mt19937_64 rng(mix_seed(seed, mix_seed(size, trial)));
            std::vector<double> predicted_means;
            for (const auto& [system, dialogues] : layout) {
                std::vector<const std::vector<std::size_t>*> pool;
                for (const auto& [id, members] : dialogues) pool.push_back(&members);
                for (std::size_t i = 0; i < size; ++i)
                    std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
                double sum = 0.0;
                std::size_t count = 0;
                for (std::size_t i = 0; i < size; ++i)
                    for (auto m : *pool[i]) {
                        sum += units[m].predicted;
                        ++count;
                    }
                predicted_means.push_back(sum / static_cast<double>(count));
            }
            correlations.push_back(correlation_or_zero(CorrelationKind::Spearman, predicted_means, gold_means));
        }
        CurvePoint p;
        p.size = size;
        p.trials = trials;
        p.mean = std::accumulate(correlations.begin(), correlations.end(), 0.0) / static_cast<double>(trials);
        p.ci_low = percentile(correlations, 0.025);
        p.ci_high = percentile(correlations, 0.975);
        curve.push_back(p);
    }
    return curve;
}

CorrelationResult length_bias(const std::vector<Dialogue>& dialogues, const ScoreTable& scores) {
    struct Acc {
        double words = 0.0;
        std::size_t utterances = 0;
        double score = 0.0;
        std::size_t rows = 0;
    };
    std::map<std::string, Acc> by_system;
    std::map<std::string, std::string> system_of;
    for (const auto& d : dialogues) {
        system_of[d.dialogue_id] = d.system_id;
        auto& a = by_system[d.system_id];
        for (const auto& u : d.utterances) {
            if (u.speaker != Speaker::System) continue;
            a.words += static_cast<double>(word_count(u.text));
            ++a.utterances;
        }
    }
    for (const auto& r : scores.rows) {
        auto it = system_of.find(r.unit.dialogue_id);
        if (it == system_of.end()) continue;
        auto& a = by_system[it->second];
        a.score += r.score;
        ++a.rows;
    }
    std::vector<double> lengths;
    std::vector<double> means;
    for (const auto& [system, a] : by_system) {
        if (a.rows == 0 || a.utterances == 0) continue;
        lengths.push_back(a.words / static_cast<double>(a.utterances));
        means.push_back(a.score / static_cast<double>(a.rows));
    }
    if (lengths.size() < 3) throw UndefinedStatistic("length bias needs at least 3 scored systems");
    return pearson(lengths, means);
}

std::optional<double> SelfBiasReport::human_rate() const {
    if (human_preferred == 0) return std::nullopt;
    return 100.0 * static_cast<double>(human_preferred_agree) / static_cast<double>(human_preferred);
}

std::optional<double> SelfBiasReport::system_rate() const {
    if (system_preferred == 0) return std::nullopt;
    return 100.0 * static_cast<double>(system_preferred_agree) / static_cast<double>(system_preferred);
}

SelfBiasReport self_bias_agreement(std::span<const PreferencePair> pairs) {
    if (pairs.empty()) throw PreconditionError("self-bias analysis needs at least one pair");
    SelfBiasReport r;
    for (const auto& p : pairs) {
        const bool tie = p.human_side_score == p.system_side_score;
        if (tie) ++r.ties;
        const Side scorer = p.human_side_score > p.system_side_score ? Side::Human : Side::System;
        if (p.preferred == Side::Human) {
            ++r.human_preferred;
            if (!tie && scorer == Side::Human) ++r.human_preferred_agree;
        } else {
            ++r.system_preferred;
            if (!tie && scorer == Side::System) ++r.system_preferred_agree;
        }
    }
    return r;
}

}  // namespace faceval::metrics
