#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "faceval/evaluator.hpp"
#include "faceval/model.hpp"

namespace faceval::metrics {

struct CorrelationResult {
    double coefficient = 0.0;
    double p_value = 1.0;  // two-sided, Student t with n-2 degrees of freedom
    std::size_t n = 0;
};

enum class CorrelationKind { Pearson, Spearman };
std::string to_string(CorrelationKind k);
CorrelationKind correlation_from_string(std::string_view s);

/// Product-moment correlation. Needs equal lengths >= 3 and non-constant inputs;
/// throws UndefinedStatistic otherwise.
CorrelationResult pearson(std::span<const double> xs, std::span<const double> ys);

/// Pearson on fractional (average-tie) ranks.
CorrelationResult spearman(std::span<const double> xs, std::span<const double> ys);

CorrelationResult correlate(CorrelationKind kind, std::span<const double> xs, std::span<const double> ys);

/// Coefficient, or 0 when the correlation is undefined (constant input or fewer than 3 points).
double correlation_or_zero(CorrelationKind kind, std::span<const double> xs, std::span<const double> ys);

/// 1-based average ranks; tied values share the mean of the ranks they span.
std::vector<double> fractional_ranks(std::span<const double> values);

/// Two-sided p-value of a correlation coefficient via the t statistic r*sqrt((n-2)/(1-r^2)).
double correlation_p_value(double r, std::size_t n);

/// ratings[unit][rater]; std::nullopt marks a missing rating.
using RatingMatrix = std::vector<std::vector<std::optional<double>>>;

/// Krippendorff's alpha with the ordinal difference function, via the coincidence matrix.
/// Units with fewer than two ratings are not pairable and are ignored.
double krippendorff_alpha_ordinal(const RatingMatrix& ratings);

struct RankingCorrelation {
    CorrelationResult pearson;
    CorrelationResult spearman;
    std::vector<std::string> systems;
    std::vector<double> predicted_means;
    std::vector<double> gold_means;
};

/// A predicted/gold pair for one unit, tagged with the system that produced it.
struct SystemUnit {
    std::string system_id;
    std::string dialogue_id;
    double predicted = 0.0;
    double gold = 0.0;
};

/// Per-system means of predicted and gold; Pearson on the means, Spearman on their rankings.
RankingCorrelation system_ranking_correlation(std::span<const SystemUnit> units);

/// Joins a score table and annotations through each dialogue's system_id.
std::vector<SystemUnit> system_units(const ScoreTable& scores, const std::vector<AnnotationRecord>& annotations,
                                     const std::vector<Dialogue>& dialogues);

struct CurvePoint {
    std::size_t size = 0;  // dialogues per system
    double mean = 0.0;     // mean Spearman over trials
    double ci_low = 0.0;   // 2.5th percentile
    double ci_high = 0.0;  // 97.5th percentile
    std::size_t trials = 0;
};

/// For each size, `trials` subsamples of that many dialogues per system (without replacement).
/// Each trial ranks systems by mean predicted score over the subsample and correlates
/// (Spearman) with the gold ranking from all human labels. Undefined trials count as 0.
std::vector<CurvePoint> sample_efficiency_curve(std::span<const SystemUnit> units, std::span<const std::size_t> sizes,
                                                std::size_t trials, std::uint64_t seed);

/// Linear-interpolated percentile, q in [0, 1].
double percentile(std::vector<double> values, double q);

/// Per-system mean system-utterance word count against per-system mean score (Pearson).
CorrelationResult length_bias(const std::vector<Dialogue>& dialogues, const ScoreTable& scores);

enum class Side { Human, System };

struct PreferencePair {
    double human_side_score = 0.0;
    double system_side_score = 0.0;
    Side preferred = Side::Human;  // what humans preferred
};

struct SelfBiasReport {
    std::size_t human_preferred = 0;
    std::size_t human_preferred_agree = 0;
    std::size_t system_preferred = 0;
    std::size_t system_preferred_agree = 0;
    std::size_t ties = 0;

    std::optional<double> human_rate() const;   // percent
    std::optional<double> system_rate() const;  // percent
};

/// The scorer prefers the side with the higher score; equal scores are ties and never agree.
SelfBiasReport self_bias_agreement(std::span<const PreferencePair> pairs);

}  // namespace faceval::metrics
