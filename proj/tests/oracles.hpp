#pragma once

// Definitional implementations used as references for the statistics module.
// Written independently of core: no shared helpers, plain loops, no sorting tricks.

#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

namespace faceval::test {

inline double oracle_pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

/// Rank of v[i] = (#values below) + (#equal values + 1) / 2.
inline std::vector<double> oracle_ranks(const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double below = 0, equal = 0;
        for (double w : v) {
            if (w < v[i]) ++below;
            if (w == v[i]) ++equal;
        }
        r[i] = below + (equal + 1) / 2;
    }
    return r;
}

inline double oracle_spearman(const std::vector<double>& x, const std::vector<double>& y) {
    return oracle_pearson(oracle_ranks(x), oracle_ranks(y));
}

/// Closed form for untied data: 1 - 6 sum d^2 / (n (n^2 - 1)).
inline double oracle_spearman_untied(const std::vector<double>& x, const std::vector<double>& y) {
    const auto rx = oracle_ranks(x), ry = oracle_ranks(y);
    double d2 = 0;
    for (std::size_t i = 0; i < x.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
    const double n = static_cast<double>(x.size());
    return 1 - 6 * d2 / (n * (n * n - 1));
}

/// Krippendorff's alpha from pairwise disagreements. Ordinal distance between values c < k is
/// (sum of marginal counts from c to k minus half the counts of c and k) squared.
inline double oracle_krippendorff_ordinal(const std::vector<std::vector<std::optional<double>>>& ratings) {
    std::vector<std::vector<double>> units;
    for (const auto& row : ratings) {
        std::vector<double> vals;
        for (const auto& v : row)
            if (v) vals.push_back(*v);
        if (vals.size() >= 2) units.push_back(vals);
    }
    std::map<double, double> marginal;
    std::vector<double> all;
    for (const auto& u : units)
        for (double v : u) {
            marginal[v] += 1;
            all.push_back(v);
        }
    auto delta = [&](double a, double b) {
        if (a == b) return 0.0;
        const double lo = a < b ? a : b, hi = a < b ? b : a;
        double s = 0;
        for (const auto& [g, n] : marginal)
            if (g >= lo && g <= hi) s += n;
        s -= (marginal[lo] + marginal[hi]) / 2;
        return s * s;
    };
    const double n = static_cast<double>(all.size());
    double observed = 0;
    for (const auto& u : units) {
        double s = 0;
        for (std::size_t i = 0; i < u.size(); ++i)
            for (std::size_t j = 0; j < u.size(); ++j)
                if (i != j) s += delta(u[i], u[j]);
        observed += s / static_cast<double>(u.size() - 1);
    }
    observed /= n;
    double expected = 0;
    for (std::size_t i = 0; i < all.size(); ++i)
        for (std::size_t j = 0; j < all.size(); ++j)
            if (i != j) expected += delta(all[i], all[j]);
    expected /= n * (n - 1);
    if (expected == 0) throw std::domain_error("no expected disagreement");
    return 1 - observed / expected;
}

/// Two-sided p-value of Pearson r by integrating the Student t density with Simpson's rule.
inline double oracle_p_value(double r, std::size_t n) {
    const double df = static_cast<double>(n) - 2;
    const double t = std::abs(r) * std::sqrt(df / (1 - r * r));
    const double logc = std::lgamma((df + 1) / 2) - std::lgamma(df / 2) - 0.5 * std::log(df * M_PI);
    auto pdf = [&](double x) { return std::exp(logc - (df + 1) / 2 * std::log1p(x * x / df)); };
    const int steps = 200000;
    const double h = t / steps;
    double s = pdf(0) + pdf(t);
    for (int i = 1; i < steps; ++i) s += (i % 2 ? 4 : 2) * pdf(i * h);
    return 1 - 2 * s * h / 3;
}

}  // namespace faceval::test

#include <random>

namespace faceval::test {

/// Paired vectors of length 3..30. Every third draw uses a small integer alphabet so ties are common.
struct RandomPair {
    std::vector<double> x, y;
};

inline RandomPair random_pair(std::mt19937_64& rng, int trial) {
    std::uniform_int_distribution<int> len(3, 30);
    const auto n = static_cast<std::size_t>(len(rng));
    RandomPair p{std::vector<double>(n), std::vector<double>(n)};
    std::uniform_int_distribution<int> small(0, 3);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (trial % 3 == 0) {
            p.x[i] = small(rng);
            p.y[i] = small(rng);
        } else {
            p.x[i] = normal(rng);
            p.y[i] = 0.5 * p.x[i] + normal(rng);
        }
    }
    // Guard against a constant vector, for which the coefficients are undefined.
    if (p.x.front() == p.x.back()) p.x.back() += 1;
    if (p.y.front() == p.y.back()) p.y.front() += 1;
    return p;
}

/// Rating matrix with 3..30 units, 2..5 raters, ordinal values 0..4 and about 20% missing.
inline std::vector<std::vector<std::optional<double>>> random_ratings(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> units(3, 30), raters(2, 5), value(0, 4), coin(0, 9);
    const int n = units(rng), m = raters(rng);
    std::vector<std::vector<std::optional<double>>> out(static_cast<std::size_t>(n));
    for (auto& row : out) {
        const int base = value(rng);
        for (int r = 0; r < m; ++r) {
            if (coin(rng) < 2) {
                row.push_back(std::nullopt);
                continue;
            }
            const int v = coin(rng) < 6 ? base : value(rng);
            row.push_back(static_cast<double>(v));
        }
    }
    out[0] = {0.0, 4.0};  // guarantees expected disagreement is non-zero
    return out;
}

}  // namespace faceval::test
