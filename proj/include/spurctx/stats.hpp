#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

namespace spurctx {

namespace detail {

// Average ranks (1-based) with ties sharing their mean rank.
inline std::vector<double> average_ranks(const std::vector<double>& values) {
    std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

inline double normal_sf(double z) {  // P(Z > z) for standard normal
    return 0.5 * std::erfc(z / std::sqrt(2.0));
}

// Regularized incomplete beta function I_x(a, b) via the standard continued
// fraction (Lentz), used for Student-t tail probabilities.
inline double betacf(double a, double b, double x) {
    constexpr int max_iter = 300;
    constexpr double eps = 3e-14, fpmin = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

inline double incbeta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                      a * std::log(x) + b * std::log1p(-x);
    double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

// Two-sided p for a t statistic with nu degrees of freedom.
inline double t_two_sided_p(double t, double nu) {
    return incbeta(nu / 2.0, 0.5, nu / (nu + t * t));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank test
// ---------------------------------------------------------------------------

struct WilcoxonResult {
    double statistic = 0.0;  // W+ : rank sum of positive differences
    double p_value = 1.0;    // two-sided
    int n_nonzero = 0;       // differences remaining after zero removal
    int n_zero = 0;          // zero differences dropped before ranking
    bool exact = true;       // enumeration (true) or normal approximation
};

// Two-sided signed-rank test over paired differences. Zeros are dropped
// before ranking. With at most exact_limit nonzero differences the p-value is
// computed by full enumeration of all sign assignments (ties kept via average
// ranks); above that a normal approximation with tie and continuity
// corrections is used. Degenerate input (all zeros) yields p = 1.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& diffs,
                                           int exact_limit = 12) {
    WilcoxonResult result;
    std::vector<double> nonzero;
    for (double d : diffs) {
        if (d == 0.0) ++result.n_zero;
        else nonzero.push_back(d);
    }
    result.n_nonzero = static_cast<int>(nonzero.size());
    if (nonzero.empty()) return result;

    std::vector<double> abs_vals(nonzero.size());
    for (std::size_t i = 0; i < nonzero.size(); ++i) abs_vals[i] = std::fabs(nonzero[i]);
    std::vector<double> ranks = detail::average_ranks(abs_vals);

    double w_plus = 0.0;
    for (std::size_t i = 0; i < nonzero.size(); ++i)
        if (nonzero[i] > 0.0) w_plus += ranks[i];
    result.statistic = w_plus;

    const int m = result.n_nonzero;
    if (m <= exact_limit) {
        // Average ranks are multiples of 1/2, so doubled ranks are integers
        // and the enumeration is exact integer arithmetic.
        std::vector<std::int64_t> ranks2(ranks.size());
        std::int64_t total2 = 0;
        for (std::size_t i = 0; i < ranks.size(); ++i) {
            ranks2[i] = static_cast<std::int64_t>(std::llround(2.0 * ranks[i]));
            total2 += ranks2[i];
        }
        std::int64_t obs2 = static_cast<std::int64_t>(std::llround(2.0 * w_plus));
        std::int64_t dev_obs = std::llabs(2 * obs2 - total2);
        std::uint64_t count = 0;
        std::uint64_t patterns = 1ull << m;
        for (std::uint64_t mask = 0; mask < patterns; ++mask) {
            std::int64_t w2 = 0;
            for (int i = 0; i < m; ++i)
                if (mask & (1ull << i)) w2 += ranks2[static_cast<std::size_t>(i)];
            if (std::llabs(2 * w2 - total2) >= dev_obs) ++count;
        }
        result.p_value = static_cast<double>(count) / static_cast<double>(patterns);
        result.exact = true;
    } else {
        double mean = static_cast<double>(m) * (m + 1) / 4.0;
        double var = static_cast<double>(m) * (m + 1) * (2 * m + 1) / 24.0;
        // tie correction: subtract sum(t^3 - t)/48 over tie groups of |diffs|
        std::map<double, int> groups;
        for (double v : abs_vals) groups[v]++;
        for (const auto& [value, t] : groups) {
            (void)value;
            if (t > 1) var -= (static_cast<double>(t) * t * t - t) / 48.0;
        }
        if (var <= 0.0) {
            result.p_value = 1.0;
            result.exact = false;
            return result;
        }
        double diff = w_plus - mean;
        double cc = diff > 0 ? -0.5 : (diff < 0 ? 0.5 : 0.0);  // continuity correction
        double z = (diff + cc) / std::sqrt(var);
        result.p_value = std::min(1.0, 2.0 * detail::normal_sf(std::fabs(z)));
        result.exact = false;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Spearman rank correlation
// ---------------------------------------------------------------------------

struct SpearmanResult {
    std::optional<double> rho;      // empty when either vector is constant
    std::optional<double> p_value;  // two-sided, via the t transform
};

inline SpearmanResult spearman(const std::vector<double>& pred,
                               const std::vector<double>& truth) {
    if (pred.size() != truth.size()) throw std::invalid_argument("spearman: length mismatch");
    if (pred.size() < 3) throw std::invalid_argument("spearman: need at least 3 observations");

    auto constant = [](const std::vector<double>& v) {
        for (double x : v)
            if (x != v[0]) return false;
        return true;
    };
    if (constant(pred) || constant(truth)) return {};

    auto rx = detail::average_ranks(pred);
    auto ry = detail::average_ranks(truth);
    std::size_t n = rx.size();
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double dx = rx[i] - mx, dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    double rho = sxy / std::sqrt(sxx * syy);
    rho = std::clamp(rho, -1.0, 1.0);

    SpearmanResult result;
    result.rho = rho;
    if (std::fabs(rho) >= 1.0) {
        result.p_value = 0.0;
    } else {
        double nu = static_cast<double>(n) - 2.0;
        double t = rho * std::sqrt(nu / (1.0 - rho * rho));
        result.p_value = detail::t_two_sided_p(t, nu);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Error metrics and distribution helpers
// ---------------------------------------------------------------------------

inline double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size()) throw std::invalid_argument("rmse: length mismatch");
    if (pred.empty()) throw std::invalid_argument("rmse: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double d = pred[i] - truth[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(pred.size()));
}

inline double mean(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("mean: empty input");
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
}

// Entropy (nats) of the empirical distribution over observed values; 0 for a
// constant vector. Used to detect collapse to a single prediction.
inline double empirical_entropy(const std::vector<double>& values) {
    if (values.empty()) throw std::invalid_argument("empirical_entropy: empty input");
    std::map<double, int> counts;
    for (double v : values) counts[v]++;
    double n = static_cast<double>(values.size());
    double h = 0.0;
    for (const auto& [value, c] : counts) {
        (void)value;
        double p = static_cast<double>(c) / n;
        h -= p * std::log(p);
    }
    return h;
}

}  // namespace spurctx
