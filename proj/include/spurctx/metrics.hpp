#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "spurctx/stats.hpp"

namespace spurctx {

inline constexpr double kSignificanceLevel = 0.05;  // the starred threshold

// Sensitivity of predictions to context valence: mean of (positive-context
// score - negative-context score) over paired transcripts, with a Wilcoxon
// signed-rank p-value. delta > 0 means positive contexts inflate scores.
struct DeltaReport {
    std::string dimension_id;
    std::string category_id;
    std::string strategy;  // mitigation label, empty for the default pass
    int n_pairs = 0;
    double delta = 0.0;
    double p_value = 1.0;
    bool significant = false;
    int dropped = 0;  // samples lost to parse failures before pairing
};

struct ScorePair {
    double positive = 0.0;
    double negative = 0.0;
};

inline DeltaReport sensitivity_delta(const std::vector<ScorePair>& pairs) {
    if (pairs.empty()) throw std::invalid_argument("sensitivity_delta: no pairs");
    DeltaReport report;
    report.n_pairs = static_cast<int>(pairs.size());
    std::vector<double> diffs;
    diffs.reserve(pairs.size());
    double acc = 0.0;
    for (const auto& p : pairs) {
        double d = p.positive - p.negative;
        diffs.push_back(d);
        acc += d;
    }
    report.delta = acc / static_cast<double>(pairs.size());
    auto w = wilcoxon_signed_rank(diffs);
    report.p_value = w.p_value;
    report.significant = report.p_value < kSignificanceLevel;
    return report;
}

// Prediction accuracy against expert labels. rho is absent whenever either
// vector is constant, rendered as "-" in reports.
struct AccuracyReport {
    std::string dimension_id;
    std::string strategy;
    int n = 0;
    double rmse = 0.0;
    std::optional<double> spearman_rho;
    std::optional<double> spearman_p;
};

inline AccuracyReport accuracy_report(const std::vector<double>& pred,
                                      const std::vector<double>& truth) {
    AccuracyReport report;
    report.n = static_cast<int>(pred.size());
    report.rmse = rmse(pred, truth);
    if (pred.size() >= 3) {
        auto s = spearman(pred, truth);
        report.spearman_rho = s.rho;
        report.spearman_p = s.p_value;
    }
    return report;
}

}  // namespace spurctx
