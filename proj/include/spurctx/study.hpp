#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spurctx/contexts.hpp"
#include "spurctx/corpus.hpp"
#include "spurctx/metrics.hpp"
#include "spurctx/runner.hpp"
#include "spurctx/stats.hpp"
#include "spurctx/toy_policy.hpp"
#include "spurctx/training.hpp"

namespace spurctx {

// Desk-scale training experiment on the toy policy: plant a biased policy,
// train it with one of the four methods, and measure sensitivity, accuracy
// and prediction entropy before and after.
//
// Defaults are the calibrated profile: a planted +1-point valence bias over a
// squashed quality mapping, preference pairs sampled stochastically at
// temperature 0.5, and per-method learning rates and epochs (selected per
// method, the same way the published fine-tuning runs selected theirs).
struct StudyConfig {
    std::string dimension_id = "CLINSTD";
    std::string category_id = "experience";
    int n_transcripts = 480;
    int eval_cap = 20;  // balanced-split cap; eval ends up around 2*cap
    std::uint64_t corpus_seed = 7;
    std::uint64_t seed = 1;
    ToyPolicy::PlantedInit init{/*bias_points=*/1.0, /*quality_slope=*/0.45,
                                /*sharpness=*/1.0, /*reasoning_gain=*/1.0,
                                /*reasoning_valence=*/0.5};
    TrainConfig train = calibrated_train_defaults();
    DecodingParams sampling = calibrated_sampling_defaults();

    static TrainConfig calibrated_train_defaults() {
        TrainConfig cfg;
        cfg.batch_size = 1;
        cfg.epochs = 2;
        cfg.lr = 1.1;
        return cfg;
    }

    static DecodingParams calibrated_sampling_defaults() {
        DecodingParams dp;
        dp.temperature = 0.5;
        dp.seed = 1234;
        return dp;
    }
};

// Calibrated (lr, epochs) per training method; the gradient scale of the
// sequence-level preference loss differs enough from the supervised loss
// that one shared rate would under- or over-train every method but one.
inline TrainConfig calibrated_train_config(TrainMethod method, TrainConfig base) {
    switch (method) {
        case TrainMethod::debias:
            base.lr = 1.1;
            base.epochs = 2;
            break;
        case TrainMethod::sft:
            base.lr = 0.15;
            base.epochs = 2;
            break;
        case TrainMethod::dpo_groundtruth:
        case TrainMethod::dpo_counterfactual:
            base.lr = 8.0;
            base.epochs = 6;  // the relative-likelihood objective plateaus late
            break;
    }
    return config_for_method(method, base);
}

struct ToyEvaluation {
    DeltaReport delta;
    AccuracyReport accuracy;
    double entropy = 0.0;  // empirical entropy of per-transcript predictions
    int dropped = 0;
};

// Score every eval transcript under the category's positive and negative
// evaluation statements. The per-transcript prediction feeding accuracy and
// entropy is the mean of the two context passes, matching how trained-model
// accuracy is reported alongside sensitivity.
inline ToyEvaluation evaluate_toy(const ToyPolicy& policy, const TranscriptSet& eval_set,
                                  const RubricDimension& dim, const std::string& category_id) {
    ToyEvaluation out;
    std::vector<ScorePair> pairs;
    std::vector<double> pred, truth;
    DecodingParams dp;  // temperature 0: deterministic argmax decoding
    for (const auto& t : eval_set.items) {
        auto label = t.labels.find(dim.id);
        if (label == t.labels.end()) continue;
        auto score_under = [&](Valence v) -> std::optional<int> {
            SpuriousContext ctx = instantiate(category_id, v, dim);
            PromptSpec prompt = build_prompt(t, dim, ctx);
            auto tokens = policy.sample_response(prompt, dp);
            return parse_score(policy.detokenize(tokens), dim);
        };
        auto pos = score_under(Valence::positive);
        auto neg = score_under(Valence::negative);
        if (!pos || !neg) {
            ++out.dropped;
            continue;
        }
        pairs.push_back({static_cast<double>(*pos), static_cast<double>(*neg)});
        pred.push_back(0.5 * (*pos + *neg));
        truth.push_back(static_cast<double>(label->second));
    }
    if (pairs.empty()) throw std::runtime_error("evaluate_toy: no usable eval pairs");
    out.delta = sensitivity_delta(pairs);
    out.delta.dimension_id = dim.id;
    out.delta.category_id = category_id;
    out.delta.dropped = out.dropped;
    out.accuracy = accuracy_report(pred, truth);
    out.accuracy.dimension_id = dim.id;
    out.entropy = empirical_entropy(pred);
    return out;
}

struct StudyResult {
    TrainMethod method = TrainMethod::debias;
    ToyEvaluation before;
    ToyEvaluation after;
    TrainLog log;
    ToyPolicy policy;  // trained policy
    TranscriptSet eval_set;
    TranscriptSet train_set;
};

inline StudyResult run_training_study(TrainMethod method, const StudyConfig& cfg) {
    const RubricDimension& dim = dimension_or_throw(cfg.dimension_id);
    TranscriptSet corpus = generate_synthetic_corpus(cfg.n_transcripts, {dim}, cfg.corpus_seed);
    SplitSpec split_spec;
    split_spec.per_bucket_cap = cfg.eval_cap;
    split_spec.seed = cfg.corpus_seed;
    SplitResult split = balanced_split(corpus, {dim}, split_spec);

    ToyPolicy policy = ToyPolicy::planted(dim, cfg.init);
    ToyPolicy reference = policy.clone_frozen();

    StudyResult result{method, evaluate_toy(policy, split.eval, dim, cfg.category_id),
                       {},    {},
                       policy, split.eval,
                       split.train};

    std::vector<PreferencePair> pairs;
    switch (method) {
        case TrainMethod::dpo_groundtruth:
            pairs = build_groundtruth_pairs(policy, split.train, cfg.category_id, dim,
                                            cfg.sampling, cfg.seed);
            break;
        default:
            pairs = build_debias_pairs(policy, split.train, cfg.category_id, dim, cfg.sampling,
                                       cfg.seed);
            break;
    }

    TrainConfig train_cfg = config_for_method(method, cfg.train);
    train_cfg.seed = cfg.seed;
    result.log = train(policy, reference, pairs, train_cfg);
    result.after = evaluate_toy(policy, split.eval, dim, cfg.category_id);
    result.policy = policy;
    return result;
}

// Sensitivity per context category for one policy; drives the seen-vs-unseen
// generalization table.
inline std::vector<GeneralizationRow> generalization_rows(const ToyPolicy& before,
                                                          const ToyPolicy& after,
                                                          const TranscriptSet& eval_set,
                                                          const RubricDimension& dim,
                                                          const std::string& trained_category) {
    std::vector<GeneralizationRow> rows;
    for (const auto& cat : context_categories()) {
        GeneralizationRow row;
        row.category = cat.id;
        row.seen = cat.id == trained_category;
        row.before = evaluate_toy(before, eval_set, dim, cat.id).delta;
        row.after = evaluate_toy(after, eval_set, dim, cat.id).delta;
        if (row.seen) rows.insert(rows.begin(), row);
        else rows.push_back(row);
    }
    return rows;
}

}  // namespace spurctx
