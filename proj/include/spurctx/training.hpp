#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spurctx/contexts.hpp"
#include "spurctx/corpus.hpp"
#include "spurctx/toy_policy.hpp"
#include "spurctx/util.hpp"

namespace spurctx {

// One preference-training example: the biased prompt (transcript + spurious
// context + query), a chosen response generated without the context, a
// rejected response generated with it, and the expert score for anchoring.
struct PreferencePair {
    PromptSpec prompt_with_context;
    std::vector<int> chosen;
    std::vector<int> rejected;
    int truth_score = 0;
    std::string transcript_id;
};

struct TrainConfig {
    double beta = 0.1;
    double w_dpo = 1.0;
    double w_sft = 0.1;
    // Published fine-tuning runs searched {1e-6, 1e-7}; the toy policy's
    // gradients are tiny absolute numbers, so its calibrated default differs.
    double lr = 1e-2;
    int batch_size = 32;
    int epochs = 2;
    std::uint64_t seed = 0;

    void validate() const {
        if (beta <= 0.0) throw std::invalid_argument("beta must be > 0");
        if (w_dpo < 0.0 || w_sft < 0.0) throw std::invalid_argument("loss weights must be >= 0");
        if (lr <= 0.0) throw std::invalid_argument("lr must be > 0");
        if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
        if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    }
};

enum class TrainMethod { debias, sft, dpo_groundtruth, dpo_counterfactual };

inline const char* to_string(TrainMethod m) {
    switch (m) {
        case TrainMethod::debias: return "debias";
        case TrainMethod::sft: return "sft";
        case TrainMethod::dpo_groundtruth: return "dpo-gt";
        case TrainMethod::dpo_counterfactual: return "dpo-cf";
    }
    return "?";
}

inline TrainMethod train_method_from_string(std::string_view s) {
    if (s == "debias") return TrainMethod::debias;
    if (s == "sft") return TrainMethod::sft;
    if (s == "dpo-gt") return TrainMethod::dpo_groundtruth;
    if (s == "dpo-cf") return TrainMethod::dpo_counterfactual;
    throw std::invalid_argument("unknown training method: " + std::string(s));
}

// ---------------------------------------------------------------------------
// Pair construction
// ---------------------------------------------------------------------------

// For every training transcript, sample a neutral response from the plain
// (transcript, query) prompt and a biased response from the same prompt with
// a training-pool spurious context (random statement, random valence); store
// them as the chosen/rejected pair under the context-bearing prompt.
// Responses are stored as token sequences even when their parsed score would
// be unusable.
inline std::vector<PreferencePair> build_debias_pairs(const ToyPolicy& policy,
                                                      const TranscriptSet& corpus,
                                                      std::string_view category_id,
                                                      const RubricDimension& dim,
                                                      const DecodingParams& dp,
                                                      std::uint64_t seed) {
    std::vector<PreferencePair> pairs;
    auto rng = make_rng(seed, "debias-pairs");
    for (const auto& t : corpus.items) {
        auto label = t.labels.find(dim.id);
        if (label == t.labels.end()) continue;
        SpuriousContext ctx = sample_training_context(category_id, dim, rng);
        PromptSpec neutral = build_prompt(t, dim);
        PromptSpec biased = build_prompt(t, dim, ctx);
        PreferencePair pair;
        pair.chosen = policy.sample_response(neutral, dp);
        pair.rejected = policy.sample_response(biased, dp);
        pair.prompt_with_context = std::move(biased);
        pair.truth_score = label->second;
        pair.transcript_id = t.id;
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

// Counterfactual preference pairs share the debias construction exactly; the
// difference between the two methods is only the training objective.
inline std::vector<PreferencePair> build_counterfactual_pairs(const ToyPolicy& policy,
                                                              const TranscriptSet& corpus,
                                                              std::string_view category_id,
                                                              const RubricDimension& dim,
                                                              const DecodingParams& dp,
                                                              std::uint64_t seed) {
    return build_debias_pairs(policy, corpus, category_id, dim, dp, seed);
}

// Ground-truth variant: the chosen response is the canonical rendering of the
// expert score ("Rating: y*"), independent of anything the policy samples.
inline std::vector<PreferencePair> build_groundtruth_pairs(const ToyPolicy& policy,
                                                           const TranscriptSet& corpus,
                                                           std::string_view category_id,
                                                           const RubricDimension& dim,
                                                           const DecodingParams& dp,
                                                           std::uint64_t seed) {
    auto pairs = build_debias_pairs(policy, corpus, category_id, dim, dp, seed);
    for (auto& pair : pairs) {
        auto tokens = policy.tokenize(policy.canonical_score_text(pair.truth_score));
        if (!tokens) throw std::logic_error("canonical score text failed to tokenize");
        pair.chosen = *tokens;
    }
    return pairs;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline double stable_softplus(double x) {  // log(1 + e^x)
    return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

// -log sigmoid(beta * ((lp_theta_c - lp_ref_c) - (lp_theta_r - lp_ref_r)))
// computed as softplus of the negated argument.
inline double dpo_loss_from_logps(double lp_theta_chosen, double lp_ref_chosen,
                                  double lp_theta_rejected, double lp_ref_rejected, double beta) {
    double margin =
        (lp_theta_chosen - lp_ref_chosen) - (lp_theta_rejected - lp_ref_rejected);
    return stable_softplus(-beta * margin);
}

inline double dpo_loss(const ToyPolicy& policy, const ToyPolicy& ref, const PreferencePair& pair,
                       double beta) {
    const PromptSpec& prompt = pair.prompt_with_context;
    return dpo_loss_from_logps(policy.sequence_logprob(prompt, pair.chosen).total,
                               ref.sequence_logprob(prompt, pair.chosen).total,
                               policy.sequence_logprob(prompt, pair.rejected).total,
                               ref.sequence_logprob(prompt, pair.rejected).total, beta);
}

// grad += d dpo_loss / d theta, returning the loss.
inline double dpo_loss_with_grad(const ToyPolicy& policy, const ToyPolicy& ref,
                                 const PreferencePair& pair, double beta,
                                 std::span<double> grad) {
    const PromptSpec& prompt = pair.prompt_with_context;
    double lp_theta_c = policy.sequence_logprob(prompt, pair.chosen).total;
    double lp_theta_r = policy.sequence_logprob(prompt, pair.rejected).total;
    double lp_ref_c = ref.sequence_logprob(prompt, pair.chosen).total;
    double lp_ref_r = ref.sequence_logprob(prompt, pair.rejected).total;
    double margin = (lp_theta_c - lp_ref_c) - (lp_theta_r - lp_ref_r);
    double loss = stable_softplus(-beta * margin);
    // d loss / d margin = -beta * sigmoid(-beta * margin)
    double coeff = -beta * sigmoid(-beta * margin);
    policy.accumulate_logprob_grad(prompt, pair.chosen, coeff, grad);
    policy.accumulate_logprob_grad(prompt, pair.rejected, -coeff, grad);
    return loss;
}

// Supervised anchor on the expert score: negative log-likelihood of the
// ground-truth score token under the context-free prompt. Only the score
// position contributes; reasoning tokens are masked out.
inline double sft_loss(const ToyPolicy& policy, const PromptSpec& any_prompt, int truth_score) {
    PromptSpec neutral = any_prompt.context ? strip_context(any_prompt) : any_prompt;
    PromptFeatures f = policy.features(neutral);
    auto z = policy.logits(1, f);
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double acc = 0.0;
    for (double v : z) acc += std::exp(v - mx);
    double lse = mx + std::log(acc);
    return -(z[static_cast<std::size_t>(policy.score_token(truth_score))] - lse);
}

inline double sft_loss(const ToyPolicy& policy, const Transcript& t, const RubricDimension& dim,
                       int truth_score) {
    return sft_loss(policy, build_prompt(t, dim), truth_score);
}

inline double sft_loss_with_grad(const ToyPolicy& policy, const PromptSpec& any_prompt,
                                 int truth_score, std::span<double> grad) {
    PromptSpec neutral = any_prompt.context ? strip_context(any_prompt) : any_prompt;
    double loss = sft_loss(policy, neutral, truth_score);
    // -log p of a single position: accumulate with scale -1 on a one-token
    // "response" seen at the score position. The reasoning position is not
    // part of the loss, so gradients are written directly for position 1.
    PromptFeatures feat = policy.features(neutral);
    const double f[ToyPolicy::kFeatures] = {feat.quality, feat.valence, 1.0};
    auto p = policy.probs(1, feat);
    int truth_token = policy.score_token(truth_score);
    for (int t = 0; t < policy.vocab_size(); ++t) {
        double indicator = t == truth_token ? 1.0 : 0.0;
        double coeff = -(indicator - p[static_cast<std::size_t>(t)]);
        for (int j = 0; j < ToyPolicy::kFeatures; ++j)
            grad[policy.index(1, t, j)] += coeff * f[j];
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Optimization steps
// ---------------------------------------------------------------------------

struct StepBreakdown {
    double total = 0.0;
    double dpo = 0.0;
    double sft = 0.0;
    double grad_norm = 0.0;
};

// One gradient-descent update on
//   w_dpo * mean(dpo_loss) + w_sft * mean(sft_loss)
// over the batch. Throws on a non-finite loss.
inline StepBreakdown debias_step(ToyPolicy& policy, const ToyPolicy& ref,
                                 const std::vector<PreferencePair>& batch,
                                 const TrainConfig& cfg) {
    if (batch.empty()) throw std::invalid_argument("debias_step: empty batch");
    cfg.validate();

    std::vector<double> grad(policy.parameters().size(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(batch.size());

    StepBreakdown breakdown;
    if (cfg.w_dpo != 0.0) {
        std::vector<double> dpo_grad(grad.size(), 0.0);
        double acc = 0.0;
        for (const auto& pair : batch)
            acc += dpo_loss_with_grad(policy, ref, pair, cfg.beta, dpo_grad);
        breakdown.dpo = acc * inv_n;
        for (std::size_t i = 0; i < grad.size(); ++i)
            grad[i] += cfg.w_dpo * inv_n * dpo_grad[i];
    } else {
        double acc = 0.0;
        for (const auto& pair : batch) acc += dpo_loss(policy, ref, pair, cfg.beta);
        breakdown.dpo = acc * inv_n;
    }
    if (cfg.w_sft != 0.0) {
        std::vector<double> sft_grad(grad.size(), 0.0);
        double acc = 0.0;
        for (const auto& pair : batch)
            acc += sft_loss_with_grad(policy, pair.prompt_with_context, pair.truth_score,
                                      sft_grad);
        breakdown.sft = acc * inv_n;
        for (std::size_t i = 0; i < grad.size(); ++i)
            grad[i] += cfg.w_sft * inv_n * sft_grad[i];
    } else {
        double acc = 0.0;
        for (const auto& pair : batch)
            acc += sft_loss(policy, pair.prompt_with_context, pair.truth_score);
        breakdown.sft = acc * inv_n;
    }

    breakdown.total = cfg.w_dpo * breakdown.dpo + cfg.w_sft * breakdown.sft;
    if (!std::isfinite(breakdown.total))
        throw std::runtime_error("non-finite training loss: dpo=" + std::to_string(breakdown.dpo) +
                                 " sft=" + std::to_string(breakdown.sft));

    double norm_sq = 0.0;
    for (double g : grad) norm_sq += g * g;
    breakdown.grad_norm = std::sqrt(norm_sq);

    auto params = policy.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= cfg.lr * grad[i];
    return breakdown;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainLogEntry {
    int step = 0;
    double total = 0.0;
    double dpo = 0.0;
    double sft = 0.0;
    double grad_norm = 0.0;
};

struct TrainLog {
    std::vector<TrainLogEntry> entries;
    bool diverged = false;
    std::string message;

    std::string to_jsonl() const {
        std::string out;
        for (const auto& e : entries) {
            nlohmann::json obj{{"step", e.step},
                               {"total", e.total},
                               {"dpo", e.dpo},
                               {"sft", e.sft},
                               {"grad_norm", e.grad_norm}};
            out += obj.dump() + "\n";
        }
        return out;
    }
};

inline constexpr double kDivergenceThreshold = 1e6;

// Iterate the pair set for cfg.epochs passes in a seed-shuffled order,
// updating the policy once per batch against the frozen reference.
inline TrainLog train(ToyPolicy& policy, const ToyPolicy& ref,
                      const std::vector<PreferencePair>& pairs, const TrainConfig& cfg) {
    cfg.validate();
    TrainLog log;
    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(pairs.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        auto rng = make_rng(cfg.seed, "epoch/" + std::to_string(epoch));
        shuffle_vec(order, rng);
        for (std::size_t begin = 0; begin < order.size();
             begin += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t end = std::min(order.size(),
                                       begin + static_cast<std::size_t>(cfg.batch_size));
            std::vector<PreferencePair> batch;
            batch.reserve(end - begin);
            for (std::size_t i = begin; i < end; ++i) batch.push_back(pairs[order[i]]);
            StepBreakdown b = debias_step(policy, ref, batch, cfg);
            log.entries.push_back({step++, b.total, b.dpo, b.sft, b.grad_norm});
            if (b.total > kDivergenceThreshold) {
                log.diverged = true;
                log.message = "loss exceeded divergence threshold at step " +
                              std::to_string(step - 1);
                return log;
            }
        }
    }
    return log;
}

// Weight presets implementing each training method on top of the same loop.
inline TrainConfig config_for_method(TrainMethod method, TrainConfig base) {
    switch (method) {
        case TrainMethod::debias:
            base.w_dpo = 1.0;
            break;  // keeps base w_sft (default 0.1)
        case TrainMethod::sft:
            base.w_dpo = 0.0;
            base.w_sft = 1.0;
            break;
        case TrainMethod::dpo_groundtruth:
        case TrainMethod::dpo_counterfactual:
            base.w_dpo = 1.0;
            base.w_sft = 0.0;
            break;
    }
    return base;
}

// Checkpoint: the policy's flat parameter vector plus the training config,
// all plain text.
inline std::string checkpoint_with_config(const ToyPolicy& policy, const TrainConfig& cfg) {
    std::ostringstream out;
    out << policy.save_checkpoint();
    out.precision(17);
    out << "config beta " << cfg.beta << "\n";
    out << "config w_dpo " << cfg.w_dpo << "\n";
    out << "config w_sft " << cfg.w_sft << "\n";
    out << "config lr " << cfg.lr << "\n";
    out << "config batch_size " << cfg.batch_size << "\n";
    out << "config epochs " << cfg.epochs << "\n";
    out << "config seed " << cfg.seed << "\n";
    return out.str();
}

// Generic preference-dataset export so external trainers can consume pairs.
inline std::string pairs_to_jsonl(const ToyPolicy& policy,
                                  const std::vector<PreferencePair>& pairs) {
    std::string out;
    for (const auto& pair : pairs) {
        nlohmann::json obj{{"prompt", pair.prompt_with_context.rendered},
                           {"chosen", policy.detokenize(pair.chosen)},
                           {"rejected", policy.detokenize(pair.rejected)},
                           {"truth_score", pair.truth_score},
                           {"transcript_id", pair.transcript_id}};
        out += obj.dump() + "\n";
    }
    return out;
}

}  // namespace spurctx
