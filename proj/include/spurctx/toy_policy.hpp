#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spurctx/contexts.hpp"
#include "spurctx/corpus.hpp"
#include "spurctx/policy.hpp"
#include "spurctx/rubric.hpp"
#include "spurctx/util.hpp"

namespace spurctx {

// Prompt features seen by the toy policy: a planted-quality signal recovered
// from the transcript's marker-token rate, normalized so the scale maps to
// [-1, 1], and a context-valence indicator in {-1, 0, +1}.
struct PromptFeatures {
    double quality = 0.0;
    double valence = 0.0;
};

struct LogprobResult {
    double total = 0.0;
    std::vector<double> per_token;
};

struct PlantedInit {
    double bias_points = 1.0;       // score-point shift per unit of valence
    double quality_slope = 1.0;     // 1.0 maps quality exactly onto the scale
    double sharpness = 1.0;         // logit scale of the score head
    double reasoning_gain = 1.0;    // asset/deficit sensitivity to quality
    double reasoning_valence = 0.5; // asset/deficit sensitivity to valence
};

// A tiny trainable scoring policy. Responses are token sequences
// [reasoning, score, terminator] over the vocabulary
//   {scale_min..scale_max} u {asset, deficit} u {<eot>},
// with an independent linear-softmax head per response position. Small
// enough that every gradient is exact and checkable by hand, yet the
// response is a genuine multi-token sequence.
class ToyPolicy {
public:
    static constexpr int kPositions = 3;
    static constexpr int kFeatures = 3;  // quality, valence, bias

    using PlantedInit = spurctx::PlantedInit;

    explicit ToyPolicy(const RubricDimension& dim)
        : dim_(dim), scale_size_(dim.scale_max - dim.scale_min + 1) {
        params_.assign(static_cast<std::size_t>(kPositions * vocab_size() * kFeatures), 0.0);
    }

    // A policy whose score head peaks near the planted quality, shifted by
    // bias_points per unit of context valence.
    static ToyPolicy planted(const RubricDimension& dim, const PlantedInit& init = {}) {
        ToyPolicy policy(dim);
        const double c = 0.5 * (dim.scale_min + dim.scale_max);
        const double h = 0.5 * (dim.scale_max - dim.scale_min);
        const double tau = init.sharpness;
        constexpr double off_support = -8.0;

        for (int t = 0; t < policy.vocab_size(); ++t) {
            // reasoning position
            if (t == policy.asset_token()) {
                policy.at(0, t, 0) = init.reasoning_gain;
                policy.at(0, t, 1) = init.reasoning_gain * init.reasoning_valence;
            } else if (t == policy.deficit_token()) {
                policy.at(0, t, 0) = -init.reasoning_gain;
                policy.at(0, t, 1) = -init.reasoning_gain * init.reasoning_valence;
            } else {
                policy.at(0, t, 2) = off_support;
            }
            // score position
            if (policy.is_score_token(t)) {
                double m = static_cast<double>(policy.token_value(t)) - c;
                policy.at(1, t, 0) = tau * init.quality_slope * h * m;
                policy.at(1, t, 1) = tau * init.bias_points * m;
                policy.at(1, t, 2) = -0.5 * tau * m * m;
            } else {
                policy.at(1, t, 2) = off_support;
            }
            // terminator position
            policy.at(2, t, 2) = t == policy.eot_token() ? 8.0 : off_support;
        }
        return policy;
    }

    const RubricDimension& dimension() const { return dim_; }
    int vocab_size() const { return scale_size_ + 3; }
    int score_token(int value) const {
        if (!dim_.in_scale(value))
            throw std::invalid_argument("score value outside scale: " + std::to_string(value));
        return value - dim_.scale_min;
    }
    int asset_token() const { return scale_size_; }
    int deficit_token() const { return scale_size_ + 1; }
    int eot_token() const { return scale_size_ + 2; }
    bool is_score_token(int t) const { return t >= 0 && t < scale_size_; }
    int token_value(int t) const { return dim_.scale_min + t; }

    std::string token_name(int t) const {
        if (is_score_token(t)) return std::to_string(token_value(t));
        if (t == asset_token()) return "asset";
        if (t == deficit_token()) return "deficit";
        if (t == eot_token()) return "<eot>";
        throw std::invalid_argument("token out of vocabulary: " + std::to_string(t));
    }

    std::span<double> parameters() { return params_; }
    std::span<const double> parameters() const { return params_; }

    ToyPolicy clone_frozen() const { return *this; }

    // --- features -----------------------------------------------------------

    PromptFeatures features(const PromptSpec& prompt) const {
        PromptFeatures f;
        const double c = 0.5 * (dim_.scale_min + dim_.scale_max);
        const double h = 0.5 * (dim_.scale_max - dim_.scale_min);
        double q = planted_quality(prompt.transcript_text, dim_);
        f.quality = std::clamp((q - c) / h, -2.0, 2.0);
        if (prompt.context)
            f.valence = prompt.context->valence == Valence::positive ? 1.0 : -1.0;
        return f;
    }

    // --- distributions ------------------------------------------------------

    std::vector<double> logits(int position, const PromptFeatures& f) const {
        check_position(position);
        std::vector<double> z(static_cast<std::size_t>(vocab_size()));
        for (int t = 0; t < vocab_size(); ++t)
            z[static_cast<std::size_t>(t)] =
                at(position, t, 0) * f.quality + at(position, t, 1) * f.valence + at(position, t, 2);
        return z;
    }

    std::vector<double> probs(int position, const PromptFeatures& f) const {
        auto z = logits(position, f);
        double lse = logsumexp(z);
        for (auto& v : z) v = std::exp(v - lse);
        return z;
    }

    // --- sequence likelihood and its gradient -------------------------------

    LogprobResult sequence_logprob(const PromptSpec& prompt, std::span<const int> tokens) const {
        check_response(tokens);
        PromptFeatures f = features(prompt);
        LogprobResult result;
        for (std::size_t pos = 0; pos < tokens.size(); ++pos) {
            auto z = logits(static_cast<int>(pos), f);
            double lp = z[static_cast<std::size_t>(tokens[pos])] - logsumexp(z);
            result.per_token.push_back(lp);
            result.total += lp;
        }
        return result;
    }

    // grad += scale * d log pi(tokens | prompt) / d theta
    void accumulate_logprob_grad(const PromptSpec& prompt, std::span<const int> tokens,
                                 double scale, std::span<double> grad) const {
        check_response(tokens);
        if (grad.size() != params_.size())
            throw std::invalid_argument("gradient buffer size mismatch");
        PromptFeatures feat = features(prompt);
        const double f[kFeatures] = {feat.quality, feat.valence, 1.0};
        for (std::size_t pos = 0; pos < tokens.size(); ++pos) {
            auto p = probs(static_cast<int>(pos), feat);
            for (int t = 0; t < vocab_size(); ++t) {
                double indicator = t == tokens[pos] ? 1.0 : 0.0;
                double coeff = scale * (indicator - p[static_cast<std::size_t>(t)]);
                for (int j = 0; j < kFeatures; ++j)
                    grad[index(static_cast<int>(pos), t, j)] += coeff * f[j];
            }
        }
    }

    // --- generation ----------------------------------------------------------

    std::vector<int> sample_response(const PromptSpec& prompt, const DecodingParams& dp) const {
        PromptFeatures f = features(prompt);
        std::vector<int> tokens;
        if (dp.temperature <= 0.0) {
            for (int pos = 0; pos < kPositions; ++pos) {
                auto z = logits(pos, f);
                int best = 0;
                for (int t = 1; t < vocab_size(); ++t)
                    if (z[static_cast<std::size_t>(t)] > z[static_cast<std::size_t>(best)]) best = t;
                tokens.push_back(best);
            }
            return tokens;
        }
        std::uint64_t seed = dp.seed.value_or(0);
        seed = fnv1a64(prompt.rendered, seed ^ 0x5bd1e9955bd1e995ull);
        seed ^= static_cast<std::uint64_t>(dp.repeat_index) * 0x9e3779b97f4a7c15ull;
        auto rng = make_rng(seed, "toy-sample");
        for (int pos = 0; pos < kPositions; ++pos) {
            auto z = logits(pos, f);
            for (auto& v : z) v /= dp.temperature;
            double lse = logsumexp(z);
            double u = uniform_real(rng);
            double acc = 0.0;
            int chosen = vocab_size() - 1;
            for (int t = 0; t < vocab_size(); ++t) {
                acc += std::exp(z[static_cast<std::size_t>(t)] - lse);
                if (u < acc) { chosen = t; break; }
            }
            tokens.push_back(chosen);
        }
        return tokens;
    }

    // --- text round trip ------------------------------------------------------

    // "asset Rating: 5", "deficit Rating: 2" or bare "Rating: 4"; the
    // terminator renders as nothing.
    std::string detokenize(std::span<const int> tokens) const {
        std::vector<std::string> parts;
        for (int t : tokens) {
            if (t == eot_token()) continue;
            if (is_score_token(t)) parts.push_back("Rating: " + std::to_string(token_value(t)));
            else parts.push_back(token_name(t));
        }
        return join(parts);
    }

    std::optional<std::vector<int>> tokenize(std::string_view text) const {
        std::vector<int> tokens;
        auto words = spurctx::tokenize(text);
        std::size_t i = 0;
        if (i < words.size() && (words[i] == "asset" || words[i] == "deficit")) {
            tokens.push_back(words[i] == "asset" ? asset_token() : deficit_token());
            ++i;
        }
        if (i + 1 < words.size() && words[i] == "Rating:") {
            try {
                int value = std::stoi(words[i + 1]);
                if (!dim_.in_scale(value)) return std::nullopt;
                tokens.push_back(score_token(value));
                i += 2;
            } catch (const std::exception&) {
                return std::nullopt;
            }
        }
        if (i != words.size() || tokens.empty()) return std::nullopt;
        tokens.push_back(eot_token());
        return tokens;
    }

    std::string canonical_score_text(int value) const {
        return "Rating: " + std::to_string(value);
    }

    // --- checkpoint -----------------------------------------------------------

    std::string save_checkpoint() const {
        std::ostringstream out;
        out.precision(17);
        out << "spurctx-toy-policy v1\n";
        out << "dimension " << dim_.id << "\n";
        out << "params " << params_.size() << "\n";
        for (double p : params_) out << p << "\n";
        return out.str();
    }

    static ToyPolicy load_checkpoint(std::string_view text) {
        std::istringstream in{std::string(text)};
        std::string header, word, dim_id;
        std::getline(in, header);
        if (header != "spurctx-toy-policy v1")
            throw std::runtime_error("unrecognized checkpoint header: " + header);
        in >> word >> dim_id;
        if (word != "dimension") throw std::runtime_error("malformed checkpoint");
        std::size_t count = 0;
        in >> word >> count;
        if (word != "params") throw std::runtime_error("malformed checkpoint");
        ToyPolicy policy(dimension_or_throw(dim_id));
        if (count != policy.params_.size())
            throw std::runtime_error("checkpoint parameter count mismatch");
        for (auto& p : policy.params_)
            if (!(in >> p)) throw std::runtime_error("truncated checkpoint");
        return policy;
    }

    std::size_t index(int position, int token, int feature) const {
        return (static_cast<std::size_t>(position) * static_cast<std::size_t>(vocab_size()) +
                static_cast<std::size_t>(token)) *
                   kFeatures +
               static_cast<std::size_t>(feature);
    }

    double& at(int position, int token, int feature) { return params_[index(position, token, feature)]; }
    double at(int position, int token, int feature) const { return params_[index(position, token, feature)]; }

private:
    static double logsumexp(const std::vector<double>& z) {
        double mx = z[0];
        for (double v : z) mx = std::max(mx, v);
        double acc = 0.0;
        for (double v : z) acc += std::exp(v - mx);
        return mx + std::log(acc);
    }

    void check_position(int position) const {
        if (position < 0 || position >= kPositions)
            throw std::invalid_argument("position out of range: " + std::to_string(position));
    }

    void check_response(std::span<const int> tokens) const {
        if (tokens.empty()) throw std::invalid_argument("empty response");
        if (tokens.size() > kPositions)
            throw std::invalid_argument("response longer than " + std::to_string(kPositions) +
                                        " tokens");
        for (int t : tokens)
            if (t < 0 || t >= vocab_size())
                throw std::invalid_argument("token out of vocabulary: " + std::to_string(t));
    }

    RubricDimension dim_;
    int scale_size_;
    std::vector<double> params_;
};

// Presents a ToyPolicy through the generic Policy interface.
class ToyPolicyAdapter final : public Policy {
public:
    explicit ToyPolicyAdapter(const ToyPolicy& policy, std::string id = "toy")
        : policy_(policy), id_(std::move(id)) {}

    Completion complete(const PromptSpec& prompt, const DecodingParams& dp) override {
        auto tokens = policy_.sample_response(prompt, dp);
        auto lp = policy_.sequence_logprob(prompt, tokens);
        Completion completion;
        completion.text = policy_.detokenize(tokens);
        completion.model_id = id_;
        std::vector<std::pair<std::string, double>> token_logprobs;
        for (std::size_t i = 0; i < tokens.size(); ++i)
            token_logprobs.emplace_back(policy_.token_name(tokens[i]), lp.per_token[i]);
        completion.token_logprobs = std::move(token_logprobs);
        return completion;
    }

    std::string model_id() const override { return id_; }

private:
    const ToyPolicy& policy_;
    std::string id_;
};

}  // namespace spurctx
