#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "spurctx/contexts.hpp"
#include "spurctx/corpus.hpp"
#include "spurctx/rubric.hpp"

namespace spurctx {

struct DecodingParams {
    double temperature = 0.0;
    int max_tokens = 64;
    std::optional<std::uint64_t> seed;
    // Distinguishes repeated calls on an identical prompt (avg@n, baseline
    // repeats); part of the cache identity.
    int repeat_index = 0;
};

struct Completion {
    std::string text;
    std::optional<std::vector<std::pair<std::string, double>>> token_logprobs;
    std::string model_id;
    double latency_ms = 0.0;
};

// Anything that can score a prompt: remote chat endpoints, deterministic
// stubs, or the toy trainable policy behind an adapter.
class Policy {
public:
    virtual ~Policy() = default;
    virtual Completion complete(const PromptSpec& prompt, const DecodingParams& dp) = 0;
    virtual std::string model_id() const = 0;
};

// ---------------------------------------------------------------------------
// Score parsing
// ---------------------------------------------------------------------------

// Extract the integer rating from completion text. The last "Rating: <n>"
// match wins; if the model stated a rating it is authoritative, so an
// out-of-scale value there is a parse failure even if other numbers appear.
// Without a rating marker, the last standalone integer within the scale
// bounds is used. Never throws; returns nullopt when nothing usable is found.
inline std::optional<int> parse_score(std::string_view text, const RubricDimension& dim) {
    auto is_digit = [](char c) { return c >= '0' && c <= '9'; };

    // Last occurrence of "rating" (any case) followed by optional ':'/'is'
    // and an integer.
    std::string lower = to_lower(text);
    std::optional<int> rating_value;
    std::size_t search = 0;
    while (true) {
        std::size_t pos = lower.find("rating", search);
        if (pos == std::string::npos) break;
        search = pos + 6;
        std::size_t i = pos + 6;
        while (i < lower.size() &&
               (lower[i] == ' ' || lower[i] == ':' || lower[i] == '=' || lower[i] == '*')) ++i;
        if (i + 1 < lower.size() && lower[i] == 'i' && lower[i + 1] == 's') {
            i += 2;
            while (i < lower.size() && lower[i] == ' ') ++i;
        }
        std::size_t start = i;
        while (i < lower.size() && is_digit(lower[i])) ++i;
        if (i > start) {
            try {
                rating_value = std::stoi(lower.substr(start, i - start));
            } catch (const std::exception&) {
                rating_value = std::nullopt;  // overlong digit run
            }
        }
    }
    if (rating_value) {
        if (dim.in_scale(*rating_value)) return rating_value;
        return std::nullopt;
    }

    // Fallback: last standalone integer within the scale bounds.
    std::optional<int> best;
    std::size_t i = 0;
    while (i < text.size()) {
        if (is_digit(text[i])) {
            std::size_t start = i;
            while (i < text.size() && is_digit(text[i])) ++i;
            bool standalone_left = start == 0 || !is_digit(text[start - 1]);
            if (standalone_left && i - start <= 2) {
                try {
                    int v = std::stoi(std::string(text.substr(start, i - start)));
                    if (dim.in_scale(v)) best = v;
                } catch (const std::exception&) {
                }
            }
        } else {
            ++i;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// One model call's outcome plus full provenance.
// ---------------------------------------------------------------------------

struct PredictionRecord {
    std::string transcript_id;
    std::string dimension_id;
    std::optional<SpuriousContext> context;
    std::vector<std::string> strategy;  // mitigation markers, e.g. "avg@5", "safety"
    std::string raw_text;
    std::optional<int> parsed_score;
    int repeat_index = 0;
    std::string model_id;
};

// ---------------------------------------------------------------------------
// Deterministic stub policies
// ---------------------------------------------------------------------------

class ConstantStubPolicy final : public Policy {
public:
    explicit ConstantStubPolicy(int score) : score_(score) {}

    Completion complete(const PromptSpec&, const DecodingParams&) override {
        return {"Rating: " + std::to_string(score_), std::nullopt, model_id(), 0.0};
    }
    std::string model_id() const override { return "stub:constant:" + std::to_string(score_); }

private:
    int score_;
};

// Reads the planted quality of the (synthetic) transcript from its marker
// rate and shifts it by `positive_shift` when a positive-valence context is
// present. The shift is applied without clamping: a shifted score that leaves
// the scale becomes a parse failure downstream, which is the honest outcome.
class BiasedStubPolicy final : public Policy {
public:
    explicit BiasedStubPolicy(int positive_shift = 1) : shift_(positive_shift) {}

    Completion complete(const PromptSpec& prompt, const DecodingParams&) override {
        int quality = static_cast<int>(
            std::llround(planted_quality(prompt.transcript_text, prompt.dimension)));
        int score = quality;
        if (prompt.context && prompt.context->valence == Valence::positive) score += shift_;
        return {"Rating: " + std::to_string(score), std::nullopt, model_id(), 0.0};
    }
    std::string model_id() const override {
        return "stub:biased:" + std::to_string(shift_);
    }

private:
    int shift_;
};

// Emits a fixed script of completions keyed by repeat_index.
class ScriptedStubPolicy final : public Policy {
public:
    explicit ScriptedStubPolicy(std::vector<std::string> script) : script_(std::move(script)) {}

    Completion complete(const PromptSpec&, const DecodingParams& dp) override {
        const auto& text = script_[static_cast<std::size_t>(dp.repeat_index) % script_.size()];
        return {text, std::nullopt, model_id(), 0.0};
    }
    std::string model_id() const override { return "stub:scripted"; }

private:
    std::vector<std::string> script_;
};

}  // namespace spurctx
