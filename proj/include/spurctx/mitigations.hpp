#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "spurctx/contexts.hpp"
#include "spurctx/corpus.hpp"
#include "spurctx/policy.hpp"

namespace spurctx {

enum class MitigationKind { avg_n, segment_avg, safety, cot };

struct MitigationSpec {
    MitigationKind kind = MitigationKind::avg_n;
    int n = 1;  // avg_n repeats
    int k = 4;  // segment_avg segment count

    void validate() const {
        if (n < 1) throw std::invalid_argument("avg_n requires n >= 1");
        if (k < 1) throw std::invalid_argument("segment_avg requires k >= 1");
    }

    std::string label() const {
        switch (kind) {
            case MitigationKind::avg_n: return "avg@" + std::to_string(n);
            case MitigationKind::segment_avg: return "seg@" + std::to_string(k);
            case MitigationKind::safety: return "safety";
            case MitigationKind::cot: return "cot";
        }
        return "?";
    }
};

struct AveragedScore {
    double value = 0.0;
    int successes = 0;
    int failures = 0;
};

// Prompt the model n times with the same input and average the parsed scores.
// Parse failures are excluded from the mean; losing the majority of calls is
// an error rather than a misleadingly thin average.
inline AveragedScore avg_at_n(Policy& policy, const PromptSpec& prompt,
                              const RubricDimension& dim, int n, const DecodingParams& dp) {
    if (n < 1) throw std::invalid_argument("avg_at_n: n must be >= 1");
    AveragedScore out;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        DecodingParams call = dp;
        call.repeat_index = dp.repeat_index + i;
        Completion completion = policy.complete(prompt, call);
        auto score = parse_score(completion.text, dim);
        if (score) {
            acc += *score;
            ++out.successes;
        } else {
            ++out.failures;
        }
    }
    if (out.successes < (n + 1) / 2)
        throw std::runtime_error("avg_at_n: only " + std::to_string(out.successes) + " of " +
                                 std::to_string(n) + " completions parsed");
    out.value = acc / out.successes;
    return out;
}

// Score each of k equal-length segments separately and average. The spurious
// context, when present, is re-attached to every segment prompt: the attack
// targets the prompt, not the transcript body.
inline AveragedScore segment_and_average(Policy& policy, const Transcript& t,
                                         const RubricDimension& dim, const DecodingParams& dp,
                                         int k = 4,
                                         const std::optional<SpuriousContext>& context = std::nullopt,
                                         const std::vector<Decoration>& decorations = {}) {
    AveragedScore out;
    double acc = 0.0;
    for (const auto& seg : segment(t, k)) {
        PromptSpec prompt = build_prompt(seg, dim, context, decorations);
        Completion completion = policy.complete(prompt, dp);
        auto score = parse_score(completion.text, dim);
        if (score) {
            acc += *score;
            ++out.successes;
        } else {
            ++out.failures;
        }
    }
    if (out.successes == 0)
        throw std::runtime_error("segment_and_average: no segment produced a parseable score");
    out.value = acc / out.successes;
    return out;
}

// Prompt decorations are idempotent by construction: rebuilding with the
// marker appended collapses duplicates inside build_prompt.
inline PromptSpec apply_safety(const PromptSpec& prompt) {
    auto decorations = prompt.decorations;
    decorations.push_back(Decoration::safety);
    return build_prompt(prompt.transcript_text, prompt.dimension, prompt.context, decorations);
}

inline PromptSpec apply_cot(const PromptSpec& prompt) {
    auto decorations = prompt.decorations;
    decorations.push_back(Decoration::cot);
    return build_prompt(prompt.transcript_text, prompt.dimension, prompt.context, decorations);
}

}  // namespace spurctx
