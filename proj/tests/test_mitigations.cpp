#include <gtest/gtest.h>

#include "spurctx/corpus.hpp"
#include "spurctx/mitigations.hpp"
#include "spurctx/toy_policy.hpp"

namespace spurctx {
namespace {

const RubricDimension& clbm() { return dimension_or_throw("CLBM"); }

// Counts calls forwarded to an inner policy.
class CountingPolicy final : public Policy {
public:
    explicit CountingPolicy(Policy& inner) : inner_(inner) {}
    Completion complete(const PromptSpec& prompt, const DecodingParams& dp) override {
        ++calls_;
        return inner_.complete(prompt, dp);
    }
    std::string model_id() const override { return inner_.model_id(); }
    int calls() const { return calls_; }

private:
    Policy& inner_;
    int calls_ = 0;
};

TEST(AvgAtN, DegenerateNEqualsSingleCall) {
    ConstantStubPolicy stub(5);
    auto prompt = build_prompt("Teacher: hello", clbm());
    auto avg = avg_at_n(stub, prompt, clbm(), 1, {});
    auto single = parse_score(stub.complete(prompt, {}).text, clbm());
    EXPECT_DOUBLE_EQ(avg.value, static_cast<double>(*single));
}

TEST(AvgAtN, ConstantStubAveragesToItself) {
    ConstantStubPolicy stub(4);
    auto prompt = build_prompt("Teacher: hello", clbm());
    auto avg = avg_at_n(stub, prompt, clbm(), 5, {});
    EXPECT_DOUBLE_EQ(avg.value, 4.0);
    EXPECT_EQ(avg.successes, 5);
}

TEST(AvgAtN, AlternatingScriptAveragesArithmetically) {
    ScriptedStubPolicy stub({"Rating: 3", "Rating: 5"});
    auto prompt = build_prompt("Teacher: hello", clbm());
    auto avg = avg_at_n(stub, prompt, clbm(), 4, {});
    EXPECT_DOUBLE_EQ(avg.value, 4.0);  // (3+5+3+5)/4
}

TEST(AvgAtN, MajorityParseFailureIsAnError) {
    ScriptedStubPolicy stub({"Rating: 9", "Rating: 9", "Rating: 4"});
    auto prompt = build_prompt("Teacher: hello", clbm());
    EXPECT_THROW(avg_at_n(stub, prompt, clbm(), 3, {}), std::runtime_error);

    // Minority failures are tolerated and excluded from the mean.
    ScriptedStubPolicy mostly_good({"Rating: 4", "Rating: 9", "Rating: 6"});
    auto avg = avg_at_n(mostly_good, prompt, clbm(), 3, {});
    EXPECT_DOUBLE_EQ(avg.value, 5.0);
    EXPECT_EQ(avg.failures, 1);
}

TEST(AvgAtN, DeterministicPolicyEqualsSingleShotForAllN) {
    auto corpus = generate_synthetic_corpus(3, {clbm()}, 2);
    ToyPolicy policy = ToyPolicy::planted(clbm());
    ToyPolicyAdapter adapter(policy);
    for (const auto& t : corpus.items) {
        auto prompt = build_prompt(t, clbm());
        double single = static_cast<double>(*parse_score(adapter.complete(prompt, {}).text, clbm()));
        for (int n : {1, 2, 5}) {
            auto avg = avg_at_n(adapter, prompt, clbm(), n, {});
            EXPECT_DOUBLE_EQ(avg.value, single);
        }
    }
}

TEST(SegmentAvg, KOneEqualsWholeTranscriptScore) {
    auto corpus = generate_synthetic_corpus(3, {clbm()}, 3);
    BiasedStubPolicy stub(0);
    for (const auto& t : corpus.items) {
        auto whole = parse_score(stub.complete(build_prompt(t, clbm()), {}).text, clbm());
        auto avg = segment_and_average(stub, t, clbm(), {}, 1);
        EXPECT_DOUBLE_EQ(avg.value, static_cast<double>(*whole));
    }
}

TEST(SegmentAvg, HomogeneousTranscriptQuartersMatchWhole) {
    // The stub scores by marker-token rate; synthetic quarters carry the same
    // rate as the whole, so the segment average equals the whole score.
    auto corpus = generate_synthetic_corpus(5, {clbm()}, 4);
    BiasedStubPolicy stub(0);
    for (const auto& t : corpus.items) {
        auto whole = parse_score(stub.complete(build_prompt(t, clbm()), {}).text, clbm());
        auto avg = segment_and_average(stub, t, clbm(), {}, 4);
        EXPECT_DOUBLE_EQ(avg.value, static_cast<double>(*whole));

        // Verify against an independent recount on each quarter.
        for (const auto& quarter : segment(t, 4)) {
            auto q = parse_score(stub.complete(build_prompt(quarter, clbm()), {}).text, clbm());
            EXPECT_EQ(*q, *whole);
        }
    }
}

TEST(SegmentAvg, IssuesExactlyKCompletions) {
    auto corpus = generate_synthetic_corpus(1, {clbm()}, 5);
    ConstantStubPolicy stub(4);
    CountingPolicy counter(stub);
    segment_and_average(counter, corpus.items[0], clbm(), {}, 4);
    EXPECT_EQ(counter.calls(), 4);
}

TEST(SegmentAvg, ReattachesContextToEverySegmentPrompt) {
    auto corpus = generate_synthetic_corpus(1, {clbm()}, 6);
    auto ctx = instantiate("experience", Valence::positive, clbm());

    class Inspecting final : public Policy {
    public:
        Completion complete(const PromptSpec& prompt, const DecodingParams&) override {
            saw_context_count += prompt.context.has_value() ? 1 : 0;
            return {"Rating: 4", std::nullopt, "inspect", 0.0};
        }
        std::string model_id() const override { return "inspect"; }
        int saw_context_count = 0;
    } inspecting;

    segment_and_average(inspecting, corpus.items[0], clbm(), {}, 4, ctx);
    EXPECT_EQ(inspecting.saw_context_count, 4);
}

TEST(Decorations, SafetyIdempotent) {
    auto prompt = build_prompt("Teacher: hello", clbm());
    auto once = apply_safety(prompt);
    auto twice = apply_safety(once);
    EXPECT_EQ(once.rendered, twice.rendered);
    EXPECT_TRUE(contains_once(twice.rendered, std::string(kSafetySentence)));
}

TEST(Decorations, CotPromptParsesTrailingRating) {
    auto prompt = apply_cot(build_prompt("Teacher: hello", clbm()));
    EXPECT_TRUE(contains_once(prompt.rendered, std::string(kCotSentence)));
    // A reasoning-then-rating completion parses to the trailing rating.
    std::string completion =
        "The teacher redirects the class calmly and re-engages students. Rating: 6";
    EXPECT_EQ(parse_score(completion, clbm()), 6);
}

TEST(Decorations, ComposeInDeclarationOrder) {
    auto prompt = build_prompt("Teacher: hello", clbm());
    auto sc = apply_cot(apply_safety(prompt));
    auto sc_direct = build_prompt("Teacher: hello", clbm(), std::nullopt,
                                  {Decoration::safety, Decoration::cot});
    EXPECT_EQ(sc.rendered, sc_direct.rendered);
    auto safety_pos = sc.rendered.find(kSafetySentence);
    auto cot_pos = sc.rendered.find(kCotSentence);
    EXPECT_LT(safety_pos, cot_pos);

    auto cs = apply_safety(apply_cot(prompt));
    EXPECT_LT(cs.rendered.find(kCotSentence), cs.rendered.find(kSafetySentence));
}

TEST(Decorations, NeverAlterTranscriptSubstring) {
    auto corpus = generate_synthetic_corpus(2, {clbm()}, 7);
    for (const auto& t : corpus.items) {
        auto base = build_prompt(t, clbm(), instantiate("demographic", Valence::negative, clbm()));
        for (const auto& decorated : {apply_safety(base), apply_cot(base),
                                      apply_cot(apply_safety(base))}) {
            EXPECT_TRUE(contains_once(decorated.rendered, t.text));
            EXPECT_EQ(decorated.transcript_text, t.text);
        }
    }
}

}  // namespace
}  // namespace spurctx
