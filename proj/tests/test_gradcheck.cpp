#include <gtest/gtest.h>

#include "spurctx/corpus.hpp"
#include "spurctx/gradcheck.hpp"
#include "spurctx/training.hpp"

namespace spurctx {
namespace {

const RubricDimension& clbm() { return dimension_or_throw("CLBM"); }

TEST(GradCheck, QuadraticProbeLoss) {
    // ||theta||^2 / 2 has gradient theta; the harness should agree to near
    // machine precision.
    ToyPolicy policy(clbm());
    auto rng = make_rng(1, "quad");
    for (auto& p : policy.parameters()) p = (uniform_real(rng) - 0.5) * 3.0;

    auto loss = [&] {
        double acc = 0;
        for (double p : policy.parameters()) acc += p * p;
        return acc / 2.0;
    };
    auto analytic = [&] {
        return std::vector<double>(policy.parameters().begin(), policy.parameters().end());
    };
    auto result = grad_check(policy, loss, analytic, 1e-6);
    EXPECT_LT(result.max_rel_error, 1e-7);
}

TEST(GradCheck, DpoLossGradient) {
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        auto rng = make_rng(trial, "gc-dpo");
        ToyPolicy policy(clbm());
        for (auto& p : policy.parameters()) p = (uniform_real(rng) - 0.5) * 2.0;
        ToyPolicy ref(clbm());
        for (auto& p : ref.parameters()) p = (uniform_real(rng) - 0.5) * 2.0;

        auto corpus = generate_synthetic_corpus(1, {clbm()}, trial);
        const auto& t = corpus.items[0];
        auto ctx = instantiate("experience",
                               trial % 2 == 0 ? Valence::positive : Valence::negative, clbm());
        PreferencePair pair;
        pair.prompt_with_context = build_prompt(t, clbm(), ctx);
        pair.chosen = policy.sample_response(build_prompt(t, clbm()), {});
        pair.rejected = {policy.deficit_token(),
                         policy.score_token(static_cast<int>(uniform_int(rng, 1, 7))),
                         policy.eot_token()};
        pair.truth_score = t.labels.at("CLBM");

        auto loss = [&] { return dpo_loss(policy, ref, pair, 0.1); };
        auto analytic = [&] {
            std::vector<double> grad(policy.parameters().size(), 0.0);
            dpo_loss_with_grad(policy, ref, pair, 0.1, grad);
            return grad;
        };
        auto result = grad_check(policy, loss, analytic, 1e-6);
        EXPECT_LT(result.max_rel_error, 1e-5) << "trial " << trial;
    }
}

TEST(GradCheck, SftLossGradient) {
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        auto rng = make_rng(trial, "gc-sft");
        ToyPolicy policy(clbm());
        for (auto& p : policy.parameters()) p = (uniform_real(rng) - 0.5) * 2.0;
        auto corpus = generate_synthetic_corpus(1, {clbm()}, trial + 100);
        auto prompt = build_prompt(corpus.items[0], clbm());
        int truth = corpus.items[0].labels.at("CLBM");

        auto loss = [&] { return sft_loss(policy, prompt, truth); };
        auto analytic = [&] {
            std::vector<double> grad(policy.parameters().size(), 0.0);
            sft_loss_with_grad(policy, prompt, truth, grad);
            return grad;
        };
        auto result = grad_check(policy, loss, analytic, 1e-6);
        EXPECT_LT(result.max_rel_error, 1e-5) << "trial " << trial;
    }
}

TEST(GradCheck, CombinedDebiasLossGradient) {
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        auto rng = make_rng(trial, "gc-combined");
        ToyPolicy policy(clbm());
        for (auto& p : policy.parameters()) p = (uniform_real(rng) - 0.5) * 2.0;
        ToyPolicy ref = ToyPolicy::planted(clbm(), {.bias_points = 1.0});

        auto corpus = generate_synthetic_corpus(3, {clbm()}, trial + 200);
        auto pairs = build_debias_pairs(policy, corpus, "experience", clbm(), {}, trial);
        const double beta = 0.1, w_dpo = 1.0, w_sft = 0.1;

        auto loss = [&] {
            double dpo_acc = 0, sft_acc = 0;
            for (const auto& pair : pairs) {
                dpo_acc += dpo_loss(policy, ref, pair, beta);
                sft_acc += sft_loss(policy, pair.prompt_with_context, pair.truth_score);
            }
            double n = static_cast<double>(pairs.size());
            return w_dpo * dpo_acc / n + w_sft * sft_acc / n;
        };
        auto analytic = [&] {
            std::vector<double> grad(policy.parameters().size(), 0.0);
            std::vector<double> dpo_grad(grad.size(), 0.0), sft_grad(grad.size(), 0.0);
            for (const auto& pair : pairs) {
                dpo_loss_with_grad(policy, ref, pair, beta, dpo_grad);
                sft_loss_with_grad(policy, pair.prompt_with_context, pair.truth_score, sft_grad);
            }
            double n = static_cast<double>(pairs.size());
            for (std::size_t i = 0; i < grad.size(); ++i)
                grad[i] = w_dpo * dpo_grad[i] / n + w_sft * sft_grad[i] / n;
            return grad;
        };
        auto result = grad_check(policy, loss, analytic, 1e-6);
        EXPECT_LT(result.max_rel_error, 1e-5) << "trial " << trial;
    }
}

TEST(GradCheck, RejectsNonPositiveEps) {
    ToyPolicy policy(clbm());
    auto loss = [] { return 0.0; };
    auto analytic = [&] { return std::vector<double>(policy.parameters().size(), 0.0); };
    EXPECT_THROW(grad_check(policy, loss, analytic, 0.0), std::invalid_argument);
}

}  // namespace
}  // namespace spurctx
