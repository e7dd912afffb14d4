#include <gtest/gtest.h>

#include <cmath>

#include "spurctx/corpus.hpp"
#include "spurctx/training.hpp"

namespace spurctx {
namespace {

const RubricDimension& clbm() { return dimension_or_throw("CLBM"); }

ToyPolicy randomized_policy(std::uint64_t seed, const RubricDimension& dim = clbm(),
                            double scale = 2.0) {
    auto rng = make_rng(seed, "train-rand");
    ToyPolicy policy(dim);
    for (auto& p : policy.parameters()) p = (uniform_real(rng) - 0.5) * scale;
    return policy;
}

PreferencePair sample_pair(const ToyPolicy& policy, std::uint64_t seed) {
    auto corpus = generate_synthetic_corpus(1, {policy.dimension()}, seed);
    const auto& t = corpus.items[0];
    auto ctx = instantiate("experience",
                           seed % 2 == 0 ? Valence::positive : Valence::negative,
                           policy.dimension());
    PreferencePair pair;
    pair.prompt_with_context = build_prompt(t, policy.dimension(), ctx);
    pair.chosen = policy.sample_response(build_prompt(t, policy.dimension()), {});
    pair.rejected = policy.sample_response(pair.prompt_with_context, {});
    pair.truth_score = t.labels.at(policy.dimension().id);
    pair.transcript_id = t.id;
    return pair;
}

// --- dpo loss -------------------------------------------------------------------

TEST(DpoLoss, EqualPoliciesGiveLnTwo) {
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        ToyPolicy policy = randomized_policy(trial);
        ToyPolicy ref = policy.clone_frozen();
        PreferencePair pair = sample_pair(policy, trial);
        EXPECT_NEAR(dpo_loss(policy, ref, pair, 0.1), std::log(2.0), 1e-9) << trial;
    }
}

TEST(DpoLoss, BetaZeroRejectedByValidationButLnTwoInFormula) {
    // The closed-form helper shows the identity directly.
    EXPECT_NEAR(dpo_loss_from_logps(-1.0, -2.5, -0.3, -4.0, 0.0), std::log(2.0), 1e-12);
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        ToyPolicy policy = randomized_policy(trial);
        ToyPolicy ref = randomized_policy(trial + 1000);
        PreferencePair pair = sample_pair(policy, trial);
        EXPECT_NEAR(dpo_loss(policy, ref, pair, 0.0), std::log(2.0), 1e-9);
    }
}

TEST(DpoLoss, UnitMarginBetaTenth) {
    // chosen logratio - rejected logratio = 1.0 with beta 0.1
    double loss = dpo_loss_from_logps(-1.0, -1.5, -2.0, -1.5, 0.1);
    EXPECT_NEAR(loss, std::log(1.0 + std::exp(-0.1)), 1e-12);
    EXPECT_NEAR(loss, 0.644397, 5e-7);
}

TEST(DpoLoss, StrictlyDecreasingInMargin) {
    double prev = 1e9;
    for (double margin = -4.0; margin <= 4.0; margin += 0.25) {
        double loss = dpo_loss_from_logps(margin, 0.0, 0.0, 0.0, 0.1);
        EXPECT_LT(loss, prev);
        prev = loss;
    }
}

TEST(DpoLoss, InvariantToCommonLikelihoodScaling) {
    // Adding the same constant to policy and reference logprobs of a response
    // cancels in the log ratio.
    auto rng = make_rng(71, "dpo-invariance");
    for (int trial = 0; trial < 50; ++trial) {
        double ltc = -uniform_real(rng) * 5, lrc = -uniform_real(rng) * 5;
        double ltr = -uniform_real(rng) * 5, lrr = -uniform_real(rng) * 5;
        double shift_c = (uniform_real(rng) - 0.5) * 10;
        double shift_r = (uniform_real(rng) - 0.5) * 10;
        double base = dpo_loss_from_logps(ltc, lrc, ltr, lrr, 0.1);
        double shifted =
            dpo_loss_from_logps(ltc + shift_c, lrc + shift_c, ltr + shift_r, lrr + shift_r, 0.1);
        EXPECT_NEAR(base, shifted, 1e-12);
    }
}

// --- sft loss --------------------------------------------------------------------

TEST(SftLoss, OneHotPolicyGivesZero) {
    ToyPolicy policy(clbm());
    auto corpus = generate_synthetic_corpus(1, {clbm()}, 2);
    int truth = corpus.items[0].labels.at("CLBM");
    policy.at(1, policy.score_token(truth), 2) = 500.0;
    EXPECT_NEAR(sft_loss(policy, corpus.items[0], clbm(), truth), 0.0, 1e-12);
}

TEST(SftLoss, UniformOverScoreTokensGivesLnSeven) {
    ToyPolicy policy(clbm());
    // Suppress non-score tokens at the score position; score logits equal.
    policy.at(1, policy.asset_token(), 2) = -1e9;
    policy.at(1, policy.deficit_token(), 2) = -1e9;
    policy.at(1, policy.eot_token(), 2) = -1e9;
    auto corpus = generate_synthetic_corpus(1, {clbm()}, 3);
    double loss = sft_loss(policy, corpus.items[0], clbm(), 4);
    EXPECT_NEAR(loss, std::log(7.0), 1e-9);
    EXPECT_NEAR(loss, 1.945910, 5e-7);
}

TEST(SftLoss, MatchesChainedSoftmaxOracle) {
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        ToyPolicy policy = randomized_policy(trial + 50);
        auto corpus = generate_synthetic_corpus(1, {clbm()}, trial);
        const auto& t = corpus.items[0];
        int truth = t.labels.at("CLBM");
        double loss = sft_loss(policy, t, clbm(), truth);

        // Explicit softmax oracle at the score position of the plain prompt.
        auto prompt = build_prompt(t, clbm());
        PromptFeatures f = policy.features(prompt);
        auto z = policy.logits(1, f);
        double denom = 0;
        for (double v : z) denom += std::exp(v);
        double p = std::exp(z[static_cast<std::size_t>(policy.score_token(truth))]) / denom;
        EXPECT_NEAR(loss, -std::log(p), 1e-12);
    }
}

TEST(SftLoss, ConditionsOnContextFreePrompt) {
    // Valence must not leak into the SFT loss: a context-bearing prompt and
    // its stripped twin give identical losses.
    ToyPolicy policy = randomized_policy(7);
    auto corpus = generate_synthetic_corpus(1, {clbm()}, 7);
    const auto& t = corpus.items[0];
    auto ctx_prompt = build_prompt(t, clbm(), instantiate("experience", Valence::positive, clbm()));
    auto plain_prompt = build_prompt(t, clbm());
    EXPECT_DOUBLE_EQ(sft_loss(policy, ctx_prompt, 5), sft_loss(policy, plain_prompt, 5));
}

// --- pair builders ----------------------------------------------------------------

TEST(PairBuilders, OnePairPerTranscript) {
    ToyPolicy policy = ToyPolicy::planted(clbm());
    auto corpus = generate_synthetic_corpus(25, {clbm()}, 5);
    auto pairs = build_debias_pairs(policy, corpus, "experience", clbm(), {}, 1);
    EXPECT_EQ(pairs.size(), corpus.size());
    for (const auto& pair : pairs) {
        EXPECT_FALSE(pair.chosen.empty());
        EXPECT_FALSE(pair.rejected.empty());
        ASSERT_TRUE(pair.prompt_with_context.context.has_value());
        EXPECT_EQ(pair.prompt_with_context.context->category_id, "experience");
    }
}

TEST(PairBuilders, ContextBlindPolicyYieldsIdenticalPairs) {
    // Zero valence weights: the policy ignores the context, so chosen equals
    // rejected token-for-token under temperature-0 decoding.
    ToyPolicy policy = ToyPolicy::planted(clbm(), {.bias_points = 0.0, .reasoning_valence = 0.0});
    auto corpus = generate_synthetic_corpus(10, {clbm()}, 6);
    auto pairs = build_debias_pairs(policy, corpus, "experience", clbm(), {}, 2);
    for (const auto& pair : pairs) EXPECT_EQ(pair.chosen, pair.rejected);
}

TEST(PairBuilders, PlantedBiasRaisesRejectedScores) {
    ToyPolicy policy = ToyPolicy::planted(clbm(), {.bias_points = 1.0});
    auto corpus = generate_synthetic_corpus(100, {clbm()}, 9);
    auto pairs = build_debias_pairs(policy, corpus, "experience", clbm(), {}, 3);
    double gap_sum = 0;
    int positive_pairs = 0;
    for (const auto& pair : pairs) {
        if (pair.prompt_with_context.context->valence != Valence::positive) continue;
        auto chosen_score = parse_score(policy.detokenize(pair.chosen), clbm());
        auto rejected_score = parse_score(policy.detokenize(pair.rejected), clbm());
        ASSERT_TRUE(chosen_score && rejected_score);
        gap_sum += *rejected_score - *chosen_score;
        ++positive_pairs;
    }
    ASSERT_GT(positive_pairs, 20);
    EXPECT_GT(gap_sum / positive_pairs, 0.5);  // rejected exceeds chosen on average
}

TEST(PairBuilders, TrainingStatementsComeFromTheTrainingPool) {
    ToyPolicy policy = ToyPolicy::planted(clbm());
    auto corpus = generate_synthetic_corpus(40, {clbm()}, 10);
    auto pairs = build_debias_pairs(policy, corpus, "experience", clbm(), {}, 4);
    for (const auto& pair : pairs) {
        const auto& ctx = *pair.prompt_with_context.context;
        auto pool = statement_pool("experience", ctx.valence);
        EXPECT_NE(std::find(pool.begin(), pool.end(), ctx.statement), pool.end());
        // held-out guarantee: never the evaluation statement
        EXPECT_NE(ctx.statement, instantiate("experience", ctx.valence, clbm()).statement);
    }
}

TEST(PairBuilders, CounterfactualSharesDebiasConstruction) {
    ToyPolicy policy = ToyPolicy::planted(clbm());
    auto corpus = generate_synthetic_corpus(15, {clbm()}, 11);
    auto debias = build_debias_pairs(policy, corpus, "experience", clbm(), {}, 5);
    auto counterfactual = build_counterfactual_pairs(policy, corpus, "experience", clbm(), {}, 5);
    ASSERT_EQ(debias.size(), counterfactual.size());
    for (std::size_t i = 0; i < debias.size(); ++i) {
        EXPECT_EQ(debias[i].chosen, counterfactual[i].chosen);
        EXPECT_EQ(debias[i].rejected, counterfactual[i].rejected);
        EXPECT_EQ(debias[i].prompt_with_context.rendered,
                  counterfactual[i].prompt_with_context.rendered);
    }
}

TEST(PairBuilders, GroundTruthChosenIsCanonicalAndPolicyIndependent) {
    auto corpus = generate_synthetic_corpus(12, {clbm()}, 13);
    ToyPolicy policy_a = ToyPolicy::planted(clbm(), {.bias_points = 1.0});
    ToyPolicy policy_b = randomized_policy(77);
    auto pairs_a = build_groundtruth_pairs(policy_a, corpus, "experience", clbm(), {}, 6);
    auto pairs_b = build_groundtruth_pairs(policy_b, corpus, "experience", clbm(), {}, 6);
    ASSERT_EQ(pairs_a.size(), pairs_b.size());
    for (std::size_t i = 0; i < pairs_a.size(); ++i) {
        EXPECT_EQ(policy_a.detokenize(pairs_a[i].chosen),
                  "Rating: " + std::to_string(pairs_a[i].truth_score));
        EXPECT_EQ(pairs_a[i].chosen, pairs_b[i].chosen);  // byte-equal across policies
    }
}

// --- steps and training loop -----------------------------------------------------

TEST(DebiasStep, ZeroSftWeightMatchesCounterfactualUpdateVector) {
    ToyPolicy a = ToyPolicy::planted(clbm(), {.bias_points = 1.0});
    ToyPolicy b = a.clone_frozen();
    ToyPolicy ref = a.clone_frozen();
    auto corpus = generate_synthetic_corpus(8, {clbm()}, 14);
    auto pairs = build_debias_pairs(a, corpus, "experience", clbm(), {}, 7);

    TrainConfig debias_cfg;
    debias_cfg.w_dpo = 1.0;
    debias_cfg.w_sft = 0.0;
    debias_step(a, ref, pairs, debias_cfg);

    TrainConfig cf_cfg = config_for_method(TrainMethod::dpo_counterfactual, TrainConfig{});
    debias_step(b, ref, pairs, cf_cfg);

    for (std::size_t i = 0; i < a.parameters().size(); ++i)
        EXPECT_EQ(a.parameters()[i], b.parameters()[i]);
}

TEST(DebiasStep, ZeroDpoWeightMatchesSftUpdateVector) {
    ToyPolicy a = ToyPolicy::planted(clbm());
    ToyPolicy b = a.clone_frozen();
    ToyPolicy ref = a.clone_frozen();
    auto corpus = generate_synthetic_corpus(8, {clbm()}, 15);
    auto pairs = build_debias_pairs(a, corpus, "experience", clbm(), {}, 8);

    TrainConfig only_sft;
    only_sft.w_dpo = 0.0;
    only_sft.w_sft = 1.0;
    debias_step(a, ref, pairs, only_sft);

    TrainConfig sft_cfg = config_for_method(TrainMethod::sft, TrainConfig{});
    debias_step(b, ref, pairs, sft_cfg);
    for (std::size_t i = 0; i < a.parameters().size(); ++i)
        EXPECT_EQ(a.parameters()[i], b.parameters()[i]);
}

TEST(DebiasStep, BreakdownResumsToTotal) {
    ToyPolicy policy = ToyPolicy::planted(clbm(), {.bias_points = 1.0});
    ToyPolicy ref = policy.clone_frozen();
    auto corpus = generate_synthetic_corpus(16, {clbm()}, 16);
    auto pairs = build_debias_pairs(policy, corpus, "experience", clbm(), {}, 9);
    TrainConfig cfg;  // w_dpo 1.0, w_sft 0.1
    auto breakdown = debias_step(policy, ref, pairs, cfg);
    EXPECT_NEAR(breakdown.total, cfg.w_dpo * breakdown.dpo + cfg.w_sft * breakdown.sft, 1e-12);
}

TEST(DebiasStep, AnalyticUpdateMatchesFiniteDifferences) {
    ToyPolicy policy = randomized_policy(21, clbm(), 1.0);
    ToyPolicy ref = randomized_policy(22, clbm(), 1.0);
    auto corpus = generate_synthetic_corpus(4, {clbm()}, 17);
    auto pairs = build_debias_pairs(policy, corpus, "experience", clbm(), {}, 10);
    TrainConfig cfg;
    cfg.lr = 1e-3;

    auto loss_at = [&](ToyPolicy& p) {
        double dpo_acc = 0, sft_acc = 0;
        for (const auto& pair : pairs) {
            dpo_acc += dpo_loss(p, ref, pair, cfg.beta);
            sft_acc += sft_loss(p, pair.prompt_with_context, pair.truth_score);
        }
        double n = static_cast<double>(pairs.size());
        return cfg.w_dpo * dpo_acc / n + cfg.w_sft * sft_acc / n;
    };

    ToyPolicy probe = policy.clone_frozen();
    std::vector<double> fd_grad(probe.parameters().size());
    const double eps = 1e-6;
    for (std::size_t i = 0; i < probe.parameters().size(); ++i) {
        double saved = probe.parameters()[i];
        probe.parameters()[i] = saved + eps;
        double up = loss_at(probe);
        probe.parameters()[i] = saved - eps;
        double down = loss_at(probe);
        probe.parameters()[i] = saved;
        fd_grad[i] = (up - down) / (2 * eps);
    }

    ToyPolicy stepped = policy.clone_frozen();
    debias_step(stepped, ref, pairs, cfg);
    for (std::size_t i = 0; i < stepped.parameters().size(); ++i) {
        double analytic_update = policy.parameters()[i] - stepped.parameters()[i];
        double fd_update = cfg.lr * fd_grad[i];
        double denom = std::max(1e-8, std::fabs(analytic_update) + std::fabs(fd_update));
        EXPECT_LT(std::fabs(analytic_update - fd_update) / denom, 1e-5) << "coordinate " << i;
    }
}

TEST(Train, ZeroEpochsLeavesParametersUnchanged) {
    ToyPolicy policy = ToyPolicy::planted(clbm());
    ToyPolicy ref = policy.clone_frozen();
    auto corpus = generate_synthetic_corpus(5, {clbm()}, 18);
    auto pairs = build_debias_pairs(policy, corpus, "experience", clbm(), {}, 11);
    TrainConfig cfg;
    cfg.epochs = 0;
    auto before = std::vector<double>(policy.parameters().begin(), policy.parameters().end());
    auto log = train(policy, ref, pairs, cfg);
    EXPECT_TRUE(log.entries.empty());
    for (std::size_t i = 0; i < before.size(); ++i)
        EXPECT_EQ(policy.parameters()[i], before[i]);
}

TEST(Train, TwoEpochsRevisitEveryPairExactlyTwice) {
    ToyPolicy policy = ToyPolicy::planted(clbm());
    ToyPolicy ref = policy.clone_frozen();
    auto corpus = generate_synthetic_corpus(20, {clbm()}, 19);
    auto pairs = build_debias_pairs(policy, corpus, "experience", clbm(), {}, 12);
    TrainConfig cfg;
    cfg.batch_size = 6;
    cfg.epochs = 2;
    auto log = train(policy, ref, pairs, cfg);
    // ceil(20/6) = 4 steps per epoch, two epochs; every pair seen twice
    EXPECT_EQ(log.entries.size(), 8u);
    int total_visits = 0;
    for (std::size_t step = 0; step < log.entries.size(); ++step)
        total_visits += (step % 4 == 3) ? 2 : 6;  // last batch of each epoch holds 2
    EXPECT_EQ(total_visits, 2 * static_cast<int>(pairs.size()));
}

TEST(Train, LossTrendsDownOnToyTask) {
    ToyPolicy policy = ToyPolicy::planted(clbm(), {.bias_points = 1.0, .quality_slope = 0.55});
    ToyPolicy ref = policy.clone_frozen();
    auto corpus = generate_synthetic_corpus(240, {clbm()}, 20);
    auto pairs = build_debias_pairs(policy, corpus, "experience", clbm(), {}, 13);
    TrainConfig cfg;
    cfg.lr = 0.5;
    cfg.batch_size = 8;
    cfg.epochs = 2;
    auto log = train(policy, ref, pairs, cfg);
    ASSERT_GE(log.entries.size(), 20u);
    double first = 0, last = 0;
    for (int i = 0; i < 10; ++i) {
        first += log.entries[static_cast<std::size_t>(i)].total;
        last += log.entries[log.entries.size() - 10 + static_cast<std::size_t>(i)].total;
    }
    EXPECT_LT(last, first);
    EXPECT_FALSE(log.diverged);
}

TEST(Train, LogSerializesToJsonl) {
    ToyPolicy policy = ToyPolicy::planted(clbm());
    ToyPolicy ref = policy.clone_frozen();
    auto corpus = generate_synthetic_corpus(4, {clbm()}, 23);
    auto pairs = build_debias_pairs(policy, corpus, "experience", clbm(), {}, 14);
    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.epochs = 1;
    auto log = train(policy, ref, pairs, cfg);
    auto jsonl = log.to_jsonl();
    auto lines = split(trim(jsonl), '\n');
    EXPECT_EQ(lines.size(), log.entries.size());
    auto first = nlohmann::json::parse(lines[0]);
    EXPECT_EQ(first["step"], 0);
    EXPECT_TRUE(first.contains("total"));
    EXPECT_TRUE(first.contains("dpo"));
    EXPECT_TRUE(first.contains("sft"));
    EXPECT_TRUE(first.contains("grad_norm"));
}

TEST(TrainConfig, ValidationRejectsBadValues) {
    TrainConfig cfg;
    cfg.beta = 0.0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.w_sft = -0.1;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.batch_size = 0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = {};
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_DOUBLE_EQ(cfg.beta, 0.1);
    EXPECT_DOUBLE_EQ(cfg.w_sft, 0.1);
    EXPECT_EQ(cfg.batch_size, 32);
}

TEST(PairExport, JsonlCarriesPromptAndBothResponses) {
    ToyPolicy policy = ToyPolicy::planted(clbm());
    auto corpus = generate_synthetic_corpus(3, {clbm()}, 26);
    auto pairs = build_debias_pairs(policy, corpus, "experience", clbm(), {}, 15);
    auto jsonl = pairs_to_jsonl(policy, pairs);
    auto lines = split(trim(jsonl), '\n');
    ASSERT_EQ(lines.size(), 3u);
    auto obj = nlohmann::json::parse(lines[0]);
    EXPECT_TRUE(obj.contains("prompt"));
    EXPECT_TRUE(obj.contains("chosen"));
    EXPECT_TRUE(obj.contains("rejected"));
    EXPECT_TRUE(obj.contains("truth_score"));
}

}  // namespace
}  // namespace spurctx
