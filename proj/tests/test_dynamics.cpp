#include "test_util.hpp"

using namespace lwm;

namespace {

DynamicsModel micro_dynamics(std::uint64_t seed = 0, DynamicsConfig cfg = lwm_test::micro_dynamics_config()) {
    torch::manual_seed(seed);
    DynamicsModel m(cfg);
    m->eval();
    return m;
}

// Counting oracle: largest m with m <= N cos(pi s / 2S), then the reveal clamp.
std::int64_t schedule_oracle(std::int64_t N, std::int64_t s, std::int64_t S) {
    if (s == S) return 0;
    const long double bound = static_cast<long double>(N) * std::cos(std::acos(-1.0L) * s / (2.0L * S));
    std::int64_t m = 0;
    while (static_cast<long double>(m + 1) <= bound) ++m;
    return std::min(m, N - s);
}

}  // namespace

TEST(MaskSchedule, HandValuesForTenTokensFourSteps) {
    // 10 cos(pi/8) = 9.24, 10 cos(pi/4) = 7.07, 10 cos(3pi/8) = 3.83.
    EXPECT_EQ(mask_schedule(10, 1, 4), 9);
    EXPECT_EQ(mask_schedule(10, 2, 4), 7);
    EXPECT_EQ(mask_schedule(10, 3, 4), 3);
    EXPECT_EQ(mask_schedule(10, 4, 4), 0);
}

TEST(MaskSchedule, EdgeCases) {
    EXPECT_EQ(mask_schedule(1350, 25, 25), 0);
    EXPECT_EQ(mask_schedule(7, 1, 1), 0);
    EXPECT_EQ(mask_schedule(10, 2, 3), 5);  // 10 cos(pi/3) is exactly 5
    EXPECT_THROW(mask_schedule(10, 0, 4), InvalidArgument);
    EXPECT_THROW(mask_schedule(10, 5, 4), InvalidArgument);
    EXPECT_THROW(mask_schedule(0, 1, 4), InvalidArgument);
}

TEST(MaskSchedule, MatchesCountingOracleAndStrictlyDecreases) {
    Rng rng(12);
    int compared = 0;
    for (int i = 0; i < 50; ++i) {
        const auto N = 1 + static_cast<std::int64_t>(uniform_index(rng, 2000));
        const auto S = 1 + static_cast<std::int64_t>(uniform_index(rng, std::min<std::int64_t>(N, 40)));
        std::int64_t prev = N;
        for (std::int64_t s = 1; s <= S; ++s) {
            const auto m = mask_schedule(N, s, S);
            const long double x = static_cast<long double>(N) * std::cos(std::acos(-1.0L) * s / (2.0L * S));
            if (std::abs(x - std::round(x)) > 1e-6L) {  // skip exact products, where rounding decides
                EXPECT_EQ(m, schedule_oracle(N, s, S)) << N << " " << s << " " << S;
                ++compared;
            }
            EXPECT_LT(m, prev) << N << " " << s << " " << S;
            EXPECT_GE(m, 0);
            prev = m;
        }
    }
    EXPECT_GT(compared, 100);
}

TEST(MaskedCrossEntropy, UniformLogitsGiveLogK) {
    auto logits = torch::zeros({2, 3, 4, 1024}, torch::kFloat64);
    auto targets = torch::randint(0, 1024, {2, 3, 4}, torch::kInt64);
    auto mask = torch::rand({2, 3, 4}) > 0.5;
    mask[0][0][0] = true;
    EXPECT_NEAR(masked_cross_entropy(logits, targets, mask).item<double>(), std::log(1024.0), 1e-12);
}

TEST(MaskedCrossEntropy, ConfidentCorrectLogitsGiveZero) {
    auto targets = torch::tensor({{1, 3, 0}}, torch::kInt64);
    auto logits = torch::nn::functional::one_hot(targets, 5).to(torch::kFloat64) * 100.0;
    auto mask = torch::ones({1, 3}, torch::kBool);
    EXPECT_LT(masked_cross_entropy(logits, targets, mask).item<double>(), 1e-30);
}

TEST(MaskedCrossEntropy, IgnoresUnmaskedPositionsAndRejectsEmptyMask) {
    auto logits = torch::randn({1, 4, 6}, torch::kFloat64);
    auto targets = torch::randint(0, 6, {1, 4}, torch::kInt64);
    auto mask = torch::tensor({{true, false, true, false}});
    const double a = masked_cross_entropy(logits, targets, mask).item<double>();
    auto l2 = logits.clone();
    l2[0][1] += 50.0;
    l2[0][3] = torch::randn({6}, torch::kFloat64);
    EXPECT_EQ(masked_cross_entropy(l2, targets, mask).item<double>(), a);
    auto lp = torch::log_softmax(logits, -1);
    const double expected = -(lp[0][0][targets[0][0].item<std::int64_t>()].item<double>() +
                              lp[0][2][targets[0][2].item<std::int64_t>()].item<double>()) / 2.0;
    EXPECT_NEAR(a, expected, 1e-12);
    EXPECT_THROW(masked_cross_entropy(logits, targets, torch::zeros({1, 4}, torch::kBool)), InvalidArgument);
}

TEST(TrainingMask, CleanPrefixThenEquallyMaskedSuffix) {
    Rng rng(3);
    auto tokens = torch::randint(0, 8, {16, 5, 6}, torch::kInt64);
    std::vector<int> first_seen(5, 0);
    for (int trial = 0; trial < 20; ++trial) {
        auto m = sample_training_mask(tokens, 8, rng);
        EXPECT_FALSE(m.mask.select(1, 0).any().item<bool>());
        auto per_frame = m.mask.sum(2);  // [B, T]
        for (std::int64_t b = 0; b < 16; ++b) {
            std::int64_t first = 1;
            while (first < 5 && per_frame[b][first].item<std::int64_t>() == 0) ++first;
            ASSERT_LT(first, 5);
            ++first_seen[static_cast<std::size_t>(first)];
            const auto c = per_frame[b][first].item<std::int64_t>();
            for (std::int64_t t = first; t < 5; ++t) EXPECT_EQ(per_frame[b][t].item<std::int64_t>(), c);
        }
        EXPECT_TRUE(torch::equal(torch::where(m.mask, tokens, m.tokens), tokens));
        EXPECT_TRUE((m.tokens.masked_select(m.mask) == 8).all().item<bool>());
    }
    for (int t = 1; t < 5; ++t) EXPECT_GT(first_seen[static_cast<std::size_t>(t)], 40) << t;
}

TEST(TrainingMask, SingleTokenFramesAreFullyMasked) {
    Rng rng(4);
    auto tokens = torch::randint(0, 8, {3, 2, 1}, torch::kInt64);
    auto m = sample_training_mask(tokens, 8, rng);
    EXPECT_TRUE(m.mask.select(1, 1).all().item<bool>());
}

TEST(DynamicsLoss, InitialCrossEntropyIsNearLogK) {
    auto cfg = DynamicsConfig::desk();
    auto m = micro_dynamics(5, cfg);
    Rng rng(5);
    auto tokens = torch::randint(0, cfg.num_codes, {4, 6, cfg.tokens_per_frame()}, torch::kInt64);
    auto actions = torch::randint(0, cfg.num_actions, {4, 5}, torch::kInt64);
    const double ce = dynamics_batch_loss(m, tokens, actions, rng).item<double>();
    EXPECT_NEAR(ce, std::log(static_cast<double>(cfg.num_codes)), 0.1 * std::log(static_cast<double>(cfg.num_codes)));
    EXPECT_THROW(dynamics_batch_loss(m, tokens, actions.slice(1, 0, 4), rng), InvalidArgument);
}

TEST(DynamicsForward, CausalInFramesAndActions) {
    auto m = micro_dynamics(6);
    auto tokens = torch::randint(0, 9, {2, 4, 6}, torch::kInt64);
    auto actions = torch::randint(0, 12, {2, 3}, torch::kInt64);
    auto y = m->forward(tokens, actions);
    EXPECT_EQ(y.sizes(), (std::vector<std::int64_t>{2, 4, 6, 8}));
    for (std::int64_t t = 1; t < 4; ++t) {
        auto tk = tokens.clone();
        auto ac = actions.clone();
        tk.select(1, t).copy_((tk.select(1, t) + 3) % 9);
        ac.select(1, t - 1).copy_((ac.select(1, t - 1) + 5) % 12);  // the action that produces frame t
        auto y2 = m->forward(tk, ac);
        EXPECT_LE((y.slice(1, 0, t) - y2.slice(1, 0, t)).abs().max().item<double>(), 1e-6) << "t=" << t;
        EXPECT_GT((y.slice(1, t, t + 1) - y2.slice(1, t, t + 1)).abs().max().item<double>(), 0.0);
    }
}

TEST(DynamicsForward, RejectsBadInputs) {
    auto m = micro_dynamics();
    auto tokens = torch::zeros({1, 3, 6}, torch::kInt64);
    EXPECT_THROW(m->forward(tokens, torch::zeros({1, 3}, torch::kInt64)), InvalidArgument);
    EXPECT_THROW(m->forward(tokens, torch::full({1, 2}, 12, torch::kInt64)), InvalidArgument);
    EXPECT_THROW(m->forward(torch::full({1, 3, 6}, 9, torch::kInt64), torch::zeros({1, 2}, torch::kInt64)),
                 InvalidArgument);
    EXPECT_THROW(m->forward(torch::zeros({1, 3, 5}, torch::kInt64), torch::zeros({1, 2}, torch::kInt64)),
                 InvalidArgument);
}

TEST(IterativeDecode, OutputHasNoMaskAndValidShape) {
    auto m = micro_dynamics(7);
    Rng rng(7);
    TokenGrid hist{torch::randint(0, 8, {2, 2, 3}, torch::kInt64)};
    auto next = iterative_decode(hist, {3, 9}, m, rng);
    EXPECT_EQ(next.tokens.sizes(), (std::vector<std::int64_t>{1, 2, 3}));
    EXPECT_GE(next.tokens.min().item<std::int64_t>(), 0);
    EXPECT_LT(next.tokens.max().item<std::int64_t>(), 8);
    EXPECT_THROW(iterative_decode(hist, {3}, m, rng), InvalidArgument);
    EXPECT_THROW(iterative_decode(hist, {3, 12}, m, rng), InvalidArgument);
}

TEST(IterativeDecode, GreedyDecodingIgnoresSeed) {
    auto cfg = lwm_test::micro_dynamics_config();
    cfg.temperature = 0.0;
    auto m = micro_dynamics(8, cfg);
    TokenGrid hist{torch::randint(0, 8, {3, 2, 3}, torch::kInt64)};
    Rng a(1), b(999);
    EXPECT_TRUE(torch::equal(iterative_decode(hist, {1, 2, 3}, m, a).tokens, iterative_decode(hist, {1, 2, 3}, m, b).tokens));
}

TEST(IterativeDecode, TwentyFiveStepsMeansTwentyFiveForwardPasses) {
    auto cfg = lwm_test::micro_dynamics_config();
    cfg.grid_height = 5;
    cfg.grid_width = 6;
    cfg.decode_steps = 25;
    auto m = micro_dynamics(9, cfg);
    Rng rng(9);
    TokenGrid hist{torch::randint(0, 8, {1, 5, 6}, torch::kInt64)};
    m->forward_calls.store(0);
    std::vector<std::int64_t> counts;
    iterative_decode(hist, {4}, m, rng, &counts);
    EXPECT_EQ(m->forward_calls.load(), 25);
    ASSERT_EQ(counts.size(), 25u);
    std::int64_t prev = 30;
    for (std::size_t s = 0; s < counts.size(); ++s) {
        EXPECT_LT(counts[s], prev);
        EXPECT_EQ(counts[s], mask_schedule(30, static_cast<std::int64_t>(s) + 1, 25));
        prev = counts[s];
    }
    EXPECT_EQ(counts.back(), 0);
}

TEST(IterativeDecode, LongHistoryUsesSlidingContext) {
    auto m = micro_dynamics(10);  // max_frames = 4 -> context of 3
    auto tokens = torch::randint(0, 8, {6, 2, 3}, torch::kInt64);
    std::vector<int> acts{0, 1, 2, 3, 4, 5};
    Rng a(2), b(2);
    auto full = iterative_decode(TokenGrid{tokens}, acts, m, a);
    auto tail = iterative_decode(TokenGrid{tokens.slice(0, 3, 6)}, {3, 4, 5}, m, b);
    EXPECT_TRUE(torch::equal(full.tokens, tail.tokens));
}

TEST(IterativeDecode, SingleTokenDecodeSeesTrainingInputs) {
    // One token per frame and one decode step: the decoder's only forward pass
    // is on [history, MASK], which is exactly what training builds for T = 2.
    auto cfg = lwm_test::micro_dynamics_config();
    cfg.grid_height = cfg.grid_width = 1;
    cfg.decode_steps = 1;
    cfg.temperature = 0.0;
    auto m = micro_dynamics(11, cfg);
    for (std::int64_t tok = 0; tok < 8; ++tok) {
        const int action = static_cast<int>(tok) % 12;
        auto clip = torch::tensor({tok, (tok + 3) % 8}, torch::kInt64).view({1, 2, 1});
        Rng rng(tok);
        auto masked = sample_training_mask(clip, cfg.mask_id(), rng);
        EXPECT_TRUE(torch::equal(masked.tokens, torch::tensor({tok, cfg.mask_id()}, torch::kInt64).view({1, 2, 1})));
        auto logits = m->forward(masked.tokens, torch::tensor({{action}}, torch::kInt64));
        const auto expected = logits[0][1][0].argmax().item<std::int64_t>();
        Rng dec(0);
        auto out = iterative_decode(TokenGrid{torch::tensor({tok}, torch::kInt64).view({1, 1, 1})}, {action}, m, dec);
        EXPECT_EQ(out.tokens.item<std::int64_t>(), expected);
    }
}

TEST(Rollout, FrameCountsAndSeedDeterminism) {
    torch::manual_seed(12);
    auto tcfg = lwm_test::micro_tokenizer_config();
    tcfg.max_frames = 8;
    VideoTokenizer tok(tcfg);
    Rng init(0);
    tok->codebook()->initialize_from(tok->encode_features(torch::rand({1, 4, 8, 8, 3})).detach(), init);
    tok->eval();
    auto dcfg = lwm_test::micro_dynamics_config();
    dcfg.max_frames = 8;
    dcfg.grid_height = dcfg.grid_width = 2;  // 8x8 frames in 4x4 patches
    auto dyn = micro_dynamics(13, dcfg);
    auto prompt = lwm_test::random_clip(1, 8, 8, 14);
    ActionSequence acts{{0, 1, 2, 3, 4, 5}};
    Rng a(5), b(5);
    auto r1 = rollout(prompt, acts, tok, dyn, a);
    auto r2 = rollout(prompt, acts, tok, dyn, b);
    EXPECT_EQ(r1.num_frames(), 7);
    EXPECT_TRUE(torch::equal(r1.frames, r2.frames));
    EXPECT_TRUE(torch::equal(r1.frames[0], prompt.frames[0]));
    EXPECT_GE(r1.frames.min().item<double>(), 0.0);
    EXPECT_LE(r1.frames.max().item<double>(), 1.0);

    auto prompt4 = lwm_test::random_clip(4, 8, 8, 15);
    auto r4 = rollout(prompt4, ActionSequence{{7, 8, 9}}, tok, dyn, a, ActionSequence{{1, 2, 3}});
    EXPECT_EQ(r4.num_frames(), 7);
    EXPECT_TRUE(torch::equal(r4.frames.slice(0, 0, 4), prompt4.frames));
    EXPECT_THROW(rollout(prompt4, ActionSequence{{7}}, tok, dyn, a), InvalidArgument);
}
