#include "test_util.hpp"

using namespace lwm;

namespace {

Codebook codebook_with(const torch::Tensor& codes, double decay = 0.99, std::int64_t reseed = 256) {
    CodebookConfig cfg;
    cfg.num_codes = codes.size(0);
    cfg.dim = codes.size(1);
    cfg.decay = decay;
    cfg.reseed_horizon = reseed;
    Codebook cb(cfg);
    torch::NoGradGuard g;
    cb->codes.copy_(codes);
    cb->ema_sums.copy_(codes);
    cb->ema_counts.fill_(1.0);
    cb->to(codes.scalar_type());
    return cb;
}

}  // namespace

TEST(Quantize, PicksNearestCode) {
    auto cb = codebook_with(torch::tensor({{0.0f, 0.0f}, {1.0f, 1.0f}}));
    auto r = quantize(torch::tensor({{0.9f, 1.2f}}), cb);
    // Hand-computed squared distances: 0.81 + 1.44 = 2.25 and 0.01 + 0.04 = 0.05.
    EXPECT_EQ(r.indices[0].item<std::int64_t>(), 1);
}

TEST(Quantize, ExactCodeMapsToItself) {
    torch::manual_seed(0);
    auto codes = torch::randn({7, 3});
    auto cb = codebook_with(codes);
    auto r = quantize(codes.clone(), cb);
    for (std::int64_t k = 0; k < 7; ++k) EXPECT_EQ(r.indices[k].item<std::int64_t>(), k);
    EXPECT_TRUE(torch::equal(r.quantized, codes));
}

TEST(Quantize, TiesGoToLowestIndex) {
    auto cb = codebook_with(torch::tensor({{1.0f, 0.0f}, {5.0f, 5.0f}, {9.0f, 9.0f}, {-1.0f, 0.0f}}));
    auto r = quantize(torch::tensor({{0.0f, 0.0f}}), cb);
    EXPECT_EQ(r.indices[0].item<std::int64_t>(), 0);
}

TEST(Quantize, OutputsAreBitwiseCodebookRows) {
    torch::manual_seed(1);
    auto cb = codebook_with(torch::randn({16, 4}));
    auto h = torch::randn({3, 5, 4});
    auto r = quantize(h, cb);
    EXPECT_EQ(r.indices.sizes(), (std::vector<std::int64_t>{3, 5}));
    EXPECT_TRUE(torch::equal(r.quantized, cb->codes.index_select(0, r.indices.reshape({-1})).view({3, 5, 4})));
    // h + (q - h) with q - h detached: equal to q up to one rounding step.
    EXPECT_TRUE(torch::allclose(r.ste_output, r.quantized, 0.0, 1e-6));
    EXPECT_GE(r.indices.min().item<std::int64_t>(), 0);
    EXPECT_LT(r.indices.max().item<std::int64_t>(), 16);
}

TEST(Quantize, DimensionMismatchIsRejected) {
    auto cb = codebook_with(torch::zeros({4, 3}));
    EXPECT_THROW(quantize(torch::zeros({2, 4}), cb), InvalidArgument);
}

TEST(Quantize, StraightThroughGradientMatchesSurrogate) {
    torch::manual_seed(2);
    auto cb = codebook_with(torch::randn({8, 3}, torch::kFloat64));
    auto h = torch::randn({5, 3}, torch::kFloat64).requires_grad_(true);
    auto w = torch::randn({5, 3}, torch::kFloat64);
    auto g = [&](const torch::Tensor& y) { return (y.sin() * w).sum() + y.pow(2).sum(); };
    torch::Tensor offset;
    {
        torch::NoGradGuard guard;
        offset = quantize(h, cb).quantized - h;
    }
    auto loss = [&] { return g(quantize(h, cb).ste_output); };
    auto surrogate = [&] { return g(h + offset); };
    EXPECT_LT(lwm_test::gradient_rel_error(loss, {h}, surrogate), 1e-3);
    // The analytic gradient equals g' at the quantized point.
    h.mutable_grad().zero_();
    loss().backward();
    auto q = quantize(h.detach(), cb).quantized;
    EXPECT_TRUE(torch::allclose(h.grad(), q.cos() * w + 2 * q, 1e-12, 1e-12));
}

TEST(CommitmentLoss, HandComputedValues) {
    auto h = torch::tensor({{0.0, 0.0}}, torch::kFloat64);
    auto z = torch::tensor({{1.0, 1.0}}, torch::kFloat64);
    EXPECT_DOUBLE_EQ(commitment_loss(h, h, 1.0).item<double>(), 0.0);
    EXPECT_DOUBLE_EQ(commitment_loss(h, z, 1.0).item<double>(), 2.0);
    EXPECT_DOUBLE_EQ(commitment_loss(h, z, 0.25).item<double>(), 0.5);
    EXPECT_THROW(commitment_loss(h, torch::zeros({2, 2}, torch::kFloat64), 1.0), InvalidArgument);
}

TEST(CommitmentLoss, NoGradientReachesQuantized) {
    torch::manual_seed(3);
    auto h = torch::randn({4, 3}, torch::kFloat64).requires_grad_(true);
    auto z = torch::randn({4, 3}, torch::kFloat64).requires_grad_(true);
    commitment_loss(h, z, 0.25).backward();
    EXPECT_TRUE(!z.grad().defined() || z.grad().abs().max().item<double>() == 0.0);
    EXPECT_GT(h.grad().abs().max().item<double>(), 0.0);
    auto loss = [&] { return commitment_loss(h, z, 0.25); };
    EXPECT_LT(lwm_test::gradient_rel_error(loss, {h}), 1e-3);
}

TEST(EmaUpdate, HandEvaluatedRecurrence) {
    auto cb = codebook_with(torch::tensor({{0.0, 0.0}}, torch::kFloat64));
    {
        torch::NoGradGuard g;
        cb->ema_sums.zero_();
    }
    Rng rng(0);
    ema_update(cb, torch::tensor({{1.0, 0.0}}, torch::kFloat64), torch::tensor({0}, torch::kInt64), rng);
    EXPECT_NEAR(cb->ema_counts[0].item<double>(), 1.0, 1e-15);
    EXPECT_NEAR(cb->ema_sums[0][0].item<double>(), 0.01, 1e-15);
    EXPECT_NEAR(cb->codes[0][0].item<double>(), 0.01, 1e-15);
    EXPECT_EQ(cb->codes[0][1].item<double>(), 0.0);
}

TEST(EmaUpdate, UnassignedCodeDecaysStatisticsButKeepsValue) {
    auto cb = codebook_with(torch::tensor({{0.0, 0.0}, {2.0, 3.0}}, torch::kFloat64));
    {
        torch::NoGradGuard g;
        cb->ema_counts[1] = 4.0;
        cb->ema_sums[1] = cb->codes[1] * 4.0;
    }
    const auto code = cb->codes[1].clone();
    Rng rng(0);
    ema_update(cb, torch::tensor({{0.1, 0.2}}, torch::kFloat64), torch::tensor({0}, torch::kInt64), rng);
    EXPECT_NEAR(cb->ema_counts[1].item<double>(), 0.99 * 4.0, 1e-14);
    EXPECT_TRUE(torch::allclose(cb->ema_sums[1], code * 4.0 * 0.99, 0.0, 1e-14));
    EXPECT_TRUE(torch::equal(cb->codes[1], code));
    EXPECT_EQ(cb->unused_updates[1].item<std::int64_t>(), 1);
}

TEST(EmaUpdate, TwoIdenticalUpdatesEqualOneAtSquaredDecay) {
    torch::manual_seed(4);
    auto codes = torch::randn({3, 2}, torch::kFloat64);
    auto h = torch::randn({10, 2}, torch::kFloat64);
    auto twice = codebook_with(codes, 0.9);
    auto once = codebook_with(codes, 0.81);
    auto idx = quantize(h, twice).indices;
    Rng rng(0);
    ema_update(twice, h, idx, rng);
    ema_update(twice, h, idx, rng);
    ema_update(once, h, idx, rng);
    EXPECT_TRUE(torch::allclose(twice->ema_counts, once->ema_counts, 0.0, 1e-12));
    EXPECT_TRUE(torch::allclose(twice->ema_sums, once->ema_sums, 0.0, 1e-12));
}

TEST(EmaUpdate, ConvergesToAssignmentMeansOnTwoCodeToy) {
    torch::manual_seed(5);
    auto a = torch::randn({20, 2}, torch::kFloat64) * 0.1 + torch::tensor({-2.0, 0.0}, torch::kFloat64);
    auto b = torch::randn({30, 2}, torch::kFloat64) * 0.1 + torch::tensor({3.0, 1.0}, torch::kFloat64);
    auto h = torch::cat({a, b});
    auto idx = torch::cat({torch::zeros({20}, torch::kInt64), torch::ones({30}, torch::kInt64)});
    auto cb = codebook_with(torch::tensor({{0.0, 0.0}, {1.0, 1.0}}, torch::kFloat64));
    Rng rng(0);
    for (int i = 0; i < 2000; ++i) ema_update(cb, h, idx, rng);
    EXPECT_LE((cb->codes[0] - a.mean(0)).abs().max().item<double>(), 1e-4);
    EXPECT_LE((cb->codes[1] - b.mean(0)).abs().max().item<double>(), 1e-4);
}

TEST(EmaUpdate, IdleCodesAreReseededAfterHorizon) {
    auto cb = codebook_with(torch::tensor({{0.0, 0.0}, {100.0, 100.0}}, torch::kFloat64), 0.99, 3);
    auto h = torch::tensor({{0.5, 0.5}, {0.7, 0.1}}, torch::kFloat64);
    auto idx = torch::zeros({2}, torch::kInt64);
    Rng rng(0);
    ema_update(cb, h, idx, rng);
    ema_update(cb, h, idx, rng);
    EXPECT_EQ(cb->codes[1][0].item<double>(), 100.0);
    ema_update(cb, h, idx, rng);
    auto c = cb->codes[1];
    EXPECT_TRUE(torch::equal(c, h[0]) || torch::equal(c, h[1]));
    EXPECT_EQ(cb->unused_updates[1].item<std::int64_t>(), 0);
}

TEST(Codebook, InitializesFromDistinctBatchRows) {
    CodebookConfig cfg;
    cfg.num_codes = 6;
    cfg.dim = 2;
    Codebook cb(cfg);
    EXPECT_FALSE(cb->is_initialized());
    auto batch = torch::arange(20, torch::kFloat32).view({10, 2});
    Rng rng(1);
    cb->initialize_from(batch, rng);
    EXPECT_TRUE(cb->is_initialized());
    std::set<float> firsts;
    for (std::int64_t k = 0; k < 6; ++k) {
        const float v = cb->codes[k][0].item<float>();
        EXPECT_EQ(std::fmod(v, 2.0f), 0.0f);
        EXPECT_EQ(cb->codes[k][1].item<float>(), v + 1.0f);
        firsts.insert(v);
    }
    EXPECT_EQ(firsts.size(), 6u);
}

TEST(Perplexity, UniformUsageEqualsCodeCount) {
    auto idx = torch::arange(8, torch::kInt64).repeat({5});
    EXPECT_NEAR(codebook_perplexity(idx, 16), 8.0, 1e-9);
    EXPECT_NEAR(codebook_perplexity(torch::zeros({10}, torch::kInt64), 16), 1.0, 1e-12);
}
