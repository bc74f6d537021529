#include "test_util.hpp"

using namespace lwm;

TEST(Psnr, HandComputedValue) {
    auto a = torch::zeros({2, 4, 4, 3});
    auto b = torch::full({2, 4, 4, 3}, 0.5);
    // MSE 0.25 -> 10 log10(4).
    EXPECT_NEAR(psnr(a, b), 6.0205999132796239, 1e-9);
    EXPECT_NEAR(psnr(a * 255.0, b * 255.0, 255.0), 6.0205999132796239, 1e-9);
}

TEST(Psnr, IdenticalIsInfiniteAndSymmetric) {
    auto a = torch::rand({3, 8, 8, 3});
    EXPECT_TRUE(std::isinf(psnr(a, a)));
    auto b = torch::rand({3, 8, 8, 3});
    EXPECT_EQ(psnr(a, b), psnr(b, a));
    EXPECT_THROW(psnr(a, b.slice(0, 0, 2)), InvalidArgument);
}

TEST(Psnr, DecreasesWithNoise) {
    torch::manual_seed(0);
    auto a = torch::rand({2, 16, 16, 3});
    auto n = torch::randn({2, 16, 16, 3});
    double prev = kInfinitePsnr;
    for (double s : {0.01, 0.03, 0.1, 0.3}) {
        const double p = psnr(a, a + s * n);
        EXPECT_LT(p, prev);
        prev = p;
    }
}

TEST(Ssim, SelfSimilarityIsExactlyOne) {
    torch::manual_seed(1);
    auto a = torch::rand({2, 16, 16, 3});
    EXPECT_EQ(ssim(a, a), 1.0);
}

TEST(Ssim, ConstantImagesFollowLuminanceTerm) {
    auto black = torch::zeros({16, 16, 3});
    auto white = torch::ones({16, 16, 3});
    const double c1 = 0.01 * 0.01;
    EXPECT_NEAR(ssim(black, white), c1 / (1.0 + c1), 1e-12);
}

TEST(Ssim, SymmetricAndBounded) {
    torch::manual_seed(2);
    auto a = torch::rand({16, 16, 3});
    auto b = (a + 0.2 * torch::randn({16, 16, 3})).clamp(0, 1);
    const double s = ssim(a, b);
    EXPECT_NEAR(s, ssim(b, a), 1e-12);
    EXPECT_LT(s, 1.0);
    EXPECT_GT(s, -1.0);
}

TEST(DeltaPsnr, ReportedExampleRoundsToTwoDecimals) {
    const double d = delta_psnr(17.67, 15.86);
    EXPECT_LT(std::abs(d - 1.81), 1e-12);
    EXPECT_EQ(std::round(d * 100.0) / 100.0, 1.81);
    EXPECT_EQ(delta_psnr(15.86, 17.67), -d);
}

TEST(DeltaPsnr, ClipSetFormMatchesScalarForm) {
    torch::manual_seed(3);
    std::vector<torch::Tensor> ref, gt, rnd;
    for (int i = 0; i < 3; ++i) {
        ref.push_back(torch::rand({6, 8, 8, 3}));
        gt.push_back((ref.back() + 0.05 * torch::randn({6, 8, 8, 3})).clamp(0, 1));
        rnd.push_back(torch::rand({6, 8, 8, 3}));
    }
    for (std::int64_t h : {2, 4, 6}) {
        double sg = 0, sr = 0;
        for (int i = 0; i < 3; ++i) {
            sg += psnr(gt[i].slice(0, 0, h), ref[i].slice(0, 0, h)) / 3.0;
            sr += psnr(rnd[i].slice(0, 0, h), ref[i].slice(0, 0, h)) / 3.0;
        }
        EXPECT_NEAR(delta_psnr(gt, rnd, ref, h), sg - sr, 1e-9);
        EXPECT_GT(delta_psnr(gt, rnd, ref, h), 0.0);
    }
    EXPECT_THROW(mean_psnr_at(gt, ref, 7), InvalidArgument);
}

TEST(Frechet, OneDimensionalUnitShift) {
    GaussianStats a{torch::tensor({0.0}, torch::kFloat64), torch::tensor({{1.0}}, torch::kFloat64)};
    GaussianStats b{torch::tensor({1.0}, torch::kFloat64), torch::tensor({{1.0}}, torch::kFloat64)};
    EXPECT_NEAR(frechet_distance(a, b), 1.0, 1e-9);
    // Equal means, variances 1 and 4: 1 + 4 - 2 * 2.
    GaussianStats c{torch::tensor({0.0}, torch::kFloat64), torch::tensor({{4.0}}, torch::kFloat64)};
    EXPECT_NEAR(frechet_distance(a, c), 1.0, 1e-9);
}

TEST(Frechet, EqualCovarianceGivesSquaredMeanDistance) {
    torch::manual_seed(4);
    auto m = torch::randn({5, 5}, torch::kFloat64);
    auto cov = torch::matmul(m, m.t()) + torch::eye(5, torch::kFloat64);
    auto mu1 = torch::randn({5}, torch::kFloat64), mu2 = torch::randn({5}, torch::kFloat64);
    const double d = frechet_distance({mu1, cov}, {mu2, cov});
    EXPECT_NEAR(d, (mu1 - mu2).pow(2).sum().item<double>(), 1e-8);
}

TEST(Frechet, NonNegativeAndSymmetric) {
    torch::manual_seed(5);
    auto x = torch::randn({40, 4}, torch::kFloat64);
    auto y = torch::randn({40, 4}, torch::kFloat64) * 1.5 + 0.3;
    auto a = fit_gaussian(x), b = fit_gaussian(y);
    const double d = frechet_distance(a, b);
    EXPECT_GE(d, 0.0);
    EXPECT_NEAR(d, frechet_distance(b, a), 1e-8);
    EXPECT_NEAR(frechet_distance(a, a), 0.0, 1e-9);
}

TEST(FvdEval, IdenticalSetsScoreZero) {
    torch::manual_seed(6);
    std::vector<torch::Tensor> set;
    for (int i = 0; i < 5; ++i) set.push_back(torch::rand({10, 8, 12, 3}));
    DownsampleFlattenExtractor ex(2, 3);
    EXPECT_LE(std::abs(fvd_eval(set, set, ex)), 1e-6);
    std::vector<torch::Tensor> shifted;
    for (auto& c : set) shifted.push_back((c + 0.3).clamp(0, 1));
    EXPECT_GT(fvd_eval(set, shifted, ex), 1e-3);
}

TEST(FvdEval, RequiresTenFrameClipsAndTwoClips) {
    DownsampleFlattenExtractor ex(2, 3);
    std::vector<torch::Tensor> short_clips{torch::rand({9, 8, 12, 3}), torch::rand({9, 8, 12, 3})};
    EXPECT_THROW(fvd_eval(short_clips, short_clips, ex), InvalidArgument);
    std::vector<torch::Tensor> one{torch::rand({10, 8, 12, 3})};
    EXPECT_THROW(fvd_eval(one, one, ex), InvalidArgument);
    EXPECT_EQ(ex.name(), "downsample-flatten-2x3");
}

// Reference values frozen from tests/oracles/ami_oracle.py.
TEST(AdjustedMutualInfo, MatchesFrozenReferenceValues) {
    EXPECT_NEAR(adjusted_mutual_info({0, 0, 1, 1, 2, 2}, {5, 5, 3, 3, 9, 9}), 1.0, 1e-10);
    EXPECT_NEAR(adjusted_mutual_info({0, 0, 0, 1, 1, 1, 2, 2, 2}, {0, 0, 1, 1, 1, 2, 2, 2, 0}), 0.16502260912888539,
                1e-10);
    EXPECT_NEAR(adjusted_mutual_info({0, 1, 2, 3, 4, 0, 1, 2, 3, 4}, {0, 0, 1, 1, 2, 0, 0, 1, 1, 2}), 0.63999999999999968,
                1e-10);
    EXPECT_NEAR(adjusted_mutual_info({0, 0, 0, 0, 1, 1, 1, 1}, {0, 1, 2, 3, 4, 5, 6, 7}), 9.6102795114447421e-16, 1e-10);
    EXPECT_NEAR(adjusted_mutual_info({0, 1, 2, 3, 4, 0, 1, 2, 3, 4, 0, 1, 2, 3, 4, 2, 1},
                                     {7, 3, 3, 1, 0, 7, 3, 5, 1, 0, 7, 2, 5, 1, 0, 5, 11}),
                0.73318990447905619, 1e-10);
}

TEST(AdjustedMutualInfo, SymmetricAndRejectsMismatchedLengths) {
    std::vector<int> a{0, 1, 1, 2, 2, 2, 0, 1}, b{1, 1, 0, 0, 2, 2, 1, 0};
    EXPECT_NEAR(adjusted_mutual_info(a, b), adjusted_mutual_info(b, a), 1e-12);
    EXPECT_THROW(adjusted_mutual_info({0, 1}, {0}), InvalidArgument);
}

TEST(EvalReportFormat, GridHasBothProtocolsAndAllHorizons) {
    EvalReport r;
    for (std::int64_t p : {1, 4}) {
        ProtocolScores s;
        s.prompt_frames = p;
        for (std::int64_t h : {2, 4, 6}) {
            s.psnr_gt[h] = 20.0 + h;
            s.psnr_random[h] = 18.0 + h;
            s.ssim_gt[h] = 0.5;
            s.ssim_random[h] = 0.4;
            s.delta_psnr[h] = 2.0;
        }
        s.fvd_gt = 1.0;
        s.fvd_random = 2.0;
        r.protocols.push_back(s);
    }
    r.extractor = "downsample-flatten-4x6";
    const auto table = r.to_table();
    EXPECT_NE(table.find("Prompt frames: 1"), std::string::npos);
    EXPECT_NE(table.find("Prompt frames: 4"), std::string::npos);
    EXPECT_NE(table.find("delta PSNR"), std::string::npos);
    auto j = r.to_json();
    ASSERT_EQ(j["protocols"].size(), 2u);
    EXPECT_EQ(j["protocols"][1]["prompt_frames"], 4);
    EXPECT_DOUBLE_EQ(j["protocols"][0]["delta_psnr"]["6"].get<double>(), 2.0);
    EXPECT_EQ(j["protocol"]["total_frames"], 10);
    const auto kv = r.to_kv_text();
    EXPECT_NE(kv.find("prompt4.psnr_gt.h6=26\n"), std::string::npos);
    EXPECT_NE(kv.find("protocol.extractor=downsample-flatten-4x6\n"), std::string::npos);
}
