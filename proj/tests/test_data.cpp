#include "test_util.hpp"

using namespace lwm;

namespace {

// Intensity-weighted centroid (row, col) of the pixels painted with `color`.
std::pair<double, double> sprite_centroid(const torch::Tensor& frame, const std::array<float, 3>& color) {
    auto c = torch::tensor({color[0], color[1], color[2]});
    auto mask = (frame == c).all(-1).to(torch::kFloat64);
    const double total = mask.sum().item<double>();
    EXPECT_GT(total, 0.0);
    auto rows = torch::arange(frame.size(0), torch::kFloat64).unsqueeze(1);
    auto cols = torch::arange(frame.size(1), torch::kFloat64).unsqueeze(0);
    return {(mask * rows).sum().item<double>() / total, (mask * cols).sum().item<double>() / total};
}

}  // namespace

TEST(SyntheticClip, SameConfigGivesBitwiseIdenticalClips) {
    SyntheticSceneConfig cfg;
    cfg.seed = 42;
    auto [a, la] = generate_synthetic_clip(cfg);
    auto [b, lb] = generate_synthetic_clip(cfg);
    EXPECT_TRUE(torch::equal(a.frames, b.frames));
    EXPECT_EQ(la.labels, lb.labels);
    cfg.seed = 43;
    EXPECT_FALSE(torch::equal(a.frames, generate_synthetic_clip(cfg).first.frames));
}

TEST(SyntheticClip, EightFramesHaveSevenLabels) {
    SyntheticSceneConfig cfg;
    cfg.num_frames = 8;
    auto [clip, labels] = generate_synthetic_clip(cfg);
    EXPECT_EQ(clip.frames.sizes(), (std::vector<std::int64_t>{8, 32, 48, 3}));
    EXPECT_EQ(labels.labels.size(), 7u);
    for (int l : labels.labels) EXPECT_TRUE(l >= 0 && l < 5);
    clip.validate();
}

TEST(SyntheticClip, RightActionMovesCentroidBySpeed) {
    SyntheticSceneConfig cfg;
    cfg.action_set = {"right"};
    cfg.sprite_speed = 2;
    cfg.frame_width = 96;
    int checked = 0;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        cfg.seed = seed;
        auto [clip, labels] = generate_synthetic_clip(cfg);
        for (std::int64_t t = 0; t + 1 < cfg.num_frames; ++t) {
            auto [r0, c0] = sprite_centroid(clip.frames[t], sprite_color(0));
            auto [r1, c1] = sprite_centroid(clip.frames[t + 1], sprite_color(0));
            const double right_edge = c1 + (cfg.sprite_size - 1) / 2.0;
            if (right_edge >= cfg.frame_width - 1) continue;  // clamped at the border
            EXPECT_NEAR(c1 - c0, 2.0, 1e-9);
            EXPECT_NEAR(r1 - r0, 0.0, 1e-9);
            ++checked;
        }
    }
    EXPECT_GT(checked, 10);
}

TEST(SyntheticClip, MotionIsClampedAtBorder) {
    SyntheticSceneConfig cfg;
    cfg.action_set = {"left"};
    cfg.sprite_speed = 5;
    cfg.num_frames = 20;
    auto [clip, labels] = generate_synthetic_clip(cfg);
    auto [r, c] = sprite_centroid(clip.frames[cfg.num_frames - 1], sprite_color(0));
    EXPECT_NEAR(c, (cfg.sprite_size - 1) / 2.0, 1e-9);
    for (int l : labels.labels) EXPECT_EQ(l, 0);  // still labelled with the attempted action
}

TEST(SyntheticClip, ResimulatedPositionsMatchRenderedCentroids) {
    SyntheticSceneConfig cfg;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        cfg.seed = seed;
        auto [clip, labels] = generate_synthetic_clip(cfg);
        const auto pos = simulate_sprite_positions(cfg, labels);
        for (std::int64_t t = 0; t < cfg.num_frames; ++t) {
            auto [r, c] = sprite_centroid(clip.frames[t], sprite_color(0));
            const auto& p = pos[static_cast<std::size_t>(t)][0];
            EXPECT_LE(std::abs(r - (p.row + (cfg.sprite_size - 1) / 2.0)), 0.5);
            EXPECT_LE(std::abs(c - (p.col + (cfg.sprite_size - 1) / 2.0)), 0.5);
        }
    }
}

TEST(SyntheticClip, BackgroundPulsesWithConfiguredAmplitude) {
    SyntheticSceneConfig cfg;
    cfg.num_frames = 12;
    cfg.action_set = {"stay"};
    auto [clip, labels] = generate_synthetic_clip(cfg);
    const auto tex = background_texture(cfg.frame_height, cfg.frame_width);
    // A background pixel that the stationary sprite does not cover.
    auto [r, c] = sprite_centroid(clip.frames[0], sprite_color(0));
    const std::int64_t row = r < cfg.frame_height / 2.0 ? cfg.frame_height - 1 : 0;
    double lo = 1e9, hi = -1e9;
    for (std::int64_t t = 0; t < cfg.num_frames; ++t) {
        const double d = clip.frames[t][row][0][1].item<double>() - tex[row][0][1].item<double>();
        lo = std::min(lo, d);
        hi = std::max(hi, d);
    }
    EXPECT_LE(hi, cfg.background_pulse_amplitude + 1e-6);
    EXPECT_GE(lo, -cfg.background_pulse_amplitude - 1e-6);
    EXPECT_GT(hi - lo, cfg.background_pulse_amplitude);  // two periods cover most of the swing
}

TEST(SyntheticClip, InvalidConfigsAreRejected) {
    SyntheticSceneConfig cfg;
    cfg.num_sprites = 0;
    EXPECT_THROW(generate_synthetic_clip(cfg), InvalidArgument);
    cfg = {};
    cfg.sprite_speed = 0;
    EXPECT_THROW(generate_synthetic_clip(cfg), InvalidArgument);
    cfg = {};
    cfg.action_set.clear();
    EXPECT_THROW(generate_synthetic_clip(cfg), InvalidArgument);
    EXPECT_THROW(action_direction("sideways"), InvalidArgument);
}

TEST(Preprocess, CenterCropOffsetsFor1280x720) {
    const auto [x, y] = center_crop_offsets(720, 1280, 600, 900);
    EXPECT_EQ(x, 190);
    EXPECT_EQ(y, 60);
}

TEST(Preprocess, SixtyFpsSampledAtOneFps) {
    EXPECT_EQ(sample_frame_indices(200, 60.0, 1.0, 3), (std::vector<std::int64_t>{0, 60, 120}));
    EXPECT_EQ(sample_frame_indices(10, 30.0, 4.0, 2), (std::vector<std::int64_t>{0, 7}));
}

TEST(Preprocess, CropsResizesAndKeepsRange) {
    // Only the 900x600 center window is dark; everything outside it is white.
    auto frames = torch::ones({2, 720, 1280, 3});
    frames.slice(1, 60, 660).slice(2, 190, 1090).fill_(0.25);
    PreprocessOptions opt;
    opt.num_frames = 2;
    auto out = preprocess_clip(VideoClip{frames, 1.0}, opt);
    EXPECT_EQ(out.frames.sizes(), (std::vector<std::int64_t>{2, 120, 180, 3}));
    EXPECT_TRUE(torch::allclose(out.frames, torch::full_like(out.frames, 0.25)));
}

TEST(Preprocess, AcceptsBothModelResolutions) {
    auto raw = lwm_test::random_clip(3, 720, 1280, 1);
    PreprocessOptions opt;
    opt.num_frames = 3;
    for (auto [h, w] : {std::pair<std::int64_t, std::int64_t>{40, 60}, {120, 180}}) {
        opt.target_height = h;
        opt.target_width = w;
        auto out = preprocess_clip(raw, opt);
        EXPECT_EQ(out.frames.sizes(), (std::vector<std::int64_t>{3, h, w, 3}));
        EXPECT_GE(out.frames.min().item<double>(), 0.0);
        EXPECT_LE(out.frames.max().item<double>(), 1.0);
    }
}

TEST(Preprocess, ShortClipIsRejected) {
    auto raw = lwm_test::random_clip(100, 32, 48, 2);
    raw.fps = 60.0;
    PreprocessOptions opt;
    opt.crop_width = opt.crop_height = 0;
    opt.num_frames = 3;
    EXPECT_THROW(preprocess_clip(raw, opt), ClipTooShort);
    opt.num_frames = 2;
    EXPECT_EQ(preprocess_clip(raw, opt).num_frames(), 2);
}

TEST(Preprocess, SourceSmallerThanCropIsRejected) {
    auto raw = lwm_test::random_clip(2, 32, 48, 3);
    PreprocessOptions opt;
    opt.num_frames = 2;
    EXPECT_THROW(preprocess_clip(raw, opt), InvalidArgument);
}

TEST(ClipDirectory, RoundTripThroughPng) {
    const auto dir = lwm_test::scratch_dir("clipdir");
    SyntheticSceneConfig cfg;
    auto [clip, labels] = generate_synthetic_clip(cfg);
    write_clip_dir(dir / "c0", clip, &labels);
    auto back = read_clip_dir(dir / "c0");
    EXPECT_EQ(back.frames.sizes(), clip.frames.sizes());
    EXPECT_LE((back.frames - clip.frames).abs().max().item<double>(), 0.5 / 255.0 + 1e-6);
    EXPECT_EQ(back.fps, 1.0);
    EXPECT_EQ(read_eval_labels(dir / "c0").labels, labels.labels);
    EXPECT_EQ(list_clip_dirs(dir).size(), 1u);
    EXPECT_TRUE(std::filesystem::exists(dir / "c0" / "frame_00000.png"));
    std::filesystem::remove_all(dir);
}

TEST(ClipDirectory, MissingDirectoryIsNotFound) {
    EXPECT_THROW(list_clip_dirs("/nonexistent/lwm"), NotFound);
    EXPECT_THROW(read_clip_dir("/nonexistent/lwm/clip"), NotFound);
}

TEST(VideoClipType, ValidationRejectsBadShapesAndRanges) {
    VideoClip bad{torch::rand({1, 4, 4, 3}), 1.0};
    EXPECT_THROW(bad.validate(), InvalidArgument);
    bad = VideoClip{torch::rand({2, 4, 4, 1}), 1.0};
    EXPECT_THROW(bad.validate(), InvalidArgument);
    bad = VideoClip{torch::rand({2, 4, 4, 3}) + 1.0, 1.0};
    EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(Base64, RoundTripAndKnownVector) {
    const std::string text = "world model";
    std::vector<std::uint8_t> bytes(text.begin(), text.end());
    EXPECT_EQ(image_io::base64_encode(bytes), "d29ybGQgbW9kZWw=");
    EXPECT_EQ(image_io::base64_decode("d29ybGQgbW9kZWw="), bytes);
    EXPECT_THROW(image_io::decode_png(image_io::base64_decode("AAAA")), InvalidArgument);
}
