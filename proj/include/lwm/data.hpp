#pragma once

// Video clips, the synthetic sprite world, and clip preprocessing.

#include "lwm/common.hpp"
#include "lwm/image_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

namespace lwm {

/// A length-T sequence of frames stored as a float32 tensor [T, H, W, 3] in [0,1].
struct VideoClip {
    torch::Tensor frames;
    double fps = 1.0;

    std::int64_t num_frames() const { return frames.size(0); }
    std::int64_t height() const { return frames.size(1); }
    std::int64_t width() const { return frames.size(2); }

    void validate(std::int64_t min_frames = 2) const {
        LWM_REQUIRE(frames.defined() && frames.dim() == 4 && frames.size(3) == 3,
                    "VideoClip: expected frames [T, H, W, 3], got ",
                    frames.defined() ? detail::shape_str(frames) : std::string("undefined"));
        LWM_REQUIRE(frames.size(0) >= min_frames, "VideoClip: need at least ", min_frames, " frames, got ",
                    frames.size(0));
        LWM_REQUIRE(fps > 0.0, "VideoClip: fps must be positive");
        LWM_REQUIRE(frames.min().item<double>() >= 0.0 && frames.max().item<double>() <= 1.0,
                    "VideoClip: values outside [0,1]");
    }
};

/// Ground-truth action per transition; only evaluation code reads these.
struct ActionLabelSequence {
    std::vector<int> labels;
};

struct SyntheticSceneConfig {
    std::int64_t frame_height = 32;
    std::int64_t frame_width = 48;
    std::int64_t num_frames = 8;
    std::int64_t num_sprites = 1;
    std::int64_t sprite_size = 8;
    std::vector<std::string> action_set{"stay", "up", "down", "left", "right"};
    std::int64_t sprite_speed = 3;
    double background_pulse_amplitude = 0.06;
    double pulse_period = 6.0;  // frames per brightness cycle
    double fps = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        LWM_REQUIRE(num_sprites >= 1, "num_sprites must be >= 1");
        LWM_REQUIRE(sprite_speed >= 1, "sprite_speed must be >= 1");
        LWM_REQUIRE(!action_set.empty(), "action_set must be non-empty");
        LWM_REQUIRE(num_frames >= 2, "num_frames must be >= 2");
        LWM_REQUIRE(sprite_size >= 1 && sprite_size <= std::min(frame_height, frame_width),
                    "sprite_size must fit inside the frame");
        LWM_REQUIRE(background_pulse_amplitude >= 0.0 && background_pulse_amplitude <= 1.0,
                    "background_pulse_amplitude must lie in [0,1]");
        LWM_REQUIRE(pulse_period > 0.0, "pulse_period must be positive");
        LWM_REQUIRE(fps > 0.0, "fps must be positive");
    }
};

/// Row/column step of a named motion primitive.
inline std::array<int, 2> action_direction(const std::string& name) {
    if (name == "stay") return {0, 0};
    if (name == "up") return {-1, 0};
    if (name == "down") return {1, 0};
    if (name == "left") return {0, -1};
    if (name == "right") return {0, 1};
    if (name == "up_left") return {-1, -1};
    if (name == "up_right") return {-1, 1};
    if (name == "down_left") return {1, -1};
    if (name == "down_right") return {1, 1};
    throw InvalidArgument("unknown motion primitive '" + name + "'");
}

inline std::array<float, 3> sprite_color(std::int64_t index) {
    static constexpr std::array<std::array<float, 3>, 4> palette{{
        {0.92f, 0.94f, 0.98f},  // metallic
        {0.06f, 0.08f, 0.10f},  // dark shaft
        {0.20f, 0.85f, 0.35f},
        {0.95f, 0.85f, 0.15f},
    }};
    return palette[static_cast<std::size_t>(index) % palette.size()];
}

/// Top-left (row, col) of one sprite at one frame.
struct SpritePosition {
    std::int64_t row = 0;
    std::int64_t col = 0;
    bool operator==(const SpritePosition&) const = default;
};

namespace detail {

struct SceneDraws {
    std::vector<SpritePosition> start;
    double pulse_phase = 0.0;
    std::vector<int> labels;
};

// All random draws of a scene, in a fixed order, from cfg.seed.
inline SceneDraws draw_scene(const SyntheticSceneConfig& cfg) {
    Rng rng(cfg.seed);
    SceneDraws d;
    for (std::int64_t s = 0; s < cfg.num_sprites; ++s) {
        SpritePosition p;
        p.row = uniform_index(rng, cfg.frame_height - cfg.sprite_size + 1);
        p.col = uniform_index(rng, cfg.frame_width - cfg.sprite_size + 1);
        d.start.push_back(p);
    }
    d.pulse_phase = 2.0 * std::numbers::pi * uniform01(rng);
    for (std::int64_t t = 0; t + 1 < cfg.num_frames; ++t)
        d.labels.push_back(static_cast<int>(uniform_index(rng, static_cast<std::int64_t>(cfg.action_set.size()))));
    return d;
}

}  // namespace detail

/// Replays labels from the scene's initial positions; result[t][s] is sprite s at frame t.
/// Motion that would leave the frame is clamped at the border.
inline std::vector<std::vector<SpritePosition>> simulate_sprite_positions(const SyntheticSceneConfig& cfg,
                                                                          const ActionLabelSequence& labels) {
    cfg.validate();
    LWM_REQUIRE(static_cast<std::int64_t>(labels.labels.size()) == cfg.num_frames - 1,
                "label count must be num_frames - 1");
    const auto start = detail::draw_scene(cfg).start;
    std::vector<std::vector<SpritePosition>> out{start};
    const auto max_row = cfg.frame_height - cfg.sprite_size;
    const auto max_col = cfg.frame_width - cfg.sprite_size;
    for (int label : labels.labels) {
        LWM_REQUIRE(label >= 0 && label < static_cast<int>(cfg.action_set.size()), "label out of range");
        const auto dir = action_direction(cfg.action_set[static_cast<std::size_t>(label)]);
        auto next = out.back();
        for (auto& p : next) {
            p.row = std::clamp<std::int64_t>(p.row + dir[0] * cfg.sprite_speed, 0, max_row);
            p.col = std::clamp<std::int64_t>(p.col + dir[1] * cfg.sprite_speed, 0, max_col);
        }
        out.push_back(std::move(next));
    }
    return out;
}

/// Static tissue-like texture [H, W, 3]; identical for every clip of a given size.
inline torch::Tensor background_texture(std::int64_t height, std::int64_t width) {
    auto ys = torch::arange(height, torch::kFloat64).unsqueeze(1) / static_cast<double>(height);
    auto xs = torch::arange(width, torch::kFloat64).unsqueeze(0) / static_cast<double>(width);
    constexpr double two_pi = 2.0 * std::numbers::pi;
    auto tex = 0.06 * torch::sin(two_pi * 1.5 * xs + 0.4) * torch::cos(two_pi * ys) +
               0.04 * torch::sin(two_pi * (xs + 0.7 * ys) * 2.0);
    auto base = torch::tensor({0.62, 0.36, 0.34}, torch::kFloat64);
    return (tex.unsqueeze(-1) + base).to(torch::kFloat32);
}

/// Deterministic sprite-world clip: one action label per transition moves every
/// sprite by sprite_speed; the background brightness pulses sinusoidally.
inline std::pair<VideoClip, ActionLabelSequence> generate_synthetic_clip(const SyntheticSceneConfig& cfg) {
    cfg.validate();
    const auto draws = detail::draw_scene(cfg);
    ActionLabelSequence labels{draws.labels};
    const auto positions = simulate_sprite_positions(cfg, labels);

    const auto tex = background_texture(cfg.frame_height, cfg.frame_width);
    auto frames = torch::empty({cfg.num_frames, cfg.frame_height, cfg.frame_width, 3}, torch::kFloat32);
    for (std::int64_t t = 0; t < cfg.num_frames; ++t) {
        const double pulse = cfg.background_pulse_amplitude *
                             std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / cfg.pulse_period +
                                      draws.pulse_phase);
        auto frame = (tex + static_cast<float>(pulse)).clamp(0.0, 1.0);
        for (std::int64_t s = 0; s < cfg.num_sprites; ++s) {
            const auto& p = positions[static_cast<std::size_t>(t)][static_cast<std::size_t>(s)];
            const auto c = sprite_color(s);
            auto patch = frame.slice(0, p.row, p.row + cfg.sprite_size).slice(1, p.col, p.col + cfg.sprite_size);
            for (int ch = 0; ch < 3; ++ch) patch.select(2, ch).fill_(c[static_cast<std::size_t>(ch)]);
        }
        frames[t].copy_(frame);
    }
    return {VideoClip{frames, cfg.fps}, std::move(labels)};
}

/// Bilinear resize of every frame to (height, width).
inline VideoClip resize_clip(const VideoClip& clip, std::int64_t height, std::int64_t width) {
    if (clip.height() == height && clip.width() == width) return clip;
    namespace F = torch::nn::functional;
    auto x = clip.frames.permute({0, 3, 1, 2});
    auto y = F::interpolate(x, F::InterpolateFuncOptions()
                                   .size(std::vector<std::int64_t>{height, width})
                                   .mode(torch::kBilinear)
                                   .align_corners(false));
    return VideoClip{y.permute({0, 2, 3, 1}).clamp(0.0, 1.0).contiguous(), clip.fps};
}

struct PreprocessOptions {
    std::int64_t target_height = 120;
    std::int64_t target_width = 180;
    double sample_fps = 1.0;
    std::int64_t num_frames = 16;
    std::int64_t crop_width = 900;  // 0 disables cropping
    std::int64_t crop_height = 600;
};

class ClipTooShort : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

/// (x, y) of the top-left corner of a centered crop window.
inline std::pair<std::int64_t, std::int64_t> center_crop_offsets(std::int64_t height, std::int64_t width,
                                                                  std::int64_t crop_height, std::int64_t crop_width) {
    return {(width - crop_width) / 2, (height - crop_height) / 2};
}

/// Frame indices kept when sampling a raw_fps stream at sample_fps.
inline std::vector<std::int64_t> sample_frame_indices(std::int64_t available, double raw_fps, double sample_fps,
                                                      std::int64_t num_frames) {
    LWM_REQUIRE(sample_fps > 0.0 && raw_fps >= sample_fps, "source fps ", raw_fps, " below sample fps ", sample_fps);
    const auto stride = static_cast<std::int64_t>(std::floor(raw_fps / sample_fps));
    const auto have = (available + stride - 1) / stride;
    if (have < num_frames)
        throw ClipTooShort(detail::concat("clip too short: ", have, " frames after sampling every ", stride,
                                          "th frame, need ", num_frames));
    std::vector<std::int64_t> idx;
    for (std::int64_t i = 0; i < num_frames; ++i) idx.push_back(i * stride);
    return idx;
}

/// Subsample in time, center-crop, then bilinearly resize.
inline VideoClip preprocess_clip(const VideoClip& raw, const PreprocessOptions& opt) {
    LWM_REQUIRE(raw.frames.dim() == 4 && raw.frames.size(3) == 3, "preprocess_clip: expected [T, H, W, 3]");
    const auto idx = sample_frame_indices(raw.num_frames(), raw.fps, opt.sample_fps, opt.num_frames);
    auto frames = raw.frames.index_select(0, torch::tensor(idx, torch::kInt64));
    if (opt.crop_width > 0 && opt.crop_height > 0) {
        LWM_REQUIRE(raw.height() >= opt.crop_height && raw.width() >= opt.crop_width, "source ", raw.width(), "x",
                    raw.height(), " smaller than crop ", opt.crop_width, "x", opt.crop_height);
        const auto [x0, y0] = center_crop_offsets(raw.height(), raw.width(), opt.crop_height, opt.crop_width);
        frames = frames.slice(1, y0, y0 + opt.crop_height).slice(2, x0, x0 + opt.crop_width);
    }
    return resize_clip(VideoClip{frames.contiguous(), opt.sample_fps}, opt.target_height, opt.target_width);
}

// On-disk clip layout: <clip>/frame_00000.png ..., <clip>/meta ("fps=<int>").
// Evaluation labels, when present, live in <clip>/eval_labels and are read only
// by evaluation code.

inline std::string frame_filename(std::int64_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%05lld.png", static_cast<long long>(index));
    return buf;
}

inline void write_clip_dir(const std::filesystem::path& dir, const VideoClip& clip,
                           const ActionLabelSequence* labels = nullptr) {
    std::filesystem::create_directories(dir);
    for (std::int64_t t = 0; t < clip.num_frames(); ++t) image_io::write_png(dir / frame_filename(t), clip.frames[t]);
    std::ofstream(dir / "meta") << "fps=" << static_cast<long long>(std::llround(clip.fps)) << "\n";
    if (labels) {
        std::ofstream f(dir / "eval_labels");
        for (int l : labels->labels) f << l << "\n";
    }
}

inline VideoClip read_clip_dir(const std::filesystem::path& dir) {
    std::ifstream meta(dir / "meta");
    if (!meta) throw NotFound("missing meta file in " + dir.string());
    double fps = 0.0;
    std::string line;
    while (std::getline(meta, line)) {
        if (line.rfind("fps=", 0) == 0) fps = std::stod(line.substr(4));
    }
    LWM_REQUIRE(fps > 0.0, "meta in ", dir.string(), " lacks a positive fps");
    std::vector<torch::Tensor> frames;
    for (std::int64_t t = 0; std::filesystem::exists(dir / frame_filename(t)); ++t)
        frames.push_back(image_io::read_png(dir / frame_filename(t)));
    LWM_REQUIRE(!frames.empty(), "no frames in ", dir.string());
    return VideoClip{torch::stack(frames), fps};
}

inline ActionLabelSequence read_eval_labels(const std::filesystem::path& dir) {
    std::ifstream f(dir / "eval_labels");
    if (!f) throw NotFound("missing eval_labels in " + dir.string());
    ActionLabelSequence out;
    for (int v; f >> v;) out.labels.push_back(v);
    return out;
}

/// Clip subdirectories of a dataset root, sorted by name.
inline std::vector<std::filesystem::path> list_clip_dirs(const std::filesystem::path& root) {
    if (!std::filesystem::is_directory(root)) throw NotFound("dataset directory not found: " + root.string());
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(root))
        if (e.is_directory() && std::filesystem::exists(e.path() / "meta")) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace lwm
