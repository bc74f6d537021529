#pragma once

// Latent action model. The encoder reads frames causally and quantizes the
// spatially pooled features of frame i+1 into the action a_i of transition
// i -> i+1; the decoder predicts frame i+1 from frames 1..i plus a_1..a_i.

#include "lwm/tokenizer.hpp"

namespace lwm {

struct LamConfig {
    STBlockConfig encoder{8, 384, 12, 4};
    STBlockConfig decoder{12, 384, 12, 4};
    std::int64_t frame_height = 40;
    std::int64_t frame_width = 60;
    std::int64_t patch_height = 4;
    std::int64_t patch_width = 4;
    std::int64_t num_actions = 12;
    std::int64_t latent_dim = 32;
    std::int64_t max_frames = 16;
    double beta = 0.25;
    double learning_rate = 1e-5;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.9999;
    double codebook_decay = 0.99;
    double codebook_epsilon = 1e-5;
    std::int64_t codebook_reseed_horizon = 256;

    std::int64_t tokens_per_frame() const { return (frame_height / patch_height) * (frame_width / patch_width); }
    std::int64_t patch_dim() const { return patch_height * patch_width * 3; }

    CodebookConfig codebook() const {
        return {num_actions, latent_dim, codebook_decay, codebook_epsilon, codebook_reseed_horizon};
    }

    void validate() const {
        encoder.validate();
        decoder.validate();
        LWM_REQUIRE(num_actions >= 2, "num_actions must be >= 2");
        LWM_REQUIRE(frame_height % patch_height == 0 && frame_width % patch_width == 0, "frame ", frame_height, "x",
                    frame_width, " not divisible by patch ", patch_height, "x", patch_width);
        LWM_REQUIRE(max_frames >= 2, "max_frames must be >= 2");
        LWM_REQUIRE(beta >= 0.0, "beta must be non-negative");
        codebook().validate();
    }

    /// Desk-scale defaults at 16x24, half the tokenizer's linear resolution.
    static LamConfig desk() {
        LamConfig c;
        c.encoder = {2, 64, 4, 4};
        c.decoder = {2, 64, 4, 4};
        c.frame_height = 16;
        c.frame_width = 24;
        c.latent_dim = 8;
        c.max_frames = 8;
        return c;
    }
};

/// One latent action per transition, each in [0, num_actions).
struct ActionSequence {
    std::vector<int> actions;

    torch::Tensor to_tensor() const {
        std::vector<std::int64_t> v(actions.begin(), actions.end());
        return torch::tensor(v, torch::kInt64);
    }
};

struct LamLoss {
    torch::Tensor total;
    torch::Tensor reconstruction;
    torch::Tensor commitment;
    double perplexity = 0.0;
    torch::Tensor features;  // pooled h^a of frames 2..T, detached
    torch::Tensor indices;   // [B, T-1]
};

class LatentActionModelImpl : public torch::nn::Module {
public:
    explicit LatentActionModelImpl(const LamConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        const auto S = cfg.tokens_per_frame();
        enc_patch_ = register_module("enc_patch", torch::nn::Linear(2 * cfg.patch_dim(), cfg.encoder.d_model));
        encoder_ = register_module("encoder", STTransformer(cfg.encoder, S, cfg.max_frames));
        enc_norm_ = register_module("enc_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.encoder.d_model})));
        to_latent_ = register_module("to_latent", torch::nn::Linear(cfg.encoder.d_model, cfg.latent_dim));
        codebook_ = register_module("codebook", Codebook(cfg.codebook()));
        dec_patch_ = register_module("dec_patch", torch::nn::Linear(cfg.patch_dim(), cfg.decoder.d_model));
        action_proj_ = register_module("action_proj", torch::nn::Linear(cfg.latent_dim, cfg.decoder.d_model));
        decoder_ = register_module("decoder", STTransformer(cfg.decoder, S, cfg.max_frames));
        dec_norm_ = register_module("dec_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.decoder.d_model})));
        to_pixels_ = register_module("to_pixels", torch::nn::Linear(cfg.decoder.d_model, cfg.patch_dim()));
        torch::NoGradGuard guard;
        to_pixels_->bias.fill_(0.5);
    }

    const LamConfig& config() const { return cfg_; }
    Codebook& codebook() { return codebook_; }

    /// Pooled, projected encoder features for every frame: [B, T, latent_dim].
    /// Each encoder token sees its patch and the patch's change since the
    /// previous frame (zero for the first frame).
    torch::Tensor frame_features(const torch::Tensor& frames) {
        check_frames(frames);
        auto p = patchify(frames, cfg_.patch_height, cfg_.patch_width);
        auto delta = torch::cat({torch::zeros_like(p.slice(1, 0, 1)), p.slice(1, 1) - p.slice(1, 0, -1)}, 1);
        auto x = enc_patch_->forward(torch::cat({p, delta}, -1));
        auto h = enc_norm_->forward(encoder_->forward(x));
        return to_latent_->forward(h.mean(2));
    }

    /// frames [B, T-1, H, W, 3] with action vectors [B, T-1, latent_dim] ->
    /// unclamped predictions of the following frames [B, T-1, H, W, 3].
    torch::Tensor decode(const torch::Tensor& prev_frames, const torch::Tensor& action_vectors) {
        check_frames(prev_frames);
        LWM_REQUIRE(action_vectors.dim() == 3 && action_vectors.size(1) == prev_frames.size(1),
                    "lam decode: ", prev_frames.size(1), " frames but action tensor ",
                    detail::shape_str(action_vectors));
        auto x = dec_patch_->forward(patchify(prev_frames, cfg_.patch_height, cfg_.patch_width));
        x = x + action_proj_->forward(action_vectors).unsqueeze(2);
        auto y = to_pixels_->forward(dec_norm_->forward(decoder_->forward(x)));
        return unpatchify(y, cfg_.frame_height, cfg_.frame_width, cfg_.patch_height, cfg_.patch_width, 3);
    }

    torch::Tensor action_vectors(const torch::Tensor& actions) {
        LWM_REQUIRE(actions.numel() == 0 ||
                        (actions.min().item<std::int64_t>() >= 0 && actions.max().item<std::int64_t>() < cfg_.num_actions),
                    "action id outside [0, ", cfg_.num_actions, ")");
        auto shape = actions.sizes().vec();
        shape.push_back(cfg_.latent_dim);
        return codebook_->codes.index_select(0, actions.reshape({-1})).view(shape);
    }

    LamLoss loss(const torch::Tensor& frames) {
        LWM_REQUIRE(frames.dim() == 5 && frames.size(1) >= 2, "lam loss: need [B, T>=2, H, W, 3]");
        const auto T = frames.size(1);
        auto h = frame_features(frames).slice(1, 1, T);
        auto q = quantize(h, codebook_);
        auto pred = decode(frames.slice(1, 0, T - 1), q.ste_output);
        LamLoss out;
        out.reconstruction = (pred - frames.slice(1, 1, T)).pow(2).mean();
        out.commitment = commitment_loss(h, q.quantized, cfg_.beta);
        out.total = out.reconstruction + out.commitment;
        out.perplexity = codebook_perplexity(q.indices, cfg_.num_actions);
        out.features = h.detach();
        out.indices = q.indices;
        return out;
    }

    void check_frames(const torch::Tensor& frames) const {
        LWM_REQUIRE(frames.dim() == 5 && frames.size(4) == 3 && frames.size(2) == cfg_.frame_height &&
                        frames.size(3) == cfg_.frame_width,
                    "latent action model: expected [B, T, ", cfg_.frame_height, ", ", cfg_.frame_width,
                    ", 3], got ", detail::shape_str(frames));
    }

private:
    LamConfig cfg_;
    torch::nn::Linear enc_patch_{nullptr}, to_latent_{nullptr}, dec_patch_{nullptr}, action_proj_{nullptr},
        to_pixels_{nullptr};
    STTransformer encoder_{nullptr}, decoder_{nullptr};
    torch::nn::LayerNorm enc_norm_{nullptr}, dec_norm_{nullptr};
    Codebook codebook_{nullptr};
};
TORCH_MODULE(LatentActionModel);

/// a_i for every transition of the clip; a_i depends on frames 1..i+1 only.
inline ActionSequence infer_actions(const VideoClip& clip, LatentActionModel& model) {
    torch::NoGradGuard guard;
    LWM_REQUIRE(clip.frames.dim() == 4 && clip.num_frames() >= 2, "infer_actions: need at least 2 frames");
    auto frames = clip.frames.to(torch::kFloat32).unsqueeze(0);
    auto feats = causal_windowed(clip.num_frames(), model->config().max_frames, [&](std::int64_t b, std::int64_t e) {
        return model->frame_features(frames.slice(1, b, e)).squeeze(0);
    });
    auto idx = quantize(feats.slice(0, 1, clip.num_frames()), model->codebook()).indices;
    ActionSequence out;
    for (std::int64_t i = 0; i < idx.size(0); ++i) out.actions.push_back(static_cast<int>(idx[i].item<std::int64_t>()));
    return out;
}

/// Predictions of frames 2..T from frames 1..T-1 and actions a_1..a_{T-1}.
inline VideoClip lam_decode(const VideoClip& prev_frames, const ActionSequence& actions, LatentActionModel& model) {
    torch::NoGradGuard guard;
    LWM_REQUIRE(prev_frames.frames.dim() == 4 &&
                    prev_frames.num_frames() == static_cast<std::int64_t>(actions.actions.size()),
                "lam_decode: ", prev_frames.frames.dim() == 4 ? prev_frames.num_frames() : 0, " frames but ",
                actions.actions.size(), " actions");
    auto frames = prev_frames.frames.to(torch::kFloat32).unsqueeze(0);
    auto vecs = model->action_vectors(actions.to_tensor()).unsqueeze(0);
    auto px = causal_windowed(prev_frames.num_frames(), model->config().max_frames - 1,
                              [&](std::int64_t b, std::int64_t e) {
                                  return model->decode(frames.slice(1, b, e), vecs.slice(1, b, e)).squeeze(0);
                              });
    return VideoClip{px.clamp(0.0, 1.0).contiguous(), prev_frames.fps};
}

inline std::pair<torch::Tensor, LossDiagnostics> lam_loss(const VideoClip& clip, LatentActionModel& model) {
    auto l = model->loss(clip.frames.unsqueeze(0));
    return {l.total, {l.reconstruction.item<double>(), l.commitment.item<double>(), l.perplexity}};
}

/// Uniform draw from the action codebook.
inline int sample_random_action(Rng& rng, std::int64_t num_actions) {
    LWM_REQUIRE(num_actions >= 1, "num_actions must be positive");
    return static_cast<int>(uniform_index(rng, num_actions));
}

}  // namespace lwm
