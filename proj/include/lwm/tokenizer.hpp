#pragma once

// Video tokenizer: patch embedding -> causal ST encoder -> latent projection ->
// vector quantization -> causal ST decoder -> patch unembedding.

#include "lwm/data.hpp"
#include "lwm/st_transformer.hpp"
#include "lwm/vq.hpp"

#include <functional>

namespace lwm {

struct TokenizerConfig {
    STBlockConfig encoder{4, 384, 12, 4};
    STBlockConfig decoder{6, 384, 12, 4};
    std::int64_t frame_height = 120;
    std::int64_t frame_width = 180;
    std::int64_t patch_height = 4;
    std::int64_t patch_width = 4;
    std::int64_t num_codes = 1024;
    std::int64_t latent_dim = 32;
    std::int64_t max_frames = 16;
    double beta = 0.25;
    double learning_rate = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.9999;
    double codebook_decay = 0.99;
    double codebook_epsilon = 1e-5;
    std::int64_t codebook_reseed_horizon = 256;

    std::int64_t grid_height() const { return frame_height / patch_height; }
    std::int64_t grid_width() const { return frame_width / patch_width; }
    std::int64_t tokens_per_frame() const { return grid_height() * grid_width(); }
    std::int64_t patch_dim() const { return patch_height * patch_width * 3; }

    CodebookConfig codebook() const {
        return {num_codes, latent_dim, codebook_decay, codebook_epsilon, codebook_reseed_horizon};
    }

    void validate() const {
        encoder.validate();
        decoder.validate();
        LWM_REQUIRE(patch_height >= 1 && patch_width >= 1, "patch size must be positive");
        LWM_REQUIRE(frame_height % patch_height == 0 && frame_width % patch_width == 0, "frame ", frame_height, "x",
                    frame_width, " not divisible by patch ", patch_height, "x", patch_width);
        LWM_REQUIRE(max_frames >= 1, "max_frames must be positive");
        LWM_REQUIRE(beta >= 0.0, "beta must be non-negative");
        codebook().validate();
    }

    /// Desk-scale defaults: 32x48 frames, d_model 64, 2+2 layers, 64 codes of dim 8.
    static TokenizerConfig desk() {
        TokenizerConfig c;
        c.encoder = {2, 64, 4, 4};
        c.decoder = {2, 64, 4, 4};
        c.frame_height = 32;
        c.frame_width = 48;
        c.num_codes = 64;
        c.latent_dim = 8;
        c.max_frames = 8;
        return c;
    }
};

/// Per-frame grids of token ids, [T, grid_h, grid_w] int64.
struct TokenGrid {
    torch::Tensor tokens;

    std::int64_t num_frames() const { return tokens.size(0); }
};

/// Applies a causal sequence model to T frames with a bounded context: frames
/// beyond `window` are each produced from the `window` most recent inputs.
/// `fn(begin, end)` must return outputs for frames [begin, end) along dim 0.
inline torch::Tensor causal_windowed(std::int64_t T, std::int64_t window,
                                     const std::function<torch::Tensor(std::int64_t, std::int64_t)>& fn) {
    if (T <= window) return fn(0, T);
    std::vector<torch::Tensor> parts{fn(0, window)};
    for (std::int64_t t = window; t < T; ++t) parts.push_back(fn(t - window + 1, t + 1).slice(0, window - 1, window));
    return torch::cat(parts, 0);
}

struct TokenizerLoss {
    torch::Tensor total;
    torch::Tensor reconstruction;
    torch::Tensor commitment;
    double perplexity = 0.0;
    torch::Tensor features;  // h, detached
    torch::Tensor indices;
};

class VideoTokenizerImpl : public torch::nn::Module {
public:
    explicit VideoTokenizerImpl(const TokenizerConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        const auto S = cfg.tokens_per_frame();
        patch_embed_ = register_module("patch_embed", torch::nn::Linear(cfg.patch_dim(), cfg.encoder.d_model));
        encoder_ = register_module("encoder", STTransformer(cfg.encoder, S, cfg.max_frames));
        encoder_norm_ = register_module("encoder_norm",
                                        torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.encoder.d_model})));
        to_latent_ = register_module("to_latent", torch::nn::Linear(cfg.encoder.d_model, cfg.latent_dim));
        codebook_ = register_module("codebook", Codebook(cfg.codebook()));
        from_latent_ = register_module("from_latent", torch::nn::Linear(cfg.latent_dim, cfg.decoder.d_model));
        decoder_ = register_module("decoder", STTransformer(cfg.decoder, S, cfg.max_frames));
        decoder_norm_ = register_module("decoder_norm",
                                        torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.decoder.d_model})));
        to_pixels_ = register_module("to_pixels", torch::nn::Linear(cfg.decoder.d_model, cfg.patch_dim()));
        torch::NoGradGuard guard;
        to_pixels_->bias.fill_(0.5);
    }

    const TokenizerConfig& config() const { return cfg_; }
    Codebook& codebook() { return codebook_; }

    /// frames [B, T, H, W, 3] -> pre-quantization features h [B, T, S, latent_dim].
    torch::Tensor encode_features(const torch::Tensor& frames) {
        check_frames(frames);
        auto x = patch_embed_->forward(patchify(frames, cfg_.patch_height, cfg_.patch_width));
        return to_latent_->forward(encoder_norm_->forward(encoder_->forward(x)));
    }

    /// latents [B, T, S, latent_dim] -> unclamped pixels [B, T, H, W, 3].
    torch::Tensor decode_latents(const torch::Tensor& z) {
        auto y = to_pixels_->forward(decoder_norm_->forward(decoder_->forward(from_latent_->forward(z))));
        return unpatchify(y, cfg_.frame_height, cfg_.frame_width, cfg_.patch_height, cfg_.patch_width, 3);
    }

    /// tokens [B, T, S] -> codebook rows [B, T, S, latent_dim].
    torch::Tensor lookup(const torch::Tensor& tokens) {
        LWM_REQUIRE(tokens.min().item<std::int64_t>() >= 0 && tokens.max().item<std::int64_t>() < cfg_.num_codes,
                    "token id outside [0, ", cfg_.num_codes, ")");
        auto shape = tokens.sizes().vec();
        shape.push_back(cfg_.latent_dim);
        return codebook_->codes.index_select(0, tokens.reshape({-1})).view(shape);
    }

    /// Reconstruction plus commitment loss on a batch [B, T, H, W, 3].
    TokenizerLoss loss(const torch::Tensor& frames) {
        auto h = encode_features(frames);
        auto q = quantize(h, codebook_);
        auto recon = decode_latents(q.ste_output);
        TokenizerLoss out;
        out.reconstruction = (recon - frames).pow(2).mean();
        out.commitment = commitment_loss(h, q.quantized, cfg_.beta);
        out.total = out.reconstruction + out.commitment;
        out.perplexity = codebook_perplexity(q.indices, cfg_.num_codes);
        out.features = h.detach();
        out.indices = q.indices;
        return out;
    }

    void check_frames(const torch::Tensor& frames) const {
        LWM_REQUIRE(frames.dim() == 5 && frames.size(4) == 3, "tokenizer: expected [B, T, H, W, 3], got ",
                    detail::shape_str(frames));
        LWM_REQUIRE(frames.size(2) % cfg_.patch_height == 0 && frames.size(3) % cfg_.patch_width == 0,
                    "tokenizer: resolution ", frames.size(2), "x", frames.size(3), " not divisible by patch ",
                    cfg_.patch_height, "x", cfg_.patch_width);
        LWM_REQUIRE(frames.size(2) == cfg_.frame_height && frames.size(3) == cfg_.frame_width,
                    "tokenizer: expected ", cfg_.frame_height, "x", cfg_.frame_width, " frames, got ",
                    frames.size(2), "x", frames.size(3));
    }

private:
    TokenizerConfig cfg_;
    torch::nn::Linear patch_embed_{nullptr}, to_latent_{nullptr}, from_latent_{nullptr}, to_pixels_{nullptr};
    STTransformer encoder_{nullptr}, decoder_{nullptr};
    torch::nn::LayerNorm encoder_norm_{nullptr}, decoder_norm_{nullptr};
    Codebook codebook_{nullptr};
};
TORCH_MODULE(VideoTokenizer);

/// Token ids of every frame; frame t's tokens depend on frames 1..t only.
inline TokenGrid tok_encode(const VideoClip& clip, VideoTokenizer& model) {
    torch::NoGradGuard guard;
    const auto& cfg = model->config();
    LWM_REQUIRE(clip.frames.dim() == 4, "tok_encode: expected [T, H, W, 3]");
    model->check_frames(clip.frames.unsqueeze(0));
    auto frames = clip.frames.to(torch::kFloat32).unsqueeze(0);
    auto ids = causal_windowed(clip.num_frames(), cfg.max_frames, [&](std::int64_t b, std::int64_t e) {
        auto h = model->encode_features(frames.slice(1, b, e));
        return quantize(h, model->codebook()).indices.squeeze(0);
    });
    return TokenGrid{ids.view({clip.num_frames(), cfg.grid_height(), cfg.grid_width()})};
}

/// Pixels [T, H, W, 3] in [0,1]; frame t depends on tokens of frames 1..t only.
inline VideoClip tok_decode(const TokenGrid& grid, VideoTokenizer& model, double fps = 1.0) {
    torch::NoGradGuard guard;
    const auto& cfg = model->config();
    LWM_REQUIRE(grid.tokens.dim() == 3 && grid.tokens.size(1) == cfg.grid_height() &&
                    grid.tokens.size(2) == cfg.grid_width(),
                "tok_decode: expected tokens [T, ", cfg.grid_height(), ", ", cfg.grid_width(), "], got ",
                detail::shape_str(grid.tokens));
    auto z = model->lookup(grid.tokens.reshape({1, grid.num_frames(), cfg.tokens_per_frame()}));
    auto px = causal_windowed(grid.num_frames(), cfg.max_frames, [&](std::int64_t b, std::int64_t e) {
        return model->decode_latents(z.slice(1, b, e)).squeeze(0);
    });
    return VideoClip{px.clamp(0.0, 1.0).contiguous(), fps};
}

struct LossDiagnostics {
    double reconstruction = 0.0;
    double commitment = 0.0;
    double perplexity = 0.0;
};

/// Reconstruction MSE plus beta-weighted commitment for one clip.
inline std::pair<torch::Tensor, LossDiagnostics> tokenizer_loss(const VideoClip& clip, VideoTokenizer& model) {
    auto l = model->loss(clip.frames.unsqueeze(0));
    return {l.total, {l.reconstruction.item<double>(), l.commitment.item<double>(), l.perplexity}};
}

}  // namespace lwm
