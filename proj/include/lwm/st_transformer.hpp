#pragma once

// Spatio-temporal transformer: every layer applies self-attention within each
// frame, then causal self-attention along time at each spatial position, then
// a feed-forward sublayer. Feature volumes are [B, T, S, D] with S = h*w.

#include "lwm/common.hpp"

#include <cmath>
#include <limits>

namespace lwm {

struct STBlockConfig {
    std::int64_t num_layers = 2;
    std::int64_t d_model = 64;
    std::int64_t num_heads = 4;
    std::int64_t ff_multiplier = 4;

    void validate() const {
        LWM_REQUIRE(num_layers >= 0, "num_layers must be non-negative");
        LWM_REQUIRE(d_model >= 1 && num_heads >= 1, "d_model and num_heads must be positive");
        LWM_REQUIRE(d_model % num_heads == 0, "d_model ", d_model, " not divisible by num_heads ", num_heads);
        LWM_REQUIRE(ff_multiplier >= 1, "ff_multiplier must be positive");
    }
};

/// Multi-head self-attention over the middle axis of [N, L, D].
class MultiHeadSelfAttentionImpl : public torch::nn::Module {
public:
    MultiHeadSelfAttentionImpl(std::int64_t d_model, std::int64_t num_heads)
        : num_heads_(num_heads), head_dim_(d_model / num_heads) {
        qkv_ = register_module("qkv", torch::nn::Linear(d_model, 3 * d_model));
        out_ = register_module("out", torch::nn::Linear(d_model, d_model));
    }

    torch::Tensor forward(const torch::Tensor& x, bool causal) {
        const auto N = x.size(0), L = x.size(1), D = x.size(2);
        auto qkv = qkv_->forward(x).view({N, L, 3, num_heads_, head_dim_}).permute({2, 0, 3, 1, 4});
        auto q = qkv[0], k = qkv[1], v = qkv[2];  // [N, H, L, dh]
        auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim_));
        if (causal && L > 1) {
            auto future = torch::ones({L, L}, torch::TensorOptions().dtype(torch::kBool)).triu(1);
            scores = scores.masked_fill(future, -std::numeric_limits<double>::infinity());
        }
        auto y = torch::matmul(torch::softmax(scores, -1), v);  // [N, H, L, dh]
        return out_->forward(y.permute({0, 2, 1, 3}).reshape({N, L, D}));
    }

    torch::nn::Linear& out_proj() { return out_; }
    torch::nn::Linear& qkv_proj() { return qkv_; }

private:
    std::int64_t num_heads_;
    std::int64_t head_dim_;
    torch::nn::Linear qkv_{nullptr};
    torch::nn::Linear out_{nullptr};
};
TORCH_MODULE(MultiHeadSelfAttention);

/// Attention among the S positions of each frame; frames are independent.
inline torch::Tensor spatial_attention(const torch::Tensor& x, MultiHeadSelfAttention& attn) {
    const auto B = x.size(0), T = x.size(1), S = x.size(2), D = x.size(3);
    return attn->forward(x.reshape({B * T, S, D}), /*causal=*/false).view({B, T, S, D});
}

/// Causal attention along time at each spatial position; (t, s) sees times <= t.
inline torch::Tensor temporal_causal_attention(const torch::Tensor& x, MultiHeadSelfAttention& attn) {
    const auto B = x.size(0), T = x.size(1), S = x.size(2), D = x.size(3);
    auto seq = x.permute({0, 2, 1, 3}).reshape({B * S, T, D});
    return attn->forward(seq, /*causal=*/true).view({B, S, T, D}).permute({0, 2, 1, 3});
}

class STLayerImpl : public torch::nn::Module {
public:
    explicit STLayerImpl(const STBlockConfig& cfg) {
        const auto D = cfg.d_model;
        norm_spatial_ = register_module("norm_spatial", torch::nn::LayerNorm(torch::nn::LayerNormOptions({D})));
        spatial_ = register_module("spatial", MultiHeadSelfAttention(D, cfg.num_heads));
        norm_temporal_ = register_module("norm_temporal", torch::nn::LayerNorm(torch::nn::LayerNormOptions({D})));
        temporal_ = register_module("temporal", MultiHeadSelfAttention(D, cfg.num_heads));
        norm_ff_ = register_module("norm_ff", torch::nn::LayerNorm(torch::nn::LayerNormOptions({D})));
        ff_in_ = register_module("ff_in", torch::nn::Linear(D, cfg.ff_multiplier * D));
        ff_out_ = register_module("ff_out", torch::nn::Linear(cfg.ff_multiplier * D, D));
    }

    torch::Tensor forward(torch::Tensor x) {
        x = x + spatial_attention(norm_spatial_->forward(x), spatial_);
        x = x + temporal_causal_attention(norm_temporal_->forward(x), temporal_);
        x = x + ff_out_->forward(torch::gelu(ff_in_->forward(norm_ff_->forward(x))));
        return x;
    }

    void zero_residual_branches() {
        torch::NoGradGuard guard;
        for (auto* lin : {&spatial_->out_proj(), &temporal_->out_proj(), &ff_out_}) {
            (*lin)->weight.zero_();
            (*lin)->bias.zero_();
        }
    }

    MultiHeadSelfAttention& spatial() { return spatial_; }
    MultiHeadSelfAttention& temporal() { return temporal_; }

private:
    torch::nn::LayerNorm norm_spatial_{nullptr}, norm_temporal_{nullptr}, norm_ff_{nullptr};
    MultiHeadSelfAttention spatial_{nullptr}, temporal_{nullptr};
    torch::nn::Linear ff_in_{nullptr}, ff_out_{nullptr};
};
TORCH_MODULE(STLayer);

/// A stack of ST layers with learned spatial and temporal position embeddings
/// added once at the input. Input/output [B, T, S, D], T <= max_frames.
class STTransformerImpl : public torch::nn::Module {
public:
    STTransformerImpl(const STBlockConfig& cfg, std::int64_t num_positions, std::int64_t max_frames)
        : cfg_(cfg), num_positions_(num_positions), max_frames_(max_frames) {
        cfg.validate();
        LWM_REQUIRE(num_positions >= 1 && max_frames >= 1, "STTransformer: positions and frames must be positive");
        spatial_pos_ = register_parameter("spatial_pos", torch::randn({num_positions, cfg.d_model}) * 0.02);
        temporal_pos_ = register_parameter("temporal_pos", torch::randn({max_frames, cfg.d_model}) * 0.02);
        layers_ = register_module("layers", torch::nn::ModuleList());
        for (std::int64_t i = 0; i < cfg.num_layers; ++i) layers_->push_back(STLayer(cfg));
    }

    torch::Tensor forward(const torch::Tensor& x) {
        LWM_REQUIRE(x.dim() == 4, "STTransformer: expected [B, T, S, D], got ", detail::shape_str(x));
        const auto T = x.size(1);
        LWM_REQUIRE(x.size(2) == num_positions_ && x.size(3) == cfg_.d_model, "STTransformer: input ",
                    detail::shape_str(x), " does not match S=", num_positions_, " D=", cfg_.d_model);
        LWM_REQUIRE(T >= 1 && T <= max_frames_, "STTransformer: T=", T, " outside [1, ", max_frames_, "]");
        require_finite(x, "STTransformer");
        auto h = x + spatial_pos_.view({1, 1, num_positions_, cfg_.d_model}) +
                 temporal_pos_.slice(0, 0, T).view({1, T, 1, cfg_.d_model});
        for (auto& layer : *layers_) h = layer->as<STLayer>()->forward(h);
        return h;
    }

    void zero_residual_branches() {
        for (auto& layer : *layers_) layer->as<STLayer>()->zero_residual_branches();
    }

    STLayer layer(std::size_t i) { return STLayer(layers_->ptr<STLayerImpl>(i)); }

    const STBlockConfig& config() const { return cfg_; }
    std::int64_t num_positions() const { return num_positions_; }
    std::int64_t max_frames() const { return max_frames_; }
    torch::Tensor& spatial_pos() { return spatial_pos_; }
    torch::Tensor& temporal_pos() { return temporal_pos_; }

private:
    STBlockConfig cfg_;
    std::int64_t num_positions_;
    std::int64_t max_frames_;
    torch::Tensor spatial_pos_, temporal_pos_;
    torch::nn::ModuleList layers_{nullptr};
};
TORCH_MODULE(STTransformer);

/// Forward-pass multiply-accumulate count of one stack evaluation, times two
/// for FLOPs. Used for logging only.
inline double st_stack_flops(const STBlockConfig& cfg, std::int64_t batch, std::int64_t frames,
                             std::int64_t positions) {
    const double D = static_cast<double>(cfg.d_model);
    const double tokens = static_cast<double>(batch * frames * positions);
    const double S = static_cast<double>(positions), T = static_cast<double>(frames);
    const double per_layer = tokens * (2 * (4 * D * D) + 2 * cfg.ff_multiplier * D * D)  // projections + ff
                             + tokens * 2 * D * (S + T);                                     // attention products
    return 2.0 * per_layer * static_cast<double>(cfg.num_layers);
}

}  // namespace lwm
