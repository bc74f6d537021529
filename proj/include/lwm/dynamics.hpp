#pragma once

// Action-conditioned masked-token dynamics model over tokenizer ids, trained
// with a masked-prediction objective and sampled by iterative parallel
// decoding under a cosine mask schedule.

#include "lwm/lam.hpp"
#include "lwm/tokenizer.hpp"

#include <atomic>
#include <cmath>
#include <numbers>

namespace lwm {

struct DynamicsConfig {
    STBlockConfig stack{12, 512, 8, 4};
    std::int64_t num_codes = 1024;  // MASK uses id num_codes
    std::int64_t num_actions = 12;
    std::int64_t grid_height = 30;
    std::int64_t grid_width = 45;
    std::int64_t max_frames = 16;
    std::int64_t decode_steps = 25;
    double temperature = 1.0;
    double learning_rate = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.9999;

    std::int64_t mask_id() const { return num_codes; }
    std::int64_t tokens_per_frame() const { return grid_height * grid_width; }

    void validate() const {
        stack.validate();
        LWM_REQUIRE(num_codes >= 1 && num_actions >= 1, "num_codes and num_actions must be positive");
        LWM_REQUIRE(grid_height >= 1 && grid_width >= 1, "token grid must be non-empty");
        LWM_REQUIRE(max_frames >= 2, "max_frames must be >= 2");
        LWM_REQUIRE(decode_steps >= 1, "decode_steps must be >= 1");
        LWM_REQUIRE(temperature >= 0.0, "temperature must be >= 0");
    }

    static DynamicsConfig desk() {
        DynamicsConfig c;
        c.stack = {2, 64, 4, 4};
        c.num_codes = 64;
        c.grid_height = 8;
        c.grid_width = 12;
        c.max_frames = 8;
        return c;
    }
};

/// Number of positions still masked after step s of S:
/// min(floor(N cos(pi s / 2S)), N - s), never negative. The N - s clamp
/// guarantees that every step reveals at least one token.
inline std::int64_t mask_schedule(std::int64_t num_tokens, std::int64_t step, std::int64_t total_steps) {
    LWM_REQUIRE(num_tokens >= 1, "mask_schedule: num_tokens must be >= 1");
    LWM_REQUIRE(total_steps >= 1 && step >= 1 && step <= total_steps, "mask_schedule: step ", step, " outside [1, ",
                total_steps, "]");
    if (step == total_steps) return 0;
    const double c = std::cos(std::numbers::pi * static_cast<double>(step) / (2.0 * static_cast<double>(total_steps)));
    // The 1e-9 guard keeps exact products such as 10 * cos(pi/3) from flooring down.
    const auto cosine = static_cast<std::int64_t>(std::floor(static_cast<double>(num_tokens) * c + 1e-9));
    return std::max<std::int64_t>(0, std::min(cosine, num_tokens - step));
}

/// Training mask ratio gamma(r) = cos(pi r / 2) for r in [0, 1).
inline double mask_ratio(double r) { return std::cos(std::numbers::pi * r / 2.0); }

/// Mean cross-entropy over positions where mask is true.
/// logits [..., K], targets [...] int64, mask [...] bool.
inline torch::Tensor masked_cross_entropy(const torch::Tensor& logits, const torch::Tensor& targets,
                                          const torch::Tensor& mask) {
    LWM_REQUIRE(mask.any().item<bool>(), "masked_cross_entropy: empty mask");
    const auto K = logits.size(-1);
    auto sel = mask.reshape({-1}).nonzero().reshape({-1});
    auto lp = torch::log_softmax(logits.reshape({-1, K}).index_select(0, sel), -1);
    auto tgt = targets.reshape({-1}).index_select(0, sel);
    return -lp.gather(1, tgt.unsqueeze(1)).mean();
}

class DynamicsModelImpl : public torch::nn::Module {
public:
    explicit DynamicsModelImpl(const DynamicsConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        token_embed_ = register_module("token_embed", torch::nn::Embedding(cfg.num_codes + 1, cfg.stack.d_model));
        action_embed_ = register_module("action_embed", torch::nn::Embedding(cfg.num_actions, cfg.stack.d_model));
        stack_ = register_module("stack", STTransformer(cfg.stack, cfg.tokens_per_frame(), cfg.max_frames));
        norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.stack.d_model})));
        head_ = register_module("head", torch::nn::Linear(cfg.stack.d_model, cfg.num_codes));
        torch::NoGradGuard guard;
        token_embed_->weight.mul_(0.02);
        action_embed_->weight.mul_(0.02);
    }

    const DynamicsConfig& config() const { return cfg_; }

    /// tokens [B, T, S] (MASK allowed), actions [B, T-1]: the embedding of
    /// actions[:, t] (transition t -> t+1) is added to every token of frame
    /// t+1, the frame it produces. Returns logits [B, T, S, num_codes].
    torch::Tensor forward(const torch::Tensor& tokens, const torch::Tensor& actions) {
        LWM_REQUIRE(tokens.dim() == 3 && tokens.size(2) == cfg_.tokens_per_frame(), "dynamics: expected tokens [B, T, ",
                    cfg_.tokens_per_frame(), "], got ", detail::shape_str(tokens));
        LWM_REQUIRE(actions.dim() == 2 && actions.size(0) == tokens.size(0) && actions.size(1) == tokens.size(1) - 1,
                    "dynamics: actions ", detail::shape_str(actions), " incompatible with tokens ",
                    detail::shape_str(tokens));
        LWM_REQUIRE(tokens.min().item<std::int64_t>() >= 0 && tokens.max().item<std::int64_t>() <= cfg_.num_codes,
                    "dynamics: token id outside [0, ", cfg_.num_codes, "]");
        if (actions.numel() > 0)
            LWM_REQUIRE(actions.min().item<std::int64_t>() >= 0 && actions.max().item<std::int64_t>() < cfg_.num_actions,
                        "dynamics: action id outside [0, ", cfg_.num_actions, ")");
        ++forward_calls;
        auto x = token_embed_->forward(tokens);
        const auto A = actions.size(1);
        if (A > 0) {
            auto a = action_embed_->forward(actions).unsqueeze(2);  // [B, A, 1, D]
            auto pad = torch::zeros({x.size(0), 1, 1, x.size(3)}, x.options());
            x = x + torch::cat({pad, a}, 1);
        }
        return head_->forward(norm_->forward(stack_->forward(x)));
    }

    std::atomic<std::int64_t> forward_calls{0};

private:
    DynamicsConfig cfg_;
    torch::nn::Embedding token_embed_{nullptr}, action_embed_{nullptr};
    STTransformer stack_{nullptr};
    torch::nn::LayerNorm norm_{nullptr};
    torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(DynamicsModel);

struct MaskedTokenGrid {
    torch::Tensor tokens;  // MASK where mask is true
    torch::Tensor mask;    // bool, same shape
};

/// Masks a cosine-scheduled fraction of target frames. Each sample picks a
/// first masked frame k uniformly from 2..T; frames before k stay clean (as
/// the history does when decoding) and frames k..T each get the same number
/// of masked tokens, at least one.
inline MaskedTokenGrid sample_training_mask(const torch::Tensor& tokens, std::int64_t mask_id, Rng& rng) {
    LWM_REQUIRE(tokens.dim() == 3 && tokens.size(1) >= 2, "training mask: need tokens [B, T>=2, S]");
    const auto B = tokens.size(0), T = tokens.size(1), S = tokens.size(2);
    auto mask = torch::zeros({B, T, S}, torch::kBool);
    auto acc = mask.accessor<bool, 3>();
    std::vector<std::int64_t> perm(static_cast<std::size_t>(S));
    for (std::int64_t b = 0; b < B; ++b) {
        const auto first = 1 + uniform_index(rng, T - 1);
        const auto count = std::max<std::int64_t>(
            1, static_cast<std::int64_t>(std::floor(mask_ratio(uniform01(rng)) * static_cast<double>(S))));
        for (std::int64_t t = first; t < T; ++t) {
            std::iota(perm.begin(), perm.end(), 0);
            for (std::int64_t i = 0; i < count; ++i) {
                const auto j = i + uniform_index(rng, S - i);
                std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
                acc[b][t][perm[static_cast<std::size_t>(i)]] = true;
            }
        }
    }
    return {torch::where(mask, torch::full_like(tokens, mask_id), tokens), mask};
}

/// Masked-token objective on a batch: tokens [B, T, S], actions [B, T-1].
inline torch::Tensor dynamics_batch_loss(DynamicsModel& model, const torch::Tensor& tokens, const torch::Tensor& actions,
                                         Rng& rng) {
    LWM_REQUIRE(actions.dim() == 2 && actions.size(1) == tokens.size(1) - 1,
                "dynamics loss: need T-1 actions for T token frames");
    auto masked = sample_training_mask(tokens, model->config().mask_id(), rng);
    auto logits = model->forward(masked.tokens, actions);
    return masked_cross_entropy(logits, tokens, masked.mask);
}

inline torch::Tensor dynamics_train_loss(const TokenGrid& token_clip, const ActionSequence& actions,
                                         DynamicsModel& model, Rng& rng) {
    const auto T = token_clip.num_frames();
    LWM_REQUIRE(static_cast<std::int64_t>(actions.actions.size()) == T - 1, "dynamics_train_loss: ",
                actions.actions.size(), " actions for ", T, " token frames");
    auto tokens = token_clip.tokens.reshape({1, T, -1});
    return dynamics_batch_loss(model, tokens, actions.to_tensor().unsqueeze(0), rng);
}

namespace detail {

// Inverse-CDF draw from a probability vector.
inline std::int64_t sample_categorical(const double* p, std::int64_t n, Rng& rng) {
    const double u = uniform01(rng);
    double acc = 0.0;
    for (std::int64_t k = 0; k < n; ++k) {
        acc += p[k];
        if (u < acc) return k;
    }
    for (std::int64_t k = n - 1; k >= 0; --k)
        if (p[k] > 0.0) return k;
    return n - 1;
}

}  // namespace detail

/// Tokens of the next frame given token history [n, gh, gw] and the actions
/// of transitions 1..n (the last one leads to the new frame). Starts fully
/// masked; each of decode_steps steps samples all masked positions, keeps the
/// most confident samples so that mask_schedule(N, s, S) stay masked, and
/// re-masks the rest. Temperature 0 decodes greedily.
inline TokenGrid iterative_decode(const TokenGrid& prev_tokens, const std::vector<int>& action_history,
                                  DynamicsModel& model, Rng& rng,
                                  std::vector<std::int64_t>* masked_counts = nullptr) {
    torch::NoGradGuard guard;
    const auto& cfg = model->config();
    LWM_REQUIRE(prev_tokens.tokens.dim() == 3 && prev_tokens.num_frames() >= 1, "iterative_decode: empty history");
    LWM_REQUIRE(prev_tokens.tokens.size(1) == cfg.grid_height && prev_tokens.tokens.size(2) == cfg.grid_width,
                "iterative_decode: token grid ", detail::shape_str(prev_tokens.tokens), " does not match ",
                cfg.grid_height, "x", cfg.grid_width);
    const auto n = prev_tokens.num_frames();
    LWM_REQUIRE(static_cast<std::int64_t>(action_history.size()) == n, "iterative_decode: need one action per history frame (",
                n, "), got ", action_history.size());
    for (int a : action_history)
        LWM_REQUIRE(a >= 0 && a < cfg.num_actions, "iterative_decode: action ", a, " outside [0, ", cfg.num_actions, ")");

    // Sliding context: the most recent max_frames - 1 frames.
    const auto ctx = std::min<std::int64_t>(n, cfg.max_frames - 1);
    const auto S = cfg.tokens_per_frame();
    auto history = prev_tokens.tokens.slice(0, n - ctx, n).reshape({1, ctx, S});
    std::vector<std::int64_t> acts(action_history.end() - ctx, action_history.end());
    auto actions = torch::tensor(acts, torch::kInt64).unsqueeze(0);

    std::vector<std::int64_t> current(static_cast<std::size_t>(S), cfg.mask_id());
    std::vector<bool> is_masked(static_cast<std::size_t>(S), true);
    std::int64_t still_masked = S;
    for (std::int64_t step = 1; step <= cfg.decode_steps; ++step) {
        auto frame = torch::tensor(current, torch::kInt64).view({1, 1, S});
        auto logits = model->forward(torch::cat({history, frame}, 1), actions)[0][ctx].to(torch::kFloat64);  // [S, K]
        auto probs = torch::softmax(logits, -1).contiguous();
        torch::Tensor sample_probs;
        if (cfg.temperature > 0.0) sample_probs = torch::softmax(logits / cfg.temperature, -1).contiguous();
        const auto K = probs.size(1);
        const double* p = probs.data_ptr<double>();

        std::vector<std::pair<double, std::int64_t>> scored;  // (confidence, position)
        std::vector<std::int64_t> proposal(static_cast<std::size_t>(S), cfg.mask_id());
        for (std::int64_t pos = 0; pos < S; ++pos) {
            if (!is_masked[static_cast<std::size_t>(pos)]) continue;
            std::int64_t tok;
            if (cfg.temperature > 0.0) {
                tok = detail::sample_categorical(sample_probs.data_ptr<double>() + pos * K, K, rng);
            } else {
                tok = std::max_element(p + pos * K, p + (pos + 1) * K) - (p + pos * K);
            }
            proposal[static_cast<std::size_t>(pos)] = tok;
            scored.emplace_back(p[pos * K + tok], pos);
        }
        const auto target = mask_schedule(S, step, cfg.decode_steps);
        const auto reveal = still_masked - target;
        std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        for (std::int64_t i = 0; i < reveal && i < static_cast<std::int64_t>(scored.size()); ++i) {
            const auto pos = scored[static_cast<std::size_t>(i)].second;
            current[static_cast<std::size_t>(pos)] = proposal[static_cast<std::size_t>(pos)];
            is_masked[static_cast<std::size_t>(pos)] = false;
        }
        still_masked = std::max<std::int64_t>(target, 0);
        if (masked_counts) masked_counts->push_back(still_masked);
    }
    return TokenGrid{torch::tensor(current, torch::kInt64).view({1, cfg.grid_height, cfg.grid_width})};
}

/// Autoregressive generation: tokenize the prompt, decode one frame per
/// action, de-tokenize. Returns prompt frames followed by the generated ones.
/// A prompt of p > 1 frames needs the p - 1 actions between its frames.
inline VideoClip rollout(const VideoClip& prompt, const ActionSequence& actions, VideoTokenizer& tokenizer,
                         DynamicsModel& dynamics, Rng& rng, const ActionSequence& prompt_actions = {}) {
    torch::NoGradGuard guard;
    LWM_REQUIRE(prompt.frames.dim() == 4 && prompt.num_frames() >= 1, "rollout: prompt needs at least one frame");
    LWM_REQUIRE(!actions.actions.empty(), "rollout: no actions");
    LWM_REQUIRE(static_cast<std::int64_t>(prompt_actions.actions.size()) == prompt.num_frames() - 1,
                "rollout: prompt of ", prompt.num_frames(), " frames needs ", prompt.num_frames() - 1,
                " prompt actions, got ", prompt_actions.actions.size());
    auto tokens = tok_encode(prompt, tokenizer).tokens;
    std::vector<int> history = prompt_actions.actions;
    for (int a : actions.actions) {
        history.push_back(a);
        auto next = iterative_decode(TokenGrid{tokens}, history, dynamics, rng);
        tokens = torch::cat({tokens, next.tokens}, 0);
    }
    auto decoded = tok_decode(TokenGrid{tokens}, tokenizer, prompt.fps);
    auto generated = decoded.frames.slice(0, prompt.num_frames(), tokens.size(0));
    return VideoClip{torch::cat({prompt.frames.to(torch::kFloat32), generated}, 0).contiguous(), prompt.fps};
}

}  // namespace lwm
