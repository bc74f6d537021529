#pragma once

// Vector quantization with a straight-through estimator, the commitment
// penalty, and exponential-moving-average codebook learning.

#include "lwm/common.hpp"

#include <algorithm>
#include <numeric>

namespace lwm {

struct CodebookConfig {
    std::int64_t num_codes = 64;
    std::int64_t dim = 8;
    double decay = 0.99;
    double epsilon = 1e-5;
    std::int64_t reseed_horizon = 256;  // updates without assignments before a code is reseeded

    void validate() const {
        LWM_REQUIRE(num_codes >= 1 && dim >= 1, "codebook needs at least one code of positive dimension");
        LWM_REQUIRE(decay > 0.0 && decay < 1.0, "codebook decay must lie in (0,1)");
        LWM_REQUIRE(epsilon > 0.0, "codebook epsilon must be positive");
        LWM_REQUIRE(reseed_horizon >= 1, "reseed_horizon must be positive");
    }
};

/// K x D code table plus its EMA statistics. All state lives in buffers so it
/// travels with the owning model's checkpoint.
class CodebookImpl : public torch::nn::Module {
public:
    explicit CodebookImpl(const CodebookConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        codes = register_buffer("codes", torch::randn({cfg.num_codes, cfg.dim}) * 0.1);
        ema_counts = register_buffer("ema_counts", torch::ones({cfg.num_codes}));
        ema_sums = register_buffer("ema_sums", codes.clone());
        unused_updates = register_buffer("unused_updates", torch::zeros({cfg.num_codes}, torch::kInt64));
        initialized = register_buffer("initialized", torch::zeros({1}, torch::kInt64));
    }

    const CodebookConfig& config() const { return cfg_; }
    std::int64_t size() const { return cfg_.num_codes; }
    std::int64_t dim() const { return cfg_.dim; }
    bool is_initialized() const { return initialized.item<std::int64_t>() != 0; }

    /// Seed codes from K vectors of `vectors` [N, D] drawn without replacement
    /// (cycling through a fresh permutation when N < K).
    void initialize_from(const torch::Tensor& vectors, Rng& rng) {
        torch::NoGradGuard guard;
        auto flat = vectors.detach().reshape({-1, cfg_.dim}).to(codes.dtype());
        const auto N = flat.size(0);
        LWM_REQUIRE(N >= 1, "initialize_from: empty batch");
        std::vector<std::int64_t> chosen;
        while (static_cast<std::int64_t>(chosen.size()) < cfg_.num_codes) {
            std::vector<std::int64_t> perm(static_cast<std::size_t>(N));
            std::iota(perm.begin(), perm.end(), 0);
            for (std::int64_t i = N - 1; i > 0; --i)
                std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(uniform_index(rng, i + 1))]);
            for (auto p : perm) {
                if (static_cast<std::int64_t>(chosen.size()) == cfg_.num_codes) break;
                chosen.push_back(p);
            }
        }
        codes.copy_(flat.index_select(0, torch::tensor(chosen, torch::kInt64)));
        ema_sums.copy_(codes);
        ema_counts.fill_(1.0);
        unused_updates.zero_();
        initialized.fill_(1);
    }

    torch::Tensor codes, ema_counts, ema_sums, unused_updates, initialized;

private:
    CodebookConfig cfg_;
};
TORCH_MODULE(Codebook);

struct QuantizationResult {
    torch::Tensor indices;     // [...], int64 in [0, K)
    torch::Tensor quantized;   // [..., D], rows of the codebook
    torch::Tensor ste_output;  // forward value == quantized, gradient passes straight to h
};

/// Index of the nearest code (squared Euclidean), lowest index on ties.
inline torch::Tensor nearest_code(const torch::Tensor& flat, const torch::Tensor& codes) {
    const auto N = flat.size(0), K = codes.size(0), D = codes.size(1);
    auto out = torch::empty({N}, torch::kInt64);
    // Bound the [rows, K, D] difference tensor to ~16M elements.
    const std::int64_t rows = std::max<std::int64_t>(1, (std::int64_t{1} << 24) / std::max<std::int64_t>(1, K * D));
    for (std::int64_t r = 0; r < N; r += rows) {
        auto chunk = flat.slice(0, r, std::min(N, r + rows));
        auto dist = (chunk.unsqueeze(1) - codes.unsqueeze(0)).pow(2).sum(-1);
        // argmin returns the first minimal index.
        out.slice(0, r, r + chunk.size(0)).copy_(std::get<1>(dist.min(1)));
    }
    return out;
}

inline QuantizationResult quantize(const torch::Tensor& h, Codebook& cb) {
    LWM_REQUIRE(h.dim() >= 1 && h.size(-1) == cb->dim(), "quantize: feature dim ", h.size(-1),
                " does not match codebook dim ", cb->dim());
    auto lead = h.sizes().slice(0, h.dim() - 1).vec();
    torch::Tensor idx;
    {
        torch::NoGradGuard guard;
        idx = nearest_code(h.detach().reshape({-1, cb->dim()}).to(cb->codes.dtype()), cb->codes);
    }
    auto q = cb->codes.index_select(0, idx).to(h.dtype());
    auto shape = lead;
    shape.push_back(cb->dim());
    q = q.view(shape);
    return {idx.view(lead), q, h + (q - h).detach()};
}

/// beta * mean over vectors of ||sg(z) - h||^2. No gradient reaches z.
inline torch::Tensor commitment_loss(const torch::Tensor& h, const torch::Tensor& z, double beta) {
    LWM_REQUIRE(h.sizes() == z.sizes(), "commitment_loss: shape mismatch ", detail::shape_str(h), " vs ",
                detail::shape_str(z));
    return beta * (z.detach() - h).pow(2).sum(-1).mean();
}

/// exp(entropy) of the empirical code-usage distribution.
inline double codebook_perplexity(const torch::Tensor& indices, std::int64_t num_codes) {
    auto counts = torch::bincount(indices.reshape({-1}), {}, num_codes).to(torch::kFloat64);
    auto p = counts / counts.sum();
    auto nz = p.masked_select(p > 0);
    return std::exp(-(nz * nz.log()).sum().item<double>());
}

/// One momentum step of the codebook toward the mean of its assigned vectors.
/// Codes that receive no assignments keep their value; after reseed_horizon
/// consecutive idle updates a code is moved onto a random vector of the batch.
inline void ema_update(Codebook& cb, const torch::Tensor& h, const torch::Tensor& indices, Rng& rng) {
    torch::NoGradGuard guard;
    const auto& cfg = cb->config();
    auto flat = h.detach().reshape({-1, cfg.dim}).to(cb->codes.dtype());
    auto idx = indices.reshape({-1});
    LWM_REQUIRE(idx.size(0) == flat.size(0), "ema_update: ", idx.size(0), " indices for ", flat.size(0), " vectors");
    const double d = cfg.decay;

    auto counts = torch::bincount(idx, {}, cfg.num_codes).to(cb->codes.dtype());
    auto sums = torch::zeros_like(cb->ema_sums).index_add_(0, idx, flat);
    cb->ema_counts.mul_(d).add_(counts, 1.0 - d);
    cb->ema_sums.mul_(d).add_(sums, 1.0 - d);

    auto used = counts > 0;
    auto updated = cb->ema_sums / cb->ema_counts.clamp_min(cfg.epsilon).unsqueeze(1);
    cb->codes.copy_(torch::where(used.unsqueeze(1), updated, cb->codes));
    cb->unused_updates.masked_fill_(used, 0);
    cb->unused_updates.add_((~used).to(torch::kInt64));

    auto stale = (cb->unused_updates >= cfg.reseed_horizon).nonzero().reshape({-1});
    for (std::int64_t i = 0; i < stale.size(0); ++i) {
        const auto k = stale[i].item<std::int64_t>();
        auto v = flat[uniform_index(rng, flat.size(0))];
        cb->codes[k].copy_(v);
        cb->ema_sums[k].copy_(v);
        cb->ema_counts[k].fill_(1.0);
        cb->unused_updates[k].fill_(0);
    }
}

}  // namespace lwm
