#pragma once

// Evaluation metrics: PSNR, SSIM, delta-PSNR, Frechet distance with a
// pluggable clip feature extractor, and adjusted mutual information.

#include "lwm/data.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace lwm {

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// 10 log10(peak^2 / MSE) over all elements; +inf when the inputs are identical.
inline double psnr(const torch::Tensor& a, const torch::Tensor& b, double peak = 1.0) {
    LWM_REQUIRE(a.sizes() == b.sizes(), "psnr: shape mismatch ", detail::shape_str(a), " vs ", detail::shape_str(b));
    const double mse = (a.to(torch::kFloat64) - b.to(torch::kFloat64)).pow(2).mean().item<double>();
    if (mse == 0.0) return kInfinitePsnr;
    return 10.0 * std::log10(peak * peak / mse);
}

struct SsimOptions {
    std::int64_t window = 7;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double peak = 1.0;
};

namespace detail {

inline torch::Tensor gaussian_window(std::int64_t size, double sigma) {
    auto x = torch::arange(size, torch::kFloat64) - static_cast<double>(size - 1) / 2.0;
    auto g = torch::exp(-x.pow(2) / (2.0 * sigma * sigma));
    g = g / g.sum();
    return torch::outer(g, g);
}

}  // namespace detail

/// Mean local SSIM of two images [H, W, C] (or clips [T, H, W, C], averaged
/// over frames) with a Gaussian window, valid positions only.
inline double ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& opt = {}) {
    LWM_REQUIRE(a.sizes() == b.sizes(), "ssim: shape mismatch ", detail::shape_str(a), " vs ", detail::shape_str(b));
    LWM_REQUIRE(a.dim() == 3 || a.dim() == 4, "ssim: expected [H, W, C] or [T, H, W, C]");
    auto x = (a.dim() == 3 ? a.unsqueeze(0) : a).to(torch::kFloat64);
    auto y = (b.dim() == 3 ? b.unsqueeze(0) : b).to(torch::kFloat64);
    const auto H = x.size(1), W = x.size(2), C = x.size(3);
    LWM_REQUIRE(H >= opt.window && W >= opt.window, "ssim: image ", H, "x", W, " smaller than window ", opt.window);
    // [T, H, W, C] -> [T*C, 1, H, W]
    auto to_planes = [&](const torch::Tensor& t) { return t.permute({0, 3, 1, 2}).reshape({-1, 1, H, W}); };
    x = to_planes(x);
    y = to_planes(y);
    auto w = detail::gaussian_window(opt.window, opt.sigma).view({1, 1, opt.window, opt.window});
    auto filt = [&](const torch::Tensor& t) { return torch::conv2d(t, w); };
    auto mx = filt(x), my = filt(y);
    auto sxx = filt(x * x) - mx * mx;
    auto syy = filt(y * y) - my * my;
    auto sxy = filt(x * y) - mx * my;
    const double c1 = (opt.k1 * opt.peak) * (opt.k1 * opt.peak);
    const double c2 = (opt.k2 * opt.peak) * (opt.k2 * opt.peak);
    auto map = ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
    (void)C;
    return map.mean().item<double>();
}

/// Difference of mean PSNRs: GT-action generations minus random-action ones.
inline double delta_psnr(double mean_psnr_gt, double mean_psnr_random) { return mean_psnr_gt - mean_psnr_random; }

/// Mean PSNR of the first `horizon` generated frames of each clip against its
/// reference. Clips are [T, H, W, 3] holding generated frames only.
inline double mean_psnr_at(const std::vector<torch::Tensor>& generated, const std::vector<torch::Tensor>& reference,
                           std::int64_t horizon) {
    LWM_REQUIRE(generated.size() == reference.size() && !generated.empty(), "mean_psnr_at: misaligned clip sets");
    double total = 0.0;
    for (std::size_t i = 0; i < generated.size(); ++i) {
        LWM_REQUIRE(generated[i].size(0) >= horizon && reference[i].size(0) >= horizon,
                    "mean_psnr_at: clip shorter than horizon ", horizon);
        total += psnr(generated[i].slice(0, 0, horizon), reference[i].slice(0, 0, horizon));
    }
    return total / static_cast<double>(generated.size());
}

inline double mean_ssim_at(const std::vector<torch::Tensor>& generated, const std::vector<torch::Tensor>& reference,
                           std::int64_t horizon) {
    LWM_REQUIRE(generated.size() == reference.size() && !generated.empty(), "mean_ssim_at: misaligned clip sets");
    double total = 0.0;
    for (std::size_t i = 0; i < generated.size(); ++i)
        total += ssim(generated[i].slice(0, 0, horizon), reference[i].slice(0, 0, horizon));
    return total / static_cast<double>(generated.size());
}

/// delta-PSNR at one horizon from aligned clip sets (generated frames only).
inline double delta_psnr(const std::vector<torch::Tensor>& gen_gt, const std::vector<torch::Tensor>& gen_random,
                         const std::vector<torch::Tensor>& reference, std::int64_t horizon) {
    LWM_REQUIRE(gen_gt.size() == gen_random.size() && gen_gt.size() == reference.size(),
                "delta_psnr: misaligned clip sets");
    return delta_psnr(mean_psnr_at(gen_gt, reference, horizon), mean_psnr_at(gen_random, reference, horizon));
}

struct GaussianStats {
    torch::Tensor mean;        // [F], float64
    torch::Tensor covariance;  // [F, F], float64
};

/// Sample mean and unbiased covariance of features [N, F].
inline GaussianStats fit_gaussian(const torch::Tensor& features) {
    LWM_REQUIRE(features.dim() == 2 && features.size(0) >= 2, "fit_gaussian: need at least two feature rows");
    auto f = features.to(torch::kFloat64);
    auto mu = f.mean(0);
    auto centered = f - mu;
    auto cov = torch::matmul(centered.t(), centered) / static_cast<double>(f.size(0) - 1);
    return {mu, cov};
}

namespace detail {

// Symmetric PSD square root; eigenvalues below zero (roundoff) are clipped.
inline torch::Tensor psd_sqrt(const torch::Tensor& m) {
    auto sym = (m + m.t()) / 2.0;
    auto [evals, evecs] = torch::linalg_eigh(sym);
    auto root = evals.clamp_min(0.0).sqrt();
    return torch::matmul(evecs * root.unsqueeze(0), evecs.t());
}

}  // namespace detail

/// ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}). The trace of the product
/// root is evaluated as tr((S1^{1/2} S2 S1^{1/2})^{1/2}), which is symmetric.
inline double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    LWM_REQUIRE(a.mean.dim() == 1 && b.mean.dim() == 1 && a.mean.size(0) == b.mean.size(0) &&
                    a.covariance.sizes() == b.covariance.sizes() && a.covariance.size(0) == a.mean.size(0),
                "frechet_distance: dimension mismatch");
    auto s1 = a.covariance.to(torch::kFloat64), s2 = b.covariance.to(torch::kFloat64);
    auto r1 = detail::psd_sqrt(s1);
    auto inner = torch::matmul(torch::matmul(r1, s2), r1);
    inner = (inner + inner.t()) / 2.0;
    const double tr_root = torch::linalg_eigvalsh(inner).clamp_min(0.0).sqrt().sum().item<double>();
    const double mean_term = (a.mean.to(torch::kFloat64) - b.mean.to(torch::kFloat64)).pow(2).sum().item<double>();
    const double d = mean_term + s1.trace().item<double>() + s2.trace().item<double>() - 2.0 * tr_root;
    return std::max(d, 0.0);
}

/// Maps a clip to a fixed-length feature vector. Distances are comparable only
/// between runs that use the same extractor.
class ClipFeatureExtractor {
public:
    virtual ~ClipFeatureExtractor() = default;
    virtual std::string name() const = 0;
    virtual torch::Tensor extract(const torch::Tensor& clip) const = 0;  // [T, H, W, 3] -> [F]
};

/// Area-downsamples every frame to a small grid and flattens the clip. Not
/// comparable to published FVD values, which use a learned video network.
class DownsampleFlattenExtractor final : public ClipFeatureExtractor {
public:
    DownsampleFlattenExtractor(std::int64_t height = 4, std::int64_t width = 6) : height_(height), width_(width) {}

    std::string name() const override {
        return "downsample-flatten-" + std::to_string(height_) + "x" + std::to_string(width_);
    }

    torch::Tensor extract(const torch::Tensor& clip) const override {
        namespace F = torch::nn::functional;
        auto x = clip.to(torch::kFloat64).permute({0, 3, 1, 2});
        auto pooled = F::adaptive_avg_pool2d(x, F::AdaptiveAvgPool2dFuncOptions({height_, width_}));
        return pooled.reshape({-1});
    }

private:
    std::int64_t height_, width_;
};

/// Frechet distance between Gaussian fits of extractor features of two clip
/// sets; every clip must have exactly `total_frames` frames.
inline double fvd_eval(const std::vector<torch::Tensor>& real_clips, const std::vector<torch::Tensor>& gen_clips,
                       const ClipFeatureExtractor& extractor, std::int64_t total_frames = 10) {
    LWM_REQUIRE(real_clips.size() >= 2 && gen_clips.size() >= 2, "fvd_eval: need at least 2 clips per set");
    auto features = [&](const std::vector<torch::Tensor>& clips) {
        std::vector<torch::Tensor> rows;
        for (const auto& c : clips) {
            LWM_REQUIRE(c.dim() == 4 && c.size(0) == total_frames, "fvd_eval: clips must have exactly ", total_frames,
                        " frames, got ", detail::shape_str(c));
            rows.push_back(extractor.extract(c));
        }
        return torch::stack(rows);
    };
    return frechet_distance(fit_gaussian(features(real_clips)), fit_gaussian(features(gen_clips)));
}

/// Adjusted mutual information with arithmetic-mean normalisation (the
/// scikit-learn default), computed with natural logarithms.
inline double adjusted_mutual_info(const std::vector<int>& labels_true, const std::vector<int>& labels_pred) {
    LWM_REQUIRE(labels_true.size() == labels_pred.size(), "adjusted_mutual_info: length mismatch");
    const auto n = static_cast<std::int64_t>(labels_true.size());
    std::map<int, std::int64_t> ai, bj;
    std::map<std::pair<int, int>, std::int64_t> nij;
    for (std::int64_t i = 0; i < n; ++i) {
        ++ai[labels_true[static_cast<std::size_t>(i)]];
        ++bj[labels_pred[static_cast<std::size_t>(i)]];
        ++nij[{labels_true[static_cast<std::size_t>(i)], labels_pred[static_cast<std::size_t>(i)]}];
    }
    if ((ai.size() == 1 && bj.size() == 1) || n == 0) return 1.0;
    const double N = static_cast<double>(n);

    double mi = 0.0;
    for (const auto& [key, c] : nij) {
        const double v = static_cast<double>(c);
        mi += v / N * std::log(N * v / (static_cast<double>(ai[key.first]) * static_cast<double>(bj[key.second])));
    }
    auto entropy = [&](const std::map<int, std::int64_t>& counts) {
        double h = 0.0;
        for (const auto& [k, c] : counts) {
            const double p = static_cast<double>(c) / N;
            h -= p * std::log(p);
        }
        return h;
    };
    // Expected MI under the hypergeometric (permutation) model.
    double emi = 0.0;
    for (const auto& [ka, a] : ai) {
        for (const auto& [kb, b] : bj) {
            const std::int64_t lo = std::max<std::int64_t>(1, a + b - n);
            const std::int64_t hi = std::min(a, b);
            for (std::int64_t k = lo; k <= hi; ++k) {
                const double kd = static_cast<double>(k);
                const double term1 = kd / N * std::log(N * kd / (static_cast<double>(a) * static_cast<double>(b)));
                const double log_p = std::lgamma(a + 1.0) + std::lgamma(b + 1.0) + std::lgamma(N - a + 1.0) +
                                     std::lgamma(N - b + 1.0) - std::lgamma(N + 1.0) - std::lgamma(kd + 1.0) -
                                     std::lgamma(a - kd + 1.0) - std::lgamma(b - kd + 1.0) -
                                     std::lgamma(N - a - b + kd + 1.0);
                emi += term1 * std::exp(log_p);
            }
        }
    }
    const double normalizer = 0.5 * (entropy(ai) + entropy(bj));
    double denom = normalizer - emi;
    const double eps = std::numeric_limits<double>::epsilon();
    denom = denom < 0.0 ? std::min(denom, -eps) : std::max(denom, eps);
    return (mi - emi) / denom;
}

/// Scores of one prompt protocol at horizons {2, 4, 6}.
struct ProtocolScores {
    std::int64_t prompt_frames = 1;
    std::map<std::int64_t, double> psnr_gt, psnr_random;
    std::map<std::int64_t, double> ssim_gt, ssim_random;
    std::map<std::int64_t, double> delta_psnr;
    double fvd_gt = 0.0;
    double fvd_random = 0.0;
};

struct EvalReport {
    std::vector<ProtocolScores> protocols;
    std::int64_t total_frames = 10;
    std::int64_t num_clips = 0;
    std::uint64_t seed = 0;
    std::string extractor;
    std::string frames_scored = "generated-only";
    double tokenizer_psnr = 0.0;  // held-out reconstruction
    double lam_ami = 0.0;         // latent actions vs ground-truth labels

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["protocol"] = {{"total_frames", total_frames},
                         {"num_clips", num_clips},
                         {"seed", seed},
                         {"extractor", extractor},
                         {"frames_scored", frames_scored}};
        j["tokenizer_psnr"] = tokenizer_psnr;
        j["lam_ami"] = lam_ami;
        for (const auto& p : protocols) {
            nlohmann::json pj;
            pj["prompt_frames"] = p.prompt_frames;
            auto put = [&](const char* key, const std::map<std::int64_t, double>& m) {
                for (const auto& [h, v] : m) pj[key][std::to_string(h)] = v;
            };
            put("psnr_gt", p.psnr_gt);
            put("psnr_random", p.psnr_random);
            put("ssim_gt", p.ssim_gt);
            put("ssim_random", p.ssim_random);
            put("delta_psnr", p.delta_psnr);
            pj["fvd_gt"] = p.fvd_gt;
            pj["fvd_random"] = p.fvd_random;
            j["protocols"].push_back(pj);
        }
        return j;
    }

    /// Flat "key=value" lines, values printed with round-trip precision.
    std::string to_kv_text() const {
        std::string out;
        auto line = [&](const std::string& k, const std::string& v) { out += k + "=" + v + "\n"; };
        auto num = [](double v) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            return std::string(buf);
        };
        line("protocol.total_frames", std::to_string(total_frames));
        line("protocol.num_clips", std::to_string(num_clips));
        line("protocol.seed", std::to_string(seed));
        line("protocol.extractor", extractor);
        line("protocol.frames_scored", frames_scored);
        line("tokenizer_psnr", num(tokenizer_psnr));
        line("lam_ami", num(lam_ami));
        for (const auto& p : protocols) {
            const auto pre = "prompt" + std::to_string(p.prompt_frames) + ".";
            for (const auto& [h, v] : p.psnr_gt) line(pre + "psnr_gt.h" + std::to_string(h), num(v));
            for (const auto& [h, v] : p.psnr_random) line(pre + "psnr_random.h" + std::to_string(h), num(v));
            for (const auto& [h, v] : p.ssim_gt) line(pre + "ssim_gt.h" + std::to_string(h), num(v));
            for (const auto& [h, v] : p.ssim_random) line(pre + "ssim_random.h" + std::to_string(h), num(v));
            for (const auto& [h, v] : p.delta_psnr) line(pre + "delta_psnr.h" + std::to_string(h), num(v));
            line(pre + "fvd_gt", num(p.fvd_gt));
            line(pre + "fvd_random", num(p.fvd_random));
        }
        return out;
    }

    /// Human-readable grid: one block per prompt protocol, GT / random / delta rows.
    std::string to_table() const {
        std::string out;
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%-18s %8s %8s %8s | %6s %6s %6s | %10s\n", "frames generated", "2", "4", "6",
                      "2", "4", "6", "FVD10");
        out += "                     PSNR (dB, up)            | SSIM (up)            | (down)\n";
        out += buf;
        for (const auto& p : protocols) {
            out += "Prompt frames: " + std::to_string(p.prompt_frames) + "\n";
            auto row = [&](const char* name, const std::map<std::int64_t, double>& ps,
                           const std::map<std::int64_t, double>* ss, double fvd) {
                std::snprintf(buf, sizeof(buf), "%-18s %8.2f %8.2f %8.2f", name, ps.at(2), ps.at(4), ps.at(6));
                out += buf;
                if (ss) {
                    std::snprintf(buf, sizeof(buf), " | %6.3f %6.3f %6.3f | %10.3f\n", ss->at(2), ss->at(4), ss->at(6), fvd);
                } else {
                    std::snprintf(buf, sizeof(buf), " | %6s %6s %6s | %10s\n", "-", "-", "-", "-");
                }
                out += buf;
            };
            row("GT action", p.psnr_gt, &p.ssim_gt, p.fvd_gt);
            row("Non-GT action", p.psnr_random, &p.ssim_random, p.fvd_random);
            row("delta PSNR", p.delta_psnr, nullptr, 0.0);
        }
        std::snprintf(buf, sizeof(buf), "extractor: %s   clips: %lld   seed: %llu\n", extractor.c_str(),
                      static_cast<long long>(num_clips), static_cast<unsigned long long>(seed));
        out += buf;
        return out;
    }
};

}  // namespace lwm
