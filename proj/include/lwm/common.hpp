#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lwm {

/// Thrown when an input violates an operation's precondition (shape, range,
/// configuration). Maps to a 400-class error at the HTTP boundary.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown for missing resources (files, checkpoints, sessions).
class NotFound : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training diverged or produced a non-finite value.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

namespace detail {

template <typename... Args>
std::string concat(const Args&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

inline std::string shape_str(const torch::Tensor& t) {
    std::ostringstream os;
    os << t.sizes();
    return os.str();
}

}  // namespace detail

#define LWM_REQUIRE(cond, ...)                                                   \
    do {                                                                         \
        if (!(cond)) throw ::lwm::InvalidArgument(::lwm::detail::concat(__VA_ARGS__)); \
    } while (0)

inline void require_finite(const torch::Tensor& t, const char* what) {
    LWM_REQUIRE(torch::isfinite(t).all().item<bool>(), what, ": non-finite values in input");
}

/// Uniform double in [0, 1) from the 53 high bits; identical across standard
/// library implementations, unlike std::uniform_real_distribution.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Unbiased integer in [0, n).
inline std::int64_t uniform_index(Rng& rng, std::int64_t n) {
    const auto un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - (std::numeric_limits<std::uint64_t>::max() % un);
    std::uint64_t draw = rng();
    while (draw >= limit) draw = rng();
    return static_cast<std::int64_t>(draw % un);
}

inline std::string rng_state(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

inline void set_rng_state(Rng& rng, const std::string& state) {
    std::istringstream is(state);
    is >> rng;
    if (!is) throw InvalidArgument("corrupt rng state");
}

/// Deterministic child seed; splitmix64 finaliser over (seed, stream).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Split [.., H, W, C] frames into non-overlapping ph x pw patches:
/// returns [.., (H/ph)*(W/pw), ph*pw*C] with patches in row-major grid order.
inline torch::Tensor patchify(const torch::Tensor& frames, std::int64_t ph, std::int64_t pw) {
    const auto nd = frames.dim();
    LWM_REQUIRE(nd >= 3, "patchify: expected [..., H, W, C], got ", detail::shape_str(frames));
    const auto H = frames.size(nd - 3), W = frames.size(nd - 2), C = frames.size(nd - 1);
    LWM_REQUIRE(H % ph == 0 && W % pw == 0, "frame size ", H, "x", W, " not divisible by patch ", ph, "x", pw);
    auto lead = frames.sizes().slice(0, nd - 3).vec();
    auto shape = lead;
    for (auto v : {H / ph, ph, W / pw, pw, C}) shape.push_back(v);
    auto x = frames.reshape(shape);
    // [.., gh, ph, gw, pw, C] -> [.., gh, gw, ph, pw, C]
    const auto b = static_cast<std::int64_t>(lead.size());
    std::vector<std::int64_t> perm;
    for (std::int64_t i = 0; i < b; ++i) perm.push_back(i);
    for (auto v : {b, b + 2, b + 1, b + 3, b + 4}) perm.push_back(v);
    x = x.permute(perm).contiguous();
    auto out = lead;
    out.push_back((H / ph) * (W / pw));
    out.push_back(ph * pw * C);
    return x.reshape(out);
}

/// Inverse of patchify.
inline torch::Tensor unpatchify(const torch::Tensor& patches, std::int64_t H, std::int64_t W,
                                std::int64_t ph, std::int64_t pw, std::int64_t C) {
    const auto nd = patches.dim();
    auto lead = patches.sizes().slice(0, nd - 2).vec();
    auto shape = lead;
    for (auto v : {H / ph, W / pw, ph, pw, C}) shape.push_back(v);
    auto x = patches.reshape(shape);
    const auto b = static_cast<std::int64_t>(lead.size());
    std::vector<std::int64_t> perm;
    for (std::int64_t i = 0; i < b; ++i) perm.push_back(i);
    for (auto v : {b, b + 2, b + 1, b + 3, b + 4}) perm.push_back(v);
    x = x.permute(perm).contiguous();
    auto out = lead;
    for (auto v : {H, W, C}) out.push_back(v);
    return x.reshape(out);
}

}  // namespace lwm
