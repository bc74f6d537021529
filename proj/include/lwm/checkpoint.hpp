#pragma once

// Checkpoint archive: a named-array container with a JSON manifest.
//
// Layout (little-endian):
//   8 bytes   magic "LWMCKPT\0"
//   u32       format version
//   u64       manifest length M
//   M bytes   manifest JSON: {"format_version", "kind", "step", "config",
//             "state", "arrays": [{"name", "dtype", "shape", "offset", "nbytes"}]}
//   ...       array payloads, concatenated in manifest order (offsets are
//             relative to the start of the payload section)

#include "lwm/common.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

namespace lwm {

inline constexpr std::array<char, 8> kCheckpointMagic{'L', 'W', 'M', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::string kind;  // "tokenizer", "lam", "dynamics"
    std::int64_t step = 0;
    nlohmann::json config = nlohmann::json::object();
    nlohmann::json state = nlohmann::json::object();  // rng state, codebook settings, ...
    std::vector<std::pair<std::string, torch::Tensor>> arrays;

    const torch::Tensor& array(const std::string& name) const {
        for (const auto& [n, t] : arrays)
            if (n == name) return t;
        throw NotFound("checkpoint has no array '" + name + "'");
    }
    bool has_array(const std::string& name) const {
        for (const auto& [n, t] : arrays)
            if (n == name) return true;
        return false;
    }
};

namespace detail {

inline std::string dtype_name(torch::ScalarType t) {
    switch (t) {
        case torch::kFloat32: return "f32";
        case torch::kFloat64: return "f64";
        case torch::kInt64: return "i64";
        case torch::kInt32: return "i32";
        case torch::kUInt8: return "u8";
        case torch::kBool: return "bool";
        default: throw InvalidArgument(std::string("checkpoint: unsupported dtype ") + c10::toString(t));
    }
}

inline torch::ScalarType dtype_from_name(const std::string& s) {
    if (s == "f32") return torch::kFloat32;
    if (s == "f64") return torch::kFloat64;
    if (s == "i64") return torch::kInt64;
    if (s == "i32") return torch::kInt32;
    if (s == "u8") return torch::kUInt8;
    if (s == "bool") return torch::kBool;
    throw InvalidArgument("checkpoint: unknown dtype '" + s + "'");
}

template <typename T>
void write_le(std::ostream& os, T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) os.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

template <typename T>
T read_le(std::istream& is) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        const int c = is.get();
        if (c == EOF) throw InvalidArgument("checkpoint: truncated header");
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return static_cast<T>(v);
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    nlohmann::json manifest;
    manifest["format_version"] = kCheckpointVersion;
    manifest["kind"] = ckpt.kind;
    manifest["step"] = ckpt.step;
    manifest["config"] = ckpt.config;
    manifest["state"] = ckpt.state;
    manifest["arrays"] = nlohmann::json::array();
    std::vector<torch::Tensor> payloads;
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.arrays) {
        auto c = t.detach().to(torch::kCPU).contiguous();
        const auto nbytes = static_cast<std::uint64_t>(c.numel()) * c.element_size();
        manifest["arrays"].push_back({{"name", name},
                                      {"dtype", detail::dtype_name(c.scalar_type())},
                                      {"shape", c.sizes().vec()},
                                      {"offset", offset},
                                      {"nbytes", nbytes}});
        offset += nbytes;
        payloads.push_back(c);
    }
    const std::string text = manifest.dump();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write checkpoint " + tmp);
        os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
        detail::write_le<std::uint32_t>(os, kCheckpointVersion);
        detail::write_le<std::uint64_t>(os, text.size());
        os.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& p : payloads)
            os.write(static_cast<const char*>(p.data_ptr()), static_cast<std::streamsize>(p.numel() * p.element_size()));
        if (!os) throw std::runtime_error("failed writing checkpoint " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw NotFound("checkpoint not found: " + path.string());
    std::array<char, 8> magic{};
    is.read(magic.data(), magic.size());
    if (!is || magic != kCheckpointMagic) throw InvalidArgument("not a checkpoint archive: " + path.string());
    const auto version = detail::read_le<std::uint32_t>(is);
    if (version != kCheckpointVersion)
        throw InvalidArgument("unsupported checkpoint version " + std::to_string(version));
    const auto len = detail::read_le<std::uint64_t>(is);
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    if (!is) throw InvalidArgument("checkpoint: truncated manifest");
    const auto manifest = nlohmann::json::parse(text);

    Checkpoint ckpt;
    ckpt.kind = manifest.at("kind").get<std::string>();
    ckpt.step = manifest.at("step").get<std::int64_t>();
    ckpt.config = manifest.at("config");
    ckpt.state = manifest.at("state");
    const auto base = is.tellg();
    for (const auto& a : manifest.at("arrays")) {
        auto t = torch::empty(a.at("shape").get<std::vector<std::int64_t>>(),
                              detail::dtype_from_name(a.at("dtype").get<std::string>()));
        const auto nbytes = a.at("nbytes").get<std::uint64_t>();
        if (nbytes != static_cast<std::uint64_t>(t.numel()) * t.element_size())
            throw InvalidArgument("checkpoint: size mismatch for " + a.at("name").get<std::string>());
        is.seekg(base + static_cast<std::streamoff>(a.at("offset").get<std::uint64_t>()));
        is.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
        if (!is) throw InvalidArgument("checkpoint: truncated payload for " + a.at("name").get<std::string>());
        ckpt.arrays.emplace_back(a.at("name").get<std::string>(), t);
    }
    return ckpt;
}

/// Appends "param/<name>" and "buffer/<name>" arrays for every module tensor.
inline void add_module_state(Checkpoint& ckpt, const torch::nn::Module& module) {
    for (const auto& p : module.named_parameters()) ckpt.arrays.emplace_back("param/" + p.key(), p.value().detach().clone());
    for (const auto& b : module.named_buffers()) ckpt.arrays.emplace_back("buffer/" + b.key(), b.value().detach().clone());
}

/// Copies module tensors back from a checkpoint; every tensor must be present
/// with a matching shape.
inline void load_module_state(torch::nn::Module& module, const Checkpoint& ckpt) {
    torch::NoGradGuard guard;
    auto restore = [&](const std::string& name, torch::Tensor& dst) {
        const auto& src = ckpt.array(name);
        LWM_REQUIRE(src.sizes() == dst.sizes(), "checkpoint: shape mismatch for ", name, ": ", detail::shape_str(src),
                    " vs ", detail::shape_str(dst));
        dst.copy_(src);
    };
    for (auto& p : module.named_parameters()) restore("param/" + p.key(), p.value());
    for (auto& b : module.named_buffers()) restore("buffer/" + b.key(), b.value());
}

/// Adam moments of every parameter, stored as "adam/<param>/exp_avg" etc.
inline void add_adam_state(Checkpoint& ckpt, const torch::nn::Module& module, torch::optim::Adam& opt) {
    auto& state = opt.state();
    for (const auto& p : module.named_parameters()) {
        auto it = state.find(p.value().unsafeGetTensorImpl());
        if (it == state.end()) continue;
        auto& s = static_cast<torch::optim::AdamParamState&>(*it->second);
        ckpt.arrays.emplace_back("adam/" + p.key() + "/exp_avg", s.exp_avg().clone());
        ckpt.arrays.emplace_back("adam/" + p.key() + "/exp_avg_sq", s.exp_avg_sq().clone());
        ckpt.state["adam_step"][p.key()] = s.step();
    }
}

inline void load_adam_state(const Checkpoint& ckpt, const torch::nn::Module& module, torch::optim::Adam& opt) {
    auto& state = opt.state();
    for (const auto& p : module.named_parameters()) {
        const auto base = "adam/" + p.key();
        if (!ckpt.has_array(base + "/exp_avg")) continue;
        auto s = std::make_unique<torch::optim::AdamParamState>();
        s->step(ckpt.state.at("adam_step").at(p.key()).get<std::int64_t>());
        s->exp_avg(ckpt.array(base + "/exp_avg").clone());
        s->exp_avg_sq(ckpt.array(base + "/exp_avg_sq").clone());
        state[p.value().unsafeGetTensorImpl()] = std::move(s);
    }
}

}  // namespace lwm
