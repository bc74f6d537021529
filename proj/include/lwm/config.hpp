#pragma once

// Run configuration. Files are INI-style "key = value" text with [section]
// headers; every key is documented in configs/README.md and unknown keys are
// rejected.

#include "lwm/dynamics.hpp"
#include "lwm/lam.hpp"
#include "lwm/tokenizer.hpp"

#include <boost/program_options.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace lwm {

inline void to_json(nlohmann::json& j, const STBlockConfig& c) {
    j = {{"num_layers", c.num_layers}, {"d_model", c.d_model}, {"num_heads", c.num_heads}, {"ff_multiplier", c.ff_multiplier}};
}
inline void from_json(const nlohmann::json& j, STBlockConfig& c) {
    j.at("num_layers").get_to(c.num_layers);
    j.at("d_model").get_to(c.d_model);
    j.at("num_heads").get_to(c.num_heads);
    j.at("ff_multiplier").get_to(c.ff_multiplier);
}

inline void to_json(nlohmann::json& j, const TokenizerConfig& c) {
    j = {{"encoder", c.encoder},           {"decoder", c.decoder},
         {"frame_height", c.frame_height}, {"frame_width", c.frame_width},
         {"patch_height", c.patch_height}, {"patch_width", c.patch_width},
         {"num_codes", c.num_codes},       {"latent_dim", c.latent_dim},
         {"max_frames", c.max_frames},     {"beta", c.beta},
         {"learning_rate", c.learning_rate}, {"adam_beta1", c.adam_beta1},
         {"adam_beta2", c.adam_beta2},     {"codebook_decay", c.codebook_decay},
         {"codebook_epsilon", c.codebook_epsilon}, {"codebook_reseed_horizon", c.codebook_reseed_horizon}};
}
inline void from_json(const nlohmann::json& j, TokenizerConfig& c) {
    j.at("encoder").get_to(c.encoder);
    j.at("decoder").get_to(c.decoder);
    j.at("frame_height").get_to(c.frame_height);
    j.at("frame_width").get_to(c.frame_width);
    j.at("patch_height").get_to(c.patch_height);
    j.at("patch_width").get_to(c.patch_width);
    j.at("num_codes").get_to(c.num_codes);
    j.at("latent_dim").get_to(c.latent_dim);
    j.at("max_frames").get_to(c.max_frames);
    j.at("beta").get_to(c.beta);
    j.at("learning_rate").get_to(c.learning_rate);
    j.at("adam_beta1").get_to(c.adam_beta1);
    j.at("adam_beta2").get_to(c.adam_beta2);
    j.at("codebook_decay").get_to(c.codebook_decay);
    j.at("codebook_epsilon").get_to(c.codebook_epsilon);
    j.at("codebook_reseed_horizon").get_to(c.codebook_reseed_horizon);
}

inline void to_json(nlohmann::json& j, const LamConfig& c) {
    j = {{"encoder", c.encoder},           {"decoder", c.decoder},
         {"frame_height", c.frame_height}, {"frame_width", c.frame_width},
         {"patch_height", c.patch_height}, {"patch_width", c.patch_width},
         {"num_actions", c.num_actions},   {"latent_dim", c.latent_dim},
         {"max_frames", c.max_frames},     {"beta", c.beta},
         {"learning_rate", c.learning_rate}, {"adam_beta1", c.adam_beta1},
         {"adam_beta2", c.adam_beta2},     {"codebook_decay", c.codebook_decay},
         {"codebook_epsilon", c.codebook_epsilon}, {"codebook_reseed_horizon", c.codebook_reseed_horizon}};
}
inline void from_json(const nlohmann::json& j, LamConfig& c) {
    j.at("encoder").get_to(c.encoder);
    j.at("decoder").get_to(c.decoder);
    j.at("frame_height").get_to(c.frame_height);
    j.at("frame_width").get_to(c.frame_width);
    j.at("patch_height").get_to(c.patch_height);
    j.at("patch_width").get_to(c.patch_width);
    j.at("num_actions").get_to(c.num_actions);
    j.at("latent_dim").get_to(c.latent_dim);
    j.at("max_frames").get_to(c.max_frames);
    j.at("beta").get_to(c.beta);
    j.at("learning_rate").get_to(c.learning_rate);
    j.at("adam_beta1").get_to(c.adam_beta1);
    j.at("adam_beta2").get_to(c.adam_beta2);
    j.at("codebook_decay").get_to(c.codebook_decay);
    j.at("codebook_epsilon").get_to(c.codebook_epsilon);
    j.at("codebook_reseed_horizon").get_to(c.codebook_reseed_horizon);
}

inline void to_json(nlohmann::json& j, const DynamicsConfig& c) {
    j = {{"stack", c.stack},
         {"num_codes", c.num_codes},
         {"num_actions", c.num_actions},
         {"grid_height", c.grid_height},
         {"grid_width", c.grid_width},
         {"max_frames", c.max_frames},
         {"decode_steps", c.decode_steps},
         {"temperature", c.temperature},
         {"learning_rate", c.learning_rate},
         {"adam_beta1", c.adam_beta1},
         {"adam_beta2", c.adam_beta2}};
}
inline void from_json(const nlohmann::json& j, DynamicsConfig& c) {
    j.at("stack").get_to(c.stack);
    j.at("num_codes").get_to(c.num_codes);
    j.at("num_actions").get_to(c.num_actions);
    j.at("grid_height").get_to(c.grid_height);
    j.at("grid_width").get_to(c.grid_width);
    j.at("max_frames").get_to(c.max_frames);
    j.at("decode_steps").get_to(c.decode_steps);
    j.at("temperature").get_to(c.temperature);
    j.at("learning_rate").get_to(c.learning_rate);
    j.at("adam_beta1").get_to(c.adam_beta1);
    j.at("adam_beta2").get_to(c.adam_beta2);
}

struct DataConfig {
    std::string source = "synthetic";  // "synthetic" or "directory"
    std::string directory;             // dataset root when source = directory
    std::string eval_directory;        // held-out clips (with eval_labels) when source = directory
    std::int64_t train_clips = 200;
    std::int64_t eval_clips = 40;
    std::int64_t num_frames = 8;
    std::int64_t eval_frames = 10;
    SyntheticSceneConfig scene;  // frame size, sprites, pulse; seed is derived per clip
    double sample_fps = 1.0;     // directory source preprocessing
    std::int64_t crop_width = 900;
    std::int64_t crop_height = 600;
};

struct TrainConfig {
    std::int64_t batch_size = 8;
    std::int64_t tokenizer_steps = 2000;
    std::int64_t lam_steps = 2000;
    std::int64_t dynamics_steps = 2000;
    std::int64_t checkpoint_every = 500;
    std::int64_t log_every = 50;
    std::int64_t threads = 1;
    double grad_clip = 1.0;  // global norm; <= 0 disables
};

struct EvalConfig {
    std::vector<std::int64_t> prompt_frames{1, 4};
    std::vector<std::int64_t> horizons{2, 4, 6};
    std::int64_t total_frames = 10;
    std::int64_t extractor_height = 4;
    std::int64_t extractor_width = 6;
};

struct RunConfig {
    std::uint64_t seed = 0;
    DataConfig data;
    TokenizerConfig tokenizer = TokenizerConfig::desk();
    LamConfig lam = LamConfig::desk();
    DynamicsConfig dynamics = DynamicsConfig::desk();
    TrainConfig train;
    EvalConfig eval;

    /// Fills the derived dynamics fields from the tokenizer and LAM configs and
    /// checks cross-model consistency.
    void finalize() {
        tokenizer.frame_height = data.scene.frame_height;
        tokenizer.frame_width = data.scene.frame_width;
        dynamics.num_codes = tokenizer.num_codes;
        dynamics.num_actions = lam.num_actions;
        dynamics.grid_height = tokenizer.grid_height();
        dynamics.grid_width = tokenizer.grid_width();
        tokenizer.validate();
        lam.validate();
        dynamics.validate();
        LWM_REQUIRE(data.source == "synthetic" || data.source == "directory", "data.source must be 'synthetic' or 'directory'");
        LWM_REQUIRE(data.num_frames >= 2 && data.num_frames <= tokenizer.max_frames && data.num_frames <= lam.max_frames &&
                        data.num_frames <= dynamics.max_frames,
                    "data.num_frames must be in [2, max_frames of every model]");
        LWM_REQUIRE(train.batch_size >= 1, "train.batch_size must be positive");
        LWM_REQUIRE(train.threads >= 1, "train.threads must be positive");
        for (auto p : eval.prompt_frames) {
            LWM_REQUIRE(p >= 1 && p < eval.total_frames, "eval.prompt_frames entries must lie in [1, total_frames)");
            for (auto h : eval.horizons)
                LWM_REQUIRE(p + h <= eval.total_frames, "eval: prompt ", p, " + horizon ", h, " exceeds total_frames");
        }
        LWM_REQUIRE(data.eval_frames >= eval.total_frames, "data.eval_frames must be >= eval.total_frames");
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["seed"] = seed;
        j["tokenizer"] = tokenizer;
        j["lam"] = lam;
        j["dynamics"] = dynamics;
        return j;
    }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

inline std::vector<std::int64_t> split_ints(const std::string& s) {
    std::vector<std::int64_t> out;
    for (const auto& t : split_list(s)) out.push_back(std::stoll(t));
    return out;
}

inline std::string join_ints(const std::vector<std::int64_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

inline void add_block(boost::program_options::options_description& d, const std::string& prefix, STBlockConfig& b) {
    namespace po = boost::program_options;
    d.add_options()((prefix + "_layers").c_str(), po::value(&b.num_layers)->default_value(b.num_layers))(
        (prefix + "_d_model").c_str(), po::value(&b.d_model)->default_value(b.d_model))(
        (prefix + "_heads").c_str(), po::value(&b.num_heads)->default_value(b.num_heads))(
        (prefix + "_ff_multiplier").c_str(), po::value(&b.ff_multiplier)->default_value(b.ff_multiplier));
}

}  // namespace detail

/// Parses an INI run configuration; keys absent from the file keep the
/// desk-scale defaults. Throws InvalidArgument on unknown keys or bad values.
inline RunConfig parse_run_config(std::istream& in) {
    namespace po = boost::program_options;
    RunConfig c;
    std::string actions = "stay,up,down,left,right";
    std::string prompts = detail::join_ints(c.eval.prompt_frames);
    std::string horizons = detail::join_ints(c.eval.horizons);
    std::int64_t tok_patch = c.tokenizer.patch_height, lam_patch = c.lam.patch_height;

    po::options_description d;
    auto& s = c.data.scene;
    d.add_options()("run.seed", po::value(&c.seed)->default_value(c.seed));
    d.add_options()("data.source", po::value(&c.data.source)->default_value(c.data.source))(
        "data.directory", po::value(&c.data.directory)->default_value(c.data.directory))(
        "data.eval_directory", po::value(&c.data.eval_directory)->default_value(c.data.eval_directory))(
        "data.train_clips", po::value(&c.data.train_clips)->default_value(c.data.train_clips))(
        "data.eval_clips", po::value(&c.data.eval_clips)->default_value(c.data.eval_clips))(
        "data.num_frames", po::value(&c.data.num_frames)->default_value(c.data.num_frames))(
        "data.eval_frames", po::value(&c.data.eval_frames)->default_value(c.data.eval_frames))(
        "data.frame_height", po::value(&s.frame_height)->default_value(s.frame_height))(
        "data.frame_width", po::value(&s.frame_width)->default_value(s.frame_width))(
        "data.num_sprites", po::value(&s.num_sprites)->default_value(s.num_sprites))(
        "data.sprite_size", po::value(&s.sprite_size)->default_value(s.sprite_size))(
        "data.sprite_speed", po::value(&s.sprite_speed)->default_value(s.sprite_speed))(
        "data.actions", po::value(&actions)->default_value(actions))(
        "data.background_pulse_amplitude",
        po::value(&s.background_pulse_amplitude)->default_value(s.background_pulse_amplitude))(
        "data.pulse_period", po::value(&s.pulse_period)->default_value(s.pulse_period))(
        "data.fps", po::value(&s.fps)->default_value(s.fps))(
        "data.sample_fps", po::value(&c.data.sample_fps)->default_value(c.data.sample_fps))(
        "data.crop_width", po::value(&c.data.crop_width)->default_value(c.data.crop_width))(
        "data.crop_height", po::value(&c.data.crop_height)->default_value(c.data.crop_height));

    auto& t = c.tokenizer;
    detail::add_block(d, "tokenizer.encoder", t.encoder);
    detail::add_block(d, "tokenizer.decoder", t.decoder);
    d.add_options()("tokenizer.patch_size", po::value(&tok_patch)->default_value(tok_patch))(
        "tokenizer.num_codes", po::value(&t.num_codes)->default_value(t.num_codes))(
        "tokenizer.latent_dim", po::value(&t.latent_dim)->default_value(t.latent_dim))(
        "tokenizer.max_frames", po::value(&t.max_frames)->default_value(t.max_frames))(
        "tokenizer.beta", po::value(&t.beta)->default_value(t.beta))(
        "tokenizer.learning_rate", po::value(&t.learning_rate)->default_value(t.learning_rate))(
        "tokenizer.adam_beta1", po::value(&t.adam_beta1)->default_value(t.adam_beta1))(
        "tokenizer.adam_beta2", po::value(&t.adam_beta2)->default_value(t.adam_beta2))(
        "tokenizer.codebook_decay", po::value(&t.codebook_decay)->default_value(t.codebook_decay))(
        "tokenizer.codebook_epsilon", po::value(&t.codebook_epsilon)->default_value(t.codebook_epsilon))(
        "tokenizer.reseed_horizon", po::value(&t.codebook_reseed_horizon)->default_value(t.codebook_reseed_horizon));

    auto& l = c.lam;
    detail::add_block(d, "lam.encoder", l.encoder);
    detail::add_block(d, "lam.decoder", l.decoder);
    d.add_options()("lam.frame_height", po::value(&l.frame_height)->default_value(l.frame_height))(
        "lam.frame_width", po::value(&l.frame_width)->default_value(l.frame_width))(
        "lam.patch_size", po::value(&lam_patch)->default_value(lam_patch))(
        "lam.num_actions", po::value(&l.num_actions)->default_value(l.num_actions))(
        "lam.latent_dim", po::value(&l.latent_dim)->default_value(l.latent_dim))(
        "lam.max_frames", po::value(&l.max_frames)->default_value(l.max_frames))(
        "lam.beta", po::value(&l.beta)->default_value(l.beta))(
        "lam.learning_rate", po::value(&l.learning_rate)->default_value(l.learning_rate))(
        "lam.adam_beta1", po::value(&l.adam_beta1)->default_value(l.adam_beta1))(
        "lam.adam_beta2", po::value(&l.adam_beta2)->default_value(l.adam_beta2))(
        "lam.codebook_decay", po::value(&l.codebook_decay)->default_value(l.codebook_decay))(
        "lam.codebook_epsilon", po::value(&l.codebook_epsilon)->default_value(l.codebook_epsilon))(
        "lam.reseed_horizon", po::value(&l.codebook_reseed_horizon)->default_value(l.codebook_reseed_horizon));

    auto& y = c.dynamics;
    detail::add_block(d, "dynamics.stack", y.stack);
    d.add_options()("dynamics.max_frames", po::value(&y.max_frames)->default_value(y.max_frames))(
        "dynamics.decode_steps", po::value(&y.decode_steps)->default_value(y.decode_steps))(
        "dynamics.temperature", po::value(&y.temperature)->default_value(y.temperature))(
        "dynamics.learning_rate", po::value(&y.learning_rate)->default_value(y.learning_rate))(
        "dynamics.adam_beta1", po::value(&y.adam_beta1)->default_value(y.adam_beta1))(
        "dynamics.adam_beta2", po::value(&y.adam_beta2)->default_value(y.adam_beta2));

    auto& tr = c.train;
    d.add_options()("train.batch_size", po::value(&tr.batch_size)->default_value(tr.batch_size))(
        "train.tokenizer_steps", po::value(&tr.tokenizer_steps)->default_value(tr.tokenizer_steps))(
        "train.lam_steps", po::value(&tr.lam_steps)->default_value(tr.lam_steps))(
        "train.dynamics_steps", po::value(&tr.dynamics_steps)->default_value(tr.dynamics_steps))(
        "train.checkpoint_every", po::value(&tr.checkpoint_every)->default_value(tr.checkpoint_every))(
        "train.log_every", po::value(&tr.log_every)->default_value(tr.log_every))(
        "train.threads", po::value(&tr.threads)->default_value(tr.threads))(
        "train.grad_clip", po::value(&tr.grad_clip)->default_value(tr.grad_clip));

    d.add_options()("eval.prompt_frames", po::value(&prompts)->default_value(prompts))(
        "eval.horizons", po::value(&horizons)->default_value(horizons))(
        "eval.total_frames", po::value(&c.eval.total_frames)->default_value(c.eval.total_frames))(
        "eval.extractor_height", po::value(&c.eval.extractor_height)->default_value(c.eval.extractor_height))(
        "eval.extractor_width", po::value(&c.eval.extractor_width)->default_value(c.eval.extractor_width));

    try {
        po::variables_map vm;
        po::store(po::parse_config_file(in, d, /*allow_unregistered=*/false), vm);
        po::notify(vm);
    } catch (const po::error& e) {
        throw InvalidArgument(std::string("config: ") + e.what());
    }
    s.action_set = detail::split_list(actions);
    for (const auto& a : s.action_set) (void)action_direction(a);
    c.eval.prompt_frames = detail::split_ints(prompts);
    c.eval.horizons = detail::split_ints(horizons);
    t.patch_height = t.patch_width = tok_patch;
    l.patch_height = l.patch_width = lam_patch;
    c.finalize();
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("config file not found: " + path.string());
    return parse_run_config(in);
}

inline RunConfig parse_run_config_string(const std::string& text) {
    std::istringstream in(text);
    return parse_run_config(in);
}

}  // namespace lwm
