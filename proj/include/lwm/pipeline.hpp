#pragma once

// Two-stage training and evaluation.
//
// Stage 1 trains the tokenizer and the latent action model as independent
// jobs. Stage 2 freezes both, tokenizes the training clips, labels their
// transitions with inferred latent actions, and trains the dynamics model.

#include "lwm/checkpoint.hpp"
#include "lwm/config.hpp"
#include "lwm/metrics.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <optional>

namespace lwm {

using LogFn = std::function<void(const std::string&)>;

inline LogFn stderr_log() {
    return [](const std::string& s) { std::cerr << s << std::endl; };
}

struct Dataset {
    std::vector<VideoClip> train;
    std::vector<VideoClip> eval;
    std::vector<ActionLabelSequence> eval_labels;  // empty when labels are unavailable
};

// Seed streams; every random consumer draws from its own stream of the run seed.
namespace streams {
inline constexpr std::uint64_t kTrainClip = 0x1000000;
inline constexpr std::uint64_t kEvalClip = 0x2000000;
inline constexpr std::uint64_t kTokenizerInit = 1;
inline constexpr std::uint64_t kLamInit = 2;
inline constexpr std::uint64_t kDynamicsInit = 3;
inline constexpr std::uint64_t kTokenizerTrain = 4;
inline constexpr std::uint64_t kLamTrain = 5;
inline constexpr std::uint64_t kDynamicsTrain = 6;
inline constexpr std::uint64_t kEvalRollout = 7;
}  // namespace streams

inline SyntheticSceneConfig scene_for(const RunConfig& cfg, std::uint64_t stream, std::int64_t frames) {
    auto s = cfg.data.scene;
    s.num_frames = frames;
    s.seed = derive_seed(cfg.seed, stream);
    return s;
}

/// Training and held-out clips at tokenizer resolution.
inline Dataset build_dataset(const RunConfig& cfg) {
    Dataset ds;
    if (cfg.data.source == "synthetic") {
        for (std::int64_t i = 0; i < cfg.data.train_clips; ++i)
            ds.train.push_back(generate_synthetic_clip(scene_for(cfg, streams::kTrainClip + static_cast<std::uint64_t>(i), cfg.data.num_frames)).first);
        for (std::int64_t i = 0; i < cfg.data.eval_clips; ++i) {
            auto [clip, labels] = generate_synthetic_clip(
                scene_for(cfg, streams::kEvalClip + static_cast<std::uint64_t>(i), cfg.data.eval_frames));
            ds.eval.push_back(std::move(clip));
            ds.eval_labels.push_back(std::move(labels));
        }
        return ds;
    }
    auto opts = [&](std::int64_t frames) {
        PreprocessOptions o;
        o.target_height = cfg.tokenizer.frame_height;
        o.target_width = cfg.tokenizer.frame_width;
        o.sample_fps = cfg.data.sample_fps;
        o.num_frames = frames;
        o.crop_width = cfg.data.crop_width;
        o.crop_height = cfg.data.crop_height;
        return o;
    };
    for (const auto& dir : list_clip_dirs(cfg.data.directory)) {
        if (cfg.data.train_clips > 0 && static_cast<std::int64_t>(ds.train.size()) >= cfg.data.train_clips) break;
        ds.train.push_back(preprocess_clip(read_clip_dir(dir), opts(cfg.data.num_frames)));
    }
    LWM_REQUIRE(!ds.train.empty(), "no training clips found in ", cfg.data.directory);
    if (!cfg.data.eval_directory.empty()) {
        bool labelled = true;
        for (const auto& dir : list_clip_dirs(cfg.data.eval_directory)) {
            if (cfg.data.eval_clips > 0 && static_cast<std::int64_t>(ds.eval.size()) >= cfg.data.eval_clips) break;
            ds.eval.push_back(preprocess_clip(read_clip_dir(dir), opts(cfg.data.eval_frames)));
            if (labelled && std::filesystem::exists(dir / "eval_labels")) {
                ds.eval_labels.push_back(read_eval_labels(dir));
            } else {
                labelled = false;
            }
        }
        if (!labelled) ds.eval_labels.clear();
    }
    return ds;
}

inline std::vector<VideoClip> resize_all(const std::vector<VideoClip>& clips, std::int64_t h, std::int64_t w) {
    std::vector<VideoClip> out;
    out.reserve(clips.size());
    for (const auto& c : clips) out.push_back(resize_clip(c, h, w));
    return out;
}

inline torch::Tensor stack_batch(const std::vector<VideoClip>& clips, const std::vector<std::int64_t>& idx) {
    std::vector<torch::Tensor> frames;
    for (auto i : idx) frames.push_back(clips[static_cast<std::size_t>(i)].frames);
    return torch::stack(frames);
}

inline std::vector<std::int64_t> sample_batch(Rng& rng, std::int64_t population, std::int64_t batch) {
    std::vector<std::int64_t> idx;
    for (std::int64_t i = 0; i < batch; ++i) idx.push_back(uniform_index(rng, population));
    return idx;
}

struct LossRecord {
    std::int64_t step = 0;
    double total = 0.0;
    double reconstruction = 0.0;
    double commitment = 0.0;
    double perplexity = 0.0;
};

inline void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& log) {
    std::ofstream f(path);
    f << "step,total,reconstruction,commitment,perplexity\n";
    char buf[256];
    for (const auto& r : log) {
        std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g\n", static_cast<long long>(r.step), r.total,
                      r.reconstruction, r.commitment, r.perplexity);
        f << buf;
    }
}

// ---------------------------------------------------------------------------
// Checkpoint glue

template <typename Model>
Checkpoint model_checkpoint(const std::string& kind, const nlohmann::json& config, Model& model, std::int64_t step) {
    Checkpoint c;
    c.kind = kind;
    c.step = step;
    c.config = config;
    add_module_state(c, *model);
    return c;
}

inline void require_kind(const Checkpoint& c, const std::string& kind) {
    LWM_REQUIRE(c.kind == kind, "expected a ", kind, " checkpoint, got '", c.kind, "'");
}

inline VideoTokenizer load_tokenizer(const Checkpoint& c) {
    require_kind(c, "tokenizer");
    VideoTokenizer m(c.config.get<TokenizerConfig>());
    load_module_state(*m, c);
    m->eval();
    return m;
}

inline LatentActionModel load_lam(const Checkpoint& c) {
    require_kind(c, "lam");
    LatentActionModel m(c.config.get<LamConfig>());
    load_module_state(*m, c);
    m->eval();
    return m;
}

inline DynamicsModel load_dynamics(const Checkpoint& c) {
    require_kind(c, "dynamics");
    DynamicsModel m(c.config.get<DynamicsConfig>());
    load_module_state(*m, c);
    m->eval();
    return m;
}

struct CheckpointPaths {
    std::filesystem::path dir;
    std::filesystem::path tokenizer() const { return dir / "tokenizer.ckpt"; }
    std::filesystem::path lam() const { return dir / "lam.ckpt"; }
    std::filesystem::path dynamics() const { return dir / "dynamics.ckpt"; }
    std::filesystem::path periodic(const std::string& kind, std::int64_t step) const {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%s_step%06lld.ckpt", kind.c_str(), static_cast<long long>(step));
        return dir / buf;
    }
};

// ---------------------------------------------------------------------------
// Training loops

struct TrainJob {
    std::string kind;  // "tokenizer", "lam", "dynamics"
    std::int64_t steps = 0;
    std::int64_t batch_size = 8;
    double learning_rate = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.9999;
    double grad_clip = 1.0;
    std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
    std::int64_t log_every = 50;
    std::uint64_t seed = 0;
    nlohmann::json config;
    double flops_per_step = 0.0;
};

struct TrainResult {
    std::vector<LossRecord> log;  // every step
    std::int64_t final_step = 0;
};

namespace detail {

inline torch::optim::Adam make_adam(torch::nn::Module& model, const TrainJob& job) {
    return torch::optim::Adam(model.parameters(), torch::optim::AdamOptions(job.learning_rate)
                                                      .betas({job.adam_beta1, job.adam_beta2})
                                                      .weight_decay(0.0));
}

inline void check_finite_loss(double v, const TrainJob& job, std::int64_t step) {
    if (!std::isfinite(v))
        throw TrainingError(detail::concat(job.kind, ": non-finite loss at step ", step, "; lower the learning rate"));
}

template <typename Model>
void save_training_state(const std::filesystem::path& path, const TrainJob& job, Model& model, torch::optim::Adam& opt,
                         const Rng& rng, std::int64_t step) {
    auto c = model_checkpoint(job.kind, job.config, model, step);
    c.state["rng"] = rng_state(rng);
    add_adam_state(c, *model, opt);
    save_checkpoint(path, c);
}

template <typename Model>
std::int64_t restore_training_state(const Checkpoint& c, const TrainJob& job, Model& model, torch::optim::Adam& opt,
                                    Rng& rng) {
    require_kind(c, job.kind);
    load_module_state(*model, c);
    load_adam_state(c, *model, opt);
    set_rng_state(rng, c.state.at("rng").get<std::string>());
    return c.step;
}

}  // namespace detail

/// Trains a VQ model (tokenizer or latent action model) on clips already at
/// the model's resolution. The optimizer, EMA codebook and rng state are all
/// checkpointed, so resuming reproduces the uninterrupted run exactly.
template <typename Model>
TrainResult train_vq_model(Model& model, const std::vector<VideoClip>& clips, const TrainJob& job,
                           const CheckpointPaths& paths, const std::filesystem::path& final_path,
                           const std::optional<Checkpoint>& resume = std::nullopt, const LogFn& log = stderr_log()) {
    LWM_REQUIRE(!clips.empty(), job.kind, ": no training clips");
    model->train();
    auto opt = detail::make_adam(*model, job);
    Rng rng(job.seed);
    std::int64_t step = 0;
    if (resume) step = detail::restore_training_state(*resume, job, model, opt, rng);

    TrainResult result;
    const auto t0 = std::chrono::steady_clock::now();
    while (step < job.steps) {
        auto batch = stack_batch(clips, sample_batch(rng, static_cast<std::int64_t>(clips.size()), job.batch_size));
        if (!model->codebook()->is_initialized()) {
            torch::NoGradGuard guard;
            auto l = model->loss(batch);
            model->codebook()->initialize_from(l.features, rng);
        }
        auto l = model->loss(batch);
        opt.zero_grad();
        l.total.backward();
        if (job.grad_clip > 0.0) torch::nn::utils::clip_grad_norm_(model->parameters(), job.grad_clip);
        opt.step();
        ema_update(model->codebook(), l.features, l.indices, rng);
        ++step;

        LossRecord r{step, l.total.template item<double>(), l.reconstruction.template item<double>(),
                     l.commitment.template item<double>(), l.perplexity};
        detail::check_finite_loss(r.total, job, step);
        result.log.push_back(r);
        if (job.log_every > 0 && (step % job.log_every == 0 || step == job.steps)) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            char buf[256];
            std::snprintf(buf, sizeof(buf), "[%s] step %lld  loss %.5f  recon %.5f  commit %.5f  perplexity %.2f  (%.1fs)",
                          job.kind.c_str(), static_cast<long long>(step), r.total, r.reconstruction, r.commitment,
                          r.perplexity, secs);
            log(buf);
        }
        if (job.checkpoint_every > 0 && step % job.checkpoint_every == 0 && step < job.steps)
            detail::save_training_state(paths.periodic(job.kind, step), job, model, opt, rng, step);
    }
    detail::save_training_state(final_path, job, model, opt, rng, step);
    result.final_step = step;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "[%s] done: %lld steps, ~%.3g training FLOPs", job.kind.c_str(),
                  static_cast<long long>(step), job.flops_per_step * static_cast<double>(job.steps));
    log(buf);
    model->eval();
    return result;
}

inline TrainJob tokenizer_job(const RunConfig& cfg) {
    TrainJob j;
    j.kind = "tokenizer";
    j.steps = cfg.train.tokenizer_steps;
    j.batch_size = cfg.train.batch_size;
    j.learning_rate = cfg.tokenizer.learning_rate;
    j.adam_beta1 = cfg.tokenizer.adam_beta1;
    j.adam_beta2 = cfg.tokenizer.adam_beta2;
    j.grad_clip = cfg.train.grad_clip;
    j.checkpoint_every = cfg.train.checkpoint_every;
    j.log_every = cfg.train.log_every;
    j.seed = derive_seed(cfg.seed, streams::kTokenizerTrain);
    j.config = cfg.tokenizer;
    const auto S = cfg.tokenizer.tokens_per_frame();
    j.flops_per_step = 3.0 * (st_stack_flops(cfg.tokenizer.encoder, j.batch_size, cfg.data.num_frames, S) +
                              st_stack_flops(cfg.tokenizer.decoder, j.batch_size, cfg.data.num_frames, S));
    return j;
}

inline TrainJob lam_job(const RunConfig& cfg) {
    TrainJob j;
    j.kind = "lam";
    j.steps = cfg.train.lam_steps;
    j.batch_size = cfg.train.batch_size;
    j.learning_rate = cfg.lam.learning_rate;
    j.adam_beta1 = cfg.lam.adam_beta1;
    j.adam_beta2 = cfg.lam.adam_beta2;
    j.grad_clip = cfg.train.grad_clip;
    j.checkpoint_every = cfg.train.checkpoint_every;
    j.log_every = cfg.train.log_every;
    j.seed = derive_seed(cfg.seed, streams::kLamTrain);
    j.config = cfg.lam;
    const auto S = cfg.lam.tokens_per_frame();
    j.flops_per_step = 3.0 * (st_stack_flops(cfg.lam.encoder, j.batch_size, cfg.data.num_frames, S) +
                              st_stack_flops(cfg.lam.decoder, j.batch_size, cfg.data.num_frames - 1, S));
    return j;
}

inline VideoTokenizer make_tokenizer(const RunConfig& cfg) {
    torch::manual_seed(derive_seed(cfg.seed, streams::kTokenizerInit));
    return VideoTokenizer(cfg.tokenizer);
}

inline LatentActionModel make_lam(const RunConfig& cfg) {
    torch::manual_seed(derive_seed(cfg.seed, streams::kLamInit));
    return LatentActionModel(cfg.lam);
}

inline DynamicsModel make_dynamics(const RunConfig& cfg) {
    torch::manual_seed(derive_seed(cfg.seed, streams::kDynamicsInit));
    return DynamicsModel(cfg.dynamics);
}

struct Stage1Result {
    TrainResult tokenizer;
    TrainResult lam;
};

struct ResumeFrom {
    std::optional<Checkpoint> tokenizer;
    std::optional<Checkpoint> lam;
    std::optional<Checkpoint> dynamics;
};

/// Stage 1: tokenizer and latent action model, trained concurrently.
inline Stage1Result train_stage1(const RunConfig& cfg, const Dataset& ds, const std::filesystem::path& out_dir,
                                 const ResumeFrom& resume = {}, const LogFn& log = stderr_log()) {
    torch::set_num_threads(static_cast<int>(cfg.train.threads));
    std::filesystem::create_directories(out_dir);
    CheckpointPaths paths{out_dir};
    auto tokenizer = make_tokenizer(cfg);
    auto lam = make_lam(cfg);
    const auto lam_clips = resize_all(ds.train, cfg.lam.frame_height, cfg.lam.frame_width);

    auto tok_future = std::async(std::launch::async, [&] {
        return train_vq_model(tokenizer, ds.train, tokenizer_job(cfg), paths, paths.tokenizer(), resume.tokenizer, log);
    });
    auto lam_future = std::async(std::launch::async, [&] {
        return train_vq_model(lam, lam_clips, lam_job(cfg), paths, paths.lam(), resume.lam, log);
    });
    Stage1Result r;
    r.tokenizer = tok_future.get();
    r.lam = lam_future.get();
    write_loss_csv(out_dir / "tokenizer_loss.csv", r.tokenizer.log);
    write_loss_csv(out_dir / "lam_loss.csv", r.lam.log);
    return r;
}

/// Token ids [N, T, S] and inferred actions [N, T-1] of a clip set.
struct TokenizedSet {
    torch::Tensor tokens;
    torch::Tensor actions;
};

inline TokenizedSet tokenize_set(const std::vector<VideoClip>& clips, VideoTokenizer& tokenizer, LatentActionModel& lam) {
    torch::NoGradGuard guard;
    std::vector<torch::Tensor> toks, acts;
    const auto& lc = lam->config();
    for (const auto& c : clips) {
        auto grid = tok_encode(c, tokenizer);
        toks.push_back(grid.tokens.reshape({grid.num_frames(), -1}));
        acts.push_back(infer_actions(resize_clip(c, lc.frame_height, lc.frame_width), lam).to_tensor());
    }
    return {torch::stack(toks), torch::stack(acts)};
}

struct Stage2Result {
    TrainResult dynamics;
};

/// Stage 2: dynamics model on frozen tokenizer tokens and frozen latent actions.
inline Stage2Result train_stage2(const RunConfig& cfg, const Dataset& ds, const std::filesystem::path& stage1_dir,
                                 const std::filesystem::path& out_dir, const std::optional<Checkpoint>& resume = std::nullopt,
                                 const LogFn& log = stderr_log()) {
    torch::set_num_threads(static_cast<int>(cfg.train.threads));
    CheckpointPaths in{stage1_dir}, paths{out_dir};
    std::filesystem::create_directories(out_dir);
    auto tokenizer = load_tokenizer(load_checkpoint(in.tokenizer()));
    auto lam = load_lam(load_checkpoint(in.lam()));
    for (auto& p : tokenizer->parameters()) p.set_requires_grad(false);
    for (auto& p : lam->parameters()) p.set_requires_grad(false);
    LWM_REQUIRE(tokenizer->config().num_codes == cfg.dynamics.num_codes && lam->config().num_actions == cfg.dynamics.num_actions,
                "stage-1 checkpoints do not match the dynamics config");

    const auto set = tokenize_set(ds.train, tokenizer, lam);
    auto model = make_dynamics(cfg);
    model->train();

    TrainJob job;
    job.kind = "dynamics";
    job.steps = cfg.train.dynamics_steps;
    job.batch_size = cfg.train.batch_size;
    job.learning_rate = cfg.dynamics.learning_rate;
    job.adam_beta1 = cfg.dynamics.adam_beta1;
    job.adam_beta2 = cfg.dynamics.adam_beta2;
    job.grad_clip = cfg.train.grad_clip;
    job.checkpoint_every = cfg.train.checkpoint_every;
    job.log_every = cfg.train.log_every;
    job.seed = derive_seed(cfg.seed, streams::kDynamicsTrain);
    job.config = cfg.dynamics;
    job.flops_per_step = 3.0 * st_stack_flops(cfg.dynamics.stack, job.batch_size, cfg.data.num_frames,
                                              cfg.dynamics.tokens_per_frame());

    auto opt = detail::make_adam(*model, job);
    Rng rng(job.seed);
    std::int64_t step = 0;
    if (resume) step = detail::restore_training_state(*resume, job, model, opt, rng);
    Stage2Result r;
    const auto N = set.tokens.size(0);
    const auto t0 = std::chrono::steady_clock::now();
    while (step < job.steps) {
        auto idx = torch::tensor(sample_batch(rng, N, job.batch_size), torch::kInt64);
        auto loss = dynamics_batch_loss(model, set.tokens.index_select(0, idx), set.actions.index_select(0, idx), rng);
        opt.zero_grad();
        loss.backward();
        if (job.grad_clip > 0.0) torch::nn::utils::clip_grad_norm_(model->parameters(), job.grad_clip);
        opt.step();
        ++step;
        const double v = loss.item<double>();
        detail::check_finite_loss(v, job, step);
        r.dynamics.log.push_back({step, v, v, 0.0, 0.0});
        if (job.log_every > 0 && (step % job.log_every == 0 || step == job.steps)) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            char buf[160];
            std::snprintf(buf, sizeof(buf), "[dynamics] step %lld  masked CE %.5f  (%.1fs)", static_cast<long long>(step), v, secs);
            log(buf);
        }
        if (job.checkpoint_every > 0 && step % job.checkpoint_every == 0 && step < job.steps)
            detail::save_training_state(paths.periodic(job.kind, step), job, model, opt, rng, step);
    }
    detail::save_training_state(paths.dynamics(), job, model, opt, rng, step);
    r.dynamics.final_step = step;
    write_loss_csv(out_dir / "dynamics_loss.csv", r.dynamics.log);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "[dynamics] done: %lld steps, ~%.3g training FLOPs", static_cast<long long>(step),
                  job.flops_per_step * static_cast<double>(job.steps));
    log(buf);
    model->eval();
    return r;
}

// ---------------------------------------------------------------------------
// Evaluation

struct Models {
    VideoTokenizer tokenizer{nullptr};
    LatentActionModel lam{nullptr};
    DynamicsModel dynamics{nullptr};
};

inline Models load_models(const std::filesystem::path& dir) {
    CheckpointPaths p{dir};
    for (const auto& f : {p.tokenizer(), p.lam(), p.dynamics()})
        if (!std::filesystem::exists(f)) throw NotFound("missing checkpoint " + f.string());
    Models m;
    m.tokenizer = load_tokenizer(load_checkpoint(p.tokenizer()));
    m.lam = load_lam(load_checkpoint(p.lam()));
    m.dynamics = load_dynamics(load_checkpoint(p.dynamics()));
    return m;
}

/// Rollouts of one clip under one protocol with GT-inferred and random actions.
struct ClipRollouts {
    torch::Tensor gt;      // [total_frames, H, W, 3], prompt + generated
    torch::Tensor random;  // same
};

inline ClipRollouts rollout_pair(const VideoClip& clip, const ActionSequence& inferred, std::int64_t prompt_frames,
                                 std::int64_t total_frames, Models& m, std::uint64_t seed) {
    const auto n_gen = total_frames - prompt_frames;
    VideoClip prompt{clip.frames.slice(0, 0, prompt_frames), clip.fps};
    ActionSequence prompt_actions{std::vector<int>(inferred.actions.begin(), inferred.actions.begin() + (prompt_frames - 1))};
    ActionSequence gt_actions{std::vector<int>(inferred.actions.begin() + (prompt_frames - 1),
                                               inferred.actions.begin() + (prompt_frames - 1 + n_gen))};
    Rng action_rng(derive_seed(seed, 0));
    ActionSequence random_actions;
    for (std::int64_t i = 0; i < n_gen; ++i)
        random_actions.actions.push_back(sample_random_action(action_rng, m.lam->config().num_actions));
    Rng rng_gt(derive_seed(seed, 1)), rng_rand(derive_seed(seed, 2));
    return {rollout(prompt, gt_actions, m.tokenizer, m.dynamics, rng_gt, prompt_actions).frames,
            rollout(prompt, random_actions, m.tokenizer, m.dynamics, rng_rand, prompt_actions).frames};
}

/// Full protocol: per prompt setting, roll out every held-out clip with
/// GT-inferred and with uniformly random latent actions, then score PSNR and
/// SSIM over generated frames at each horizon, delta-PSNR, and FVD over
/// total_frames-frame clips (prompt included).
inline EvalReport evaluate(const RunConfig& cfg, const Dataset& ds, Models& m, const LogFn& log = stderr_log()) {
    torch::NoGradGuard guard;
    torch::set_num_threads(static_cast<int>(cfg.train.threads));
    LWM_REQUIRE(ds.eval.size() >= 2, "evaluate: need at least two held-out clips");
    const auto total = cfg.eval.total_frames;
    const auto& lc = m.lam->config();
    DownsampleFlattenExtractor extractor(cfg.eval.extractor_height, cfg.eval.extractor_width);

    EvalReport report;
    report.total_frames = total;
    report.num_clips = static_cast<std::int64_t>(ds.eval.size());
    report.seed = cfg.seed;
    report.extractor = extractor.name();

    std::vector<VideoClip> clips;
    std::vector<ActionSequence> inferred;
    double tok_psnr = 0.0;
    std::vector<int> true_labels, pred_labels;
    for (std::size_t i = 0; i < ds.eval.size(); ++i) {
        VideoClip c{ds.eval[i].frames.slice(0, 0, total).contiguous(), ds.eval[i].fps};
        tok_psnr += psnr(tok_decode(tok_encode(c, m.tokenizer), m.tokenizer).frames, c.frames);
        inferred.push_back(infer_actions(resize_clip(c, lc.frame_height, lc.frame_width), m.lam));
        if (!ds.eval_labels.empty()) {
            const auto& gt = ds.eval_labels[i].labels;
            for (std::size_t k = 0; k < inferred.back().actions.size(); ++k) {
                true_labels.push_back(gt[k]);
                pred_labels.push_back(inferred.back().actions[k]);
            }
        }
        clips.push_back(std::move(c));
    }
    report.tokenizer_psnr = tok_psnr / static_cast<double>(clips.size());
    report.lam_ami = true_labels.empty() ? 0.0 : adjusted_mutual_info(true_labels, pred_labels);

    std::vector<torch::Tensor> real_full;
    for (const auto& c : clips) real_full.push_back(c.frames);

    for (auto p : cfg.eval.prompt_frames) {
        ProtocolScores ps;
        ps.prompt_frames = p;
        std::vector<torch::Tensor> gen_gt, gen_rand, ref, full_gt, full_rand;
        for (std::size_t i = 0; i < clips.size(); ++i) {
            const auto seed = derive_seed(derive_seed(cfg.seed, streams::kEvalRollout), i * 16 + static_cast<std::size_t>(p));
            auto r = rollout_pair(clips[i], inferred[i], p, total, m, seed);
            gen_gt.push_back(r.gt.slice(0, p, total));
            gen_rand.push_back(r.random.slice(0, p, total));
            ref.push_back(clips[i].frames.slice(0, p, total));
            full_gt.push_back(r.gt);
            full_rand.push_back(r.random);
        }
        for (auto h : cfg.eval.horizons) {
            ps.psnr_gt[h] = mean_psnr_at(gen_gt, ref, h);
            ps.psnr_random[h] = mean_psnr_at(gen_rand, ref, h);
            ps.ssim_gt[h] = mean_ssim_at(gen_gt, ref, h);
            ps.ssim_random[h] = mean_ssim_at(gen_rand, ref, h);
            ps.delta_psnr[h] = delta_psnr(ps.psnr_gt[h], ps.psnr_random[h]);
        }
        ps.fvd_gt = fvd_eval(real_full, full_gt, extractor, total);
        ps.fvd_random = fvd_eval(real_full, full_rand, extractor, total);
        report.protocols.push_back(std::move(ps));
        log("[evaluate] prompt " + std::to_string(p) + " done");
    }
    return report;
}

inline void write_report(const std::filesystem::path& dir, const EvalReport& r) {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "report.txt") << r.to_kv_text();
    std::ofstream(dir / "report.json") << r.to_json().dump(2) << "\n";
}

}  // namespace lwm
