// Command-line driver: data generation, both training stages, rollout,
// evaluation and the interactive service.

#include "lwm/lwm.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <sstream>

namespace {

struct CommonArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string data;  // directory written by gen-data; switches the dataset source
};

void add_common(CLI::App* cmd, CommonArgs& a, bool out_required = true) {
    cmd->add_option("--config", a.config, "INI run configuration (defaults apply when omitted)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", a.seed, "override run.seed");
    auto* out = cmd->add_option("--out", a.out, "output directory");
    if (out_required) out->required();
}

lwm::RunConfig load_config(const CommonArgs& a) {
    lwm::RunConfig cfg;
    if (!a.config.empty()) {
        cfg = lwm::load_run_config(a.config);
    } else {
        cfg.finalize();
    }
    if (a.seed) cfg.seed = *a.seed;
    if (!a.data.empty()) {
        cfg.data.source = "directory";
        cfg.data.directory = (std::filesystem::path(a.data) / "train").string();
        cfg.data.eval_directory = (std::filesystem::path(a.data) / "eval").string();
        // gen-data output is already at model resolution and one frame per step.
        cfg.data.crop_width = 0;
        cfg.data.crop_height = 0;
    }
    return cfg;
}

std::vector<int> parse_ids(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw lwm::InvalidArgument("not an action id: '" + item + "'");
        }
    }
    return out;
}

void save_config(const std::filesystem::path& dir, const lwm::RunConfig& cfg) {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "run_config.json") << cfg.to_json().dump(2) << "\n";
}

int gen_data(const CommonArgs& a) {
    auto cfg = load_config(a);
    const std::filesystem::path out(a.out);
    cfg.data.source = "synthetic";
    const auto ds = lwm::build_dataset(cfg);
    for (std::size_t i = 0; i < ds.train.size(); ++i)
        lwm::write_clip_dir(out / "train" / ("clip_" + std::to_string(100000 + i).substr(1)), ds.train[i]);
    for (std::size_t i = 0; i < ds.eval.size(); ++i)
        lwm::write_clip_dir(out / "eval" / ("clip_" + std::to_string(100000 + i).substr(1)), ds.eval[i], &ds.eval_labels[i]);
    std::cout << "wrote " << ds.train.size() << " training and " << ds.eval.size() << " held-out clips to " << out << "\n";
    return 0;
}

int train_stage1(const CommonArgs& a, const std::string& resume_tokenizer, const std::string& resume_lam) {
    const auto cfg = load_config(a);
    save_config(a.out, cfg);
    lwm::ResumeFrom resume;
    if (!resume_tokenizer.empty()) resume.tokenizer = lwm::load_checkpoint(resume_tokenizer);
    if (!resume_lam.empty()) resume.lam = lwm::load_checkpoint(resume_lam);
    const auto r = lwm::train_stage1(cfg, lwm::build_dataset(cfg), a.out, resume);
    if (!r.tokenizer.log.empty() && !r.lam.log.empty())
        std::printf("final losses: tokenizer %.6f  lam %.6f\n", r.tokenizer.log.back().total, r.lam.log.back().total);
    return 0;
}

int train_stage2(const CommonArgs& a, const std::string& stage1, const std::string& resume) {
    const auto cfg = load_config(a);
    save_config(a.out, cfg);
    std::optional<lwm::Checkpoint> from;
    if (!resume.empty()) from = lwm::load_checkpoint(resume);
    const auto r = lwm::train_stage2(cfg, lwm::build_dataset(cfg), stage1.empty() ? a.out : stage1, a.out, from);
    if (!r.dynamics.log.empty()) std::printf("final masked CE: %.6f\n", r.dynamics.log.back().total);
    return 0;
}

int rollout_cmd(const CommonArgs& a, const std::string& checkpoints, const std::string& prompt_dir,
                std::int64_t prompt_frames, const std::string& actions) {
    const auto cfg = load_config(a);
    torch::set_num_threads(static_cast<int>(cfg.train.threads));
    auto m = lwm::load_models(checkpoints);
    const auto& tc = m.tokenizer->config();
    auto clip = lwm::read_clip_dir(prompt_dir);
    LWM_REQUIRE(prompt_frames >= 1 && prompt_frames <= clip.num_frames(), "--prompt-frames out of range");
    lwm::VideoClip prompt{clip.frames.slice(0, 0, prompt_frames).contiguous(), clip.fps};
    if (prompt.height() != tc.frame_height || prompt.width() != tc.frame_width)
        prompt = lwm::resize_clip(prompt, tc.frame_height, tc.frame_width);
    lwm::ActionSequence prompt_actions;
    if (prompt_frames > 1) {
        const auto& lc = m.lam->config();
        prompt_actions = lwm::infer_actions(lwm::resize_clip(prompt, lc.frame_height, lc.frame_width), m.lam);
    }
    lwm::Rng rng(lwm::derive_seed(cfg.seed, lwm::streams::kEvalRollout));
    const auto out = lwm::rollout(prompt, lwm::ActionSequence{parse_ids(actions)}, m.tokenizer, m.dynamics, rng,
                                  prompt_actions);
    lwm::write_clip_dir(a.out, out);
    std::cout << "wrote " << out.num_frames() << " frames (" << prompt_frames << " prompt) to " << a.out << "\n";
    return 0;
}

int evaluate_cmd(const CommonArgs& a, const std::string& checkpoints) {
    const auto cfg = load_config(a);
    auto m = lwm::load_models(checkpoints.empty() ? a.out : checkpoints);
    const auto report = lwm::evaluate(cfg, lwm::build_dataset(cfg), m);
    lwm::write_report(a.out, report);
    std::cout << report.to_table();
    return 0;
}

int serve_cmd(const CommonArgs& a, const std::string& checkpoints, const std::string& host, int port) {
    const auto cfg = load_config(a);
    torch::set_num_threads(static_cast<int>(cfg.train.threads));
    lwm::SessionManager sessions(lwm::load_models(checkpoints));
    httplib::Server server;
    lwm::register_routes(server, sessions);
    if (!a.out.empty()) {
        std::filesystem::create_directories(a.out);
        std::ofstream(std::filesystem::path(a.out) / "server.json")
            << nlohmann::json{{"host", host}, {"port", port}, {"checkpoints", checkpoints}}.dump(2) << "\n";
    }
    std::cerr << "serving on http://" << host << ":" << port << "\n";
    if (!server.listen(host, port)) {
        std::cerr << "cannot bind " << host << ":" << port << "\n";
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Latent-action world model: training, evaluation and interactive rollout"};
    app.require_subcommand(1);

    CommonArgs gen_args, s1_args, s2_args, roll_args, eval_args, serve_args;
    std::string resume_tok, resume_lam, stage1_dir, resume_dyn;
    std::string roll_ckpt, roll_prompt, roll_actions;
    std::int64_t roll_prompt_frames = 1;
    std::string eval_ckpt, serve_ckpt, host = "127.0.0.1";
    int port = 8080;

    auto* gen = app.add_subcommand("gen-data", "write the synthetic train/eval clip set as PNG directories");
    add_common(gen, gen_args);

    auto* s1 = app.add_subcommand("train-stage1", "train the video tokenizer and the latent action model");
    add_common(s1, s1_args);
    s1->add_option("--data", s1_args.data, "clip directory produced by gen-data");
    s1->add_option("--resume-tokenizer", resume_tok, "tokenizer checkpoint to resume from");
    s1->add_option("--resume-lam", resume_lam, "latent action model checkpoint to resume from");

    auto* s2 = app.add_subcommand("train-stage2", "train the dynamics model on frozen stage-1 models");
    add_common(s2, s2_args);
    s2->add_option("--data", s2_args.data, "clip directory produced by gen-data");
    s2->add_option("--stage1", stage1_dir, "directory with tokenizer.ckpt and lam.ckpt (default: --out)");
    s2->add_option("--resume", resume_dyn, "dynamics checkpoint to resume from");

    auto* roll = app.add_subcommand("rollout", "generate frames from a prompt clip and an action list");
    add_common(roll, roll_args);
    roll->add_option("--checkpoints", roll_ckpt, "directory with all three checkpoints")->required();
    roll->add_option("--prompt", roll_prompt, "clip directory holding the prompt frames")->required();
    roll->add_option("--prompt-frames", roll_prompt_frames, "number of prompt frames taken from the clip");
    roll->add_option("--actions", roll_actions, "comma-separated latent action ids")->required();

    auto* ev = app.add_subcommand("evaluate", "score held-out rollouts and write the report");
    add_common(ev, eval_args);
    ev->add_option("--data", eval_args.data, "clip directory produced by gen-data");
    ev->add_option("--checkpoints", eval_ckpt, "directory with all three checkpoints (default: --out)");

    auto* sv = app.add_subcommand("serve", "run the interactive rollout HTTP service");
    add_common(sv, serve_args, false);
    sv->add_option("--checkpoints", serve_ckpt, "directory with all three checkpoints")->required();
    sv->add_option("--host", host, "bind address");
    sv->add_option("--port", port, "bind port");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*gen) return gen_data(gen_args);
        if (*s1) return train_stage1(s1_args, resume_tok, resume_lam);
        if (*s2) return train_stage2(s2_args, stage1_dir, resume_dyn);
        if (*roll) return rollout_cmd(roll_args, roll_ckpt, roll_prompt, roll_prompt_frames, roll_actions);
        if (*ev) return evaluate_cmd(eval_args, eval_ckpt);
        if (*sv) return serve_cmd(serve_args, serve_ckpt, host, port);
    } catch (const lwm::TrainingError& e) {
        std::cerr << "training aborted: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
