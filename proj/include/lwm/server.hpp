#pragma once

// Interactive rollout service. SessionManager holds the state and is usable
// without a network; register_routes() exposes it over HTTP.
//
//   GET    /actions             -> {"actions": [0..A-1], "codebook_size": A, ...}
//   POST   /sessions            {"prompt_frames": [png_b64, ...], "seed": n} -> {"session_id"}
//   POST   /sessions/{id}/step  {"action_id": a} -> {"frame_index", "frame"}
//   GET    /sessions/{id}       -> full frame and action history
//   DELETE /sessions/{id}

#include "lwm/image_io.hpp"
#include "lwm/pipeline.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>

namespace lwm {

struct SessionState {
    std::string id;
    std::uint64_t seed = 0;
    std::int64_t prompt_frames = 0;
    torch::Tensor tokens;             // [n, gh, gw]
    std::vector<std::string> frames;  // base64 PNG, one per token frame
    std::vector<int> actions;         // transition i leads from frame i to frame i+1
    Rng rng;
    std::mutex mutex;  // serializes steps within the session
};

struct StepResult {
    std::int64_t frame_index = 0;
    std::string frame;
};

class SessionManager {
public:
    explicit SessionManager(Models models) : m_(std::move(models)) {
        LWM_REQUIRE(m_.tokenizer && m_.lam && m_.dynamics, "SessionManager: models not loaded");
    }

    std::int64_t num_actions() const { return m_.lam->config().num_actions; }

    nlohmann::json actions_json() const {
        std::vector<int> ids(static_cast<std::size_t>(num_actions()));
        std::iota(ids.begin(), ids.end(), 0);
        const auto& t = m_.tokenizer->config();
        return {{"actions", ids},
                {"codebook_size", num_actions()},
                {"token_codebook_size", t.num_codes},
                {"frame_height", t.frame_height},
                {"frame_width", t.frame_width}};
    }

    /// Starts a session from decoded prompt frames ([H, W, 3] each, any size).
    /// Actions between prompt frames are inferred with the latent action model.
    std::string create(const std::vector<torch::Tensor>& prompt, std::uint64_t seed) {
        LWM_REQUIRE(!prompt.empty(), "prompt needs at least one frame");
        const auto& tc = m_.tokenizer->config();
        const auto max_prompt = m_.dynamics->config().max_frames - 1;
        LWM_REQUIRE(static_cast<std::int64_t>(prompt.size()) <= max_prompt, "prompt has ", prompt.size(),
                    " frames; at most ", max_prompt, " are supported");
        std::vector<torch::Tensor> frames;
        for (const auto& f : prompt) {
            LWM_REQUIRE(f.dim() == 3 && f.size(2) == 3, "prompt frame must be [H, W, 3], got ", detail::shape_str(f));
            frames.push_back(f.to(torch::kFloat32));
        }
        VideoClip raw{torch::stack(frames), 1.0};
        if (raw.height() != tc.frame_height || raw.width() != tc.frame_width)
            raw = resize_clip(raw, tc.frame_height, tc.frame_width);

        auto s = std::make_shared<SessionState>();
        s->seed = seed;
        s->rng.seed(seed);
        s->prompt_frames = raw.num_frames();
        {
            torch::NoGradGuard guard;
            std::scoped_lock model_lock(model_mutex_);
            s->tokens = tok_encode(raw, m_.tokenizer).tokens;
            if (raw.num_frames() > 1) {
                const auto& lc = m_.lam->config();
                s->actions = infer_actions(resize_clip(raw, lc.frame_height, lc.frame_width), m_.lam).actions;
            }
        }
        for (std::int64_t t = 0; t < raw.num_frames(); ++t) s->frames.push_back(encode_frame(raw.frames[t]));

        std::unique_lock lock(sessions_mutex_);
        s->id = "s" + std::to_string(++next_id_);
        sessions_[s->id] = s;
        return s->id;
    }

    StepResult step(const std::string& id, std::int64_t action) {
        auto s = find(id);
        if (action < 0 || action >= num_actions())
            throw InvalidArgument(detail::concat("action_id ", action, " outside [0, ", num_actions(), ")"));
        std::scoped_lock lock(s->mutex);
        std::vector<int> history = s->actions;
        history.push_back(static_cast<int>(action));
        torch::Tensor frame;
        {
            torch::NoGradGuard guard;
            std::scoped_lock model_lock(model_mutex_);
            auto next = iterative_decode(TokenGrid{s->tokens}, history, m_.dynamics, s->rng);
            auto tokens = torch::cat({s->tokens, next.tokens}, 0);
            frame = tok_decode(TokenGrid{tokens}, m_.tokenizer).frames[tokens.size(0) - 1];
            s->tokens = tokens;
        }
        s->actions = std::move(history);
        s->frames.push_back(encode_frame(frame));
        return {static_cast<std::int64_t>(s->frames.size()) - 1, s->frames.back()};
    }

    nlohmann::json history(const std::string& id) {
        auto s = find(id);
        std::scoped_lock lock(s->mutex);
        return {{"session_id", s->id},
                {"seed", s->seed},
                {"prompt_frames", s->prompt_frames},
                {"frames", s->frames},
                {"actions", s->actions}};
    }

    void remove(const std::string& id) {
        std::unique_lock lock(sessions_mutex_);
        if (sessions_.erase(id) == 0) throw NotFound("unknown session " + id);
    }

    std::size_t size() const {
        std::shared_lock lock(sessions_mutex_);
        return sessions_.size();
    }

private:
    std::shared_ptr<SessionState> find(const std::string& id) const {
        std::shared_lock lock(sessions_mutex_);
        auto it = sessions_.find(id);
        if (it == sessions_.end()) throw NotFound("unknown session " + id);
        return it->second;
    }

    static std::string encode_frame(const torch::Tensor& frame) {
        return image_io::base64_encode(image_io::encode_png(frame));
    }

    Models m_;
    // libtorch modules are not guaranteed reentrant; model calls take turns
    // while session bookkeeping stays concurrent.
    std::mutex model_mutex_;
    mutable std::shared_mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<SessionState>> sessions_;
    std::uint64_t next_id_ = 0;
};

namespace detail {

inline void json_reply(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
    try {
        fn();
    } catch (const NotFound& e) {
        json_reply(res, 404, {{"error", e.what()}});
    } catch (const InvalidArgument& e) {
        json_reply(res, 400, {{"error", e.what()}});
    } catch (const nlohmann::json::exception& e) {
        json_reply(res, 400, {{"error", std::string("bad request body: ") + e.what()}});
    } catch (const std::exception& e) {
        json_reply(res, 500, {{"error", e.what()}});
    }
}

inline nlohmann::json parse_body(const httplib::Request& req) {
    auto j = nlohmann::json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw InvalidArgument("request body must be a JSON object");
    return j;
}

}  // namespace detail

inline void register_routes(httplib::Server& server, SessionManager& sessions) {
    using detail::guarded;
    using detail::json_reply;

    server.Get("/actions", [&](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { json_reply(res, 200, sessions.actions_json()); });
    });

    server.Post("/sessions", [&](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto body = detail::parse_body(req);
            const auto& list = body.contains("prompt_frames") ? body.at("prompt_frames") : body.at("prompt");
            if (!list.is_array()) throw InvalidArgument("prompt_frames must be a list of base64 PNG strings");
            std::vector<torch::Tensor> frames;
            for (const auto& f : list) frames.push_back(image_io::decode_png(image_io::base64_decode(f.get<std::string>())));
            const auto seed = body.value("seed", std::uint64_t{0});
            json_reply(res, 201, {{"session_id", sessions.create(frames, seed)}});
        });
    });

    server.Post(R"(/sessions/([^/]+)/step)", [&](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto body = detail::parse_body(req);
            const auto& a = body.at("action_id");
            if (!a.is_number_integer()) throw InvalidArgument("action_id must be an integer");
            const auto r = sessions.step(req.matches[1], a.get<std::int64_t>());
            json_reply(res, 200, {{"frame_index", r.frame_index}, {"frame", r.frame}});
        });
    });

    server.Get(R"(/sessions/([^/]+))", [&](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { json_reply(res, 200, sessions.history(req.matches[1])); });
    });

    server.Delete(R"(/sessions/([^/]+))", [&](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            sessions.remove(req.matches[1]);
            json_reply(res, 200, {{"deleted", std::string(req.matches[1])}});
        });
    });
}

}  // namespace lwm
