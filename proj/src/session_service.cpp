#include "iseg/session_service.hpp"

#include <atomic>
#include <map>
#include <mutex>
#include <random>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "iseg/clicks.hpp"
#include "iseg/data_io.hpp"
#include "iseg/errors.hpp"
#include "iseg/evalbench.hpp"

namespace iseg {

using nlohmann::json;
using SteadyClock = std::chrono::steady_clock;

void ServiceConfig::validate() const {
    if (port < 0 || port > 65535) throw ArgumentError("service.port must lie in [0, 65535]");
    if (!(session_ttl > 0.0)) throw ArgumentError("service.session_ttl must be > 0");
    if (max_sessions < 1) throw ArgumentError("service.max_sessions must be >= 1");
    if (max_side < 4) throw ArgumentError("max_side must be >= 4");
    if (max_clicks < 1) throw ArgumentError("max_clicks must be >= 1");
}

std::vector<std::size_t> rle_encode(const BinMask& mask) {
    std::vector<std::size_t> counts;
    std::uint8_t current = 0;
    std::size_t run = 0;
    for (const auto v : mask.data) {
        const std::uint8_t b = v ? 1 : 0;
        if (b != current) {
            counts.push_back(run);
            current = b;
            run = 0;
        }
        ++run;
    }
    counts.push_back(run);
    return counts;
}

BinMask rle_decode(const std::vector<std::size_t>& counts, int height, int width) {
    BinMask m(height, width);
    std::size_t pos = 0;
    std::uint8_t value = 0;
    for (const auto c : counts) {
        if (pos + c > m.size()) throw FormatError("run lengths exceed the mask size");
        std::fill_n(m.data.begin() + static_cast<std::ptrdiff_t>(pos), c, value);
        pos += c;
        value ^= 1;
    }
    if (pos != m.size()) throw FormatError("run lengths do not cover the mask");
    return m;
}

Tensor pad_to_multiple(const Tensor& image, int stride) {
    if (image.rank() != 3) throw DimensionError("pad_to_multiple: expected CxHxW");
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    const std::size_t s = static_cast<std::size_t>(stride);
    const std::size_t ph = (h + s - 1) / s * s, pw = (w + s - 1) / s * s;
    if (ph == h && pw == w) return image;
    Tensor out({c, ph, pw});
    const auto src = image.data();
    auto dst = out.data();
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t y = 0; y < ph; ++y)
            for (std::size_t x = 0; x < pw; ++x)
                dst[(k * ph + y) * pw + x] = src[(k * h + std::min(y, h - 1)) * w + std::min(x, w - 1)];
    return out;
}

namespace {

struct Session {
    std::mutex lock;
    SessionState state;
    std::vector<SessionState> history;
    std::optional<BinMask> gt; // padded frame; generated scenes only
    int source_h = 0;
    int source_w = 0;
    SteadyClock::time_point last_active;
};

json region_json(const std::optional<ZoomRegion>& r) {
    if (!r) return nullptr;
    return {{"top", r->top},       {"left", r->left},         {"height", r->height},
            {"width", r->width},   {"target_h", r->target_h}, {"target_w", r->target_w}};
}

json error_body(const std::string& message) { return {{"error", message}}; }

void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

} // namespace

struct SessionServer::Impl {
    CascadeModel model;
    Predictor coarse;
    Predictor fine;
    CascadeConfig cascade;
    ServiceConfig cfg;
    httplib::Server server;
    int bound_port = -1;
    std::thread worker;

    mutable std::mutex sessions_lock;
    std::map<std::string, std::shared_ptr<Session>> sessions;
    std::mt19937_64 id_rng{std::random_device{}()};

    Impl(CascadeModel m, CascadeConfig c, ServiceConfig s)
        : model(std::move(m)), coarse(model.coarse_predictor()), fine(model.fine_predictor()), cascade(c),
          cfg(std::move(s)) {}

    std::string new_id() {
        static constexpr char kHex[] = "0123456789abcdef";
        std::string id;
        for (std::uint64_t v = id_rng(); id.size() < 16; v >>= 4) id += kHex[v & 15];
        return id;
    }

    std::shared_ptr<Session> find(const std::string& id) {
        std::lock_guard g(sessions_lock);
        const auto it = sessions.find(id);
        return it == sessions.end() ? nullptr : it->second;
    }

    std::size_t sweep() {
        const auto now = SteadyClock::now();
        const auto ttl = std::chrono::duration<double>(cfg.session_ttl);
        std::lock_guard g(sessions_lock);
        std::size_t dropped = 0;
        for (auto it = sessions.begin(); it != sessions.end();) {
            std::unique_lock busy(it->second->lock, std::try_to_lock);
            if (busy && now - it->second->last_active > ttl) {
                busy.unlock();
                it = sessions.erase(it);
                ++dropped;
            } else {
                ++it;
            }
        }
        return dropped;
    }

    json describe(const std::string& id, const Session& s) const {
        json clicks = json::array();
        for (const auto& c : s.state.clicks) clicks.push_back(c);
        return {{"session_id", id},
                {"height", s.state.height()},
                {"width", s.state.width()},
                {"source_height", s.source_h},
                {"source_width", s.source_w},
                {"step", s.state.step},
                {"clicks", clicks},
                {"has_gt", s.gt.has_value()},
                {"region", region_json(s.state.last_region)}};
    }

    json mask_state(const std::string& id, const Session& s) const {
        const auto mask = binarize(s.state.prev_prob, cascade.threshold);
        json out = describe(id, s);
        out["mask"] = {{"counts", rle_encode(mask)},
                       {"order", "row-major"},
                       {"height", mask.height},
                       {"width", mask.width}};
        out["prob_png_url"] = "/sessions/" + id + "/prob.png";
        out["iou"] = s.gt ? json(iou(mask, *s.gt)) : json(nullptr);
        return out;
    }

    void create(const httplib::Request& req, httplib::Response& res) {
        sweep();
        auto s = std::make_shared<Session>();
        Tensor image;
        const bool is_json = req.get_header_value("Content-Type").find("json") != std::string::npos ||
                             (!req.body.empty() && req.body.front() == '{');
        if (is_json) {
            json body;
            try {
                body = json::parse(req.body);
            } catch (const json::exception&) {
                return reply(res, 400, error_body("malformed JSON body"));
            }
            if (!body.is_object() || !body.contains("generate") || !body["generate"].is_object()) {
                return reply(res, 400, error_body("expected {\"generate\": {\"kind\", \"seed\"}}"));
            }
            const auto& g = body["generate"];
            SceneConfig sc;
            std::uint64_t seed = 0;
            try {
                if (g.contains("kind")) sc.kind = shape_kind_from_string(g.at("kind").get<std::string>());
                if (g.contains("seed")) seed = g.at("seed").get<std::uint64_t>();
                if (g.contains("height")) sc.height = g.at("height").get<int>();
                if (g.contains("width")) sc.width = g.at("width").get<int>();
                if (sc.height > cfg.max_side || sc.width > cfg.max_side) {
                    return reply(res, 413, error_body("requested scene exceeds the size limit"));
                }
                sc.validate();
            } catch (const json::exception& e) {
                return reply(res, 400, error_body(std::string("bad generate request: ") + e.what()));
            } catch (const ArgumentError& e) {
                return reply(res, 400, error_body(e.what()));
            }
            auto scene = generate_scene(seed, sc);
            image = scene.image;
            s->gt = scene.gt;
        } else {
            try {
                image = decode_image(std::vector<std::uint8_t>(req.body.begin(), req.body.end()), "upload");
            } catch (const std::exception& e) {
                return reply(res, 400, error_body(std::string("undecodable image: ") + e.what()));
            }
            if (static_cast<int>(image.dim(1)) > cfg.max_side || static_cast<int>(image.dim(2)) > cfg.max_side) {
                return reply(res, 413, error_body("image exceeds " + std::to_string(cfg.max_side) + " pixels per side"));
            }
        }
        s->source_h = static_cast<int>(image.dim(1));
        s->source_w = static_cast<int>(image.dim(2));
        image = pad_to_multiple(image, 4);
        if (s->gt && (s->gt->height != static_cast<int>(image.dim(1)) || s->gt->width != static_cast<int>(image.dim(2)))) {
            BinMask padded(static_cast<int>(image.dim(1)), static_cast<int>(image.dim(2)));
            for (int r = 0; r < s->gt->height; ++r)
                for (int c = 0; c < s->gt->width; ++c) padded.at(r, c) = s->gt->at(r, c);
            s->gt = padded;
        }
        s->state = SessionState::start(image);
        s->last_active = SteadyClock::now();
        std::string id;
        {
            std::lock_guard g(sessions_lock);
            if (static_cast<int>(sessions.size()) >= cfg.max_sessions) {
                return reply(res, 503, error_body("session limit reached"));
            }
            do id = new_id();
            while (sessions.count(id));
            sessions.emplace(id, s);
        }
        reply(res, 201, describe(id, *s));
    }

    template <class Fn>
    void with_session(const httplib::Request& req, httplib::Response& res, Fn&& fn) {
        const auto id = req.path_params.at("id");
        auto s = find(id);
        if (!s) return reply(res, 404, error_body("unknown session " + id));
        std::unique_lock busy(s->lock, std::try_to_lock);
        if (!busy) return reply(res, 409, error_body("session is busy"));
        s->last_active = SteadyClock::now();
        fn(id, *s);
    }

    void click(const httplib::Request& req, httplib::Response& res) {
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::exception&) {
            return reply(res, 400, error_body("malformed JSON body"));
        }
        Click c;
        try {
            c.row = body.at("row").get<int>();
            c.col = body.at("col").get<int>();
            c.polarity = body.contains("polarity") ? polarity_from_string(body["polarity"].get<std::string>())
                                                   : Polarity::positive;
        } catch (const json::exception& e) {
            return reply(res, 400, error_body(std::string("bad click: ") + e.what()));
        } catch (const ArgumentError& e) {
            return reply(res, 400, error_body(e.what()));
        }
        with_session(req, res, [&](const std::string& id, Session& s) {
            if (s.state.step >= cfg.max_clicks) return reply(res, 409, error_body("click budget exhausted"));
            try {
                check_click(s.state, c);
            } catch (const OutOfBoundsError& e) {
                return reply(res, 422, error_body(e.what()));
            } catch (const DuplicateClickError& e) {
                return reply(res, 409, error_body(e.what()));
            }
            SessionState before = s.state; // the image is never mutated, sharing it is safe
            try {
                interactive_step(s.state, c, coarse, fine, cascade);
            } catch (const std::exception& e) {
                s.state = std::move(before);
                return reply(res, 500, error_body(e.what()));
            }
            s.history.push_back(std::move(before));
            reply(res, 200, mask_state(id, s));
        });
    }

    void routes() {
        server.set_payload_max_length(cfg.max_upload_bytes);
        server.Post("/sessions", [this](const auto& req, auto& res) { create(req, res); });
        server.Get("/sessions/:id", [this](const auto& req, auto& res) {
            with_session(req, res, [&](const std::string& id, Session& s) { reply(res, 200, mask_state(id, s)); });
        });
        server.Get("/sessions/:id/prob.png", [this](const auto& req, auto& res) {
            with_session(req, res, [&](const std::string&, Session& s) {
                const auto png = encode_prob_png(s.state.prev_prob);
                res.set_content(std::string(png.begin(), png.end()), "image/png");
            });
        });
        server.Get("/sessions/:id/image.png", [this](const auto& req, auto& res) {
            with_session(req, res, [&](const std::string&, Session& s) {
                const auto png = encode_png_rgb(s.state.image);
                res.set_content(std::string(png.begin(), png.end()), "image/png");
            });
        });
        server.Post("/sessions/:id/clicks", [this](const auto& req, auto& res) { click(req, res); });
        server.Post("/sessions/:id/undo", [this](const auto& req, auto& res) {
            with_session(req, res, [&](const std::string& id, Session& s) {
                if (s.history.empty()) return reply(res, 409, error_body("nothing to undo at step 0"));
                s.state = std::move(s.history.back());
                s.history.pop_back();
                reply(res, 200, mask_state(id, s));
            });
        });
        server.Delete("/sessions/:id", [this](const auto& req, auto& res) {
            const auto id = req.path_params.at("id");
            std::lock_guard g(sessions_lock);
            if (!sessions.erase(id)) return reply(res, 404, error_body("unknown session " + id));
            res.status = 204;
        });
        if (!cfg.static_dir.empty() && !server.set_mount_point("/", cfg.static_dir.string())) {
            throw IoError("static directory not found: " + cfg.static_dir.string());
        }
        server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
            if (res.body.empty()) reply(res, res.status, error_body(httplib::status_message(res.status)));
        });
        server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            std::string what = "internal error";
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                what = e.what();
            } catch (...) {
            }
            reply(res, 500, error_body(what));
        });
    }
};

SessionServer::SessionServer(CascadeModel model, CascadeConfig cascade, ServiceConfig cfg) {
    cfg.validate();
    cascade.validate();
    impl_ = std::make_unique<Impl>(std::move(model), cascade, std::move(cfg));
    impl_->routes();
}

SessionServer::~SessionServer() { stop(); }

int SessionServer::bind() {
    if (impl_->bound_port >= 0) return impl_->bound_port;
    const auto& c = impl_->cfg;
    if (c.port == 0) {
        impl_->bound_port = impl_->server.bind_to_any_port(c.host);
    } else {
        impl_->bound_port = impl_->server.bind_to_port(c.host, c.port) ? c.port : -1;
    }
    if (impl_->bound_port < 0) throw IoError("cannot listen on " + c.host + ":" + std::to_string(c.port));
    return impl_->bound_port;
}

void SessionServer::run() {
    bind();
    impl_->server.listen_after_bind();
}

void SessionServer::start() {
    bind();
    impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

void SessionServer::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->worker.joinable()) impl_->worker.join();
}

int SessionServer::port() const { return impl_->bound_port; }

std::size_t SessionServer::session_count() const {
    std::lock_guard g(impl_->sessions_lock);
    return impl_->sessions.size();
}

std::size_t SessionServer::sweep_expired() { return impl_->sweep(); }

} // namespace iseg
