#pragma once

// Fixture-driven HTTP server implementing all five backend routes with the
// in-process mocks, plus GET /healthz and call counters at GET /v1/stats.

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "mh/backends.hpp"

namespace mh {

class MockServer {
public:
    explicit MockServer(MockFixture fixture = {})
        : fixture_(std::move(fixture)),
          t2i_(fixture_.t2i_model_id),
          mllm_(fixture_.mllm),
          llm_(fixture_.llm),
          embed_(fixture_.embed_model_id, fixture_.embed_dim),
          segment_(fixture_.segment_mode, fixture_.segment_indices) {
        install_routes();
    }

    MockServer(const MockServer&) = delete;
    MockServer& operator=(const MockServer&) = delete;

    ~MockServer() { stop(); }

    /// Binds (port 0 picks a free port) and serves on a background thread.
    int start(const std::string& host = "127.0.0.1", int port = 0) {
        port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
        if (port_ < 0) throw Error("mock server: cannot bind " + host + ":" + std::to_string(port));
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port_;
    }

    /// Serves on the calling thread until stop() is called from elsewhere.
    void serve_blocking(const std::string& host, int port) {
        if (!server_.bind_to_port(host, port)) throw Error("mock server: cannot bind " + host + ":" + std::to_string(port));
        port_ = port;
        server_.listen_after_bind();
    }

    void stop() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    int port() const noexcept { return port_; }
    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

    /// Successful calls per route.
    long calls(const std::string& route) const {
        std::lock_guard lock(mu_);
        auto it = calls_.find(route);
        return it == calls_.end() ? 0 : it->second;
    }

    void reset_stats() {
        std::lock_guard lock(mu_);
        calls_.clear();
        failures_served_.clear();
    }

private:
    using Handler = std::function<json(const json&)>;

    void route(const std::string& path, Handler handler) {
        server_.Post(path, [this, path, handler](const httplib::Request& req, httplib::Response& res) {
            if (inject_failure(path)) {
                reply(res, 503, {{"error", "injected failure"}});
                return;
            }
            json body;
            try {
                body = json::parse(req.body);
            } catch (const json::parse_error& e) {
                reply(res, 400, {{"error", std::string("malformed JSON: ") + e.what()}});
                return;
            }
            try {
                auto out = handler(body);
                {
                    std::lock_guard lock(mu_);
                    ++calls_[path];
                }
                reply(res, 200, out);
            } catch (const json::exception& e) {
                reply(res, 400, {{"error", std::string("bad request: ") + e.what()}});
            } catch (const PreconditionError& e) {
                reply(res, 400, {{"error", e.what()}});
            } catch (const std::exception& e) {
                reply(res, 500, {{"error", e.what()}});
            }
        });
    }

    static void reply(httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    bool inject_failure(const std::string& path) {
        auto it = fixture_.fail_first.find(path);
        if (it == fixture_.fail_first.end()) return false;
        std::lock_guard lock(mu_);
        int& served = failures_served_[path];
        if (served >= it->second) return false;
        ++served;
        return true;
    }

    static std::vector<ImageArtifact> decode_images(const json& list) {
        std::vector<ImageArtifact> out;
        for (const auto& b64 : list) {
            ImageArtifact img;
            img.png = base64_decode(b64.get<std::string>());
            auto r = decode_png(img.png);
            img.width = r.width;
            img.height = r.height;
            out.push_back(std::move(img));
        }
        return out;
    }

    void install_routes() {
        route("/v1/t2i", [this](const json& b) {
            T2IRequest req{b.at("prompt").get<std::string>(), b.at("seed").get<std::uint64_t>(),
                           b.at("width").get<std::uint32_t>(), b.at("height").get<std::uint32_t>()};
            if (req.prompt.empty() || req.width == 0 || req.height == 0 || req.width > 4096 || req.height > 4096)
                throw PreconditionError("t2i: prompt must be non-empty and 0 < width,height <= 4096");
            auto img = t2i_.generate(req);
            return json{{"image_png_b64", base64_encode(img.png)}, {"model_id", t2i_.model_id()}};
        });
        route("/v1/mm-generate", [this](const json& b) {
            auto images = decode_images(b.value("images_png_b64", json::array()));
            auto text = mllm_.generate(b.at("prompt").get<std::string>(), std::span<const ImageArtifact>(images),
                                       b.value("max_new_tokens", kErMaxNewTokens), b.value("temperature", 0.0));
            return json{{"text", text}, {"model_id", mllm_.model_id()}};
        });
        route("/v1/generate", [this](const json& b) {
            auto text = llm_.generate(b.at("prompt").get<std::string>(), b.value("max_new_tokens", kErMaxNewTokens),
                                      b.value("temperature", 0.0));
            return json{{"text", text}, {"model_id", llm_.model_id()}};
        });
        route("/v1/embed", [this](const json& b) {
            auto texts = b.at("texts").get<std::vector<std::string>>();
            if (texts.empty()) throw PreconditionError("embed: no input texts");
            auto vectors = embed_.embed(texts);
            json out = json::array();
            for (const auto& v : vectors) out.push_back(v.values);
            return json{{"vectors", out}, {"dim", vectors.front().dim()}};
        });
        route("/v1/segment", [this](const json& b) {
            int parts = b.at("parts").get<int>();
            if (parts < 2) throw PreconditionError("segment: parts must be >= 2");
            auto idx = segment_.propose(b.at("text").get<std::string>(), parts, b.value("token_cap", kTextEncoderTokenCap));
            return json{{"token_indices", idx}};
        });
        server_.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
            reply(res, 200,
                  {{"status", "ok"},
                   {"models", {t2i_.model_id(), mllm_.model_id(), llm_.model_id(), embed_.model_id(), segment_.model_id()}}});
        });
        server_.Get("/v1/stats", [this](const httplib::Request&, httplib::Response& res) {
            std::lock_guard lock(mu_);
            reply(res, 200, json(calls_));
        });
    }

    MockFixture fixture_;
    MockTextToImage t2i_;
    MockLM mllm_;
    MockLM llm_;
    MockEmbedder embed_;
    MockSegmentProposer segment_;

    httplib::Server server_;
    std::thread thread_;
    int port_ = -1;
    mutable std::mutex mu_;
    std::map<std::string, long> calls_;
    std::map<std::string, int> failures_served_;
};

}  // namespace mh
