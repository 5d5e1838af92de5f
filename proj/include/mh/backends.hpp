#pragma once

// Clients for the five backend roles. Each role is an abstract interface with
// two implementations: an HTTP client speaking the JSON wire contract, and a
// deterministic in-process mock used for desk-scale runs and tests. The mock
// server (mock_server.hpp) serves the same mocks over HTTP.

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mh/datamodel.hpp"
#include "mh/errors.hpp"
#include "mh/hashing.hpp"
#include "mh/image.hpp"
#include "mh/tokenizer.hpp"

namespace mh {

struct BackendDescriptor {
    std::string id;
    BackendRole role = BackendRole::mllm;
    std::string endpoint;  // "mock" for the in-process mock, else http://host:port
    std::string model_id;
    int timeout_ms = 60000;
    int max_retries = 2;
    int backoff_ms = 200;
    std::string fixture;  // mock fixture file, optional

    bool operator==(const BackendDescriptor&) const = default;
};

inline std::vector<std::string> validate_descriptor(const BackendDescriptor& d) {
    std::vector<std::string> v;
    if (d.id.empty()) v.emplace_back("descriptor id must not be empty");
    if (d.timeout_ms <= 0) v.emplace_back("timeout_ms must be positive");
    if (d.max_retries < 0) v.emplace_back("max_retries must be non-negative");
    if (d.backoff_ms < 0) v.emplace_back("backoff_ms must be non-negative");
    return v;
}

inline void to_json(json& j, const BackendDescriptor& d) {
    j = json{{"id", d.id},
             {"role", d.role},
             {"endpoint", d.endpoint},
             {"model_id", d.model_id},
             {"timeout_ms", d.timeout_ms},
             {"max_retries", d.max_retries},
             {"backoff_ms", d.backoff_ms}};
    if (!d.fixture.empty()) j["fixture"] = d.fixture;
}

inline void from_json(const json& j, BackendDescriptor& d) {
    d.id = j.at("id").get<std::string>();
    d.role = enum_from_name<BackendRole>(j.at("role").get<std::string>());
    d.endpoint = j.value("endpoint", std::string("mock"));
    d.model_id = j.value("model_id", std::string{});
    d.timeout_ms = j.value("timeout_ms", 60000);
    d.max_retries = j.value("max_retries", 2);
    d.backoff_ms = j.value("backoff_ms", 200);
    d.fixture = j.value("fixture", std::string{});
    if (auto v = validate_descriptor(d); !v.empty()) throw UsageError("backend '" + d.id + "': " + v.front());
}

struct EmbeddingVector {
    std::vector<double> values;

    std::size_t dim() const noexcept { return values.size(); }
    bool operator==(const EmbeddingVector&) const = default;
};

struct T2IRequest {
    std::string prompt;
    std::uint64_t seed = 0;
    std::uint32_t width = 64;
    std::uint32_t height = 64;
};

/// Retries performed by HTTP clients on the calling thread since the last reset.
inline int& retry_counter() {
    thread_local int count = 0;
    return count;
}

// ---------------------------------------------------------------------------
// Role interfaces

class TextToImage {
public:
    virtual ~TextToImage() = default;
    virtual ImageArtifact generate(const T2IRequest& request) = 0;
    /// Identity used in cache keys; must not change over the client's life.
    virtual std::string model_id() const = 0;
    virtual std::string reported_model_id() const { return model_id(); }
};

class MultimodalLM {
public:
    virtual ~MultimodalLM() = default;
    virtual std::string generate(const std::string& prompt, std::span<const ImageArtifact> images,
                                 int max_new_tokens, double temperature) = 0;
    virtual std::string model_id() const = 0;
};

class TextLM {
public:
    virtual ~TextLM() = default;
    virtual std::string generate(const std::string& prompt, int max_new_tokens, double temperature) = 0;
    virtual std::string model_id() const = 0;
};

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::vector<EmbeddingVector> embed(std::span<const std::string> texts) = 0;
    virtual std::string model_id() const = 0;
};

/// Returns the backend's raw reply; validation happens in propose_splits().
class SegmentProposer {
public:
    virtual ~SegmentProposer() = default;
    virtual std::vector<long long> propose(const std::string& text, int parts, int token_cap) = 0;
    virtual std::string model_id() const = 0;
};

// ---------------------------------------------------------------------------
// Operations with contract checks

inline ImageArtifact t2i_generate(TextToImage& backend, const T2IRequest& request) {
    if (trim(request.prompt).empty()) throw PreconditionError("t2i_generate: prompt must not be empty");
    if (request.width == 0 || request.height == 0) throw PreconditionError("t2i_generate: width/height must be > 0");
    auto image = backend.generate(request);
    auto raster = decode_png(image.png);
    if (raster.width != request.width || raster.height != request.height) {
        throw FormatError("t2i_generate: backend returned " + std::to_string(raster.width) + "x" +
                          std::to_string(raster.height) + ", expected " + std::to_string(request.width) + "x" +
                          std::to_string(request.height));
    }
    image.width = raster.width;
    image.height = raster.height;
    return image;
}

inline std::vector<EmbeddingVector> embed_texts(Embedder& backend, std::span<const std::string> texts) {
    if (texts.empty()) throw PreconditionError("embed_texts: no input texts");
    for (const auto& t : texts)
        if (t.empty()) throw PreconditionError("embed_texts: empty input string");
    auto out = backend.embed(texts);
    if (out.size() != texts.size()) throw FormatError("embed_texts: vector count does not match input count");
    for (const auto& v : out)
        if (v.dim() != out.front().dim() || v.dim() == 0) throw FormatError("embed_texts: inconsistent dimensions");
    return out;
}

/// Strictly increasing split indices in (0, token_count), or nullopt when the
/// proposer's reply is unusable and the caller must fall back.
inline std::optional<std::vector<std::size_t>> validate_splits(std::span<const long long> reply, int parts,
                                                               std::size_t token_count) {
    if (reply.size() != std::size_t(parts - 1)) return std::nullopt;
    std::vector<std::size_t> out;
    long long prev = 0;
    for (long long v : reply) {
        if (v <= prev || v >= static_cast<long long>(token_count)) return std::nullopt;
        out.push_back(std::size_t(v));
        prev = v;
    }
    return out;
}

inline std::optional<std::vector<std::size_t>> propose_splits(SegmentProposer& backend, const std::string& text,
                                                              int parts, int token_cap,
                                                              const Tokenizer& tokenizer = whitespace_punct_tokenize) {
    if (parts < 2) throw PreconditionError("propose_splits: parts must be >= 2");
    const auto n = count_tokens(text, tokenizer).size();
    std::vector<long long> reply;
    try {
        reply = backend.propose(text, parts, token_cap);
    } catch (const BackendError&) {
        return std::nullopt;
    } catch (const FormatError&) {
        return std::nullopt;
    }
    return validate_splits(reply, parts, n);
}

/// Evenly spaced split indices round(k*n/parts), k = 1..parts-1, rounding half up.
inline std::vector<long long> even_split_indices(std::size_t token_count, int parts) {
    std::vector<long long> out;
    for (int k = 1; k < parts; ++k)
        out.push_back(static_cast<long long>((2 * std::uint64_t(k) * token_count + std::uint64_t(parts)) /
                                             (2 * std::uint64_t(parts))));
    return out;
}

// ---------------------------------------------------------------------------
// Deterministic mocks

/// Bytes of the 64-bit FNV-1a hash of `model_id \n prompt \n seed`, tiled
/// little-endian over the RGB canvas.
inline Raster mock_t2i_raster(std::string_view model_id, std::string_view prompt, std::uint64_t seed,
                              std::uint32_t width, std::uint32_t height) {
    std::string key;
    key.append(model_id).append("\n").append(prompt).append("\n").append(std::to_string(seed));
    const std::uint64_t h = fnv1a64(key);
    Raster r{width, height, std::vector<std::uint8_t>(std::size_t(width) * height * 3)};
    for (std::size_t i = 0; i < r.rgb.size(); ++i) r.rgb[i] = std::uint8_t(h >> (8 * (i % 8)));
    return r;
}

class MockTextToImage final : public TextToImage {
public:
    explicit MockTextToImage(std::string model_id = "mock-t2i") : model_id_(std::move(model_id)) {}

    ImageArtifact generate(const T2IRequest& req) override {
        ++calls_;
        auto raster = mock_t2i_raster(model_id_, req.prompt, req.seed, req.width, req.height);
        return make_artifact(raster, cache_key(model_id_, req.prompt, req.seed, req.width, req.height));
    }
    std::string model_id() const override { return model_id_; }
    long calls() const { return calls_.load(); }

private:
    std::string model_id_;
    std::atomic<long> calls_{0};
};

/// Behaviour of a mock language model, loaded from a fixture file section.
///
///   mode "fixture":     first rule whose `match` is a substring of the prompt wins;
///                       unmatched prompts use `fallback` ("hash" or "echo")
///   mode "echo":        returns the prompt verbatim
///   mode "echo_suffix": returns prompt + suffix
///   mode "hash":        picks canned[h % size] with h hashed over prompt and images
struct MockLMConfig {
    struct Rule {
        std::string match;
        std::string text;
    };
    std::string model_id = "mock-lm";
    std::string mode = "hash";
    std::vector<Rule> rules;
    std::string fallback = "hash";
    std::string suffix;
    std::vector<std::string> canned = {"Sadness",  "Happiness",   "Neutral", "Anger",   "Excitement",
                                       "Frustration", "Fear",     "Surprise", "Disgust", "Unknown",
                                       "I think it's a positive emotion", "sad", "positive"};
};

inline void from_json(const json& j, MockLMConfig& c) {
    c = MockLMConfig{};
    c.model_id = j.value("model_id", c.model_id);
    c.mode = j.value("mode", c.mode);
    c.fallback = j.value("fallback", c.fallback);
    c.suffix = j.value("suffix", c.suffix);
    if (j.contains("canned")) c.canned = j.at("canned").get<std::vector<std::string>>();
    for (const auto& r : j.value("rules", json::array()))
        c.rules.push_back({r.at("match").get<std::string>(), r.at("text").get<std::string>()});
    for (const auto& m : {c.mode, c.fallback})
        if (m != "fixture" && m != "echo" && m != "echo_suffix" && m != "hash")
            throw UsageError("mock LM: unknown mode '" + m + "'");
    if (c.canned.empty()) throw UsageError("mock LM: canned list must not be empty");
}

class MockLM final : public MultimodalLM, public TextLM {
public:
    explicit MockLM(MockLMConfig config = {}) : config_(std::move(config)) {}

    std::string generate(const std::string& prompt, std::span<const ImageArtifact> images, int,
                         double) override {
        ++calls_;
        return respond(config_.mode, prompt, images);
    }
    std::string generate(const std::string& prompt, int, double) override {
        ++calls_;
        return respond(config_.mode, prompt, {});
    }
    std::string model_id() const override { return config_.model_id; }
    long calls() const { return calls_.load(); }

private:
    std::string respond(const std::string& mode, const std::string& prompt,
                        std::span<const ImageArtifact> images) const {
        if (mode == "fixture") {
            for (const auto& rule : config_.rules)
                if (prompt.find(rule.match) != std::string::npos) return rule.text;
            return respond(config_.fallback == "fixture" ? "hash" : config_.fallback, prompt, images);
        }
        if (mode == "echo") return prompt;
        if (mode == "echo_suffix") return prompt + config_.suffix;
        std::uint64_t h = fnv1a64(prompt);
        for (const auto& img : images) h = fnv1a64(img.png, h);
        return config_.canned[h % config_.canned.size()];
    }

    MockLMConfig config_;
    std::atomic<long> calls_{0};
};

/// Feature-hashed character-trigram counts of the lower-cased text padded with
/// '#' on both sides, L2-normalised. Bucket = fnv1a64(trigram) % dim.
inline EmbeddingVector mock_trigram_embedding(std::string_view text, std::size_t dim = 256) {
    std::string padded = "#" + ascii_lower(text) + "#";
    EmbeddingVector v{std::vector<double>(dim, 0.0)};
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i) v.values[fnv1a64(padded.substr(i, 3)) % dim] += 1.0;
    double norm = 0;
    for (double x : v.values) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v.values) x /= norm;
    return v;
}

class MockEmbedder final : public Embedder {
public:
    explicit MockEmbedder(std::string model_id = "mock-trigram-256", std::size_t dim = 256)
        : model_id_(std::move(model_id)), dim_(dim) {}

    std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override {
        ++calls_;
        std::vector<EmbeddingVector> out;
        for (const auto& t : texts) {
            if (t.empty()) throw PreconditionError("embed: empty input string");
            out.push_back(mock_trigram_embedding(t, dim_));
        }
        return out;
    }
    std::string model_id() const override { return model_id_; }
    long calls() const { return calls_.load(); }

private:
    std::string model_id_;
    std::size_t dim_;
    std::atomic<long> calls_{0};
};

/// "even" returns evenly spaced token indices, "fixed" returns `indices`
/// verbatim (including malformed ones, for fallback tests).
class MockSegmentProposer final : public SegmentProposer {
public:
    explicit MockSegmentProposer(std::string mode = "even", std::vector<long long> indices = {},
                                 std::string model_id = "mock-segment")
        : mode_(std::move(mode)), indices_(std::move(indices)), model_id_(std::move(model_id)) {
        if (mode_ != "even" && mode_ != "fixed") throw UsageError("mock segment: unknown mode '" + mode_ + "'");
    }

    std::vector<long long> propose(const std::string& text, int parts, int) override {
        ++calls_;
        if (mode_ == "fixed") return indices_;
        return even_split_indices(count_tokens(text).size(), parts);
    }
    std::string model_id() const override { return model_id_; }
    long calls() const { return calls_.load(); }

private:
    std::string mode_;
    std::vector<long long> indices_;
    std::string model_id_;
    std::atomic<long> calls_{0};
};

/// Contents of a mock fixture file; every section is optional.
struct MockFixture {
    std::string t2i_model_id = "mock-t2i";
    MockLMConfig mllm = [] {
        MockLMConfig c;
        c.model_id = "mock-mllm";
        return c;
    }();
    MockLMConfig llm = [] {
        MockLMConfig c;
        c.model_id = "mock-llm";
        return c;
    }();
    std::string embed_model_id = "mock-trigram-256";
    std::size_t embed_dim = 256;
    std::string segment_mode = "even";
    std::vector<long long> segment_indices;
    std::map<std::string, int> fail_first;  // route -> number of initial 503 replies (server only)
};

inline void from_json(const json& j, MockFixture& f) {
    f = MockFixture{};
    if (j.contains("t2i")) f.t2i_model_id = j["t2i"].value("model_id", f.t2i_model_id);
    if (j.contains("mllm")) {
        f.mllm = j["mllm"].get<MockLMConfig>();
        if (!j["mllm"].contains("model_id")) f.mllm.model_id = "mock-mllm";
    }
    if (j.contains("llm")) {
        f.llm = j["llm"].get<MockLMConfig>();
        if (!j["llm"].contains("model_id")) f.llm.model_id = "mock-llm";
    }
    if (j.contains("embed")) {
        f.embed_model_id = j["embed"].value("model_id", f.embed_model_id);
        f.embed_dim = j["embed"].value("dim", f.embed_dim);
    }
    if (j.contains("segment")) {
        f.segment_mode = j["segment"].value("mode", f.segment_mode);
        f.segment_indices = j["segment"].value("indices", f.segment_indices);
    }
    f.fail_first = j.value("fail_first", f.fail_first);
}

inline MockFixture load_mock_fixture(const std::string& path) {
    if (path.empty()) return {};
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open mock fixture '" + path + "'");
    try {
        return json::parse(in).get<MockFixture>();
    } catch (const json::exception& e) {
        throw UsageError("mock fixture '" + path + "': " + e.what());
    }
}

// ---------------------------------------------------------------------------
// HTTP clients

/// Shared transport: JSON POST with timeout, bearer token (MH_TOKEN) and
/// exponential-backoff retries on transport errors, 429 and 5xx.
class HttpClient {
public:
    explicit HttpClient(BackendDescriptor d) : desc_(std::move(d)) {
        if (const char* t = std::getenv("MH_TOKEN")) token_ = t;
    }

    const BackendDescriptor& descriptor() const noexcept { return desc_; }

    json post(const std::string& route, const json& body) const {
        const std::string payload = body.dump();
        std::string last_error;
        for (int attempt = 0; attempt <= desc_.max_retries; ++attempt) {
            if (attempt > 0) {
                ++retry_counter();
                std::this_thread::sleep_for(std::chrono::milliseconds(std::int64_t(desc_.backoff_ms) << (attempt - 1)));
            }
            httplib::Client cli(desc_.endpoint);
            const auto to = std::chrono::milliseconds(desc_.timeout_ms);
            cli.set_connection_timeout(to);
            cli.set_read_timeout(to);
            cli.set_write_timeout(to);
            if (!token_.empty()) cli.set_bearer_token_auth(token_);
            auto res = cli.Post(route, payload, "application/json");
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 200) {
                try {
                    return json::parse(res->body);
                } catch (const json::parse_error& e) {
                    throw FormatError(desc_.id + " " + route + ": malformed response: " + e.what());
                }
            }
            last_error = "HTTP " + std::to_string(res->status) + ": " + error_text(res->body);
            if (res->status != 429 && res->status < 500) throw BackendError(desc_.id + " " + route + ": " + last_error, false);
        }
        throw BackendUnavailable(desc_.id + " " + route + ": gave up after " + std::to_string(desc_.max_retries + 1) +
                                 " attempt(s): " + last_error);
    }

    void note_model_id(const json& reply) const {
        if (reply.contains("model_id") && reply["model_id"].is_string()) {
            std::lock_guard lock(mu_);
            reported_ = reply["model_id"].get<std::string>();
        }
    }

    std::string reported_model_id() const {
        std::lock_guard lock(mu_);
        return reported_.empty() ? desc_.model_id : reported_;
    }

private:
    static std::string error_text(const std::string& body) {
        try {
            auto j = json::parse(body);
            if (j.contains("error")) return j["error"].get<std::string>();
        } catch (const json::exception&) {
        }
        return body;
    }

    BackendDescriptor desc_;
    std::string token_;
    mutable std::mutex mu_;
    mutable std::string reported_;
};

template <class Reply>
Reply field(const json& j, const char* name, const std::string& context) {
    try {
        return j.at(name).get<Reply>();
    } catch (const json::exception& e) {
        throw FormatError(context + ": bad or missing field '" + name + "': " + e.what());
    }
}

class HttpTextToImage final : public TextToImage {
public:
    explicit HttpTextToImage(BackendDescriptor d) : http_(std::move(d)) {}

    ImageArtifact generate(const T2IRequest& req) override {
        auto reply = http_.post("/v1/t2i", {{"prompt", req.prompt},
                                            {"seed", req.seed},
                                            {"width", req.width},
                                            {"height", req.height}});
        http_.note_model_id(reply);
        ImageArtifact img;
        img.png = base64_decode(field<std::string>(reply, "image_png_b64", "/v1/t2i"));
        img.width = req.width;
        img.height = req.height;
        img.cache_key = cache_key(model_id(), req.prompt, req.seed, req.width, req.height);
        return img;
    }
    std::string model_id() const override {
        const auto& d = http_.descriptor();
        return d.model_id.empty() ? d.endpoint : d.model_id;
    }
    std::string reported_model_id() const override { return http_.reported_model_id(); }

private:
    HttpClient http_;
};

class HttpMultimodalLM final : public MultimodalLM {
public:
    explicit HttpMultimodalLM(BackendDescriptor d) : http_(std::move(d)) {}

    std::string generate(const std::string& prompt, std::span<const ImageArtifact> images, int max_new_tokens,
                         double temperature) override {
        json imgs = json::array();
        for (const auto& i : images) imgs.push_back(base64_encode(i.png));
        auto reply = http_.post("/v1/mm-generate", {{"prompt", prompt},
                                                    {"images_png_b64", imgs},
                                                    {"max_new_tokens", max_new_tokens},
                                                    {"temperature", temperature}});
        http_.note_model_id(reply);
        return field<std::string>(reply, "text", "/v1/mm-generate");
    }
    std::string model_id() const override { return http_.reported_model_id(); }

private:
    HttpClient http_;
};

class HttpTextLM final : public TextLM {
public:
    explicit HttpTextLM(BackendDescriptor d) : http_(std::move(d)) {}

    std::string generate(const std::string& prompt, int max_new_tokens, double temperature) override {
        auto reply = http_.post("/v1/generate",
                                {{"prompt", prompt}, {"max_new_tokens", max_new_tokens}, {"temperature", temperature}});
        http_.note_model_id(reply);
        return field<std::string>(reply, "text", "/v1/generate");
    }
    std::string model_id() const override { return http_.reported_model_id(); }

private:
    HttpClient http_;
};

class HttpEmbedder final : public Embedder {
public:
    explicit HttpEmbedder(BackendDescriptor d) : http_(std::move(d)) {}

    std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override {
        auto reply = http_.post("/v1/embed", {{"texts", std::vector<std::string>(texts.begin(), texts.end())}});
        auto vectors = field<std::vector<std::vector<double>>>(reply, "vectors", "/v1/embed");
        auto dim = field<std::size_t>(reply, "dim", "/v1/embed");
        std::vector<EmbeddingVector> out;
        for (auto& v : vectors) {
            if (v.size() != dim) throw FormatError("/v1/embed: vector length does not match dim");
            out.push_back({std::move(v)});
        }
        return out;
    }
    std::string model_id() const override { return http_.descriptor().model_id; }

private:
    HttpClient http_;
};

class HttpSegmentProposer final : public SegmentProposer {
public:
    explicit HttpSegmentProposer(BackendDescriptor d) : http_(std::move(d)) {}

    std::vector<long long> propose(const std::string& text, int parts, int token_cap) override {
        auto reply = http_.post("/v1/segment", {{"text", text}, {"parts", parts}, {"token_cap", token_cap}});
        return field<std::vector<long long>>(reply, "token_indices", "/v1/segment");
    }
    std::string model_id() const override { return http_.descriptor().model_id; }

private:
    HttpClient http_;
};

// ---------------------------------------------------------------------------
// Backend set

/// Resolved backends for one run. Roles a spec does not need may be null.
struct BackendSet {
    std::shared_ptr<TextToImage> t2i;
    std::shared_ptr<MultimodalLM> mllm;
    std::shared_ptr<TextLM> llm;
    std::shared_ptr<Embedder> embed;
    std::shared_ptr<SegmentProposer> segment;
    std::vector<BackendDescriptor> descriptors;  // the ones actually bound

    /// role name -> reported model id, for the run manifest.
    std::map<std::string, std::string> model_ids() const {
        std::map<std::string, std::string> out;
        if (t2i) out["t2i"] = t2i->reported_model_id();
        if (mllm) out["mllm"] = mllm->model_id();
        if (llm) out["llm"] = llm->model_id();
        if (embed) out["embed"] = embed->model_id();
        if (segment) out["segment"] = segment->model_id();
        return out;
    }
};

inline bool is_mock_endpoint(const std::string& endpoint) {
    return endpoint.empty() || endpoint == "mock" || endpoint.rfind("mock:", 0) == 0;
}

inline std::vector<BackendDescriptor> parse_backends(const json& j) {
    const json& list = j.is_array() ? j : j.at("backends");
    std::vector<BackendDescriptor> out;
    for (const auto& d : list) out.push_back(d.get<BackendDescriptor>());
    return out;
}

inline std::vector<BackendDescriptor> load_backends_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open backends file '" + path + "'");
    try {
        auto out = parse_backends(json::parse(in));
        // relative fixture paths are relative to the descriptor file
        for (auto& d : out)
            if (!d.fixture.empty() && std::filesystem::path(d.fixture).is_relative())
                d.fixture = (std::filesystem::path(path).parent_path() / d.fixture).string();
        return out;
    } catch (const json::exception& e) {
        throw UsageError("backends file '" + path + "': " + e.what());
    }
}

/// Descriptors for an all-mock run with the given fixture file.
inline std::vector<BackendDescriptor> mock_descriptors(const std::string& fixture = {}) {
    std::vector<BackendDescriptor> out;
    for (auto role : {BackendRole::t2i, BackendRole::mllm, BackendRole::llm, BackendRole::embed, BackendRole::segment})
        out.push_back({enum_name(role), role, "mock", "", 1000, 0, 0, fixture});
    return out;
}

/// Descriptors pointing every role at one HTTP server.
inline std::vector<BackendDescriptor> http_descriptors(const std::string& base_url, int max_retries = 2,
                                                       int backoff_ms = 50) {
    std::vector<BackendDescriptor> out;
    for (auto role : {BackendRole::t2i, BackendRole::mllm, BackendRole::llm, BackendRole::embed, BackendRole::segment})
        out.push_back({enum_name(role), role, base_url, "", 30000, max_retries, backoff_ms, ""});
    return out;
}

/// Picks, per role, the descriptor named in `ids` (or the first with that
/// role) and instantiates a client for it.
inline BackendSet make_backends(const std::vector<BackendDescriptor>& descriptors,
                                const std::map<std::string, std::string>& ids) {
    BackendSet set;
    for (const auto& [role_name, wanted] : ids) {
        const auto role = enum_from_name<BackendRole>(role_name);
        const BackendDescriptor* chosen = nullptr;
        for (const auto& d : descriptors)
            if (d.role == role && d.id == wanted) chosen = &d;
        if (!chosen)
            for (const auto& d : descriptors)
                if (d.role == role) {
                    chosen = &d;
                    break;
                }
        if (!chosen) throw UsageError("no backend descriptor for role '" + role_name + "'");
        const auto& d = *chosen;
        set.descriptors.push_back(d);
        const bool mock = is_mock_endpoint(d.endpoint);
        const MockFixture fx = mock ? load_mock_fixture(d.fixture) : MockFixture{};
        auto with_id = [&](std::string fallback) { return d.model_id.empty() ? fallback : d.model_id; };
        switch (role) {
            case BackendRole::t2i:
                set.t2i = mock ? std::shared_ptr<TextToImage>(std::make_shared<MockTextToImage>(with_id(fx.t2i_model_id)))
                               : std::make_shared<HttpTextToImage>(d);
                break;
            case BackendRole::mllm:
                if (mock) {
                    auto cfg = fx.mllm;
                    cfg.model_id = with_id(cfg.model_id);
                    set.mllm = std::make_shared<MockLM>(cfg);
                } else {
                    set.mllm = std::make_shared<HttpMultimodalLM>(d);
                }
                break;
            case BackendRole::llm:
                if (mock) {
                    auto cfg = fx.llm;
                    cfg.model_id = with_id(cfg.model_id);
                    set.llm = std::make_shared<MockLM>(cfg);
                } else {
                    set.llm = std::make_shared<HttpTextLM>(d);
                }
                break;
            case BackendRole::embed:
                set.embed = mock ? std::shared_ptr<Embedder>(
                                       std::make_shared<MockEmbedder>(with_id(fx.embed_model_id), fx.embed_dim))
                                 : std::make_shared<HttpEmbedder>(d);
                break;
            case BackendRole::segment:
                set.segment = mock ? std::shared_ptr<SegmentProposer>(std::make_shared<MockSegmentProposer>(
                                         fx.segment_mode, fx.segment_indices, with_id("mock-segment")))
                                   : std::make_shared<HttpSegmentProposer>(d);
                break;
        }
    }
    return set;
}

}  // namespace mh
