#include <gtest/gtest.h>

#include "mh/mock_server.hpp"
#include "mh/segmentation.hpp"

using namespace mh;

namespace {

json post(const MockServer& s, const std::string& route, const std::string& body, int* status = nullptr) {
    httplib::Client cli(s.base_url());
    auto res = cli.Post(route, body, "application/json");
    EXPECT_TRUE(res);
    if (status) *status = res->status;
    return json::parse(res->body);
}

}  // namespace

TEST(MockServer, HealthAndStats) {
    MockServer server;
    server.start();
    httplib::Client cli(server.base_url());
    auto health = cli.Get("/healthz");
    ASSERT_TRUE(health);
    EXPECT_EQ(health->status, 200);
    EXPECT_EQ(json::parse(health->body).at("status"), "ok");

    HttpTextLM llm(http_descriptors(server.base_url())[2]);
    llm.generate("hello", 8, 0.0);
    llm.generate("again", 8, 0.0);
    auto stats = json::parse(cli.Get("/v1/stats")->body);
    EXPECT_EQ(stats.at("/v1/generate"), 2);
    EXPECT_EQ(server.calls("/v1/generate"), 2);
    server.reset_stats();
    EXPECT_EQ(server.calls("/v1/generate"), 0);
}

TEST(MockServer, HttpClientsMatchInProcessMocks) {
    MockServer server;
    server.start();
    const auto ds = http_descriptors(server.base_url());
    auto remote = make_backends(ds, {{"t2i", "t2i"}, {"mllm", "mllm"}, {"llm", "llm"}, {"embed", "embed"},
                                     {"segment", "segment"}});
    auto local = make_backends(mock_descriptors(), {{"t2i", "t2i"}, {"mllm", "mllm"}, {"llm", "llm"},
                                                    {"embed", "embed"}, {"segment", "segment"}});

    const T2IRequest req{"a boat", 9, 16, 8};
    const auto img = t2i_generate(*remote.t2i, req);
    EXPECT_EQ(decode_png(img.png), decode_png(t2i_generate(*local.t2i, req).png));
    EXPECT_EQ(remote.t2i->reported_model_id(), "mock-t2i");

    const std::vector<ImageArtifact> imgs{img};
    EXPECT_EQ(remote.mllm->generate("Q?", imgs, 64, 0.0), local.mllm->generate("Q?", imgs, 64, 0.0));
    EXPECT_EQ(remote.mllm->model_id(), "mock-mllm");
    EXPECT_EQ(remote.llm->generate("Q?", 64, 0.0), local.llm->generate("Q?", 64, 0.0));

    const std::vector<std::string> texts{"sad", "Sadness"};
    const auto rv = embed_texts(*remote.embed, texts), lv = embed_texts(*local.embed, texts);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t k = 0; k < rv[i].dim(); ++k) EXPECT_DOUBLE_EQ(rv[i].values[k], lv[i].values[k]);

    const std::string story = "One. Two. Three. Four. Five six seven.";
    EXPECT_EQ(remote.segment->propose(story, 5, 77), local.segment->propose(story, 5, 77));
}

TEST(MockServer, ErrorBodiesAndStatusCodes) {
    MockServer server;
    server.start();
    int status = 0;
    auto body = post(server, "/v1/t2i", "{not json", &status);
    EXPECT_EQ(status, 400);
    EXPECT_TRUE(body.contains("error"));
    body = post(server, "/v1/t2i", R"({"prompt": "", "seed": 0, "width": 8, "height": 8})", &status);
    EXPECT_EQ(status, 400);
    body = post(server, "/v1/t2i", R"({"prompt": "x", "seed": 0, "width": 5000, "height": 8})", &status);
    EXPECT_EQ(status, 400);
    body = post(server, "/v1/embed", R"({"texts": []})", &status);
    EXPECT_EQ(status, 400);
    body = post(server, "/v1/segment", R"({"text": "a. b.", "parts": 1})", &status);
    EXPECT_EQ(status, 400);
    body = post(server, "/v1/generate", R"({"max_new_tokens": 4})", &status);
    EXPECT_EQ(status, 400);
    EXPECT_EQ(server.calls("/v1/t2i"), 0);

    // a 4xx is not retried and surfaces as a non-retryable backend error
    auto d = http_descriptors(server.base_url(), 3, 1)[0];
    HttpTextToImage t2i(d);
    retry_counter() = 0;
    try {
        t2i.generate({"x", 0, 5000, 8});
        FAIL() << "expected BackendError";
    } catch (const BackendError& e) {
        EXPECT_FALSE(e.retryable());
        EXPECT_NE(std::string(e.what()).find("4096"), std::string::npos);
    }
    EXPECT_EQ(retry_counter(), 0);
}

TEST(MockServer, TransientFailuresAreRetried) {
    MockFixture fx;
    fx.fail_first = {{"/v1/generate", 2}};
    MockServer server(fx);
    server.start();
    retry_counter() = 0;
    HttpTextLM llm(http_descriptors(server.base_url(), 2, 1)[2]);
    EXPECT_FALSE(llm.generate("x", 8, 0.0).empty());
    EXPECT_EQ(retry_counter(), 2);
    EXPECT_EQ(server.calls("/v1/generate"), 1);
}

TEST(MockServer, ExhaustedRetriesMeanUnavailable) {
    MockFixture fx;
    fx.fail_first = {{"/v1/generate", 5}};
    MockServer server(fx);
    server.start();
    HttpTextLM llm(http_descriptors(server.base_url(), 1, 1)[2]);
    EXPECT_THROW(llm.generate("x", 8, 0.0), BackendUnavailable);
}

TEST(MockServer, UnreachableEndpointIsUnavailable) {
    MockServer server;
    const int port = server.start();
    server.stop();
    auto d = http_descriptors("http://127.0.0.1:" + std::to_string(port), 0, 1)[2];
    d.timeout_ms = 500;
    HttpTextLM llm(d);
    EXPECT_THROW(llm.generate("x", 8, 0.0), BackendUnavailable);
}

TEST(MockServer, SegmentProposerFailureFallsBack) {
    MockFixture fx;
    fx.fail_first = {{"/v1/segment", 100}};
    MockServer server(fx);
    server.start();
    HttpSegmentProposer proposer(http_descriptors(server.base_url(), 0, 1)[4]);
    const Story s{"s", "One cat sat. Two dogs ran. Three birds flew. Four fish swam. Five frogs hopped.", {}};
    EXPECT_EQ(segment_story(s, proposer).method, SegmentMethod::fallback_quartile);
}
