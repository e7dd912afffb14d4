#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include "spurctx/remote_policy.hpp"

namespace spurctx {
namespace {

const RubricDimension& clbm() { return dimension_or_throw("CLBM"); }

// In-process chat-completions server for offline tests.
class LocalServer {
public:
    explicit LocalServer(int fail_first_n = 0, int fail_status = 500)
        : fail_first_(fail_first_n), fail_status_(fail_status) {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req,
                                                    httplib::Response& res) {
            ++requests_;
            last_body_ = req.body;
            last_auth_ = req.get_header_value("Authorization");
            if (requests_ <= fail_first_) {
                res.status = fail_status_;
                res.set_content("{\"error\":\"transient\"}", "application/json");
                return;
            }
            auto body = nlohmann::json::parse(req.body);
            std::string content = scripted_reply_.empty()
                                      ? "Rating: 4"
                                      : scripted_reply_;
            nlohmann::json reply{
                {"id", "cmpl-1"},
                {"model", body.value("model", "unknown")},
                {"choices",
                 nlohmann::json::array(
                     {{{"index", 0},
                       {"message", {{"role", "assistant"}, {"content", content}}}}})}};
            res.set_content(reply.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~LocalServer() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    int requests() const { return requests_; }
    std::string last_body() const { return last_body_; }
    std::string last_auth() const { return last_auth_; }
    void set_reply(std::string reply) { scripted_reply_ = std::move(reply); }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> requests_{0};
    int fail_first_;
    int fail_status_;
    std::string last_body_;
    std::string last_auth_;
    std::string scripted_reply_;
};

RemoteOptions options_for(const LocalServer& server) {
    RemoteOptions opts;
    opts.base_url = server.base_url();
    opts.api_key = "test-key";
    opts.model = "test-model";
    opts.max_retries = 3;
    opts.backoff_initial_ms = 1;
    return opts;
}

TEST(RemotePolicy, SpeaksChatCompletionWireShape) {
    LocalServer server;
    RemotePolicy policy(options_for(server));
    auto prompt = build_prompt("Teacher: wire test", clbm());
    DecodingParams dp;
    dp.temperature = 0.7;
    dp.seed = 42;
    auto completion = policy.complete(prompt, dp);
    EXPECT_EQ(completion.text, "Rating: 4");
    EXPECT_EQ(completion.model_id, "test-model");

    auto body = nlohmann::json::parse(server.last_body());
    EXPECT_EQ(body["model"], "test-model");
    EXPECT_EQ(body["messages"][0]["role"], "user");
    EXPECT_EQ(body["messages"][0]["content"], prompt.rendered);
    EXPECT_DOUBLE_EQ(body["temperature"].get<double>(), 0.7);
    EXPECT_EQ(body["seed"], 42);
    EXPECT_EQ(server.last_auth(), "Bearer test-key");
}

TEST(RemotePolicy, RetriesTransientFailuresWithBackoff) {
    LocalServer server(/*fail_first_n=*/2);
    RemotePolicy policy(options_for(server));
    auto prompt = build_prompt("Teacher: retry test", clbm());
    auto completion = policy.complete(prompt, {});
    EXPECT_EQ(completion.text, "Rating: 4");
    EXPECT_EQ(server.requests(), 3);  // two failures then success
    EXPECT_EQ(policy.network_calls(), 3u);
}

TEST(RemotePolicy, SurfacesFailureAfterRetryCap) {
    LocalServer server(/*fail_first_n=*/100);
    auto opts = options_for(server);
    opts.max_retries = 2;
    RemotePolicy policy(opts);
    auto prompt = build_prompt("Teacher: always failing", clbm());
    EXPECT_THROW(policy.complete(prompt, {}), std::runtime_error);
    EXPECT_EQ(server.requests(), 3);  // initial try + two retries
}

TEST(RemotePolicy, ContextOverflowReportedDistinctly) {
    // A 400 with a context-length message must raise the dedicated error type
    // and must not be retried.
    httplib::Server raw;
    std::atomic<int> hits{0};
    raw.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        ++hits;
        res.status = 400;
        res.set_content("{\"error\":{\"code\":\"context_length_exceeded\"}}", "application/json");
    });
    int port = raw.bind_to_any_port("127.0.0.1");
    std::thread listener([&] { raw.listen_after_bind(); });
    raw.wait_until_ready();

    RemoteOptions opts;
    opts.base_url = "http://127.0.0.1:" + std::to_string(port);
    opts.model = "test-model";
    opts.backoff_initial_ms = 1;
    RemotePolicy policy(opts);
    auto prompt = build_prompt("Teacher: very long", clbm());
    EXPECT_THROW(policy.complete(prompt, {}), ContextLengthError);
    EXPECT_EQ(hits.load(), 1);

    raw.stop();
    listener.join();
}

TEST(RemotePolicy, WarmCacheIssuesZeroNetworkCalls) {
    auto dir = std::filesystem::temp_directory_path() / "spurctx-cache-test";
    std::filesystem::remove_all(dir);
    CompletionCache cache(dir.string());

    LocalServer server;
    RemotePolicy policy(options_for(server), &cache);
    auto prompt = build_prompt("Teacher: cache test", clbm());
    DecodingParams dp;
    dp.temperature = 0.7;
    dp.seed = 9;

    auto first = policy.complete(prompt, dp);
    EXPECT_EQ(policy.network_calls(), 1u);
    auto second = policy.complete(prompt, dp);
    EXPECT_EQ(second.text, first.text);
    EXPECT_EQ(policy.network_calls(), 1u);  // served from cache

    // A fresh client over the same cache directory also goes network-free.
    RemotePolicy rerun(options_for(server), &cache);
    auto third = rerun.complete(prompt, dp);
    EXPECT_EQ(third.text, first.text);
    EXPECT_EQ(rerun.network_calls(), 0u);

    // Distinct repeat indices are distinct cache entries.
    dp.repeat_index = 1;
    rerun.complete(prompt, dp);
    EXPECT_EQ(rerun.network_calls(), 1u);
    std::filesystem::remove_all(dir);
}

TEST(CompletionCache, KeyCoversCallIdentity) {
    DecodingParams dp;
    dp.temperature = 0.7;
    dp.seed = 1;
    auto base = CompletionCache::key("m", "prompt", dp);
    EXPECT_EQ(base, CompletionCache::key("m", "prompt", dp));
    EXPECT_NE(base, CompletionCache::key("other", "prompt", dp));
    EXPECT_NE(base, CompletionCache::key("m", "prompt!", dp));
    auto dp2 = dp;
    dp2.temperature = 0.0;
    EXPECT_NE(base, CompletionCache::key("m", "prompt", dp2));
    auto dp3 = dp;
    dp3.seed = 2;
    EXPECT_NE(base, CompletionCache::key("m", "prompt", dp3));
    auto dp4 = dp;
    dp4.repeat_index = 3;
    EXPECT_NE(base, CompletionCache::key("m", "prompt", dp4));
}

TEST(RemoteOptions, FromEnvRequiresBaseUrl) {
    unsetenv("SPURCTX_API_BASE");
    EXPECT_THROW(RemoteOptions::from_env("model"), std::runtime_error);
    setenv("SPURCTX_API_BASE", "http://127.0.0.1:1", 1);
    setenv("SPURCTX_API_KEY", "k", 1);
    auto opts = RemoteOptions::from_env("model-x");
    EXPECT_EQ(opts.base_url, "http://127.0.0.1:1");
    EXPECT_EQ(opts.api_key, "k");
    EXPECT_EQ(opts.model, "model-x");
    unsetenv("SPURCTX_API_BASE");
    unsetenv("SPURCTX_API_KEY");
}

}  // namespace
}  // namespace spurctx
