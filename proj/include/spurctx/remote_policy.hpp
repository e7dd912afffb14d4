#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "spurctx/policy.hpp"
#include "spurctx/util.hpp"

namespace spurctx {

// A prompt that does not fit the model's context window; reported separately
// from transient transport failures because retrying cannot help.
class ContextLengthError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Content-addressed store of completed calls under a cache directory. The key
// covers everything that identifies a call: model, rendered prompt,
// temperature, seed and repeat index, so repeated stochastic sampling is
// replayable per repeat. Readers are lock-free on distinct keys; writers are
// serialized and publish via rename.
class CompletionCache {
public:
    explicit CompletionCache(std::string dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    static std::string key(const std::string& model_id, const std::string& rendered_prompt,
                           const DecodingParams& dp) {
        std::string material = model_id;
        material += '\x1f';
        material += rendered_prompt;
        material += '\x1f';
        material += fmt_fixed(dp.temperature, 6);
        material += '\x1f';
        material += dp.seed ? std::to_string(*dp.seed) : "-";
        material += '\x1f';
        material += std::to_string(dp.repeat_index);
        return hex64(fnv1a64(material));
    }

    std::optional<Completion> get(const std::string& key) const {
        std::string path = dir_ + "/" + key + ".json";
        std::error_code ec;
        if (!std::filesystem::exists(path, ec)) return std::nullopt;
        nlohmann::json obj = nlohmann::json::parse(read_file(path));
        Completion completion;
        completion.text = obj["response"]["text"].get<std::string>();
        completion.model_id = obj["response"].value("model_id", std::string());
        completion.latency_ms = obj["response"].value("latency_ms", 0.0);
        return completion;
    }

    void put(const std::string& key, const nlohmann::json& request,
             const Completion& completion) {
        nlohmann::json obj;
        obj["request"] = request;
        obj["response"] = {{"text", completion.text},
                           {"model_id", completion.model_id},
                           {"latency_ms", completion.latency_ms}};
        std::lock_guard<std::mutex> lock(write_mutex_);
        std::string tmp = dir_ + "/" + key + ".tmp";
        std::string path = dir_ + "/" + key + ".json";
        write_file(tmp, obj.dump(2));
        std::filesystem::rename(tmp, path);
    }

    const std::string& dir() const { return dir_; }

private:
    std::string dir_;
    mutable std::mutex write_mutex_;
};

struct RemoteOptions {
    std::string base_url;  // e.g. http://127.0.0.1:8080 ; path /v1/chat/completions is appended
    std::string api_key;
    std::string model;
    int max_retries = 3;
    int backoff_initial_ms = 250;
    int timeout_sec = 60;
    int max_in_flight = 8;

    static RemoteOptions from_env(const std::string& model) {
        RemoteOptions opts;
        const char* base = std::getenv("SPURCTX_API_BASE");
        const char* key = std::getenv("SPURCTX_API_KEY");
        if (!base) throw std::runtime_error("SPURCTX_API_BASE is not set");
        opts.base_url = base;
        opts.api_key = key ? key : "";
        opts.model = model;
        return opts;
    }
};

// Speaks the de-facto chat-completion wire protocol: POST /v1/chat/completions
// with bearer auth and a messages array. Transient failures (transport errors
// and 5xx/429) are retried with exponential backoff up to the configured cap;
// anything else surfaces immediately.
class RemotePolicy final : public Policy {
public:
    explicit RemotePolicy(RemoteOptions opts, CompletionCache* cache = nullptr)
        : opts_(std::move(opts)),
          cache_(cache),
          in_flight_(opts_.max_in_flight > 0 ? opts_.max_in_flight : 1) {}

    Completion complete(const PromptSpec& prompt, const DecodingParams& dp) override {
        std::string key = CompletionCache::key(opts_.model, prompt.rendered, dp);
        if (cache_) {
            if (auto hit = cache_->get(key)) return *hit;
        }

        nlohmann::json request{{"model", opts_.model},
                               {"messages",
                                nlohmann::json::array(
                                    {{{"role", "user"}, {"content", prompt.rendered}}})},
                               {"temperature", dp.temperature},
                               {"max_tokens", dp.max_tokens}};
        if (dp.seed) request["seed"] = *dp.seed;

        Completion completion = post_with_retries(request);
        if (cache_) cache_->put(key, request, completion);
        return completion;
    }

    std::string model_id() const override { return opts_.model; }

    // Network calls actually issued (cache hits excluded); used to verify the
    // warm-cache contract.
    std::uint64_t network_calls() const { return network_calls_.load(); }

private:
    Completion post_with_retries(const nlohmann::json& request) {
        in_flight_.acquire();
        struct Release {
            std::counting_semaphore<256>& sem;
            ~Release() { sem.release(); }
        } release{in_flight_};

        std::string last_error;
        int backoff = opts_.backoff_initial_ms;
        for (int attempt = 0; attempt <= opts_.max_retries; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
                backoff *= 2;
            }
            ++network_calls_;
            auto started = std::chrono::steady_clock::now();

            httplib::Client client(opts_.base_url);
            client.set_connection_timeout(opts_.timeout_sec, 0);
            client.set_read_timeout(opts_.timeout_sec, 0);
            httplib::Headers headers;
            if (!opts_.api_key.empty())
                headers.emplace("Authorization", "Bearer " + opts_.api_key);

            auto res = client.Post("/v1/chat/completions", headers, request.dump(),
                                   "application/json");
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 200) {
                auto elapsed = std::chrono::duration<double, std::milli>(
                                   std::chrono::steady_clock::now() - started)
                                   .count();
                return parse_response(res->body, elapsed);
            }
            if (res->status == 400 && looks_like_context_overflow(res->body))
                throw ContextLengthError("prompt exceeds model context window: " + res->body);
            if (res->status == 429 || res->status >= 500) {
                last_error = "http " + std::to_string(res->status) + ": " + res->body;
                continue;
            }
            throw std::runtime_error("chat completion failed (http " +
                                     std::to_string(res->status) + "): " + res->body);
        }
        throw std::runtime_error("chat completion failed after " +
                                 std::to_string(opts_.max_retries + 1) +
                                 " attempts; last error: " + last_error);
    }

    Completion parse_response(const std::string& body, double latency_ms) const {
        nlohmann::json obj = nlohmann::json::parse(body);
        const auto& choices = obj.at("choices");
        if (!choices.is_array() || choices.empty())
            throw std::runtime_error("chat completion response has no choices");
        Completion completion;
        completion.text = choices[0].at("message").at("content").get<std::string>();
        completion.model_id = obj.value("model", opts_.model);
        completion.latency_ms = latency_ms;
        return completion;
    }

    static bool looks_like_context_overflow(const std::string& body) {
        std::string lower = to_lower(body);
        return lower.find("context_length") != std::string::npos ||
               lower.find("context length") != std::string::npos ||
               lower.find("maximum context") != std::string::npos;
    }

    RemoteOptions opts_;
    CompletionCache* cache_;
    std::counting_semaphore<256> in_flight_;
    std::atomic<std::uint64_t> network_calls_{0};
};

}  // namespace spurctx
