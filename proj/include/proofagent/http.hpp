// SPDX-License-Identifier: Apache-2.0
#pragma once

// Live providers speaking the OpenAI-compatible chat-completions and
// embeddings protocol. Link against proofagent_http for TLS support.

#include "proofagent/providers.hpp"

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <thread>

namespace proofagent {

struct HttpConfig {
    std::string base_url = "https://api.openai.com/v1";
    std::string api_key;
    std::string chat_model = "gpt-4";
    std::string embedding_model = "text-embedding-3-large";
    int timeout_seconds = 120;
    int max_retries = 3;
    int retry_backoff_ms = 500;
};

namespace detail {

struct Endpoint {
    std::string origin; // scheme://host[:port]
    std::string prefix; // path prefix without trailing slash
};

inline Endpoint split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw Error("endpoint URL needs a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    Endpoint e;
    e.origin = url.substr(0, path_start);
    e.prefix = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
    return e;
}

inline bool transient_status(int status) {
    return status == 408 || status == 409 || status == 429 || status >= 500;
}

/// POSTs a JSON body with bounded retries on transport failures and
/// transient statuses. Returns the parsed response body.
class JsonPoster {
public:
    explicit JsonPoster(const HttpConfig& cfg) : cfg_(cfg), endpoint_(split_url(cfg.base_url)) {}

    nlohmann::json post(const std::string& path, const nlohmann::json& body) {
        httplib::Client client(endpoint_.origin);
        client.set_connection_timeout(cfg_.timeout_seconds, 0);
        client.set_read_timeout(cfg_.timeout_seconds, 0);
        client.set_write_timeout(cfg_.timeout_seconds, 0);
        httplib::Headers headers;
        if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);
        auto payload = body.dump();

        std::string last_error;
        for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
            if (attempt > 0) {
                ++retries_;
                if (cfg_.retry_backoff_ms > 0)
                    std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.retry_backoff_ms << (attempt - 1)));
            }
            auto res = client.Post(endpoint_.prefix + path, headers, payload, "application/json");
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status >= 200 && res->status < 300) {
                auto j = nlohmann::json::parse(res->body, nullptr, false);
                if (j.is_discarded()) throw ProviderError("endpoint returned invalid JSON", false);
                return j;
            }
            last_error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 300);
            if (!transient_status(res->status)) throw ProviderError(last_error, false);
        }
        throw ProviderError(last_error + " (after " + std::to_string(cfg_.max_retries) + " retries)", true);
    }

    std::size_t retries() const noexcept { return retries_.load(); }

private:
    HttpConfig cfg_;
    Endpoint endpoint_;
    std::atomic<std::size_t> retries_{0};
};

} // namespace detail

class HttpChat final : public ChatModel {
public:
    explicit HttpChat(HttpConfig cfg) : cfg_(std::move(cfg)), poster_(cfg_) {}

    ChatResponse complete(const ChatRequest& request) override {
        check_request(request);
        nlohmann::json body = {
            {"model", cfg_.chat_model},
            {"messages", nlohmann::json::array({{{"role", "system"}, {"content", request.system}},
                                                {{"role", "user"}, {"content", request.user}}})}};
        if (request.temperature) body["temperature"] = *request.temperature;
        if (request.max_tokens) body["max_tokens"] = *request.max_tokens;
        auto j = poster_.post("/chat/completions", body);
        try {
            ChatResponse r;
            r.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
            if (j.contains("usage")) {
                r.prompt_tokens = j["usage"].value("prompt_tokens", 0L);
                r.completion_tokens = j["usage"].value("completion_tokens", 0L);
            }
            return r;
        } catch (const nlohmann::json::exception& e) {
            throw ProviderError(std::string("unexpected chat response shape: ") + e.what(), false);
        }
    }

    std::string model_id() const override { return cfg_.chat_model; }
    std::size_t retries() const noexcept { return poster_.retries(); }

private:
    HttpConfig cfg_;
    detail::JsonPoster poster_;
};

class HttpEmbedder final : public Embedder {
public:
    explicit HttpEmbedder(HttpConfig cfg) : cfg_(std::move(cfg)), poster_(cfg_) {}

    std::vector<Vector> embed(const std::vector<std::string>& texts) override {
        if (texts.empty()) throw ProviderError("embed called with no texts", false);
        auto j = poster_.post("/embeddings", {{"model", cfg_.embedding_model}, {"input", texts}});
        try {
            std::vector<Vector> out(texts.size());
            for (const auto& item : j.at("data")) {
                auto idx = item.value("index", std::size_t{0});
                if (idx >= out.size()) throw ProviderError("embedding index out of range", false);
                out[idx] = item.at("embedding").get<Vector>();
            }
            for (const auto& v : out)
                if (v.empty() || v.size() != out.front().size())
                    throw ProviderError("embedding response is missing vectors or mixes dimensions", false);
            return out;
        } catch (const nlohmann::json::exception& e) {
            throw ProviderError(std::string("unexpected embedding response shape: ") + e.what(), false);
        }
    }

    std::string model_id() const override { return cfg_.embedding_model; }
    std::size_t retries() const noexcept { return poster_.retries(); }

private:
    HttpConfig cfg_;
    detail::JsonPoster poster_;
};

} // namespace proofagent
