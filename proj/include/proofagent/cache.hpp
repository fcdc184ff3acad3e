// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "proofagent/prompts.hpp"
#include "proofagent/providers.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <unordered_map>

namespace proofagent {

namespace detail {

/// Append-only JSON-lines store shared by the chat and embedding caches.
/// A torn trailing line (interrupted write) is ignored on load.
class JsonlStore {
public:
    explicit JsonlStore(std::filesystem::path path) : path_(std::move(path)) {}

    template <typename F>
    void load(F&& on_record) const {
        if (path_.empty() || !std::filesystem::exists(path_)) return;
        std::ifstream in(path_);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded()) continue;
            on_record(j);
        }
    }

    void append(const nlohmann::json& record) {
        if (path_.empty()) return;
        if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
        std::ofstream out(path_, std::ios::app);
        out << record.dump() << '\n';
        out.flush();
    }

private:
    std::filesystem::path path_;
};

} // namespace detail

struct CacheStats {
    std::size_t hits = 0;
    std::size_t misses = 0;
};

/// Memoizes chat completions by content hash of (model id, prompt version,
/// system, user, sampling parameters). Errors are never cached. With a
/// non-empty path the cache persists between runs.
class CachedChat final : public ChatModel {
public:
    CachedChat(std::shared_ptr<ChatModel> inner, std::filesystem::path path = {},
               std::string prompt_version = std::string(prompts::kVersion))
        : inner_(std::move(inner)), store_(std::move(path)), version_(std::move(prompt_version)) {
        store_.load([this](const nlohmann::json& j) {
            entries_[j.at("key").get<std::string>()] = {j.at("text").get<std::string>(),
                                                        j.value("prompt_tokens", 0L),
                                                        j.value("completion_tokens", 0L)};
        });
    }

    ChatResponse complete(const ChatRequest& request) override {
        auto k = key(request);
        {
            std::lock_guard lock(mu_);
            if (auto it = entries_.find(k); it != entries_.end()) {
                ++stats_.hits;
                return it->second;
            }
        }
        auto resp = inner_->complete(request);
        std::lock_guard lock(mu_);
        ++stats_.misses;
        if (entries_.emplace(k, resp).second)
            store_.append({{"key", k},
                           {"tag", to_string(request.tag)},
                           {"text", resp.text},
                           {"prompt_tokens", resp.prompt_tokens},
                           {"completion_tokens", resp.completion_tokens}});
        return resp;
    }

    std::string model_id() const override { return inner_->model_id(); }

    CacheStats stats() const {
        std::lock_guard lock(mu_);
        return stats_;
    }

    std::string key(const ChatRequest& r) const {
        return text::content_hash({"chat", inner_->model_id(), version_, r.system, r.user,
                                   r.temperature ? std::to_string(*r.temperature) : "",
                                   r.max_tokens ? std::to_string(*r.max_tokens) : ""});
    }

private:
    std::shared_ptr<ChatModel> inner_;
    detail::JsonlStore store_;
    std::string version_;
    std::unordered_map<std::string, ChatResponse> entries_;
    CacheStats stats_;
    mutable std::mutex mu_;
};

/// Memoizes embeddings per text. Misses within one batch go to the inner
/// embedder as a single call.
class CachedEmbedder final : public Embedder {
public:
    CachedEmbedder(std::shared_ptr<Embedder> inner, std::filesystem::path path = {},
                   std::string prompt_version = std::string(prompts::kVersion))
        : inner_(std::move(inner)), store_(std::move(path)), version_(std::move(prompt_version)) {
        store_.load([this](const nlohmann::json& j) {
            entries_[j.at("key").get<std::string>()] = j.at("vector").get<Vector>();
        });
    }

    std::vector<Vector> embed(const std::vector<std::string>& texts) override {
        if (texts.empty()) throw ProviderError("embed called with no texts", false);
        std::vector<Vector> out(texts.size());
        std::vector<std::string> missing;
        std::vector<std::size_t> missing_at;
        {
            std::lock_guard lock(mu_);
            for (std::size_t i = 0; i < texts.size(); ++i) {
                auto it = entries_.find(key(texts[i]));
                if (it != entries_.end()) {
                    out[i] = it->second;
                    ++stats_.hits;
                } else {
                    missing.push_back(texts[i]);
                    missing_at.push_back(i);
                }
            }
        }
        if (missing.empty()) return out;
        auto fresh = inner_->embed(missing);
        if (fresh.size() != missing.size())
            throw ProviderError("embedder returned the wrong number of vectors", false);
        std::lock_guard lock(mu_);
        for (std::size_t j = 0; j < missing.size(); ++j) {
            out[missing_at[j]] = fresh[j];
            ++stats_.misses;
            auto k = key(missing[j]);
            if (entries_.emplace(k, fresh[j]).second) store_.append({{"key", k}, {"vector", fresh[j]}});
        }
        return out;
    }

    std::string model_id() const override { return inner_->model_id(); }

    CacheStats stats() const {
        std::lock_guard lock(mu_);
        return stats_;
    }

    std::string key(const std::string& t) const {
        return text::content_hash({"embed", inner_->model_id(), version_, t});
    }

private:
    std::shared_ptr<Embedder> inner_;
    detail::JsonlStore store_;
    std::string version_;
    std::unordered_map<std::string, Vector> entries_;
    CacheStats stats_;
    mutable std::mutex mu_;
};

} // namespace proofagent
