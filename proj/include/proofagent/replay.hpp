// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "proofagent/providers.hpp"

#include <json.hpp>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>

namespace proofagent {

/// Scripted chat responses.
///
/// File format (JSON, schema_version 1):
///
///     {
///       "schema_version": 1,
///       "ordering": "per-tag",            // or "strict"
///       "entries": [
///         { "tag": "plan", "contains": "optional substring", "response": "..." }
///       ]
///     }
///
/// With "per-tag" ordering a request consumes the earliest unconsumed entry
/// carrying its tag (and whose "contains" substring occurs in the user
/// prompt), so one script can serve profiles that skip some tags.
/// "strict" requires requests to arrive in exactly the scripted order.
struct ReplayScript {
    static constexpr int kSchemaVersion = 1;

    struct Entry {
        ChatTag tag = ChatTag::Generation;
        std::string contains;
        std::string response;
    };
    enum class Ordering { PerTag, Strict };

    std::vector<Entry> entries;
    Ordering ordering = Ordering::PerTag;

    static ReplayScript from_json(const nlohmann::json& j) {
        if (j.value("schema_version", 0) != kSchemaVersion)
            throw FormatError("unsupported replay script schema_version");
        ReplayScript s;
        auto ord = j.value("ordering", std::string("per-tag"));
        if (ord == "strict") s.ordering = Ordering::Strict;
        else if (ord != "per-tag") throw FormatError("unknown replay ordering '" + ord + "'");
        for (const auto& e : j.at("entries"))
            s.entries.push_back({chat_tag_from_string(e.at("tag").get<std::string>()),
                                 e.value("contains", std::string{}),
                                 e.at("response").get<std::string>()});
        return s;
    }

    static ReplayScript load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw FormatError("cannot open replay script " + path.string());
        try {
            return from_json(nlohmann::json::parse(in));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ": " + e.what());
        }
    }
};

/// Deterministic chat provider driven by a ReplayScript. Records every request
/// it receives. Token counts are synthetic: four characters per token.
class ReplayChat final : public ChatModel {
public:
    explicit ReplayChat(ReplayScript script, std::string model = "replay")
        : script_(std::move(script)), consumed_(script_.entries.size(), false), model_(std::move(model)) {}

    ChatResponse complete(const ChatRequest& request) override {
        check_request(request);
        std::lock_guard lock(mu_);
        requests_.push_back(request);
        std::size_t idx = script_.entries.size();
        for (std::size_t i = 0; i < script_.entries.size(); ++i) {
            if (consumed_[i]) continue;
            const auto& cand = script_.entries[i];
            if (script_.ordering == ReplayScript::Ordering::Strict ||
                (cand.tag == request.tag &&
                 (cand.contains.empty() || request.user.find(cand.contains) != std::string::npos))) {
                idx = i;
                break;
            }
        }
        if (idx == script_.entries.size())
            throw ReplayMismatch("replay script has no remaining entry for a '" +
                                 std::string(to_string(request.tag)) + "' request");
        const auto& e = script_.entries[idx];
        if (e.tag != request.tag)
            throw ReplayMismatch("replay entry " + std::to_string(idx) + " expects tag '" +
                                 std::string(to_string(e.tag)) + "', got '" +
                                 std::string(to_string(request.tag)) + "'");
        if (!e.contains.empty() && request.user.find(e.contains) == std::string::npos)
            throw ReplayMismatch("replay entry " + std::to_string(idx) + " expects the prompt to contain '" +
                                 e.contains + "'");
        consumed_[idx] = true;
        ChatResponse r;
        r.text = e.response;
        r.prompt_tokens = static_cast<long>(text::estimate_tokens(request.system) + text::estimate_tokens(request.user));
        r.completion_tokens = static_cast<long>(text::estimate_tokens(e.response));
        return r;
    }

    std::string model_id() const override { return model_; }

    std::vector<ChatRequest> requests() const {
        std::lock_guard lock(mu_);
        return requests_;
    }
    std::size_t remaining() const {
        std::lock_guard lock(mu_);
        std::size_t n = 0;
        for (bool c : consumed_) n += c ? 0 : 1;
        return n;
    }

private:
    ReplayScript script_;
    std::vector<bool> consumed_;
    std::vector<ChatRequest> requests_;
    std::string model_;
    mutable std::mutex mu_;
};

/// Deterministic embedder: fixture vectors where given, otherwise a
/// pseudo-random unit vector seeded by a hash of the text.
class ReplayEmbedder final : public Embedder {
public:
    explicit ReplayEmbedder(std::size_t dimension = 64, std::string model = "replay-embedding")
        : dimension_(dimension), model_(std::move(model)) {
        if (dimension_ == 0) throw Error("embedding dimension must be positive");
    }

    void pin(std::string text, Vector v) {
        if (v.size() != dimension_) throw DimensionMismatch("fixture vector has the wrong dimension");
        fixtures_[std::move(text)] = std::move(v);
    }

    /// Loads {"dimension": n, "vectors": {"text": [..]}}.
    void load_fixtures(const nlohmann::json& j) {
        for (const auto& [t, v] : j.at("vectors").items()) pin(t, v.get<Vector>());
    }

    std::vector<Vector> embed(const std::vector<std::string>& texts) override {
        if (texts.empty()) throw ProviderError("embed called with no texts", false);
        ++calls_;
        std::vector<Vector> out;
        out.reserve(texts.size());
        for (const auto& t : texts) {
            auto it = fixtures_.find(t);
            out.push_back(it != fixtures_.end() ? it->second : hashed(t, dimension_));
        }
        return out;
    }

    std::string model_id() const override { return model_; }
    std::size_t calls() const noexcept { return calls_.load(); }
    std::size_t dimension() const noexcept { return dimension_; }

    static Vector hashed(std::string_view text, std::size_t dim) {
        std::uint64_t state = text::fnv1a64(text);
        auto next = [&state] {
            // splitmix64
            std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            return z ^ (z >> 31);
        };
        Vector v(dim);
        double norm = 0.0;
        for (auto& x : v) {
            x = static_cast<double>(next() >> 11) * 0x1.0p-53 * 2.0 - 1.0;
            norm += x * x;
        }
        if (norm == 0.0) {
            v[0] = 1.0;
            return v;
        }
        norm = std::sqrt(norm);
        for (auto& x : v) x /= norm;
        return v;
    }

private:
    std::size_t dimension_;
    std::string model_;
    std::map<std::string, Vector> fixtures_;
    std::atomic<std::size_t> calls_{0};
};

} // namespace proofagent
