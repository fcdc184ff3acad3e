// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "proofagent/errors.hpp"
#include "proofagent/text.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace proofagent {

using Vector = std::vector<double>;

/// Purpose of a chat call; used for replay matching and invocation accounting.
enum class ChatTag { Generation, ReflectionProvability, ReflectionInduction, Plan, Description };

inline std::string_view to_string(ChatTag t) {
    switch (t) {
    case ChatTag::Generation: return "generation";
    case ChatTag::ReflectionProvability: return "reflection-provability";
    case ChatTag::ReflectionInduction: return "reflection-induction";
    case ChatTag::Plan: return "plan";
    case ChatTag::Description: return "description";
    }
    return "unknown";
}

inline ChatTag chat_tag_from_string(std::string_view s) {
    for (auto t : {ChatTag::Generation, ChatTag::ReflectionProvability, ChatTag::ReflectionInduction,
                   ChatTag::Plan, ChatTag::Description})
        if (to_string(t) == s) return t;
    throw FormatError("unknown chat tag '" + std::string(s) + "'");
}

/// One single-shot system+user completion request.
struct ChatRequest {
    std::string system;
    std::string user;
    std::optional<double> temperature; // empty: provider default
    std::optional<int> max_tokens;     // empty: provider default
    ChatTag tag = ChatTag::Generation;
};

struct ChatResponse {
    std::string text;
    long prompt_tokens = 0;
    long completion_tokens = 0;
};

class ChatModel {
public:
    virtual ~ChatModel() = default;
    /// Throws ProviderError. One call is one logical invocation regardless of
    /// transport retries.
    virtual ChatResponse complete(const ChatRequest& request) = 0;
    virtual std::string model_id() const = 0;
};

class Embedder {
public:
    virtual ~Embedder() = default;
    /// One vector per input, all of the same dimension. Throws ProviderError.
    virtual std::vector<Vector> embed(const std::vector<std::string>& texts) = 0;
    virtual std::string model_id() const = 0;
};

inline void check_request(const ChatRequest& r) {
    if (r.system.empty() || r.user.empty())
        throw ProviderError("chat request needs a non-empty system and user prompt", false);
}

} // namespace proofagent
