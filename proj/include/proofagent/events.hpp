// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <functional>

namespace proofagent {

/// Receives one structured record per notable step (loop phase, fail-open
/// fallback, retry). May be empty.
using EventSink = std::function<void(const nlohmann::json&)>;

inline void emit(const EventSink& sink, nlohmann::json event) {
    if (sink) sink(event);
}

} // namespace proofagent
