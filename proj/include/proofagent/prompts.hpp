// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "proofagent/errors.hpp"
#include "proofagent/prompt_assets.hpp"

#include <map>
#include <string>
#include <string_view>

namespace proofagent::prompts {

/// Bumped whenever a template in prompts/ changes; part of every cache key.
inline constexpr std::string_view kVersion = "1";

struct Template {
    std::string_view name;
    std::string_view system;
    std::string_view user;
};

inline constexpr Template kGeneration{"generation", assets::generation_system, assets::generation_user};
inline constexpr Template kProvability{"provability", assets::provability_system, assets::provability_user};
inline constexpr Template kInduction{"induction", assets::induction_system, assets::induction_user};
inline constexpr Template kDescription{"description", assets::description_system, assets::description_user};
inline constexpr Template kPlan{"plan", assets::plan_system, assets::plan_user};
inline constexpr Template kProofPlan{"proof_plan", assets::proof_plan_system, assets::proof_plan_user};

inline constexpr Template kAll[] = {kGeneration, kProvability, kInduction,
                                    kDescription, kPlan, kProofPlan};

/// Substitutes `{name}` slots. Slot values are inserted verbatim and never
/// rescanned; a brace group that is not a known slot is copied through.
/// Throws Error if a slot named in `values` does not occur in the template.
inline std::string render(std::string_view tmpl, const std::map<std::string, std::string>& values) {
    std::string out;
    out.reserve(tmpl.size());
    std::map<std::string, bool> used;
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '{') {
            auto close = tmpl.find('}', i + 1);
            if (close != std::string_view::npos) {
                auto name = std::string(tmpl.substr(i + 1, close - i - 1));
                auto it = values.find(name);
                if (it != values.end()) {
                    out += it->second;
                    used[name] = true;
                    i = close + 1;
                    continue;
                }
            }
        }
        out.push_back(tmpl[i]);
        ++i;
    }
    for (const auto& [name, _] : values)
        if (!used.count(name)) throw Error("template has no slot {" + name + "}");
    return out;
}

} // namespace proofagent::prompts
