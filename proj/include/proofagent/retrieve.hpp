// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "proofagent/events.hpp"
#include "proofagent/prompts.hpp"
#include "proofagent/providers.hpp"
#include "proofagent/session.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace proofagent {

/// dot(u, v) / (|u| |v|). Throws DimensionMismatch or ZeroVector.
inline double cosine(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size())
        throw DimensionMismatch("cosine of vectors with dimensions " + std::to_string(u.size()) + " and " +
                                std::to_string(v.size()));
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0.0 || nv == 0.0) throw ZeroVector();
    auto c = dot / (std::sqrt(nu) * std::sqrt(nv));
    return std::clamp(c, -1.0, 1.0);
}

/// Ordered natural-language proof steps. Steps are trimmed, whitespace
/// collapsed and never empty.
struct ProofPlan {
    std::vector<std::string> steps;

    bool empty() const noexcept { return steps.empty(); }
    friend bool operator==(const ProofPlan&, const ProofPlan&) = default;
};

/// Extracts every <step>...</step> span in order. When a <step> opens
/// inside another span the inner one wins; stray tags are ignored.
inline ProofPlan parse_plan(std::string_view response) {
    static constexpr std::string_view open = "<step>";
    static constexpr std::string_view close = "</step>";
    ProofPlan plan;
    std::size_t pos = 0;
    while (true) {
        auto start = response.find(open, pos);
        if (start == std::string_view::npos) break;
        auto body_start = start + open.size();
        auto end = response.find(close, body_start);
        if (end == std::string_view::npos) break;
        auto inner = response.find(open, body_start);
        if (inner != std::string_view::npos && inner < end) {
            pos = inner;
            continue;
        }
        auto step = text::collapse_whitespace(response.substr(body_start, end - body_start));
        if (!step.empty()) plan.steps.push_back(std::move(step));
        pos = end + close.size();
    }
    return plan;
}

inline std::string render_plan(const ProofPlan& plan) {
    std::string out;
    for (const auto& s : plan.steps) {
        if (!out.empty()) out += '\n';
        out += "<step> " + s + " </step>";
    }
    return out;
}

/// The text embedded for whole-plan similarity.
inline std::string plan_text(const ProofPlan& plan) { return text::join(plan.steps, "\n"); }

inline constexpr std::string_view kPlanReminder =
    "\n\nYour previous answer contained no plan steps. Write every step as <step> ... </step>.";

struct PlanOptions {
    std::optional<double> temperature;
    EventSink events;
};

inline ChatRequest plan_request(const Subgoal& goal, const std::map<std::string, std::string>& definitions) {
    ChatRequest r;
    r.system = std::string(prompts::kPlan.system);
    r.user = prompts::render(prompts::kPlan.user,
                             {{"subgoal", goal.render()}, {"definitions", render_definitions(definitions)}});
    r.tag = ChatTag::Plan;
    return r;
}

/// Asks for a natural-language plan. An answer without steps gets one
/// re-ask; after that the plan falls back to the goal's consequent.
inline ProofPlan generate_plan(const Subgoal& goal, const std::map<std::string, std::string>& definitions,
                               ChatModel& chat, const PlanOptions& opts = {}) {
    auto req = plan_request(goal, definitions);
    req.temperature = opts.temperature;
    auto plan = parse_plan(chat.complete(req).text);
    if (!plan.empty()) return plan;
    emit(opts.events, {{"event", "plan-empty"}, {"attempt", 1}});
    req.user += kPlanReminder;
    try {
        plan = parse_plan(chat.complete(req).text);
    } catch (const BudgetExhausted&) {
        plan = {};
    }
    if (!plan.empty()) return plan;
    emit(opts.events, {{"event", "plan-fallback"}});
    return ProofPlan{{goal.consequent()}};
}

/// Names usable at the current proof location. Retrieval never returns
/// anything outside this set.
class AvailabilityFilter {
public:
    AvailabilityFilter() = default;
    explicit AvailabilityFilter(std::set<std::string> allowed) : allowed_(std::move(allowed)) {}

    bool allows(const std::string& name) const { return allowed_.count(name) > 0; }
    const std::set<std::string>& allowed() const noexcept { return allowed_; }

private:
    std::set<std::string> allowed_;
};

struct Scored {
    double score;
    std::size_t index;
    std::string_view name;
};

/// Sorts by descending score; exact ties go to the lexicographically smaller name.
inline void sort_scored(std::vector<Scored>& v) {
    std::sort(v.begin(), v.end(), [](const Scored& a, const Scored& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.name < b.name;
    });
}

/// Merges per-step rankings. Steps take turns in plan order; each step
/// first contributes up to ceil(k / steps) (at least 1) names it alone adds,
/// then, if the total is still short of k, turns continue without a quota.
/// Duplicates are skipped.
inline std::vector<std::size_t> merge_round_robin(const std::vector<std::vector<Scored>>& rankings,
                                                  std::size_t k_total) {
    std::vector<std::size_t> out;
    if (rankings.empty() || k_total == 0) return out;
    std::set<std::size_t> taken;
    const std::size_t quota = std::max<std::size_t>(1, (k_total + rankings.size() - 1) / rankings.size());
    std::vector<std::size_t> cursor(rankings.size(), 0), contributed(rankings.size(), 0);

    auto next_new = [&](std::size_t s) -> std::optional<std::size_t> {
        while (cursor[s] < rankings[s].size()) {
            auto idx = rankings[s][cursor[s]++].index;
            if (!taken.count(idx)) return idx;
        }
        return std::nullopt;
    };
    for (bool limited : {true, false}) {
        bool progress = true;
        while (out.size() < k_total && progress) {
            progress = false;
            for (std::size_t s = 0; s < rankings.size() && out.size() < k_total; ++s) {
                if (limited && contributed[s] >= quota) continue;
                if (auto idx = next_new(s)) {
                    taken.insert(*idx);
                    out.push_back(*idx);
                    ++contributed[s];
                    progress = true;
                }
            }
        }
    }
    return out;
}

} // namespace proofagent
