// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "proofagent/subgoal.hpp"
#include "proofagent/tactic.hpp"

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace proofagent {

/// Result of running one tactic against the first unproved subgoal.
/// An error leaves the session untouched and carries no new subgoals.
struct ExecutionOutcome {
    Subgoal applied_goal;
    std::optional<std::string> error;
    std::vector<Subgoal> new_subgoals;

    bool ok() const noexcept { return !error.has_value(); }
};

/// Port to a proof assistant. Tactics always act on the first unproved
/// subgoal and produced subgoals are prepended to the remaining list.
///
/// Contract:
///  - execute() with an error leaves the state unchanged;
///  - execute(t) followed by undo(1) restores first_unproved() and
///    remaining_count();
///  - remaining_count() == 0 iff first_unproved() is empty.
class ProverSession {
public:
    virtual ~ProverSession() = default;

    /// Throws NoRemainingGoals when nothing is left to prove.
    virtual ExecutionOutcome execute(const TacticStep& tactic) = 0;

    /// Reverts the last `n` successfully executed tactics. Throws SessionError
    /// when fewer than `n` are on record.
    virtual void undo(std::size_t n) = 0;

    virtual std::optional<Subgoal> first_unproved() const = 0;
    virtual std::size_t remaining_count() const = 0;
    virtual std::optional<std::string> definition_of(std::string_view symbol) const = 0;
};

/// Collects definitions for every identifier-like token in the goals that the
/// session knows about.
inline std::map<std::string, std::string> definitions_for(const ProverSession& session,
                                                          const std::vector<Subgoal>& goals) {
    std::map<std::string, std::string> defs;
    auto scan = [&](std::string_view s) {
        std::size_t i = 0;
        while (i < s.size()) {
            if (!text::is_ident_start(s[i])) {
                ++i;
                continue;
            }
            std::size_t start = i;
            while (i < s.size() && (text::is_ident_char(s[i]) || s[i] == '.')) ++i;
            auto tok = s.substr(start, i - start);
            while (!tok.empty() && tok.back() == '.') tok.remove_suffix(1);
            if (defs.count(std::string(tok))) continue;
            if (auto d = session.definition_of(tok)) defs.emplace(std::string(tok), *d);
        }
    };
    for (const auto& g : goals) {
        for (const auto& p : g.premises()) scan(p.statement);
        scan(g.consequent());
    }
    return defs;
}

inline std::string render_definitions(const std::map<std::string, std::string>& defs) {
    std::string out;
    for (const auto& [name, body] : defs) {
        if (!out.empty()) out += "\n\n";
        out += body;
    }
    return out;
}

/// Executes `script` on a fresh session; true iff every step is accepted and
/// no subgoal remains afterwards.
inline bool replay_script(ProverSession& session, const std::vector<TacticStep>& script) {
    for (const auto& step : script) {
        if (session.remaining_count() == 0) return false;
        if (!session.execute(step).ok()) return false;
    }
    return session.remaining_count() == 0;
}

} // namespace proofagent
