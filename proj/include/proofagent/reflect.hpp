// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "proofagent/events.hpp"
#include "proofagent/prompts.hpp"
#include "proofagent/providers.hpp"
#include "proofagent/session.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace proofagent {

enum class FailureKind { ProverError, ReflectionMisapplied, NoParseableProof };

inline std::string_view to_string(FailureKind k) {
    switch (k) {
    case FailureKind::ProverError: return "prover-error";
    case FailureKind::ReflectionMisapplied: return "reflection-misapplied";
    case FailureKind::NoParseableProof: return "no-parseable-proof";
    }
    return "unknown";
}

/// (subgoal, tactic sequence, reason) for one failed attempt.
/// ProverError records hold exactly the rejected tactic and the prover's
/// message. NoParseableProof records carry no tactics.
struct FailureRecord {
    Subgoal subgoal;
    std::vector<TacticStep> tactics;
    std::string reason;
    FailureKind kind = FailureKind::ProverError;

    friend bool operator==(const FailureRecord& a, const FailureRecord& b) {
        return a.subgoal == b.subgoal && a.tactics == b.tactics && a.reason == b.reason && a.kind == b.kind;
    }
};

struct ValidationResult {
    std::vector<TacticStep> retained;
    std::optional<FailureRecord> failure;
    std::size_t reflection_calls = 0;
};

enum class Decision { Accepted, Misapplied, Uncertain };

inline std::string_view to_string(Decision d) {
    switch (d) {
    case Decision::Accepted: return "accepted";
    case Decision::Misapplied: return "misapplied";
    case Decision::Uncertain: return "uncertain";
    }
    return "unknown";
}

struct ReflectionVerdict {
    Decision decision = Decision::Accepted;
    std::string summary;
    std::optional<std::string> suggestion;
};

/// Judges whether a ReflCat tactic that produced new subgoals was misapplied.
/// `span` is the tactic sequence since the last rollback point, ending with
/// `tactic`.
class Reflector {
public:
    virtual ~Reflector() = default;
    virtual ReflectionVerdict reflect(const Subgoal& applied, const std::vector<Subgoal>& produced,
                                      const TacticStep& tactic, std::span<const TacticStep> span) = 0;
};

inline std::string failure_reason(const ReflectionVerdict& v) {
    auto reason = v.summary;
    if (v.suggestion) {
        if (!reason.empty()) reason += '\n';
        reason += "Suggested fix:\n" + *v.suggestion;
    }
    return reason;
}

/// Validates LLM-generated tactics one by one against `session`, asking
/// `reflector` about every ReflCat tactic that leaves new subgoals.
///
/// The rollback point `pid` is the number of tactics after which the proof
/// began, a subgoal closed, or a ReflCat tactic was accepted. On a prover
/// error at tactic i the first i-1 tactics are kept; on a misapplied verdict
/// the session is rolled back to `pid` and tactics pid+1..i form the failure.
/// Tactics left over once every subgoal is closed are dropped.
inline ValidationResult validate_with_reflection(std::span<const TacticStep> tactics, ProverSession& session,
                                                 Reflector& reflector) {
    ValidationResult result;
    std::size_t pid = 0;
    std::optional<Subgoal> g_pre = session.first_unproved();
    auto prefix = [&](std::size_t n) { return std::vector<TacticStep>(tactics.begin(), tactics.begin() + static_cast<std::ptrdiff_t>(n)); };

    for (std::size_t i = 1; i <= tactics.size(); ++i) {
        const auto& tactic = tactics[i - 1];
        if (session.remaining_count() == 0) {
            result.retained = prefix(i - 1);
            return result;
        }
        auto out = session.execute(tactic);
        if (out.error) {
            result.retained = prefix(i - 1);
            result.failure = FailureRecord{out.applied_goal, {tactic}, *out.error, FailureKind::ProverError};
            return result;
        }
        if (out.new_subgoals.empty()) {
            pid = i;
            g_pre = session.first_unproved();
            continue;
        }
        if (!tactic.category().in_reflcat) continue;

        ++result.reflection_calls;
        auto span = tactics.subspan(pid, i - pid);
        auto verdict = reflector.reflect(out.applied_goal, out.new_subgoals, tactic, span);
        if (verdict.decision == Decision::Misapplied) {
            try {
                session.undo(i - pid);
            } catch (const SessionError& e) {
                throw SessionDesync(std::string("rollback failed: ") + e.what());
            }
            result.retained = prefix(pid);
            result.failure = FailureRecord{g_pre.value_or(out.applied_goal),
                                           std::vector<TacticStep>(span.begin(), span.end()),
                                           failure_reason(verdict), FailureKind::ReflectionMisapplied};
            return result;
        }
        pid = i;
        g_pre = session.first_unproved();
    }
    result.retained = prefix(tactics.size());
    return result;
}

// ---------------------------------------------------------------------------
// Structured verdict parsing

enum class CheckMode { Provability, Induction };

struct StructuredVerdict {
    std::string decision; // upper-case token
    std::string reason;
    std::optional<std::string> suggestion;
};

namespace detail {

inline bool is_fence(std::string_view line) { return text::trim(line).substr(0, 3) == "```"; }

/// Returns the section name if `line` is a "### Name" heading we track.
inline std::optional<std::string> section_heading(std::string_view line) {
    auto t = text::trim(line);
    std::size_t hashes = 0;
    while (hashes < t.size() && t[hashes] == '#') ++hashes;
    if (hashes < 2) return std::nullopt;
    auto name = text::trim(t.substr(hashes));
    while (!name.empty() && (name.back() == ':' || name.back() == '*')) name.remove_suffix(1);
    while (!name.empty() && name.front() == '*') name.remove_prefix(1);
    auto lower = text::to_lower(text::trim(name));
    for (const char* known : {"analysis", "decision", "reason", "suggestion"})
        if (lower == known) return lower;
    return std::nullopt;
}

inline std::vector<std::string> upper_words(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if ((c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z')) {
            cur.push_back(c);
        } else if (!cur.empty()) {
            out.push_back(text::to_upper(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(text::to_upper(cur));
    return out;
}

inline std::optional<std::string> extract_fenced(std::string_view s) {
    auto lines = text::split_lines(s);
    std::size_t open = lines.size();
    for (std::size_t i = 0; i < lines.size(); ++i)
        if (is_fence(lines[i])) {
            open = i;
            break;
        }
    if (open == lines.size()) return std::nullopt;
    std::string body;
    for (std::size_t i = open + 1; i < lines.size(); ++i) {
        if (is_fence(lines[i])) return body;
        if (i > open + 1) body += '\n';
        body += lines[i];
    }
    return std::nullopt;
}

} // namespace detail

/// Extracts the Decision / Reason / Suggestion sections of a reflection
/// response. Throws UnparseableResponse if no Decision section carries a
/// token valid for `mode`.
inline StructuredVerdict parse_structured_verdict(std::string_view response, CheckMode mode) {
    auto lines = text::split_lines(response);
    // unwrap a response that is entirely one ```markdown block
    std::size_t lo = 0, hi = lines.size();
    while (lo < hi && text::trim(lines[lo]).empty()) ++lo;
    while (hi > lo && text::trim(lines[hi - 1]).empty()) --hi;
    if (hi - lo >= 2 && detail::is_fence(lines[lo]) && text::trim(lines[hi - 1]) == "```" &&
        !detail::section_heading(lines[lo]).has_value()) {
        bool heading_inside = false;
        for (std::size_t i = lo + 1; i + 1 < hi; ++i)
            if (detail::section_heading(lines[i])) heading_inside = true;
        if (heading_inside) {
            ++lo;
            --hi;
        }
    }

    std::map<std::string, std::string> sections;
    std::string current;
    bool in_fence = false;
    for (std::size_t i = lo; i < hi; ++i) {
        auto line = lines[i];
        if (!in_fence) {
            if (auto h = detail::section_heading(line)) {
                current = *h;
                sections[current]; // first occurrence wins below
                continue;
            }
        }
        if (detail::is_fence(line)) in_fence = !in_fence;
        if (current.empty()) continue;
        auto& body = sections[current];
        if (!body.empty() || !text::trim(line).empty()) {
            if (!body.empty()) body += '\n';
            body += line;
        }
    }

    auto dit = sections.find("decision");
    if (dit == sections.end()) throw UnparseableResponse("response has no '### Decision' section");

    std::vector<std::string_view> tokens;
    if (mode == CheckMode::Provability) tokens = {"PROVABLE", "UNPROVABLE", "UNCERTAIN"};
    else tokens = {"REASONABLE", "UNREASONABLE", "UNCERTAIN"};
    StructuredVerdict v;
    for (const auto& w : detail::upper_words(dit->second)) {
        for (auto t : tokens)
            if (w == t) {
                v.decision = w;
                break;
            }
        if (!v.decision.empty()) break;
    }
    if (v.decision.empty())
        throw UnparseableResponse("Decision section has no recognized token: '" +
                                  std::string(text::trim(dit->second)) + "'");

    if (auto it = sections.find("reason"); it != sections.end()) v.reason = std::string(text::trim(it->second));
    if (auto it = sections.find("suggestion"); it != sections.end()) {
        auto s = std::string(text::trim(it->second));
        auto bare = text::to_upper(s);
        while (!bare.empty() && (bare.back() == '.' || bare.back() == '"')) bare.pop_back();
        while (!bare.empty() && bare.front() == '"') bare.erase(bare.begin());
        if (auto code = detail::extract_fenced(s)) v.suggestion = *code;
        else if (!s.empty() && bare != "N/A") v.suggestion = s;
    }
    return v;
}

// ---------------------------------------------------------------------------
// LLM-backed reflection

inline constexpr std::string_view kFormatReminder =
    "\n\nYour previous answer could not be parsed. Respond again using exactly the structured format "
    "with the sections ### Analysis, ### Decision, ### Reason and ### Suggestion.";

namespace detail {

inline Decision decision_of(const std::string& token) {
    if (token == "UNPROVABLE" || token == "UNREASONABLE") return Decision::Misapplied;
    if (token == "UNCERTAIN") return Decision::Uncertain;
    return Decision::Accepted;
}

/// Runs one check with a single re-ask on an unparseable answer. A second
/// failure yields an Accepted pseudo-verdict (fail-open).
inline StructuredVerdict run_check(ChatModel& chat, ChatRequest request, CheckMode mode, const EventSink& events) {
    for (int attempt = 0; attempt < 2; ++attempt) {
        auto response = chat.complete(request);
        try {
            return parse_structured_verdict(response.text, mode);
        } catch (const UnparseableResponse& e) {
            emit(events, {{"event", "reflection-unparseable"},
                          {"check", mode == CheckMode::Provability ? "provability" : "induction"},
                          {"attempt", attempt + 1},
                          {"error", e.what()}});
            request.user += kFormatReminder;
        }
    }
    emit(events, {{"event", "reflection-fail-open"},
                  {"check", mode == CheckMode::Provability ? "provability" : "induction"}});
    return StructuredVerdict{mode == CheckMode::Provability ? "PROVABLE" : "REASONABLE", "", std::nullopt};
}

} // namespace detail

struct ReflectOptions {
    std::optional<double> temperature;
    EventSink events;
};

inline ChatRequest provability_request(const std::vector<Subgoal>& produced,
                                       const std::map<std::string, std::string>& definitions) {
    ChatRequest r;
    r.system = std::string(prompts::kProvability.system);
    r.user = prompts::render(prompts::kProvability.user,
                             {{"current_goals", render_goals(produced)},
                              {"definitions", render_definitions(definitions)}});
    r.tag = ChatTag::ReflectionProvability;
    return r;
}

inline ChatRequest induction_request(const Subgoal& applied, const std::vector<Subgoal>& produced,
                                     std::string_view strategies,
                                     const std::map<std::string, std::string>& definitions) {
    ChatRequest r;
    r.system = std::string(prompts::kInduction.system);
    r.user = prompts::render(prompts::kInduction.user,
                             {{"goal_before", applied.render()},
                              {"goal_after", render_goals(produced)},
                              {"strategies", std::string(strategies)},
                              {"definitions", render_definitions(definitions)}});
    r.tag = ChatTag::ReflectionInduction;
    return r;
}

/// The reflection subroutine: a provability check over all produced
/// subgoals, then (for induction-like tactics) an induction-schema check.
/// Stops at the first check that reports a misapplication.
inline ReflectionVerdict reflect_tactic(const Subgoal& applied, const std::vector<Subgoal>& produced,
                                        const TacticStep& tactic,
                                        const std::map<std::string, std::string>& definitions, ChatModel& chat,
                                        std::string_view strategies = {}, const ReflectOptions& opts = {}) {
    ReflectionVerdict verdict;
    if (produced.empty()) return verdict;

    auto req = provability_request(produced, definitions);
    req.temperature = opts.temperature;
    auto prov = detail::run_check(chat, std::move(req), CheckMode::Provability, opts.events);
    auto decision = detail::decision_of(prov.decision);
    verdict.summary = prov.reason;
    if (decision == Decision::Misapplied) {
        verdict.decision = Decision::Misapplied;
        if (verdict.summary.empty()) verdict.summary = "The produced subgoals were judged unprovable.";
        return verdict;
    }
    bool uncertain = decision == Decision::Uncertain;

    if (tactic.category().reflcat_kind == ReflKind::InductionLike) {
        auto ireq = induction_request(applied, produced, strategies.empty() ? tactic.text() : strategies,
                                      definitions);
        ireq.temperature = opts.temperature;
        auto ind = detail::run_check(chat, std::move(ireq), CheckMode::Induction, opts.events);
        auto d = detail::decision_of(ind.decision);
        if (!ind.reason.empty()) {
            if (!verdict.summary.empty()) verdict.summary += '\n';
            verdict.summary += ind.reason;
        }
        if (d == Decision::Misapplied) {
            verdict.decision = Decision::Misapplied;
            verdict.suggestion = ind.suggestion;
            if (verdict.summary.empty()) verdict.summary = "The induction was judged unreasonable.";
            return verdict;
        }
        uncertain = uncertain || d == Decision::Uncertain;
    }
    verdict.decision = uncertain ? Decision::Uncertain : Decision::Accepted;
    return verdict;
}

/// Reflector that consults a chat model, collecting definitions for the
/// goals from the session.
class LlmReflector final : public Reflector {
public:
    LlmReflector(ChatModel& chat, const ProverSession& session, ReflectOptions opts = {})
        : chat_(chat), session_(session), opts_(std::move(opts)) {}

    ReflectionVerdict reflect(const Subgoal& applied, const std::vector<Subgoal>& produced,
                              const TacticStep& tactic, std::span<const TacticStep> span) override {
        std::vector<Subgoal> all = produced;
        all.push_back(applied);
        auto defs = definitions_for(session_, all);
        std::vector<TacticStep> seq(span.begin(), span.end());
        return reflect_tactic(applied, produced, tactic, defs, chat_, join_tactics(seq), opts_);
    }

private:
    ChatModel& chat_;
    const ProverSession& session_;
    ReflectOptions opts_;
};

} // namespace proofagent
