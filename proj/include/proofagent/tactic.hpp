// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "proofagent/errors.hpp"
#include "proofagent/text.hpp"

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace proofagent {

/// Which reflection family a tactic belongs to.
enum class ReflKind { None, AuxSubgoal, Apply, BranchChoice, InductionLike };

inline std::string_view to_string(ReflKind k) {
    switch (k) {
    case ReflKind::AuxSubgoal: return "aux-subgoal";
    case ReflKind::Apply: return "apply";
    case ReflKind::BranchChoice: return "branch-choice";
    case ReflKind::InductionLike: return "induction-like";
    case ReflKind::None: break;
    }
    return "none";
}

struct TacticCategory {
    std::string head;
    bool in_reflcat = false;
    ReflKind reflcat_kind = ReflKind::None;

    friend bool operator==(const TacticCategory&, const TacticCategory&) = default;
};

namespace detail {

struct ReflEntry {
    std::string_view head;
    ReflKind kind;
};

inline constexpr std::array<ReflEntry, 11> kReflCat{{
    {"assert", ReflKind::AuxSubgoal},
    {"have", ReflKind::AuxSubgoal},
    {"pose", ReflKind::AuxSubgoal},
    {"apply", ReflKind::Apply},
    {"eapply", ReflKind::Apply},
    {"left", ReflKind::BranchChoice},
    {"right", ReflKind::BranchChoice},
    {"induction", ReflKind::InductionLike},
    {"destruct", ReflKind::InductionLike},
    {"case", ReflKind::InductionLike},
    {"elim", ReflKind::InductionLike},
}};

inline ReflKind refl_kind_of(std::string_view head) {
    for (const auto& e : kReflCat)
        if (e.head == head) return e.kind;
    return ReflKind::None;
}

/// Skips a leading goal selector such as "2:", "1,3:", "1-2:", "all:" or "[h]:".
inline std::string_view strip_selector(std::string_view s) {
    s = text::trim(s);
    std::size_t i = 0;
    if (s.substr(0, 3) == "all" || s.substr(0, 3) == "par") {
        i = 3;
    } else if (!s.empty() && s[0] == '!') {
        i = 1;
    } else if (!s.empty() && s[0] == '[') {
        auto close = s.find(']');
        if (close == std::string_view::npos) return s;
        i = close + 1;
    } else {
        while (i < s.size() && ((s[i] >= '0' && s[i] <= '9') || s[i] == ',' || s[i] == '-' ||
                                s[i] == ' '))
            ++i;
        if (i == 0 || !(s[0] >= '0' && s[0] <= '9')) return s;
    }
    std::size_t j = i;
    while (j < s.size() && (s[j] == ' ' || s[j] == '\t')) ++j;
    if (j < s.size() && s[j] == ':' && (j + 1 >= s.size() || s[j + 1] != '=')) return text::trim(s.substr(j + 1));
    return s;
}

inline std::string head_of(std::string_view segment) {
    auto s = strip_selector(segment);
    std::size_t i = 0;
    while (i < s.size() && (s[i] == '(' || s[i] == ' ')) ++i;
    std::size_t start = i;
    if (i < s.size() && text::is_ident_start(s[i])) {
        while (i < s.size() && text::is_ident_char(s[i])) ++i;
    }
    return std::string(s.substr(start, i - start));
}

/// Splits a tactic chain at top-level ';' (outside brackets, strings and comments).
inline std::vector<std::string_view> chain_segments(std::string_view s) {
    std::vector<std::string_view> out;
    int depth = 0;
    int comment = 0;
    bool in_string = false;
    std::size_t start = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        if (in_string) {
            if (c == '"') in_string = false;
            continue;
        }
        if (c == '(' && i + 1 < s.size() && s[i + 1] == '*') {
            ++comment;
            ++i;
            continue;
        }
        if (comment > 0) {
            if (c == '*' && i + 1 < s.size() && s[i + 1] == ')') {
                --comment;
                ++i;
            }
            continue;
        }
        switch (c) {
        case '"': in_string = true; break;
        case '(': case '[': case '{': ++depth; break;
        case ')': case ']': case '}': if (depth > 0) --depth; break;
        case ';':
            if (depth == 0) {
                out.push_back(s.substr(start, i - start));
                start = i + 1;
            }
            break;
        default: break;
        }
    }
    out.push_back(s.substr(start));
    return out;
}

} // namespace detail

/// Classifies a tactic for selective reflection. For chains "t1; t2" the
/// category is taken from the first segment whose head needs reflection,
/// preferring induction-like segments.
inline TacticCategory classify_tactic(std::string_view tactic) {
    auto body = text::trim(tactic);
    if (!body.empty() && body.back() == '.') body.remove_suffix(1);

    TacticCategory first{};
    TacticCategory refl{};
    bool have_first = false;
    for (auto seg : detail::chain_segments(body)) {
        auto head = detail::head_of(seg);
        if (head.empty()) continue;
        auto kind = detail::refl_kind_of(head);
        if (!have_first) {
            first = {head, kind != ReflKind::None, kind};
            have_first = true;
        }
        if (kind == ReflKind::None) continue;
        if (!refl.in_reflcat || (kind == ReflKind::InductionLike &&
                                 refl.reflcat_kind != ReflKind::InductionLike))
            refl = {head, true, kind};
    }
    return refl.in_reflcat ? refl : first;
}

/// One tactic sentence, including its terminating period.
class TacticStep {
public:
    TacticStep() = default;

    /// Trims and collapses whitespace; appends the period when missing.
    /// Throws Error when the text is empty or ends with more than one period.
    static TacticStep make(std::string_view raw) {
        auto t = text::collapse_whitespace(raw);
        if (t.empty() || t == ".") throw Error("empty tactic");
        if (t.back() != '.') t.push_back('.');
        if (t.size() >= 2 && t[t.size() - 2] == '.')
            throw Error("tactic must end with exactly one period: '" + t + "'");
        TacticStep s;
        s.category_ = classify_tactic(t);
        s.text_ = std::move(t);
        return s;
    }

    const std::string& text() const noexcept { return text_; }
    const TacticCategory& category() const noexcept { return category_; }

    friend bool operator==(const TacticStep& a, const TacticStep& b) { return a.text_ == b.text_; }

private:
    std::string text_;
    TacticCategory category_;
};

inline std::vector<TacticStep> make_steps(std::initializer_list<std::string_view> texts) {
    std::vector<TacticStep> out;
    for (auto t : texts) out.push_back(TacticStep::make(t));
    return out;
}

inline std::string join_tactics(const std::vector<TacticStep>& steps, std::string_view sep = " ") {
    std::string out;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (i) out.append(sep);
        out.append(steps[i].text());
    }
    return out;
}

namespace detail {

/// Removes leading bullets and braces ("-", "+", "*", "{", "}") that
/// structure a proof without being tactics.
inline std::string_view strip_bullets(std::string_view s) {
    s = text::trim(s);
    while (!s.empty() && (s.front() == '-' || s.front() == '+' || s.front() == '*' || s.front() == '{' ||
                          s.front() == '}'))
        s = text::trim(s.substr(1));
    return s;
}

} // namespace detail

/// Splits a tactic script into sentences at periods that are outside
/// comments and strings, followed by whitespace or the end, and not part of
/// "..". Comments are dropped.
inline std::vector<std::string> split_sentences(std::string_view script) {
    std::vector<std::string> out;
    std::string cur;
    auto push = [&] {
        auto s = detail::strip_bullets(cur);
        if (!s.empty()) out.emplace_back(s);
        cur.clear();
    };
    std::size_t i = 0;
    int depth = 0;
    bool in_string = false;
    while (i < script.size()) {
        char c = script[i];
        if (depth > 0) {
            if (c == '(' && i + 1 < script.size() && script[i + 1] == '*') {
                ++depth;
                i += 2;
            } else if (c == '*' && i + 1 < script.size() && script[i + 1] == ')') {
                --depth;
                i += 2;
                if (depth == 0) cur.push_back(' ');
            } else {
                ++i;
            }
            continue;
        }
        if (in_string) {
            cur.push_back(c);
            if (c == '"') {
                if (i + 1 < script.size() && script[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    in_string = false;
                }
            }
            ++i;
            continue;
        }
        if (c == '(' && i + 1 < script.size() && script[i + 1] == '*') {
            depth = 1;
            i += 2;
            continue;
        }
        if (c == '"') in_string = true;
        cur.push_back(c);
        if (c == '.') {
            bool prev_dot = i > 0 && script[i - 1] == '.';
            bool next_dot = i + 1 < script.size() && script[i + 1] == '.';
            bool at_end = i + 1 >= script.size() || text::is_space(script[i + 1]);
            if (at_end && !prev_dot && !next_dot) push();
        }
        ++i;
    }
    push();
    return out;
}

/// Sentences of a plain tactic script as steps.
inline std::vector<TacticStep> parse_script(std::string_view script) {
    std::vector<TacticStep> out;
    for (const auto& s : split_sentences(script)) out.push_back(TacticStep::make(s));
    return out;
}

} // namespace proofagent
