// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "proofagent/errors.hpp"
#include "proofagent/text.hpp"

#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace proofagent {

struct Premise {
    std::string name;
    std::string statement;

    friend bool operator==(const Premise&, const Premise&) = default;
};

/// A proof obligation: named premises and a consequent, stored in
/// whitespace-normalized form. Identity is the fingerprint of that form.
class Subgoal {
public:
    Subgoal() = default;

    /// Normalizes every field. Throws MalformedSubgoal on duplicate premise
    /// names or an empty consequent.
    static Subgoal make(std::vector<Premise> premises, std::string_view consequent) {
        Subgoal g;
        std::set<std::string> seen;
        for (auto& p : premises) {
            Premise norm{text::collapse_whitespace(p.name), text::collapse_whitespace(p.statement)};
            if (norm.name.empty()) throw MalformedSubgoal("premise without a name");
            if (!seen.insert(norm.name).second)
                throw MalformedSubgoal("duplicate premise name '" + norm.name + "'");
            g.premises_.push_back(std::move(norm));
        }
        g.consequent_ = text::collapse_whitespace(consequent);
        if (g.consequent_.empty()) throw MalformedSubgoal("empty consequent");
        g.fingerprint_ = compute_fingerprint(g.premises_, g.consequent_);
        return g;
    }

    const std::vector<Premise>& premises() const noexcept { return premises_; }
    const std::string& consequent() const noexcept { return consequent_; }
    const std::string& fingerprint() const noexcept { return fingerprint_; }
    bool empty() const noexcept { return consequent_.empty(); }

    /// Display form used in prompts and fixtures; parse_subgoal(render()) is
    /// the identity on normalized subgoals.
    std::string render() const {
        std::string out;
        if (premises_.empty()) out += "[No Premise]\n";
        for (const auto& p : premises_) {
            out += p.name;
            out += " : ";
            out += p.statement;
            out += '\n';
        }
        out += "============================\n";
        out += consequent_;
        return out;
    }

    friend bool operator==(const Subgoal& a, const Subgoal& b) {
        return a.fingerprint_ == b.fingerprint_ && a.premises_ == b.premises_ &&
               a.consequent_ == b.consequent_;
    }

private:
    static std::string compute_fingerprint(const std::vector<Premise>& premises,
                                           const std::string& consequent) {
        std::uint64_t h = text::fnv1a64("subgoal/v1");
        for (const auto& p : premises) {
            h = text::fnv1a64("\x1fP", h);
            h = text::fnv1a64(p.name, h);
            h = text::fnv1a64("\x1e", h);
            h = text::fnv1a64(p.statement, h);
        }
        h = text::fnv1a64("\x1f" "C", h);
        h = text::fnv1a64(consequent, h);
        return text::hex64(h);
    }

    std::vector<Premise> premises_;
    std::string consequent_;
    std::string fingerprint_;
};

namespace detail {

inline bool is_separator_line(std::string_view line) {
    line = text::trim(line);
    if (line.size() < 3) return false;
    std::size_t units = 0;
    for (std::size_t i = 0; i < line.size();) {
        char c = line[i];
        if (c == '=' || c == '-' || c == '_') {
            ++i;
            ++units;
            continue;
        }
        // U+2500 BOX DRAWINGS LIGHT HORIZONTAL, U+2501 HEAVY HORIZONTAL
        if (line.compare(i, 3, "\xE2\x94\x80") == 0 || line.compare(i, 3, "\xE2\x94\x81") == 0) {
            i += 3;
            ++units;
            continue;
        }
        return false;
    }
    return units >= 3;
}

inline bool is_comment_line(std::string_view line) {
    line = text::trim(line);
    return line.size() >= 4 && line.substr(0, 2) == "(*" && line.substr(line.size() - 2) == "*)";
}

/// Parses "a, b : T" / "x := v : T" heads. Returns the names and the offset of
/// the statement, or an empty vector if the line does not open a premise.
inline std::vector<std::string> premise_head(std::string_view line, std::size_t& stmt_pos) {
    std::vector<std::string> names;
    std::size_t i = 0;
    auto skip_ws = [&] {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    };
    skip_ws();
    while (true) {
        if (i >= line.size() || !text::is_ident_start(line[i])) return {};
        std::size_t start = i;
        while (i < line.size() && (text::is_ident_char(line[i]) || line[i] == '.')) ++i;
        names.emplace_back(line.substr(start, i - start));
        skip_ws();
        if (i < line.size() && line[i] == ',') {
            ++i;
            skip_ws();
            continue;
        }
        break;
    }
    if (i >= line.size() || line[i] != ':') return {};
    if (i + 1 < line.size() && line[i + 1] == '=') {
        // let-bound premise keeps its body in the statement
        if (names.size() != 1) return {};
        stmt_pos = i;
        return names;
    }
    stmt_pos = i + 1;
    return names;
}

} // namespace detail

/// Parses the prover/corpus display grammar: premise lines, a horizontal rule,
/// then consequent lines. Throws MalformedSubgoal when the rule is missing.
inline Subgoal parse_subgoal(std::string_view raw) {
    auto lines = text::split_lines(raw);
    std::size_t sep = lines.size();
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (detail::is_separator_line(lines[i])) {
            sep = i;
            break;
        }
    }
    if (sep == lines.size()) throw MalformedSubgoal("subgoal block has no separator rule");

    std::vector<Premise> premises;
    std::size_t group_start = 0; // first premise of the most recent "a, b : T" group
    for (std::size_t i = 0; i < sep; ++i) {
        auto line = text::trim(lines[i]);
        if (line.empty() || detail::is_comment_line(line)) continue;
        if (auto m = text::collapse_whitespace(line); m == "[No Premise]" || m == "[No Premises]") continue;
        std::size_t stmt_pos = 0;
        auto names = detail::premise_head(line, stmt_pos);
        if (!names.empty()) {
            auto stmt = line.substr(stmt_pos);
            group_start = premises.size();
            for (auto& n : names) premises.push_back({std::move(n), std::string(stmt)});
            continue;
        }
        if (premises.empty())
            throw MalformedSubgoal("premise line without a name: '" + std::string(line) + "'");
        for (std::size_t k = group_start; k < premises.size(); ++k) {
            premises[k].statement += ' ';
            premises[k].statement += line;
        }
    }

    std::string consequent;
    for (std::size_t i = sep + 1; i < lines.size(); ++i) {
        if (detail::is_comment_line(lines[i])) continue;
        consequent += lines[i];
        consequent += ' ';
    }
    return Subgoal::make(std::move(premises), consequent);
}

/// Renders a list of subgoals for a prompt, numbered from 1.
inline std::string render_goals(const std::vector<Subgoal>& goals) {
    std::string out;
    for (std::size_t i = 0; i < goals.size(); ++i) {
        if (i) out += "\n\n";
        out += "Goal " + std::to_string(i + 1) + ":\n";
        out += goals[i].render();
    }
    return out;
}

} // namespace proofagent
