// SPDX-License-Identifier: Apache-2.0
#pragma once

// A minimal propositional prover implementing the ProverSession contract.
// Formulas: atoms, True, False, ~A, A /\ B, A \/ B, A -> B.
// Tactics: intro, intros, split, left, right, exact H, assumption, apply H,
// destruct H, trivial, exfalso, contradiction.

#include "proofagent/session.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace proofagent {

namespace toy {

struct Formula;
using FormulaPtr = std::shared_ptr<const Formula>;

struct Formula {
    enum class Op { Atom, True, False, Not, And, Or, Imp };
    Op op;
    std::string atom;
    FormulaPtr lhs;
    FormulaPtr rhs;
};

inline FormulaPtr mk(Formula::Op op, FormulaPtr l = nullptr, FormulaPtr r = nullptr) {
    return std::make_shared<const Formula>(Formula{op, {}, std::move(l), std::move(r)});
}

inline bool equal(const FormulaPtr& a, const FormulaPtr& b) {
    if (a->op != b->op) return false;
    switch (a->op) {
    case Formula::Op::Atom: return a->atom == b->atom;
    case Formula::Op::True:
    case Formula::Op::False: return true;
    case Formula::Op::Not: return equal(a->lhs, b->lhs);
    default: return equal(a->lhs, b->lhs) && equal(a->rhs, b->rhs);
    }
}

inline int precedence(Formula::Op op) {
    switch (op) {
    case Formula::Op::Imp: return 1;
    case Formula::Op::Or: return 2;
    case Formula::Op::And: return 3;
    case Formula::Op::Not: return 4;
    default: return 5;
    }
}

inline std::string render(const FormulaPtr& f) {
    auto wrap = [](const FormulaPtr& child, int min_prec) {
        auto s = render(child);
        return precedence(child->op) < min_prec ? "(" + s + ")" : s;
    };
    switch (f->op) {
    case Formula::Op::Atom: return f->atom;
    case Formula::Op::True: return "True";
    case Formula::Op::False: return "False";
    case Formula::Op::Not: return "~" + wrap(f->lhs, 4);
    case Formula::Op::And: return wrap(f->lhs, 4) + " /\\ " + wrap(f->rhs, 3);
    case Formula::Op::Or: return wrap(f->lhs, 3) + " \\/ " + wrap(f->rhs, 2);
    case Formula::Op::Imp: return wrap(f->lhs, 2) + " -> " + wrap(f->rhs, 1);
    }
    return {};
}

class Parser {
public:
    explicit Parser(std::string_view s) : s_(s) {}

    FormulaPtr parse() {
        auto f = imp();
        skip();
        if (pos_ != s_.size()) throw Error("toy formula: trailing input in '" + std::string(s_) + "'");
        return f;
    }

private:
    void skip() {
        while (pos_ < s_.size() && text::is_space(s_[pos_])) ++pos_;
    }
    bool eat(std::string_view tok) {
        skip();
        if (s_.substr(pos_, tok.size()) == tok) {
            pos_ += tok.size();
            return true;
        }
        return false;
    }
    FormulaPtr imp() {
        auto l = disj();
        if (eat("->")) return mk(Formula::Op::Imp, l, imp());
        return l;
    }
    FormulaPtr disj() {
        auto l = conj();
        if (eat("\\/")) return mk(Formula::Op::Or, l, disj());
        return l;
    }
    FormulaPtr conj() {
        auto l = neg();
        if (eat("/\\")) return mk(Formula::Op::And, l, conj());
        return l;
    }
    FormulaPtr neg() {
        if (eat("~")) return mk(Formula::Op::Not, neg());
        return atom();
    }
    FormulaPtr atom() {
        skip();
        if (eat("(")) {
            auto f = imp();
            if (!eat(")")) throw Error("toy formula: missing ')'");
            return f;
        }
        std::size_t start = pos_;
        while (pos_ < s_.size() && text::is_ident_char(s_[pos_])) ++pos_;
        if (start == pos_) throw Error("toy formula: expected atom in '" + std::string(s_) + "'");
        auto name = std::string(s_.substr(start, pos_ - start));
        if (name == "True") return mk(Formula::Op::True);
        if (name == "False") return mk(Formula::Op::False);
        auto f = std::make_shared<Formula>(Formula{Formula::Op::Atom, name, nullptr, nullptr});
        return f;
    }

    std::string_view s_;
    std::size_t pos_ = 0;
};

inline FormulaPtr parse(std::string_view s) { return Parser(s).parse(); }

} // namespace toy

/// Session over propositional goals. Subgoals are ordinary Subgoal values
/// whose premise statements and consequent are toy formulas.
class ToyKernel final : public ProverSession {
public:
    explicit ToyKernel(std::vector<Subgoal> goals) : remaining_(std::move(goals)) {}

    /// Convenience: a single goal with no premises.
    static ToyKernel for_formula(std::string_view formula) {
        return ToyKernel({Subgoal::make({}, toy::render(toy::parse(formula)))});
    }

    ExecutionOutcome execute(const TacticStep& tactic) override {
        if (remaining_.empty()) throw NoRemainingGoals();
        ExecutionOutcome out;
        out.applied_goal = remaining_.front();
        try {
            out.new_subgoals = step(out.applied_goal, tactic.text());
        } catch (const Error& e) {
            out.error = e.what();
            out.new_subgoals.clear();
            return out;
        }
        history_.push_back(remaining_);
        std::vector<Subgoal> next = out.new_subgoals;
        next.insert(next.end(), remaining_.begin() + 1, remaining_.end());
        remaining_ = std::move(next);
        return out;
    }

    void undo(std::size_t n) override {
        if (n > history_.size()) throw SessionError("undo beyond the recorded states");
        if (n == 0) return;
        remaining_ = history_[history_.size() - n];
        history_.resize(history_.size() - n);
    }

    std::optional<Subgoal> first_unproved() const override {
        if (remaining_.empty()) return std::nullopt;
        return remaining_.front();
    }
    std::size_t remaining_count() const override { return remaining_.size(); }
    std::optional<std::string> definition_of(std::string_view) const override { return std::nullopt; }

private:
    using Hyps = std::vector<std::pair<std::string, toy::FormulaPtr>>;

    static std::string fresh(const Hyps& hyps, std::string_view base) {
        auto taken = [&](const std::string& n) {
            for (const auto& h : hyps)
                if (h.first == n) return true;
            return false;
        };
        std::string name(base);
        if (!taken(name)) return name;
        for (int i = 0;; ++i) {
            auto cand = std::string(base) + std::to_string(i);
            if (!taken(cand)) return cand;
        }
    }

    static Subgoal make_goal(const Hyps& hyps, const toy::FormulaPtr& concl) {
        std::vector<Premise> ps;
        for (const auto& [n, f] : hyps) ps.push_back({n, toy::render(f)});
        return Subgoal::make(std::move(ps), toy::render(concl));
    }

    static const toy::FormulaPtr* find(const Hyps& hyps, std::string_view name) {
        for (const auto& h : hyps)
            if (h.first == name) return &h.second;
        return nullptr;
    }

    static std::vector<Subgoal> step(const Subgoal& goal, std::string_view raw) {
        using Op = toy::Formula::Op;
        Hyps hyps;
        for (const auto& p : goal.premises()) hyps.emplace_back(p.name, toy::parse(p.statement));
        auto concl = toy::parse(goal.consequent());

        auto body = text::trim(raw);
        if (!body.empty() && body.back() == '.') body.remove_suffix(1);
        std::vector<std::string> words;
        {
            std::string cur;
            for (char c : body) {
                if (text::is_space(c)) {
                    if (!cur.empty()) words.push_back(std::move(cur));
                    cur.clear();
                } else {
                    cur.push_back(c);
                }
            }
            if (!cur.empty()) words.push_back(std::move(cur));
        }
        if (words.empty()) throw Error("empty tactic");
        const auto& head = words[0];
        auto arg = [&](std::size_t i) -> const std::string& {
            if (i >= words.size()) throw Error(head + ": missing argument");
            return words[i];
        };
        auto intro_one = [&](std::optional<std::string> name) {
            if (concl->op == Op::Imp) {
                auto n = name ? *name : fresh(hyps, "H");
                if (find(hyps, n)) throw Error(n + " is already used.");
                hyps.emplace_back(n, concl->lhs);
                concl = concl->rhs;
            } else if (concl->op == Op::Not) {
                auto n = name ? *name : fresh(hyps, "H");
                if (find(hyps, n)) throw Error(n + " is already used.");
                hyps.emplace_back(n, concl->lhs);
                concl = toy::mk(Op::False);
            } else {
                throw Error("No product even after head-reduction.");
            }
        };

        if (head == "intro") {
            if (words.size() > 2) throw Error("intro takes at most one name");
            intro_one(words.size() == 2 ? std::optional<std::string>(words[1]) : std::nullopt);
            return {make_goal(hyps, concl)};
        }
        if (head == "intros") {
            if (words.size() == 1) {
                while (concl->op == Op::Imp || concl->op == Op::Not) intro_one(std::nullopt);
            } else {
                for (std::size_t i = 1; i < words.size(); ++i) intro_one(words[i]);
            }
            return {make_goal(hyps, concl)};
        }
        if (head == "split") {
            if (concl->op != Op::And) throw Error("Not an inductive goal with 1 constructor.");
            return {make_goal(hyps, concl->lhs), make_goal(hyps, concl->rhs)};
        }
        if (head == "left" || head == "right") {
            if (concl->op != Op::Or) throw Error("Not an inductive goal with 2 constructors.");
            return {make_goal(hyps, head == "left" ? concl->lhs : concl->rhs)};
        }
        if (head == "exact") {
            const auto* h = find(hyps, arg(1));
            if (!h) throw Error("The variable " + arg(1) + " was not found in the current environment.");
            if (!toy::equal(*h, concl)) throw Error("The term " + arg(1) + " has a type that does not match the goal.");
            return {};
        }
        if (head == "assumption") {
            for (const auto& [n, f] : hyps)
                if (toy::equal(f, concl)) return {};
            throw Error("No such assumption.");
        }
        if (head == "trivial") {
            if (concl->op == Op::True) return {};
            for (const auto& [n, f] : hyps)
                if (toy::equal(f, concl)) return {};
            throw Error("trivial failed to solve the goal.");
        }
        if (head == "exfalso") {
            return {make_goal(hyps, toy::mk(Op::False))};
        }
        if (head == "contradiction") {
            for (const auto& [n, f] : hyps) {
                if (f->op == Op::False) return {};
                if (f->op == Op::Not)
                    for (const auto& [m, g] : hyps)
                        if (toy::equal(g, f->lhs)) return {};
            }
            throw Error("No such contradiction.");
        }
        if (head == "apply") {
            const auto* h = find(hyps, arg(1));
            if (!h) throw Error("The variable " + arg(1) + " was not found in the current environment.");
            std::vector<toy::FormulaPtr> antecedents;
            auto f = *h;
            while (true) {
                if (toy::equal(f, concl)) {
                    std::vector<Subgoal> out;
                    for (const auto& a : antecedents) out.push_back(make_goal(hyps, a));
                    return out;
                }
                if (f->op != Op::Imp) break;
                antecedents.push_back(f->lhs);
                f = f->rhs;
            }
            throw Error("Unable to unify " + toy::render(*h) + " with " + toy::render(concl) + ".");
        }
        if (head == "destruct") {
            const auto& name = arg(1);
            std::size_t idx = hyps.size();
            for (std::size_t i = 0; i < hyps.size(); ++i)
                if (hyps[i].first == name) idx = i;
            if (idx == hyps.size()) throw Error("The variable " + name + " was not found in the current environment.");
            auto f = hyps[idx].second;
            Hyps rest = hyps;
            rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(idx));
            if (f->op == Op::False) return {};
            if (f->op == Op::And) {
                auto a = fresh(rest, name);
                rest.emplace_back(a, f->lhs);
                auto b = fresh(rest, name);
                rest.emplace_back(b, f->rhs);
                return {make_goal(rest, concl)};
            }
            if (f->op == Op::Or) {
                Hyps l = rest, r = rest;
                l.emplace_back(name, f->lhs);
                r.emplace_back(name, f->rhs);
                return {make_goal(l, concl), make_goal(r, concl)};
            }
            throw Error("Not an inductive product.");
        }
        throw Error("The reference " + head + " was not found in the current environment.");
    }

    std::vector<Subgoal> remaining_;
    std::vector<std::vector<Subgoal>> history_;
};

} // namespace proofagent
