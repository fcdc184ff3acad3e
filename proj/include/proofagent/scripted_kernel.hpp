// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "proofagent/session.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <utility>
#include <variant>

namespace proofagent {

/// Deterministic stand-in for a proof assistant: a lookup table from
/// (subgoal fingerprint, tactic text) to an error or a list of new subgoals.
///
/// Fixture file (JSON, schema_version 1):
///
///     {
///       "schema_version": 1,
///       "theorem": "name",
///       "goals": { "G0": "<display block>", ... },
///       "initial": ["G0"],
///       "definitions": { "symbol": "definition text" },
///       "transitions": [
///         { "goal": "G0", "tactic": "split.", "produces": ["G1", "G2"] },
///         { "goal": "G0", "tactic": "bad.", "error": "message" }
///       ]
///     }
///
/// Display blocks follow parse_subgoal's grammar. A transition with an empty
/// "produces" list closes its goal.
class ScriptedKernelSpec {
public:
    static constexpr int kSchemaVersion = 1;

    struct Failure {
        std::string message;
    };
    using Outcome = std::variant<Failure, std::vector<Subgoal>>;

    ScriptedKernelSpec() = default;

    void set_theorem(std::string name) { theorem_ = std::move(name); }
    void set_initial(std::vector<Subgoal> goals) { initial_ = std::move(goals); }
    void add_definition(std::string symbol, std::string body) {
        definitions_[std::move(symbol)] = std::move(body);
    }
    void add_goals(const Subgoal& goal, std::string_view tactic, std::vector<Subgoal> produced) {
        table_[key(goal, tactic)] = std::move(produced);
    }
    void add_error(const Subgoal& goal, std::string_view tactic, std::string message) {
        table_[key(goal, tactic)] = Failure{std::move(message)};
    }

    const std::string& theorem() const noexcept { return theorem_; }
    const std::vector<Subgoal>& initial() const noexcept { return initial_; }
    const std::map<std::string, std::string>& definitions() const noexcept { return definitions_; }
    std::size_t transition_count() const noexcept { return table_.size(); }

    const Outcome* lookup(const Subgoal& goal, const TacticStep& tactic) const {
        auto it = table_.find({goal.fingerprint(), tactic.text()});
        return it == table_.end() ? nullptr : &it->second;
    }

    static ScriptedKernelSpec from_json(const nlohmann::json& j) {
        if (!j.is_object()) throw FormatError("kernel fixture must be a JSON object");
        if (j.value("schema_version", 0) != kSchemaVersion)
            throw FormatError("unsupported kernel fixture schema_version");
        ScriptedKernelSpec spec;
        spec.theorem_ = j.value("theorem", std::string{});
        std::map<std::string, Subgoal> goals;
        for (const auto& [id, block] : j.at("goals").items())
            goals.emplace(id, parse_subgoal(block.get<std::string>()));
        auto goal = [&](const std::string& id) -> const Subgoal& {
            auto it = goals.find(id);
            if (it == goals.end()) throw FormatError("kernel fixture references unknown goal '" + id + "'");
            return it->second;
        };
        for (const auto& id : j.at("initial")) spec.initial_.push_back(goal(id.get<std::string>()));
        if (j.contains("definitions"))
            for (const auto& [sym, body] : j.at("definitions").items())
                spec.definitions_[sym] = body.get<std::string>();
        for (const auto& t : j.at("transitions")) {
            const auto& from = goal(t.at("goal").get<std::string>());
            auto tactic = t.at("tactic").get<std::string>();
            if (t.contains("error")) {
                spec.add_error(from, tactic, t.at("error").get<std::string>());
            } else {
                std::vector<Subgoal> produced;
                for (const auto& id : t.at("produces")) produced.push_back(goal(id.get<std::string>()));
                spec.add_goals(from, tactic, std::move(produced));
            }
        }
        return spec;
    }

    static ScriptedKernelSpec load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw FormatError("cannot open kernel fixture " + path.string());
        try {
            return from_json(nlohmann::json::parse(in));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ": " + e.what());
        }
    }

private:
    using Key = std::pair<std::string, std::string>;
    static Key key(const Subgoal& goal, std::string_view tactic) {
        return {goal.fingerprint(), TacticStep::make(tactic).text()};
    }

    std::string theorem_;
    std::vector<Subgoal> initial_;
    std::map<std::string, std::string> definitions_;
    std::map<Key, Outcome> table_;
};

/// A session over a ScriptedKernelSpec. Table misses are errors, never silent
/// acceptance.
class ScriptedKernel final : public ProverSession {
public:
    explicit ScriptedKernel(std::shared_ptr<const ScriptedKernelSpec> spec)
        : spec_(std::move(spec)), remaining_(spec_->initial()) {}

    ExecutionOutcome execute(const TacticStep& tactic) override {
        if (remaining_.empty()) throw NoRemainingGoals();
        ExecutionOutcome out;
        out.applied_goal = remaining_.front();
        const auto* outcome = spec_->lookup(out.applied_goal, tactic);
        if (outcome == nullptr) {
            out.error = "no transition";
            return out;
        }
        if (const auto* f = std::get_if<ScriptedKernelSpec::Failure>(outcome)) {
            out.error = f->message;
            return out;
        }
        const auto& produced = std::get<std::vector<Subgoal>>(*outcome);
        history_.push_back(remaining_);
        std::vector<Subgoal> next;
        next.reserve(produced.size() + remaining_.size() - 1);
        next.insert(next.end(), produced.begin(), produced.end());
        next.insert(next.end(), remaining_.begin() + 1, remaining_.end());
        remaining_ = std::move(next);
        out.new_subgoals = produced;
        return out;
    }

    void undo(std::size_t n) override {
        if (n > history_.size())
            throw SessionError("undo(" + std::to_string(n) + ") beyond the " +
                               std::to_string(history_.size()) + " recorded states");
        if (n == 0) return;
        remaining_ = history_[history_.size() - n];
        history_.resize(history_.size() - n);
    }

    std::optional<Subgoal> first_unproved() const override {
        if (remaining_.empty()) return std::nullopt;
        return remaining_.front();
    }
    std::size_t remaining_count() const override { return remaining_.size(); }

    std::optional<std::string> definition_of(std::string_view symbol) const override {
        const auto& defs = spec_->definitions();
        auto it = defs.find(std::string(symbol));
        if (it == defs.end()) return std::nullopt;
        return it->second;
    }

    const std::vector<Subgoal>& remaining() const noexcept { return remaining_; }
    std::size_t depth() const noexcept { return history_.size(); }
    const ScriptedKernelSpec& spec() const noexcept { return *spec_; }

private:
    std::shared_ptr<const ScriptedKernelSpec> spec_;
    std::vector<Subgoal> remaining_;
    std::vector<std::vector<Subgoal>> history_;
};

} // namespace proofagent
