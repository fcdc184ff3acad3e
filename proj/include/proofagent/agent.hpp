// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "proofagent/database.hpp"
#include "proofagent/events.hpp"
#include "proofagent/hammer.hpp"
#include "proofagent/prompts.hpp"
#include "proofagent/providers.hpp"
#include "proofagent/reflect.hpp"
#include "proofagent/retrieve.hpp"
#include "proofagent/session.hpp"

#include <json.hpp>

#include <chrono>

namespace proofagent {

enum class RetrievalMode { None, Bm25, Planning };

inline std::string_view to_string(RetrievalMode m) {
    switch (m) {
    case RetrievalMode::None: return "none";
    case RetrievalMode::Bm25: return "bm25";
    case RetrievalMode::Planning: return "planning";
    }
    return "unknown";
}

inline RetrievalMode retrieval_mode_from_string(std::string_view s) {
    for (auto m : {RetrievalMode::None, RetrievalMode::Bm25, RetrievalMode::Planning})
        if (to_string(m) == s) return m;
    throw FormatError("unknown retrieval mode '" + std::string(s) + "'");
}

struct AgentConfig {
    std::size_t iteration_limit = 25;
    std::optional<std::size_t> llm_invocation_budget;
    std::size_t k_lemmas = 8;
    std::size_t k_proofs = 8;
    HammerConfig hammer;
    std::size_t prompt_token_clip = 100000;
    std::string chat_model = "gpt-4";
    std::string embedding_model = "text-embedding-3-large";
    std::optional<double> temperature;

    // Ablation switches.
    bool llm_generation = true;
    bool reflection = true;
    RetrievalMode retrieval = RetrievalMode::Planning;

    void validate() const {
        if (iteration_limit < 1) throw Error("iteration limit must be at least 1");
        if (llm_invocation_budget && *llm_invocation_budget < 1) throw Error("invocation budget must be at least 1");
        if (prompt_token_clip < 1) throw Error("prompt token clip must be at least 1");
    }
};

// ---------------------------------------------------------------------------
// Failure history

/// Failure records grouped by subgoal fingerprint, oldest first.
class FailureHistory {
public:
    void add(FailureRecord record) {
        auto key = record.subgoal.fingerprint();
        records_[key].push_back(std::move(record));
        ++total_;
    }

    const std::vector<FailureRecord>& lookup(const Subgoal& goal) const {
        static const std::vector<FailureRecord> none;
        auto it = records_.find(goal.fingerprint());
        return it == records_.end() ? none : it->second;
    }

    std::size_t size() const noexcept { return total_; }

private:
    std::map<std::string, std::vector<FailureRecord>> records_;
    std::size_t total_ = 0;
};

// ---------------------------------------------------------------------------
// Prompt construction

inline std::string render_examples(const std::vector<ProofEntry>& proofs) {
    std::string out;
    for (const auto& p : proofs) {
        if (!out.empty()) out += "\n\n";
        out += p.goal.render() + "\nPlan:\n" + render_plan(p.plan) + "\nProof:\n" + p.proof_text;
    }
    return out;
}

inline std::string render_lemmas(const std::vector<LemmaEntry>& lemmas) {
    std::string out;
    for (const auto& l : lemmas) {
        if (!out.empty()) out += "\n\n";
        out += l.name + " : " + l.statement;
        if (!l.description.empty()) out += "\nDescription: " + l.description;
    }
    return out;
}

inline std::string render_failures(const std::vector<FailureRecord>& history) {
    std::string out;
    for (std::size_t i = 0; i < history.size(); ++i) {
        const auto& f = history[i];
        if (!out.empty()) out += "\n\n";
        out += "Failure " + std::to_string(i + 1) + ":\nSubgoal:\n" + f.subgoal.render() + "\nTactics:\n" +
               join_tactics(f.tactics) + "\nReason:\n" + f.reason;
    }
    return out;
}

namespace detail {

/// Trailing instruction of the generation template, kept whole by clipping.
inline std::string_view decorator_suffix() {
    auto user = prompts::kGeneration.user;
    auto pos = user.rfind("\n\n");
    return pos == std::string_view::npos ? std::string_view{} : user.substr(pos);
}

} // namespace detail

/// Drops characters from the front of `user` (never from `suffix`, which
/// must end `user`) until system and user together estimate to at most
/// `clip` tokens. Cuts land on UTF-8 boundaries.
inline std::string left_clip(const std::string& system, std::string user, std::string_view suffix,
                             std::size_t clip) {
    if (text::estimate_tokens(system) + text::estimate_tokens(user) <= clip) return user;
    std::size_t sys = text::estimate_tokens(system);
    std::size_t allowed = sys >= clip ? 0 : (clip - sys) * 4;
    if (user.size() < suffix.size() || user.compare(user.size() - suffix.size(), suffix.size(), suffix) != 0)
        suffix = {};
    if (allowed <= suffix.size()) return std::string(suffix);
    std::size_t cut = user.size() - allowed;
    while (cut < user.size() && (static_cast<unsigned char>(user[cut]) & 0xC0) == 0x80) ++cut;
    return user.substr(cut);
}

/// The generation request: subgoal, definitions, example proofs with their
/// plans, lemmas with descriptions, and earlier failures on this subgoal.
inline ChatRequest build_prompt(const Subgoal& goal, const std::map<std::string, std::string>& definitions,
                                const std::vector<LemmaEntry>& lemmas, const std::vector<ProofEntry>& proofs,
                                const std::vector<FailureRecord>& history, std::size_t clip) {
    ChatRequest r;
    r.system = std::string(prompts::kGeneration.system);
    r.user = prompts::render(prompts::kGeneration.user, {{"subgoal", goal.render()},
                                                         {"definitions", render_definitions(definitions)},
                                                         {"examples", render_examples(proofs)},
                                                         {"lemmas", render_lemmas(lemmas)},
                                                         {"failure_history", render_failures(history)}});
    r.user = left_clip(r.system, std::move(r.user), detail::decorator_suffix(), clip);
    r.tag = ChatTag::Generation;
    return r;
}

// ---------------------------------------------------------------------------
// Response parsing

/// Tactics from a generation response: every <coq>...</coq> span, in
/// order, split into sentences. An unclosed final span runs to the end.
/// Throws NoProofFound when there is no span or no tactic in it.
inline std::vector<TacticStep> parse_generation(std::string_view response) {
    static constexpr std::string_view open = "<coq>";
    static constexpr std::string_view close = "</coq>";
    std::string body;
    bool any = false;
    std::size_t pos = 0;
    while (true) {
        auto start = response.find(open, pos);
        if (start == std::string_view::npos) break;
        start += open.size();
        auto end = response.find(close, start);
        any = true;
        body += response.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
        body += '\n';
        if (end == std::string_view::npos) break;
        pos = end + close.size();
    }
    if (!any) throw NoProofFound();
    std::vector<TacticStep> steps;
    for (const auto& s : split_sentences(body)) {
        if (s == "Proof." || s == "Qed." || s == "Defined." || s == "Admitted.") continue;
        steps.push_back(TacticStep::make(s));
    }
    if (steps.empty()) throw NoProofFound();
    return steps;
}

// ---------------------------------------------------------------------------
// Invocation metering

/// Per-theorem counter of logical model invocations and tokens. Charging
/// past the budget throws BudgetExhausted before the provider is called.
class InvocationMeter {
public:
    explicit InvocationMeter(std::optional<std::size_t> budget = std::nullopt) : budget_(budget) {}

    void charge() {
        if (budget_ && used_ >= *budget_) throw BudgetExhausted();
        ++used_;
    }
    bool affordable(std::size_t n) const { return !budget_ || used_ + n <= *budget_; }

    std::size_t used() const noexcept { return used_; }
    std::optional<std::size_t> budget() const noexcept { return budget_; }

    std::map<std::string, std::size_t> chat_by_tag;
    std::size_t embedding_calls = 0;
    long prompt_tokens = 0;
    long completion_tokens = 0;

private:
    std::optional<std::size_t> budget_;
    std::size_t used_ = 0;
};

class MeteredChat final : public ChatModel {
public:
    MeteredChat(ChatModel& inner, InvocationMeter& meter) : inner_(inner), meter_(meter) {}

    ChatResponse complete(const ChatRequest& request) override {
        meter_.charge();
        ++meter_.chat_by_tag[std::string(to_string(request.tag))];
        auto r = inner_.complete(request);
        meter_.prompt_tokens += r.prompt_tokens;
        meter_.completion_tokens += r.completion_tokens;
        return r;
    }
    std::string model_id() const override { return inner_.model_id(); }

private:
    ChatModel& inner_;
    InvocationMeter& meter_;
};

class MeteredEmbedder final : public Embedder {
public:
    MeteredEmbedder(Embedder& inner, InvocationMeter& meter) : inner_(inner), meter_(meter) {}

    std::vector<Vector> embed(const std::vector<std::string>& texts) override {
        meter_.charge();
        ++meter_.embedding_calls;
        return inner_.embed(texts);
    }
    std::string model_id() const override { return inner_.model_id(); }

private:
    Embedder& inner_;
    InvocationMeter& meter_;
};

// ---------------------------------------------------------------------------
// Run ledger

enum class Outcome { Proved, ExhaustedIterations, ExhaustedBudget, Error };

inline std::string_view to_string(Outcome o) {
    switch (o) {
    case Outcome::Proved: return "proved";
    case Outcome::ExhaustedIterations: return "exhausted-iterations";
    case Outcome::ExhaustedBudget: return "exhausted-budget";
    case Outcome::Error: return "error";
    }
    return "unknown";
}

inline Outcome outcome_from_string(std::string_view s) {
    for (auto o : {Outcome::Proved, Outcome::ExhaustedIterations, Outcome::ExhaustedBudget, Outcome::Error})
        if (to_string(o) == s) return o;
    throw FormatError("unknown outcome '" + std::string(s) + "'");
}

/// Accounting for one theorem. Wall time is kept out of the JSON form so
/// that replayed runs serialize identically.
struct RunLedger {
    std::string theorem_id;
    Outcome outcome = Outcome::Error;
    std::size_t iterations = 0;
    std::map<std::string, std::size_t> chat_invocations;
    std::size_t embedding_invocations = 0;
    long prompt_tokens = 0;
    long completion_tokens = 0;
    std::size_t hammer_successes = 0;
    std::size_t reflection_calls = 0;
    std::size_t failure_records = 0;
    std::vector<std::string> proof_script;
    std::string error;
    double wall_seconds = 0.0;

    std::size_t chat_total() const {
        std::size_t n = 0;
        for (const auto& [_, c] : chat_invocations) n += c;
        return n;
    }
    std::size_t invocations() const { return chat_total() + embedding_invocations; }
    long tokens() const { return prompt_tokens + completion_tokens; }
    bool proved() const { return outcome == Outcome::Proved; }

    nlohmann::json to_json() const {
        nlohmann::json j = {{"theorem_id", theorem_id},
                            {"outcome", to_string(outcome)},
                            {"iterations", iterations},
                            {"chat_invocations", chat_invocations},
                            {"embedding_invocations", embedding_invocations},
                            {"prompt_tokens", prompt_tokens},
                            {"completion_tokens", completion_tokens},
                            {"hammer_successes", hammer_successes},
                            {"reflection_calls", reflection_calls},
                            {"failure_records", failure_records},
                            {"proof_script", proof_script}};
        if (!error.empty()) j["error"] = error;
        return j;
    }

    static RunLedger from_json(const nlohmann::json& j) {
        RunLedger l;
        l.theorem_id = j.at("theorem_id").get<std::string>();
        l.outcome = outcome_from_string(j.at("outcome").get<std::string>());
        l.iterations = j.value("iterations", std::size_t{0});
        l.chat_invocations = j.value("chat_invocations", std::map<std::string, std::size_t>{});
        l.embedding_invocations = j.value("embedding_invocations", std::size_t{0});
        l.prompt_tokens = j.value("prompt_tokens", 0L);
        l.completion_tokens = j.value("completion_tokens", 0L);
        l.hammer_successes = j.value("hammer_successes", std::size_t{0});
        l.reflection_calls = j.value("reflection_calls", std::size_t{0});
        l.failure_records = j.value("failure_records", std::size_t{0});
        l.proof_script = j.value("proof_script", std::vector<std::string>{});
        l.error = j.value("error", std::string{});
        return l;
    }
};

/// Plain tactic script, one sentence per line.
inline std::string render_script(const RunLedger& ledger) {
    std::string out;
    for (const auto& t : ledger.proof_script) out += t + '\n';
    return out;
}

// ---------------------------------------------------------------------------
// The loop

/// Read-only retrieval sources for one run; either may be null.
struct Libraries {
    const LemmaDb* lemmas = nullptr;
    const ProofDb* proofs = nullptr;
};

struct Providers {
    ChatModel* chat = nullptr;
    Embedder* embedder = nullptr;
    Hammer* hammer = nullptr;
};

namespace detail {

class AcceptAll final : public Reflector {
public:
    ReflectionVerdict reflect(const Subgoal&, const std::vector<Subgoal>&, const TacticStep&,
                              std::span<const TacticStep>) override {
        return {};
    }
};

/// Running out of budget mid-reflection accepts the tactic; the prover
/// still checks everything that is kept.
class BudgetTolerant final : public Reflector {
public:
    BudgetTolerant(Reflector& inner, const EventSink& events) : inner_(inner), events_(events) {}

    ReflectionVerdict reflect(const Subgoal& applied, const std::vector<Subgoal>& produced, const TacticStep& tactic,
                              std::span<const TacticStep> span) override {
        try {
            return inner_.reflect(applied, produced, tactic, span);
        } catch (const BudgetExhausted&) {
            emit(events_, {{"event", "reflection-skipped-budget"}, {"tactic", tactic.text()}});
            return {};
        }
    }

private:
    Reflector& inner_;
    const EventSink& events_;
};

} // namespace detail

/// Runs the proving loop on `session` until no subgoal remains, the
/// iteration limit is hit, the budget cannot cover another attempt, or an
/// infrastructure error occurs.
inline RunLedger prove(const std::string& theorem_id, ProverSession& session, const Libraries& libs,
                       const AvailabilityFilter& filter, const Providers& providers, const AgentConfig& config,
                       const EventSink& events = {}) {
    config.validate();
    auto started = std::chrono::steady_clock::now();
    RunLedger ledger;
    ledger.theorem_id = theorem_id;
    InvocationMeter meter(config.llm_invocation_budget);
    FailureHistory history;
    std::vector<TacticStep> script;

    std::optional<MeteredChat> chat;
    std::optional<MeteredEmbedder> embedder;
    if (providers.chat) chat.emplace(*providers.chat, meter);
    if (providers.embedder) embedder.emplace(*providers.embedder, meter);

    const std::size_t min_step = config.retrieval == RetrievalMode::Planning ? 3 : 1;
    auto finish = [&](Outcome o) {
        ledger.outcome = o;
        return o;
    };

    try {
        while (true) {
            if (session.remaining_count() == 0) {
                finish(Outcome::Proved);
                break;
            }
            if (ledger.iterations >= config.iteration_limit) {
                finish(Outcome::ExhaustedIterations);
                break;
            }
            if (config.llm_generation && !meter.affordable(min_step) &&
                !(config.hammer.enabled && providers.hammer)) {
                finish(Outcome::ExhaustedBudget);
                break;
            }
            ++ledger.iterations;
            const auto iter = ledger.iterations;
            const Subgoal goal = *session.first_unproved();
            emit(events, {{"event", "iteration"}, {"iteration", iter}, {"subgoal", goal.fingerprint()},
                          {"remaining", session.remaining_count()}});

            if (config.hammer.enabled && providers.hammer) {
                if (auto proof = providers.hammer->try_prove(goal, session, config.hammer, events)) {
                    for (auto& t : *proof) script.push_back(std::move(t));
                    ++ledger.hammer_successes;
                    emit(events, {{"event", "hammer-success"}, {"iteration", iter}});
                    continue;
                }
                emit(events, {{"event", "hammer-failure"}, {"iteration", iter}});
            }
            if (!config.llm_generation) {
                finish(Outcome::ExhaustedIterations);
                break;
            }
            if (!meter.affordable(min_step)) {
                finish(Outcome::ExhaustedBudget);
                break;
            }
            if (!chat) throw Error("no chat provider configured");

            auto defs = definitions_for(session, {goal});
            std::vector<LemmaEntry> lemmas;
            std::vector<ProofEntry> proofs;
            if (config.retrieval == RetrievalMode::Planning) {
                if (!embedder) throw Error("planning retrieval needs an embedding provider");
                auto plan = generate_plan(goal, defs, *chat, {config.temperature, events});
                auto texts = plan.steps;
                texts.push_back(plan_text(plan));
                auto vecs = embedder->embed(texts);
                if (vecs.size() != texts.size()) throw ProviderError("embedder returned the wrong number of vectors", false);
                auto plan_vec = vecs.back();
                vecs.pop_back();
                if (libs.lemmas) lemmas = retrieve_lemmas_by_vectors(vecs, *libs.lemmas, filter, config.k_lemmas);
                if (libs.proofs) proofs = retrieve_proofs_by_vector(plan_vec, *libs.proofs, config.k_proofs, &filter);
                emit(events, {{"event", "retrieval"}, {"iteration", iter}, {"mode", "planning"},
                              {"plan", plan.steps}, {"lemmas", lemmas.size()}, {"proofs", proofs.size()}});
            } else if (config.retrieval == RetrievalMode::Bm25) {
                if (libs.lemmas) lemmas = bm25_lemmas(goal, *libs.lemmas, filter, config.k_lemmas);
                if (libs.proofs) proofs = bm25_proofs(goal, *libs.proofs, &filter, config.k_proofs);
                emit(events, {{"event", "retrieval"}, {"iteration", iter}, {"mode", "bm25"},
                              {"lemmas", lemmas.size()}, {"proofs", proofs.size()}});
            }

            auto request = build_prompt(goal, defs, lemmas, proofs, history.lookup(goal), config.prompt_token_clip);
            request.temperature = config.temperature;
            auto response = chat->complete(request);
            emit(events, {{"event", "generation"}, {"iteration", iter}, {"prompt_bytes", request.user.size()}});

            std::vector<TacticStep> tactics;
            try {
                tactics = parse_generation(response.text);
            } catch (const NoProofFound& e) {
                history.add(FailureRecord{goal, {}, e.what(), FailureKind::NoParseableProof});
                ++ledger.failure_records;
                emit(events, {{"event", "no-parseable-proof"}, {"iteration", iter}});
                continue;
            }

            LlmReflector llm(*chat, session, {config.temperature, events});
            detail::AcceptAll accept;
            detail::BudgetTolerant tolerant(llm, events);
            Reflector& reflector = config.reflection ? static_cast<Reflector&>(tolerant) : accept;
            auto result = validate_with_reflection(tactics, session, reflector);
            if (config.reflection) ledger.reflection_calls += result.reflection_calls;
            for (auto& t : result.retained) script.push_back(std::move(t));
            emit(events, {{"event", "validation"}, {"iteration", iter}, {"generated", tactics.size()},
                          {"retained", result.retained.size()},
                          {"failure", result.failure ? std::string(to_string(result.failure->kind)) : "none"}});
            if (result.failure) {
                history.add(std::move(*result.failure));
                ++ledger.failure_records;
            }
        }
    } catch (const BudgetExhausted&) {
        finish(Outcome::ExhaustedBudget);
    } catch (const std::exception& e) {
        finish(Outcome::Error);
        ledger.error = e.what();
        emit(events, {{"event", "error"}, {"error", e.what()}});
    }

    for (const auto& t : script) ledger.proof_script.push_back(t.text());
    ledger.chat_invocations = meter.chat_by_tag;
    ledger.embedding_invocations = meter.embedding_calls;
    ledger.prompt_tokens = meter.prompt_tokens;
    ledger.completion_tokens = meter.completion_tokens;
    ledger.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    emit(events, {{"event", "done"}, {"outcome", to_string(ledger.outcome)}, {"iterations", ledger.iterations}});
    return ledger;
}

} // namespace proofagent
