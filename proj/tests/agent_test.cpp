// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <gtest/gtest.h>

#include <chrono>

using namespace proofagent;
using patest::TempDir;

namespace {

const std::vector<std::string> kHeaders = {"### subgoal to be Solved", "### Definitions", "### Examples",
                                           "### Lemmas", "### Failure History"};
const std::string kSuffix = "\n\nYou need to wrap generated tactics with <coq> and </coq>.";

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Toy libraries shared by the tests in this file.
const patest::ToyLibraries& toy_libs() {
    static TempDir dir;
    static auto libs = patest::build_toy_libraries(dir.path());
    return libs;
}

} // namespace

TEST(Prompt, HeadersPresentWithEmptyContext) {
    auto g = Subgoal::make({}, "A -> A");
    auto r = build_prompt(g, {}, {}, {}, {}, 100000);
    EXPECT_EQ(r.tag, ChatTag::Generation);
    std::size_t last = 0;
    for (const auto& h : kHeaders) {
        auto pos = r.user.find(h);
        ASSERT_NE(pos, std::string::npos) << h;
        EXPECT_GE(pos, last);
        last = pos;
    }
    EXPECT_NE(r.user.find(g.render()), std::string::npos);
    EXPECT_TRUE(ends_with(r.user, kSuffix));
}

TEST(Prompt, FailureRecordAppearsVerbatim) {
    auto g = Subgoal::make({{"H", "A"}}, "B");
    FailureRecord f{g, {TacticStep::make("intros x."), TacticStep::make("induction x.")},
                    "Bad induction.\nSuggested fix:\ninduction y.", FailureKind::ReflectionMisapplied};
    auto r = build_prompt(g, {{"foo", "Definition foo := 1."}}, {}, {}, {f}, 100000);
    auto block = render_failures({f});
    EXPECT_NE(r.user.find(block), std::string::npos);
    EXPECT_NE(block.find("intros x. induction x."), std::string::npos);
    EXPECT_NE(block.find("Bad induction.\nSuggested fix:\ninduction y."), std::string::npos);
    EXPECT_NE(r.user.find("Definition foo := 1."), std::string::npos);
}

TEST(Prompt, ExamplesAndLemmasRendered) {
    LemmaEntry l;
    l.name = "mulRCA";
    l.statement = "x * (y * z) == y * (x * z)";
    l.description = "Rearranges a product.";
    ProofEntry p;
    p.theorem_name = "t";
    p.goal = Subgoal::make({}, "P");
    p.plan = ProofPlan{{"Do it."}};
    p.proof_text = "auto.";
    auto r = build_prompt(Subgoal::make({}, "Q"), {}, {l}, {p}, {}, 100000);
    EXPECT_NE(r.user.find("mulRCA : x * (y * z) == y * (x * z)\nDescription: Rearranges a product."),
              std::string::npos);
    EXPECT_NE(r.user.find("<step> Do it. </step>"), std::string::npos);
    EXPECT_NE(r.user.find("Proof:\nauto."), std::string::npos);
}

TEST(Prompt, ClippingKeepsSuffixAndBound) {
    std::mt19937_64 rng(7);
    auto g = Subgoal::make({}, "A");
    const auto sys_tokens = text::estimate_tokens(prompts::kGeneration.system);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<LemmaEntry> lemmas(1 + rng() % 20);
        for (std::size_t i = 0; i < lemmas.size(); ++i) {
            lemmas[i].name = "L" + std::to_string(i);
            lemmas[i].statement = std::string(rng() % 400, 'x') + "\xce\xbb" + std::string(rng() % 50, 'y');
        }
        std::size_t clip = sys_tokens + 20 + rng() % 2000;
        auto r = build_prompt(g, {}, lemmas, {}, {}, clip);
        ASSERT_LE(text::estimate_tokens(r.system) + text::estimate_tokens(r.user), clip);
        ASSERT_TRUE(ends_with(r.user, kSuffix));
        ASSERT_NE(static_cast<unsigned char>(r.user[0]) & 0xC0, 0x80u) << "cut inside a UTF-8 sequence";
        auto full = build_prompt(g, {}, lemmas, {}, {}, 1000000);
        ASSERT_TRUE(ends_with(full.user, r.user));
    }
}

TEST(Parse, GenerationResponses) {
    auto steps = parse_generation("Here.\n<coq>\nProof.\nintros H.\n- exact H.\nQed.\n</coq>");
    ASSERT_EQ(steps.size(), 2u);
    EXPECT_EQ(steps[0].text(), "intros H.");
    EXPECT_EQ(steps[1].text(), "exact H.");
    EXPECT_EQ(parse_generation("<coq>a.</coq> text <coq>b. c.</coq>").size(), 3u);
    EXPECT_EQ(parse_generation("<coq>split. auto").size(), 2u);
    EXPECT_THROW(parse_generation("no tags"), NoProofFound);
    EXPECT_THROW(parse_generation("<coq>Proof. Qed.</coq>"), NoProofFound);
    EXPECT_THROW(parse_generation("<coq>   </coq>"), NoProofFound);
}

TEST(Ledger, JsonRoundTrip) {
    RunLedger l;
    l.theorem_id = "t";
    l.outcome = Outcome::ExhaustedBudget;
    l.iterations = 3;
    l.chat_invocations = {{"generation", 2}, {"plan", 1}};
    l.embedding_invocations = 1;
    l.prompt_tokens = 10;
    l.completion_tokens = 4;
    l.proof_script = {"intros H."};
    l.wall_seconds = 12.5;
    auto back = RunLedger::from_json(l.to_json());
    EXPECT_EQ(back.to_json(), l.to_json());
    EXPECT_FALSE(l.to_json().contains("wall_seconds"));
    EXPECT_EQ(back.invocations(), 4u);
}

// --- hammer ---

TEST(Hammer, StubClosesGoalWithoutModelCalls) {
    auto suite = patest::toy_suite();
    const auto& t = suite.find("modus_ponens");
    auto hammer = StubHammer::load(suite.hammer_stub);
    patest::ChaosChat chat(1, {"auto."});
    patest::CountingEmbedder emb(64);
    auto session = open_session(t);
    auto cfg = patest::toy_config();
    profile_by_id("C5").apply(cfg);
    auto libs = toy_libs().view();
    auto ledger = prove(t.id, *session, libs, filter_for(t, libs), {&chat, &emb, &hammer}, cfg);
    EXPECT_TRUE(ledger.proved());
    EXPECT_EQ(ledger.hammer_successes, 1u);
    EXPECT_EQ(chat.calls, 0u);
    EXPECT_EQ(emb.calls, 0u);
    EXPECT_TRUE(script_replays(t, ledger));
}

TEST(Hammer, HammerOnlyStopsAfterFirstFailure) {
    StubHammer empty;
    ToyKernel session = ToyKernel::for_formula("A -> A");
    auto cfg = patest::toy_config();
    profile_by_id("C1").apply(cfg);
    auto ledger = prove("t", session, {}, AvailabilityFilter{}, {nullptr, nullptr, &empty}, cfg);
    EXPECT_EQ(ledger.outcome, Outcome::ExhaustedIterations);
    EXPECT_EQ(ledger.iterations, 1u);
    EXPECT_EQ(ledger.invocations(), 0u);
}

TEST(Hammer, RejectsScriptRunningPastItsGoal) {
    StubHammer h;
    auto a = Subgoal::make({}, "A -> A");
    h.add(a, "intros H. exact H. intros H. exact H.");
    ToyKernel session({a, Subgoal::make({}, "B -> B")});
    EXPECT_FALSE(h.try_prove(a, session, {}));
    EXPECT_EQ(session.remaining_count(), 2u);
    h.add(a, "intros H. exact H.");
    ASSERT_TRUE(h.try_prove(a, session, {}));
    EXPECT_EQ(session.remaining_count(), 1u);
}

TEST(Hammer, RejectsFailingScriptAndRestoresSession) {
    StubHammer h;
    auto a = Subgoal::make({}, "A -> B");
    h.add(a, "intros H. exact H.");
    ToyKernel session({a});
    EXPECT_FALSE(h.try_prove(a, session, {}));
    ASSERT_EQ(session.remaining_count(), 1u);
    EXPECT_EQ(*session.first_unproved(), a);
}

TEST(Hammer, CommandHammerReadsGoalFile) {
    CommandHammer h;
    HammerConfig cfg;
    cfg.command = "grep -q 'A -> B' {goal_file} && echo 'intros H H0. apply H. exact H0.'";
    cfg.timeout_seconds = 10;
    auto session = ToyKernel::for_formula("(A -> B) -> A -> B");
    auto goal = *session.first_unproved();
    auto steps = h.try_prove(goal, session, cfg);
    ASSERT_TRUE(steps);
    EXPECT_EQ(steps->size(), 3u);
    EXPECT_EQ(session.remaining_count(), 0u);
}

TEST(Hammer, CommandHammerTimesOut) {
    CommandHammer h;
    HammerConfig cfg;
    cfg.command = "sleep 30; echo 'auto.'";
    cfg.timeout_seconds = 1;
    auto session = ToyKernel::for_formula("A -> A");
    auto start = std::chrono::steady_clock::now();
    EXPECT_FALSE(h.try_prove(*session.first_unproved(), session, cfg));
    auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    EXPECT_GE(secs, 0.9);
    EXPECT_LE(secs, 2.5);
}

TEST(Hammer, MissingCommandIsTreatedAsFailure) {
    CommandHammer h;
    auto session = ToyKernel::for_formula("A -> A");
    std::vector<nlohmann::json> events;
    EventSink sink = [&](const nlohmann::json& e) { events.push_back(e); };
    EXPECT_FALSE(h.try_prove(*session.first_unproved(), session, {}, sink));
    ASSERT_FALSE(events.empty());
    EXPECT_EQ(events[0]["event"], "hammer-spawn-error");
}

// --- budget ---

TEST(Budget, NeverExceeded) {
    const std::vector<std::string> alphabet = {"intros H.", "split.", "left.", "right.", "destruct H.",
                                               "exact H.", "apply H.", "induction H.", "assert (A).", "auto."};
    const std::vector<std::string> formulas = {"A /\\ B -> B /\\ A", "A \\/ B -> B \\/ A", "A -> B",
                                               "(A -> B) -> A -> B", "A -> A /\\ A"};
    auto libs = toy_libs().view();
    std::mt19937_64 rng(2024);
    for (int run = 0; run < 200; ++run) {
        patest::ChaosChat chat(rng(), alphabet);
        patest::CountingEmbedder emb(64);
        auto cfg = patest::toy_config();
        cfg.iteration_limit = 25;
        cfg.llm_invocation_budget = 1 + rng() % 20;
        profile_by_id(standard_profiles()[1 + rng() % 4].id).apply(cfg);
        StubHammer hammer;
        const auto& formula = formulas[rng() % formulas.size()];
        auto session = ToyKernel::for_formula(formula);
        auto filter = AvailabilityFilter(available_before(*toy_libs().lemmas, 100));
        auto ledger = prove("t", session, libs, filter, {&chat, &emb, &hammer}, cfg);
        ASSERT_LE(chat.calls + emb.calls, *cfg.llm_invocation_budget) << "run " << run;
        ASSERT_EQ(ledger.invocations(), chat.calls + emb.calls);
        ASSERT_NE(ledger.outcome, Outcome::Error) << ledger.error;
        if (ledger.proved()) {
            SuiteTheorem t;
            t.id = "t";
            t.formula = formula;
            ASSERT_TRUE(script_replays(t, ledger)) << "run " << run;
        }
    }
}

TEST(Budget, TooSmallForPlanningStopsBeforeAnyCall) {
    patest::ChaosChat chat(1, {"auto."});
    patest::CountingEmbedder emb(64);
    auto cfg = patest::toy_config();
    cfg.llm_invocation_budget = 2;
    auto session = ToyKernel::for_formula("A -> A");
    auto ledger = prove("t", session, toy_libs().view(), AvailabilityFilter{}, {&chat, &emb, nullptr}, cfg);
    EXPECT_EQ(ledger.outcome, Outcome::ExhaustedBudget);
    EXPECT_EQ(ledger.iterations, 0u);
    EXPECT_EQ(chat.calls + emb.calls, 0u);
}

TEST(Budget, ReflectionRunsOutAndFailsOpen) {
    // generation then one reflection call fit; the second check does not
    ReplayScript s;
    s.entries = {{ChatTag::Generation, "", "<coq>intros H. destruct H.</coq>"},
                 {ChatTag::ReflectionProvability, "", "### Decision\nPROVABLE\n### Reason\nok\n"}};
    ReplayChat chat(s);
    auto cfg = patest::toy_config();
    cfg.retrieval = RetrievalMode::None;
    cfg.llm_invocation_budget = 2;
    auto session = ToyKernel::for_formula("A /\\ B -> B /\\ A");
    std::vector<nlohmann::json> events;
    EventSink sink = [&](const nlohmann::json& e) { events.push_back(e); };
    auto ledger = prove("t", session, {}, AvailabilityFilter{}, {&chat, nullptr, nullptr}, cfg, sink);
    EXPECT_EQ(ledger.outcome, Outcome::ExhaustedBudget);
    EXPECT_EQ(ledger.invocations(), 2u);
    EXPECT_EQ(ledger.proof_script, (std::vector<std::string>{"intros H.", "destruct H."}));
    bool skipped = false;
    for (const auto& e : events) skipped |= e["event"] == "reflection-skipped-budget";
    EXPECT_TRUE(skipped);
}

// --- end to end ---

TEST(Agent, RunningExampleProvedInTwoIterations) {
    auto suite = patest::toy_suite();
    const auto& t = suite.find("dl_align_app");
    ReplayChat chat(ReplayScript::load(t.replay));
    ReplayEmbedder emb(64);
    auto cfg = patest::toy_config();
    profile_by_id("C5").apply(cfg);
    auto session = open_session(t);
    std::vector<nlohmann::json> events;
    EventSink sink = [&](const nlohmann::json& e) { events.push_back(e); };
    auto libs = toy_libs().view();
    auto ledger = prove(t.id, *session, libs, filter_for(t, libs), {&chat, &emb, nullptr}, cfg, sink);
    ASSERT_TRUE(ledger.proved()) << ledger.error;
    EXPECT_EQ(ledger.iterations, 2u);
    EXPECT_EQ(ledger.failure_records, 1u);
    EXPECT_EQ(ledger.proof_script,
              (std::vector<std::string>{"intros l1.", "induction l1 as [| a l1' IHl1']; intros l2 pos; simpl.",
                                        "tauto.", "rewrite IHl1'.", "rewrite Z.add_assoc; tauto."}));
    EXPECT_TRUE(script_replays(t, ledger));

    std::vector<ChatRequest> gens;
    for (const auto& r : chat.requests())
        if (r.tag == ChatTag::Generation) gens.push_back(r);
    ASSERT_EQ(gens.size(), 2u);
    EXPECT_EQ(gens[0].user.find("Failure 1:"), std::string::npos);
    const auto& second = gens[1].user;
    EXPECT_NE(second.find("Failure 1:"), std::string::npos);
    EXPECT_NE(second.find("Tactics:\nintros l1 l2 pos. induction l1; simpl.\nReason:\n"), std::string::npos);
    EXPECT_NE(second.find("without appropriate generalization"), std::string::npos);
    EXPECT_NE(second.find("Suggested fix:\n"), std::string::npos);

    std::vector<std::string> failures;
    for (const auto& e : events)
        if (e["event"] == "validation") failures.push_back(e["failure"]);
    EXPECT_EQ(failures, (std::vector<std::string>{"reflection-misapplied", "none"}));
    EXPECT_EQ(ledger.chat_invocations["plan"], 2u);
    EXPECT_EQ(ledger.chat_invocations["generation"], 2u);
    EXPECT_EQ(ledger.embedding_invocations, 2u);
}

TEST(Agent, UnparseableResponseBecomesFailureRecord) {
    ReplayScript s;
    s.entries = {{ChatTag::Generation, "", "I am not sure."},
                 {ChatTag::Generation, "no parseable proof", "<coq>intros H. exact H.</coq>"},
                 {ChatTag::ReflectionProvability, "", "### Decision\nPROVABLE\n### Reason\nok\n"}};
    ReplayChat chat(s);
    auto cfg = patest::toy_config();
    cfg.retrieval = RetrievalMode::None;
    auto session = ToyKernel::for_formula("A -> A");
    auto ledger = prove("t", session, {}, AvailabilityFilter{}, {&chat, nullptr, nullptr}, cfg);
    ASSERT_TRUE(ledger.proved()) << ledger.error;
    EXPECT_EQ(ledger.failure_records, 1u);
    EXPECT_EQ(ledger.iterations, 2u);
}

TEST(Agent, PlanningWithoutEmbedderIsError) {
    patest::ChaosChat chat(3, {"auto."});
    auto cfg = patest::toy_config();
    auto session = ToyKernel::for_formula("A -> A");
    auto ledger = prove("t", session, toy_libs().view(), AvailabilityFilter{}, {&chat, nullptr, nullptr}, cfg);
    EXPECT_EQ(ledger.outcome, Outcome::Error);
    EXPECT_NE(ledger.error.find("embedding"), std::string::npos);
}

TEST(Agent, IterationLimit) {
    ReplayScript s;
    for (int i = 0; i < 3; ++i) s.entries.push_back({ChatTag::Generation, "", "<coq>intros H. exact H.</coq>"});
    ReplayChat chat(s);
    auto cfg = patest::toy_config();
    cfg.retrieval = RetrievalMode::None;
    cfg.reflection = false;
    auto session = ToyKernel::for_formula("A -> B");
    auto ledger = prove("t", session, {}, AvailabilityFilter{}, {&chat, nullptr, nullptr}, cfg);
    EXPECT_EQ(ledger.outcome, Outcome::ExhaustedIterations);
    EXPECT_EQ(ledger.iterations, 3u);
    EXPECT_EQ(ledger.failure_records, 3u);
    EXPECT_EQ(ledger.proof_script, (std::vector<std::string>{"intros H."}));
}

TEST(Agent, ConfigValidation) {
    AgentConfig cfg;
    cfg.iteration_limit = 0;
    EXPECT_THROW(cfg.validate(), Error);
    cfg.iteration_limit = 1;
    cfg.llm_invocation_budget = 0;
    EXPECT_THROW(cfg.validate(), Error);
}
