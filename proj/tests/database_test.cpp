// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"
#include "oracles/cosine_ref.hpp"

#include <gtest/gtest.h>

using namespace proofagent;
using patest::TempDir;

namespace {

CorpusRecord record(std::string name, std::string statement, std::optional<std::string> proof = {}, long pos = 0) {
    CorpusRecord r;
    r.name = std::move(name);
    r.statement = std::move(statement);
    r.proof = std::move(proof);
    r.available_after = pos;
    return r;
}

LemmaEntry lemma(std::string name, Vector v, long pos = 0) {
    LemmaEntry e;
    e.name = std::move(name);
    e.statement = e.name + " statement";
    e.embedding = std::move(v);
    e.provenance.position = pos;
    return e;
}

ProofEntry proof(std::string name, Vector v, long pos = 0) {
    ProofEntry e;
    e.theorem_name = std::move(name);
    e.goal = Subgoal::make({}, e.theorem_name);
    e.proof_text = "auto.";
    e.plan = ProofPlan{{"step"}};
    e.plan_embedding = std::move(v);
    e.provenance.position = pos;
    return e;
}

Vector random_vector(std::mt19937_64& rng, std::size_t dim) {
    std::normal_distribution<double> nd;
    Vector v(dim);
    for (auto& x : v) x = nd(rng);
    return v;
}

std::vector<std::string> names_of(const std::vector<LemmaEntry>& es) {
    std::vector<std::string> out;
    for (const auto& e : es) out.push_back(e.name);
    return out;
}

std::vector<std::string> names_of(const std::vector<ProofEntry>& es) {
    std::vector<std::string> out;
    for (const auto& e : es) out.push_back(e.theorem_name);
    return out;
}

/// Fails with a transient error on the first attempt of every request.
class FlakyChat final : public ChatModel {
public:
    ChatResponse complete(const ChatRequest& r) override {
        std::lock_guard lock(mu_);
        if (seen_.insert(r.user).second) throw ProviderError("503", true);
        return {"A description.", 1, 1};
    }
    std::string model_id() const override { return "flaky"; }

private:
    std::mutex mu_;
    std::set<std::string> seen_;
};

class DownChat final : public ChatModel {
public:
    ChatResponse complete(const ChatRequest&) override { throw ProviderError("429", true); }
    std::string model_id() const override { return "down"; }
};

class FatalChat final : public ChatModel {
public:
    ChatResponse complete(const ChatRequest&) override { throw ProviderError("401 unauthorized", false); }
    std::string model_id() const override { return "fatal"; }
};

} // namespace

TEST(Corpus, LoadsToyCorpus) {
    auto c = load_corpus(patest::toy() / "corpus.jsonl");
    ASSERT_EQ(c.size(), 8u);
    EXPECT_EQ(c[0].name, "and_comm");
    EXPECT_FALSE(c[4].proof);
}

TEST(Corpus, CorruptLineNamesLineNumber) {
    TempDir dir;
    std::ofstream(dir / "c.jsonl") << R"({"schema_version":1,"name":"a","statement":"A"})" << "\n\n"
                                   << "{not json\n";
    try {
        load_corpus(dir / "c.jsonl");
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("c.jsonl:3:"), std::string::npos) << e.what();
    }
}

TEST(LemmaDb, BuildsAndResumesWithoutCalls) {
    TempDir dir;
    auto libs = patest::build_toy_libraries(dir.path());
    EXPECT_EQ(libs.lemmas->size(), 8u);
    EXPECT_EQ(libs.proofs->size(), 7u);

    auto corpus = load_corpus(patest::toy() / "corpus.jsonl");
    ReplayChat chat(ReplayScript{});
    patest::CountingEmbedder emb(64);
    auto db = LemmaDb::open(dir / "lemmas");
    auto rep = build_lemma_db(corpus, db, chat, emb);
    EXPECT_EQ(rep.added, 0u);
    EXPECT_EQ(rep.skipped, 8u);
    EXPECT_TRUE(chat.requests().empty());
    EXPECT_EQ(emb.calls, 0u);
    auto pdb = ProofDb::open(dir / "proofs");
    EXPECT_EQ(build_proof_db(corpus, pdb, chat, emb).added, 0u);
    EXPECT_TRUE(chat.requests().empty());
}

TEST(LemmaDb, EmptyCorpusEmptyDatabase) {
    TempDir dir;
    auto db = LemmaDb::open(dir / "l");
    ReplayChat chat(ReplayScript{});
    ReplayEmbedder emb(8);
    auto rep = build_lemma_db({}, db, chat, emb);
    EXPECT_EQ(rep.added, 0u);
    EXPECT_EQ(db.size(), 0u);
}

TEST(LemmaDb, DescriptionFromProvider) {
    TempDir dir;
    auto db = LemmaDb::open(dir / "l");
    ReplayScript s;
    s.entries = {{ChatTag::Description, "x * (y * z)",
                  "The lemma states that the order of multiplication can be rearranged: x * (y * z) equals "
                  "y * (x * z). It is used to isolate a factor."}};
    ReplayChat chat(s);
    ReplayEmbedder emb(8);
    build_lemma_db({record("mulRCA", "forall x y z : R, x * (y * z) == y * (x * z)")}, db, chat, emb);
    ASSERT_EQ(db.size(), 1u);
    EXPECT_NE(db.current()[0]->description.find("multiplication can be rearranged"), std::string::npos);
    EXPECT_EQ(chat.requests()[0].tag, ChatTag::Description);
}

TEST(LemmaDb, PromptVersionIsPartOfKey) {
    auto r = record("a", "A");
    EXPECT_NE(lemma_key(r), text::content_hash({"lemma", r.name, r.statement, "0"}));
    EXPECT_EQ(lemma_key(r), text::content_hash({"lemma", r.name, r.statement, prompts::kVersion}));
}

TEST(LemmaDb, ReopenKeepsEntriesAndDropsTornTail) {
    TempDir dir;
    {
        auto db = LemmaDb::open(dir / "l");
        db.insert(lemma("a", {1, 0}));
        db.insert(lemma("b", {0, 1}));
    }
    std::ofstream(dir / "l" / "records.jsonl", std::ios::app) << "{\"name\": \"torn";
    auto db = LemmaDb::open(dir / "l");
    EXPECT_EQ(db.size(), 2u);
    EXPECT_EQ(db.dimension(), 2u);
    db.insert(lemma("c", {1, 1}));
    EXPECT_EQ(LemmaDb::open(dir / "l").size(), 3u);
}

TEST(LemmaDb, DimensionMismatch) {
    TempDir dir;
    auto db = LemmaDb::open(dir / "l");
    db.insert(lemma("a", {1, 0}));
    EXPECT_THROW(db.insert(lemma("b", {1, 0, 0})), DimensionMismatch);
}

TEST(LemmaDb, TransientErrorsAreRetried) {
    TempDir dir;
    auto db = LemmaDb::open(dir / "l");
    FlakyChat chat;
    ReplayEmbedder emb(8);
    auto rep = build_lemma_db({record("a", "A"), record("b", "B")}, db, chat, emb);
    EXPECT_EQ(rep.added, 2u);
    EXPECT_EQ(rep.failed, 0u);
}

TEST(LemmaDb, PersistentTransientErrorsCountAsFailed) {
    TempDir dir;
    auto db = LemmaDb::open(dir / "l");
    DownChat chat;
    ReplayEmbedder emb(8);
    BuildOptions opts;
    opts.max_retries = 1;
    auto rep = build_lemma_db({record("a", "A")}, db, chat, emb, opts);
    EXPECT_EQ(rep.failed, 1u);
    EXPECT_EQ(db.size(), 0u);
}

TEST(LemmaDb, FatalErrorPropagates) {
    TempDir dir;
    auto db = LemmaDb::open(dir / "l");
    FatalChat chat;
    ReplayEmbedder emb(8);
    EXPECT_THROW(build_lemma_db({record("a", "A")}, db, chat, emb), ProviderError);
}

TEST(LemmaDb, ParallelBuildIsByteIdentical) {
    TempDir a, b;
    patest::build_toy_libraries(a.path());
    patest::build_toy_libraries(b.path());
    for (auto kind : {"lemmas", "proofs"})
        for (auto file : {"records.jsonl", "vectors.bin", "manifest.json"})
            EXPECT_EQ(patest::slurp(a / kind / file), patest::slurp(b / kind / file)) << kind << "/" << file;
}

TEST(ProofDb, PlanFromProvider) {
    TempDir dir;
    auto db = ProofDb::open(dir / "p");
    ReplayScript s;
    s.entries = {{ChatTag::Plan, "rewrite mulRCA",
                  "<step> Show that the second argument is exactly m. </step>\n"
                  "<step> Use a multiplication-rearrangement lemma (mulRCA) to isolate m. </step>\n"
                  "<step> Apply the range lemma. </step>"}};
    ReplayChat chat(s);
    ReplayEmbedder emb(8);
    build_proof_db({record("approx_scale", "range1 m (exp2R s * (m / exp2R s))",
                           "assert (Em: exp2R s * (m / exp2R s) == m). { rewrite mulRCA. ... }")},
                   db, chat, emb);
    ASSERT_EQ(db.size(), 1u);
    const auto& plan = db.current()[0]->plan;
    ASSERT_EQ(plan.steps.size(), 3u);
    EXPECT_NE(plan.steps[1].find("multiplication-rearrangement"), std::string::npos);
}

TEST(ProofDb, SkipsRecordsWithoutProofAndFallsBack) {
    TempDir dir;
    auto db = ProofDb::open(dir / "p");
    ReplayScript s;
    s.entries = {{ChatTag::Plan, "", "no tags"}, {ChatTag::Plan, "", "none again"}};
    ReplayChat chat(s);
    ReplayEmbedder emb(8);
    build_proof_db({record("a", "A -> A", "intros H. exact H."), record("b", "B")}, db, chat, emb);
    ASSERT_EQ(db.size(), 1u);
    EXPECT_EQ(db.current()[0]->plan.steps, (std::vector<std::string>{"A -> A"}));
}

// --- vector retrieval ---

TEST(RetrieveLemmas, PlanStepFindsMulRCA) {
    TempDir dir;
    auto db = LemmaDb::open(dir / "l");
    db.insert(lemma("mulRCA", {1, 0, 0, 0.1}));
    db.insert(lemma("exp2R_pos", {0, 1, 0, 0.1}));
    db.insert(lemma("exp2R_add", {0, 0.9, 0.3, 0.1}));
    db.insert(lemma("exp2R_inv", {0, 0.8, 0, 0.5}));
    ReplayEmbedder emb(4);
    const std::string step = "Use a multiplication-rearrangement lemma to isolate m.";
    emb.pin(step, {0.95, 0.1, 0, 0.1});
    emb.pin("Show that the second argument is exactly m.", {0, 0.2, 1, 0});
    AvailabilityFilter all({"mulRCA", "exp2R_pos", "exp2R_add", "exp2R_inv"});
    auto one = retrieve_lemmas(ProofPlan{{step}}, db, all, emb, 1);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0].name, "mulRCA");
    auto two = retrieve_lemmas(ProofPlan{{"Show that the second argument is exactly m.", step}}, db, all, emb, 2);
    EXPECT_EQ(names_of(two), (std::vector<std::string>{"exp2R_add", "mulRCA"}));
}

TEST(RetrieveLemmas, FilterExcludingEverythingIsEmpty) {
    TempDir dir;
    auto db = LemmaDb::open(dir / "l");
    db.insert(lemma("a", {1, 0}));
    ReplayEmbedder emb(2);
    EXPECT_TRUE(retrieve_lemmas(ProofPlan{{"x"}}, db, AvailabilityFilter{}, emb, 8).empty());
    EXPECT_EQ(emb.calls(), 0u);
}

TEST(RetrieveLemmas, OneStepTopThreeIsExhaustiveScan) {
    TempDir dir;
    auto db = LemmaDb::open(dir / "l");
    std::vector<std::pair<std::string, Vector>> fixture;
    std::set<std::string> names;
    for (int i = 0; i < 10; ++i) {
        Vector v = {std::cos(i * 0.6), std::sin(i * 0.6), 0.1 * i};
        fixture.emplace_back("L" + std::to_string(i), v);
        names.insert("L" + std::to_string(i));
        db.insert(lemma("L" + std::to_string(i), v));
    }
    ReplayEmbedder emb(3);
    Vector q = {0.3, 0.9, 0.2};
    emb.pin("step", q);
    auto got = retrieve_lemmas(ProofPlan{{"step"}}, db, AvailabilityFilter(names), emb, 3);
    EXPECT_EQ(names_of(got), oracle::top_k(q, fixture, 3));
}

TEST(RetrieveProofs, IdenticalPlanRanksFirst) {
    TempDir dir;
    auto db = ProofDb::open(dir / "p");
    ReplayEmbedder emb(16);
    ProofPlan plan{{"Induct on l1.", "Rewrite."}};
    db.insert(proof("match", ReplayEmbedder::hashed(plan_text(plan), 16)));
    db.insert(proof("other", ReplayEmbedder::hashed("something else", 16)));
    auto got = retrieve_proofs(plan, db, emb, 2);
    ASSERT_EQ(got.size(), 2u);
    EXPECT_EQ(got[0].theorem_name, "match");
    EXPECT_NEAR(cosine(got[0].plan_embedding, emb.embed({plan_text(plan)})[0]), 1.0, 1e-12);
}

TEST(RetrieveProofs, EmptyDatabase) {
    TempDir dir;
    auto db = ProofDb::open(dir / "p");
    ReplayEmbedder emb(4);
    EXPECT_TRUE(retrieve_proofs(ProofPlan{{"x"}}, db, emb, 8).empty());
}

TEST(RetrieveProofs, TwentyEntriesTopEight) {
    TempDir dir;
    auto db = ProofDb::open(dir / "p");
    std::mt19937_64 rng(23);
    std::vector<std::pair<std::string, Vector>> fixture;
    for (int i = 0; i < 20; ++i) {
        auto v = random_vector(rng, 12);
        fixture.emplace_back("P" + std::to_string(i), v);
        db.insert(proof("P" + std::to_string(i), v));
    }
    auto q = random_vector(rng, 12);
    EXPECT_EQ(names_of(retrieve_proofs_by_vector(q, db, 8)), oracle::top_k(q, fixture, 8));
}

TEST(Retrieval, RandomizedAgainstExhaustiveScan) {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 100; ++trial) {
        TempDir dir;
        auto ldb = LemmaDb::open(dir / "l");
        auto pdb = ProofDb::open(dir / "p");
        std::size_t dim = 2 + rng() % 30, n = 1 + rng() % 40;
        std::vector<std::pair<std::string, Vector>> entries;
        std::set<std::string> allowed;
        for (std::size_t i = 0; i < n; ++i) {
            auto name = "E" + std::to_string(i);
            auto v = random_vector(rng, dim);
            ldb.insert(lemma(name, v));
            pdb.insert(proof(name, v));
            if (rng() % 4) {
                allowed.insert(name);
                entries.emplace_back(name, v);
            }
        }
        AvailabilityFilter filter(allowed);
        std::size_t steps = 1 + rng() % 4, k = 1 + rng() % 10;
        std::vector<Vector> qs;
        std::vector<std::vector<std::string>> per_step;
        for (std::size_t s = 0; s < steps; ++s) {
            qs.push_back(random_vector(rng, dim));
            per_step.push_back(oracle::top_k(qs.back(), entries, entries.size()));
        }
        auto lemmas = retrieve_lemmas_by_vectors(qs, ldb, filter, k);
        ASSERT_EQ(names_of(lemmas), oracle::merge(per_step, k)) << "trial " << trial;
        ASSERT_EQ(names_of(retrieve_proofs_by_vector(qs[0], pdb, k, &filter)), oracle::top_k(qs[0], entries, k));
    }
}

TEST(Retrieval, NeverLeaksUnavailableNames) {
    std::mt19937_64 rng(1234);
    TempDir dir;
    auto ldb = LemmaDb::open(dir / "l");
    auto pdb = ProofDb::open(dir / "p");
    for (int i = 0; i < 30; ++i) {
        auto v = random_vector(rng, 8);
        ldb.insert(lemma("N" + std::to_string(i), v, i));
        pdb.insert(proof("N" + std::to_string(i), v, i));
    }
    ReplayEmbedder emb(8);
    Subgoal g = Subgoal::make({}, "N1 statement N2 statement");
    std::size_t violations = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        auto pos = static_cast<long>(rng() % 32);
        std::set<std::string> allowed = available_before(ldb, pos);
        if (rng() % 2)
            for (auto it = allowed.begin(); it != allowed.end();) it = rng() % 3 ? std::next(it) : allowed.erase(it);
        AvailabilityFilter f(allowed);
        std::size_t k = 1 + rng() % 12;
        auto check = [&](const std::string& name) {
            if (!allowed.count(name)) ++violations;
        };
        ProofPlan plan{{"s" + std::to_string(trial), "t"}};
        for (const auto& e : retrieve_lemmas(plan, ldb, f, emb, k)) check(e.name);
        for (const auto& e : retrieve_proofs(plan, pdb, emb, k, &f)) check(e.theorem_name);
        for (const auto& e : bm25_lemmas(g, ldb, f, k)) check(e.name);
        for (const auto& e : bm25_proofs(g, pdb, &f, k)) check(e.theorem_name);
    }
    EXPECT_EQ(violations, 0u);
}

TEST(Retrieval, AvailableBeforeIsStrict) {
    TempDir dir;
    auto db = LemmaDb::open(dir / "l");
    db.insert(lemma("early", {1, 0}, 3));
    db.insert(lemma("same", {0, 1}, 5));
    EXPECT_EQ(available_before(db, 5), (std::set<std::string>{"early"}));
}
