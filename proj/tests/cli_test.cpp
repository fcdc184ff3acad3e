// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <sys/wait.h>

using patest::TempDir;
namespace fs = std::filesystem;

namespace {

struct Run {
    int rc = -1;
    std::string out;
};

Run run(const std::string& args) {
    std::string cmd = std::string(PA_CLI) + " " + args + " 2>&1";
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    int status = pclose(p);
    r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

/// A private copy of the toy data so databases and results stay out of the tree.
class Workspace {
public:
    Workspace() { fs::copy(patest::toy(), dir_.path() / "toy", fs::copy_options::recursive); }
    std::string operator()(const std::string& rel) const { return (dir_.path() / "toy" / rel).string(); }
    std::string common() const { return "-q --config " + (*this)("config.json"); }

    void build_dbs() const {
        for (auto kind : {"lemmas", "proofs"}) {
            auto r = run(common() + " --replay " + (*this)("db_replay.json") + " build-db --corpus " +
                         (*this)("corpus.jsonl") + " --kind " + kind + " --out " + (*this)(std::string("db/") + kind));
            ASSERT_EQ(r.rc, 0) << r.out;
        }
    }

private:
    TempDir dir_;
};

} // namespace

TEST(Cli, BuildDbThenRerunAddsNothing) {
    Workspace ws;
    auto args = ws.common() + " --replay " + ws("db_replay.json") + " build-db --corpus " + ws("corpus.jsonl") +
                " --kind lemmas --out " + ws("db/lemmas");
    auto first = run(args);
    ASSERT_EQ(first.rc, 0) << first.out;
    EXPECT_NE(first.out.find("8 new entries"), std::string::npos) << first.out;
    auto again = run(args);
    EXPECT_EQ(again.rc, 0);
    EXPECT_NE(again.out.find("0 new entries, 8 unchanged"), std::string::npos) << again.out;
}

TEST(Cli, CorruptCorpusLineIsReported) {
    Workspace ws;
    {
        std::ofstream out(ws("corpus.jsonl"), std::ios::app);
        out << "{\"schema_version\": 1, \"name\": \n";
    }
    auto r = run(ws.common() + " --offline build-db --corpus " + ws("corpus.jsonl") + " --out " + ws("db/lemmas"));
    EXPECT_EQ(r.rc, 2);
    EXPECT_NE(r.out.find("corpus.jsonl:9:"), std::string::npos) << r.out;
}

TEST(Cli, ProveWritesReplayableScript) {
    Workspace ws;
    ws.build_dbs();
    auto script = ws("dl.script");
    auto r = run(ws.common() + " prove --suite " + ws("suite.json") + " --theorem dl_align_app --out " + script +
                 " --trace " + ws("trace.jsonl"));
    ASSERT_EQ(r.rc, 0) << r.out;
    EXPECT_NE(r.out.find("outcome:     proved"), std::string::npos);
    EXPECT_NE(r.out.find("iterations:  2"), std::string::npos);
    EXPECT_NE(patest::slurp(ws("trace.jsonl")).find("reflection-misapplied"), std::string::npos);
    auto check = run("check --suite " + ws("suite.json") + " --theorem dl_align_app --script " + script);
    EXPECT_EQ(check.rc, 0) << check.out;
    auto wrong = run("check --suite " + ws("suite.json") + " --theorem and_swap --script " + script);
    EXPECT_EQ(wrong.rc, 1);
}

TEST(Cli, ExhaustedBudgetExitsOne) {
    Workspace ws;
    ws.build_dbs();
    auto r = run(ws.common() + " --budget 2 prove --suite " + ws("suite.json") + " --theorem imp_unprovable --out " +
                 ws("x.script"));
    EXPECT_EQ(r.rc, 1) << r.out;
    EXPECT_NE(r.out.find("exhausted-budget"), std::string::npos);
}

TEST(Cli, MissingDatabasePointsToBuildDb) {
    Workspace ws;
    auto r = run(ws.common() + " prove --suite " + ws("suite.json") + " --theorem and_swap");
    EXPECT_EQ(r.rc, 2);
    EXPECT_NE(r.out.find("build-db"), std::string::npos) << r.out;
    auto c1 = run(ws.common() + " --profile C1 prove --suite " + ws("suite.json") + " --theorem modus_ponens --out " +
                  ws("mp.script"));
    EXPECT_EQ(c1.rc, 0) << c1.out;
}

TEST(Cli, SuiteReportsImprovement) {
    Workspace ws;
    ws.build_dbs();
    auto out = ws("results");
    auto r = run(ws.common() + " suite --suite " + ws("suite.json") + " --profiles C1,C5 --out " + out);
    ASSERT_EQ(r.rc, 0) << r.out;
    EXPECT_NE(r.out.find("Improvement"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("300.00%"), std::string::npos) << r.out;
    auto report = nlohmann::json::parse(patest::slurp(out + "/report.json"));
    EXPECT_EQ(report["best"], "C5");
    EXPECT_TRUE(fs::exists(out + "/results-C5.jsonl"));
    EXPECT_TRUE(fs::exists(out + "/events-C5/dl_align_app.jsonl"));

    auto stored = run("report --results C1=" + out + "/results-C1.jsonl --results C5=" + out + "/results-C5.jsonl");
    EXPECT_EQ(stored.rc, 0);
    EXPECT_NE(stored.out.find("300.00%"), std::string::npos) << stored.out;
}

TEST(Cli, ReportFromCounts) {
    auto r = run("report --count C1=55/200 --count C2=118/200 --count C3=128/200 --count C4=130/200 --count "
                 "C5=138/200");
    ASSERT_EQ(r.rc, 0) << r.out;
    for (auto v : {"150.91%", "16.95%", "7.81%", "6.15%"}) EXPECT_NE(r.out.find(v), std::string::npos) << v;
    EXPECT_EQ(run("report --count C1=5").rc, 2);
}

TEST(Cli, RejectsApiKeyInConfigAndUnknownKeys) {
    TempDir dir;
    std::ofstream(dir / "a.json") << R"({"provider": {"api_key": "sk-secret"}})";
    std::ofstream(dir / "b.json") << R"({"iteratons": 3})";
    auto a = run("--config " + (dir / "a.json").string() + " --profile C1 prove --suite x --theorem y");
    EXPECT_EQ(a.rc, 2);
    EXPECT_EQ(a.out.find("sk-secret"), std::string::npos);
    auto b = run("--config " + (dir / "b.json").string() + " prove --suite x --theorem y");
    EXPECT_EQ(b.rc, 2);
    EXPECT_NE(b.out.find("iteratons"), std::string::npos);
}

TEST(Cli, UsageErrorExitsTwo) {
    EXPECT_EQ(run("").rc, 2);
    EXPECT_EQ(run("prove").rc, 2);
    EXPECT_EQ(run("--help").rc, 0);
}
