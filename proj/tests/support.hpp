// SPDX-License-Identifier: Apache-2.0
#pragma once
// Shared helpers for the unit and acceptance tests.

#include "proofagent/agent.hpp"
#include "proofagent/harness.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

namespace patest {

namespace fs = std::filesystem;
namespace pa = proofagent;

inline fs::path fixtures() { return PA_FIXTURES; }
inline fs::path toy() { return fs::path(PA_DATA) / "toy"; }

inline std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path_ = fs::temp_directory_path() /
                ("pa-test-" + std::to_string(getpid()) + "-" + std::to_string(counter++) + "-" + std::to_string(rd()));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& s) const { return path_ / s; }

private:
    fs::path path_;
};

/// Lemma and proof databases built from the toy corpus with replayed
/// descriptions and plans, embedded with hashed vectors of dimension 64.
struct ToyLibraries {
    std::optional<pa::LemmaDb> lemmas;
    std::optional<pa::ProofDb> proofs;
    pa::Libraries view() const { return {&*lemmas, &*proofs}; }
};

inline ToyLibraries build_toy_libraries(const fs::path& dir) {
    auto corpus = pa::load_corpus(toy() / "corpus.jsonl");
    auto script = pa::ReplayScript::load(toy() / "db_replay.json");
    pa::ReplayChat chat(script);
    pa::ReplayEmbedder emb(64);
    ToyLibraries libs;
    libs.lemmas = pa::LemmaDb::open(dir / "lemmas");
    libs.proofs = pa::ProofDb::open(dir / "proofs");
    pa::build_lemma_db(corpus, *libs.lemmas, chat, emb);
    pa::build_proof_db(corpus, *libs.proofs, chat, emb);
    return libs;
}

inline pa::Suite toy_suite() { return pa::Suite::load(toy() / "suite.json"); }

inline pa::AgentConfig toy_config() {
    pa::AgentConfig cfg;
    cfg.iteration_limit = 3;
    cfg.llm_invocation_budget = 40;
    cfg.k_lemmas = 4;
    cfg.k_proofs = 2;
    return cfg;
}

/// Chat model whose answers are drawn at random per tag: malformed and
/// well-formed plans, tactic lists from a fixed alphabet, and reflection
/// answers that may be unparseable. Counts every call it serves.
class ChaosChat final : public pa::ChatModel {
public:
    ChaosChat(std::uint64_t seed, std::vector<std::string> alphabet) : rng_(seed), alphabet_(std::move(alphabet)) {}

    pa::ChatResponse complete(const pa::ChatRequest& r) override {
        ++calls;
        pa::ChatResponse out;
        auto pick = [&](int n) { return static_cast<int>(rng_() % static_cast<unsigned>(n)); };
        switch (r.tag) {
        case pa::ChatTag::Plan:
            out.text = pick(2) ? "<step> go </step>\n<step> finish </step>" : "no steps here";
            break;
        case pa::ChatTag::Generation: {
            if (pick(5) == 0) {
                out.text = "I cannot help.";
                break;
            }
            std::string body;
            int n = 1 + pick(4);
            for (int i = 0; i < n; ++i) body += alphabet_[static_cast<std::size_t>(pick(static_cast<int>(alphabet_.size())))] + " ";
            out.text = "<coq>" + body + "</coq>";
            break;
        }
        case pa::ChatTag::ReflectionProvability:
        case pa::ChatTag::ReflectionInduction: {
            bool prov = r.tag == pa::ChatTag::ReflectionProvability;
            static const char* good[] = {"PROVABLE", "UNPROVABLE", "UNCERTAIN"};
            static const char* ind[] = {"REASONABLE", "UNREASONABLE", "UNCERTAIN"};
            int k = pick(4);
            if (k == 3) out.text = "???";
            else out.text = std::string("### Decision\n") + (prov ? good[k] : ind[k]) + "\n### Reason\nr\n";
            break;
        }
        default:
            out.text = "x";
        }
        out.prompt_tokens = 10;
        out.completion_tokens = 5;
        return out;
    }
    std::string model_id() const override { return "chaos"; }

    std::size_t calls = 0;

private:
    std::mt19937_64 rng_;
    std::vector<std::string> alphabet_;
};

/// Embedder wrapper counting calls.
class CountingEmbedder final : public pa::Embedder {
public:
    explicit CountingEmbedder(std::size_t dim) : inner_(dim) {}
    std::vector<pa::Vector> embed(const std::vector<std::string>& texts) override {
        ++calls;
        return inner_.embed(texts);
    }
    std::string model_id() const override { return inner_.model_id(); }
    std::size_t calls = 0;

private:
    pa::ReplayEmbedder inner_;
};

} // namespace patest
