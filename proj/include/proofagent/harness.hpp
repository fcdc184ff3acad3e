// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "proofagent/agent.hpp"
#include "proofagent/replay.hpp"
#include "proofagent/scripted_kernel.hpp"
#include "proofagent/toy_kernel.hpp"

#include <json.hpp>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

namespace proofagent {

// ---------------------------------------------------------------------------
// Profiles

struct Profile {
    std::string id;
    std::string name;
    bool hammer = true;
    bool llm_generation = true;
    bool reflection = true;
    RetrievalMode retrieval = RetrievalMode::Planning;

    void apply(AgentConfig& cfg) const {
        cfg.hammer.enabled = hammer;
        cfg.llm_generation = llm_generation;
        cfg.reflection = reflection;
        cfg.retrieval = retrieval;
    }

    nlohmann::json to_json() const {
        return {{"id", id},
                {"name", name},
                {"hammer", hammer},
                {"llm_generation", llm_generation},
                {"reflection", reflection},
                {"retrieval", to_string(retrieval)}};
    }
};

inline const std::vector<Profile>& standard_profiles() {
    static const std::vector<Profile> all = {
        {"C1", "hammer-only", true, false, false, RetrievalMode::None},
        {"C2", "bm25", true, true, false, RetrievalMode::Bm25},
        {"C3", "planning", true, true, false, RetrievalMode::Planning},
        {"C4", "refl+bm25", true, true, true, RetrievalMode::Bm25},
        {"C5", "full", true, true, true, RetrievalMode::Planning},
    };
    return all;
}

inline const Profile& profile_by_id(std::string_view id) {
    for (const auto& p : standard_profiles())
        if (p.id == id || p.name == id) return p;
    throw Error("unknown profile '" + std::string(id) + "' (expected C1..C5)");
}

// ---------------------------------------------------------------------------
// Suite files

/// One benchmark theorem. Exactly one of `kernel` (scripted fixture) and
/// `formula` (toy propositional kernel) is set.
struct SuiteTheorem {
    std::string id;
    std::filesystem::path kernel;
    std::string formula;
    std::filesystem::path replay;
    std::optional<long> position;
};

/// Suite file (JSON, schema_version 1). Paths are relative to the file.
///
///     {
///       "schema_version": 1,
///       "name": "toy",
///       "lemma_db": "db/lemmas",          // optional
///       "proof_db": "db/proofs",          // optional
///       "hammer_stub": "hammer.json",     // optional
///       "theorems": [
///         {"id": "t1", "kernel": "kernels/t1.json", "replay": "replay/t1.json", "position": 4},
///         {"id": "t2", "formula": "A -> A", "replay": "replay/t2.json"}
///       ]
///     }
struct Suite {
    static constexpr int kSchemaVersion = 1;

    std::string name;
    std::filesystem::path lemma_db;
    std::filesystem::path proof_db;
    std::filesystem::path hammer_stub;
    std::vector<SuiteTheorem> theorems;

    static Suite from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
        if (j.value("schema_version", 0) != kSchemaVersion) throw FormatError("unsupported suite schema_version");
        auto rel = [&](const std::string& key) -> std::filesystem::path {
            if (!j.contains(key) || j.at(key).get<std::string>().empty()) return {};
            return base / j.at(key).get<std::string>();
        };
        Suite s;
        s.name = j.value("name", std::string{});
        s.lemma_db = rel("lemma_db");
        s.proof_db = rel("proof_db");
        s.hammer_stub = rel("hammer_stub");
        std::set<std::string> ids;
        for (const auto& t : j.at("theorems")) {
            SuiteTheorem th;
            th.id = t.at("id").get<std::string>();
            if (!ids.insert(th.id).second) throw FormatError("duplicate theorem id '" + th.id + "' in suite");
            if (t.contains("kernel")) th.kernel = base / t.at("kernel").get<std::string>();
            th.formula = t.value("formula", std::string{});
            if (th.kernel.empty() == th.formula.empty())
                throw FormatError("theorem '" + th.id + "' needs exactly one of 'kernel' and 'formula'");
            if (t.contains("replay")) th.replay = base / t.at("replay").get<std::string>();
            if (t.contains("position")) th.position = t.at("position").get<long>();
            s.theorems.push_back(std::move(th));
        }
        if (s.theorems.empty()) throw FormatError("suite has no theorems");
        return s;
    }

    static Suite load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw FormatError("cannot open suite " + path.string());
        try {
            return from_json(nlohmann::json::parse(in), path.parent_path());
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ": " + e.what());
        }
    }

    const SuiteTheorem& find(const std::string& id) const {
        for (const auto& t : theorems)
            if (t.id == id) return t;
        throw Error("theorem '" + id + "' is not in the suite");
    }
};

/// A fresh prover session for a suite theorem.
inline std::unique_ptr<ProverSession> open_session(const SuiteTheorem& t) {
    if (!t.kernel.empty()) {
        auto spec = std::make_shared<const ScriptedKernelSpec>(ScriptedKernelSpec::load(t.kernel));
        return std::make_unique<ScriptedKernel>(spec);
    }
    return std::make_unique<ToyKernel>(ToyKernel::for_formula(t.formula));
}

/// Names visible to a theorem: entries declared before its position, or
/// everything when it has none.
inline AvailabilityFilter filter_for(const SuiteTheorem& t, const Libraries& libs) {
    std::set<std::string> names;
    long pos = t.position.value_or(std::numeric_limits<long>::max());
    if (libs.lemmas) names.merge(available_before(*libs.lemmas, pos));
    if (libs.proofs) names.merge(available_before(*libs.proofs, pos));
    return AvailabilityFilter(std::move(names));
}

// ---------------------------------------------------------------------------
// Running

struct TheoremProviders {
    std::shared_ptr<ChatModel> chat;
    std::shared_ptr<Embedder> embedder;
};

using ProviderFactory = std::function<TheoremProviders(const SuiteTheorem&)>;

/// Offline providers: the theorem's replay script and hashed embeddings of
/// dimension `dim`.
inline ProviderFactory replay_factory(std::size_t dim = 64) {
    return [dim](const SuiteTheorem& t) {
        TheoremProviders p;
        auto script = t.replay.empty() ? ReplayScript{} : ReplayScript::load(t.replay);
        p.chat = std::make_shared<ReplayChat>(std::move(script));
        p.embedder = std::make_shared<ReplayEmbedder>(dim);
        return p;
    };
}

/// Replays `ledger.proof_script` on a fresh session of `t`.
inline bool script_replays(const SuiteTheorem& t, const RunLedger& ledger) {
    auto session = open_session(t);
    std::vector<TacticStep> steps;
    for (const auto& s : ledger.proof_script) steps.push_back(TacticStep::make(s));
    return replay_script(*session, steps);
}

/// Proves one suite theorem. Infrastructure failures become an error ledger;
/// a proof whose script does not replay is downgraded to an error.
inline RunLedger run_theorem(const SuiteTheorem& t, const Libraries& libs, const ProviderFactory& factory,
                             Hammer* hammer, const AgentConfig& cfg, const EventSink& events = {}) {
    RunLedger ledger;
    try {
        auto session = open_session(t);
        // a hammer-only run never touches a model
        auto prov = cfg.llm_generation ? factory(t) : TheoremProviders{};
        ledger = prove(t.id, *session, libs, filter_for(t, libs), {prov.chat.get(), prov.embedder.get(), hammer},
                       cfg, events);
    } catch (const std::exception& e) {
        ledger.theorem_id = t.id;
        ledger.outcome = Outcome::Error;
        ledger.error = e.what();
        return ledger;
    }
    if (ledger.proved() && !script_replays(t, ledger)) {
        ledger.outcome = Outcome::Error;
        ledger.error = "proof script does not replay on a fresh session";
    }
    return ledger;
}

struct SuiteAggregate {
    std::size_t proved = 0;
    std::size_t total = 0;
    std::size_t errors = 0;
    double avg_tokens = 0.0;
};

struct SuiteResult {
    std::string profile_id;
    std::vector<RunLedger> ledgers;

    SuiteAggregate aggregate() const {
        SuiteAggregate a;
        a.total = ledgers.size();
        long tokens = 0;
        for (const auto& l : ledgers) {
            if (l.proved()) ++a.proved;
            if (l.outcome == Outcome::Error) ++a.errors;
            tokens += l.tokens();
        }
        a.avg_tokens = a.total ? static_cast<double>(tokens) / static_cast<double>(a.total) : 0.0;
        return a;
    }

    nlohmann::json summary_json() const {
        auto a = aggregate();
        return {{"profile", profile_id},
                {"proved", a.proved},
                {"total", a.total},
                {"errors", a.errors},
                {"avg_tokens", a.avg_tokens}};
    }
};

struct SuiteOptions {
    std::size_t parallelism = 0; // 0: hardware concurrency
    std::size_t max_parallelism = 64;
    /// JSON-lines results, one ledger per theorem in suite order. Existing
    /// entries are kept and their theorems skipped.
    std::filesystem::path results_path;
    /// Wall-clock seconds per theorem, kept apart from the ledgers.
    std::filesystem::path timings_path;
    /// When set, each theorem's event trace goes to <dir>/<id>.jsonl.
    std::filesystem::path events_dir;
    ProviderFactory providers;
    Hammer* hammer = nullptr;
    std::function<void(const RunLedger&)> on_result;
};

namespace detail {

inline std::map<std::string, RunLedger> load_results(const std::filesystem::path& path) {
    std::map<std::string, RunLedger> out;
    if (path.empty() || !std::filesystem::exists(path)) return out;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) break; // torn tail from an interrupted run
        auto l = RunLedger::from_json(j);
        out[l.theorem_id] = std::move(l);
    }
    return out;
}

inline void rewrite_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : lines) out << l << '\n';
}

} // namespace detail

/// Runs every suite theorem under `profile`. Ledgers are written in suite
/// order by a single writer as soon as the prefix before them is complete,
/// so an interrupted run resumes where the committed prefix ends.
inline SuiteResult run_suite(const Suite& suite, const Profile& profile, const Libraries& libs, AgentConfig cfg,
                             const SuiteOptions& opts) {
    profile.apply(cfg);
    cfg.validate();
    if (suite.theorems.empty()) throw Error("suite has no theorems");
    if (!opts.providers && cfg.llm_generation) throw Error("run_suite needs a provider factory");
    const std::size_t n = suite.theorems.size();

    auto previous = detail::load_results(opts.results_path);
    std::vector<std::optional<RunLedger>> slots(n);
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < n; ++i) {
        auto it = previous.find(suite.theorems[i].id);
        if (it != previous.end()) slots[i] = it->second;
        else todo.push_back(i);
    }

    std::mutex mu;
    std::size_t committed = 0;
    std::map<std::size_t, double> walls;
    auto append = [](const std::filesystem::path& path, const std::string& line) {
        if (path.empty()) return;
        std::ofstream out(path, std::ios::app);
        out << line << '\n';
    };
    // Rewrite the committed prefix once so a torn tail or stale lines vanish;
    // from then on every commit is a single appended line.
    {
        std::vector<std::string> lines;
        while (committed < n && slots[committed]) lines.push_back(slots[committed++]->to_json().dump());
        if (!opts.results_path.empty()) detail::rewrite_lines(opts.results_path, lines);
        if (!opts.timings_path.empty() && opts.timings_path.has_parent_path())
            std::filesystem::create_directories(opts.timings_path.parent_path());
    }
    auto commit_ready = [&] {
        while (committed < n && slots[committed]) {
            append(opts.results_path, slots[committed]->to_json().dump());
            if (auto w = walls.find(committed); w != walls.end())
                append(opts.timings_path,
                       nlohmann::json{{"theorem_id", suite.theorems[committed].id}, {"wall_seconds", w->second}}.dump());
            ++committed;
        }
    };

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        while (true) {
            auto k = next++;
            if (k >= todo.size()) return;
            auto i = todo[k];
            const auto& t = suite.theorems[i];
            EventSink sink;
            std::vector<nlohmann::json> trace;
            if (!opts.events_dir.empty()) sink = [&trace](const nlohmann::json& e) { trace.push_back(e); };
            auto ledger = run_theorem(t, libs, opts.providers ? opts.providers : replay_factory(), opts.hammer, cfg,
                                      sink);
            if (!opts.events_dir.empty()) {
                std::filesystem::create_directories(opts.events_dir);
                std::ofstream out(opts.events_dir / (t.id + ".jsonl"), std::ios::trunc);
                for (const auto& e : trace) out << e.dump() << '\n';
            }
            std::lock_guard lock(mu);
            walls[i] = ledger.wall_seconds;
            if (opts.on_result) opts.on_result(ledger);
            slots[i] = std::move(ledger);
            commit_ready();
        }
    };
    std::size_t threads = opts.parallelism ? opts.parallelism : std::max(1u, std::thread::hardware_concurrency());
    threads = std::max<std::size_t>(1, std::min({threads, opts.max_parallelism, std::max<std::size_t>(1, todo.size())}));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    SuiteResult result;
    result.profile_id = profile.id;
    for (auto& s : slots) result.ledgers.push_back(std::move(*s));
    return result;
}

inline SuiteResult load_suite_result(const std::filesystem::path& results_path, std::string profile_id) {
    SuiteResult r;
    r.profile_id = std::move(profile_id);
    if (!std::filesystem::exists(results_path)) throw FormatError("no results at " + results_path.string());
    std::ifstream in(results_path);
    std::string line;
    while (std::getline(in, line)) {
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) break;
        r.ledgers.push_back(RunLedger::from_json(j));
    }
    return r;
}

// ---------------------------------------------------------------------------
// Significance

enum class SignificanceMethod { ZTest, FisherExact };

inline std::string_view to_string(SignificanceMethod m) {
    return m == SignificanceMethod::ZTest ? "two-proportion z-test (pooled, two-sided)"
                                          : "Fisher exact test (two-sided)";
}

struct Significance {
    SignificanceMethod method = SignificanceMethod::ZTest;
    double statistic = 0.0; // z for the z-test, the observed table probability for Fisher
    double p_value = 1.0;
};

inline Significance two_proportion_z(std::size_t x1, std::size_t n1, std::size_t x2, std::size_t n2) {
    if (n1 == 0 || n2 == 0) throw DegenerateInput("significance needs non-empty totals");
    if (x1 > n1 || x2 > n2) throw DegenerateInput("proved count exceeds total");
    double p1 = static_cast<double>(x1) / static_cast<double>(n1);
    double p2 = static_cast<double>(x2) / static_cast<double>(n2);
    double pooled = static_cast<double>(x1 + x2) / static_cast<double>(n1 + n2);
    double se = std::sqrt(pooled * (1.0 - pooled) * (1.0 / static_cast<double>(n1) + 1.0 / static_cast<double>(n2)));
    Significance s;
    s.method = SignificanceMethod::ZTest;
    if (se == 0.0) return s;
    s.statistic = (p1 - p2) / se;
    s.p_value = std::erfc(std::fabs(s.statistic) / std::sqrt(2.0));
    return s;
}

/// Two-sided Fisher exact test on the 2x2 table [[x1, n1-x1], [x2, n2-x2]]:
/// the total probability of tables no more likely than the observed one.
inline Significance fisher_exact(std::size_t x1, std::size_t n1, std::size_t x2, std::size_t n2) {
    if (n1 == 0 || n2 == 0) throw DegenerateInput("significance needs non-empty totals");
    if (x1 > n1 || x2 > n2) throw DegenerateInput("proved count exceeds total");
    auto lf = [](double v) { return std::lgamma(v + 1.0); };
    const double N = static_cast<double>(n1 + n2);
    const double K = static_cast<double>(x1 + x2);
    auto logp = [&](double a) {
        double b = static_cast<double>(n1) - a, c = K - a, d = static_cast<double>(n2) - c;
        return lf(K) + lf(N - K) + lf(static_cast<double>(n1)) + lf(static_cast<double>(n2)) - lf(N) - lf(a) -
               lf(b) - lf(c) - lf(d);
    };
    const std::size_t lo = x1 + x2 > n2 ? x1 + x2 - n2 : 0;
    const std::size_t hi = std::min(n1, x1 + x2);
    const double observed = logp(static_cast<double>(x1));
    double p = 0.0;
    for (std::size_t a = lo; a <= hi; ++a) {
        double lp = logp(static_cast<double>(a));
        if (lp <= observed + 1e-7) p += std::exp(lp);
    }
    Significance s;
    s.method = SignificanceMethod::FisherExact;
    s.statistic = std::exp(observed);
    s.p_value = std::min(1.0, p);
    return s;
}

inline Significance significance(std::size_t x1, std::size_t n1, std::size_t x2, std::size_t n2,
                                 SignificanceMethod method = SignificanceMethod::ZTest) {
    return method == SignificanceMethod::ZTest ? two_proportion_z(x1, n1, x2, n2) : fisher_exact(x1, n1, x2, n2);
}

inline Significance significance(const SuiteResult& a, const SuiteResult& b,
                                 SignificanceMethod method = SignificanceMethod::ZTest) {
    auto x = a.aggregate(), y = b.aggregate();
    return significance(x.proved, x.total, y.proved, y.total, method);
}

// ---------------------------------------------------------------------------
// Reporting

struct ReportRow {
    std::string profile_id;
    std::size_t proved = 0;
    std::size_t total = 0;
    std::optional<double> avg_tokens;

    static ReportRow of(const SuiteResult& r) {
        auto a = r.aggregate();
        return {r.profile_id, a.proved, a.total, a.avg_tokens};
    }
};

/// (best - row) / row as a percentage; empty when the row proved nothing.
inline std::optional<double> relative_improvement(std::size_t best, std::size_t row) {
    if (row == 0) return std::nullopt;
    return (static_cast<double>(best) - static_cast<double>(row)) / static_cast<double>(row) * 100.0;
}

inline std::string fixed2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

struct Report {
    nlohmann::json json;
    std::string text;
};

/// Comparison table in the layout of an ablation study: one row per
/// profile, with the improvement of the best row over each other row and a
/// significance test of best vs row. A single row gets neither column.
inline Report report(const std::vector<ReportRow>& rows, SignificanceMethod method = SignificanceMethod::ZTest) {
    if (rows.empty()) throw Error("report needs at least one result");
    std::size_t best_i = 0;
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i].proved > rows[best_i].proved) best_i = i;
    const auto& best = rows[best_i];
    const bool compare = rows.size() > 1;

    Report out;
    out.json = {{"best", best.profile_id}, {"rows", nlohmann::json::array()}};
    if (compare) out.json["significance_method"] = to_string(method);

    std::ostringstream t;
    t << std::left << std::setw(8) << "Config" << std::setw(22) << "Modules" << std::setw(12) << "#Proved"
      << std::setw(12) << "Avg.Tokens";
    if (compare) t << std::setw(14) << "Improvement" << "p-value";
    t << '\n';

    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        nlohmann::json jr = {{"profile", r.profile_id}, {"proved", r.proved}, {"total", r.total}};
        std::string modules = "-";
        for (const auto& p : standard_profiles()) {
            if (p.id != r.profile_id) continue;
            modules = std::string(p.hammer ? "H" : "") + (p.llm_generation ? "+LLM" : "") +
                      (p.reflection ? "+Refl" : "") +
                      (p.retrieval == RetrievalMode::None ? "" : "+" + std::string(to_string(p.retrieval)));
            jr["modules"] = p.to_json();
        }
        std::string tokens = "-";
        if (r.avg_tokens) {
            jr["avg_tokens"] = *r.avg_tokens;
            tokens = fixed2(*r.avg_tokens);
        }
        t << std::setw(8) << r.profile_id << std::setw(22) << modules << std::setw(12)
          << (std::to_string(r.proved) + "/" + std::to_string(r.total)) << std::setw(12) << tokens;
        if (compare) {
            std::string imp = "-", pv = "-";
            if (i != best_i) {
                if (auto v = relative_improvement(best.proved, r.proved)) {
                    jr["improvement_pct"] = std::stod(fixed2(*v));
                    imp = fixed2(*v) + "%";
                } else {
                    imp = "n/a";
                }
                if (r.total > 0 && best.total > 0) {
                    auto s = significance(best.proved, best.total, r.proved, r.total, method);
                    jr["p_value"] = s.p_value;
                    char buf[32];
                    std::snprintf(buf, sizeof buf, "%.4g", s.p_value);
                    pv = buf;
                }
            }
            t << std::setw(14) << imp << pv;
        }
        t << '\n';
        out.json["rows"].push_back(jr);
    }
    if (compare) t << "Improvement: (best - row) / row. Significance: " << to_string(method) << ".\n";
    out.text = t.str();
    return out;
}

inline Report report(const std::vector<SuiteResult>& results, SignificanceMethod method = SignificanceMethod::ZTest) {
    std::vector<ReportRow> rows;
    for (const auto& r : results) rows.push_back(ReportRow::of(r));
    return report(rows, method);
}

} // namespace proofagent
