// SPDX-License-Identifier: Apache-2.0
//
// proofagent: build retrieval databases, prove single theorems, run suites
// under ablation profiles and compare results.
//
// Exit codes: 0 success (proved / all ok), 1 not proved, 2 infrastructure
// or usage error.

#include "proofagent/cache.hpp"
#include "proofagent/harness.hpp"
#include "proofagent/http.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <iostream>

namespace pa = proofagent;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kNotProved = 1;
constexpr int kInfra = 2;

struct Settings {
    // agent
    std::size_t iterations = 25;
    std::optional<std::size_t> budget;
    std::size_t k_lemmas = 8;
    std::size_t k_proofs = 8;
    std::size_t prompt_token_clip = 100000;
    std::optional<double> temperature;
    std::string hammer_cmd;
    int hammer_timeout = 25;
    int hammer_threads = 64;
    std::string hammer_stub;
    // providers
    pa::HttpConfig http;
    std::string api_key_env = "OPENAI_API_KEY";
    std::string cache_dir;
    std::size_t embedding_dimension = 64;
    bool offline = false;
    std::string replay;
    // runs
    std::string profile = "C5";
    std::size_t parallelism = 0;
    std::size_t max_parallelism = 64;
    int verbosity = 0;

    json echo() const {
        json j = {{"iterations", iterations},
                  {"budget", budget ? json(*budget) : json(nullptr)},
                  {"k_lemmas", k_lemmas},
                  {"k_proofs", k_proofs},
                  {"prompt_token_clip", prompt_token_clip},
                  {"temperature", temperature ? json(*temperature) : json(nullptr)},
                  {"hammer", {{"command", hammer_cmd}, {"timeout", hammer_timeout}, {"threads", hammer_threads},
                              {"stub", hammer_stub}}},
                  {"provider", {{"base_url", http.base_url},
                                {"api_key", http.api_key.empty() ? "" : "***"},
                                {"api_key_env", api_key_env},
                                {"chat_model", http.chat_model},
                                {"embedding_model", http.embedding_model},
                                {"timeout", http.timeout_seconds},
                                {"max_retries", http.max_retries}}},
                  {"cache_dir", cache_dir},
                  {"embedding_dimension", embedding_dimension},
                  {"offline", offline},
                  {"replay", replay},
                  {"profile", profile},
                  {"parallelism", parallelism},
                  {"max_parallelism", max_parallelism}};
        return j;
    }

    pa::AgentConfig agent() const {
        pa::AgentConfig c;
        c.iteration_limit = iterations;
        c.llm_invocation_budget = budget;
        c.k_lemmas = k_lemmas;
        c.k_proofs = k_proofs;
        c.prompt_token_clip = prompt_token_clip;
        c.temperature = temperature;
        c.hammer.command = hammer_cmd;
        c.hammer.timeout_seconds = hammer_timeout;
        c.hammer.threads = hammer_threads;
        c.chat_model = http.chat_model;
        c.embedding_model = http.embedding_model;
        pa::profile_by_id(profile).apply(c);
        return c;
    }
};

/// Config file layer (JSON). Unknown keys are rejected to catch typos.
void apply_file(Settings& s, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw pa::FormatError("cannot open config " + path.string());
    json j = json::parse(in);
    static const std::set<std::string> known = {"iterations", "budget", "k_lemmas", "k_proofs", "prompt_token_clip",
                                                "temperature", "hammer", "provider", "cache_dir",
                                                "embedding_dimension", "offline", "profile", "parallelism",
                                                "max_parallelism"};
    for (const auto& [k, _] : j.items())
        if (!known.count(k)) throw pa::FormatError(path.string() + ": unknown config key '" + k + "'");
    s.iterations = j.value("iterations", s.iterations);
    if (j.contains("budget") && !j["budget"].is_null()) s.budget = j["budget"].get<std::size_t>();
    s.k_lemmas = j.value("k_lemmas", s.k_lemmas);
    s.k_proofs = j.value("k_proofs", s.k_proofs);
    s.prompt_token_clip = j.value("prompt_token_clip", s.prompt_token_clip);
    if (j.contains("temperature") && !j["temperature"].is_null()) s.temperature = j["temperature"].get<double>();
    if (j.contains("hammer")) {
        const auto& h = j["hammer"];
        s.hammer_cmd = h.value("command", s.hammer_cmd);
        s.hammer_timeout = h.value("timeout", s.hammer_timeout);
        s.hammer_threads = h.value("threads", s.hammer_threads);
        s.hammer_stub = h.value("stub", s.hammer_stub);
    }
    if (j.contains("provider")) {
        const auto& p = j["provider"];
        if (p.contains("api_key")) throw pa::FormatError("put the API key in an environment variable, not the config file");
        s.http.base_url = p.value("base_url", s.http.base_url);
        s.api_key_env = p.value("api_key_env", s.api_key_env);
        s.http.chat_model = p.value("chat_model", s.http.chat_model);
        s.http.embedding_model = p.value("embedding_model", s.http.embedding_model);
        s.http.timeout_seconds = p.value("timeout", s.http.timeout_seconds);
        s.http.max_retries = p.value("max_retries", s.http.max_retries);
    }
    s.cache_dir = j.value("cache_dir", s.cache_dir);
    s.embedding_dimension = j.value("embedding_dimension", s.embedding_dimension);
    s.offline = j.value("offline", s.offline);
    s.profile = j.value("profile", s.profile);
    s.parallelism = j.value("parallelism", s.parallelism);
    s.max_parallelism = j.value("max_parallelism", s.max_parallelism);
}

std::optional<std::string> env(const char* name) {
    const char* v = std::getenv(name);
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
}

/// Environment layer.
void apply_env(Settings& s) {
    if (auto v = env("PROOFAGENT_BASE_URL")) s.http.base_url = *v;
    if (auto v = env("PROOFAGENT_CHAT_MODEL")) s.http.chat_model = *v;
    if (auto v = env("PROOFAGENT_EMBEDDING_MODEL")) s.http.embedding_model = *v;
    if (auto v = env("PROOFAGENT_PROFILE")) s.profile = *v;
    if (auto v = env("PROOFAGENT_BUDGET")) s.budget = std::stoul(*v);
    if (auto v = env("PROOFAGENT_PARALLELISM")) s.parallelism = std::stoul(*v);
    if (auto v = env("PROOFAGENT_CACHE_DIR")) s.cache_dir = *v;
    if (auto v = env("PROOFAGENT_OFFLINE")) s.offline = (*v == "1" || *v == "true");
    if (auto v = env("PROOFAGENT_API_KEY_ENV")) s.api_key_env = *v;
    if (auto v = env(s.api_key_env.c_str())) s.http.api_key = *v;
    if (auto v = env("PROOFAGENT_API_KEY")) s.http.api_key = *v;
}

/// Flags that override file and environment. Filled only when given.
struct Flags {
    std::string config;
    std::optional<std::string> profile;
    std::optional<std::size_t> budget, iterations, k_lemmas, k_proofs, parallelism;
    std::optional<std::string> hammer_cmd, hammer_stub;
    std::optional<int> hammer_timeout;
    std::optional<std::string> replay;
    bool offline = false;
    bool quiet = false;
    int verbosity = 0;

    void attach(CLI::App& app) {
        app.add_option("--config", config, "JSON config file (lowest precedence)");
        app.add_option("--profile", profile, "Ablation profile C1..C5");
        app.add_option("--budget", budget, "LLM invocation budget per theorem");
        app.add_option("--iterations", iterations, "Iteration limit per theorem");
        app.add_option("--k-lemmas", k_lemmas, "Lemmas retrieved per iteration");
        app.add_option("--k-proofs", k_proofs, "Example proofs retrieved per iteration");
        app.add_option("--hammer-cmd", hammer_cmd, "Hammer command template ({goal_file} {timeout} {threads})");
        app.add_option("--hammer-stub", hammer_stub, "Hammer stub fixture (offline)");
        app.add_option("--hammer-timeout", hammer_timeout, "Hammer timeout in seconds");
        app.add_option("--parallelism", parallelism, "Worker threads for suites and database builds");
        app.add_option("--replay", replay, "Replay script for chat responses (implies --offline)");
        app.add_flag("--offline", offline, "Use replay providers only; never touch the network");
        app.add_flag("-q,--quiet", quiet, "Do not echo the effective configuration");
        app.add_flag("-v,--verbose", verbosity, "Print loop events to stderr");
    }

    Settings resolve() const {
        Settings s;
        if (!config.empty()) apply_file(s, config);
        apply_env(s);
        if (profile) s.profile = *profile;
        if (budget) s.budget = *budget;
        if (iterations) s.iterations = *iterations;
        if (k_lemmas) s.k_lemmas = *k_lemmas;
        if (k_proofs) s.k_proofs = *k_proofs;
        if (parallelism) s.parallelism = *parallelism;
        if (hammer_cmd) s.hammer_cmd = *hammer_cmd;
        if (hammer_stub) s.hammer_stub = *hammer_stub;
        if (hammer_timeout) s.hammer_timeout = *hammer_timeout;
        if (replay) {
            s.replay = *replay;
            s.offline = true;
        }
        if (offline) s.offline = true;
        s.verbosity = verbosity;
        pa::profile_by_id(s.profile); // validate early
        return s;
    }
};

void echo_config(const Settings& s, bool quiet) {
    if (!quiet) std::cerr << "effective configuration:\n" << s.echo().dump(2) << '\n';
}

pa::EventSink event_printer(int verbosity) {
    if (verbosity <= 0) return {};
    return [](const json& e) { std::cerr << e.dump() << '\n'; };
}

/// Live providers wrapped in the on-disk cache when configured.
struct LiveProviders {
    std::shared_ptr<pa::ChatModel> chat;
    std::shared_ptr<pa::Embedder> embedder;
};

LiveProviders live_providers(const Settings& s) {
    if (s.http.api_key.empty())
        throw pa::Error("no API key: set " + s.api_key_env + " (or pass --offline / --replay for offline runs)");
    LiveProviders p;
    p.chat = std::make_shared<pa::HttpChat>(s.http);
    p.embedder = std::make_shared<pa::HttpEmbedder>(s.http);
    if (!s.cache_dir.empty()) {
        std::filesystem::path dir(s.cache_dir);
        p.chat = std::make_shared<pa::CachedChat>(p.chat, dir / "chat.jsonl");
        p.embedder = std::make_shared<pa::CachedEmbedder>(p.embedder, dir / "embeddings.jsonl");
    }
    return p;
}

pa::ProviderFactory provider_factory(const Settings& s) {
    if (s.offline) {
        if (s.replay.empty()) return pa::replay_factory(s.embedding_dimension);
        auto script = pa::ReplayScript::load(s.replay);
        auto dim = s.embedding_dimension;
        return [script, dim](const pa::SuiteTheorem&) {
            return pa::TheoremProviders{std::make_shared<pa::ReplayChat>(script),
                                        std::make_shared<pa::ReplayEmbedder>(dim)};
        };
    }
    auto live = live_providers(s);
    return [live](const pa::SuiteTheorem&) { return pa::TheoremProviders{live.chat, live.embedder}; };
}

struct LoadedLibraries {
    std::optional<pa::LemmaDb> lemmas;
    std::optional<pa::ProofDb> proofs;

    pa::Libraries view() const {
        return {lemmas ? &*lemmas : nullptr, proofs ? &*proofs : nullptr};
    }
};

/// Opens the suite's databases when the profile retrieves anything. Missing
/// databases are an error with a pointer to build-db.
LoadedLibraries load_libraries(const pa::Suite& suite, const pa::Profile& profile) {
    LoadedLibraries libs;
    if (profile.retrieval == pa::RetrievalMode::None) return libs;
    auto need = [&](const std::filesystem::path& dir, const char* kind) {
        if (dir.empty() || !std::filesystem::exists(dir / "manifest.json"))
            throw pa::Error(std::string(kind) + " database not found" + (dir.empty() ? "" : " at " + dir.string()) +
                            "; run `proofagent build-db --kind " + kind + "` first or choose --profile C1");
    };
    need(suite.lemma_db, "lemmas");
    need(suite.proof_db, "proofs");
    libs.lemmas = pa::LemmaDb::open(suite.lemma_db);
    libs.proofs = pa::ProofDb::open(suite.proof_db);
    return libs;
}

std::unique_ptr<pa::Hammer> make_hammer(const Settings& s, const pa::Suite* suite) {
    if (!s.hammer_stub.empty()) return std::make_unique<pa::StubHammer>(pa::StubHammer::load(s.hammer_stub));
    if (suite && !suite->hammer_stub.empty())
        return std::make_unique<pa::StubHammer>(pa::StubHammer::load(suite->hammer_stub));
    if (!s.hammer_cmd.empty()) return std::make_unique<pa::CommandHammer>();
    return nullptr;
}

void print_ledger(const pa::RunLedger& l) {
    std::cout << "theorem:     " << l.theorem_id << '\n'
              << "outcome:     " << pa::to_string(l.outcome) << '\n'
              << "iterations:  " << l.iterations << '\n'
              << "invocations: " << l.invocations() << " (chat " << l.chat_total() << ", embedding "
              << l.embedding_invocations << ")\n"
              << "tokens:      " << l.tokens() << " (prompt " << l.prompt_tokens << ", completion "
              << l.completion_tokens << ")\n";
    if (!l.error.empty()) std::cout << "error:       " << l.error << '\n';
}

// ---------------------------------------------------------------------------

int cmd_build_db(const Settings& s, const std::string& corpus_path, const std::string& out, const std::string& kind) {
    auto corpus = pa::load_corpus(corpus_path);
    std::shared_ptr<pa::ChatModel> chat;
    std::shared_ptr<pa::Embedder> embedder;
    if (s.offline) {
        chat = std::make_shared<pa::ReplayChat>(s.replay.empty() ? pa::ReplayScript{} : pa::ReplayScript::load(s.replay));
        embedder = std::make_shared<pa::ReplayEmbedder>(s.embedding_dimension);
    } else {
        auto live = live_providers(s);
        chat = live.chat;
        embedder = live.embedder;
    }
    pa::BuildOptions opts;
    opts.workers = s.parallelism ? s.parallelism : 4;
    opts.temperature = s.temperature;
    opts.events = event_printer(s.verbosity);
    pa::BuildReport report;
    std::size_t size = 0;
    if (kind == "lemmas") {
        auto db = pa::LemmaDb::open(out);
        report = pa::build_lemma_db(corpus, db, *chat, *embedder, opts);
        size = db.size();
    } else {
        auto db = pa::ProofDb::open(out);
        report = pa::build_proof_db(corpus, db, *chat, *embedder, opts);
        size = db.size();
    }
    std::cout << report.added << " new entries, " << report.skipped << " unchanged, " << report.failed
              << " failed; database holds " << size << " entries\n";
    if (report.failed > 0) {
        std::cerr << "some entries failed after retries; rerun to resume\n";
        return kInfra;
    }
    return kOk;
}

int cmd_prove(const Settings& s, const std::string& suite_path, const std::string& theorem_id,
              std::string out_script, const std::string& trace_path) {
    auto suite = pa::Suite::load(suite_path);
    const auto& theorem = suite.find(theorem_id);
    const auto& profile = pa::profile_by_id(s.profile);
    auto libs = load_libraries(suite, profile);
    auto hammer = make_hammer(s, &suite);
    auto factory = provider_factory(s);

    std::vector<json> trace;
    auto printer = event_printer(s.verbosity);
    pa::EventSink sink = [&](const json& e) {
        trace.push_back(e);
        if (printer) printer(e);
    };
    auto cfg = s.agent();
    auto ledger = pa::run_theorem(theorem, libs.view(), factory, hammer.get(), cfg, sink);
    print_ledger(ledger);
    if (!trace_path.empty()) {
        std::ofstream out(trace_path);
        for (const auto& e : trace) out << e.dump() << '\n';
    }
    if (ledger.outcome == pa::Outcome::Error) return kInfra;
    if (!ledger.proved()) return kNotProved;
    if (out_script.empty()) out_script = theorem_id + ".script";
    std::ofstream(out_script) << pa::render_script(ledger);
    std::cout << "script:      " << out_script << '\n';
    return kOk;
}

pa::SignificanceMethod method_of(const std::string& m) {
    if (m == "z") return pa::SignificanceMethod::ZTest;
    if (m == "fisher") return pa::SignificanceMethod::FisherExact;
    throw pa::Error("unknown significance method '" + m + "' (z or fisher)");
}

void write_report(const pa::Report& r, const std::filesystem::path& out_dir) {
    std::cout << r.text;
    if (out_dir.empty()) return;
    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir / "report.json") << r.json.dump(2) << '\n';
    std::ofstream(out_dir / "report.txt") << r.text;
}

int cmd_suite(const Settings& s, const std::string& suite_path, std::vector<std::string> profiles,
              const std::string& out_dir, const std::string& method) {
    auto suite = pa::Suite::load(suite_path);
    if (profiles.empty()) profiles.push_back(s.profile);
    auto hammer = make_hammer(s, &suite);
    auto factory = provider_factory(s);
    auto printer = event_printer(s.verbosity);

    std::vector<pa::SuiteResult> results;
    bool infra = false;
    for (const auto& pid : profiles) {
        const auto& profile = pa::profile_by_id(pid);
        auto libs = load_libraries(suite, profile);
        auto settings = s;
        settings.profile = profile.id;
        pa::SuiteOptions opts;
        opts.parallelism = s.parallelism;
        opts.max_parallelism = s.max_parallelism;
        opts.providers = factory;
        opts.hammer = hammer.get();
        std::filesystem::path out(out_dir);
        opts.results_path = out / ("results-" + profile.id + ".jsonl");
        opts.timings_path = out / ("timings-" + profile.id + ".jsonl");
        opts.events_dir = out / ("events-" + profile.id);
        opts.on_result = [&](const pa::RunLedger& l) {
            if (printer) printer(json{{"event", "theorem-done"}, {"profile", profile.id}, {"theorem", l.theorem_id},
                                      {"outcome", pa::to_string(l.outcome)}});
        };
        auto r = pa::run_suite(suite, profile, libs.view(), settings.agent(), opts);
        for (const auto& l : r.ledgers)
            if (l.outcome == pa::Outcome::Error) {
                infra = true;
                std::cerr << profile.id << "/" << l.theorem_id << ": " << l.error << '\n';
            }
        std::ofstream(out / ("summary-" + profile.id + ".json")) << r.summary_json().dump(2) << '\n';
        results.push_back(std::move(r));
    }
    write_report(pa::report(results, method_of(method)), out_dir);
    return infra ? kInfra : kOk;
}

/// --results C5=path/results-C5.jsonl or --count C5=138/200
int cmd_report(const std::vector<std::string>& results, const std::vector<std::string>& counts,
               const std::string& out_dir, const std::string& method) {
    std::vector<pa::ReportRow> rows;
    for (const auto& spec : results) {
        auto eq = spec.find('=');
        if (eq == std::string::npos) throw pa::Error("--results expects PROFILE=PATH, got '" + spec + "'");
        rows.push_back(pa::ReportRow::of(pa::load_suite_result(spec.substr(eq + 1), spec.substr(0, eq))));
    }
    for (const auto& spec : counts) {
        auto eq = spec.find('='), slash = spec.find('/');
        if (eq == std::string::npos || slash == std::string::npos || slash < eq)
            throw pa::Error("--count expects PROFILE=PROVED/TOTAL, got '" + spec + "'");
        pa::ReportRow r;
        r.profile_id = spec.substr(0, eq);
        r.proved = std::stoul(spec.substr(eq + 1, slash - eq - 1));
        r.total = std::stoul(spec.substr(slash + 1));
        rows.push_back(r);
    }
    write_report(pa::report(rows, method_of(method)), out_dir);
    return kOk;
}

int cmd_check(const std::string& suite_path, const std::string& theorem_id, const std::string& script_path) {
    auto suite = pa::Suite::load(suite_path);
    const auto& theorem = suite.find(theorem_id);
    std::ifstream in(script_path);
    if (!in) throw pa::Error("cannot open script " + script_path);
    std::stringstream ss;
    ss << in.rdbuf();
    auto session = pa::open_session(theorem);
    bool ok = pa::replay_script(*session, pa::parse_script(ss.str()));
    std::cout << (ok ? "script closes all goals\n" : "script does not close all goals\n");
    return ok ? kOk : kNotProved;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"LLM proof agent with reflection-validated tactics and plan-based retrieval"};
    app.require_subcommand(1);
    app.fallthrough();
    Flags flags;
    flags.attach(app);

    auto* build = app.add_subcommand("build-db", "Build or resume a lemma or proof database");
    std::string corpus, out, kind = "lemmas";
    build->add_option("--corpus", corpus, "Corpus JSON-lines file")->required();
    build->add_option("--out", out, "Database directory")->required();
    build->add_option("--kind", kind, "lemmas or proofs")->check(CLI::IsMember({"lemmas", "proofs"}));

    auto* prove = app.add_subcommand("prove", "Prove one theorem of a suite");
    std::string suite_path, theorem, out_script, trace;
    prove->add_option("--suite", suite_path, "Suite file")->required();
    prove->add_option("--theorem", theorem, "Theorem id")->required();
    prove->add_option("--out", out_script, "Where to write the proof script (default <id>.script)");
    prove->add_option("--trace", trace, "Write the event trace (JSON lines) here");

    auto* suite = app.add_subcommand("suite", "Run a suite under one or more profiles and compare");
    std::vector<std::string> profiles;
    std::string out_dir = "results", method = "z";
    suite->add_option("--suite", suite_path, "Suite file")->required();
    suite->add_option("--profiles", profiles, "Profiles to run (default: --profile)")->delimiter(',');
    suite->add_option("--out", out_dir, "Results directory");
    suite->add_option("--method", method, "Significance test: z or fisher");

    auto* rep = app.add_subcommand("report", "Compare stored results or published counts");
    std::vector<std::string> result_specs, count_specs;
    std::string report_dir;
    rep->add_option("--results", result_specs, "PROFILE=PATH to a results file");
    rep->add_option("--count", count_specs, "PROFILE=PROVED/TOTAL");
    rep->add_option("--out", report_dir, "Also write report.json and report.txt here");
    rep->add_option("--method", method, "Significance test: z or fisher");

    auto* check = app.add_subcommand("check", "Replay a proof script on a fresh session");
    std::string script;
    check->add_option("--suite", suite_path, "Suite file")->required();
    check->add_option("--theorem", theorem, "Theorem id")->required();
    check->add_option("--script", script, "Proof script")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        auto rc = app.exit(e);
        return rc == 0 ? kOk : kInfra;
    }

    try {
        if (*rep) return cmd_report(result_specs, count_specs, report_dir, method);
        if (*check) return cmd_check(suite_path, theorem, script);
        auto settings = flags.resolve();
        echo_config(settings, flags.quiet);
        if (*build) return cmd_build_db(settings, corpus, out, kind);
        if (*prove) return cmd_prove(settings, suite_path, theorem, out_script, trace);
        if (*suite) return cmd_suite(settings, suite_path, profiles, out_dir, method);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInfra;
    }
    return kInfra;
}
