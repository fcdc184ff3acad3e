// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "proofagent/bm25.hpp"
#include "proofagent/events.hpp"
#include "proofagent/prompts.hpp"
#include "proofagent/providers.hpp"
#include "proofagent/retrieve.hpp"
#include "proofagent/session.hpp"

#include <json.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

namespace proofagent {

// ---------------------------------------------------------------------------
// Corpus

/// One library item. Records with a proof feed the proof database; every
/// record feeds the lemma database.
///
/// Corpus file: JSON lines, one object per record:
///
///     {"schema_version": 1, "name": "mulRCA", "statement": "...",
///      "proof": "...", "definitions": {"sym": "text"},
///      "available_after": 12, "source_path": "theories/Mul.v"}
///
/// "proof" is optional. "statement" is either a bare proposition or a
/// subgoal display block with a separator rule.
struct CorpusRecord {
    static constexpr int kSchemaVersion = 1;

    std::string name;
    std::string statement;
    std::optional<std::string> proof;
    std::map<std::string, std::string> definitions;
    long available_after = 0;
    std::string source_path;

    static CorpusRecord from_json(const nlohmann::json& j) {
        if (!j.is_object()) throw FormatError("corpus record must be an object");
        if (j.value("schema_version", 0) != kSchemaVersion) throw FormatError("unsupported corpus schema_version");
        CorpusRecord r;
        r.name = j.at("name").get<std::string>();
        r.statement = j.at("statement").get<std::string>();
        if (r.name.empty()) throw FormatError("corpus record has an empty name");
        if (text::trim(r.statement).empty()) throw FormatError("corpus record '" + r.name + "' has an empty statement");
        if (j.contains("proof") && !j.at("proof").is_null()) r.proof = j.at("proof").get<std::string>();
        if (j.contains("definitions"))
            r.definitions = j.at("definitions").get<std::map<std::string, std::string>>();
        r.available_after = j.value("available_after", 0L);
        r.source_path = j.value("source_path", std::string{});
        return r;
    }

    nlohmann::json to_json() const {
        nlohmann::json j = {{"schema_version", kSchemaVersion},
                            {"name", name},
                            {"statement", statement},
                            {"definitions", definitions},
                            {"available_after", available_after},
                            {"source_path", source_path}};
        if (proof) j["proof"] = *proof;
        return j;
    }

    /// The statement as a subgoal; a bare proposition has no premises.
    Subgoal goal() const {
        for (auto line : text::split_lines(statement))
            if (detail::is_separator_line(line)) return parse_subgoal(statement);
        return Subgoal::make({}, statement);
    }
};

/// Reads a corpus file. A bad line raises FormatError naming its line number.
inline std::vector<CorpusRecord> load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open corpus " + path.string());
    std::vector<CorpusRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        try {
            out.push_back(CorpusRecord::from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Entries

struct Provenance {
    std::string source_path;
    long position = 0;

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct LemmaEntry {
    std::string name;
    std::string statement;
    std::string description;
    Vector embedding;
    Provenance provenance;
    std::string key;

    const std::string& id() const noexcept { return name; }

    nlohmann::json to_json() const {
        return {{"key", key},
                {"name", name},
                {"statement", statement},
                {"description", description},
                {"source_path", provenance.source_path},
                {"position", provenance.position}};
    }
    static LemmaEntry from_json(const nlohmann::json& j) {
        LemmaEntry e;
        e.key = j.at("key").get<std::string>();
        e.name = j.at("name").get<std::string>();
        e.statement = j.at("statement").get<std::string>();
        e.description = j.at("description").get<std::string>();
        e.provenance = {j.value("source_path", std::string{}), j.value("position", 0L)};
        return e;
    }
};

struct ProofEntry {
    std::string theorem_name;
    Subgoal goal;
    std::string proof_text;
    ProofPlan plan;
    Vector plan_embedding;
    Provenance provenance;
    std::string key;

    const std::string& id() const noexcept { return theorem_name; }

    nlohmann::json to_json() const {
        return {{"key", key},
                {"theorem_name", theorem_name},
                {"goal", goal.render()},
                {"proof", proof_text},
                {"plan", plan.steps},
                {"source_path", provenance.source_path},
                {"position", provenance.position}};
    }
    static ProofEntry from_json(const nlohmann::json& j) {
        ProofEntry e;
        e.key = j.at("key").get<std::string>();
        e.theorem_name = j.at("theorem_name").get<std::string>();
        e.goal = parse_subgoal(j.at("goal").get<std::string>());
        e.proof_text = j.at("proof").get<std::string>();
        e.plan.steps = j.at("plan").get<std::vector<std::string>>();
        if (e.plan.empty()) throw FormatError("proof entry '" + e.theorem_name + "' has an empty plan");
        e.provenance = {j.value("source_path", std::string{}), j.value("position", 0L)};
        return e;
    }
};

inline Vector& vector_of(LemmaEntry& e) { return e.embedding; }
inline const Vector& vector_of(const LemmaEntry& e) { return e.embedding; }
inline Vector& vector_of(ProofEntry& e) { return e.plan_embedding; }
inline const Vector& vector_of(const ProofEntry& e) { return e.plan_embedding; }

template <typename E>
inline constexpr std::string_view kDbKind = "";
template <>
inline constexpr std::string_view kDbKind<LemmaEntry> = "lemmas";
template <>
inline constexpr std::string_view kDbKind<ProofEntry> = "proofs";

// ---------------------------------------------------------------------------
// Database

/// Entries of one kind with embeddings of uniform dimension.
///
/// On disk a database is a directory:
///   manifest.json  {"schema_version": 1, "kind": "lemmas", "dimension": d}
///   records.jsonl  one entry per line, in commit order
///   vectors.bin    d native-endian doubles per committed entry
/// Lines whose vector is incomplete, and torn trailing lines, are dropped on
/// open, so an interrupted build resumes from the last complete entry.
template <typename E>
class Database {
public:
    static constexpr int kSchemaVersion = 1;

    Database() = default;

    /// Opens (or creates) a persistent database in `dir`.
    static Database open(const std::filesystem::path& dir) {
        Database db;
        db.dir_ = dir;
        auto manifest = dir / "manifest.json";
        if (!std::filesystem::exists(manifest)) return db;
        nlohmann::json m;
        {
            std::ifstream in(manifest);
            m = nlohmann::json::parse(in, nullptr, false);
        }
        if (m.is_discarded() || m.value("schema_version", 0) != kSchemaVersion)
            throw FormatError(manifest.string() + ": unsupported database manifest");
        if (m.value("kind", std::string{}) != kDbKind<E>)
            throw FormatError(dir.string() + " holds a '" + m.value("kind", std::string{}) + "' database, not '" +
                              std::string(kDbKind<E>) + "'");
        db.dimension_ = m.value("dimension", std::size_t{0});

        std::ifstream vin(dir / "vectors.bin", std::ios::binary);
        std::ifstream rin(dir / "records.jsonl");
        std::string line;
        while (std::getline(rin, line)) {
            auto j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded()) break;
            E e = E::from_json(j);
            Vector v(db.dimension_);
            if (!vin.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double))))
                break;
            vector_of(e) = std::move(v);
            db.index_entry(std::move(e));
        }
        db.committed_on_disk_ = db.entries_.size();
        db.compact_files();
        return db;
    }

    bool persistent() const noexcept { return !dir_.empty(); }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    std::size_t dimension() const noexcept { return dimension_; }
    const std::vector<E>& entries() const noexcept { return entries_; }

    const E* find_key(const std::string& key) const {
        auto it = by_key_.find(key);
        return it == by_key_.end() ? nullptr : &entries_[it->second];
    }

    /// Appends an entry; on disk too when persistent. Throws DimensionMismatch
    /// when the vector disagrees with earlier entries.
    void insert(E e) {
        const auto& v = vector_of(e);
        if (v.empty()) throw DimensionMismatch("entry has no embedding");
        if (dimension_ == 0) {
            dimension_ = v.size();
        } else if (v.size() != dimension_) {
            throw DimensionMismatch("entry has dimension " + std::to_string(v.size()) + ", database has " +
                                    std::to_string(dimension_));
        }
        if (persistent()) write_entry(e);
        index_entry(std::move(e));
    }

    /// Latest entry per id, in first-appearance order. A rebuilt entry
    /// (changed statement) supersedes the stale one.
    std::vector<const E*> current() const {
        std::map<std::string, std::size_t> last;
        for (std::size_t i = 0; i < entries_.size(); ++i) last[entries_[i].id()] = i;
        std::vector<const E*> out;
        std::set<std::string> seen;
        for (const auto& e : entries_) {
            if (!seen.insert(e.id()).second) continue;
            out.push_back(&entries_[last[e.id()]]);
        }
        return out;
    }

private:
    void index_entry(E e) {
        by_key_[e.key] = entries_.size();
        entries_.push_back(std::move(e));
    }

    void write_manifest() {
        std::filesystem::create_directories(dir_);
        std::ofstream out(dir_ / "manifest.json");
        out << nlohmann::json{{"schema_version", kSchemaVersion}, {"kind", kDbKind<E>}, {"dimension", dimension_}}
                   .dump(2)
            << '\n';
    }

    /// Truncates both files to the entries that loaded cleanly.
    void compact_files() {
        if (!persistent()) return;
        auto vec = dir_ / "vectors.bin";
        auto rec = dir_ / "records.jsonl";
        auto want = committed_on_disk_ * dimension_ * sizeof(double);
        if (std::filesystem::exists(vec) && std::filesystem::file_size(vec) != want)
            std::filesystem::resize_file(vec, want);
        if (std::filesystem::exists(rec)) {
            std::ifstream in(rec);
            std::string all, line;
            for (std::size_t i = 0; i < committed_on_disk_ && std::getline(in, line); ++i) all += line + '\n';
            in.close();
            if (all.size() != std::filesystem::file_size(rec)) {
                std::ofstream out(rec, std::ios::trunc);
                out << all;
            }
        }
    }

    void write_entry(const E& e) {
        if (committed_on_disk_ == 0) write_manifest();
        const auto& v = vector_of(e);
        {
            std::ofstream out(dir_ / "vectors.bin", std::ios::binary | std::ios::app);
            out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
        }
        {
            std::ofstream out(dir_ / "records.jsonl", std::ios::app);
            out << e.to_json().dump() << '\n';
        }
        ++committed_on_disk_;
    }

    std::filesystem::path dir_;
    std::size_t dimension_ = 0;
    std::vector<E> entries_;
    std::map<std::string, std::size_t> by_key_;
    std::size_t committed_on_disk_ = 0;
};

using LemmaDb = Database<LemmaEntry>;
using ProofDb = Database<ProofEntry>;

// ---------------------------------------------------------------------------
// Building

struct BuildOptions {
    std::size_t workers = 4;
    int max_retries = 2; // extra attempts per entry on transient provider errors
    std::optional<double> temperature;
    EventSink events;
};

struct BuildReport {
    std::size_t added = 0;
    std::size_t skipped = 0; // already present with an unchanged key
    std::size_t failed = 0;
};

inline std::string lemma_key(const CorpusRecord& r) {
    return text::content_hash({"lemma", r.name, r.statement, prompts::kVersion});
}

inline std::string proof_key(const CorpusRecord& r) {
    return text::content_hash({"proof", r.name, r.statement, r.proof.value_or(""), prompts::kVersion});
}

inline ChatRequest description_request(const CorpusRecord& r) {
    ChatRequest req;
    req.system = std::string(prompts::kDescription.system);
    req.user = prompts::render(prompts::kDescription.user, {{"lemma_statement", r.statement},
                                                            {"definitions", render_definitions(r.definitions)}});
    req.tag = ChatTag::Description;
    return req;
}

inline ChatRequest proof_plan_request(const CorpusRecord& r) {
    ChatRequest req;
    req.system = std::string(prompts::kProofPlan.system);
    req.user = prompts::render(prompts::kProofPlan.user, {{"subgoal", r.goal().render()},
                                                          {"proof", r.proof.value_or("")},
                                                          {"definitions", render_definitions(r.definitions)}});
    req.tag = ChatTag::Plan;
    return req;
}

namespace detail {

/// Runs `make(i)` for every pending index on a bounded pool and hands the
/// results to `commit` strictly in index order, so the output files do not
/// depend on scheduling. Transient ProviderErrors are retried per entry; an
/// entry that still fails is skipped and counted. A fatal error stops new work
/// and is rethrown after in-flight results are committed.
template <typename E, typename Make, typename Commit>
void ordered_build(const std::vector<std::size_t>& pending, const BuildOptions& opts, Make make, Commit commit,
                   BuildReport& report) {
    const std::size_t n = pending.size();
    std::vector<std::optional<E>> slots(n);
    std::vector<char> done(n, 0);
    std::mutex mu;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::exception_ptr fatal;
    std::size_t committed = 0;

    auto flush = [&] { // caller holds mu
        while (committed < n && done[committed]) {
            if (slots[committed]) {
                commit(std::move(*slots[committed]));
                ++report.added;
            }
            slots[committed].reset();
            ++committed;
        }
    };
    auto worker = [&] {
        while (!stop) {
            auto i = next++;
            if (i >= n) return;
            std::optional<E> result;
            for (int attempt = 0;; ++attempt) {
                try {
                    result = make(pending[i]);
                    break;
                } catch (const ProviderError& e) {
                    if (e.transient() && attempt < opts.max_retries) {
                        emit(opts.events, {{"event", "build-retry"}, {"index", pending[i]}, {"error", e.what()}});
                        continue;
                    }
                    std::lock_guard lock(mu);
                    if (e.transient()) {
                        ++report.failed;
                        emit(opts.events, {{"event", "build-entry-failed"}, {"index", pending[i]}, {"error", e.what()}});
                    } else {
                        if (!fatal) fatal = std::current_exception();
                        stop = true;
                    }
                    break;
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!fatal) fatal = std::current_exception();
                    stop = true;
                    break;
                }
            }
            std::lock_guard lock(mu);
            slots[i] = std::move(result);
            done[i] = 1;
            try {
                flush();
            } catch (...) {
                if (!fatal) fatal = std::current_exception();
                stop = true;
            }
        }
    };
    std::size_t threads = std::max<std::size_t>(1, std::min(opts.workers, n));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (fatal) std::rethrow_exception(fatal);
}

} // namespace detail

/// Adds a described, embedded entry for every corpus record not yet in `db`.
/// One description chat call and one embedding call per new entry.
inline BuildReport build_lemma_db(const std::vector<CorpusRecord>& corpus, LemmaDb& db, ChatModel& chat,
                                  Embedder& embedder, const BuildOptions& opts = {}) {
    BuildReport report;
    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (db.find_key(lemma_key(corpus[i]))) ++report.skipped;
        else pending.push_back(i);
    }
    auto make = [&](std::size_t i) {
        const auto& r = corpus[i];
        auto req = description_request(r);
        req.temperature = opts.temperature;
        LemmaEntry e;
        e.name = r.name;
        e.statement = r.statement;
        e.description = std::string(text::trim(chat.complete(req).text));
        auto v = embedder.embed({e.description});
        if (v.size() != 1) throw ProviderError("embedder returned the wrong number of vectors", false);
        e.embedding = std::move(v.front());
        e.provenance = {r.source_path, r.available_after};
        e.key = lemma_key(r);
        return e;
    };
    detail::ordered_build<LemmaEntry>(pending, opts, make, [&](LemmaEntry e) { db.insert(std::move(e)); }, report);
    return report;
}

/// Adds a planned, embedded entry for every corpus record with a proof.
/// The embedded text is the plan's steps joined by newlines.
inline BuildReport build_proof_db(const std::vector<CorpusRecord>& corpus, ProofDb& db, ChatModel& chat,
                                  Embedder& embedder, const BuildOptions& opts = {}) {
    BuildReport report;
    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (!corpus[i].proof) continue;
        if (db.find_key(proof_key(corpus[i]))) ++report.skipped;
        else pending.push_back(i);
    }
    auto make = [&](std::size_t i) {
        const auto& r = corpus[i];
        ProofEntry e;
        e.theorem_name = r.name;
        e.goal = r.goal();
        e.proof_text = *r.proof;
        auto req = proof_plan_request(r);
        req.temperature = opts.temperature;
        e.plan = parse_plan(chat.complete(req).text);
        if (e.plan.empty()) {
            req.user += kPlanReminder;
            e.plan = parse_plan(chat.complete(req).text);
        }
        if (e.plan.empty()) {
            emit(opts.events, {{"event", "plan-fallback"}, {"name", r.name}});
            e.plan = ProofPlan{{e.goal.consequent()}};
        }
        auto v = embedder.embed({plan_text(e.plan)});
        if (v.size() != 1) throw ProviderError("embedder returned the wrong number of vectors", false);
        e.plan_embedding = std::move(v.front());
        e.provenance = {r.source_path, r.available_after};
        e.key = proof_key(r);
        return e;
    };
    detail::ordered_build<ProofEntry>(pending, opts, make, [&](ProofEntry e) { db.insert(std::move(e)); }, report);
    return report;
}

// ---------------------------------------------------------------------------
// Querying

/// Names of entries declared before `position`.
template <typename E>
inline std::set<std::string> available_before(const Database<E>& db, long position) {
    std::set<std::string> out;
    for (const auto* e : db.current())
        if (e->provenance.position < position) out.insert(e->id());
    return out;
}

namespace detail {

template <typename E>
inline std::vector<const E*> filtered(const Database<E>& db, const AvailabilityFilter* filter) {
    std::vector<const E*> out;
    for (const auto* e : db.current())
        if (!filter || filter->allows(e->id())) out.push_back(e);
    return out;
}

template <typename E>
inline std::vector<Scored> rank_by(const std::vector<const E*>& candidates, const Vector& query) {
    std::vector<Scored> scored;
    scored.reserve(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i)
        scored.push_back({cosine(vector_of(*candidates[i]), query), i, candidates[i]->id()});
    sort_scored(scored);
    return scored;
}

} // namespace detail

/// Lemmas for a plan, given one query vector per plan step. Each step ranks
/// the filtered lemmas by cosine similarity; the per-step lists are merged
/// round-robin in step order.
inline std::vector<LemmaEntry> retrieve_lemmas_by_vectors(const std::vector<Vector>& step_vectors, const LemmaDb& db,
                                                          const AvailabilityFilter& filter, std::size_t k_total) {
    auto candidates = detail::filtered(db, &filter);
    if (candidates.empty() || step_vectors.empty() || k_total == 0) return {};
    std::vector<std::vector<Scored>> rankings;
    for (const auto& v : step_vectors) rankings.push_back(detail::rank_by(candidates, v));
    std::vector<LemmaEntry> out;
    for (auto idx : merge_round_robin(rankings, k_total)) out.push_back(*candidates[idx]);
    return out;
}

inline std::vector<LemmaEntry> retrieve_lemmas(const ProofPlan& plan, const LemmaDb& db,
                                               const AvailabilityFilter& filter, Embedder& embedder,
                                               std::size_t k_total) {
    if (plan.empty() || detail::filtered(db, &filter).empty()) return {};
    return retrieve_lemmas_by_vectors(embedder.embed(plan.steps), db, filter, k_total);
}

/// Proofs whose plan embedding is closest to `plan_vector`. `filter` may be
/// null for an unrestricted search.
inline std::vector<ProofEntry> retrieve_proofs_by_vector(const Vector& plan_vector, const ProofDb& db, std::size_t k,
                                                         const AvailabilityFilter* filter = nullptr) {
    auto candidates = detail::filtered(db, filter);
    auto scored = detail::rank_by(candidates, plan_vector);
    std::vector<ProofEntry> out;
    for (std::size_t i = 0; i < scored.size() && i < k; ++i) out.push_back(*candidates[scored[i].index]);
    return out;
}

inline std::vector<ProofEntry> retrieve_proofs(const ProofPlan& plan, const ProofDb& db, Embedder& embedder,
                                               std::size_t k, const AvailabilityFilter* filter = nullptr) {
    if (plan.empty() || detail::filtered(db, filter).empty()) return {};
    auto v = embedder.embed({plan_text(plan)});
    return retrieve_proofs_by_vector(v.front(), db, k, filter);
}

/// Lexical baseline: lemma statements ranked against the subgoal text.
inline std::vector<LemmaEntry> bm25_lemmas(const Subgoal& goal, const LemmaDb& db, const AvailabilityFilter& filter,
                                           std::size_t k) {
    auto candidates = detail::filtered(db, &filter);
    if (candidates.empty()) return {};
    std::vector<Bm25Doc> docs;
    std::map<std::string, const LemmaEntry*> by_id;
    for (const auto* e : candidates) {
        docs.push_back({e->name, e->statement});
        by_id[e->name] = e;
    }
    std::vector<LemmaEntry> out;
    for (const auto& id : bm25_rank(goal.render(), docs, k)) out.push_back(*by_id[id]);
    return out;
}

/// Lexical baseline: stored proof goals ranked against the subgoal text.
inline std::vector<ProofEntry> bm25_proofs(const Subgoal& goal, const ProofDb& db, const AvailabilityFilter* filter,
                                           std::size_t k) {
    auto candidates = detail::filtered(db, filter);
    if (candidates.empty()) return {};
    std::vector<Bm25Doc> docs;
    std::map<std::string, const ProofEntry*> by_id;
    for (const auto* e : candidates) {
        docs.push_back({e->theorem_name, e->goal.render()});
        by_id[e->theorem_name] = e;
    }
    std::vector<ProofEntry> out;
    for (const auto& id : bm25_rank(goal.render(), docs, k)) out.push_back(*by_id[id]);
    return out;
}

} // namespace proofagent
