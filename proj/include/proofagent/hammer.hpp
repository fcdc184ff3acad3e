// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "proofagent/events.hpp"
#include "proofagent/session.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>

#include <cerrno>
#include <cstring>
#include <csignal>
#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

namespace proofagent {

struct HammerConfig {
    bool enabled = true;
    /// Shell command; {goal_file}, {timeout} and {threads} are substituted.
    std::string command;
    int timeout_seconds = 25;
    int threads = 64;
};

class HammerSpawnError : public Error {
public:
    using Error::Error;
};

/// Symbolic fast path. Implementations return a script that closes the
/// first unproved subgoal, already executed on the session, or nothing.
class Hammer {
public:
    virtual ~Hammer() = default;

    std::optional<std::vector<TacticStep>> try_prove(const Subgoal& goal, ProverSession& session,
                                                     const HammerConfig& cfg, const EventSink& events = {}) {
        std::optional<std::string> proof;
        try {
            proof = search(goal, session, cfg);
        } catch (const HammerSpawnError& e) {
            emit(events, {{"event", "hammer-spawn-error"}, {"error", e.what()}});
            return std::nullopt;
        }
        if (!proof) return std::nullopt;
        auto steps = parse_script(*proof);
        if (steps.empty() || !apply_closing(steps, session)) {
            emit(events, {{"event", "hammer-proof-rejected"}});
            return std::nullopt;
        }
        return steps;
    }

    /// Runs `steps` on `session`; keeps them iff they succeed and close exactly
    /// the first subgoal. Otherwise the session is restored.
    static bool apply_closing(const std::vector<TacticStep>& steps, ProverSession& session) {
        const auto before = session.remaining_count();
        std::size_t executed = 0;
        bool ok = true;
        for (const auto& s : steps) {
            if (session.remaining_count() + 1 <= before) {
                ok = false; // script continues past the goal it was meant to close
                break;
            }
            if (!session.execute(s).ok()) {
                ok = false;
                break;
            }
            ++executed;
        }
        if (ok && session.remaining_count() + 1 == before) return true;
        session.undo(executed);
        return false;
    }

protected:
    virtual std::optional<std::string> search(const Subgoal& goal, const ProverSession& session,
                                              const HammerConfig& cfg) = 0;
};

/// Test double: a table from subgoal fingerprint to proof script.
///
/// Fixture (JSON, schema_version 1):
///     {"schema_version": 1, "proofs": [{"goal": "<display block>", "proof": "tac."}]}
class StubHammer final : public Hammer {
public:
    void add(const Subgoal& goal, std::string proof) { table_[goal.fingerprint()] = std::move(proof); }

    static StubHammer from_json(const nlohmann::json& j) {
        if (j.value("schema_version", 0) != 1) throw FormatError("unsupported hammer stub schema_version");
        StubHammer h;
        for (const auto& e : j.at("proofs"))
            h.add(parse_subgoal(e.at("goal").get<std::string>()), e.at("proof").get<std::string>());
        return h;
    }

    static StubHammer load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw FormatError("cannot open hammer stub " + path.string());
        try {
            return from_json(nlohmann::json::parse(in));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ": " + e.what());
        }
    }

protected:
    std::optional<std::string> search(const Subgoal& goal, const ProverSession&, const HammerConfig&) override {
        auto it = table_.find(goal.fingerprint());
        if (it == table_.end()) return std::nullopt;
        return it->second;
    }

private:
    std::map<std::string, std::string> table_;
};

namespace detail {

inline std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out.push_back(c);
    }
    return out + "'";
}

inline std::string substitute(std::string tmpl, const std::string& slot, const std::string& value) {
    for (auto pos = tmpl.find(slot); pos != std::string::npos; pos = tmpl.find(slot, pos + value.size()))
        tmpl.replace(pos, slot.size(), value);
    return tmpl;
}

struct ProcessResult {
    bool timed_out = false;
    int exit_code = -1;
    std::string out;
};

/// Runs `/bin/sh -c command` in its own process group, capturing stdout.
/// The whole group is killed when `timeout` elapses.
inline ProcessResult run_with_timeout(const std::string& command, std::chrono::milliseconds timeout) {
    int fds[2];
    if (pipe(fds) != 0) throw HammerSpawnError(std::string("pipe: ") + std::strerror(errno));
    pid_t pid = fork();
    if (pid < 0) {
        close(fds[0]);
        close(fds[1]);
        throw HammerSpawnError(std::string("fork: ") + std::strerror(errno));
    }
    if (pid == 0) {
        setpgid(0, 0);
        dup2(fds[1], STDOUT_FILENO);
        int devnull = open("/dev/null", O_RDWR);
        if (devnull >= 0) {
            dup2(devnull, STDIN_FILENO);
            dup2(devnull, STDERR_FILENO);
        }
        close(fds[0]);
        close(fds[1]);
        execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    setpgid(pid, pid);
    close(fds[1]);

    ProcessResult result;
    auto deadline = std::chrono::steady_clock::now() + timeout;
    char buf[4096];
    bool open_pipe = true;
    while (open_pipe) {
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) {
            result.timed_out = true;
            break;
        }
        pollfd p{fds[0], POLLIN, 0};
        int r = poll(&p, 1, static_cast<int>(std::min<long long>(left.count(), 1000)));
        if (r < 0 && errno != EINTR) break;
        if (r > 0) {
            auto n = read(fds[0], buf, sizeof buf);
            if (n > 0) result.out.append(buf, static_cast<std::size_t>(n));
            else if (n == 0 || errno != EINTR) open_pipe = false;
        }
    }
    close(fds[0]);

    int status = 0;
    if (result.timed_out) {
        kill(-pid, SIGKILL);
        waitpid(pid, &status, 0);
        return result;
    }
    // stdout closed; give the process until the deadline to exit
    while (true) {
        auto w = waitpid(pid, &status, WNOHANG);
        if (w == pid) break;
        if (w < 0 && errno != EINTR) return result;
        if (std::chrono::steady_clock::now() >= deadline) {
            result.timed_out = true;
            kill(-pid, SIGKILL);
            waitpid(pid, &status, 0);
            return result;
        }
        usleep(10000);
    }
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

} // namespace detail

/// Invokes an external hammer. The goal and its definitions are written to
/// a temporary file; a zero exit status with non-empty stdout is taken as a
/// candidate proof script, which the caller still checks on the session.
class CommandHammer final : public Hammer {
public:
    explicit CommandHammer(std::filesystem::path work_dir = std::filesystem::temp_directory_path())
        : work_dir_(std::move(work_dir)) {}

protected:
    std::optional<std::string> search(const Subgoal& goal, const ProverSession& session,
                                      const HammerConfig& cfg) override {
        if (cfg.command.empty()) throw HammerSpawnError("no hammer command configured");
        auto file = work_dir_ / ("proofagent-goal-" + std::to_string(getpid()) + "-" + goal.fingerprint() + ".txt");
        {
            std::ofstream out(file);
            if (!out) throw HammerSpawnError("cannot write " + file.string());
            auto defs = render_definitions(definitions_for(session, {goal}));
            if (!defs.empty()) out << defs << "\n\n";
            out << goal.render() << '\n';
        }
        auto cmd = detail::substitute(cfg.command, "{goal_file}", detail::shell_quote(file.string()));
        cmd = detail::substitute(cmd, "{timeout}", std::to_string(cfg.timeout_seconds));
        cmd = detail::substitute(cmd, "{threads}", std::to_string(cfg.threads));
        auto r = detail::run_with_timeout(cmd, std::chrono::seconds(cfg.timeout_seconds));
        std::error_code ec;
        std::filesystem::remove(file, ec);
        if (r.timed_out || r.exit_code != 0 || text::trim(r.out).empty()) return std::nullopt;
        return r.out;
    }

private:
    std::filesystem::path work_dir_;
};

} // namespace proofagent
