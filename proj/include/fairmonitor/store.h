#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fairmonitor/core.h"

namespace fairmonitor {

enum class RunKind { Static, Judge, Dynamic };
enum class RunStatus { Running, Complete, Aborted };
enum class RecordKind { Response, Verdict, Failure, Transcript };

std::string_view to_string(RunKind k);
std::string_view to_string(RunStatus s);
std::string_view to_string(RecordKind k);

/// Number of complete lines covered and the running FNV chain over them.
struct LogCheckpoint {
    std::size_t records = 0;
    std::string chain;
};

struct RunManifest {
    std::string run_id;
    RunKind kind = RunKind::Static;
    json config;
    std::string created_at;
    RunStatus status = RunStatus::Running;
    std::map<std::string, std::int64_t> counters;
    std::map<std::string, LogCheckpoint> logs;
    /// Extra phases attached to the run (the judge pass over a static run).
    std::map<std::string, json> sections;

    ordered_json to_json() const;
    static RunManifest from_json(const json& j);
};

/// One line (or transcript file) read back from a run.
struct ScanItem {
    std::optional<json> record;
    std::size_t line = 0;
    /// Set when the record could not be read: a torn trailing line or a
    /// corrupt entry. Scanning continues past it.
    std::string corruption;

    bool ok() const { return record.has_value(); }
};

/// Canonical key used for resume bookkeeping: "case|model" for responses and
/// verdicts, scenario_id for transcripts.
std::string record_key(RecordKind kind, const json& record);

class RunHandle;

/// Directory-backed run store:
///   <root>/<run_id>/manifest.json
///   <root>/<run_id>/responses.jsonl | verdicts.jsonl | failures.jsonl
///   <root>/<run_id>/transcripts/<scenario_id>.json
class Store {
public:
    explicit Store(std::filesystem::path root);

    const std::filesystem::path& root() const noexcept { return root_; }
    std::filesystem::path run_dir(const std::string& run_id) const;
    bool exists(const std::string& run_id) const;
    RunManifest manifest(const std::string& run_id) const;

    /// Creates the run, or reopens it when the stored config is identical.
    /// Throws StoreError("run exists with different config") otherwise.
    std::unique_ptr<RunHandle> open_run(const std::string& run_id, RunKind kind, const json& config);
    /// Reopens an existing run regardless of config (used by later phases).
    std::unique_ptr<RunHandle> attach(const std::string& run_id);

    std::vector<ScanItem> scan(const std::string& run_id, RecordKind kind) const;
    std::set<std::string> completed_ids(const std::string& run_id, RecordKind kind) const;

private:
    std::filesystem::path root_;
};

/// Write side of a run. append() is safe to call from many threads; lines
/// are serialized through one mutex per log, written whole and flushed.
class RunHandle {
public:
    RunHandle(const RunHandle&) = delete;
    RunHandle& operator=(const RunHandle&) = delete;
    ~RunHandle();

    const std::string& run_id() const noexcept { return run_id_; }
    std::filesystem::path dir() const { return dir_; }
    RunManifest manifest() const;

    void append(RecordKind kind, const ordered_json& record);
    void write_transcript(const std::string& scenario_id, const ordered_json& transcript);

    void add_counter(const std::string& name, std::int64_t delta);
    void set_counter(const std::string& name, std::int64_t value);
    void set_section(const std::string& name, const json& value);
    /// Running -> Complete | Aborted. Re-finishing with the same status is a no-op.
    void finish(RunStatus status);
    /// Persists log checkpoints and counters to the manifest.
    void checkpoint();

private:
    friend class Store;
    struct Log;

    RunHandle(std::filesystem::path dir, RunManifest manifest);
    Log& log_for(RecordKind kind);
    void write_manifest_locked();

    std::string run_id_;
    std::filesystem::path dir_;
    mutable std::mutex manifest_mu_;
    RunManifest manifest_;
    std::mutex logs_mu_;
    std::map<RecordKind, std::unique_ptr<Log>> logs_;
};

} // namespace fairmonitor
