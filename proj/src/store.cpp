#include "fairmonitor/store.h"

#include <algorithm>
#include <cctype>

#include "fairmonitor/error.h"
#include "fairmonitor/util.h"

namespace fairmonitor {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kChainSeed = 0xcbf29ce484222325ULL;

const char* log_file(RecordKind k) {
    switch (k) {
    case RecordKind::Response: return "responses.jsonl";
    case RecordKind::Verdict: return "verdicts.jsonl";
    case RecordKind::Failure: return "failures.jsonl";
    case RecordKind::Transcript: return "transcripts";
    }
    return "";
}

std::optional<RunKind> parse_run_kind(std::string_view s) {
    if (s == "static") return RunKind::Static;
    if (s == "judge") return RunKind::Judge;
    if (s == "dynamic") return RunKind::Dynamic;
    return std::nullopt;
}

std::optional<RunStatus> parse_run_status(std::string_view s) {
    if (s == "running") return RunStatus::Running;
    if (s == "complete") return RunStatus::Complete;
    if (s == "aborted") return RunStatus::Aborted;
    return std::nullopt;
}

void check_safe_name(const std::string& name, const char* what) {
    const bool ok = !name.empty() && name != "." && name != ".." &&
                    std::all_of(name.begin(), name.end(), [](unsigned char c) {
                        return std::isalnum(c) || c == '-' || c == '_' || c == '.';
                    });
    if (!ok) throw StoreError(std::string("invalid ") + what + " '" + name + "'");
}

struct LineScan {
    std::vector<std::string> lines;  // complete lines only
    std::size_t complete_bytes = 0;
    bool torn_tail = false;
};

LineScan read_lines(const fs::path& path) {
    LineScan out;
    if (!fs::exists(path)) return out;
    const auto text = util::read_file(path);
    std::size_t start = 0;
    while (start < text.size()) {
        const auto nl = text.find('\n', start);
        if (nl == std::string::npos) {
            out.torn_tail = true;
            break;
        }
        out.lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
        out.complete_bytes = start;
    }
    return out;
}

} // namespace

std::string_view to_string(RunKind k) {
    switch (k) {
    case RunKind::Static: return "static";
    case RunKind::Judge: return "judge";
    case RunKind::Dynamic: return "dynamic";
    }
    return "?";
}

std::string_view to_string(RunStatus s) {
    switch (s) {
    case RunStatus::Running: return "running";
    case RunStatus::Complete: return "complete";
    case RunStatus::Aborted: return "aborted";
    }
    return "?";
}

std::string_view to_string(RecordKind k) {
    switch (k) {
    case RecordKind::Response: return "responses";
    case RecordKind::Verdict: return "verdicts";
    case RecordKind::Failure: return "failures";
    case RecordKind::Transcript: return "transcripts";
    }
    return "?";
}

ordered_json RunManifest::to_json() const {
    ordered_json j;
    j["run_id"] = run_id;
    j["kind"] = fairmonitor::to_string(kind);
    j["status"] = fairmonitor::to_string(status);
    j["created_at"] = created_at;
    j["config"] = config;
    j["counters"] = counters;
    ordered_json logs_j = ordered_json::object();
    for (const auto& [name, cp] : logs) logs_j[name] = {{"records", cp.records}, {"chain", cp.chain}};
    j["logs"] = logs_j;
    if (!sections.empty()) j["sections"] = sections;
    return j;
}

RunManifest RunManifest::from_json(const json& j) {
    RunManifest m;
    try {
        m.run_id = j.at("run_id").get<std::string>();
        auto kind = parse_run_kind(j.at("kind").get<std::string>());
        auto status = parse_run_status(j.at("status").get<std::string>());
        if (!kind || !status) throw StoreError("manifest has unknown kind or status");
        m.kind = *kind;
        m.status = *status;
        m.created_at = j.value("created_at", "");
        m.config = j.value("config", json::object());
        if (j.contains("counters"))
            m.counters = j.at("counters").get<std::map<std::string, std::int64_t>>();
        if (j.contains("logs"))
            for (const auto& [name, cp] : j.at("logs").items())
                m.logs[name] = {cp.at("records").get<std::size_t>(), cp.at("chain").get<std::string>()};
        if (j.contains("sections"))
            for (const auto& [name, v] : j.at("sections").items()) m.sections[name] = v;
    } catch (const json::exception& e) {
        throw StoreError(std::string("corrupt manifest: ") + e.what());
    }
    return m;
}

std::string record_key(RecordKind kind, const json& r) {
    switch (kind) {
    case RecordKind::Response:
        return r.at("case_id").get<std::string>() + "|" + r.at("model_id").get<std::string>();
    case RecordKind::Verdict:
        return r.at("case_id").get<std::string>() + "|" + r.at("model_id").get<std::string>();
    case RecordKind::Failure:
        return r.value("phase", "") + ":" + r.value("key", "");
    case RecordKind::Transcript:
        return r.at("scenario_id").get<std::string>();
    }
    return {};
}

// ---------------------------------------------------------------------------
// Store
// ---------------------------------------------------------------------------

Store::Store(fs::path root) : root_(std::move(root)) {}

fs::path Store::run_dir(const std::string& run_id) const {
    check_safe_name(run_id, "run_id");
    return root_ / run_id;
}

bool Store::exists(const std::string& run_id) const {
    return fs::exists(run_dir(run_id) / "manifest.json");
}

RunManifest Store::manifest(const std::string& run_id) const {
    const auto path = run_dir(run_id) / "manifest.json";
    if (!fs::exists(path)) throw StoreError("run '" + run_id + "' not found");
    try {
        return RunManifest::from_json(json::parse(util::read_file(path)));
    } catch (const json::parse_error& e) {
        throw StoreError("corrupt manifest for run '" + run_id + "': " + e.what());
    }
}

std::unique_ptr<RunHandle> Store::open_run(const std::string& run_id, RunKind kind,
                                           const json& config) {
    const auto dir = run_dir(run_id);
    if (exists(run_id)) {
        auto m = manifest(run_id);
        if (m.config != config || m.kind != kind)
            throw StoreError("run exists with different config");
        if (m.status == RunStatus::Aborted) throw StoreError("run '" + run_id + "' was aborted");
        return std::unique_ptr<RunHandle>(new RunHandle(dir, std::move(m)));
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw StoreError("cannot create run directory '" + dir.string() + "': " + ec.message());
    RunManifest m;
    m.run_id = run_id;
    m.kind = kind;
    m.config = config;
    m.created_at = util::utc_now_iso();
    auto handle = std::unique_ptr<RunHandle>(new RunHandle(dir, std::move(m)));
    handle->checkpoint();
    return handle;
}

std::unique_ptr<RunHandle> Store::attach(const std::string& run_id) {
    auto m = manifest(run_id);
    return std::unique_ptr<RunHandle>(new RunHandle(run_dir(run_id), std::move(m)));
}

std::vector<ScanItem> Store::scan(const std::string& run_id, RecordKind kind) const {
    const auto dir = run_dir(run_id);
    std::vector<ScanItem> items;
    if (kind == RecordKind::Transcript) {
        const auto tdir = dir / "transcripts";
        if (!fs::exists(tdir)) return items;
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(tdir))
            if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (std::size_t i = 0; i < files.size(); ++i) {
            ScanItem item;
            item.line = i + 1;
            try {
                item.record = json::parse(util::read_file(files[i]));
            } catch (const std::exception&) {
                item.corruption = "unreadable transcript " + files[i].filename().string();
            }
            items.push_back(std::move(item));
        }
        return items;
    }

    const auto lines = read_lines(dir / log_file(kind));
    for (std::size_t i = 0; i < lines.lines.size(); ++i) {
        ScanItem item;
        item.line = i + 1;
        try {
            item.record = json::parse(lines.lines[i]);
        } catch (const json::parse_error&) {
            item.corruption = "corrupt line " + std::to_string(i + 1);
        }
        items.push_back(std::move(item));
    }
    if (lines.torn_tail) {
        ScanItem item;
        item.line = lines.lines.size() + 1;
        item.corruption = "partial trailing line";
        items.push_back(std::move(item));
    }
    return items;
}

std::set<std::string> Store::completed_ids(const std::string& run_id, RecordKind kind) const {
    std::set<std::string> ids;
    for (const auto& item : scan(run_id, kind)) {
        if (!item.ok()) continue;
        if (kind == RecordKind::Transcript && item.record->value("status", "") != "complete")
            continue;
        try {
            ids.insert(record_key(kind, *item.record));
        } catch (const json::exception&) {
        }
    }
    return ids;
}

// ---------------------------------------------------------------------------
// RunHandle
// ---------------------------------------------------------------------------

struct RunHandle::Log {
    std::mutex mu;
    fs::path path;
    std::FILE* file = nullptr;
    std::size_t records = 0;
    std::uint64_t chain = kChainSeed;

    ~Log() {
        if (file) std::fclose(file);
    }
};

RunHandle::RunHandle(fs::path dir, RunManifest manifest)
    : run_id_(manifest.run_id), dir_(std::move(dir)), manifest_(std::move(manifest)) {
    // Verify every checkpointed prefix is unchanged before appending more.
    for (const auto& [name, cp] : manifest_.logs) {
        const auto lines = read_lines(dir_ / (name + ".jsonl"));
        if (lines.lines.size() < cp.records)
            throw StoreError("log '" + name + "' of run '" + run_id_ + "' lost records");
        std::uint64_t h = kChainSeed;
        for (std::size_t i = 0; i < cp.records; ++i) h = util::fnv1a64(lines.lines[i], h);
        if (util::hex64(h) != cp.chain)
            throw StoreError("log '" + name + "' of run '" + run_id_ + "' was modified");
    }
}

RunHandle::~RunHandle() {
    try {
        checkpoint();
    } catch (...) {
    }
}

RunManifest RunHandle::manifest() const {
    std::lock_guard lock(manifest_mu_);
    return manifest_;
}

RunHandle::Log& RunHandle::log_for(RecordKind kind) {
    std::lock_guard lock(logs_mu_);
    auto& slot = logs_[kind];
    if (slot) return *slot;
    auto log = std::make_unique<Log>();
    log->path = dir_ / log_file(kind);
    auto lines = read_lines(log->path);
    if (lines.torn_tail) fs::resize_file(log->path, lines.complete_bytes);  // drop torn write
    for (const auto& l : lines.lines) log->chain = util::fnv1a64(l, log->chain);
    log->records = lines.lines.size();
    log->file = std::fopen(log->path.c_str(), "ab");
    if (!log->file) throw StoreError("cannot open '" + log->path.string() + "' for append");
    slot = std::move(log);
    return *slot;
}

void RunHandle::append(RecordKind kind, const ordered_json& record) {
    if (kind == RecordKind::Transcript)
        throw StoreError("transcripts are written with write_transcript");
    auto& log = log_for(kind);
    std::string line = record.dump();
    line.push_back('\n');
    std::lock_guard lock(log.mu);
    if (std::fwrite(line.data(), 1, line.size(), log.file) != line.size() || std::fflush(log.file) != 0)
        throw StoreError("write to '" + log.path.string() + "' failed");
    line.pop_back();
    log.chain = util::fnv1a64(line, log.chain);
    ++log.records;
}

void RunHandle::write_transcript(const std::string& scenario_id, const ordered_json& transcript) {
    check_safe_name(scenario_id, "scenario_id");
    const auto tdir = dir_ / "transcripts";
    std::error_code ec;
    fs::create_directories(tdir, ec);
    if (ec) throw StoreError("cannot create '" + tdir.string() + "'");
    util::write_file_atomic(tdir / (scenario_id + ".json"), transcript.dump(2) + "\n");
}

void RunHandle::add_counter(const std::string& name, std::int64_t delta) {
    std::lock_guard lock(manifest_mu_);
    manifest_.counters[name] += delta;
}

void RunHandle::set_counter(const std::string& name, std::int64_t value) {
    std::lock_guard lock(manifest_mu_);
    manifest_.counters[name] = value;
}

void RunHandle::set_section(const std::string& name, const json& value) {
    std::lock_guard lock(manifest_mu_);
    manifest_.sections[name] = value;
    write_manifest_locked();
}

void RunHandle::finish(RunStatus status) {
    std::lock_guard lock(manifest_mu_);
    if (manifest_.status == status) return;
    if (manifest_.status != RunStatus::Running)
        throw StoreError("run '" + run_id_ + "' is already " +
                         std::string(fairmonitor::to_string(manifest_.status)));
    manifest_.status = status;
    write_manifest_locked();
}

void RunHandle::checkpoint() {
    std::lock_guard lock(manifest_mu_);
    write_manifest_locked();
}

void RunHandle::write_manifest_locked() {
    {
        std::lock_guard logs_lock(logs_mu_);
        for (auto& [kind, log] : logs_) {
            std::lock_guard log_lock(log->mu);
            auto name = std::string(log_file(kind));
            name = name.substr(0, name.find('.'));
            manifest_.logs[name] = {log->records, util::hex64(log->chain)};
        }
    }
    util::write_file_atomic(dir_ / "manifest.json", manifest_.to_json().dump(2) + "\n");
}

} // namespace fairmonitor
