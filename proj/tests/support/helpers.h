#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fairmonitor/gateway.h"
#include "fairmonitor/util.h"

namespace fmtest {

namespace fs = std::filesystem;

inline fs::path source_dir() { return FM_SOURCE_DIR; }
inline fs::path cli_path() { return FM_CLI_PATH; }
inline fs::path fixture(const std::string& rel) { return source_dir() / "tests" / "fixtures" / rel; }

/// Fresh directory, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<unsigned> counter{0};
        std::random_device rd;
        path_ = fs::temp_directory_path() /
                ("fm-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    fs::path path_;
};

struct MockSetup {
    std::shared_ptr<fairmonitor::MockBackend> backend;
    std::shared_ptr<fairmonitor::Gateway> gateway;
};

inline MockSetup make_mock(fairmonitor::MockFixture fixture, int max_in_flight = 8, int delay_ms = 0) {
    fairmonitor::BackendConfig cfg;
    cfg.kind = fairmonitor::BackendKind::Mock;
    cfg.echo = true;
    cfg.max_in_flight = max_in_flight;
    cfg.rate_limit_per_min = 100000000;
    cfg.retry.base_backoff_ms = 1;
    MockSetup m;
    m.backend = std::make_shared<fairmonitor::MockBackend>(std::move(fixture), std::chrono::milliseconds(delay_ms));
    m.gateway = std::make_shared<fairmonitor::Gateway>(cfg, m.backend);
    return m;
}

inline MockSetup make_mock_file(const fs::path& path, int max_in_flight = 8) {
    return make_mock(fairmonitor::MockFixture::load(path), max_in_flight);
}

/// Deterministic uniform draws for hand-rolled generators.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}
    std::uint64_t next() { return fairmonitor::util::splitmix64(state_++); }
    /// Uniform in [0, 1) with 53 random bits.
    double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    int range(int lo, int hi) { return lo + static_cast<int>(next() % static_cast<std::uint64_t>(hi - lo + 1)); }
    template <class V>
    const auto& pick(const V& v) { return v[next() % v.size()]; }

private:
    std::uint64_t state_;
};

struct CommandResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

/// Runs the CLI with the given shell-quoted argument string.
CommandResult run_cli(const std::string& args, const fs::path& cwd = {});

/// generate -> validate-dataset -> run-static -> judge -> validate-judge -> run-dynamic -> analyze
/// -> report, all on the mock. Store in work/runs, report in work/report. Stops at the first failure.
std::vector<std::pair<std::string, CommandResult>> run_e2e(const fs::path& work);

struct KillResume {
    bool killed = false;          // the first process died from SIGKILL
    std::size_t total = 90;
    std::size_t persisted = 0;    // complete records left by the killed process
    CommandResult resumed;
};

/// Starts a slow single-model mock run-static on the sample, SIGKILLs it once
/// at least `min_lines` responses are logged, then resumes it.
KillResume kill_and_resume(const fs::path& work, std::size_t min_lines = 50);

/// Relative paths of every regular file under root, sorted.
std::vector<std::string> list_files(const fs::path& root);

/// Differences between a produced directory and a committed golden one, empty when identical.
/// With FM_UPDATE_GOLDEN=1 in the environment the golden directory is rewritten instead.
std::vector<std::string> diff_golden_dir(const fs::path& produced, const fs::path& golden);

} // namespace fmtest
