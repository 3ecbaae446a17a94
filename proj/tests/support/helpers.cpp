#include "helpers.h"

#include "fairmonitor/store.h"

#include <cstdio>
#include <cstdlib>
#include <csignal>
#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <thread>

#include <algorithm>
#include <set>

namespace fmtest {

CommandResult run_cli(const std::string& args, const fs::path& cwd) {
    TempDir scratch;
    const auto out = scratch / "stdout";
    const auto err = scratch / "stderr";
    std::string cmd;
    if (!cwd.empty()) cmd += "cd '" + cwd.string() + "' && ";
    cmd += "'" + cli_path().string() + "' " + args + " >'" + out.string() + "' 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    CommandResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = fairmonitor::util::read_file(out);
    r.err = fairmonitor::util::read_file(err);
    return r;
}

std::vector<std::pair<std::string, CommandResult>> run_e2e(const fs::path& work) {
    const auto src = source_dir().string();
    const auto q = [](const fs::path& p) { return "'" + p.string() + "'"; };
    const auto store = "--store " + q(work / "runs");
    const std::vector<std::pair<std::string, std::string>> steps{
        {"generate", "generate --config " + q(src + "/configs/generate.toml") + " --out " + q(work / "gen.jsonl")},
        {"validate-dataset", "validate-dataset " + q(work / "gen.jsonl")},
        {"run-static", "run-static --config " + q(src + "/configs/static.toml") + " " + store + " --dataset " +
                           q(work / "gen.jsonl") + " --run-id gen"},
        {"judge", "judge --config " + q(src + "/configs/static.toml") + " " + store + " --run gen"},
        {"validate-judge",
         "validate-judge " + store + " --run gen --human " + q(fixture("e2e/human.csv")) + " --out " +
             q(work / "correlation.json")},
        {"run-dynamic", "run-dynamic --mock " + q(src + "/fixtures/mock/sim.jsonl") + " " + store +
                            " --theme club --n 4 --seed 3 --run-id dyn"},
        {"analyze", "analyze " + store + " --run dyn --metric club --format csv --out " + q(work / "club.csv")},
        {"report", "report " + store + " --run gen --run dyn --out " + q(work / "report")},
    };
    std::vector<std::pair<std::string, CommandResult>> out;
    for (const auto& [name, args] : steps) {
        out.emplace_back(name, run_cli(args, work));
        if (out.back().second.exit_code != 0) break;
    }
    return out;
}

KillResume kill_and_resume(const fs::path& work, std::size_t min_lines) {
    const auto dataset = source_dir() / "data" / "sample_dataset.jsonl";
    const auto mock = source_dir() / "fixtures" / "mock" / "static.jsonl";
    const auto cli = cli_path().string();
    const auto store = (work / "runs").string();
    KillResume kr;
    const pid_t pid = fork();
    if (pid < 0) return kr;
    if (pid == 0) {
        const int devnull = open("/dev/null", O_WRONLY);
        dup2(devnull, 1);
        dup2(devnull, 2);
        execl(cli.c_str(), cli.c_str(), "run-static", "--store", store.c_str(), "--dataset", dataset.c_str(),
              "--mock", mock.c_str(), "--mock-delay-ms", "20", "--concurrency", "1", "--model", "m", "--run-id", "k",
              static_cast<char*>(nullptr));
        _exit(127);
    }
    const auto log = work / "runs" / "k" / "responses.jsonl";
    auto lines = [&] {
        if (!fs::exists(log)) return std::size_t{0};
        const auto text = fairmonitor::util::read_file(log);
        return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
    };
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(30);
    while (lines() < min_lines && std::chrono::steady_clock::now() < deadline)
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    kill(pid, SIGKILL);
    int status = 0;
    waitpid(pid, &status, 0);
    kr.killed = WIFSIGNALED(status) && WTERMSIG(status) == SIGKILL;
    fairmonitor::Store s(work / "runs");
    kr.persisted = s.completed_ids("k", fairmonitor::RecordKind::Response).size();
    kr.resumed = run_cli("run-static --store runs --dataset '" + dataset.string() + "' --mock '" + mock.string() +
                             "' --model m --run-id k",
                         work);
    return kr;
}

std::vector<std::string> list_files(const fs::path& root) {
    std::vector<std::string> out;
    if (!fs::exists(root)) return out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root).generic_string());
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::string> diff_golden_dir(const fs::path& produced, const fs::path& golden) {
    const auto files = list_files(produced);
    if (const char* env = std::getenv("FM_UPDATE_GOLDEN"); env && std::string(env) == "1") {
        fs::remove_all(golden);
        for (const auto& f : files) {
            fs::create_directories((golden / f).parent_path());
            fs::copy_file(produced / f, golden / f);
        }
        return {};
    }
    std::vector<std::string> diffs;
    const auto expected = list_files(golden);
    const std::set<std::string> have(files.begin(), files.end());
    for (const auto& f : expected)
        if (!have.contains(f)) diffs.push_back("missing " + f);
    for (const auto& f : files) {
        if (!fs::exists(golden / f)) diffs.push_back("unexpected " + f);
        else if (fairmonitor::util::read_file(produced / f) != fairmonitor::util::read_file(golden / f))
            diffs.push_back("differs " + f);
    }
    return diffs;
}

} // namespace fmtest
