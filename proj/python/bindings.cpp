#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fairmonitor/core.h"
#include "fairmonitor/error.h"
#include "fairmonitor/judge.h"
#include "fairmonitor/report.h"
#include "fairmonitor/sim.h"
#include "fairmonitor/stats.h"
#include "fairmonitor/store.h"

namespace py = pybind11;
using namespace fairmonitor;

namespace {

std::vector<JudgeVerdict> verdicts_from(const std::vector<std::pair<std::string, int>>& pairs) {
    std::vector<JudgeVerdict> out;
    for (const auto& [id, score] : pairs) {
        JudgeVerdict v;
        v.case_id = id;
        v.score = score;
        out.push_back(v);
    }
    return out;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "fairmonitor native core";

    static py::exception<Error> base(m, "FairMonitorError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::set_error(base, e.what());
        }
    });

    m.def("pearson", [](const std::vector<double>& x, const std::vector<double>& y) { return stats::pearson(x, y); });
    m.def("spearman", [](const std::vector<double>& x, const std::vector<double>& y) { return stats::spearman(x, y); });
    m.def("midranks", [](const std::vector<double>& v) { return stats::midranks(v); });
    m.def("describe", [](const std::vector<double>& v) {
        const auto s = stats::describe(v);
        py::dict d;
        d["n"] = s.n;
        d["mean"] = s.mean;
        d["median"] = s.median;
        d["q1"] = s.q1;
        d["q3"] = s.q3;
        d["iqr"] = s.iqr;
        d["min"] = s.min;
        d["max"] = s.max;
        return d;
    });

    m.def("parse_verdict", [](const std::string& raw) {
        const auto v = parse_verdict(raw);
        return py::make_tuple(v.score, v.explanation);
    });
    m.def(
        "validate_judge",
        [](const std::vector<std::pair<std::string, int>>& verdicts, const std::filesystem::path& human_csv) {
            return validate_judge(verdicts_from(verdicts), load_human_scores(human_csv)).to_json().dump();
        },
        py::arg("verdicts"), py::arg("human_csv"));

    m.def("validate_dataset", [](const std::filesystem::path& path) {
        return validate_dataset(load_dataset(path)).to_json().dump();
    });
    m.def("counts_table", [](const std::filesystem::path& path) {
        return validate_dataset(load_dataset(path)).to_table();
    });

    m.def(
        "build_batch",
        [](const std::string& theme, int n, const std::string& attribute, std::uint64_t seed) {
            const auto& info = sim::theme_info(theme);
            sim::BatchOptions bo;
            bo.seed = seed;
            auto arr = ordered_json::array();
            for (const auto& s : sim::build_batch(info.key, info.default_mode, n, sim::default_plan(attribute), bo))
                arr.push_back(to_json(s));
            return arr.dump();
        },
        py::arg("theme"), py::arg("n"), py::arg("attribute") = "gender", py::arg("seed") = 0);

    m.def(
        "build_report",
        [](const std::filesystem::path& store_dir, const std::vector<std::string>& runs) {
            Store store(store_dir);
            std::map<std::string, std::string> out;
            for (const auto& f : build_report(store, runs)) out[f.path] = f.content;
            return out;
        },
        py::arg("store"), py::arg("runs"));
}
