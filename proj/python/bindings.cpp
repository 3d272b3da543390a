#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "w2s/config.hpp"
#include "w2s/error.hpp"
#include "w2s/evaluation.hpp"
#include "w2s/pipeline.hpp"
#include "w2s/poison.hpp"
#include "w2s/util.hpp"

namespace py = pybind11;
using namespace w2s;

namespace {

py::dict eval_dict(const EvalReport& e) {
    py::dict d;
    d["ca"] = e.ca;
    d["asr"] = e.asr;
    d["ca_correct"] = e.ca_correct;
    d["n_clean"] = e.n_clean;
    d["asr_hits"] = e.asr_hits;
    d["n_triggered"] = e.n_triggered;
    return d;
}

ExperimentConfig load(const std::filesystem::path& path, std::optional<std::uint64_t> seed) {
    auto c = parse_config(path);
    if (seed) c.seed = *seed;
    c.validate();
    return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "weak-to-strong backdoor transfer lab";

    // Library errors surface as w2slab.Error with the CLI exit code attached.
    static py::handle error_type = py::exception<Error>(m, "Error").release();
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object err = py::reinterpret_borrow<py::object>(error_type)(e.what());
            err.attr("exit_code") = exit_code_for(e.kind());
            PyErr_SetObject(error_type.ptr(), err.ptr());
        }
    });

    m.def("environment_fingerprint", &environment_fingerprint);

    m.def("stage_seeds", [](std::uint64_t master) {
        const auto s = StageSeeds::derive(master);
        py::dict d;
        d["split"] = s.split;
        d["poison"] = s.poison;
        d["triggered"] = s.triggered;
        d["teacher_init"] = s.teacher_init;
        d["projection_init"] = s.projection_init;
        d["teacher_train"] = s.teacher_train;
        d["student_init"] = s.student_init;
        d["student_pretrain"] = s.student_pretrain;
        d["adapter_init"] = s.adapter_init;
        d["student_train"] = s.student_train;
        d["mi"] = s.mi;
        return d;
    }, py::arg("master"));

    m.def("config_snapshot", [](const std::filesystem::path& path, std::optional<std::uint64_t> seed) {
        return load(path, seed).snapshot();
    }, py::arg("path"), py::arg("seed") = py::none());

    m.def("run", [](const std::filesystem::path& config, const std::filesystem::path& out,
                    std::optional<std::uint64_t> seed) {
        const auto c = load(config, seed);
        RunArtifacts a;
        {
            py::gil_scoped_release release;
            a = run_pipeline(c, out);
        }
        py::dict d;
        d["dir"] = a.dir;
        d["run_id"] = a.run_id;
        d["config_hash"] = a.config_hash;
        d["report"] = read_file(a.report);
        std::vector<std::string> files;
        for (const auto& f : a.files) files.push_back(f.generic_string());
        d["files"] = files;
        return d;
    }, py::arg("config"), py::arg("out"), py::arg("seed") = py::none(),
       "Full pipeline into <out>/<run id>; returns the run directory, id and report text.");

    m.def("evaluate_arms", [](const std::filesystem::path& config, std::optional<std::uint64_t> seed) {
        const auto c = load(config, seed);
        PipelineResult r;
        {
            py::gil_scoped_release release;
            r = execute_pipeline(c);
        }
        py::dict d;
        for (const auto& arm : r.arms) d[py::str(std::string(arm_name(arm.arm)))] = eval_dict(arm.eval);
        if (r.clean_reference) d["clean"] = eval_dict(r.clean_reference->eval);
        if (r.teacher_eval) d["teacher"] = eval_dict(*r.teacher_eval);
        return d;
    }, py::arg("config"), py::arg("seed") = py::none());

    m.def("plugin_mutual_information", &plugin_mutual_information, py::arg("joint"));

    m.def("insert_trigger", [](const std::string& text, const std::string& kind, const std::string& position,
                               std::uint64_t seed) {
        TriggerSpec spec;
        switch (parse_trigger_kind(kind)) {
            case TriggerKind::rare_token: spec = TriggerSpec::rare_token(); break;
            case TriggerKind::sentence: spec = TriggerSpec::sentence(); break;
            case TriggerKind::prompt_prefix: spec = TriggerSpec::prompt_prefix(); break;
        }
        spec.position = parse_trigger_position(position);
        return insert_trigger(tokenize(text), spec, seed);
    }, py::arg("text"), py::arg("kind") = "rare-token", py::arg("position") = "end", py::arg("seed") = 0);
}
