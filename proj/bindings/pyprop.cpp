// Python bindings for the core operations: configs, keys, the experiment
// commands, and direct policy evaluation on loaded checkpoints.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "prop/checkpoint.hpp"
#include "prop/commands.hpp"
#include "prop/config.hpp"
#include "prop/evalkit.hpp"
#include "prop/modnet.hpp"

namespace py = pybind11;
using namespace prop;

namespace {

py::dict report_to_dict(const EvalReport& report) {
    py::dict d;
    d["task"] = report.task;
    d["config_hash"] = report.config_hash;
    d["seed"] = report.seed;
    py::list cells;
    for (const auto& c : report.cells) {
        py::dict cd;
        cd["key_class"] = c.key_class;
        cd["objective"] = c.objective;
        cd["mean"] = c.mean;
        cd["stderr"] = c.stderr_;
        cd["n"] = c.n;
        cells.append(cd);
    }
    d["cells"] = cells;
    if (report.score) {
        d["score_mean"] = report.score->mean;
        d["score_stderr"] = report.score->stderr_;
    }
    if (report.privacy) {
        d["privacy_mean"] = report.privacy->mean;
        d["privacy_stderr"] = report.privacy->stderr_;
    }
    return d;
}

py::list leakage_to_list(const std::vector<LeakagePoint>& curve) {
    py::list out;
    for (const auto& p : curve) {
        py::dict d;
        d["distance"] = p.distance;
        d["mean"] = p.mean;
        d["stderr"] = p.stderr_;
        d["n"] = p.n;
        out.append(d);
    }
    return out;
}

} // namespace

PYBIND11_MODULE(_pyprop, m) {
    m.doc() = "Key-modulated personalized policies: training and evaluation";

    py::class_<Key>(m, "Key")
        .def(py::init<>())
        .def_static("null", &Key::null)
        .def_static("from_hex", &Key::from_hex, py::arg("text"))
        .def_static("from_passphrase", &Key::from_passphrase, py::arg("passphrase"),
                    py::arg("length"))
        .def_static(
            "random",
            [](int length, std::uint64_t seed) {
                Rng rng(seed);
                return Key::random(length, rng);
            },
            py::arg("length"), py::arg("seed"))
        .def("is_null", &Key::is_null)
        .def("length", &Key::length)
        .def("to_hex", &Key::to_hex)
        .def("with_flipped", &Key::with_flipped, py::arg("positions"))
        .def("__eq__", [](const Key& a, const Key& b) { return a == b; })
        .def("__repr__", [](const Key& k) { return "Key(" + k.to_hex() + ")"; });

    m.def("hamming", &hamming, py::arg("a"), py::arg("b"));

    py::class_<ExperimentConfig>(m, "ExperimentConfig")
        .def_readonly("seed", &ExperimentConfig::seed)
        .def_readonly("out_dir", &ExperimentConfig::out_dir)
        .def_readonly("key_length", &ExperimentConfig::key_length)
        .def_readonly("config_hash", &ExperimentConfig::config_hash)
        .def_property_readonly("task",
                               [](const ExperimentConfig& c) { return task_kind_name(c.task); })
        .def_property_readonly("user_keys", [](const ExperimentConfig& c) {
            std::vector<Key> keys;
            for (const auto& u : c.users) keys.push_back(u.key);
            return keys;
        });

    m.def("load_config", &load_config, py::arg("path"));
    m.def("config_from_json", &config_from_json_text, py::arg("text"),
          py::arg("origin") = "<python>");

    m.def("pretrain", &cmd_pretrain, py::arg("config"),
          "Train the base network; returns the checkpoint path.");
    m.def("personalize", &cmd_personalize, py::arg("config"), py::arg("base_checkpoint") = "",
          "Run the key-conditioned training loop; returns the checkpoint path.");
    m.def("obfuscate", &cmd_obfuscate, py::arg("config"), py::arg("base_checkpoint") = "",
          "Personalize with noise targets on wrong keys; returns the checkpoint path.");
    m.def("baseline", &cmd_baseline, py::arg("config"),
          "Train the key-concat baseline; returns the checkpoint path.");
    m.def("gradcheck", &cmd_gradcheck, py::arg("config"), py::arg("instances") = 100,
          "Finite-difference gradient check; returns the max relative error.");
    m.def(
        "evaluate",
        [](const ExperimentConfig& cfg, const std::string& ckpt, const std::string& format) {
            return report_to_dict(cmd_eval(cfg, ckpt, format));
        },
        py::arg("config"), py::arg("checkpoint"), py::arg("format") = "both");
    m.def(
        "leakage",
        [](const ExperimentConfig& cfg, const std::string& ckpt) {
            return leakage_to_list(cmd_leakage(cfg, ckpt));
        },
        py::arg("config"), py::arg("checkpoint"));

    py::class_<Checkpoint>(m, "Checkpoint")
        .def_readonly("kind", &Checkpoint::kind)
        .def_readonly("config_hash", &Checkpoint::config_hash)
        .def_property_readonly(
            "key_length", [](const Checkpoint& c) { return c.policy.key_length; })
        .def("forward", [](const Checkpoint& ckpt, const Vector& x, const Key& k) {
            return policy_fn(ckpt)(x, k);
        });

    m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
}
