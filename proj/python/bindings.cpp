#include "cpl/checkpoint.hpp"
#include "cpl/errors.hpp"
#include "cpl/experiment.hpp"
#include "cpl/metrics.hpp"
#include "cpl/task_inference.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

torch::Tensor to_tensor(const Array& a) {
    std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
    return torch::from_blob(const_cast<double*>(a.data()), shape, torch::kDouble).clone();
}

py::array_t<float> to_array(const torch::Tensor& t) {
    auto c = t.detach().to(torch::kFloat).contiguous();
    std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
    py::array_t<float> out(shape);
    std::memcpy(out.mutable_data(), c.data_ptr<float>(), sizeof(float) * static_cast<size_t>(c.numel()));
    return out;
}

cpl::ExperimentConfig config_from(const std::string& text, std::optional<uint64_t> seed, std::optional<std::string> mode,
                                  bool desk_scale) {
    auto j = cpl::json::parse(text, nullptr, true, true);
    if (seed) j["seed"] = *seed;
    if (mode) j["mode"] = *mode;
    if (desk_scale) j["desk_scale"] = true;
    return cpl::parse_config(j);
}

py::dict matrix_dict(const cpl::EvalMatrix& m) {
    py::list rows;
    for (const auto& r : m.rows) {
        py::list row;
        for (const auto& e : r) row.append(py::dict(py::arg("psnr") = e.psnr, py::arg("ssim") = e.ssim,
                                                    py::arg("inference_accuracy") = e.inference_accuracy));
        rows.append(row);
    }
    return py::dict(py::arg("num_tasks") = m.num_tasks, py::arg("rows") = rows);
}

// A checkpointed world model for prediction and task inference.
struct Model {
    cpl::LoadedCheckpoint ckpt;

    int num_tasks() const { return ckpt.state.model->config().num_tasks; }

    py::array_t<float> predict(const Array& frames, int label, int context, int horizon, uint64_t seed) {
        auto x = to_tensor(frames).to(torch::kFloat);
        if (x.dim() == 4) x = x.unsqueeze(0);
        auto ids = torch::full({x.size(0)}, label, torch::kInt64);
        auto gen = cpl::make_generator(seed);
        torch::NoGradGuard ng;
        return to_array(cpl::deploy_predict(ckpt.state.model, x, std::nullopt, ids, context, horizon, gen));
    }

    py::tuple infer(const Array& frames, uint64_t seed) {
        auto x = to_tensor(frames).to(torch::kFloat);
        auto r = cpl::infer_task(ckpt.state.model, x, std::nullopt, num_tasks(), cpl::make_generator(seed));
        return py::make_tuple(r.inferred_task, r.probe_errors);
    }
};

} // namespace

PYBIND11_MODULE(_cpl, m) {
    m.doc() = "Continual predictive learning core";
    torch::set_num_threads(1);

    py::register_exception<cpl::ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<cpl::IngestionError>(m, "IngestionError", PyExc_IOError);
    py::register_exception<cpl::NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    m.def("psnr", [](const Array& a, const Array& b, double range) {
        return cpl::psnr_frame(to_tensor(a), to_tensor(b), range);
    }, py::arg("pred"), py::arg("target"), py::arg("data_range") = 1.0);
    m.def("ssim", [](const Array& a, const Array& b, double range) {
        cpl::SsimOptions o;
        o.data_range = range;
        return cpl::ssim_frame(to_tensor(a), to_tensor(b), o);
    }, py::arg("pred"), py::arg("target"), py::arg("data_range") = 1.0);
    m.def("gaussian_kl", [](const Array& mq, const Array& lq, const Array& mp, const Array& lp) {
        return cpl::gaussian_kl({to_tensor(mq), to_tensor(lq)}, {to_tensor(mp), to_tensor(lp)}).item<double>();
    });
    m.def("fraction_count", &cpl::fraction_count);
    m.def("split_replay_volume", &cpl::split_replay_volume);
    m.def("argmin_task", &cpl::argmin_task);

    m.def("parse_config", [](const std::string& text) { return cpl::config_to_json(config_from(text, {}, {}, false)).dump(); });

    m.def("generate", [](const std::string& text, bool force, std::optional<uint64_t> seed) {
        return cpl::cmd_generate(config_from(text, seed, {}, false), force);
    }, py::arg("config"), py::arg("force") = false, py::arg("seed") = py::none());

    m.def("train", [](const std::string& text, bool resume, std::optional<uint64_t> seed, std::optional<std::string> mode,
                      bool desk_scale) {
        auto cfg = config_from(text, seed, mode, desk_scale);
        cpl::TrainOutputs out;
        {
            // autograd refuses to run while the GIL is held
            py::gil_scoped_release release;
            out = cpl::cmd_train(cfg, resume);
        }
        return py::dict(py::arg("matrix") = matrix_dict(out.state.matrix), py::arg("eval_csv") = out.eval_csv,
                        py::arg("log_csv") = out.log_csv, py::arg("checkpoint") = out.final_checkpoint);
    }, py::arg("config"), py::arg("resume") = false, py::arg("seed") = py::none(), py::arg("mode") = py::none(),
       py::arg("desk_scale") = false);

    m.def("evaluate", [](const std::string& text, const std::filesystem::path& checkpoint) {
        auto cfg = config_from(text, {}, {}, false);
        cpl::EvalOutputs out;
        {
            py::gil_scoped_release release;
            out = cpl::cmd_eval(cfg, checkpoint);
        }
        py::list tasks;
        for (const auto& s : out.scores)
            tasks.append(py::dict(py::arg("psnr") = s.psnr, py::arg("ssim") = s.ssim,
                                  py::arg("inference_accuracy") = s.inference_accuracy));
        return py::dict(py::arg("tasks") = tasks, py::arg("summary_csv") = out.summary_csv,
                        py::arg("sequences_csv") = out.sequences_csv);
    }, py::arg("config"), py::arg("checkpoint"));

    m.def("ablate", [](const std::string& text) {
        auto cfg = config_from(text, {}, {}, false);
        std::vector<cpl::AblationRow> result;
        {
            py::gil_scoped_release release;
            result = cpl::cmd_ablate(cfg);
        }
        py::list rows;
        for (const auto& r : result)
            rows.append(py::dict(py::arg("replay") = r.flags.replay, py::arg("infer_k") = r.flags.infer_k,
                                 py::arg("random_k") = r.flags.random_k, py::arg("adapt") = r.flags.adapt,
                                 py::arg("psnr") = r.psnr, py::arg("ssim") = r.ssim,
                                 py::arg("inference_accuracy") = r.inference_accuracy));
        return rows;
    });

    py::class_<Model>(m, "Model")
        .def_property_readonly("num_tasks", &Model::num_tasks)
        .def_property_readonly("completed_periods", [](const Model& s) { return s.ckpt.meta.completed_periods; })
        .def_property_readonly("mode", [](const Model& s) { return s.ckpt.meta.mode; })
        .def_property_readonly("matrix", [](const Model& s) { return matrix_dict(s.ckpt.state.matrix); })
        .def("predict", &Model::predict, py::arg("frames"), py::arg("label"), py::arg("context") = 5,
             py::arg("horizon") = 10, py::arg("seed") = 0)
        .def("infer", &Model::infer, py::arg("frames"), py::arg("seed") = 0);
    m.def("load_checkpoint", [](const std::filesystem::path& p) { return Model{cpl::load_checkpoint(p)}; });
}
