#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <string>
#include <vector>

#include "nowcast/baselines.hpp"
#include "nowcast/checkpoint.hpp"
#include "nowcast/config.hpp"
#include "nowcast/data.hpp"
#include "nowcast/errors.hpp"
#include "nowcast/experiment.hpp"
#include "nowcast/metrics.hpp"
#include "nowcast/model.hpp"
#include "nowcast/pipeline.hpp"

namespace py = pybind11;
using namespace nowcast;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<float> to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<float>(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_array(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

KeyValueConfig to_config(const py::dict& d) {
  KeyValueConfig kv;
  for (const auto& [k, v] : d) kv.set(py::str(k), py::str(v));
  return kv;
}

py::dict row_dict(const MetricsRow& r) {
  py::dict d;
  d["label"] = r.label;
  d["mae"] = r.mae;
  d["f1_12"] = r.f1_12;
  d["f1_18"] = r.f1_18;
  d["f1_23"] = r.f1_23;
  d["bias"] = r.bias;
  d["ms_ssim"] = r.ms_ssim;
  d["psnr"] = r.psnr;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Radar nowcasting core: model, baselines, metrics and experiment commands.";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def_static("toy", &ModelConfig::toy)
      .def_static("default", &ModelConfig::production)
      .def_readwrite("t_in", &ModelConfig::t_in)
      .def_readwrite("t_out", &ModelConfig::t_out)
      .def_readwrite("lv_factor", &ModelConfig::lv_factor)
      .def_readwrite("target_size", &ModelConfig::target_size)
      .def_readwrite("use_lv", &ModelConfig::use_lv)
      .def_readwrite("use_hrrr", &ModelConfig::use_hrrr)
      .def_readwrite("hrrr_frames", &ModelConfig::hrrr_frames)
      .def("input_channels", &ModelConfig::input_channels)
      .def("input_side", &ModelConfig::input_side)
      .def("level_sizes", &ModelConfig::level_sizes)
      .def("validate", &ModelConfig::validate)
      .def("apply_variant", [](ModelConfig& c, const std::string& v) { apply_variant(c, parse_variant(v)); });

  py::class_<ModelParams>(m, "ModelParams")
      .def("parameter_count", &ModelParams::parameter_count)
      .def("named", [](const ModelParams& p) {
        py::dict d;
        for (const auto& [name, t] : p.named()) d[py::str(name)] = to_array(t);
        return d;
      });

  m.def("init_params", &init_params, py::arg("config"), py::arg("seed") = 1);
  m.def("parameter_manifest", &parameter_manifest);
  m.def("save_params", &save_params);
  m.def("load_params", &load_params);
  m.def(
      "forward",
      [](const FloatArray& frames, std::optional<FloatArray> hrrr, const ModelParams& params, const ModelConfig& cfg) {
        std::optional<Tensor<float>> h;
        if (hrrr) h = to_tensor(*hrrr);
        Tensor<float> y;
        {
          py::gil_scoped_release release;
          y = forward(to_tensor(frames), h, params, cfg);
        }
        return to_array(y);
      },
      py::arg("frames"), py::arg("hrrr"), py::arg("params"), py::arg("config"),
      "Model-unit forecast [B, T_o, 1, S, S].");

  m.def(
      "gen_synthetic_sequence",
      [](const py::dict& overrides, std::uint64_t seed) {
        // Reuses the experiment keys so Python and config files agree.
        KeyValueConfig kv;
        for (const auto& [k, v] : overrides) kv.set("data." + std::string(py::str(k)), py::str(v));
        auto cfg = ExperimentConfig::from_keys(kv).synthetic;
        cfg.seed = seed;
        const auto seq = gen_synthetic_sequence(cfg);
        return py::make_tuple(to_array(seq.frames), seq.minute_offsets);
      },
      py::arg("overrides") = py::dict(), py::arg("seed") = 1,
      "Returns (frames [T, H, W] dBZ, minute offsets). Keys as in the config's data.* section.");
  m.def(
      "read_sequence",
      [](const std::filesystem::path& p) {
        const auto seq = read_sequence(p);
        return py::make_tuple(to_array(seq.frames), seq.minute_offsets);
      });
  m.def("write_sequence", [](const std::filesystem::path& p, const FloatArray& frames,
                             const std::vector<std::int32_t>& offsets) {
    RadarSequence seq;
    seq.id = p.stem().string();
    seq.frames = to_tensor(frames);
    seq.minute_offsets = offsets;
    write_sequence(p, seq);
  });

  m.def("persistence_forecast",
        [](const FloatArray& frame, int t_out) { return to_array(persistence_forecast(to_tensor(frame), t_out)); });
  m.def(
      "optical_flow_forecast",
      [](const FloatArray& prev, const FloatArray& last, int t_out, double cadence_ratio) {
        return to_array(optical_flow_forecast(to_tensor(prev), to_tensor(last), t_out, cadence_ratio));
      },
      py::arg("previous"), py::arg("last"), py::arg("t_out"), py::arg("cadence_ratio") = 1.0);
  m.def("estimate_flow", [](const FloatArray& f0, const FloatArray& f1) {
    const auto flow = estimate_flow(to_tensor(f0), to_tensor(f1), FlowOptions{});
    return py::make_tuple(to_array(flow.u), to_array(flow.v));
  });

  m.def("mae", [](const FloatArray& p, const FloatArray& t) { return pointwise_errors(to_tensor(p), to_tensor(t)).mae; });
  m.def("f1_at_threshold", [](const FloatArray& p, const FloatArray& t, double th) {
    return f1_at_threshold(to_tensor(p), to_tensor(t), th);
  });
  m.def(
      "psnr", [](const FloatArray& p, const FloatArray& t, double range) { return psnr(to_tensor(p), to_tensor(t), range); },
      py::arg("pred"), py::arg("truth"), py::arg("data_range") = kDefaultDataRange);
  m.def(
      "ms_ssim",
      [](const FloatArray& p, const FloatArray& t, double range) { return ms_ssim(to_tensor(p), to_tensor(t), range); },
      py::arg("pred"), py::arg("truth"), py::arg("data_range") = kDefaultDataRange);
  m.def(
      "evaluate_run",
      [](const std::vector<FloatArray>& fcs, const std::vector<FloatArray>& truths, const std::vector<int>& leads) {
        std::vector<Tensor<float>> f, t;
        for (const auto& a : fcs) f.push_back(to_tensor(a));
        for (const auto& a : truths) t.push_back(to_tensor(a));
        const auto rep = evaluate_run(f, t, leads);
        py::list rows;
        for (const auto& r : rep.rows) rows.append(row_dict(r));
        py::dict d;
        d["lead_minutes"] = rep.lead_minutes;
        d["rows"] = rows;
        d["agg_0_2h"] = row_dict(rep.agg_0_2h);
        d["agg_0_6h"] = row_dict(rep.agg_0_6h);
        d["csv"] = rep.to_csv();
        return d;
      });

  m.def(
      "run_command",
      [](const std::string& command, const py::dict& config) {
        const auto cfg = ExperimentConfig::from_keys(to_config(config));
        py::gil_scoped_release release;
        run_command(command, cfg);
      },
      py::arg("command"), py::arg("config"),
      "Runs gen-data | train | predict | baseline | evaluate | render with flat key=value settings.");
  m.def("resolve_config", [](const py::dict& config) {
    return ExperimentConfig::from_keys(to_config(config)).to_keys().values();
  });
  m.def("gray_level", &gray_level);
}
