// Python bindings: a thin layer over the C++ library. JSON crosses the
// boundary as text and is decoded on the Python side.

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "soke/deto.hpp"
#include "soke/error.hpp"
#include "soke/kinematics.hpp"
#include "soke/metrics.hpp"
#include "soke/pipeline.hpp"
#include "soke/synth.hpp"

namespace py = pybind11;
using namespace soke;
using nlohmann::json;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

app::RunConfig config_from_text(const std::string& text) {
  return app::RunConfig::from_json(text.empty() ? json::object() : json::parse(text));
}

py::dict sample_to_dict(const SignSample& s) {
  const auto& m = s.motion;
  py::array_t<float> frames({m.num_frames(), m.dim()});
  std::copy(m.data().begin(), m.data().end(), frames.mutable_data());
  py::dict d;
  d["text"] = s.text;
  d["lang"] = m.language();
  d["fps"] = m.fps();
  d["frames"] = frames;
  return d;
}

MotionSequence motion_from_array(py::array_t<float, py::array::c_style | py::array::forcecast> frames,
                                 const PartLayout& layout, double fps, const std::string& lang) {
  if (frames.ndim() != 2) throw InputError("frames must be a 2-D array");
  std::vector<float> data(frames.data(), frames.data() + frames.size());
  return MotionSequence(std::move(data), static_cast<std::size_t>(frames.shape(0)), layout, fps, lang);
}

}  // namespace

PYBIND11_MODULE(_soke, m) {
  m.doc() = "Text-to-sign pipeline on synthetic data";

  // translators run newest first, so the base class goes first
  py::register_exception<Error>(m, "SokeError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<app::StageError>(m, "StageError", PyExc_RuntimeError);

  m.attr("__version__") = app::kToolVersion;

  m.def("_default_config", [] { return app::RunConfig{}.to_json().dump(); });
  m.def(
      "_load_config",
      [](const std::string& path, const std::vector<std::string>& overrides) {
        return app::load_run_config(path, overrides).to_json().dump();
      },
      py::arg("path") = "", py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "_synthesize",
      [](const std::string& config, const std::string& split) {
        const auto c = config_from_text(config);
        std::vector<SignSample> samples;
        if (split == "train") {
          samples = synthesize_dataset(c.synth, c.seed);
        } else if (split == "test") {
          samples = synthesize_test_split(c.synth, c.seed);
        } else if (split == "instances") {
          samples = synthesize_instances(c.synth, c.seed);
        } else {
          throw ConfigError("unknown split '" + split + "'");
        }
        py::list out;
        for (const auto& s : samples) out.append(sample_to_dict(s));
        return out;
      },
      py::arg("config") = "", py::arg("split") = "train");

  m.def(
      "quantize",
      [](const RowMatrix& latent, const RowMatrix& codes) {
        if (latent.cols() != codes.cols()) throw ShapeError("latent and codes differ in width");
        return deto::quantize({latent.data(), static_cast<std::size_t>(latent.size())},
                              static_cast<std::size_t>(latent.rows()),
                              {codes.data(), static_cast<std::size_t>(codes.size())},
                              static_cast<std::size_t>(codes.rows()), static_cast<std::size_t>(codes.cols()));
      },
      py::arg("latent"), py::arg("codes"), "Nearest code per latent row (lowest index on ties).");

  m.def(
      "dtw",
      [](const Eigen::MatrixXd& cost) {
        const auto r = metrics::dtw(cost);
        return py::make_tuple(r.total, r.path, r.normalized);
      },
      py::arg("cost"), "(total, path, total / path length) of the minimal monotone alignment.");

  m.def(
      "procrustes_align",
      [](const Points3& a, const Points3& b) {
        const auto al = metrics::procrustes_align(a, b);
        py::dict d;
        d["aligned"] = al.aligned;
        d["scale"] = al.transform.scale;
        d["rotation"] = al.transform.rotation;
        d["translation"] = al.transform.translation;
        d["residual"] = al.residual;
        return d;
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "forward_kinematics",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> frames, double fps) {
        const PartLayout layout{};
        const auto chain = make_default_chain(layout);
        const auto motion = motion_from_array(frames, layout, fps, "ASL");
        return forward_kinematics(motion, chain);
      },
      py::arg("frames"), py::arg("fps") = 25.0, "Joint and site positions (mm) of every frame.");

  m.def(
      "pa_mpjpe",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> a,
         py::array_t<float, py::array::c_style | py::array::forcecast> b) {
        const PartLayout layout{};
        return metrics::pa_mpjpe(motion_from_array(a, layout, 25.0, "ASL"), motion_from_array(b, layout, 25.0, "ASL"),
                                 make_default_chain(layout));
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "_run_pipeline",
      [](const std::string& config, bool force) {
        const auto c = config_from_text(config);
        metrics::EvalReport report;
        {
          py::gil_scoped_release release;
          report = app::run_pipeline(c, force);
        }
        return report.aggregates().dump();
      },
      py::arg("config"), py::arg("force") = false);

  m.def(
      "_verify_manifest", [](const std::filesystem::path& dir) { return app::verify_manifest(dir); },
      py::arg("run_dir"));
}
