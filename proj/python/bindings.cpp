#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fsad/augselect.hpp"
#include "fsad/error.hpp"
#include "fsad/evaluation.hpp"
#include "fsad/feature_io.hpp"
#include "fsad/pipeline.hpp"
#include "fsad/synthetic.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

// JSON crosses the boundary as text; the package wraps it with json.loads.
fsad::PipelineConfig config_from(const std::string& text) {
    return text.empty() ? fsad::PipelineConfig{} : fsad::PipelineConfig::from_json(json::parse(text));
}

py::array_t<double> to_array(const fsad::FeatureMap& m) {
    py::array_t<double> a({m.channels(), m.height(), m.width()});
    std::copy(m.data().begin(), m.data().end(), a.mutable_data());
    return a;
}

fsad::FeatureMap from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 3) throw fsad::Error("feature maps are 3-D arrays (C, H, W)");
    const auto c = static_cast<std::size_t>(a.shape(0)), h = static_cast<std::size_t>(a.shape(1)),
               w = static_cast<std::size_t>(a.shape(2));
    return fsad::FeatureMap(c, h, w, std::vector<double>(a.data(), a.data() + a.size()));
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Few-shot anomaly detection on exported patch features";
    py::register_exception<fsad::Error>(m, "FsadError", PyExc_RuntimeError);

    m.def("read_features", [](const std::filesystem::path& p) { return to_array(fsad::read_feature_file(p)); },
          py::arg("path"));
    m.def("write_features",
          [](const std::filesystem::path& p, const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
              fsad::write_feature_file(p, from_array(a));
          },
          py::arg("path"), py::arg("array"));
    m.def("load_manifest", [](const std::filesystem::path& p) { return fsad::Manifest::load(p).to_json().dump(); },
          py::arg("path"));
    m.def("default_config", [] { return fsad::PipelineConfig{}.to_json().dump(); });
    m.def("validate_config", [](const std::string& text) { return config_from(text).to_json().dump(); },
          py::arg("config"));

    m.def("affine_warp",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a, const std::array<double, 6>& t) {
              return to_array(fsad::affine_warp(from_array(a), fsad::AffineTransform::from_row_major(t)));
          },
          py::arg("array"), py::arg("theta"));
    m.def("register_affine",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& moving,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& reference, double lr,
             std::size_t max_iters) {
              const auto mv = from_array(moving);
              const auto ref = from_array(reference);
              fsad::RegistrationConfig cfg;
              cfg.learning_rate = lr;
              cfg.max_iters = max_iters;
              const auto r = fsad::register_affine(mv, std::span(&ref, 1),
                                                   fsad::RegistrationHead::identity(mv.channels()), cfg);
              return py::make_tuple(r.transform.row_major(), r.final_loss, r.iterations);
          },
          py::arg("moving"), py::arg("reference"), py::arg("learning_rate") = 0.05, py::arg("max_iters") = 500);

    m.def("roc_auc",
          [](const std::vector<double>& scores, const std::vector<int>& labels) {
              if (scores.size() != labels.size()) throw fsad::Error("scores and labels differ in length");
              fsad::LabeledScores s;
              for (std::size_t i = 0; i < scores.size(); ++i) s.add(scores[i], labels[i]);
              return fsad::roc_auc(s);
          },
          py::arg("scores"), py::arg("labels"));
    m.def("gaussian_w2", &fsad::gaussian_w2, py::arg("mu1"), py::arg("s1"), py::arg("mu2"), py::arg("s2"));
    m.def("select_augmentations",
          [](const std::map<std::string, double>& w) {
              return fsad::augmentation_report_json(fsad::select(w), fsad::DistributionDistance::wasserstein).dump();
          },
          py::arg("weighted_distances"));

    m.def("fit",
          [](const std::string& config, const std::filesystem::path& manifest, const std::filesystem::path& out) {
              fsad::cmd_fit(config_from(config), manifest, out);
          },
          py::arg("config"), py::arg("manifest"), py::arg("model_out"));
    m.def("score",
          [](const std::string& config, const std::filesystem::path& model, const std::filesystem::path& manifest,
             const std::filesystem::path& out) { return fsad::cmd_score(config_from(config), model, manifest, out).dump(); },
          py::arg("config"), py::arg("model"), py::arg("manifest"), py::arg("out_dir"));
    m.def("evaluate",
          [](const std::string& config, const std::filesystem::path& manifest,
             std::optional<std::filesystem::path> model, const std::filesystem::path& report) {
              return fsad::cmd_eval(config_from(config), manifest, model, report).dump();
          },
          py::arg("config"), py::arg("manifest"), py::arg("model") = py::none(), py::arg("report_out"));
    m.def("select_aug",
          [](const std::string& config, const std::filesystem::path& manifest, const std::filesystem::path& out) {
              return fsad::cmd_select_aug(config_from(config), manifest, out).dump();
          },
          py::arg("config"), py::arg("manifest"), py::arg("report_out"));
    m.def("register",
          [](const std::string& config, const std::filesystem::path& manifest, const std::filesystem::path& out) {
              return fsad::cmd_register(config_from(config), manifest, out).dump();
          },
          py::arg("config"), py::arg("manifest"), py::arg("manifest_out"));
    m.def("bench", [](std::size_t D, std::size_t Dp, std::size_t K, std::size_t H, std::size_t W,
                      double gamma) { return fsad::cmd_bench(D, Dp, K, H, W, gamma).dump(); },
          py::arg("D"), py::arg("D_prime"), py::arg("K"), py::arg("H"), py::arg("W"), py::arg("gamma"));

    m.def("synthetic_dataset",
          [](const std::filesystem::path& dir, std::size_t support, std::size_t test_normal,
             std::size_t test_anomalous, const std::vector<std::string>& augs, std::uint64_t seed) {
              fsad::synthetic::DatasetSpec s;
              s.support = support;
              s.test_normal = test_normal;
              s.test_anomalous = test_anomalous;
              s.augmentations = augs;
              s.seed = seed;
              return fsad::synthetic::write_dataset(dir, s);
          },
          py::arg("dir"), py::arg("support") = 8, py::arg("test_normal") = 20, py::arg("test_anomalous") = 20,
          py::arg("augmentations") = std::vector<std::string>{}, py::arg("seed") = 0);
}
