// Python bindings: synthetic data, metrics, training and inference on numpy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rrnet/config.hpp"
#include "rrnet/dataio.hpp"
#include "rrnet/metrics.hpp"
#include "rrnet/pipeline.hpp"
#include "rrnet/selfcheck.hpp"

namespace py = pybind11;
using namespace rrnet;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

// H x W maps and H x W x 3 images; values are taken as they are.
Raster to_raster_np(const Array& a) {
  if (a.ndim() != 2 && !(a.ndim() == 3 && (a.shape(2) == 1 || a.shape(2) == 3))) {
    throw py::value_error("expected an H x W map or an H x W x 3 image");
  }
  const auto c = a.ndim() == 2 ? 1 : static_cast<std::size_t>(a.shape(2));
  Raster r(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)), c);
  std::copy(a.data(), a.data() + a.size(), r.values.begin());
  return r;
}

Array to_numpy(const Raster& r) {
  std::vector<py::ssize_t> shape{static_cast<py::ssize_t>(r.height), static_cast<py::ssize_t>(r.width)};
  if (r.channels != 1) shape.push_back(static_cast<py::ssize_t>(r.channels));
  Array out(shape);
  std::copy(r.values.begin(), r.values.end(), out.mutable_data());
  return out;
}

std::vector<Sample> to_samples(const std::vector<Array>& images, const std::vector<Array>& masks) {
  if (images.size() != masks.size()) throw py::value_error("images and masks differ in count");
  std::vector<Sample> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    Sample s{to_raster_np(images[i]), to_raster_np(masks[i]), "sample_" + std::to_string(i)};
    if (s.image.channels != 3 || s.mask.channels != 1) throw py::value_error("images are H x W x 3, masks H x W");
    for (auto& v : s.mask.values) v = v >= 0.5f ? 1.0f : 0.0f;
    out.push_back(std::move(s));
  }
  return out;
}

py::dict metrics_dict(const ImageMetrics& m) {
  py::dict d;
  d["mae"] = m.mae;
  d["f_beta"] = m.pr_valid ? py::cast(m.f_beta) : py::none();
  d["e_m"] = m.e_m;
  d["s_m"] = m.s_m;
  return d;
}

class Model {
 public:
  Model(const std::string& ablation, std::size_t size, std::uint64_t seed) : net_(make(ablation, size), seed) {}
  explicit Model(Checkpoint ck) : net_(ck.config, std::move(ck.params)) {}

  std::vector<std::tuple<std::size_t, double, double>> fit(const std::vector<Array>& images,
                                                           const std::vector<Array>& masks, std::size_t iterations,
                                                           std::size_t batch_size, double lr0, double lr1,
                                                           std::uint64_t seed, bool augment) {
    auto data = to_samples(images, masks);
    for (auto& s : data) s = resize(s, net_.config().input_height, net_.config().input_width);
    TrainOptions opt;
    opt.iterations = iterations;
    opt.batch_size = batch_size;
    opt.initial_lr = lr0;
    opt.final_lr = lr1;
    opt.seed = seed;
    opt.augment = augment;
    opt.log_every = std::max<std::size_t>(1, iterations / 20);
    std::vector<std::tuple<std::size_t, double, double>> out;
    {
      py::gil_scoped_release release;
      for (const auto& r : train(net_, data, opt)) out.emplace_back(r.iter, r.loss, r.lr);
    }
    return out;
  }

  Array predict(const Array& image) const {
    const Raster r = to_raster_np(image);
    if (r.channels != 3) throw py::value_error("predict expects an H x W x 3 image");
    Raster map;
    {
      py::gil_scoped_release release;
      map = predict_raster(net_, r);
    }
    return to_numpy(map);
  }

  void save(const std::string& path) const { save_checkpoint(path, net_.params(), net_.config()); }
  std::string config_text() const { return net_.config().to_text(); }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : net_.params().entries()) n += e.value.numel();
    return n;
  }

 private:
  static NetworkConfig make(const std::string& ablation, std::size_t size) {
    NetworkConfig base;
    base.input_height = base.input_width = size;
    auto cfg = ablation_config(ablation, base);
    cfg.validate();
    return cfg;
  }

  RRNet<float> net_;
};

}  // namespace

PYBIND11_MODULE(rrnet, m) {
  m.doc() = "Salient object detection with graph relational reasoning and parallel multi-scale attention";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<MetricError>(m, "MetricError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def(
      "synth_dataset",
      [](std::size_t n, std::uint64_t seed, std::size_t size) {
        py::list out;
        for (const auto& s : synth_dataset(n, seed, size)) out.append(py::make_tuple(to_numpy(s.image), to_numpy(s.mask)));
        return out;
      },
      py::arg("n"), py::arg("seed") = 7, py::arg("size") = 64,
      "List of (image H x W x 3, mask H x W) float32 pairs from the synthetic shapes generator.");

  m.def("mae", [](const Array& s, const Array& gt) { return mae(to_raster_np(s), to_raster_np(gt)); });
  m.def(
      "f_measure",
      [](const Array& s, const Array& gt, bool adaptive) {
        MetricOptions opt;
        opt.adaptive_f = adaptive;
        return f_measure(to_raster_np(s), to_raster_np(gt), opt);
      },
      py::arg("s"), py::arg("gt"), py::arg("adaptive") = false);
  m.def("e_measure", [](const Array& s, const Array& gt) { return e_measure(to_raster_np(s), to_raster_np(gt)); });
  m.def("s_measure", [](const Array& s, const Array& gt) { return s_measure(to_raster_np(s), to_raster_np(gt)); });
  m.def(
      "evaluate", [](const Array& s, const Array& gt) { return metrics_dict(evaluate_image(to_raster_np(s), to_raster_np(gt), "")); },
      "MAE, max F (None for all-background ground truth), E-measure and S-measure of one map.");

  py::class_<Model>(m, "Model")
      .def(py::init<const std::string&, std::size_t, std::uint64_t>(), py::arg("ablation") = "full",
           py::arg("size") = 64, py::arg("seed") = 7)
      .def_static(
          "load", [](const std::string& path) { return Model(load_checkpoint(path)); }, py::arg("path"))
      .def("fit", &Model::fit, py::arg("images"), py::arg("masks"), py::arg("iterations") = 2000,
           py::arg("batch_size") = 8, py::arg("lr0") = 5e-5, py::arg("lr1") = 5e-7, py::arg("seed") = 7,
           py::arg("augment") = true, "Trains with ADAM; returns the (iteration, loss, lr) log.")
      .def("predict", &Model::predict, py::arg("image"))
      .def("save", &Model::save, py::arg("path"))
      .def_property_readonly("config", &Model::config_text)
      .def_property_readonly("parameter_count", &Model::parameter_count);

  m.def(
      "self_check",
      [](unsigned seed) {
        std::vector<std::tuple<std::string, bool, std::string>> out;
        for (const auto& r : run_self_check(seed)) out.emplace_back(r.name, r.passed, r.detail);
        return out;
      },
      py::arg("seed") = 1);
}
