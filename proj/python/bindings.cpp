#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "graftnet/config.hpp"
#include "graftnet/data.hpp"
#include "graftnet/error.hpp"
#include "graftnet/gradcheck_suite.hpp"
#include "graftnet/losses.hpp"
#include "graftnet/metrics.hpp"
#include "graftnet/trainer.hpp"

namespace py = pybind11;
using namespace graftnet;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

GrayMap to_map(const Array& a, const char* what) {
  if (a.ndim() != 2) throw DimensionError(std::string(what) + " must be a 2-D array");
  const auto h = std::size_t(a.shape(0)), w = std::size_t(a.shape(1));
  return GrayMap(h, w, std::vector<double>(a.data(), a.data() + h * w));
}

Array from_map(const GrayMap& m) {
  Array out({m.height, m.width});
  std::copy(m.values.begin(), m.values.end(), out.mutable_data());
  return out;
}

Array from_image(const Image& img) {
  Array out(img.channels == 1 ? std::vector<std::size_t>{img.height, img.width}
                              : std::vector<std::size_t>{img.height, img.width, img.channels});
  std::copy(img.values.begin(), img.values.end(), out.mutable_data());
  return out;
}

Image to_image(const Array& a) {
  if (a.ndim() == 2) {
    Image img(std::size_t(a.shape(0)), std::size_t(a.shape(1)), 1);
    std::copy(a.data(), a.data() + a.size(), img.values.begin());
    return img;
  }
  if (a.ndim() != 3 || (a.shape(2) != 1 && a.shape(2) != 3)) {
    throw DimensionError("image must be HxW or HxWx3");
  }
  Image img(std::size_t(a.shape(0)), std::size_t(a.shape(1)), std::size_t(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), img.values.begin());
  return img;
}

template <Real T>
Tensor<T> to_tensor(const Array& a) {
  Shape shape;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(std::size_t(a.shape(i)));
  return Tensor<T>(shape, std::vector<T>(a.data(), a.data() + a.size()));
}

template <Real T>
py::object from_tensor(const Tensor<T>& t) {
  if (!t.defined()) return py::none();
  std::vector<std::size_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  const auto v = t.values();
  std::copy(v.begin(), v.end(), out.mutable_data());
  return std::move(out);
}

Tensor<double> optional_tensor(const py::object& o) {
  if (o.is_none()) return {};
  return to_tensor<double>(o.cast<Array>());
}

py::dict eval_dict(const EvalResult& r) {
  py::dict d;
  d["mae"] = r.mae;
  d["f_max"] = r.f_max;
  d["f_curve"] = std::vector<double>(r.f_curve.begin(), r.f_curve.end());
  d["s_measure"] = r.s_measure;
  d["e_measure"] = r.e_measure;
  d["bde"] = r.bde;
  d["f_degenerate"] = r.f_degenerate;
  d["bde_degenerate"] = r.bde_degenerate;
  return d;
}

class Model {
 public:
  explicit Model(Checkpoint ckpt) : ckpt_(std::move(ckpt)) {}

  static Model from_config(const std::string& config_text) {
    Checkpoint c;
    c.config = parse_config(config_text);
    c.net = std::make_unique<GraftNet<float>>(c.config.model);
    return Model(std::move(c));
  }

  py::dict forward(const Array& images) {
    TapeScope<float> no_tape(nullptr);
    const auto o = ckpt_.net->forward(to_tensor<float>(images), false);
    py::dict d;
    d["pred"] = from_tensor(o.pred);
    d["rp"] = from_tensor(o.rp);
    d["sp"] = from_tensor(o.sp);
    d["cam"] = from_tensor(o.cam);
    return d;
  }

  Array predict(const Array& image) {
    const Image img = to_image(image);
    return from_map(graftnet::predict(*ckpt_.net, img, img.height, img.width));
  }

  void save(const std::string& dir) const { save_checkpoint(dir, ckpt_); }
  std::string config() const { return format_config(ckpt_.config); }
  std::size_t parameter_count() const { return ckpt_.net->params().parameter_count(); }

 private:
  Checkpoint ckpt_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "graftnet core bindings";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<CapacityError>(m, "CapacityError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  // Images and data.
  m.def("read_pnm", [](const std::string& path) { return from_image(read_pnm(path)); }, py::arg("path"));
  m.def("write_pnm", [](const std::string& path, const Array& image) { write_pnm(path, to_image(image)); },
        py::arg("path"), py::arg("image"));
  m.def(
      "synth_sample",
      [](std::size_t index, std::size_t hw, std::uint64_t seed, const std::string& difficulty) {
        const auto s = synth_sample(index, hw, seed, parse_difficulty(difficulty));
        return py::make_tuple(from_image(s.image), from_map(s.mask), s.id);
      },
      py::arg("index"), py::arg("hw") = 64, py::arg("seed") = 7, py::arg("difficulty") = "mixed");
  m.def(
      "synth_generate",
      [](std::size_t n, std::size_t hw, std::uint64_t seed, const std::string& difficulty, const std::string& out) {
        return synth_generate(n, hw, seed, parse_difficulty(difficulty), out).entries.size();
      },
      py::arg("n"), py::arg("hw"), py::arg("seed"), py::arg("difficulty"), py::arg("out_dir"));
  m.def(
      "boundary_count", [](const Array& mask) { return boundary_pixels(to_map(mask, "mask")).size(); },
      py::arg("mask"));

  // Tensor ops without gradients.
  m.def(
      "bilinear_resize",
      [](const Array& x, std::size_t h, std::size_t w) {
        TapeScope<double> no_tape(nullptr);
        return from_tensor(bilinear_resize(to_tensor<double>(x), h, w));
      },
      py::arg("x"), py::arg("height"), py::arg("width"));

  // Losses.
  m.def(
      "attn_matrix", [](const Array& mask) { return from_tensor(attn_matrix(to_tensor<double>(mask))); },
      py::arg("mask"));
  m.def(
      "agl",
      [](const Array& g_a, const Array& cam, const Array& rp_a, const Array& sp_a, double beta) {
        return agl(to_tensor<double>(g_a), to_tensor<double>(cam), to_tensor<double>(rp_a), to_tensor<double>(sp_a),
                   beta)
            .item();
      },
      py::arg("g_a"), py::arg("cam"), py::arg("rp_a"), py::arg("sp_a"), py::arg("beta") = 1.0);
  m.def(
      "total_loss",
      [](const Array& pred, const py::object& rp, const py::object& sp, const py::object& cam, const Array& mask,
         double beta) {
        const auto l = total_loss(to_tensor<double>(pred), optional_tensor(rp), optional_tensor(sp),
                                  optional_tensor(cam), to_tensor<double>(mask), beta);
        py::dict d;
        d["total"] = l.total.item();
        d["bce_p"] = l.bce_p;
        d["iou_p"] = l.iou_p;
        d["agl"] = l.agl;
        d["aux"] = l.aux;
        return d;
      },
      py::arg("pred"), py::arg("rp"), py::arg("sp"), py::arg("cam"), py::arg("mask"), py::arg("beta") = 1.0);

  // Metrics. P and G are 2-D arrays with values in [0, 1].
  m.def("mae", [](const Array& p, const Array& g) { return mae(to_map(p, "p"), to_map(g, "g")); });
  m.def("f_measure", [](const Array& p, const Array& g) {
    const auto f = f_measure_curve(to_map(p, "p"), to_map(g, "g"));
    return py::make_tuple(std::vector<double>(f.curve.begin(), f.curve.end()), f.f_max, f.degenerate);
  });
  m.def("s_measure", [](const Array& p, const Array& g) { return s_measure(to_map(p, "p"), to_map(g, "g")); });
  m.def("e_measure", [](const Array& p, const Array& g) { return e_measure(to_map(p, "p"), to_map(g, "g")); });
  m.def(
      "bde",
      [](const Array& p, const Array& g, double threshold) {
        const auto r = bde(to_map(p, "p"), to_map(g, "g"), threshold);
        return py::make_tuple(r.value, r.degenerate);
      },
      py::arg("p"), py::arg("g"), py::arg("threshold") = 0.5);
  m.def("evaluate", [](const Array& p, const Array& g) { return eval_dict(evaluate(to_map(p, "p"), to_map(g, "g"))); });

  // Config, training and models.
  m.def("parse_config", [](const std::string& text) { return format_config(parse_config(text)); },
        "Validates a key = value config and returns it with every key filled in.");
  m.def(
      "learning_rate", &learning_rate, py::arg("step"), py::arg("total_steps"), py::arg("warmup_fraction"),
      py::arg("max_lr"));
  m.def(
      "train",
      [](const std::string& config_text, const std::string& manifest, const std::string& out_dir,
         const std::string& val_manifest, std::size_t max_steps) {
        const auto config = parse_config(config_text);
        const auto data = read_manifest(manifest);
        DatasetManifest val;
        if (!val_manifest.empty()) val = read_manifest(val_manifest);
        TrainOptions opts;
        opts.threads = worker_threads();
        opts.max_steps = max_steps;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train_to_dir(config, data, val_manifest.empty() ? nullptr : &val, out_dir, opts);
        }
        std::vector<double> losses, val_mae;
        for (const auto& s : r.steps) losses.push_back(s.total);
        for (const auto& e : r.epochs) val_mae.push_back(e.val_mae);
        py::dict d;
        d["losses"] = losses;
        d["val_mae"] = val_mae;
        d["final_val_mae"] = r.final_val_mae;
        return d;
      },
      py::arg("config"), py::arg("manifest"), py::arg("out_dir"), py::arg("val_manifest") = "",
      py::arg("max_steps") = 0);

  py::class_<Model>(m, "Model")
      .def(py::init(&Model::from_config), py::arg("config") = "", "Freshly initialised model from config text.")
      .def_static("load", [](const std::string& dir) { return Model(load_checkpoint(dir)); }, py::arg("ckpt_dir"))
      .def("forward", &Model::forward, py::arg("images"), "NCHW images in [0,1]; returns pred, rp, sp, cam.")
      .def("predict", &Model::predict, py::arg("image"), "HxWx3 image in [0,1]; saliency map at the same size.")
      .def("save", &Model::save, py::arg("ckpt_dir"))
      .def_property_readonly("config", &Model::config)
      .def_property_readonly("parameter_count", &Model::parameter_count);

  m.def(
      "gradcheck",
      [](const std::vector<std::string>& ops, const std::vector<std::uint64_t>& seeds) {
        py::list out;
        for (const auto& r : run_gradcheck_suite(ops, seeds)) {
          py::dict d;
          d["name"] = r.name;
          d["seed"] = r.seed;
          d["max_rel_error"] = r.max_rel_error;
          d["tolerance"] = r.tolerance;
          d["passed"] = r.passed();
          out.append(d);
        }
        return out;
      },
      py::arg("ops") = std::vector<std::string>{}, py::arg("seeds") = std::vector<std::uint64_t>{1});
  m.def("gradcheck_names", &gradcheck_names);
}
