#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "swimvg/trainer.hpp"
#include "swimvg/version.hpp"

namespace py = pybind11;
using namespace swimvg;

namespace {

using Box = std::array<double, 4>;
using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::object to_python(const nlohmann::ordered_json& j) { return py::module_::import("json").attr("loads")(j.dump()); }
py::object to_python(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

Json from_python(const py::object& obj) {
  return Json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

BoundingBox box_of(const Box& b) { return {b[0], b[1], b[2], b[3]}; }
Box tuple_of(const BoundingBox& b) { return {b.cx, b.cy, b.w, b.h}; }

ModelConfig config_of(const py::object& cfg) {
  if (py::isinstance<py::str>(cfg)) {
    const auto name = cfg.cast<std::string>();
    return validate_config(name == "paper" ? paper_profile() : (name == "toy" ? toy_profile() : Json::parse(name)));
  }
  return validate_config(from_python(cfg));
}

// Copies an (S, S, 3) array into a contiguous float buffer.
std::vector<float> pixels_of(const FloatArray& image) {
  if (image.ndim() != 3) {
    throw Error(ErrorKind::ShapeMismatch, "image", "expected an (H, W, C) array");
  }
  return std::vector<float>(image.data(), image.data() + image.size());
}

ImageView view_of(const std::vector<float>& pixels, const FloatArray& image) {
  return ImageView{pixels, static_cast<int>(image.shape(0)), static_cast<int>(image.shape(1)),
                   static_cast<int>(image.shape(2))};
}

py::dict sample_dict(const SyntheticSample& s) {
  const auto side = static_cast<py::ssize_t>(s.view().height);
  FloatArray image({side, side, static_cast<py::ssize_t>(3)});
  std::copy(s.image.begin(), s.image.end(), image.mutable_data());
  py::dict d;
  d["seed"] = s.seed;
  d["image"] = image;
  d["expression"] = s.expression;
  d["word_ids"] = s.word_ids;
  d["gt_box"] = tuple_of(s.gt_box);
  d["ambiguous"] = s.ambiguous;
  return d;
}

py::dict budget_dict(const ParamBudget& b) {
  py::dict groups;
  for (const auto& [g, n] : b.per_group) {
    groups[py::str(std::string(to_string(g)))] = n;
  }
  py::dict d;
  d["frozen"] = b.frozen_count;
  d["tunable"] = b.tunable_count;
  d["tunable_fraction"] = b.tunable_fraction;
  d["groups"] = groups;
  return d;
}

class PyModel {
 public:
  explicit PyModel(Model<float> model) : model_(std::move(model)), state_(initial_state(model_)) {}

  Box forward(const FloatArray& image, const std::vector<int>& word_ids) const {
    const auto pixels = pixels_of(image);
    const auto out = model_.forward(view_of(pixels, image), word_ids, nullptr);
    return {out[0], out[1], out[2], out[3]};
  }

  py::array_t<double> attention_grid(const FloatArray& image, const std::vector<int>& word_ids,
                                     const std::string& query) const {
    if (query != "reg" && query != "swip") {
      throw Error(ErrorKind::InvalidValue, "query", "expected \"reg\" or \"swip\"");
    }
    const auto pixels = pixels_of(image);
    ForwardCache<float> cache;
    model_.forward(view_of(pixels, image), word_ids, &cache);
    const Mat<double> grid = model_.attention_grid(cache, query == "reg" ? AttentionQuery::Reg : AttentionQuery::Swip);
    py::array_t<double> out({grid.rows(), grid.cols()});
    std::copy(grid.data(), grid.data() + grid.size(), out.mutable_data());
    return out;
  }

  py::object train(std::size_t n_train, std::size_t n_eval, int epochs) {
    auto cfg = model_.config();
    cfg.epochs = epochs;
    cfg.eval_every = epochs;
    const auto split = make_split(GenConfig::from_model(cfg), n_train, n_eval, cfg.data_seed);
    Model<float> run(cfg, LayoutOnly{});
    std::copy(model_.params().values().begin(), model_.params().values().end(), run.params().values().begin());
    const auto result = swimvg::train<float>(run, state_, split, {});
    std::copy(run.params().values().begin(), run.params().values().end(), model_.params().values().begin());
    return to_python(to_json(result.final_eval));
  }

  py::object evaluate(std::size_t count, std::uint64_t seed) const {
    const auto samples = generate_range(GenConfig::from_model(model_.config()), count, seed, true);
    return to_python(to_json(swimvg::evaluate<float>(model_, samples, kDefaultThresholds, state_.step)));
  }

  void save(const std::filesystem::path& path) const { save_checkpoint(model_, state_, path); }

  static PyModel load(const std::filesystem::path& path) {
    auto ck = load_checkpoint<float>(path);
    PyModel m(std::move(ck.model));
    m.state_ = std::move(ck.state);
    return m;
  }

  py::object config() const { return to_python(to_json(model_.config())); }
  py::dict budget() const { return budget_dict(param_budget(model_)); }
  std::int64_t step() const { return state_.step; }
  std::uint64_t frozen_hash() const { return model_.params().hash(Trainability::Frozen); }

 private:
  Model<float> model_;
  TrainState<float> state_;
};

}  // namespace

PYBIND11_MODULE(swimvg, m) {
  m.doc() = "SwimVG visual grounding at desk scale";
  m.attr("__version__") = std::string(kVersion);

  static py::handle error = py::exception<Error>(m, "Error", PyExc_RuntimeError).release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) {
        std::rethrow_exception(p);
      }
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error)(std::string(to_string(e.kind())) + " (" + e.subject() + "): " + e.what());
      exc.attr("kind") = std::string(to_string(e.kind()));
      exc.attr("subject") = e.subject();
      PyErr_SetObject(error.ptr(), exc.ptr());
    }
  });

  m.def("profile", [](const std::string& name) {
    if (name != "toy" && name != "paper") {
      throw Error(ErrorKind::InvalidValue, "profile", "expected \"toy\" or \"paper\"");
    }
    return to_python(name == "toy" ? toy_profile() : paper_profile());
  }, py::arg("name"), "Raw config of a built-in profile");
  m.def("validate_config", [](const py::object& cfg) { return to_python(to_json(config_of(cfg))); }, py::arg("config"),
        "Validated config with every default filled in");
  m.def("shapes", [](const py::object& cfg) {
    const auto r = derive_shapes(config_of(cfg));
    py::dict d;
    d["patch_count"] = r.patch_count;
    d["text_tokens"] = r.text_tokens;
    d["vision_tokens_at_layer"] = r.vision_tokens_at_layer;
    return d;
  }, py::arg("config"));
  m.def("closed_form_budget", [](const py::object& cfg) { return budget_dict(closed_form_budget(config_of(cfg))); },
        py::arg("config"));

  m.def("iou", [](const Box& a, const Box& b) { return iou(box_of(a), box_of(b)); }, py::arg("a"), py::arg("b"),
        "IoU of two (cx, cy, w, h) boxes");
  m.def("giou", [](const Box& a, const Box& b) { return giou(box_of(a), box_of(b)); }, py::arg("a"), py::arg("b"),
        "Generalized IoU of two (cx, cy, w, h) boxes");
  m.def("grounding_loss", [](const Box& pred, const Box& gt, double lambda_l1, double lambda_giou) {
    std::array<double, 4> grad{};
    const auto l = grounding_loss_grad(box_of(pred), box_of(gt), lambda_l1, lambda_giou, grad);
    py::dict d;
    d["l1"] = l.l1;
    d["giou_loss"] = l.giou_loss;
    d["total"] = l.total;
    d["grad"] = grad;
    return d;
  }, py::arg("pred"), py::arg("gt"), py::arg("lambda_l1") = 1.0, py::arg("lambda_giou") = 1.0);
  m.def("precision_at", [](const std::vector<Box>& preds, const std::vector<Box>& gts, double tau) {
    std::vector<BoundingBox> p, g;
    for (const auto& b : preds) p.push_back(box_of(b));
    for (const auto& b : gts) g.push_back(box_of(b));
    return precision_at(p, g, tau);
  }, py::arg("preds"), py::arg("gts"), py::arg("tau"));

  m.def("vocab", [] { return default_vocab().words(); });
  m.def("tokenize", [](const std::vector<std::string>& words, int length) {
    return tokenize_expression(words, default_vocab(), length);
  }, py::arg("words"), py::arg("length"));
  m.def("generate_sample", [](std::uint64_t seed, const py::object& cfg) {
    return sample_dict(generate_sample(seed, GenConfig::from_model(config_of(cfg))));
  }, py::arg("seed"), py::arg("config") = py::str("toy"));

  py::class_<PyModel>(m, "Model")
      .def(py::init([](const py::object& cfg) { return PyModel(Model<float>(config_of(cfg))); }),
           py::arg("config") = py::str("toy"))
      .def_static("load", &PyModel::load, py::arg("path"))
      .def("save", &PyModel::save, py::arg("path"))
      .def("forward", &PyModel::forward, py::arg("image"), py::arg("word_ids"),
           "Predicted (cx, cy, w, h) for one image and expression")
      .def("attention_grid", &PyModel::attention_grid, py::arg("image"), py::arg("word_ids"),
           py::arg("query") = "reg")
      .def("train", &PyModel::train, py::arg("n_train"), py::arg("n_eval"), py::arg("epochs"),
           "Trains on a fresh synthetic split and returns the final metrics")
      .def("evaluate", &PyModel::evaluate, py::arg("count"), py::arg("seed") = 0)
      .def_property_readonly("config", &PyModel::config)
      .def_property_readonly("budget", &PyModel::budget)
      .def_property_readonly("step", &PyModel::step)
      .def_property_readonly("frozen_hash", &PyModel::frozen_hash);
}
