#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "qkalign/checkpoint.hpp"
#include "qkalign/config.hpp"
#include "qkalign/diagnostics.hpp"
#include "qkalign/error.hpp"
#include "qkalign/training.hpp"

namespace py = pybind11;
using namespace qkalign;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-d array");
  std::vector<double> v(a.data(), a.data() + a.size());
  return Tensor({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))}, std::move(v));
}

Array to_array(std::span<const double> values, std::size_t rows, std::size_t cols) {
  Array out({rows, cols});
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["median_position"] = r.median_position;
  d["median_angle"] = r.median_angle;
  d["recall"] = r.recall;
  d["scene_accuracy"] = r.scene_accuracy;
  d["warnings"] = r.warnings;
  py::list scenes;
  for (const auto& s : r.scenes) {
    py::dict e;
    e["scene"] = s.scene;
    e["samples"] = s.samples;
    e["median_position"] = s.median_position;
    e["median_angle"] = s.median_angle;
    e["scene_accuracy"] = s.scene_accuracy;
    scenes.append(e);
  }
  d["scenes"] = scenes;
  return d;
}

py::list records_list(const std::vector<RecordDiagnostics>& rows) {
  py::list out;
  for (const auto& r : rows) {
    py::dict d;
    d["sample"] = r.sample;
    d["branch"] = to_string(r.branch);
    d["layer"] = r.layer;
    d["head"] = r.head;
    d["purity"] = r.purity ? py::cast(*r.purity) : py::none();
    d["swapped"] = r.swapped;
    d["entropy"] = r.entropy;
    d["entropy_normalized"] = r.entropy_normalized;
    d["region_distance"] = r.region_distance;
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-scene pose regression transformer with query-key alignment.";

  static py::handle base = py::exception<Error>(m, "Error").release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(base, (std::string(to_string(e.kind())) + ": " + e.what()).c_str());
    }
  });

  m.def("normalize_config", [](const std::string& text) { return serialize_config(parse_config(text)); },
        py::arg("text"), "Parse key = value text and write it back with every key.");

  m.def("generate_dataset",
        [](const std::string& config_text, std::uint64_t seed, const std::string& path) {
          auto cfg = parse_config(config_text);
          auto ds = Dataset::generate(seed, cfg.data);
          write_dataset(path, ds);
          return py::make_tuple(ds.split.train_counts, ds.split.test_counts);
        },
        py::arg("config"), py::arg("seed"), py::arg("path"));

  m.def("train",
        [](const std::string& config_text, const std::string& data_path, const std::string& out_dir) {
          auto cfg = parse_config(config_text);
          auto ds = read_dataset(data_path);
          std::optional<TrainResult> r;
          {
            py::gil_scoped_release release;
            r.emplace(train(cfg, ds, {out_dir, nullptr, nullptr}));
          }
          py::list losses;
          for (const auto& e : r->epochs) losses.append(e.loss.l_total);
          py::dict d;
          d["loss"] = losses;
          d["best_epoch"] = r->best_epoch;
          d["best_median_position"] = r->best_median_position;
          return d;
        },
        py::arg("config"), py::arg("data"), py::arg("out"));

  m.def("evaluate",
        [](const std::string& checkpoint, const std::string& data_path) {
          auto lm = load_model(checkpoint);
          auto ds = read_dataset(data_path);
          return report_dict(evaluate(lm.model, ds, lm.checkpoint.config.thresholds));
        },
        py::arg("checkpoint"), py::arg("data"));

  m.def("diagnose",
        [](const std::string& checkpoint, const std::string& data_path, std::size_t samples) {
          auto lm = load_model(checkpoint);
          auto ds = read_dataset(data_path);
          return records_list(diagnose(lm.model, ds, spread_indices(ds.split.test.size(), samples)));
        },
        py::arg("checkpoint"), py::arg("data"), py::arg("samples") = 16);

  m.def("sinusoidal_encoding",
        [](std::size_t height, std::size_t width, std::size_t dim) {
          auto pe = build_sinusoidal_2d({height, width}, dim);
          return to_array(pe.table.data(), height * width, dim);
        },
        py::arg("height"), py::arg("width"), py::arg("dim"));

  m.def("sinusoidal_distance_map",
        [](std::size_t height, std::size_t width, std::size_t dim, std::size_t row, std::size_t col) {
          auto map = pe_distance_map(build_sinusoidal_2d({height, width}, dim), {row, col});
          return to_array(map.values, height, width);
        },
        py::arg("height"), py::arg("width"), py::arg("dim"), py::arg("row") = 0, py::arg("col") = 0);

  m.def("attention_entropy", [](const Array& a) { return attention_entropy(to_tensor(a)); }, py::arg("a"),
        "Mean row entropy in nats.");

  m.def("purity",
        [](const Array& q, const Array& k) -> py::object {
          auto r = purity(to_tensor(q), to_tensor(k));
          return r.purity ? py::cast(*r.purity) : py::none();
        },
        py::arg("q"), py::arg("k"));

  m.def("centroid_distance",
        [](const Array& q, const Array& k) {
          NoGradGuard guard;
          return centroid_distance(to_tensor(q), to_tensor(k)).item();
        },
        py::arg("q"), py::arg("k"));

  m.def("median", [](std::vector<double> v) { return median(v); }, py::arg("values"));

  m.def("recall_at",
        [](const std::vector<double>& position, const std::vector<double>& angle, double thr_pos, double thr_ang) {
          if (position.size() != angle.size()) throw DimensionError("recall_at: error lists differ in length");
          std::vector<PoseError> e(position.size());
          for (std::size_t i = 0; i < e.size(); ++i) e[i] = {position[i], angle[i]};
          return recall_at(e, thr_pos, thr_ang);
        },
        py::arg("position"), py::arg("angle"), py::arg("thr_pos"), py::arg("thr_ang"));
}
