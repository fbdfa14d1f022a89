#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "xrhead/config.hpp"
#include "xrhead/data.hpp"
#include "xrhead/errors.hpp"
#include "xrhead/harness.hpp"
#include "xrhead/heads.hpp"
#include "xrhead/una.hpp"

namespace py = pybind11;
using namespace xrhead;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

TrainConfig config_from_json(const std::string& text) {
  TrainConfig c = nlohmann::json::parse(text).get<TrainConfig>();
  apply_seed_env(c);
  c.validate();
  return c;
}

std::vector<HeadKind> parse_kinds(const std::vector<std::string>& names) {
  std::vector<HeadKind> kinds;
  for (const auto& n : names) kinds.push_back(parse_head_kind(n));
  return kinds;
}

py::dict split_arrays(const std::vector<Sample>& split, std::size_t tokens, std::size_t dim) {
  Array patches({static_cast<py::ssize_t>(split.size()), static_cast<py::ssize_t>(tokens), static_cast<py::ssize_t>(dim)});
  py::array_t<std::int64_t> labels(static_cast<py::ssize_t>(split.size()));
  py::array_t<std::int64_t> parts({static_cast<py::ssize_t>(split.size()), static_cast<py::ssize_t>(tokens)});
  double* p = patches.mutable_data();
  for (std::size_t i = 0; i < split.size(); ++i) {
    std::copy(split[i].patches.begin(), split[i].patches.end(), p + i * tokens * dim);
    labels.mutable_at(i) = static_cast<std::int64_t>(split[i].label);
    for (std::size_t n = 0; n < tokens; ++n) parts.mutable_at(i, n) = split[i].part_assignment[n];
  }
  py::dict d;
  d["patches"] = patches;
  d["labels"] = labels;
  d["part_assignment"] = parts;
  return d;
}

}  // namespace

PYBIND11_MODULE(_xrhead, m) {
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<DegenerateInputError>(m, "DegenerateInputError", PyExc_ValueError);
  py::register_exception<IndexError>(m, "IndexError", PyExc_IndexError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("align_predict", [](const Array& v, const Array& t) { return to_array(align_predict(to_tensor(v), to_tensor(t))); },
        py::arg("v"), py::arg("t"));
  m.def("pwcs_predict", [](const Array& V, const Array& T) { return to_array(pwcs_predict(to_tensor(V), to_tensor(T))); },
        py::arg("V"), py::arg("T"));
  m.def("cross_relation",
        [](const Array& V, const Array& T, bool normalize) {
          return to_array(cross_relation(to_tensor(V), to_tensor(T), normalize));
        },
        py::arg("V"), py::arg("T"), py::arg("normalize_prompts") = false);
  m.def("normalize_attention", [](const Array& A) { return to_array(normalize_attention(to_tensor(A))); }, py::arg("A"));
  m.def("scale_norm",
        [](const Array& V, double tau, bool squared) { return to_array(scale_norm(to_tensor(V), tau, squared)); },
        py::arg("V"), py::arg("tau") = 64.0, py::arg("squared_denominator") = false);

  m.def("generate_dataset",
        [](const std::string& spec_json) {
          const Dataset ds = generate(nlohmann::json::parse(spec_json).get<SyntheticSpec>());
          py::dict d;
          d["train"] = split_arrays(ds.train, ds.tokens(), ds.patch_dim());
          d["test"] = split_arrays(ds.test, ds.tokens(), ds.patch_dim());
          d["class_embeddings"] = to_array(ds.class_embeddings);
          d["class_names"] = ds.class_names;
          d["part_names"] = ds.part_names;
          return d;
        },
        py::arg("spec_json"));

  m.def("train",
        [](const std::string& config_json) {
          TrainedRun run = [&] {
            py::gil_scoped_release release;
            return train(config_from_json(config_json));
          }();
          return nlohmann::json(run.report).dump();
        },
        py::arg("config_json"));
  m.def("compare_heads",
        [](const std::string& config_json, const std::vector<std::string>& heads, std::size_t seeds) {
          py::gil_scoped_release release;
          const CompareResult r = compare_heads(config_from_json(config_json), parse_kinds(heads), seeds);
          return std::make_pair(r.csv(), r.summary_csv());
        },
        py::arg("config_json"), py::arg("heads"), py::arg("seeds"));
  m.def("sweep_parts",
        [](const std::string& config_json, const std::vector<std::size_t>& parts) {
          py::gil_scoped_release release;
          return sweep_parts(config_from_json(config_json), parts).csv();
        },
        py::arg("config_json"), py::arg("parts"));
  m.def("pipeline_gradcheck",
        [](const std::string& config_json, double eps) {
          std::vector<std::pair<std::string, double>> out;
          py::gil_scoped_release release;
          for (const auto& e : pipeline_gradcheck(config_from_json(config_json), eps)) out.emplace_back(e.name, e.max_rel_error);
          return out;
        },
        py::arg("config_json"), py::arg("eps") = 1e-5);
  m.def("analyze_embeddings",
        [](const Array& embeddings, std::size_t bins) {
          const EmbeddingStats s = analyze_embeddings(to_tensor(embeddings), bins);
          py::dict d;
          d["min_distances"] = s.min_distances;
          d["edges"] = s.edges;
          d["counts"] = s.counts;
          d["mean"] = s.mean;
          d["median"] = s.median;
          return d;
        },
        py::arg("embeddings"), py::arg("bins"));
}
