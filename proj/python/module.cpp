// Python bindings for the normalization laboratory: graph generators, the
// 1-WL oracle, masked batching, every normalization layer, and config-driven
// experiment runs.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "normlab/config.hpp"
#include "normlab/granola.hpp"
#include "normlab/model.hpp"
#include "normlab/oracles.hpp"
#include "normlab/props.hpp"
#include "normlab/train.hpp"

namespace py = pybind11;
using namespace normlab;

namespace {

py::array_t<double> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> arr(shape);
  std::memcpy(arr.mutable_data(), t.data(), sizeof(double) * static_cast<size_t>(t.size()));
  return arr;
}

Tensor from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  Shape shape;
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape.push_back(arr.shape(i));
  std::vector<double> data(arr.data(), arr.data() + arr.size());
  return Tensor(std::move(shape), std::move(data));
}

NormSpec spec_from_kwargs(const std::string& variant, double eps, bool affine, double s, double p,
                          double lambda, int64_t clusters, bool size_norm_batchnorm) {
  NormSpec spec;
  spec.variant = norm_variant_from_name(variant);
  spec.eps = eps;
  spec.affine = affine;
  spec.s = s;
  spec.p = p;
  spec.lambda = lambda;
  spec.clusters = clusters;
  spec.size_norm_batchnorm = size_norm_batchnorm;
  spec.validate();
  return spec;
}

}  // namespace

PYBIND11_MODULE(normlab, m) {
  m.doc() = "graph normalization laboratory";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<ArgumentError>(m, "ArgumentError");
  py::register_exception<DimensionError>(m, "DimensionError");

  py::class_<Graph>(m, "Graph")
      .def_readonly("num_nodes", &Graph::num_nodes)
      .def_readonly("edges", &Graph::edges)
      .def("degrees", &Graph::degrees)
      .def("features", [](const Graph& g) { return to_numpy(g.node_features); })
      .def("set_features", [](Graph& g, const py::array_t<double>& f) { g.set_features(from_numpy(f)); })
      .def("adjacency", [](const Graph& g) { return to_numpy(g.adjacency_dense()); })
      .def("permuted", &Graph::permuted)
      .def("to_json", &graph_to_json)
      .def("__repr__", [](const Graph& g) {
        return "<Graph nodes=" + std::to_string(g.num_nodes) +
               " edges=" + std::to_string(g.edges.size()) + ">";
      });

  m.def("generate_cycle", &generate_cycle, py::arg("n"));
  m.def("generate_path", &generate_path, py::arg("n"));
  m.def("generate_star", &generate_star, py::arg("n"));
  m.def("generate_csl", &generate_csl, py::arg("n"), py::arg("skip"));
  m.def("generate_er", &generate_er, py::arg("n"), py::arg("p"), py::arg("seed"));
  m.def("disjoint_union", &disjoint_union);
  m.def("graph_from_json", &graph_from_json);
  m.def("wl_refinement", &wl_refinement, py::arg("graph"), py::arg("iterations") = 0);

  py::class_<GraphBatch>(m, "GraphBatch")
      .def_readonly("batch_size", &GraphBatch::batch_size)
      .def_readonly("n_max", &GraphBatch::n_max)
      .def_readonly("num_nodes", &GraphBatch::num_nodes)
      .def("features", [](const GraphBatch& b) { return to_numpy(b.features); })
      .def("mask", [](const GraphBatch& b) { return to_numpy(b.node_mask); })
      .def("adjacency", [](const GraphBatch& b) { return to_numpy(b.adjacency_dense()); });

  m.def("batch_graphs", &batch_graphs);

  m.def(
      "apply_norm",
      [](const std::string& variant, const GraphBatch& batch, const py::array_t<double>& h,
         double eps, bool affine, double s, double p, double lambda, int64_t clusters,
         bool size_norm_batchnorm, uint64_t param_seed) {
        NormSpec spec = spec_from_kwargs(variant, eps, affine, s, p, lambda, clusters, size_norm_batchnorm);
        Rng rng = Rng(param_seed).fork(0x7079ULL);
        AffineParams ap = AffineParams::create(spec, from_numpy(h).dim(2), rng);
        return to_numpy(apply_norm(spec, &ap, batch, from_numpy(h)));
      },
      py::arg("variant"), py::arg("batch"), py::arg("h"), py::arg("eps") = 1e-5,
      py::arg("affine") = false, py::arg("s") = 1.0, py::arg("p") = 2.0, py::arg("lam") = 0.01,
      py::arg("clusters") = 4, py::arg("size_norm_batchnorm") = true, py::arg("param_seed") = 0,
      "Apply one of the normalization variants to masked [B,n,C] features.");

  m.def(
      "norm_oracle",
      [](const std::string& variant, const GraphBatch& batch, const py::array_t<double>& h,
         double eps, bool affine, double s, double p, double lambda, int64_t clusters,
         bool size_norm_batchnorm, uint64_t param_seed) {
        NormSpec spec = spec_from_kwargs(variant, eps, affine, s, p, lambda, clusters, size_norm_batchnorm);
        Rng rng = Rng(param_seed).fork(0x7079ULL);
        AffineParams ap = AffineParams::create(spec, from_numpy(h).dim(2), rng);
        return to_numpy(oracle::norm(spec, &ap, batch, from_numpy(h)));
      },
      py::arg("variant"), py::arg("batch"), py::arg("h"), py::arg("eps") = 1e-5,
      py::arg("affine") = false, py::arg("s") = 1.0, py::arg("p") = 2.0, py::arg("lam") = 0.01,
      py::arg("clusters") = 4, py::arg("size_norm_batchnorm") = true, py::arg("param_seed") = 0,
      "Loop-based recomputation of the same normalization (verification path).");

  m.def("sample_rnf",
        [](const GraphBatch& batch, int64_t k, uint64_t seed) {
          return to_numpy(sample_rnf(batch, k, seed));
        },
        py::arg("batch"), py::arg("k"), py::arg("seed"));

  m.def(
      "granola_forward",
      [](const GraphBatch& batch, const py::array_t<double>& h, const std::string& variant,
         int64_t depth, const std::string& stats, uint64_t weight_seed, uint64_t rnf_seed,
         int64_t k, bool gamma_zero) {
        Tensor ht = from_numpy(h);
        Rng rng = Rng(weight_seed).fork(0x677261ULL);
        GranolaStats st = stats == "batchnorm" ? GranolaStats::BatchNorm : GranolaStats::LayerNormNode;
        GranolaLayer layer = GranolaLayer::create(ht.dim(2), granola_variant_from_name(variant),
                                                  depth, st, true, rng, k);
        layer.gamma_zero = gamma_zero;
        return to_numpy(granola_forward(batch, ht, layer, rnf_seed));
      },
      py::arg("batch"), py::arg("h"), py::arg("variant") = "full", py::arg("depth") = 2,
      py::arg("stats") = "layernorm_node", py::arg("weight_seed") = 0, py::arg("rnf_seed") = 0,
      py::arg("k") = 0, py::arg("gamma_zero") = false,
      "Graph-adaptive normalization with freshly initialized weights.");

  m.def(
      "run_experiment",
      [](const std::string& config_text, bool is_toml) {
        nlohmann::ordered_json j =
            is_toml ? toml_to_json(config_text) : nlohmann::ordered_json::parse(config_text);
        ExperimentConfig cfg = ExperimentConfig::from_json(j);
        Task task = cfg.make_task();
        ModelStack stack = cfg.make_stack();
        TrainResult trained = train(stack, task, cfg.train);
        py::dict out;
        py::list history;
        for (const auto& [epoch, loss] : trained.history) {
          history.append(py::make_tuple(epoch, loss));
        }
        out["history"] = history;
        out["final"] = trained.final_loss;
        out["seed"] = cfg.seed;
        return out;
      },
      py::arg("config_text"), py::arg("is_toml") = true,
      "Train a model from a TOML or JSON config string; returns history and final loss.");

  m.def(
      "run_props",
      [](const std::string& suite) {
        py::list out;
        for (const PropResult& r : run_property_suite(suite)) {
          py::dict d;
          d["suite"] = r.suite;
          d["name"] = r.name;
          d["pass"] = r.pass;
          d["detail"] = r.detail;
          out.append(d);
        }
        return out;
      },
      py::arg("suite") = "all", "Run a property suite and return the per-check results.");
}
