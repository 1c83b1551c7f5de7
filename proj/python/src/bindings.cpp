#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cbdb/dropmask.hpp"
#include "cbdb/elastic_loss.hpp"
#include "cbdb/errors.hpp"
#include "cbdb/experiment.hpp"
#include "cbdb/gradcheck.hpp"
#include "cbdb/retrieval.hpp"
#include "cbdb/run_config.hpp"

namespace py = pybind11;
using namespace cbdb;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::array_t<std::uint8_t> mask_array(const DropMask& m) {
  py::array_t<std::uint8_t> out({m.height(), m.width()});
  auto v = out.mutable_unchecked<2>();
  for (std::size_t h = 0; h < m.height(); ++h)
    for (std::size_t w = 0; w < m.width(); ++w) v(h, w) = m.at(h, w);
  return out;
}

py::tuple loss_tuple(const LossResult& r) {
  return py::make_tuple(r.loss, to_array(r.grad), r.weights, r.valid_anchors);
}

ElasticParams elastic_params(double eta, bool detach, std::optional<double> fixed) {
  ElasticParams p;
  p.eta = eta;
  p.detach_weight = detach;
  p.fixed_weight = fixed;
  return p;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of cbdbnet";

  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<DegenerateBatchError>(m, "DegenerateBatchError", PyExc_RuntimeError);

  m.def("uniform_row_partition",
        [](std::size_t h, std::size_t parts) { return uniform_row_partition(h, parts).ranges; },
        py::arg("height"), py::arg("m"));
  m.def("overlap_row_partition",
        [](std::size_t h, std::size_t patch, std::size_t overlap) {
          return overlap_row_partition(h, patch, overlap).ranges;
        },
        py::arg("height"), py::arg("patch_h"), py::arg("overlap"));
  // branch is 1-based
  m.def("drop_patch_mask",
        [](std::size_t h, std::size_t parts, std::size_t branch, std::size_t width) {
          return mask_array(drop_patch_mask(uniform_row_partition(h, parts), branch, width));
        },
        py::arg("height"), py::arg("m"), py::arg("branch"), py::arg("width"));

  m.def("elastic_weight",
        [](double pos, double neg) {
          const ElasticWeight e = elastic_weight(pos, neg);
          return py::make_tuple(e.delta, e.w);
        },
        py::arg("max_pos"), py::arg("min_neg"));
  m.def("pairwise_sq_dist", [](const Array& x) { return to_array(pairwise_sq_dist(to_tensor(x))); });
  m.def("batch_hard_mine",
        [](const Array& dist, const std::vector<int>& ids) {
          py::list out;
          for (const HardPair& p : batch_hard_mine(to_tensor(dist), ids)) {
            if (!p.valid) {
              out.append(py::none());
              continue;
            }
            out.append(py::make_tuple(p.hardest_pos_index, p.max_pos_dist, p.hardest_neg_index,
                                      p.min_neg_dist));
          }
          return out;
        },
        py::arg("dist"), py::arg("ids"));
  m.def("hard_triplet_loss",
        [](const Array& x, const std::vector<int>& ids, double eta) {
          const Tensor v = to_tensor(x);
          return loss_tuple(hard_triplet_loss(v, batch_hard_mine(pairwise_sq_dist(v), ids), eta));
        },
        py::arg("vectors"), py::arg("ids"), py::arg("eta") = 3.0);
  m.def("elastic_triplet_loss",
        [](const Array& x, const std::vector<int>& ids, double eta, bool detach,
           std::optional<double> fixed) {
          const Tensor v = to_tensor(x);
          return loss_tuple(elastic_triplet_loss(v, batch_hard_mine(pairwise_sq_dist(v), ids),
                                                 elastic_params(eta, detach, fixed)));
        },
        py::arg("vectors"), py::arg("ids"), py::arg("eta") = 3.0, py::arg("detach_weight") = false,
        py::arg("fixed_weight") = py::none());

  m.def("evaluate_distances",
        [](const Array& dist, const std::vector<int>& qid, const std::vector<int>& qcam,
           const std::vector<int>& gid, const std::vector<int>& gcam, const std::vector<int>& ks) {
          return to_json(evaluate_distances(to_tensor(dist), qid, qcam, gid, gcam, ks)).dump();
        },
        py::arg("dist"), py::arg("query_ids"), py::arg("query_cams"), py::arg("gallery_ids"),
        py::arg("gallery_cams"), py::arg("ks") = std::vector<int>{1, 5, 10});
  m.def("k_reciprocal_rerank",
        [](const Array& qg, const Array& qq, const Array& gg, int k1, int k2, double lambda) {
          return to_array(
              k_reciprocal_rerank(to_tensor(qg), to_tensor(qq), to_tensor(gg), {k1, k2, lambda}));
        },
        py::arg("q_g"), py::arg("q_q"), py::arg("g_g"), py::arg("k1") = 20, py::arg("k2") = 6,
        py::arg("lambda_") = 0.3);

  m.def("resolve_config",
        [](const std::string& text) { return to_json(parse_run_config(nlohmann::json::parse(text))).dump(); });
  m.def("config_hash",
        [](const std::string& text) { return config_hash(parse_run_config(nlohmann::json::parse(text))); });
  m.def("run_experiment",
        [](const std::string& text) {
          const RunConfig c = parse_run_config(nlohmann::json::parse(text));
          RunResult r;
          {
            py::gil_scoped_release release;
            r = run_experiment(c);
          }
          return to_json(r.report, r.config_hash).dump();
        },
        py::arg("config_json"));
  m.def("gradcheck",
        [](std::size_t trials, std::uint64_t seed) { return to_json(run_all_gradchecks(trials, seed)).dump(); },
        py::arg("trials") = 10, py::arg("seed") = 7);
}
