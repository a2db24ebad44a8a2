// Python bindings for the main operations: synthetic complexes, distogram
// math, pocket cropping, pose optimization, evaluation metrics, affinity
// losses, epinet posteriors, and batch selection.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "coarsebind/affinity.hpp"
#include "coarsebind/complexes.hpp"
#include "coarsebind/distogram.hpp"
#include "coarsebind/epinet.hpp"
#include "coarsebind/errors.hpp"
#include "coarsebind/io.hpp"
#include "coarsebind/metrics.hpp"
#include "coarsebind/pocket.hpp"
#include "coarsebind/posegen.hpp"
#include "coarsebind/selection.hpp"
#include "coarsebind/synthdata.hpp"
#include "coarsebind/trainer.hpp"

namespace py = pybind11;
namespace cb = coarsebind;

namespace {

cb::Coords coords_from_array(const py::array_t<double>& arr) {
  const auto buf = arr.unchecked<2>();
  if (buf.shape(1) != 3) throw cb::InputError("coordinates must be N x 3");
  cb::Coords out(static_cast<std::size_t>(buf.shape(0)));
  for (py::ssize_t i = 0; i < buf.shape(0); ++i)
    out[static_cast<std::size_t>(i)] = {buf(i, 0), buf(i, 1), buf(i, 2)};
  return out;
}

py::array_t<double> array_from_coords(const cb::Coords& coords) {
  py::array_t<double> arr({static_cast<py::ssize_t>(coords.size()), py::ssize_t(3)});
  auto buf = arr.mutable_unchecked<2>();
  for (std::size_t i = 0; i < coords.size(); ++i)
    for (int k = 0; k < 3; ++k) buf(static_cast<py::ssize_t>(i), k) = coords[i][k];
  return arr;
}

cb::Mat mat_from_array(const py::array_t<double>& arr) {
  const auto buf = arr.unchecked<2>();
  cb::Mat out(static_cast<std::size_t>(buf.shape(0)), static_cast<std::size_t>(buf.shape(1)));
  for (py::ssize_t i = 0; i < buf.shape(0); ++i)
    for (py::ssize_t j = 0; j < buf.shape(1); ++j)
      out(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = buf(i, j);
  return out;
}

py::array_t<double> array_from_mat(const cb::Mat& m) {
  py::array_t<double> arr({static_cast<py::ssize_t>(m.rows), static_cast<py::ssize_t>(m.cols)});
  auto buf = arr.mutable_unchecked<2>();
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j)
      buf(static_cast<py::ssize_t>(i), static_cast<py::ssize_t>(j)) = m(i, j);
  return arr;
}

std::vector<cb::TokenKind> kinds_from_strings(const std::vector<std::string>& kinds) {
  std::vector<cb::TokenKind> out;
  out.reserve(kinds.size());
  for (const auto& k : kinds) {
    if (k == "ligand")
      out.push_back(cb::TokenKind::Ligand);
    else if (k == "protein")
      out.push_back(cb::TokenKind::Protein);
    else
      throw cb::InputError("token kind must be 'ligand' or 'protein'");
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "coarse-grained protein-ligand structure and affinity toolkit";

  py::register_exception<cb::InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<cb::ParseError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<cb::NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def(
      "generate_complex",
      [](std::size_t n_ligand, std::size_t n_protein, std::size_t embedding_dim,
         const std::string& geometry, std::uint64_t seed, double pocket_fraction) {
        cb::SyntheticGenConfig cfg;
        cfg.n_ligand = n_ligand;
        cfg.n_protein = n_protein;
        cfg.embedding_dim = embedding_dim;
        cfg.seed = seed;
        cfg.pocket_fraction = pocket_fraction;
        if (geometry == "blob")
          cfg.geometry = cb::Geometry::FoldedBlob;
        else if (geometry == "helix")
          cfg.geometry = cb::Geometry::Helix;
        else if (geometry == "cliff")
          cfg.geometry = cb::Geometry::Cliff;
        else
          throw cb::InputError("geometry must be blob, helix, or cliff");
        return cb::encode_complex(cb::generate_synthetic_complex(cfg));
      },
      py::arg("n_ligand") = 8, py::arg("n_protein") = 40, py::arg("embedding_dim") = 32,
      py::arg("geometry") = "blob", py::arg("seed") = 0, py::arg("pocket_fraction") = 0.75,
      "Generate a synthetic complex and return its JSON encoding.");

  m.def("decode_complex_summary", [](const std::string& text) {
    const cb::TokenizedComplex c = cb::decode_complex(text);
    py::dict out;
    out["id"] = c.id;
    out["n_tokens"] = c.size();
    out["n_ligand"] = c.ligand_indices().size();
    out["n_bonds"] = c.bonds.size();
    std::vector<std::string> kinds;
    for (const auto k : c.kinds())
      kinds.push_back(k == cb::TokenKind::Ligand ? "ligand" : "protein");
    out["kinds"] = kinds;
    if (c.coords) out["coords"] = array_from_coords(*c.coords);
    return out;
  });

  m.def("distance_matrix", [](const py::array_t<double>& coords) {
    return array_from_mat(cb::distance_matrix(coords_from_array(coords)));
  });

  m.def("bin_index", [](double d) { return cb::distogram::bin_index(d); });
  m.def("bin_center", [](int b) { return cb::distogram::bin_center(b); });
  m.def("expected_distance", [](const std::vector<double>& p) {
    return cb::distogram::expected_distance(p);
  });
  m.def("pairwise_entropy", [](const std::vector<double>& p) {
    return cb::distogram::pairwise_entropy(p);
  });

  m.def(
      "pocket_residues",
      [](const py::array_t<double>& expected, const std::vector<std::string>& kinds,
         double cutoff) {
        return cb::pocket::pocket_residues(mat_from_array(expected), kinds_from_strings(kinds),
                                           cutoff);
      },
      py::arg("expected"), py::arg("kinds"), py::arg("cutoff") = 15.0);

  m.def(
      "optimize_pose",
      [](const py::array_t<double>& ref, std::size_t n_samples, std::uint64_t seed) {
        cb::pose::OptConfig cfg;
        cfg.n_samples = n_samples;
        cfg.seed = seed;
        const auto samples = cb::pose::optimize_pose(mat_from_array(ref), cfg);
        const std::size_t best = cb::pose::select_best_index(samples);
        py::dict out;
        out["coords"] = array_from_coords(samples[best].coords);
        out["final_loss"] = samples[best].final_loss;
        out["iters"] = samples[best].iters;
        out["converged"] = samples[best].converged;
        out["n_samples"] = samples.size();
        return out;
      },
      py::arg("ref"), py::arg("n_samples") = 10, py::arg("seed") = 0,
      "Multi-start distance-geometry optimization; returns the lowest-loss sample.");

  m.def("optimization_loss", [](const py::array_t<double>& coords, const py::array_t<double>& ref) {
    return cb::pose::optimization_loss(coords_from_array(coords), mat_from_array(ref));
  });

  m.def(
      "kabsch_rmsd",
      [](const py::array_t<double>& pred, const py::array_t<double>& truth,
         const std::vector<double>& weights) {
        const cb::Coords p = coords_from_array(pred);
        std::vector<double> w = weights;
        if (w.empty()) w.assign(p.size(), 1.0);
        return cb::metrics::kabsch_align(p, coords_from_array(truth), w).weighted_rmsd;
      },
      py::arg("pred"), py::arg("truth"), py::arg("weights") = std::vector<double>{});

  m.def(
      "ligand_rmsd",
      [](const py::array_t<double>& pred, const py::array_t<double>& truth,
         const std::vector<std::string>& kinds, bool chirality_blind) {
        return cb::metrics::ligand_rmsd(coords_from_array(pred), coords_from_array(truth),
                                        kinds_from_strings(kinds), chirality_blind)
            .rmsd;
      },
      py::arg("pred"), py::arg("truth"), py::arg("kinds"), py::arg("chirality_blind") = true);

  m.def(
      "lddt_pli",
      [](const py::array_t<double>& pred, const py::array_t<double>& truth,
         const std::vector<std::string>& kinds) -> py::object {
        const auto v = cb::metrics::lddt_pli(coords_from_array(pred), coords_from_array(truth),
                                             kinds_from_strings(kinds));
        if (!v) return py::none();
        return py::float_(*v);
      },
      py::arg("pred"), py::arg("truth"), py::arg("kinds"));

  m.def(
      "focal_loss",
      [](const std::vector<double>& p, const std::vector<int>& y, py::object alpha, double gamma) {
        std::optional<double> a;
        if (!alpha.is_none()) a = alpha.cast<double>();
        return cb::affinity::focal_loss(p, y, a, gamma);
      },
      py::arg("p"), py::arg("y"), py::arg("alpha") = 0.25, py::arg("gamma") = 2.0);

  m.def("huber_loss", &cb::affinity::huber_loss, py::arg("y"), py::arg("y_hat"),
        py::arg("delta") = 0.5);

  m.def(
      "relative_affinity_loss",
      [](const std::vector<double>& y, const std::vector<double>& y_hat) {
        return cb::affinity::relative_affinity_loss(y, y_hat).value;
      },
      py::arg("y"), py::arg("y_hat"));

  m.def(
      "emax",
      [](const py::array_t<double>& samples, const std::vector<std::size_t>& subset) {
        return cb::select::emax(mat_from_array(samples), subset);
      },
      py::arg("samples"), py::arg("subset"));

  m.def(
      "emax_select",
      [](const py::array_t<double>& samples, std::size_t batch) {
        const cb::Mat s = mat_from_array(samples);
        std::vector<std::string> ids(s.cols);
        for (std::size_t i = 0; i < s.cols; ++i) ids[i] = std::to_string(i);
        return cb::select::emax_select(s, ids, std::vector<bool>(s.cols, true), batch).indices;
      },
      py::arg("samples"), py::arg("batch"));

  m.def(
      "pathwise_update",
      [](const py::array_t<double>& samples, const std::vector<std::pair<std::size_t, double>>& obs,
         double sigma_obs, std::uint64_t seed, bool zero_noise) {
        return array_from_mat(
            cb::select::pathwise_update(mat_from_array(samples), obs, sigma_obs, seed, zero_noise));
      },
      py::arg("samples"), py::arg("observed"), py::arg("sigma_obs") = 0.5, py::arg("seed") = 0,
      py::arg("zero_noise") = false);

  m.attr("__version__") = "0.1.0";
}
