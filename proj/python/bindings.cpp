#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "atoms/certificates.hpp"
#include "atoms/error.hpp"
#include "atoms/geometry.hpp"
#include "atoms/recovery.hpp"
#include "atoms/sae.hpp"
#include "atoms/store.hpp"
#include "atoms/synth.hpp"

namespace py = pybind11;
using namespace atoms;

namespace {

py::dict recovery_dict(const RecoveryResult& r) {
  py::dict d;
  d["solution"] = r.solution;
  d["objective"] = r.objective;
  d["residual"] = r.residual;
  d["converged"] = r.converged;
  d["iterations"] = r.iterations;
  return d;
}

SynthSpec make_spec(Index h, Index n, Index k, Index samples, std::uint64_t seed, double delta_min,
                    double delta_max, std::optional<double> epsilon_target) {
  SynthSpec s;
  s.h = h;
  s.n = n;
  s.k = k;
  s.samples = samples;
  s.seed = seed;
  s.delta_min = delta_min;
  s.delta_max = delta_max;
  s.epsilon_target = epsilon_target;
  return s;
}

}  // namespace

PYBIND11_MODULE(_atomskit, m) {
  m.doc() = "Atomic inner products, sparse-recovery certificates and threshold autoencoders";

  static py::exception<Error> error(m, "AtomsError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error)(std::string(to_string(e.code())) + ": " + e.what());
      exc.attr("code") = std::string(to_string(e.code()));
      exc.attr("byte_offset") = e.byte_offset() ? py::cast(*e.byte_offset()) : py::none();
      PyErr_SetObject(error.ptr(), exc.ptr());
    }
  });

  // Atoms are the columns of an (H, n) array throughout.
  m.def(
      "metric",
      [](const Matrix& d) {
        const MetricMatrix mm = metric_from_atoms(AtomSet(d));
        return py::make_tuple(mm.s_tilde, mm.sqrt);
      },
      py::arg("atoms"), "(S~, S~^{1/2}) with S~ = (D D^T)^{-1}");
  m.def("naip_gram", [](const Matrix& d) { return naip_gram(AtomSet(d)).gram; }, py::arg("atoms"));
  m.def(
      "raw_gram",
      [](const Matrix& d) {
        const AtomSet a(d);
        return raw_gram(a, metric_from_atoms(a));
      },
      py::arg("atoms"));
  m.def(
      "normalize_atoms",
      [](const Matrix& d) {
        const AtomSet a(d);
        return normalize_atoms(a, metric_from_atoms(a)).data();
      },
      py::arg("atoms"));
  m.def(
      "atom_match",
      [](const Matrix& d, const Matrix& xs) {
        const AtomSet a(d);
        return atom_match_batch(a, metric_from_atoms(a), xs);
      },
      py::arg("atoms"), py::arg("xs"), "phi(x) = D^T S~ x for each column of xs");
  m.def(
      "angle_centroid",
      [](const Matrix& vectors, std::optional<Matrix> atoms) {
        if (!atoms) return angle_stats(vectors).centroid_deg;
        const MetricMatrix mm = metric_from_atoms(AtomSet(*atoms));
        return angle_stats(vectors, &mm).centroid_deg;
      },
      py::arg("vectors"), py::arg("atoms") = py::none());

  m.def(
      "coherence",
      [](const Matrix& unit) {
        const CoherenceReport r = coherence(AtomSet(unit));
        return py::make_tuple(r.mu, r.argmax_pair);
      },
      py::arg("normalized_atoms"), "(mu, (i, j)) over unit-norm columns");
  m.def(
      "rip_bound",
      [](double mu, int k) {
        const RipCertificate c = rip_bound(mu, k);
        return py::make_tuple(c.bound, c.certified);
      },
      py::arg("mu"), py::arg("k"));
  m.def("uniqueness_certified", &uniqueness_certified, py::arg("mu"), py::arg("k"));
  m.def(
      "linear_quantile", [](const std::vector<double>& s, double alpha) { return linear_quantile(s, alpha); },
      py::arg("samples"), py::arg("alpha"));
  m.def(
      "max_uniqueness_quantile",
      [](const std::vector<double>& mu, const std::vector<double>& ks) {
        const QuantileReport r = max_uniqueness_quantile(mu, ks);
        py::dict d;
        d["q"] = r.q;
        d["mu_q"] = r.mu_q;
        d["k_q"] = r.k_q;
        d["satisfied"] = r.satisfied;
        return d;
      },
      py::arg("coherences"), py::arg("sparsities"));

  m.def(
      "basis_pursuit",
      [](const Matrix& d, const Vector& meas, double tol, int max_iterations) {
        BasisPursuitOptions o;
        o.tol = tol;
        o.max_iterations = max_iterations;
        return recovery_dict(basis_pursuit(AtomSet(d), meas, o));
      },
      py::arg("atoms"), py::arg("m"), py::arg("tol") = 1e-8, py::arg("max_iterations") = 50000);
  m.def(
      "l0_oracle",
      [](const Matrix& d, const Vector& meas, int k_max) { return recovery_dict(l0_oracle(AtomSet(d), meas, k_max)); },
      py::arg("atoms"), py::arg("m"), py::arg("k_max"));

  m.def(
      "gen_atoms",
      [](Index h, Index n, std::uint64_t seed, std::optional<double> epsilon_target) {
        const AtomSet a = gen_atoms(make_spec(h, n, 1, 0, seed, 0.5, 1.0, epsilon_target));
        return py::make_tuple(a.data(), *a.epsilon());
      },
      py::arg("h"), py::arg("n"), py::arg("seed") = 0, py::arg("epsilon_target") = py::none(),
      "(atoms, epsilon) with unit-norm Gaussian columns");
  m.def(
      "gen_codes",
      [](Index n, Index k, Index samples, std::uint64_t seed, double delta_min, double delta_max) {
        return codes_matrix(gen_codes(make_spec(1, n, k, samples, seed, delta_min, delta_max, std::nullopt)));
      },
      py::arg("n"), py::arg("k"), py::arg("samples"), py::arg("seed") = 0, py::arg("delta_min") = 0.5,
      py::arg("delta_max") = 1.0, "(n, samples) array of K-sparse codes");
  m.def("welch_bound", &welch_bound, py::arg("h"), py::arg("n"));

  py::class_<SaeModel>(m, "SaeModel")
      .def(py::init([](Matrix w_enc, Matrix w_dec, Vector tau) {
             SaeModel s{std::move(w_enc), std::move(w_dec), std::move(tau)};
             s.validate();
             return s;
           }),
           py::arg("w_enc"), py::arg("w_dec"), py::arg("tau"))
      .def_readwrite("w_enc", &SaeModel::w_enc)
      .def_readwrite("w_dec", &SaeModel::w_dec)
      .def_readwrite("tau", &SaeModel::tau)
      .def_property_readonly("width", &SaeModel::width)
      .def_property_readonly("dim", &SaeModel::dim);

  m.def("threshold_window", &threshold_window, py::arg("epsilon"), py::arg("k"), py::arg("delta_min"),
        py::arg("delta_max"));
  m.def(
      "analytic_sae",
      [](const Matrix& d, double tau) {
        const AtomSet a(d);
        return analytic_sae(a, metric_from_atoms(a), tau);
      },
      py::arg("atoms"), py::arg("tau"));
  m.def(
      "forward",
      [](const SaeModel& model, const Matrix& xs) {
        Forward f = forward(model, xs);
        return py::make_tuple(f.code, f.recon);
      },
      py::arg("model"), py::arg("xs"), "(codes, reconstructions) for the columns of xs");
  m.def(
      "train",
      [](const Matrix& xs, Index width, double lambda, int epochs, Index batch_size, std::uint64_t seed,
         double learning_rate, int checkpoint_every) {
        TrainConfig c;
        c.width = width;
        c.lambda = lambda;
        c.epochs = epochs;
        c.batch_size = batch_size;
        c.seed = seed;
        c.learning_rate = learning_rate;
        c.checkpoint_every = checkpoint_every;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(ActivationSet{xs}, c);
        }
        py::list curve;
        for (const Checkpoint& cp : r.checkpoints) {
          py::dict d;
          d["step"] = cp.step;
          d["recon_loss"] = cp.recon_loss;
          d["sparsity_loss"] = cp.sparsity_loss;
          d["r2"] = cp.r_squared;
          d["avg_l0"] = cp.avg_l0;
          curve.append(d);
        }
        return py::make_tuple(r.model, curve);
      },
      py::arg("xs"), py::arg("width") = 256, py::arg("lambda_") = 0.1, py::arg("epochs") = 10,
      py::arg("batch_size") = 256, py::arg("seed") = 0, py::arg("learning_rate") = 1e-3,
      py::arg("checkpoint_every") = 100);
  m.def(
      "r_squared", [](const Matrix& x, const Matrix& xhat) { return r_squared(x, xhat); }, py::arg("originals"),
      py::arg("recons"));
  m.def("avg_l0", &avg_l0, py::arg("codes"));
  m.def(
      "alignment", [](const SaeModel& model) { return alignment(model).mean_alignment; }, py::arg("model"));
  m.def(
      "match_atoms",
      [](const Matrix& truth, const Matrix& decoder, double threshold) {
        return match_atoms(AtomSet(truth), decoder, threshold).matched_fraction;
      },
      py::arg("truth"), py::arg("decoder"), py::arg("threshold") = 0.9);

  // Dumps hold one vector per row on the Python side, as in the file.
  m.def(
      "read_dump",
      [](const std::filesystem::path& path) {
        const ActivationSet s = read_dump(path);
        return py::make_tuple(Matrix(s.data.transpose()), s.metadata.dump());
      },
      py::arg("path"));
  m.def(
      "write_dump",
      [](const std::filesystem::path& path, const Matrix& rows, const std::string& metadata) {
        ActivationSet s;
        s.data = rows.transpose();
        s.metadata = nlohmann::json::parse(metadata);
        write_dump(path, s);
      },
      py::arg("path"), py::arg("vectors"), py::arg("metadata_json") = "{}");
  m.def("save_model", [](const std::filesystem::path& p, const SaeModel& s) { save_model(p, s); },
        py::arg("path"), py::arg("model"));
  m.def("load_model", &load_model, py::arg("path"));
}
