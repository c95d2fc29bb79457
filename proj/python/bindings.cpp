// Python module kroninv._core. Tensors cross the boundary as flat float64
// arrays with mode 0 fastest; the pure-Python layer reshapes them (order="F").

#include "kroninv/error.hpp"
#include "kroninv/greedy_inverse.hpp"
#include "kroninv/io.hpp"
#include "kroninv/problems.hpp"
#include "kroninv/solvers.hpp"
#include "kroninv/tensor_ops.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace kroninv;

namespace {

StarMode star_of(const std::string& s) {
  if (s == "spd") return StarMode::SPD;
  if (s == "general") return StarMode::GENERAL;
  throw Error(ErrorCode::InvalidArgument, "star must be 'spd' or 'general', got '" + s + "'");
}

ConstraintKind constraint_of(const std::string& s) {
  if (s == "none") return ConstraintKind::None;
  if (s == "symmetric") return ConstraintKind::Symmetric;
  if (s == "skew") return ConstraintKind::Skew;
  if (s == "sparse") return ConstraintKind::Sparse;
  throw Error(ErrorCode::InvalidArgument, "unknown constraint '" + s + "'");
}

DenseTensor dense_from(const Dims& dims, const Vector& flat) {
  require(flat.size() == product(dims), ErrorCode::DimensionMismatch,
          "vector length " + std::to_string(flat.size()) + " does not match the operator size");
  return DenseTensor(dims, flat);
}

KronSumOperator kron_sum_from(const std::vector<std::vector<Matrix>>& terms, const std::vector<double>& weights) {
  require(!terms.empty(), ErrorCode::InvalidArgument, "at least one term is needed");
  require(weights.empty() || weights.size() == terms.size(), ErrorCode::InvalidArgument,
          "weights must match the number of terms");
  Dims dims;
  for (const auto& f : terms[0]) dims.push_back(f.rows());
  KronSumOperator op(dims);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    std::vector<FactorPtr> f;
    for (const auto& m : terms[i]) f.push_back(make_factor(compress_factor(m)));
    op.add_term(f, weights.empty() ? 1.0 : weights[i]);
  }
  return op;
}

py::dict trace_dict(const SolveTrace& t) {
  std::vector<int> it;
  std::vector<double> res, eps, epsp;
  for (const auto& r : t.rows) {
    it.push_back(r.iteration);
    res.push_back(r.relative_residual);
    eps.push_back(r.epsilon_solution.value_or(std::numeric_limits<double>::quiet_NaN()));
    epsp.push_back(r.epsilon_preconditioned.value_or(std::numeric_limits<double>::quiet_NaN()));
  }
  py::dict d;
  d["iteration"] = it;
  d["relative_residual"] = res;
  d["epsilon_solution"] = eps;
  d["epsilon_preconditioned"] = epsp;
  d["converged"] = t.converged;
  d["breakdown"] = t.breakdown;
  d["stagnated"] = t.stagnated;
  d["message"] = t.message;
  return d;
}

Preconditioner precond_of(const py::object& p) {
  if (p.is_none()) return Preconditioner();
  if (py::isinstance<BasisOperator>(p)) return Preconditioner(p.cast<BasisOperator>());
  if (py::isinstance<KronSumOperator>(p)) return Preconditioner(p.cast<KronSumOperator>());
  throw Error(ErrorCode::InvalidArgument, "preconditioner must be None, a KronSumOperator or a BasisOperator");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Low-rank approximate inverses of Kronecker-sum operators";
  m.attr("__version__") = KRONINV_VERSION;

  py::register_exception<Error>(m, "KroninvError", PyExc_RuntimeError);

  py::class_<KronSumOperator>(m, "KronSumOperator")
      .def(py::init(&kron_sum_from), py::arg("terms"), py::arg("weights") = std::vector<double>{},
           "Sum of Kronecker terms; terms[i][mu] is the mode-mu factor of term i.")
      .def_static("identity", &KronSumOperator::identity, py::arg("dims"))
      .def_property_readonly("dims", &KronSumOperator::dims)
      .def_property_readonly("rank", &KronSumOperator::rank)
      .def_property_readonly("order", &KronSumOperator::order)
      .def("to_dense", &KronSumOperator::to_dense, py::arg("max_side") = 4096)
      .def(
          "matvec",
          [](const KronSumOperator& a, const Vector& x) {
            return to_dense(kroninv::apply(a, AnyTensor(dense_from(a.dims(), x)))).data();
          },
          py::arg("x"))
      .def("adjoint", [](const KronSumOperator& a) { return adjoint(a); })
      .def("compose", [](const KronSumOperator& a, const KronSumOperator& b) { return compose(a, b); });

  py::class_<BasisOperator>(m, "BasisOperator")
      .def_property_readonly("dims", [](const BasisOperator& p) { return p.dims; })
      .def_property_readonly("basis_sizes", &BasisOperator::basis_sizes)
      .def("to_kron_sum", &BasisOperator::to_kron_sum)
      .def("to_dense", [](const BasisOperator& p, Index max_side) { return p.to_kron_sum().to_dense(max_side); },
           py::arg("max_side") = 4096)
      .def(
          "matvec",
          [](const BasisOperator& p, const Vector& x) {
            return to_dense(kroninv::apply(p, AnyTensor(dense_from(p.dims, x)))).data();
          },
          py::arg("x"));

  py::class_<Problem>(m, "Problem")
      .def_readonly("name", &Problem::name)
      .def_readonly("a", &Problem::a)
      .def_readonly("symmetric", &Problem::symmetric)
      .def_property_readonly("dims", &Problem::dims)
      .def_property_readonly("b", [](const Problem& p) { return to_dense(AnyTensor(p.b)).data(); });

  m.def(
      "poisson", [](int d, Index n) { return build_poisson({d, n}); }, py::arg("d") = 20, py::arg("n") = 100,
      "Sum over mu of K in mode mu and M elsewhere; 1-D linear elements, n interior nodes.");
  m.def(
      "stochastic_elliptic",
      [](int mesh, int p) {
        StochasticEllipticSpec spec;
        spec.mesh = mesh;
        spec.p = p;
        return build_stochastic_elliptic(spec).problem;
      },
      py::arg("mesh") = 20, py::arg("p") = 10);
  m.def(
      "mean_based_preconditioner",
      [](int mesh, int p, double fill_gamma) {
        StochasticEllipticSpec spec;
        spec.mesh = mesh;
        spec.p = p;
        return mean_based_preconditioner(build_stochastic_elliptic(spec), fill_gamma);
      },
      py::arg("mesh") = 20, py::arg("p") = 10, py::arg("fill_gamma") = 1.0);

  m.def(
      "error_estimate",
      [](const py::object& p, const KronSumOperator& a) {
        const ErrorEstimate e = py::isinstance<BasisOperator>(p) ? error_estimate(p.cast<BasisOperator>(), a)
                                                                 : error_estimate(p.cast<KronSumOperator>(), a);
        return py::make_tuple(e.epsilon, e.precision_limited);
      },
      py::arg("p"), py::arg("a"), "(epsilon, precision_limited) with epsilon = ||I - P A||_F / ||I||_F");

  m.def(
      "greedy_inverse",
      [](const KronSumOperator& a, const std::string& algorithm, int steps, const std::string& star,
         const std::string& constraint, std::vector<int> constraint_modes, double fill_gamma,
         const std::string& projection, std::uint64_t seed, const std::function<void(int, double)>& on_step) {
        require(algorithm == "alg_g" || algorithm == "alg_p", ErrorCode::InvalidArgument,
                "algorithm must be 'alg_g' or 'alg_p'");
        require(projection == "auto" || projection == "full" || projection == "ht", ErrorCode::InvalidArgument,
                "projection must be 'auto', 'full' or 'ht'");
        const int d = a.order();
        GreedyConfig cfg;
        cfg.algorithm = algorithm == "alg_g" ? GreedyAlgorithm::G : GreedyAlgorithm::P;
        cfg.steps = steps;
        cfg.correction.seed = seed;
        cfg.projection.mode = projection == "ht" || (projection == "auto" && d >= 4) ? ProjectionMode::HT
                                                                                      : ProjectionMode::Full;
        const ConstraintKind kind = constraint_of(constraint);
        cfg.constraints = PropertyConstraint::none(d);
        if (constraint_modes.empty())
          for (int mu = 0; mu < d; ++mu) constraint_modes.push_back(mu);
        for (int mu : constraint_modes) {
          require(mu >= 0 && mu < d, ErrorCode::InvalidArgument, "constraint mode out of range");
          cfg.constraints.modes[mu].kind = kind;
          cfg.constraints.modes[mu].sparse.fill_gamma = fill_gamma;
        }
        const auto s = StarInnerProduct::make(a, star_of(star));
        GreedyResult res;
        {
          // long runs: let other Python threads proceed, reacquire only for the callback
          py::gil_scoped_release release;
          res = run_greedy(s, KronSumOperator(), cfg, [&](const GreedyStep& st, const BasisOperator&) {
            if (on_step) {
              py::gil_scoped_acquire acquire;
              on_step(st.r, st.epsilon);
            }
          });
        }
        std::vector<double> eps;
        std::vector<bool> floor;
        std::vector<Dims> sizes;
        for (const auto& st : res.steps) {
          eps.push_back(st.epsilon);
          floor.push_back(st.precision_limited);
          sizes.push_back(st.basis_sizes);
        }
        py::dict out;
        out["p"] = res.p;
        out["epsilon"] = eps;
        out["floor_flag"] = floor;
        out["basis_sizes"] = sizes;
        out["iterates"] = res.iterates;
        return out;
      },
      py::arg("a"), py::arg("algorithm") = "alg_p", py::arg("steps") = 10, py::arg("star") = "spd",
      py::arg("constraint") = "none", py::arg("constraint_modes") = std::vector<int>{}, py::arg("fill_gamma") = 1.0,
      py::arg("projection") = "auto", py::arg("seed") = 0, py::arg("on_step") = nullptr);

  m.def(
      "solve",
      [](const Problem& pr, const py::object& precond, const std::string& method, Index rank, int max_iterations,
         double residual_tolerance, const std::optional<Vector>& reference) {
        SolverConfig cfg;
        require(method == "gmres" || method == "pcg", ErrorCode::InvalidArgument, "method must be 'gmres' or 'pcg'");
        cfg.method = method == "pcg" ? SolverMethod::PCG : SolverMethod::GMRES;
        cfg.iterate_truncation = TruncationSpec::uniform(rank, cfg.method == SolverMethod::GMRES ? 2 : 0);
        cfg.max_iterations = max_iterations;
        cfg.residual_tolerance = residual_tolerance;
        cfg.validate();
        std::optional<DenseTensor> ref;
        if (reference) ref = dense_from(pr.dims(), *reference);
        const Preconditioner p = precond_of(precond);
        SolveOptions opt{ref ? &*ref : nullptr, true};
        py::gil_scoped_release release;
        if (cfg.method == SolverMethod::PCG) {
          auto r = pcg_lowrank(pr.a, AnyTensor(pr.b), p, cfg, opt);
          py::gil_scoped_acquire acquire;
          return py::make_tuple(to_dense(AnyTensor(r.u)).data(), trace_dict(r.trace));
        }
        auto r = gmres_lowrank(pr.a, AnyTensor(pr.b), p, cfg, opt);
        py::gil_scoped_acquire acquire;
        return py::make_tuple(to_dense(AnyTensor(r.u)).data(), trace_dict(r.trace));
      },
      py::arg("problem"), py::arg("preconditioner") = py::none(), py::arg("method") = "gmres", py::arg("rank") = 10,
      py::arg("max_iterations") = 30, py::arg("residual_tolerance") = 0.0, py::arg("reference") = py::none(),
      "Low-rank GMRES (Tucker iterates) or PCG (HT iterates); returns (u, trace).");

  m.def(
      "reference_solution",
      [](const Problem& pr) { return reference_solution(pr.a, AnyTensor(pr.b)).data(); }, py::arg("problem"));

  m.def(
      "save", [](const py::object& p, const std::filesystem::path& path) {
        const io::Json payload = py::isinstance<BasisOperator>(p) ? io::to_json(p.cast<BasisOperator>())
                                                                  : io::to_json(p.cast<KronSumOperator>());
        io::write_json(path, io::wrap(payload, io::Json::object()));
      },
      py::arg("operator"), py::arg("path"));
  m.def(
      "load",
      [](const std::filesystem::path& path) -> py::object {
        const io::Json doc = io::read_json(path);
        const io::Json& payload = io::unwrap(doc);
        const std::string kind = payload.value("kind", std::string());
        if (kind == "basis_operator") return py::cast(io::basis_operator_from_json(payload));
        if (kind == "kron_sum") return py::cast(io::kron_sum_from_json(payload));
        throw Error(ErrorCode::Serialization, "'" + path.string() + "' holds no operator (kind '" + kind + "')");
      },
      py::arg("path"));
}
