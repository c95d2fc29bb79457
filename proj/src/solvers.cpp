#include "kroninv/solvers.hpp"

#include "kroninv/error.hpp"
#include "kroninv/rank_one_inverse.hpp"
#include "kroninv/tensor_ops.hpp"
#include "detail/overloaded.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>
#include <unsupported/Eigen/KroneckerProduct>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <ostream>

namespace kroninv {

// ---------------------------------------------------------------------------
// preconditioner

Preconditioner::Preconditioner(KronSumOperator p) : op_(std::move(p)) {}
Preconditioner::Preconditioner(BasisOperator p) : op_(std::move(p)) {}

AnyTensor Preconditioner::apply(const AnyTensor& x) const {
  return std::visit(detail::overloaded{
                        [&](const std::monostate&) { return x; },
                        [&](const KronSumOperator& p) { return kroninv::apply(p, x); },
                        [&](const BasisOperator& p) { return kroninv::apply(p, x); },
                    },
                    op_);
}

// ---------------------------------------------------------------------------
// config, traces

void SolverConfig::validate() const {
  iterate_truncation.validate();
  require(max_iterations >= 1, ErrorCode::InvalidArgument, "max_iterations must be at least 1");
  require(internal_rank_cap >= 0, ErrorCode::InvalidArgument, "internal_rank_cap must be nonnegative");
  require(residual_tolerance >= 0.0, ErrorCode::InvalidArgument, "residual_tolerance must be nonnegative");
  require(stagnation_window >= 1, ErrorCode::InvalidArgument, "stagnation_window must be positive");
  require(residual_refresh >= 0, ErrorCode::InvalidArgument, "residual_refresh must be nonnegative");
}

void SolveTrace::write_csv(std::ostream& out, bool with_time) const {
  out << "iteration,relative_residual,epsilon_solution,epsilon_preconditioned,wall_ms\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    out << r.iteration << ',' << num(r.relative_residual) << ',';
    if (r.epsilon_solution) out << num(*r.epsilon_solution);
    out << ',';
    if (r.epsilon_preconditioned) out << num(*r.epsilon_preconditioned);
    out << ',' << (with_time ? num(r.wall_ms) : std::string("0")) << '\n';
  }
}

// ---------------------------------------------------------------------------
// truncated arithmetic

AnyTensor truncate_any(const AnyTensor& x, const TruncationSpec& spec) {
  return std::visit(detail::overloaded{
                        [&](const HTTensor& t) -> AnyTensor { return truncate(t, spec); },
                        [&](const TuckerTensor& t) -> AnyTensor { return truncate(t, spec); },
                        [&](const CanonicalTensor& t) -> AnyTensor { return truncate(to_tucker(t), spec); },
                        [&](const DenseTensor& t) -> AnyTensor { return t; },
                    },
                    x);
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) { return std::chrono::duration<double, std::milli>(Clock::now() - t0).count(); }

// α x + β y in the common format
AnyTensor axpby(double alpha, const AnyTensor& x, double beta, const AnyTensor& y) {
  return std::visit(
      [&](const auto& xv) -> AnyTensor {
        using T = std::decay_t<decltype(xv)>;
        const T& yv = std::get<T>(y);
        if constexpr (std::is_same_v<T, HTTensor>) {
          return ht_add(xv, yv, alpha, beta);
        } else if constexpr (std::is_same_v<T, TuckerTensor>) {
          return tucker_add(xv, yv, alpha, beta);
        } else if constexpr (std::is_same_v<T, DenseTensor>) {
          return DenseTensor(xv.dims(), alpha * xv.data() + beta * yv.data());
        } else {
          return axpby(alpha, AnyTensor(to_tucker(xv)), beta, AnyTensor(to_tucker(yv)));
        }
      },
      x);
}

AnyTensor scaled(const AnyTensor& x, double s) {
  return std::visit(
      [&](const auto& xv) -> AnyTensor {
        using T = std::decay_t<decltype(xv)>;
        if constexpr (std::is_same_v<T, HTTensor>) {
          return ht_scale(xv, s);
        } else if constexpr (std::is_same_v<T, TuckerTensor>) {
          return tucker_scale(xv, s);
        } else if constexpr (std::is_same_v<T, DenseTensor>) {
          return DenseTensor(xv.dims(), s * xv.data());
        } else {
          CanonicalTensor c = xv;
          c.weights *= s;
          return c;
        }
      },
      x);
}

TruncationSpec internal_spec(const SolverConfig& cfg) {
  TruncationSpec s = cfg.iterate_truncation;
  s.refine_iterations = 0;
  if (cfg.internal_rank_cap > 0) {
    s.ranks.clear();
    s.max_rank = cfg.internal_rank_cap;
  } else if (s.max_rank > 0 || !s.ranks.empty()) {
    for (auto& r : s.ranks) r *= 2;
    s.max_rank *= 2;
  }
  return s;
}

struct Recorder {
  const SolveOptions& options;
  const Preconditioner& p;
  const KronSumOperator& a;
  const AnyTensor& b;
  double b_norm;
  double pb_norm = 0.0;
  Clock::time_point t0 = Clock::now();

  // rhs in the format of the iterates
  Recorder(const SolveOptions& o, const Preconditioner& pr, const KronSumOperator& op, const AnyTensor& rhs)
      : options(o), p(pr), a(op), b(rhs), b_norm(norm(rhs)) {
    if (options.preconditioned_residual) pb_norm = norm(p.apply(b));
  }

  TraceRow row(int k, const AnyTensor& u, double rel_res) const {
    TraceRow r;
    r.iteration = k;
    r.relative_residual = rel_res;
    if (options.reference) {
      const DenseTensor ud = to_dense(u);
      const double rn = options.reference->norm();
      r.epsilon_solution = (ud.data() - options.reference->data()).norm() / (rn > 0.0 ? rn : 1.0);
    }
    if (options.preconditioned_residual) {
      const AnyTensor res = axpby(1.0, b, -1.0, kroninv::apply(a, u));
      r.epsilon_preconditioned = norm(p.apply(res)) / (pb_norm > 0.0 ? pb_norm : 1.0);
    }
    r.wall_ms = ms_since(t0);
    return r;
  }
};

// best residual failed to improve by 1% over the last `window` iterations
bool stagnating(const std::vector<TraceRow>& rows, int window) {
  if (int(rows.size()) <= window) return false;
  double before = rows.front().relative_residual;
  for (std::size_t i = 0; i + window < rows.size(); ++i) before = std::min(before, rows[i].relative_residual);
  double recent = before;
  for (std::size_t i = rows.size() - window; i < rows.size(); ++i) recent = std::min(recent, rows[i].relative_residual);
  return recent > 0.99 * before;
}

}  // namespace

AnyTensor apply_truncated(const KronSumOperator& a, const AnyTensor& x, const TruncationSpec& spec) {
  const auto parts = apply_terms(a, x);
  require(!parts.empty(), ErrorCode::InvalidArgument, "operator has no terms");
  AnyTensor acc = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) acc = truncate_any(axpby(1.0, acc, 1.0, parts[i]), spec);
  return truncate_any(acc, spec);
}

// ---------------------------------------------------------------------------
// PCG

PcgResult pcg_lowrank(const KronSumOperator& a, const AnyTensor& b, const Preconditioner& p, const SolverConfig& cfg,
                      const SolveOptions& options) {
  cfg.validate();
  const Dims dims = dims_of(b);
  require(dims == a.dims(), ErrorCode::DimensionMismatch, "right-hand side dimensions differ from the operator");
  const DimensionTree tree = cfg.tree ? *cfg.tree : DimensionTree::balanced(int(dims.size()));
  const TruncationSpec& ts = cfg.iterate_truncation;
  const TruncationSpec is = internal_spec(cfg);
  auto T = [&](const AnyTensor& x) { return truncate_any(x, ts); };

  const AnyTensor bh = AnyTensor(to_ht(b, tree));
  Recorder rec(options, p, a, bh);
  PcgResult res;
  auto& trace = res.trace;
  AnyTensor u = AnyTensor(HTTensor::zero(dims, tree));
  if (rec.b_norm == 0.0) {
    trace.rows.push_back(rec.row(0, u, 0.0));
    trace.converged = true;
    res.u = std::get<HTTensor>(u);
    return res;
  }
  AnyTensor r = T(bh);
  AnyTensor z = T(p.apply(r));
  AnyTensor dir = z;
  double rz = inner(r, z);
  trace.rows.push_back(rec.row(0, u, norm(r) / rec.b_norm));
  for (int k = 1; k <= cfg.max_iterations; ++k) {
    const AnyTensor q = T(apply_truncated(a, dir, is));
    const double pq = inner(dir, q);
    if (!(pq > 0.0)) {
      trace.breakdown = true;
      trace.message = "breakdown: p^T A p = " + std::to_string(pq) + " at iteration " + std::to_string(k);
      break;
    }
    const double step = rz / pq;
    u = T(axpby(1.0, u, step, dir));
    if (cfg.residual_refresh > 0 && k % cfg.residual_refresh == 0)
      r = T(axpby(1.0, bh, -1.0, apply_truncated(a, u, is)));
    else
      r = T(axpby(1.0, r, -step, q));
    const double rel = norm(r) / rec.b_norm;
    trace.rows.push_back(rec.row(k, u, rel));
    if (rel == 0.0 || (cfg.residual_tolerance > 0.0 && rel <= cfg.residual_tolerance)) {
      trace.converged = true;
      break;
    }
    if (cfg.stop_on_stagnation && stagnating(trace.rows, cfg.stagnation_window)) {
      trace.stagnated = true;
      break;
    }
    z = T(p.apply(r));
    const double rz_new = inner(r, z);
    if (rz == 0.0) break;
    dir = T(axpby(1.0, z, rz_new / rz, dir));
    rz = rz_new;
  }
  res.u = std::get<HTTensor>(u);
  return res;
}

// ---------------------------------------------------------------------------
// GMRES

GmresResult gmres_lowrank(const KronSumOperator& a, const AnyTensor& b, const Preconditioner& p,
                          const SolverConfig& cfg, const SolveOptions& options) {
  cfg.validate();
  const Dims dims = dims_of(b);
  require(dims == a.dims(), ErrorCode::DimensionMismatch, "right-hand side dimensions differ from the operator");
  const TruncationSpec& ts = cfg.iterate_truncation;
  const TruncationSpec is = internal_spec(cfg);
  auto T = [&](const AnyTensor& x) { return truncate_any(x, ts); };

  const AnyTensor bt = AnyTensor(to_tucker(b));
  Recorder rec(options, p, a, bt);
  GmresResult res;
  auto& trace = res.trace;
  AnyTensor u = AnyTensor(to_tucker(CanonicalTensor::zero(dims)));
  auto true_residual = [&](const AnyTensor& x) { return norm(axpby(1.0, bt, -1.0, kroninv::apply(a, x))) / rec.b_norm; };

  trace.rows.push_back(rec.row(0, u, rec.b_norm > 0.0 ? 1.0 : 0.0));
  const AnyTensor r0 = T(p.apply(bt));
  const double beta = norm(r0);
  if (rec.b_norm == 0.0 || beta == 0.0) {
    trace.converged = rec.b_norm == 0.0;
    if (!trace.converged) trace.message = "preconditioned right-hand side vanishes";
    res.u = std::get<TuckerTensor>(u);
    return res;
  }
  std::vector<AnyTensor> v{scaled(r0, 1.0 / beta)};
  const int m = cfg.max_iterations;
  Matrix h = Matrix::Zero(m + 1, m);
  for (int j = 0; j < m; ++j) {
    AnyTensor w = T(p.apply(apply_truncated(a, v[j], is)));
    for (int pass = 0; pass < 2; ++pass)
      for (int i = 0; i <= j; ++i) {
        const double hij = inner(w, v[i]);
        h(i, j) += hij;
        w = T(axpby(1.0, w, -hij, v[i]));
      }
    const double hn = norm(w);
    h(j + 1, j) = hn;
    // least squares on the (j+2)×(j+1) Hessenberg block
    const Matrix hj = h.topLeftCorner(j + 2, j + 1);
    Vector g = Vector::Zero(j + 2);
    g[0] = beta;
    const Vector y = hj.colPivHouseholderQr().solve(g);
    const double ls = (g - hj * y).norm() / beta;
    AnyTensor acc = scaled(v[0], y[0]);
    for (int i = 1; i <= j; ++i) acc = T(axpby(1.0, acc, y[i], v[i]));
    u = T(acc);
    trace.rows.push_back(rec.row(j + 1, u, true_residual(u)));
    const bool happy = hn <= 1e-14 * beta;
    if (happy || (cfg.residual_tolerance > 0.0 && ls <= cfg.residual_tolerance)) {
      trace.converged = true;
      if (happy) trace.message = "happy breakdown at iteration " + std::to_string(j + 1);
      break;
    }
    if (cfg.stop_on_stagnation && stagnating(trace.rows, cfg.stagnation_window)) {
      trace.stagnated = true;
      break;
    }
    v.push_back(scaled(w, 1.0 / hn));
  }
  res.u = std::get<TuckerTensor>(u);
  return res;
}

// ---------------------------------------------------------------------------
// reference solution

namespace {

SparseMatrix as_sparse(const Factor& f) {
  if (f.is_sparse()) return f.sparse();
  return f.dense().sparseView();
}

using GlobalSparse = Eigen::SparseMatrix<double>;

GlobalSparse assemble_sparse(const KronSumOperator& a) {
  const Index n = product(a.dims());
  GlobalSparse out(n, n);
  for (const auto& t : a.terms()) {
    GlobalSparse k = GlobalSparse(as_sparse(*t.factors[0]));
    for (int m = 1; m < a.order(); ++m) {
      GlobalSparse next = Eigen::kroneckerProduct(GlobalSparse(as_sparse(*t.factors[m])), k);
      k = std::move(next);
    }
    out += t.weight * k;
  }
  out.makeCompressed();
  return out;
}

bool is_symmetric(const GlobalSparse& s) { return (s - GlobalSparse(s.transpose())).norm() <= 1e-14 * s.norm(); }

using Solve = std::function<Vector(const Vector&)>;

Solve sparse_direct(const GlobalSparse& s) {
  if (is_symmetric(s)) {
    auto f = std::make_shared<Eigen::SimplicialLDLT<GlobalSparse>>(s);
    require(f->info() == Eigen::Success, ErrorCode::Breakdown, "sparse LDLT failed");
    return [f](const Vector& v) { return Vector(f->solve(v)); };
  }
  auto f = std::make_shared<Eigen::SparseLU<GlobalSparse>>(s);
  require(f->info() == Eigen::Success, ErrorCode::Breakdown, "sparse LU failed");
  return [f](const Vector& v) { return Vector(f->solve(v)); };
}

// When every mode but the first has symmetric, pairwise commuting factors,
// one orthogonal basis per mode diagonalizes them all and A splits into
// independent mode-0 systems, one per index of the remaining modes.
std::optional<Solve> block_diagonal_solver(const KronSumOperator& a) {
  const int d = a.order();
  const Dims dims = a.dims();
  const int nt = a.rank();
  std::vector<Matrix> v(d);
  std::vector<std::vector<Vector>> lam(d, std::vector<Vector>(nt));
  for (int m = 1; m < d; ++m) {
    std::vector<Matrix> f;
    for (int t = 0; t < nt; ++t) f.push_back(a.term(t).factors[m]->to_dense());
    Matrix mix = Matrix::Zero(dims[m], dims[m]);
    for (int t = 0; t < nt; ++t) {
      const double fn = f[t].norm();
      if ((f[t] - f[t].transpose()).norm() > 1e-13 * fn) return std::nullopt;
      // generic weights so that distinct joint eigenvalues stay distinct
      mix += (1.0 + 0.6180339887498949 * double(t + 1)) * f[t] / (fn > 0.0 ? fn : 1.0);
    }
    const Eigen::SelfAdjointEigenSolver<Matrix> es(mix);
    v[m] = es.eigenvectors();
    for (int t = 0; t < nt; ++t) {
      Matrix dg = v[m].transpose() * f[t] * v[m];
      lam[m][t] = dg.diagonal();
      dg.diagonal().setZero();
      if (dg.norm() > 1e-11 * f[t].norm()) return std::nullopt;
    }
  }
  const Index n0 = dims[0];
  const Index blocks = product(dims) / n0;
  std::vector<SparseMatrix> f0;
  for (int t = 0; t < nt; ++t) f0.push_back(as_sparse(*a.term(t).factors[0]));
  auto solvers = std::make_shared<std::vector<Solve>>();
  solvers->reserve(blocks);
  std::vector<Index> idx(d, 0);
  for (Index blk = 0; blk < blocks; ++blk) {
    Index rest = blk;
    for (int m = 1; m < d; ++m) {
      idx[m] = rest % dims[m];
      rest /= dims[m];
    }
    GlobalSparse s(n0, n0);
    for (int t = 0; t < nt; ++t) {
      double w = a.term(t).weight;
      for (int m = 1; m < d; ++m) w *= lam[m][t][idx[m]];
      s += w * GlobalSparse(f0[t]);
    }
    s.makeCompressed();
    solvers->push_back(sparse_direct(s));
  }
  return Solve([=](const Vector& rhs) {
    DenseTensor y(dims, rhs);
    for (int m = 1; m < d; ++m) y = y.mode_product(m, v[m].transpose());
    Matrix cols = Eigen::Map<const Matrix>(y.data().data(), n0, blocks);
    for (Index blk = 0; blk < blocks; ++blk) cols.col(blk) = (*solvers)[blk](cols.col(blk));
    DenseTensor x(dims, Eigen::Map<const Vector>(cols.data(), cols.size()));
    for (int m = 1; m < d; ++m) x = x.mode_product(m, v[m]);
    return x.data();
  });
}

}  // namespace

DenseTensor reference_solution(const KronSumOperator& a, const AnyTensor& b, double tol, Index max_unknowns) {
  const Dims dims = dims_of(b);
  require(dims == a.dims(), ErrorCode::DimensionMismatch, "right-hand side dimensions differ from the operator");
  const Index n = product(dims);
  if (n > max_unknowns)
    throw Error(ErrorCode::SizeExceeded, "reference solve needs " + std::to_string(n) + " unknowns, above the limit of " +
                                             std::to_string(max_unknowns));
  const Vector rhs = to_dense(b).data();
  Solve solve;
  if (n <= 4096) {
    auto lu = std::make_shared<Eigen::PartialPivLU<Matrix>>(a.to_dense(4096));
    solve = [lu](const Vector& v) { return Vector(lu->solve(v)); };
  } else if (auto blockwise = block_diagonal_solver(a)) {
    solve = *blockwise;
  } else {
    solve = sparse_direct(assemble_sparse(a));
  }
  auto op = [&](const Vector& x) { return to_dense(kroninv::apply(a, AnyTensor(DenseTensor(dims, x)))).data(); };
  Vector x = solve(rhs);
  const double bn = rhs.norm();
  double rel = 0.0;
  for (int it = 0; it < 6; ++it) {
    const Vector r = rhs - op(x);
    rel = r.norm() / (bn > 0.0 ? bn : 1.0);
    if (rel <= tol) return DenseTensor(dims, std::move(x));
    x += solve(r);
  }
  throw Error(ErrorCode::Breakdown, "reference solve stalled at relative residual " + std::to_string(rel));
}

// ---------------------------------------------------------------------------
// mean-based preconditioner

FactorPtr sparse_approximate_inverse(const Matrix& a, double fill_gamma) {
  require(a.rows() == a.cols(), ErrorCode::DimensionMismatch, "SPAI needs a square matrix");
  require(fill_gamma > 0.0, ErrorCode::InvalidArgument, "fill_gamma must be positive");
  if (fill_gamma >= 1.0) {
    const Eigen::PartialPivLU<Matrix> lu(a);
    return make_factor(lu.inverse());
  }
  // rows of W solve w_k (A Aᵀ) = (Aᵀ)_k on their pattern
  const Matrix q = a * a.transpose();
  const Matrix h = a.transpose();
  const SparsityPattern diag = SparsityPattern::diagonal(a.rows());
  const Matrix w0 = solve_sparse_rows(q, h, diag);
  const Index budget = SparsityPattern::row_budget(fill_gamma, a.rows());
  const PatternUpdate up = adapt_pattern(q, h, w0, diag, fill_gamma, int(budget) - 1);
  std::vector<Eigen::Triplet<double>> trip;
  for (Index k = 0; k < a.rows(); ++k)
    for (Index j : up.pattern.rows[k]) trip.emplace_back(k, j, up.w(k, j));
  SparseMatrix s(a.rows(), a.cols());
  s.setFromTriplets(trip.begin(), trip.end());
  return make_factor(std::move(s));
}

KronSumOperator mean_based_preconditioner(const StochasticElliptic& problem, double fill_gamma) {
  const auto& spec = problem.spec;
  const Matrix mean = spec.kappa_mean() * Matrix(problem.kx) + spec.eta_mean() * Matrix(problem.mx);
  const Matrix g0inv = problem.g0.inverse();
  auto g = make_factor(g0inv);
  return KronSumOperator::rank_one({sparse_approximate_inverse(mean, fill_gamma), g, g});
}

}  // namespace kroninv
