#include "kroninv/problems.hpp"

#include "kroninv/error.hpp"

#include <unsupported/Eigen/KroneckerProduct>

#include <algorithm>
#include <cmath>

namespace kroninv {

namespace {

SparseMatrix tridiag(Index n, double off, double diag) {
  std::vector<Eigen::Triplet<double>> t;
  for (Index i = 0; i < n; ++i) {
    t.emplace_back(i, i, diag);
    if (i + 1 < n) {
      t.emplace_back(i, i + 1, off);
      t.emplace_back(i + 1, i, off);
    }
  }
  SparseMatrix m(n, n);
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

}  // namespace

SparseMatrix fem1d_stiffness(Index n) {
  const double h = 1.0 / double(n + 1);
  return tridiag(n, -1.0 / h, 2.0 / h);
}

SparseMatrix fem1d_mass(Index n) {
  const double h = 1.0 / double(n + 1);
  return tridiag(n, h / 6.0, 2.0 * h / 3.0);
}

Vector fem1d_load(Index n, double lo, double hi) {
  const double h = 1.0 / double(n + 1);
  // ∫ of the hat at node x_i over [a,b] ∩ [x_{i-1}, x_{i+1}]; piecewise linear, so Simpson is exact per piece
  auto piece = [](double a, double b, auto phi) {
    if (b <= a) return 0.0;
    return (b - a) / 6.0 * (phi(a) + 4.0 * phi(0.5 * (a + b)) + phi(b));
  };
  Vector c(n);
  for (Index i = 0; i < n; ++i) {
    const double xi = double(i + 1) * h;
    auto phi = [&](double x) { return std::max(0.0, 1.0 - std::abs(x - xi) / h); };
    c[i] = piece(std::max(lo, xi - h), std::min(hi, xi), phi) + piece(std::max(lo, xi), std::min(hi, xi + h), phi);
  }
  return c;
}

Matrix legendre_gram(int p) { return Matrix::Identity(p, p); }

Matrix legendre_multiply(int p) {
  Matrix g = Matrix::Zero(p, p);
  for (int k = 0; k + 1 < p; ++k) {
    const double v = double(k + 1) / std::sqrt(double(2 * k + 1) * double(2 * k + 3));
    g(k, k + 1) = v;
    g(k + 1, k) = v;
  }
  return g;
}

Vector legendre_moments(int p) { return Vector::Unit(p, 0); }

void PoissonSpec::validate() const {
  require(d >= 2, ErrorCode::InvalidArgument, "poisson: d must be at least 2");
  require(n >= 2, ErrorCode::InvalidArgument, "poisson: n must be at least 2");
}

Problem build_poisson(const PoissonSpec& spec) {
  spec.validate();
  const double h = 1.0 / double(spec.n + 1);
  const auto k = make_factor(fem1d_stiffness(spec.n));
  const auto m = make_factor(fem1d_mass(spec.n));
  Problem out;
  out.name = "poisson";
  out.a = KronSumOperator(Dims(spec.d, spec.n));
  for (int nu = 0; nu < spec.d; ++nu) {
    std::vector<FactorPtr> f(spec.d, m);
    f[nu] = k;
    out.a.add_term(std::move(f));
  }
  out.b = CanonicalTensor::rank_one(std::vector<Vector>(spec.d, Vector::Constant(spec.n, h)));
  return out;
}

void StochasticEllipticSpec::validate() const {
  require(mesh >= 2, ErrorCode::InvalidArgument, "stochastic: mesh must be at least 2");
  require(p >= 1, ErrorCode::InvalidArgument, "stochastic: p must be at least 1");
  require(kappa_range.first > 0.0 && kappa_range.first < kappa_range.second, ErrorCode::InvalidArgument,
          "stochastic: kappa_range must be positive and ordered");
  require(eta_range.first > 0.0 && eta_range.first < eta_range.second, ErrorCode::InvalidArgument,
          "stochastic: eta_range must be positive and ordered");
  require(load_region.first < load_region.second, ErrorCode::InvalidArgument, "stochastic: load_region must be ordered");
}

StochasticElliptic build_stochastic_elliptic(const StochasticEllipticSpec& spec) {
  spec.validate();
  const Index n1 = spec.mesh - 1;
  const SparseMatrix k1 = fem1d_stiffness(n1), m1 = fem1d_mass(n1);
  StochasticElliptic out;
  out.spec = spec;
  out.interior_nodes = n1 * n1;
  // bilinear elements on a tensor grid: 2-D matrices are Kronecker products of the 1-D ones
  out.kx = SparseMatrix(Eigen::kroneckerProduct(m1, k1)) + SparseMatrix(Eigen::kroneckerProduct(k1, m1));
  out.mx = Eigen::kroneckerProduct(m1, m1);
  out.kx.makeCompressed();
  out.mx.makeCompressed();
  const Vector c = fem1d_load(n1, spec.load_region.first, spec.load_region.second);
  out.fx.resize(n1 * n1);
  for (Index j = 0; j < n1; ++j) out.fx.segment(j * n1, n1) = c[j] * c;

  const int p = spec.p;
  out.g0 = legendre_gram(p);
  const Matrix g1 = legendre_multiply(p);
  const double ka = spec.kappa_mean(), kb = 0.5 * (spec.kappa_range.second - spec.kappa_range.first);
  const double ea = spec.eta_mean(), eb = 0.5 * (spec.eta_range.second - spec.eta_range.first);
  out.g_kappa = ka * out.g0 + kb * g1;
  out.g_eta = ea * out.g0 + eb * g1;
  out.g = legendre_moments(p);

  Problem& pr = out.problem;
  pr.name = "stochastic_elliptic";
  pr.a = KronSumOperator(Dims{n1 * n1, p, p});
  const auto g0 = make_factor(out.g0);
  pr.a.add_term({make_factor(out.kx), make_factor(out.g_kappa), g0});
  pr.a.add_term({make_factor(out.mx), g0, make_factor(out.g_eta)});
  pr.b = CanonicalTensor::rank_one({out.fx, out.g, out.g});
  return out;
}

}  // namespace kroninv
