#pragma once

#include "kroninv/kron_operator.hpp"

#include <string>
#include <utility>

namespace kroninv {

/// A x = b with A in Kronecker-sum form and a rank-one right-hand side.
struct Problem {
  std::string name;
  KronSumOperator a;
  CanonicalTensor b;
  bool symmetric = true;

  const Dims& dims() const { return a.dims(); }
};

// 1-D linear finite elements on (0,1) with n interior nodes, h = 1/(n+1)
SparseMatrix fem1d_stiffness(Index n);
SparseMatrix fem1d_mass(Index n);
/// c_i = ∫_lo^hi φ_i(x) dx, exact
Vector fem1d_load(Index n, double lo, double hi);

// orthonormal Legendre polynomials w.r.t. the uniform probability on (-1,1)
/// ⟨ψ_i, ψ_j⟩, the identity
Matrix legendre_gram(int p);
/// ⟨ξ ψ_i, ψ_j⟩, symmetric tridiagonal with zero diagonal
Matrix legendre_multiply(int p);
/// ⟨1, ψ_i⟩
Vector legendre_moments(int p);

struct PoissonSpec {
  int d = 20;
  Index n = 100;

  void validate() const;
};

/// Σ_ν ⊗_μ (ν == μ ? K : M), b = ⊗ c with c = h·ones.
Problem build_poisson(const PoissonSpec& spec);

struct StochasticEllipticSpec {
  int mesh = 20;  ///< elements per side of the unit square
  int p = 10;     ///< Legendre polynomials per random dimension
  std::pair<double, double> kappa_range{1.0, 10.0};
  std::pair<double, double> eta_range{200.0, 1000.0};
  std::pair<double, double> load_region{0.6, 0.8};  ///< f = 1 on this interval squared

  void validate() const;
  double kappa_mean() const { return 0.5 * (kappa_range.first + kappa_range.second); }
  double eta_mean() const { return 0.5 * (eta_range.first + eta_range.second); }
};

struct StochasticElliptic {
  Problem problem;
  SparseMatrix kx, mx;  ///< 2-D bilinear stiffness and mass on interior nodes, x index fastest
  Matrix g_kappa, g_eta, g0;
  Vector fx, g;
  Index interior_nodes = 0;
  StochasticEllipticSpec spec;
};

/// A = K_x ⊗ Gκ ⊗ G0 + M_x ⊗ G0 ⊗ Gη, b = f_x ⊗ g ⊗ g (mode 0 spatial).
StochasticElliptic build_stochastic_elliptic(const StochasticEllipticSpec& spec);

}  // namespace kroninv
