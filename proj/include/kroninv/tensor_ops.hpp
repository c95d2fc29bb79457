#pragma once

#include "kroninv/tensor.hpp"

namespace kroninv {

Dims dims_of(const AnyTensor& x);
int order_of(const AnyTensor& x);

/// Canonical inner product, evaluated factor-wise whenever both arguments are
/// low-rank.
double inner(const AnyTensor& x, const AnyTensor& y);
double norm(const AnyTensor& x);

/// Σ_{i,j} x_i y_j ∏_μ G[μ](i_μ, j_μ), i.e. ⟨x, (⊗_μ G[μ]) y⟩ with G[μ] of
/// shape (n_μ(x) × n_μ(y)).
double gram_inner(const AnyTensor& x, const AnyTensor& y, std::span<const Matrix> grams);

/// ⟨x, ⊗_μ v[μ]⟩
double full_contract(const AnyTensor& x, std::span<const Vector> vectors);
/// Contraction with v[μ] for every μ ≠ mode; returns a vector of length n_mode.
Vector contract_except(const AnyTensor& x, std::span<const Vector> vectors, int mode);

/// Densification; throws SizeExceeded above `cap` entries.
DenseTensor to_dense(const AnyTensor& x, Index cap = kDensifyCap);

/// Numerical rank of M_t(x) with threshold 1e-10·σ_max.
Index t_matricization_rank(const DenseTensor& x, const std::vector<int>& modes);

/// Truncated HOSVD: dominant left singular vectors of every mode unfolding.
TuckerTensor hosvd(const AnyTensor& x, const Dims& ranks);

struct HooiResult {
  TuckerTensor tucker;
  std::vector<double> errors;  ///< absolute error after HOSVD and after every sweep
};

/// Higher-order orthogonal iterations starting from `init` (HOSVD when absent).
HooiResult hooi_refine(const AnyTensor& x, const Dims& ranks, int sweeps,
                       const std::optional<TuckerTensor>& init = std::nullopt);

/// QR-orthonormalizes the factors, absorbing the triangular parts in the core.
TuckerTensor tucker_orthonormalize(const TuckerTensor& x);
TuckerTensor tucker_add(const TuckerTensor& x, const TuckerTensor& y, double alpha = 1.0, double beta = 1.0);
TuckerTensor tucker_scale(TuckerTensor x, double s);
TuckerTensor tucker_from_canonical(const CanonicalTensor& x);
/// Orthonormalize, HOSVD of the core at the requested ranks/tolerance, then
/// spec.refine_iterations HOOI sweeps.
TuckerTensor truncate(const TuckerTensor& x, const TruncationSpec& spec);

/// Root-to-leaves HSVD of a dense tensor.
HTTensor hsvd(const DenseTensor& x, const DimensionTree& tree, const std::vector<Index>& ranks);
/// HSVD truncation of an HT tensor (orthogonalize, reduced Gramians, project).
HTTensor truncate(const HTTensor& x, const TruncationSpec& spec);

/// Bottom-up QR orthogonalization; all non-root frames become orthonormal.
HTTensor ht_orthogonalize(const HTTensor& x);
/// ⟨x, y⟩ under the weighted product whose mode-μ Gram between the leaf
/// frames' underlying spaces is leaf_grams[μ] (n_μ(x) × n_μ(y)).
double ht_gram_inner(const HTTensor& x, const HTTensor& y, std::span<const Matrix> leaf_grams);
HTTensor ht_add(const HTTensor& x, const HTTensor& y, double alpha = 1.0, double beta = 1.0);
HTTensor ht_scale(HTTensor x, double s);

/// Exact conversion of any format to HT on the given tree.
HTTensor to_ht(const AnyTensor& x, const DimensionTree& tree);
/// Exact conversion to Tucker.
TuckerTensor to_tucker(const AnyTensor& x);

/// Leading `rank` left singular vectors with the relative floor
/// max(tol, kSingularFloor)·σ_max applied.
Matrix leading_left_singular_vectors(const Matrix& m, Index rank, double tol = 0.0);

}  // namespace kroninv
