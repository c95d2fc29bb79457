#pragma once

#include "kroninv/tensor.hpp"

#include <vector>

namespace kroninv {

struct KronTerm {
  std::vector<FactorPtr> factors;
  double weight = 1.0;
};

/// Σ_i weight_i ⊗_μ factors_i[μ] acting on tensors whose mode 0 varies
/// fastest, i.e. densely kron(F[d-1], …, F[0]).
class KronSumOperator {
 public:
  KronSumOperator() = default;
  explicit KronSumOperator(Dims dims);

  static KronSumOperator identity(const Dims& dims);
  static KronSumOperator rank_one(std::vector<FactorPtr> factors, double weight = 1.0);

  void add_term(std::vector<FactorPtr> factors, double weight = 1.0);
  /// Appends all terms of `other`, weights multiplied by `scale`.
  void append(const KronSumOperator& other, double scale = 1.0);

  const Dims& dims() const { return dims_; }
  int order() const { return int(dims_.size()); }
  Index rank() const { return Index(terms_.size()); }
  const std::vector<KronTerm>& terms() const { return terms_; }
  const KronTerm& term(Index i) const { return terms_[i]; }

  KronSumOperator scaled(double s) const;
  /// Dense assembly; refuses when prod(dims) exceeds `max_side`.
  Matrix to_dense(Index max_side = 4096) const;

 private:
  Dims dims_;
  std::vector<KronTerm> terms_;
};

/// x ×_mode F for a dense or sparse factor.
DenseTensor mode_apply(const DenseTensor& x, int mode, const Factor& f);

/// A x, exact. Dense stays dense, canonical rank grows to R·r, Tucker and HT
/// results are exact sums (ranks multiply by R) left for the caller to truncate.
AnyTensor apply(const KronSumOperator& a, const AnyTensor& x);
/// The R per-term products A_i x, each in the format of x.
std::vector<AnyTensor> apply_terms(const KronSumOperator& a, const AnyTensor& x);

KronSumOperator compose(const KronSumOperator& a, const KronSumOperator& b);
KronSumOperator adjoint(const KronSumOperator& a);
/// Σ_{i,j} w_i w_j ∏_μ trace(X_i^μᵀ Y_j^μ)
double frobenius_inner_ops(const KronSumOperator& x, const KronSumOperator& y);

enum class StarMode { SPD, GENERAL };

/// ⟨X, Y⟩_⋆ = ⟨X C, Y⟩ with C = A B; B = I (SPD) or B = Aᵀ (GENERAL).
struct StarInnerProduct {
  StarMode mode = StarMode::SPD;
  KronSumOperator a;
  KronSumOperator b;
  KronSumOperator c;

  static StarInnerProduct make(const KronSumOperator& a, StarMode mode);
};

double star_inner(const KronSumOperator& x, const KronSumOperator& y, const StarInnerProduct& star);
/// ⟨A⁻¹, Q⟩_⋆ = ⟨B, Q⟩, evaluated without A⁻¹.
double star_inner_with_inverse(const KronSumOperator& q, const StarInnerProduct& star);
/// R(P) = B − P C, uncompressed.
KronSumOperator residual_operator(const KronSumOperator& p, const KronSumOperator& a, const StarInnerProduct& star);

/// P = Σ_i α_i ⊗_μ basis[μ][i_μ] with the coefficient tensor α in any format
/// over (r_1,…,r_d). A canonical α with unit-vector factors is a plain sum of
/// Kronecker terms.
struct BasisOperator {
  Dims dims;
  std::vector<std::vector<FactorPtr>> basis;
  AnyTensor coeff;

  static BasisOperator zero(const Dims& dims);
  static BasisOperator from_kron_sum(const KronSumOperator& op);

  bool is_zero() const;
  Dims basis_sizes() const;
  /// Expansion into Kronecker terms (canonical α: one term per rank; other
  /// formats: one term per nonzero entry, small cores only).
  KronSumOperator to_kron_sum() const;
};

/// P x, exact. Tucker and HT inputs keep their format with ranks multiplied
/// by those of the coefficient tensor; dense stays dense.
AnyTensor apply(const BasisOperator& p, const AnyTensor& x);

/// ‖I − P A‖² / ‖I‖² by factorized trace products. Values whose squared form
/// is below 1e-17 are flagged as limited by cancellation (extended precision inside).
struct ErrorEstimate {
  double epsilon = 1.0;
  double squared = 1.0;
  bool precision_limited = false;
};
ErrorEstimate error_estimate(const BasisOperator& p, const KronSumOperator& a);
ErrorEstimate error_estimate(const KronSumOperator& p, const KronSumOperator& a);

}  // namespace kroninv
