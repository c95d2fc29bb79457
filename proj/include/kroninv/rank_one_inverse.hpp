#pragma once

#include "kroninv/kron_operator.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace kroninv {

enum class ConstraintKind { None, Symmetric, Skew, Sparse };

enum class InitialPattern { Diagonal, Custom };

struct SparseConfig {
  double fill_gamma = 1.0;                ///< fraction of n² allowed per mode, in (0,1]
  std::optional<int> pattern_iterations;  ///< default: fill budget per row minus one
  InitialPattern initial = InitialPattern::Diagonal;
  std::vector<std::vector<Index>> custom_rows;
};

struct ModeConstraint {
  ConstraintKind kind = ConstraintKind::None;
  SparseConfig sparse;
};

/// Per-mode constraint kinds; an empty list means unconstrained everywhere.
struct PropertyConstraint {
  std::vector<ModeConstraint> modes;

  static PropertyConstraint none(int d);
  static PropertyConstraint all(int d, ConstraintKind kind);
  static PropertyConstraint sparse_mode(int d, int mode, double fill_gamma);

  ModeConstraint at(int mode) const;
  void validate(int d) const;
};

/// Column index sets I_k of every row k of one mode.
struct SparsityPattern {
  std::vector<std::vector<Index>> rows;

  static SparsityPattern diagonal(Index n);
  static SparsityPattern full(Index n);
  Index nonzeros() const;
  /// ceil(gamma·n), at least 1
  static Index row_budget(double gamma, Index n);
};

enum class InitKind { Random, Ones, Given };

struct CorrectionConfig {
  int max_sweeps = 20;
  double stagnation_tol = 1e-8;
  /// after stagnation, keep sweeping until every projected mode residual is
  /// below this (0 disables)
  double stationarity_tol = 1e-8;
  /// the correction counts as zero once ‖𝒫H‖ drops below this fraction of
  /// the magnitude of the terms it was summed from
  double zero_tol = 1e-14;
  InitKind init = InitKind::Random;
  std::uint64_t seed = 0;
  double init_noise = 1e-2;
  int max_restarts = 3;
  std::vector<Matrix> given;  ///< used with InitKind::Given
};

/// Q^λ = Σ_k c_k C_k^λ ∏_{μ≠λ} ⟨W^μ C_k^μ, W^μ⟩. Constraint projectors drop
/// out because every W^μ already lies in its admissible subspace.
Matrix assemble_Q_lambda(std::span<const Matrix> w, const KronSumOperator& c, int lambda);
/// H^λ(P) = Σ over the terms of R(P) = B − P C of R^λ ∏_{μ≠λ} ⟨R^μ, W^μ⟩.
Matrix assemble_H_lambda(const BasisOperator& p, std::span<const Matrix> w, const StarInnerProduct& star, int lambda);

/// Mode equation: None → W Q = H; Symmetric → W Q + Qᵀ W = H + Hᵀ;
/// Skew → W Q + Qᵀ W = H − Hᵀ (stationarity restricted to skew matrices);
/// Sparse → row-wise solves on `pattern`.
Matrix solve_mode(const Matrix& q, const Matrix& h, ConstraintKind kind, const SparsityPattern* pattern = nullptr);

/// Row k solves ŵ Q[I_k, I_k] = h_k[I_k]; minimum-norm when rank-deficient.
Matrix solve_sparse_rows(const Matrix& q, const Matrix& h, const SparsityPattern& pattern);

struct PatternUpdate {
  SparsityPattern pattern;
  Matrix w;
  Index added = 0;
};

/// Greedy pattern growth: each pass adds to every unfinished row the index j
/// maximizing (ρ_k·q_j)²/‖q_j‖², ρ_k = w_k Q − h_k, then re-solves the row.
PatternUpdate adapt_pattern(const Matrix& q, const Matrix& h, const Matrix& w_current, const SparsityPattern& pattern,
                            double gamma, int i_max);

/// Projected mode residual ‖𝒫(W Q − H)‖ / ‖𝒫(H)‖ (0 when 𝒫(H) = 0 and W Q = 0).
double mode_stationarity(const Matrix& w, const Matrix& q, const Matrix& h, ConstraintKind kind,
                         const SparsityPattern* pattern = nullptr);

struct CorrectionReport {
  std::vector<double> objective;  ///< f(W) − f(0) after every mode solve, current restart
  int sweeps = 0;
  int restarts = 0;
  std::vector<Index> pattern_growth;  ///< entries added per sparse mode
  std::vector<double> stationarity;   ///< per-mode projected residual at exit
  std::uint64_t seed = 0;
};

struct RankOneCorrection {
  std::vector<Matrix> factors;  ///< unit Frobenius norm each
  double scale = 0.0;
  std::vector<std::optional<SparsityPattern>> patterns;
  CorrectionReport report;

  /// W as Kronecker factors, the scale folded into the term weight.
  KronSumOperator as_operator() const;
  std::vector<FactorPtr> factor_ptrs() const;
};

/// Best rank-one W minimizing ‖A⁻¹ − P − W‖_⋆ by alternating mode solves.
RankOneCorrection correct_rank_one(const StarInnerProduct& star, const BasisOperator& p_prev,
                                   const PropertyConstraint& constraints, const CorrectionConfig& config);

}  // namespace kroninv
