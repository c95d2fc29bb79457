#pragma once

#include "kroninv/kron_operator.hpp"
#include "kroninv/problems.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace kroninv {

/// Identity, a Kronecker sum (e.g. mean-based) or a greedy result.
class Preconditioner {
 public:
  Preconditioner() = default;
  explicit Preconditioner(KronSumOperator p);
  explicit Preconditioner(BasisOperator p);

  bool is_identity() const { return std::holds_alternative<std::monostate>(op_); }
  /// Exact P x (ranks grow; callers truncate).
  AnyTensor apply(const AnyTensor& x) const;

 private:
  std::variant<std::monostate, KronSumOperator, BasisOperator> op_;
};

enum class SolverMethod { PCG, GMRES };

struct SolverConfig {
  SolverMethod method = SolverMethod::GMRES;
  /// ranks of every stored iterate: HT node ranks (PCG) or Tucker ranks with
  /// HOOI refinement (GMRES); an empty spec only drops numerically zero directions
  TruncationSpec iterate_truncation;
  /// cap for partial sums inside operator applications (0: twice the iterate cap)
  Index internal_rank_cap = 0;
  int max_iterations = 30;
  /// stop once the relative residual drops below this (0: fixed budget)
  double residual_tolerance = 0.0;
  bool stop_on_stagnation = false;
  int stagnation_window = 20;
  /// PCG: rebuild r = b − A u every this many iterations (0: never)
  int residual_refresh = 10;
  std::optional<DimensionTree> tree;  ///< PCG: default balanced

  void validate() const;
};

struct TraceRow {
  int iteration = 0;
  double relative_residual = 0.0;  ///< ‖b − A u‖ / ‖b‖ (PCG: of the recurrence residual)
  std::optional<double> epsilon_solution;
  std::optional<double> epsilon_preconditioned;  ///< ‖P(b − A u)‖ / ‖P b‖
  double wall_ms = 0.0;
};

struct SolveTrace {
  std::vector<TraceRow> rows;
  bool converged = false;
  bool breakdown = false;
  bool stagnated = false;
  std::string message;

  /// iteration,relative_residual,epsilon_solution,epsilon_preconditioned,wall_ms;
  /// wall_ms is written as 0 when `with_time` is false.
  void write_csv(std::ostream& out, bool with_time = true) const;
};

struct SolveOptions {
  const DenseTensor* reference = nullptr;  ///< enables epsilon_solution
  bool preconditioned_residual = false;    ///< enables epsilon_preconditioned
};

struct PcgResult {
  HTTensor u;
  SolveTrace trace;
};

struct GmresResult {
  TuckerTensor u;
  SolveTrace trace;
};

/// PCG on HT iterates; u, r, p and A p are truncated after every update.
/// A breakdown (pᵀAp ≤ 0) ends the run with trace.breakdown set.
PcgResult pcg_lowrank(const KronSumOperator& a, const AnyTensor& b, const Preconditioner& p, const SolverConfig& cfg,
                      const SolveOptions& options = {});

/// Left-preconditioned GMRES without restart on Tucker iterates; modified
/// Gram–Schmidt with one reorthogonalization pass.
GmresResult gmres_lowrank(const KronSumOperator& a, const AnyTensor& b, const Preconditioner& p,
                          const SolverConfig& cfg, const SolveOptions& options = {});

/// Direct solve: dense LU up to 4096 unknowns, sparse LDLT (or LU for
/// nonsymmetric A) up to `max_unknowns`. Refines until ‖b − A u‖ ≤ tol‖b‖.
DenseTensor reference_solution(const KronSumOperator& a, const AnyTensor& b, double tol = 1e-12,
                               Index max_unknowns = 2'000'000);

/// Sparse approximate inverse min ‖I − W A‖_F with at most ceil(γn) entries
/// per row, adaptive pattern from the diagonal; γ ≥ 1 gives the exact inverse.
FactorPtr sparse_approximate_inverse(const Matrix& a, double fill_gamma);

/// SPAI of (κ̄K + η̄M) in the spatial mode, G0⁻¹ in the two random modes.
KronSumOperator mean_based_preconditioner(const StochasticElliptic& problem, double fill_gamma);

/// Apply with partial sums truncated to `spec` after every term.
AnyTensor apply_truncated(const KronSumOperator& a, const AnyTensor& x, const TruncationSpec& spec);
/// Truncation in the format of x (HT: HSVD; Tucker: HOSVD + HOOI sweeps).
AnyTensor truncate_any(const AnyTensor& x, const TruncationSpec& spec);

}  // namespace kroninv
