#pragma once

#include "kroninv/kron_operator.hpp"
#include "kroninv/rank_one_inverse.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace kroninv {

/// Per-mode Frobenius-orthonormal bases {Q_i^μ} of the spans of all
/// correction factors found so far.
struct OperatorBasis {
  std::vector<std::vector<FactorPtr>> q;
  /// provenance[μ][step]: index appended at that step, or -1 when the
  /// factor was already in the span
  std::vector<std::vector<int>> provenance;

  static OperatorBasis empty(int d);
  int order() const { return int(q.size()); }
  Dims sizes() const;
};

/// Modified Gram–Schmidt of W^μ against Q^μ (two passes); the normalized
/// remainder is appended when its norm exceeds 1e-10·‖W^μ‖. Returns which
/// modes grew.
std::vector<bool> extend_basis(OperatorBasis& basis, std::span<const Matrix> w);

/// ⟨Q_i, Q_j⟩_⋆ and ⟨A⁻¹, Q_j⟩_⋆ in factored form: per mode and per distinct
/// factor of C the Gram G[b,a] = ⟨Q_a C^μ, Q_b⟩, per distinct factor of B the
/// vector v[b] = ⟨B^μ, Q_b⟩. Extended incrementally as bases grow.
class StarGramCache {
 public:
  StarGramCache(const StarInnerProduct& star);

  /// Brings the cache in line with `basis` (only new basis entries are computed).
  void sync(const OperatorBasis& basis);

  const StarInnerProduct& star() const { return *star_; }
  int order() const { return int(g_.size()); }
  /// basis sizes seen at the last sync
  Dims sizes() const;
  /// Gram operator as Σ_k c_k ⊗_μ gram(μ, slot)
  const Matrix& gram(int mode, int slot) const { return g_[mode][slot]; }
  const Vector& rhs(int mode, int slot) const { return v_[mode][slot]; }
  int c_slot(int mode, Index term) const { return c_slot_[mode][term]; }
  int b_slot(int mode, Index term) const { return b_slot_[mode][term]; }

  /// y = 𝒢 α for a dense coefficient tensor.
  DenseTensor apply(const DenseTensor& alpha) const;
  /// Right-hand side ⟨A⁻¹, Q_j⟩_⋆ as a dense tensor.
  DenseTensor rhs_dense() const;
  /// Expanded objective ⟨𝒢α, α⟩ − 2⟨rhs, α⟩ for any format.
  double objective(const AnyTensor& alpha) const;

 private:
  const StarInnerProduct* star_;
  std::vector<std::vector<FactorPtr>> c_f_, b_f_;
  std::vector<std::vector<int>> c_slot_, b_slot_;
  std::vector<std::vector<FactorPtr>> q_;
  std::vector<std::vector<Matrix>> g_;
  std::vector<std::vector<Vector>> v_;
};

enum class ProjectionMode { Full, HT };

struct ProjectionSpec {
  ProjectionMode mode = ProjectionMode::Full;
  std::optional<DimensionTree> tree;  ///< HT: default balanced
  Index max_core_rank = 10;           ///< HT: ρ_t = min(r, max_core_rank)
  std::vector<Index> core_ranks;      ///< HT: explicit per-node ranks (overrides)
  int als_sweeps = 5;
  double ls_fallback_threshold = 1e12;
  Index full_cap = 1'000'000;
  Index dense_limit = 4096;  ///< FULL: dense Gram factorization up to this many unknowns, CG beyond
};

struct ProjectionReport {
  double galerkin_residual = 0.0;  ///< ‖𝒢α − rhs‖ / ‖rhs‖
  bool gram_ill_conditioned = false;
  double condition_estimate = 0.0;
  int ls_fallbacks = 0;              ///< HT local systems solved by least squares
  std::vector<double> objective;     ///< HT: after every node update
  std::vector<Index> node_ranks;     ///< HT ranks actually used
};

/// α minimizing ‖A⁻¹ − Σ α_i ⊗ Q_i‖_⋆ over all of ⊗_μ ℝ^{r_μ}.
DenseTensor project_full(const StarGramCache& gram, const ProjectionSpec& spec, ProjectionReport* report = nullptr);

/// Same minimization restricted to HT tensors with the given node ranks, by
/// ALS over the transfer tensors (and leaf frames when they are rank
/// deficient). `init` is padded with zeros to the current sizes.
HTTensor project_ht(const StarGramCache& gram, const ProjectionSpec& spec, Index r, const HTTensor* init = nullptr,
                    ProjectionReport* report = nullptr);

/// HT node ranks min(ρ, ∏_{t} r_μ, ∏_{t^c} r_μ), made consistent across the tree.
std::vector<Index> ht_projection_ranks(const DimensionTree& tree, const Dims& basis_sizes, Index rho);

enum class GreedyAlgorithm { G, P };

struct GreedyConfig {
  GreedyAlgorithm algorithm = GreedyAlgorithm::P;
  int steps = 10;  ///< R
  PropertyConstraint constraints;
  CorrectionConfig correction;  ///< seed of step r is correction.seed + r
  ProjectionSpec projection;
  bool keep_iterates = true;
};

struct GreedyStep {
  int r = 0;
  double epsilon = 1.0;
  bool precision_limited = false;
  Dims basis_sizes;
  bool basis_grew = true;
  double wall_ms = 0.0;
  CorrectionReport correction;
  ProjectionReport projection;
};

struct GreedyResult {
  BasisOperator p;  ///< final P_R
  std::vector<GreedyStep> steps;
  std::vector<BasisOperator> iterates;  ///< P_1..P_R when kept
  bool zero_correction = false;         ///< stopped early
  OperatorBasis basis;                  ///< ALG-P only
};

using StepCallback = std::function<void(const GreedyStep&, const BasisOperator&)>;

/// P_r = P_0 + W_1 + … + W_r.
GreedyResult alg_g(const StarInnerProduct& star, const KronSumOperator& p0, const GreedyConfig& config,
                   const StepCallback& on_step = {});
/// Corrections from P_{r-1}, then projection on ⊗_μ span{W_1^μ,…,W_r^μ}
/// (FULL) or its HT subset. Factors of a nonzero P_0 seed the bases.
GreedyResult alg_p(const StarInnerProduct& star, const KronSumOperator& p0, const GreedyConfig& config,
                   const StepCallback& on_step = {});
GreedyResult run_greedy(const StarInnerProduct& star, const KronSumOperator& p0, const GreedyConfig& config,
                        const StepCallback& on_step = {});

}  // namespace kroninv
