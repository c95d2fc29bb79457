#pragma once

#include "kroninv/factor.hpp"

#include <optional>
#include <span>
#include <variant>
#include <vector>

namespace kroninv {

using Dims = std::vector<Index>;

/// ∏ dims, saturating at the largest Index
Index product(const Dims& dims);
/// ∏ dims[m] over the listed modes, saturating
Index product_of(const Dims& dims, const std::vector<int>& modes);

/// Order-d array stored with mode 0 varying fastest.
class DenseTensor {
 public:
  DenseTensor() = default;
  explicit DenseTensor(Dims dims);
  DenseTensor(Dims dims, Vector data);

  const Dims& dims() const { return dims_; }
  int order() const { return int(dims_.size()); }
  Index size() const { return data_.size(); }
  const Vector& data() const { return data_; }
  Vector& data() { return data_; }

  double norm() const { return data_.norm(); }

  /// Matricization M_t: rows enumerate the modes in `modes` (ascending, first
  /// fastest), columns the complementary modes.
  Matrix unfold(const std::vector<int>& modes) const;
  static DenseTensor fold(const Matrix& m, const std::vector<int>& modes, Dims dims);

  /// Mode product x ×_mode m, replacing dims[mode] by m.rows().
  DenseTensor mode_product(int mode, const Matrix& m) const;

 private:
  Dims dims_;
  Vector data_;
};

/// x = Σ_s weights_s ⊗_μ factors[μ].col(s). Rank 0 is the zero tensor.
struct CanonicalTensor {
  std::vector<Matrix> factors;
  Vector weights;

  static CanonicalTensor zero(const Dims& dims);
  static CanonicalTensor rank_one(std::vector<Vector> vectors, double weight = 1.0);

  Index rank() const { return weights.size(); }
  int order() const { return int(factors.size()); }
  Dims dims() const;
};

struct TuckerTensor {
  DenseTensor core;
  std::vector<Matrix> factors;

  int order() const { return int(factors.size()); }
  Dims dims() const;
  Dims ranks() const { return core.dims(); }
};

/// Full binary tree over the modes {0,…,d-1}. Every node holds a contiguous
/// range of modes and the left child precedes the right one. Node 0 is the
/// root; nodes are stored in pre-order.
class DimensionTree {
 public:
  struct Node {
    std::vector<int> modes;
    int parent = -1;
    int left = -1;
    int right = -1;
  };

  DimensionTree() = default;

  /// Splits every node at the midpoint of its mode range.
  static DimensionTree balanced(int d);
  /// Builds a tree from an explicit list of mode sets (any order).
  static DimensionTree from_mode_sets(int d, const std::vector<std::vector<int>>& sets);

  int order() const { return order_; }
  int size() const { return int(nodes_.size()); }
  static constexpr int root() { return 0; }
  const Node& node(int t) const { return nodes_[t]; }
  bool is_leaf(int t) const { return nodes_[t].left < 0; }
  int leaf(int mode) const { return leaf_of_mode_[mode]; }
  int sibling(int t) const;

  /// Interior nodes in pre-order (root first).
  std::vector<int> interior_nodes() const;
  /// All nodes, children before parents.
  std::vector<int> post_order() const;

  bool operator==(const DimensionTree& other) const;

 private:
  int add_node(std::vector<int> modes, int parent, const std::vector<std::vector<int>>* sets);

  int order_ = 0;
  std::vector<Node> nodes_;
  std::vector<int> leaf_of_mode_;
};

/// Hierarchical Tucker tensor. Leaf nodes carry frames (n_μ × k_μ); interior
/// nodes carry transfer tensors stored as (k_left·k_right) × k_t matrices with
/// the left index fastest. The root has k = 1.
struct HTTensor {
  DimensionTree tree;
  std::vector<Index> ranks;
  std::vector<Matrix> frames;
  std::vector<Matrix> transfer;

  int order() const { return tree.order(); }
  Dims dims() const;
  Index rank(int t) const { return ranks[t]; }

  static HTTensor zero(const Dims& dims, DimensionTree tree);
  static HTTensor from_canonical(const CanonicalTensor& x, DimensionTree tree);
  /// Exact HT of a dense tensor (no truncation beyond numerical rank).
  static HTTensor from_dense(const DenseTensor& x, DimensionTree tree);
  /// Storage: number of doubles in frames and transfer tensors.
  Index parameter_count() const;
};

using AnyTensor = std::variant<DenseTensor, CanonicalTensor, TuckerTensor, HTTensor>;

/// Target for compression: per-mode Tucker ranks or per-node HT ranks, an
/// optional relative tolerance, and the number of refinement sweeps.
struct TruncationSpec {
  std::vector<Index> ranks;
  Index max_rank = 0;  ///< uniform cap used when `ranks` is empty (0 = unbounded)
  int refine_iterations = 0;
  std::optional<double> tolerance;

  static TruncationSpec uniform(Index rank, int refine = 0) {
    TruncationSpec s;
    s.max_rank = rank;
    s.refine_iterations = refine;
    return s;
  }
  Index rank_for(std::size_t i) const;
  void validate() const;
};

/// Largest number of entries a tensor may be densified to.
inline constexpr Index kDensifyCap = 10'000'000;

/// Default relative singular value floor for numerical ranks and truncation.
inline constexpr double kSingularFloor = 1e-14;

}  // namespace kroninv
