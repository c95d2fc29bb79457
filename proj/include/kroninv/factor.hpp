#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <memory>
#include <variant>

namespace kroninv {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;

/// A square (or rectangular) matrix factor of a Kronecker term, stored dense
/// or as compressed-sparse-row with sorted column indices.
///
/// Factors are immutable once built and shared between operators through
/// FactorPtr, so pointer identity can be used to memoize per-factor work.
class Factor {
 public:
  /// Fill fraction above which sparse products are promoted to dense.
  static constexpr double kDensePromotion = 0.5;

  explicit Factor(Matrix dense);
  explicit Factor(SparseMatrix sparse);

  static Factor identity(Index n);

  bool is_sparse() const { return std::holds_alternative<SparseMatrix>(storage_); }
  Index rows() const;
  Index cols() const;
  Index nonzeros() const;

  const Matrix& dense() const { return std::get<Matrix>(storage_); }
  const SparseMatrix& sparse() const { return std::get<SparseMatrix>(storage_); }
  Matrix to_dense() const;

  Factor transposed() const;
  Factor scaled(double s) const;

  /// this * x
  Matrix apply(const Eigen::Ref<const Matrix>& x) const;
  /// x * this
  Matrix apply_right(const Eigen::Ref<const Matrix>& x) const;

  double trace() const;
  double frobenius_norm() const;
  /// trace(this^T other)
  double frobenius_dot(const Factor& other) const;
  double frobenius_dot(const Eigen::Ref<const Matrix>& other) const;

  /// Adds s * this into a dense accumulator.
  void add_to(Matrix& acc, double s) const;

  bool is_symmetric(double tol = 0.0) const;
  /// Exact identity test (square, unit diagonal, no off-diagonal entries).
  bool is_identity() const;

  static Factor product(const Factor& a, const Factor& b);

 private:
  std::variant<Matrix, SparseMatrix> storage_;
};

using FactorPtr = std::shared_ptr<const Factor>;

inline FactorPtr make_factor(Matrix m) { return std::make_shared<const Factor>(std::move(m)); }
inline FactorPtr make_factor(SparseMatrix m) { return std::make_shared<const Factor>(std::move(m)); }
inline FactorPtr make_factor(Factor f) { return std::make_shared<const Factor>(std::move(f)); }

/// Sparse when the dense input has at most kDensePromotion fill.
Factor compress_factor(const Matrix& m);

}  // namespace kroninv
