#include "kroninv/factor.hpp"

#include "kroninv/error.hpp"

namespace kroninv {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DIM_MISMATCH";
    case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::InfeasibleRanks: return "INFEASIBLE_RANKS";
    case ErrorCode::TreeMismatch: return "TREE_MISMATCH";
    case ErrorCode::SizeExceeded: return "SIZE_EXCEEDED";
    case ErrorCode::SingularMode: return "SINGULAR_MODE";
    case ErrorCode::SylvesterDegenerate: return "SYLVESTER_DEGENERATE";
    case ErrorCode::ZeroCorrection: return "ZERO_CORRECTION";
    case ErrorCode::Breakdown: return "BREAKDOWN";
    case ErrorCode::Serialization: return "SERIALIZATION";
    case ErrorCode::Config: return "CONFIG";
  }
  return "UNKNOWN";
}

Factor::Factor(Matrix dense) : storage_(std::move(dense)) {}

Factor::Factor(SparseMatrix sparse) : storage_(std::move(sparse)) {
  auto& s = std::get<SparseMatrix>(storage_);
  s.makeCompressed();
}

Factor Factor::identity(Index n) {
  SparseMatrix id(n, n);
  id.setIdentity();
  return Factor(std::move(id));
}

Index Factor::rows() const {
  return std::visit([](const auto& m) { return Index(m.rows()); }, storage_);
}

Index Factor::cols() const {
  return std::visit([](const auto& m) { return Index(m.cols()); }, storage_);
}

Index Factor::nonzeros() const {
  if (is_sparse()) return sparse().nonZeros();
  return dense().size();
}

Matrix Factor::to_dense() const {
  if (is_sparse()) return Matrix(sparse());
  return dense();
}

Factor Factor::transposed() const {
  if (is_sparse()) return Factor(SparseMatrix(sparse().transpose()));
  return Factor(Matrix(dense().transpose()));
}

Factor Factor::scaled(double s) const {
  if (is_sparse()) return Factor(SparseMatrix(s * sparse()));
  return Factor(Matrix(s * dense()));
}

Matrix Factor::apply(const Eigen::Ref<const Matrix>& x) const {
  if (is_sparse()) return sparse() * x;
  return dense() * x;
}

Matrix Factor::apply_right(const Eigen::Ref<const Matrix>& x) const {
  if (is_sparse()) return x * sparse();
  return x * dense();
}

double Factor::trace() const {
  if (is_sparse()) {
    double t = 0.0;
    const auto& s = sparse();
    for (Index k = 0; k < s.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(s, k); it; ++it)
        if (it.row() == it.col()) t += it.value();
    return t;
  }
  return dense().trace();
}

double Factor::frobenius_norm() const {
  if (is_sparse()) return sparse().norm();
  return dense().norm();
}

double Factor::frobenius_dot(const Eigen::Ref<const Matrix>& other) const {
  if (is_sparse()) {
    double t = 0.0;
    const auto& s = sparse();
    for (Index k = 0; k < s.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(s, k); it; ++it) t += it.value() * other(it.row(), it.col());
    return t;
  }
  return dense().cwiseProduct(other).sum();
}

double Factor::frobenius_dot(const Factor& other) const {
  if (!other.is_sparse()) return frobenius_dot(other.dense());
  if (!is_sparse()) return other.frobenius_dot(dense());
  return sparse().cwiseProduct(other.sparse()).sum();
}

void Factor::add_to(Matrix& acc, double s) const {
  if (is_sparse()) {
    const auto& m = sparse();
    for (Index k = 0; k < m.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(m, k); it; ++it) acc(it.row(), it.col()) += s * it.value();
  } else {
    acc.noalias() += s * dense();
  }
}

bool Factor::is_symmetric(double tol) const {
  if (rows() != cols()) return false;
  Matrix d = to_dense();
  return (d - d.transpose()).cwiseAbs().maxCoeff() <= tol * std::max(1.0, d.cwiseAbs().maxCoeff());
}

bool Factor::is_identity() const {
  if (rows() != cols()) return false;
  if (is_sparse()) {
    const auto& s = sparse();
    for (Index k = 0; k < s.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(s, k); it; ++it)
        if (it.value() != (it.row() == it.col() ? 1.0 : 0.0)) return false;
    Index diag = 0;
    for (Index k = 0; k < s.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(s, k); it; ++it) diag += it.row() == it.col();
    return diag == rows();
  }
  return dense().isIdentity(0.0);
}

Factor Factor::product(const Factor& a, const Factor& b) {
  require(a.cols() == b.rows(), ErrorCode::DimensionMismatch, "factor product shape mismatch");
  if (a.is_sparse() && b.is_sparse()) {
    SparseMatrix p = (a.sparse() * b.sparse()).pruned();
    const double fill = double(p.nonZeros()) / double(std::max<Index>(1, p.rows() * p.cols()));
    if (fill > kDensePromotion) return Factor(Matrix(p));
    return Factor(std::move(p));
  }
  if (a.is_sparse()) return Factor(Matrix(a.sparse() * b.dense()));
  if (b.is_sparse()) return Factor(Matrix(a.dense() * b.sparse()));
  return Factor(Matrix(a.dense() * b.dense()));
}

Factor compress_factor(const Matrix& m) {
  const Index nnz = (m.array() != 0.0).count();
  if (double(nnz) <= Factor::kDensePromotion * double(m.size())) return Factor(SparseMatrix(m.sparseView()));
  return Factor(m);
}

}  // namespace kroninv
