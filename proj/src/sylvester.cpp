#include "kroninv/sylvester.hpp"

#include "kroninv/error.hpp"

#include <Eigen/Eigenvalues>

namespace kroninv {

namespace {

struct Schur {
  Matrix u;
  Matrix t;
  bool diagonal = false;
};

Schur schur_form(const Matrix& a) {
  Schur s;
  if (a == a.transpose()) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(a);
    s.u = eig.eigenvectors();
    s.t = eig.eigenvalues().asDiagonal();
    s.diagonal = true;
  } else {
    Eigen::RealSchur<Matrix> rs(a);
    s.u = rs.matrixU();
    s.t = rs.matrixT();
  }
  return s;
}

[[noreturn]] void degenerate() {
  throw Error(ErrorCode::SylvesterDegenerate, "Sylvester spectra overlap");
}

// (T + shift·I) y = r for upper quasi-triangular T
Vector quasi_triangular_solve(const Matrix& t, double shift, const Vector& r, double tol) {
  const Index n = t.rows();
  Vector y(n);
  Index i = n - 1;
  while (i >= 0) {
    const Index tail = n - i - 1;
    if (i > 0 && t(i, i - 1) != 0.0) {
      Eigen::Vector2d s = r.segment<2>(i - 1);
      if (tail > 0) s -= t.block(i - 1, i + 1, 2, tail) * y.tail(tail);
      Eigen::Matrix2d m = t.block<2, 2>(i - 1, i - 1);
      m.diagonal().array() += shift;
      if (std::abs(m.determinant()) <= tol * tol) degenerate();
      y.segment<2>(i - 1) = m.partialPivLu().solve(s);
      i -= 2;
    } else {
      const double denom = t(i, i) + shift;
      if (std::abs(denom) <= tol) degenerate();
      double s = r[i];
      if (tail > 0) s -= t.row(i).tail(tail).dot(y.tail(tail));
      y[i] = s / denom;
      i -= 1;
    }
  }
  return y;
}

}  // namespace

Matrix solve_sylvester(const Matrix& a, const Matrix& b, const Matrix& c) {
  require(a.rows() == a.cols() && b.rows() == b.cols(), ErrorCode::DimensionMismatch, "Sylvester coefficients must be square");
  require(c.rows() == a.rows() && c.cols() == b.rows(), ErrorCode::DimensionMismatch, "Sylvester right-hand side shape");
  const double tol = 1e-12 * (a.norm() + b.norm());
  const Schur sa = schur_form(a);
  const Schur sb = schur_form(b);
  const Matrix f = sa.u.transpose() * c * sb.u;
  const Index n = a.rows(), m = b.rows();
  Matrix y(n, m);
  if (sa.diagonal && sb.diagonal) {
    for (Index j = 0; j < m; ++j)
      for (Index i = 0; i < n; ++i) {
        const double denom = sa.t(i, i) + sb.t(j, j);
        if (std::abs(denom) <= tol) degenerate();
        y(i, j) = f(i, j) / denom;
      }
    return sa.u * y * sb.u.transpose();
  }
  // columns of Y from left to right along the quasi-triangular T_b
  Index j = 0;
  while (j < m) {
    if (j + 1 < m && sb.t(j + 1, j) != 0.0) {
      Vector r1 = f.col(j), r2 = f.col(j + 1);
      if (j > 0) {
        r1 -= y.leftCols(j) * sb.t.col(j).head(j);
        r2 -= y.leftCols(j) * sb.t.col(j + 1).head(j);
      }
      Matrix big = Matrix::Zero(2 * n, 2 * n);
      big.topLeftCorner(n, n) = sa.t;
      big.bottomRightCorner(n, n) = sa.t;
      big.topLeftCorner(n, n).diagonal().array() += sb.t(j, j);
      big.bottomRightCorner(n, n).diagonal().array() += sb.t(j + 1, j + 1);
      big.topRightCorner(n, n).diagonal().array() += sb.t(j + 1, j);
      big.bottomLeftCorner(n, n).diagonal().array() += sb.t(j, j + 1);
      Vector rhs(2 * n);
      rhs << r1, r2;
      Eigen::FullPivLU<Matrix> lu(big);
      if (lu.rank() < 2 * n) degenerate();
      const Vector sol = lu.solve(rhs);
      y.col(j) = sol.head(n);
      y.col(j + 1) = sol.tail(n);
      j += 2;
    } else {
      Vector r = f.col(j);
      if (j > 0) r -= y.leftCols(j) * sb.t.col(j).head(j);
      y.col(j) = quasi_triangular_solve(sa.t, sb.t(j, j), r, tol);
      j += 1;
    }
  }
  return sa.u * y * sb.u.transpose();
}

}  // namespace kroninv
