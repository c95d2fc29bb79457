#pragma once

// Test-side helpers: seeded random data and dense Kronecker oracles that
// do not go through the library code under test.

#include "kroninv/kron_operator.hpp"

#include <random>
#include <vector>

namespace kroninv::testing {

inline Matrix random_matrix(std::mt19937_64& rng, Index rows, Index cols) {
  std::normal_distribution<double> dist;
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

inline Vector random_vector(std::mt19937_64& rng, Index n) { return random_matrix(rng, n, 1).col(0); }

inline Matrix random_spd(std::mt19937_64& rng, Index n) {
  Matrix a = random_matrix(rng, n, n);
  return a * a.transpose() + double(n) * Matrix::Identity(n, n);
}

// Plain Kronecker product kron(a, b): (a ⊗ b)(i*rb + k, j*cb + l) = a(i,j) b(k,l).
inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

// Operator on mode-0-fastest vectors acting as ⊗_μ A[μ]: kron(A[d-1], …, A[0]).
inline Matrix kron_modes(const std::vector<Matrix>& a) {
  Matrix out = a[0];
  for (std::size_t m = 1; m < a.size(); ++m) out = kron(a[m], out);
  return out;
}

inline Vector kron_vectors(const std::vector<Vector>& v) {
  std::vector<Matrix> m(v.begin(), v.end());
  return kron_modes(m).col(0);
}

inline Vector dense_of_canonical(const CanonicalTensor& x) {
  Index n = 1;
  for (const auto& f : x.factors) n *= f.rows();
  Vector out = Vector::Zero(n);
  for (Index s = 0; s < x.rank(); ++s) {
    std::vector<Vector> v;
    for (const auto& f : x.factors) v.push_back(f.col(s));
    out += x.weights[s] * kron_vectors(v);
  }
  return out;
}

inline Vector dense_of_tucker(const TuckerTensor& x) {
  std::vector<Matrix> u(x.factors.begin(), x.factors.end());
  return kron_modes(u) * x.core.data();
}

inline CanonicalTensor random_canonical(std::mt19937_64& rng, const Dims& dims, Index rank) {
  CanonicalTensor x;
  for (Index n : dims) x.factors.push_back(random_matrix(rng, n, rank));
  x.weights = Vector::Ones(rank);
  return x;
}

inline DenseTensor random_dense(std::mt19937_64& rng, const Dims& dims) {
  return DenseTensor(dims, random_vector(rng, product(dims)));
}

struct DenseOp {
  KronSumOperator op;
  Matrix dense;
};

// Random operator together with its independently assembled dense matrix.
inline DenseOp random_op(std::mt19937_64& rng, const Dims& dims, Index rank, bool sparse_first = false) {
  DenseOp out{KronSumOperator(dims), Matrix::Zero(product(dims), product(dims))};
  std::uniform_real_distribution<double> w(0.5, 2.0);
  for (Index i = 0; i < rank; ++i) {
    std::vector<FactorPtr> f;
    std::vector<Matrix> m;
    for (std::size_t mu = 0; mu < dims.size(); ++mu) {
      Matrix a = random_matrix(rng, dims[mu], dims[mu]);
      if (sparse_first && mu == 0) a = a.cwiseProduct(Matrix::Identity(dims[mu], dims[mu]));
      m.push_back(a);
      f.push_back(sparse_first && mu == 0 ? make_factor(SparseMatrix(a.sparseView())) : make_factor(a));
    }
    const double wi = w(rng);
    out.op.add_term(f, wi);
    out.dense += wi * kron_modes(m);
  }
  return out;
}

inline DenseOp random_spd_op(std::mt19937_64& rng, const Dims& dims, Index rank) {
  DenseOp out{KronSumOperator(dims), Matrix::Zero(product(dims), product(dims))};
  for (Index i = 0; i < rank; ++i) {
    std::vector<FactorPtr> f;
    std::vector<Matrix> m;
    for (Index n : dims) {
      m.push_back(random_spd(rng, n));
      f.push_back(make_factor(m.back()));
    }
    out.op.add_term(f, 1.0);
    out.dense += kron_modes(m);
  }
  return out;
}

inline HTTensor random_ht(std::mt19937_64& rng, const Dims& dims, const DimensionTree& tree, Index k) {
  HTTensor x;
  x.tree = tree;
  x.ranks.assign(tree.size(), k);
  x.ranks[0] = 1;
  x.frames.resize(tree.size());
  x.transfer.resize(tree.size());
  for (int t = 0; t < tree.size(); ++t) {
    if (tree.is_leaf(t)) {
      x.frames[t] = random_matrix(rng, dims[tree.node(t).modes[0]], k);
    } else {
      const auto& n = tree.node(t);
      x.transfer[t] = random_matrix(rng, x.ranks[n.left] * x.ranks[n.right], x.ranks[t]);
    }
  }
  return x;
}

// Frame of node t by explicit sums of Kronecker products.
inline Matrix oracle_frame(const HTTensor& x, int t) {
  if (x.tree.is_leaf(t)) return x.frames[t];
  const auto& n = x.tree.node(t);
  const Matrix ul = oracle_frame(x, n.left), ur = oracle_frame(x, n.right);
  const Index kl = ul.cols(), kr = ur.cols();
  Matrix out = Matrix::Zero(ul.rows() * ur.rows(), x.transfer[t].cols());
  for (Index c = 0; c < out.cols(); ++c)
    for (Index a = 0; a < kl; ++a)
      for (Index b = 0; b < kr; ++b) out.col(c) += x.transfer[t](a + kl * b, c) * kron(ur.col(b), ul.col(a));
  return out;
}

inline Vector oracle_dense(const HTTensor& x) { return oracle_frame(x, 0).col(0); }

}  // namespace kroninv::testing
