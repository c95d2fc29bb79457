#include "kroninv/error.hpp"
#include "kroninv/kron_operator.hpp"
#include "kroninv/tensor_ops.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace kroninv;
using namespace kroninv::testing;

namespace {

double rel(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(1e-300, b.norm()); }

}  // namespace

TEST(KronOperator, ApplyIdentityIsExact) {
  std::mt19937_64 rng(1);
  const Dims dims{3, 4, 2};
  const auto id = KronSumOperator::identity(dims);
  const auto x = random_canonical(rng, dims, 2);
  const AnyTensor y = apply(id, x);
  EXPECT_EQ(dense_of_canonical(std::get<CanonicalTensor>(y)), dense_of_canonical(x));
  const DenseTensor d = random_dense(rng, dims);
  EXPECT_EQ(std::get<DenseTensor>(apply(id, d)).data(), d.data());
}

TEST(KronOperator, ApplyRankOneKronecker) {
  std::mt19937_64 rng(2);
  const Matrix k = random_matrix(rng, 3, 3), m = random_matrix(rng, 4, 4);
  const Vector u = random_vector(rng, 3), v = random_vector(rng, 4);
  const auto op = KronSumOperator::rank_one({make_factor(k), make_factor(m)});
  const auto y = std::get<CanonicalTensor>(apply(op, CanonicalTensor::rank_one({u, v})));
  ASSERT_EQ(y.rank(), 1);
  EXPECT_LT((y.factors[0].col(0) - k * u).norm(), 1e-14);
  EXPECT_LT((y.factors[1].col(0) - m * v).norm(), 1e-14);
}

TEST(KronOperator, ApplyMatchesDenseAllFormats) {
  std::mt19937_64 rng(3);
  const Dims dims{3, 3, 3};
  const auto a = random_op(rng, dims, 2, true);
  const auto c = random_canonical(rng, dims, 2);
  const Vector xd = dense_of_canonical(c);
  const Vector oracle = a.dense * xd;
  const std::vector<AnyTensor> inputs{c, DenseTensor(dims, xd), to_tucker(c), to_ht(c, DimensionTree::balanced(3))};
  for (const auto& x : inputs) {
    const AnyTensor y = apply(a.op, x);
    EXPECT_EQ(y.index(), x.index());
    EXPECT_LT((to_dense(y).data() - oracle).norm(), 1e-12 * oracle.norm());
  }
  EXPECT_EQ(std::get<CanonicalTensor>(apply(a.op, c)).rank(), 4);
}

TEST(KronOperator, ApplyDimensionMismatch) {
  std::mt19937_64 rng(4);
  const auto a = random_op(rng, {3, 3, 3}, 1);
  try {
    apply(a.op, random_canonical(rng, {3, 4, 3}, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(KronOperator, ComposeMatchesDense) {
  std::mt19937_64 rng(5);
  const Dims dims{3, 3, 3};
  const auto a = random_op(rng, dims, 2, true);
  const auto b = random_op(rng, dims, 2);
  const auto ab = compose(a.op, b.op);
  EXPECT_EQ(ab.rank(), 4);
  EXPECT_LT(rel(ab.to_dense(), a.dense * b.dense), 1e-12);
  const auto ai = compose(a.op, KronSumOperator::identity(dims));
  ASSERT_EQ(ai.rank(), a.op.rank());
  for (Index i = 0; i < ai.rank(); ++i)
    for (int m = 0; m < 3; ++m) EXPECT_EQ(ai.term(i).factors[m], a.op.term(i).factors[m]);
}

TEST(KronOperator, ComposeSingleTerms) {
  std::mt19937_64 rng(6);
  const Matrix a1 = random_matrix(rng, 2, 2), a2 = random_matrix(rng, 3, 3);
  const Matrix b1 = random_matrix(rng, 2, 2), b2 = random_matrix(rng, 3, 3);
  const auto ab = compose(KronSumOperator::rank_one({make_factor(a1), make_factor(a2)}),
                          KronSumOperator::rank_one({make_factor(b1), make_factor(b2)}));
  ASSERT_EQ(ab.rank(), 1);
  EXPECT_LT((ab.term(0).factors[0]->to_dense() - a1 * b1).norm(), 1e-14);
  EXPECT_LT((ab.term(0).factors[1]->to_dense() - a2 * b2).norm(), 1e-14);
}

TEST(KronOperator, Adjoint) {
  std::mt19937_64 rng(7);
  const Dims dims{3, 2, 3};
  const auto a = random_op(rng, dims, 2, true);
  const auto at = adjoint(a.op);
  EXPECT_LT(rel(at.to_dense(), a.dense.transpose()), 1e-14);
  EXPECT_EQ(adjoint(at).to_dense(), a.op.to_dense());
  const auto s = random_spd_op(rng, dims, 2);
  const auto st = adjoint(s.op);
  for (Index i = 0; i < s.op.rank(); ++i)
    for (int m = 0; m < 3; ++m) EXPECT_EQ(st.term(i).factors[m], s.op.term(i).factors[m]);
}

TEST(KronOperator, FrobeniusInner) {
  std::mt19937_64 rng(8);
  const Dims dims{3, 3, 3};
  const auto id = KronSumOperator::identity(dims);
  EXPECT_DOUBLE_EQ(frobenius_inner_ops(id, id), 27.0);
  EXPECT_EQ(frobenius_inner_ops(id, KronSumOperator(dims)), 0.0);
  const auto x = random_op(rng, dims, 2, true), y = random_op(rng, dims, 2);
  const double oracle = x.dense.cwiseProduct(y.dense).sum();
  EXPECT_NEAR(frobenius_inner_ops(x.op, y.op), oracle, 1e-12 * x.dense.norm() * y.dense.norm());
}

TEST(KronOperator, StarInnerReducesToFrobeniusForIdentity) {
  std::mt19937_64 rng(9);
  const Dims dims{3, 2, 3};
  const auto star = StarInnerProduct::make(KronSumOperator::identity(dims), StarMode::SPD);
  const auto x = random_op(rng, dims, 2), y = random_op(rng, dims, 2);
  EXPECT_NEAR(star_inner(x.op, y.op, star), frobenius_inner_ops(x.op, y.op), 1e-12 * x.dense.norm() * y.dense.norm());
}

TEST(KronOperator, StarInnerOfInverseIsTrace) {
  std::mt19937_64 rng(10);
  const Matrix a1 = random_spd(rng, 2), a2 = random_spd(rng, 2);
  const auto a = KronSumOperator::rank_one({make_factor(a1), make_factor(a2)});
  const auto star = StarInnerProduct::make(a, StarMode::SPD);
  const auto inv = KronSumOperator::rank_one({make_factor(Matrix(a1.inverse())), make_factor(Matrix(a2.inverse()))});
  const Matrix dense_inv = kron(a2, a1).inverse();
  EXPECT_NEAR(star_inner(inv, inv, star), dense_inv.trace(), 1e-12 * dense_inv.trace());
}

TEST(KronOperator, StarInnerSkewSymOrthogonal) {
  std::mt19937_64 rng(11);
  const Dims dims{3, 3};
  const Matrix s = random_matrix(rng, 3, 3), k = random_matrix(rng, 3, 3);
  const auto x = KronSumOperator::rank_one({make_factor(Matrix(k - k.transpose())), make_factor(Matrix(k))});
  const auto y = KronSumOperator::rank_one({make_factor(Matrix(s + s.transpose())), make_factor(Matrix(s))});
  const auto star = StarInnerProduct::make(KronSumOperator::identity(dims), StarMode::SPD);
  EXPECT_NEAR(star_inner(x, y, star), 0.0, 1e-13);
}

TEST(KronOperator, StarInnerIsInnerProduct) {
  std::mt19937_64 rng(12);
  for (StarMode mode : {StarMode::SPD, StarMode::GENERAL}) {
    const Dims dims{2, 3, 2};
    const auto a = mode == StarMode::SPD ? random_spd_op(rng, dims, 2) : random_op(rng, dims, 2);
    const auto star = StarInnerProduct::make(a.op, mode);
    EXPECT_EQ(star.c.rank(), mode == StarMode::SPD ? 2 : 4);
    const Matrix c = mode == StarMode::SPD ? a.dense : Matrix(a.dense * a.dense.transpose());
    for (int trial = 0; trial < 20; ++trial) {
      const auto x = random_op(rng, dims, 2), y = random_op(rng, dims, 1);
      const double xy = star_inner(x.op, y.op, star), yx = star_inner(y.op, x.op, star);
      const double oracle = (x.dense * c).cwiseProduct(y.dense).sum();
      EXPECT_NEAR(xy, oracle, 1e-12 * (x.dense * c).norm() * y.dense.norm());
      EXPECT_NEAR(xy, yx, 1e-12 * (x.dense * c).norm() * y.dense.norm());
      EXPECT_GT(star_inner(x.op, x.op, star), 0.0);
    }
  }
}

TEST(KronOperator, StarInnerWithInverse) {
  std::mt19937_64 rng(13);
  const Dims dims{2, 2};
  for (StarMode mode : {StarMode::SPD, StarMode::GENERAL}) {
    const auto a = mode == StarMode::SPD ? random_spd_op(rng, dims, 1) : random_op(rng, dims, 2);
    const auto star = StarInnerProduct::make(a.op, mode);
    const auto q = random_op(rng, dims, 1);
    const Matrix inv = a.dense.inverse();
    const Matrix c = mode == StarMode::SPD ? a.dense : Matrix(a.dense * a.dense.transpose());
    const double oracle = (inv * c).cwiseProduct(q.dense).sum();
    EXPECT_NEAR(star_inner_with_inverse(q.op, star), oracle, 1e-12 * q.dense.norm() * (inv * c).norm());
  }
  const auto id = KronSumOperator::identity({3, 3, 3});
  EXPECT_DOUBLE_EQ(star_inner_with_inverse(id, StarInnerProduct::make(id, StarMode::SPD)), 27.0);
  Matrix traceless = Matrix::Zero(3, 3);
  traceless(0, 1) = 1.0;
  traceless(2, 2) = 0.0;
  const auto q = KronSumOperator::rank_one({make_factor(Matrix(Matrix::Identity(3, 3))), make_factor(traceless),
                                           make_factor(Matrix(Matrix::Identity(3, 3)))});
  EXPECT_EQ(star_inner_with_inverse(q, StarInnerProduct::make(id, StarMode::SPD)), 0.0);
}

TEST(KronOperator, ResidualOperator) {
  std::mt19937_64 rng(14);
  const Dims dims{2, 3};
  const auto a = random_spd_op(rng, dims, 1);
  const auto star = StarInnerProduct::make(a.op, StarMode::SPD);
  const auto r0 = residual_operator(KronSumOperator(dims), a.op, star);
  EXPECT_LT(rel(r0.to_dense(), Matrix::Identity(6, 6)), 1e-15);
  const auto& t = a.op.term(0);
  const auto inv = KronSumOperator::rank_one(
      {make_factor(Matrix(t.factors[0]->dense().inverse())), make_factor(Matrix(t.factors[1]->dense().inverse()))});
  const auto r = residual_operator(inv, a.op, star);
  EXPECT_EQ(r.rank(), 2);
  EXPECT_LT(r.to_dense().norm(), 1e-12);
  const auto id = KronSumOperator::identity(dims);
  EXPECT_EQ(residual_operator(id, id, StarInnerProduct::make(id, StarMode::SPD)).to_dense().norm(), 0.0);
  const auto g = random_op(rng, dims, 2);
  const auto gstar = StarInnerProduct::make(g.op, StarMode::GENERAL);
  const auto p = random_op(rng, dims, 2);
  const Matrix oracle = g.dense.transpose() - p.dense * g.dense * g.dense.transpose();
  EXPECT_LT(rel(residual_operator(p.op, g.op, gstar).to_dense(), oracle), 1e-12);
}

TEST(KronOperator, ResidualNormEqualsStarDistance) {
  // ‖I − PA‖² expanded by traces equals ‖A⁻¹ − P‖²_{AAᵀ} computed densely
  std::mt19937_64 rng(15);
  const Dims dims{3, 2};
  const auto a = random_op(rng, dims, 2);
  const auto p = random_op(rng, dims, 2);
  const auto id = KronSumOperator::identity(dims);
  KronSumOperator diff = id;
  diff.append(compose(p.op, a.op), -1.0);
  const double expanded = frobenius_inner_ops(diff, diff);
  const Matrix e = a.dense.inverse() - p.dense;
  const double dense = (e * a.dense * a.dense.transpose()).cwiseProduct(e).sum();
  EXPECT_NEAR(expanded, dense, 1e-10 * dense);
}
