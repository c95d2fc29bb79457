#include "kroninv/error.hpp"
#include "kroninv/rank_one_inverse.hpp"
#include "kroninv/sylvester.hpp"
#include "kroninv/tensor_ops.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace kroninv;
using namespace kroninv::testing;

namespace {

Matrix unit(Index n, Index i, Index j) {
  Matrix e = Matrix::Zero(n, n);
  e(i, j) = 1.0;
  return e;
}

// dense ⊗_μ w[μ] with w[lambda] replaced by x
Matrix kron_with(std::vector<Matrix> w, int lambda, const Matrix& x) {
  w[lambda] = x;
  return kron_modes(w);
}

// Q(i,j) = ⟨X_i C, X_j⟩ with X_i = ⊗ W^μ carrying E_{0i} at mode λ
Matrix dense_q(const std::vector<Matrix>& w, const Matrix& c, int lambda) {
  const Index n = w[lambda].rows();
  Matrix q(n, n);
  for (Index i = 0; i < n; ++i) {
    const Matrix xc = kron_with(w, lambda, unit(n, 0, i)) * c;
    for (Index j = 0; j < n; ++j) q(i, j) = xc.cwiseProduct(kron_with(w, lambda, unit(n, 0, j))).sum();
  }
  return q;
}

// H(i,j) = ⟨R, ⊗ W^μ with E_{ij} at λ⟩
Matrix dense_h(const std::vector<Matrix>& w, const Matrix& r, int lambda) {
  const Index n = w[lambda].rows();
  Matrix h(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) h(i, j) = r.cwiseProduct(kron_with(w, lambda, unit(n, i, j))).sum();
  return h;
}

std::vector<Matrix> random_factors(std::mt19937_64& rng, const Dims& dims) {
  std::vector<Matrix> w;
  for (Index n : dims) w.push_back(random_matrix(rng, n, n));
  return w;
}

// vec(X) column-major: vec(A X + X B) = (I ⊗ A + Bᵀ ⊗ I) vec(X)
Matrix vectorized_sylvester(const Matrix& a, const Matrix& b, const Matrix& c) {
  const Index n = a.rows(), m = b.rows();
  const Matrix k = kron(Matrix::Identity(m, m), a) + kron(b.transpose(), Matrix::Identity(n, n));
  const Vector x = k.fullPivLu().solve(Eigen::Map<const Vector>(c.data(), c.size()));
  return Eigen::Map<const Matrix>(x.data(), n, m);
}

double rel(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(1e-300, b.norm()); }

KronSumOperator kron_sum_of(const std::vector<Matrix>& f, double weight = 1.0) {
  std::vector<FactorPtr> p;
  for (const auto& m : f) p.push_back(make_factor(m));
  return KronSumOperator::rank_one(p, weight);
}

double dense_epsilon(const Matrix& p, const Matrix& a) {
  const Index n = a.rows();
  return (Matrix::Identity(n, n) - p * a).norm() / std::sqrt(double(n));
}

}  // namespace

// ---------------------------------------------------------------------------
// assembly

TEST(AssembleQ, IdentityOperatorGivesProductOfNorms) {
  std::mt19937_64 rng(11);
  const Dims dims{3, 4, 2};
  const auto w = random_factors(rng, dims);
  const Matrix q = assemble_Q_lambda(w, KronSumOperator::identity(dims), 1);
  const double s = w[0].squaredNorm() * w[2].squaredNorm();
  EXPECT_LT(rel(q, s * Matrix::Identity(4, 4)), 1e-14);
}

TEST(AssembleQ, SingleTermTwoModes) {
  std::mt19937_64 rng(12);
  const Dims dims{3, 4};
  const auto w = random_factors(rng, dims);
  const auto c = random_factors(rng, dims);
  const Matrix q = assemble_Q_lambda(w, kron_sum_of(c), 0);
  const double s = (w[1] * c[1]).cwiseProduct(w[1]).sum();
  EXPECT_LT(rel(q, s * c[0]), 1e-14);
}

TEST(AssembleQ, MatchesDenseBilinearForm) {
  std::mt19937_64 rng(13);
  const Dims dims{3, 2, 4};
  const auto a = random_op(rng, dims, 2);
  const auto star = StarInnerProduct::make(a.op, StarMode::GENERAL);
  const Matrix c = a.dense * a.dense.transpose();
  const auto w = random_factors(rng, dims);
  for (int lambda = 0; lambda < 3; ++lambda) {
    const Matrix q = assemble_Q_lambda(w, star.c, lambda);
    EXPECT_LT(rel(q, dense_q(w, c, lambda)), 1e-12) << lambda;
  }
}

TEST(AssembleQ, SymmetricForSymmetricOperator) {
  std::mt19937_64 rng(14);
  const Dims dims{4, 3, 3};
  const auto a = random_spd_op(rng, dims, 3);
  const auto star = StarInnerProduct::make(a.op, StarMode::SPD);
  std::vector<Matrix> w;
  for (Index n : dims) w.push_back(random_spd(rng, n));
  for (int lambda = 0; lambda < 3; ++lambda) {
    const Matrix q = assemble_Q_lambda(w, star.c, lambda);
    EXPECT_LE((q - q.transpose()).norm(), 1e-12 * q.norm());
  }
}

TEST(AssembleH, ZeroPreviousIdentityOperator) {
  const Dims dims{3, 4, 5};
  const auto star = StarInnerProduct::make(KronSumOperator::identity(dims), StarMode::SPD);
  std::vector<Matrix> w;
  for (Index n : dims) w.push_back(Matrix::Identity(n, n));
  const Matrix h = assemble_H_lambda(BasisOperator::zero(dims), w, star, 2);
  EXPECT_LT(rel(h, 12.0 * Matrix::Identity(5, 5)), 1e-14);
}

TEST(AssembleH, VanishesAtExactInverse) {
  std::mt19937_64 rng(15);
  const Dims dims{3, 4};
  std::vector<Matrix> af{random_spd(rng, 3), random_spd(rng, 4)};
  std::vector<Matrix> inv{af[0].inverse(), af[1].inverse()};
  const auto star = StarInnerProduct::make(kron_sum_of(af), StarMode::SPD);
  const auto p = BasisOperator::from_kron_sum(kron_sum_of(inv));
  const auto w = random_factors(rng, dims);
  for (int lambda = 0; lambda < 2; ++lambda) {
    const Matrix h0 = assemble_H_lambda(BasisOperator::zero(dims), w, star, lambda);
    const Matrix h = assemble_H_lambda(p, w, star, lambda);
    EXPECT_LE(h.norm(), 1e-12 * h0.norm());
  }
}

TEST(AssembleH, MatchesDenseResidualSpd) {
  std::mt19937_64 rng(16);
  const Dims dims{3, 2, 4};
  const auto a = random_spd_op(rng, dims, 2);
  const auto p = random_op(rng, dims, 2);
  const auto star = StarInnerProduct::make(a.op, StarMode::SPD);
  const Matrix r = Matrix::Identity(24, 24) - p.dense * a.dense;
  const auto w = random_factors(rng, dims);
  for (int lambda = 0; lambda < 3; ++lambda) {
    const Matrix h = assemble_H_lambda(BasisOperator::from_kron_sum(p.op), w, star, lambda);
    EXPECT_LT(rel(h, dense_h(w, r, lambda)), 1e-12) << lambda;
  }
}

TEST(AssembleH, MatchesDenseResidualGeneral) {
  std::mt19937_64 rng(17);
  const Dims dims{2, 3, 3};
  const auto a = random_op(rng, dims, 2, true);
  const auto p = random_op(rng, dims, 3);
  const auto star = StarInnerProduct::make(a.op, StarMode::GENERAL);
  const Matrix r = a.dense.transpose() - p.dense * a.dense * a.dense.transpose();
  const auto w = random_factors(rng, dims);
  for (int lambda = 0; lambda < 3; ++lambda) {
    const Matrix h = assemble_H_lambda(BasisOperator::from_kron_sum(p.op), w, star, lambda);
    EXPECT_LT(rel(h, dense_h(w, r, lambda)), 1e-12) << lambda;
  }
}

TEST(AssembleH, TuckerCoefficientMatchesExpansion) {
  std::mt19937_64 rng(18);
  const Dims dims{3, 3, 2};
  const auto a = random_spd_op(rng, dims, 2);
  const auto star = StarInnerProduct::make(a.op, StarMode::SPD);
  BasisOperator p;
  p.dims = dims;
  p.basis.resize(3);
  for (int m = 0; m < 3; ++m)
    for (int i = 0; i < 2; ++i) p.basis[m].push_back(make_factor(random_matrix(rng, dims[m], dims[m])));
  p.coeff = random_dense(rng, {2, 2, 2});
  // same operator as an explicit Kronecker sum, one term per coefficient
  Matrix pd = Matrix::Zero(18, 18);
  const auto& alpha = std::get<DenseTensor>(p.coeff);
  for (Index l = 0; l < 8; ++l) {
    const Index i0 = l % 2, i1 = (l / 2) % 2, i2 = l / 4;
    pd += alpha.data()[l] *
          kron_modes({p.basis[0][i0]->to_dense(), p.basis[1][i1]->to_dense(), p.basis[2][i2]->to_dense()});
  }
  const Matrix r = Matrix::Identity(18, 18) - pd * a.dense;
  const auto w = random_factors(rng, dims);
  for (int lambda = 0; lambda < 3; ++lambda)
    EXPECT_LT(rel(assemble_H_lambda(p, w, star, lambda), dense_h(w, r, lambda)), 1e-12);
}

// ---------------------------------------------------------------------------
// mode solves

TEST(SolveMode, IdentityQ) {
  std::mt19937_64 rng(21);
  const Matrix h = random_matrix(rng, 5, 5);
  const Matrix id = Matrix::Identity(5, 5);
  EXPECT_LT(rel(solve_mode(id, h, ConstraintKind::None), h), 1e-15);
  EXPECT_LT(rel(solve_mode(id, h, ConstraintKind::Symmetric), 0.5 * (h + h.transpose())), 1e-15);
  EXPECT_LT(rel(solve_mode(id, h, ConstraintKind::Skew), 0.5 * (h - h.transpose())), 1e-15);
}

TEST(SolveMode, UnconstrainedSolvesLinearSystem) {
  std::mt19937_64 rng(22);
  const Matrix q = random_matrix(rng, 6, 6), h = random_matrix(rng, 6, 6);
  const Matrix w = solve_mode(q, h, ConstraintKind::None);
  EXPECT_LT(rel(w * q, h), 1e-12);
}

TEST(SolveMode, SymmetricLyapunov) {
  std::mt19937_64 rng(23);
  const Matrix q = random_spd(rng, 5), h = random_matrix(rng, 5, 5);
  const Matrix w = solve_mode(q, h, ConstraintKind::Symmetric);
  EXPECT_TRUE(w == w.transpose());
  EXPECT_LE((w * q + q.transpose() * w - h - h.transpose()).norm(), 1e-10 * h.norm());
  EXPECT_LT(rel(w, vectorized_sylvester(q.transpose(), q, h + h.transpose())), 1e-10);
}

TEST(SolveMode, SkewStationarity) {
  std::mt19937_64 rng(24);
  const Matrix q = random_spd(rng, 5), h = random_matrix(rng, 5, 5);
  const Matrix w = solve_mode(q, h, ConstraintKind::Skew);
  EXPECT_TRUE(w == -Matrix(w.transpose()));
  // projected residual skew(WQ − H) vanishes
  const Matrix r = w * q - h;
  EXPECT_LE((r - r.transpose()).norm(), 1e-10 * h.norm());
  EXPECT_LT(rel(w, vectorized_sylvester(q.transpose(), q, h - h.transpose())), 1e-10);
}

TEST(SolveMode, SkewMinimizesOverSkewMatrices) {
  // W must beat every skew perturbation of itself on f(W) = ⟨WQ,W⟩ − 2⟨H,W⟩
  std::mt19937_64 rng(25);
  const Matrix q = random_spd(rng, 4), h = random_matrix(rng, 4, 4);
  const Matrix w = solve_mode(q, h, ConstraintKind::Skew);
  auto f = [&](const Matrix& x) { return (x * q).cwiseProduct(x).sum() - 2.0 * h.cwiseProduct(x).sum(); };
  for (int t = 0; t < 20; ++t) {
    const Matrix g = random_matrix(rng, 4, 4);
    const Matrix d = 1e-3 * (g - g.transpose());
    EXPECT_GE(f(w + d), f(w) - 1e-12);
  }
}

TEST(Sylvester, NonsymmetricMatchesVectorizedSolve) {
  std::mt19937_64 rng(26);
  for (Index n : {1, 2, 5, 7}) {
    const Matrix a = random_matrix(rng, n, n) + 3.0 * Matrix::Identity(n, n);
    const Matrix b = random_matrix(rng, n + 1, n + 1) + 3.0 * Matrix::Identity(n + 1, n + 1);
    const Matrix c = random_matrix(rng, n, n + 1);
    const Matrix x = solve_sylvester(a, b, c);
    EXPECT_LT(rel(a * x + x * b, c), 1e-10) << n;
    EXPECT_LT(rel(x, vectorized_sylvester(a, b, c)), 1e-9) << n;
  }
}

TEST(Sylvester, OverlappingSpectraThrow) {
  const Matrix id = Matrix::Identity(3, 3);
  try {
    solve_sylvester(id, -id, id);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SylvesterDegenerate);
  }
}

TEST(SolveMode, SingularModeThrows) {
  const Matrix q = Matrix::Zero(3, 3);
  const Matrix h = Matrix::Identity(3, 3);
  try {
    solve_mode(q, h, ConstraintKind::None);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularMode);
  }
}

TEST(SolveMode, RankDeficientConsistentUsesLeastSquares) {
  std::mt19937_64 rng(27);
  const Matrix b = random_matrix(rng, 5, 3);
  const Matrix q = b * b.transpose();
  const Matrix h = random_matrix(rng, 5, 5) * q;
  const Matrix w = solve_mode(q, h, ConstraintKind::None);
  EXPECT_LE((w * q - h).norm(), 1e-8 * h.norm());
}

// ---------------------------------------------------------------------------
// sparse rows and pattern adaptation

TEST(SparseRows, DiagonalPatternIdentityQ) {
  std::mt19937_64 rng(31);
  const Matrix h = random_matrix(rng, 4, 4);
  const Matrix w = solve_sparse_rows(Matrix::Identity(4, 4), h, SparsityPattern::diagonal(4));
  EXPECT_LT(rel(w, Matrix(h.diagonal().asDiagonal())), 1e-15);
}

TEST(SparseRows, FullPatternEqualsUnconstrained) {
  std::mt19937_64 rng(32);
  const Matrix q = random_spd(rng, 6), h = random_matrix(rng, 6, 6);
  EXPECT_LT(rel(solve_sparse_rows(q, h, SparsityPattern::full(6)), solve_mode(q, h, ConstraintKind::None)), 1e-10);
  const Matrix qn = random_matrix(rng, 6, 6);
  EXPECT_LT(rel(solve_sparse_rows(qn, h, SparsityPattern::full(6)), solve_mode(qn, h, ConstraintKind::None)), 1e-10);
}

TEST(SparseRows, MatchesNormalEquationsPerRow) {
  std::mt19937_64 rng(33);
  const Index n = 6;
  for (bool spd : {true, false}) {
    const Matrix q = spd ? random_spd(rng, n) : random_matrix(rng, n, n);
    const Matrix h = random_matrix(rng, n, n);
    SparsityPattern pat;
    pat.rows.resize(n);
    for (Index k = 0; k < n; ++k) {
      std::vector<Index> all{0, 1, 2, 3, 4, 5};
      std::shuffle(all.begin(), all.end(), rng);
      pat.rows[k].assign(all.begin(), all.begin() + 3);
      std::sort(pat.rows[k].begin(), pat.rows[k].end());
    }
    const Matrix w = solve_sparse_rows(q, h, pat);
    for (Index k = 0; k < n; ++k) {
      const auto& idx = pat.rows[k];
      Matrix qh(3, 3);
      Vector hk(3);
      for (int a = 0; a < 3; ++a) {
        hk[a] = h(k, idx[a]);
        for (int b = 0; b < 3; ++b) qh(a, b) = q(idx[a], idx[b]);
      }
      // minimize ‖ŵ Q̂ − ĥ‖: (Q̂ Q̂ᵀ) ŵᵀ = Q̂ ĥᵀ
      const Vector ref = (qh * qh.transpose()).ldlt().solve(qh * hk);
      Vector got(3);
      for (int a = 0; a < 3; ++a) got[a] = w(k, idx[a]);
      EXPECT_LT((got - ref).norm(), 1e-10 * ref.norm()) << k;
      for (Index j = 0; j < n; ++j)
        if (!std::binary_search(idx.begin(), idx.end(), j)) EXPECT_EQ(w(k, j), 0.0);
    }
  }
}

TEST(AdaptPattern, ZeroResidualRowUnchanged) {
  std::mt19937_64 rng(34);
  const Matrix q = random_spd(rng, 5);
  Matrix h = random_matrix(rng, 5, 5);
  h.row(2).setZero();
  h(2, 2) = 0.7 * q(2, 2);  // row 2 has e_2-supported exact solution only if Q e_2 is a multiple of e_2
  const Matrix qd = Matrix(q.diagonal().asDiagonal());
  Matrix hd = h;
  hd.row(2) = 0.7 * qd.row(2);
  const auto pat = SparsityPattern::diagonal(5);
  const Matrix w = solve_sparse_rows(qd, hd, pat);
  const auto up = adapt_pattern(qd, hd, w, pat, 1.0, 3);
  EXPECT_EQ(up.pattern.rows[2], std::vector<Index>{2});
  EXPECT_DOUBLE_EQ(up.w(2, 2), 0.7);
}

TEST(AdaptPattern, OneStepMatchesBruteForceArgmin) {
  std::mt19937_64 rng(35);
  const Index n = 5;
  for (int trial = 0; trial < 4; ++trial) {
    const Matrix q = trial % 2 ? random_spd(rng, n) : random_matrix(rng, n, n);
    const Matrix h = random_matrix(rng, n, n);
    const auto pat = SparsityPattern::diagonal(n);
    const Matrix w = solve_sparse_rows(q, h, pat);
    const auto up = adapt_pattern(q, h, w, pat, 1.0, 1);
    for (Index k = 0; k < n; ++k) {
      const Vector rho = (w.row(k) * q - h.row(k)).transpose();
      Index best = -1;
      double best_val = std::numeric_limits<double>::infinity();
      for (Index j = 0; j < n; ++j) {
        if (j == k) continue;
        const Vector qj = q.row(j).transpose();
        const double g = -rho.dot(qj) / qj.squaredNorm();  // exact 1-D minimizer
        const double val = (rho + g * qj).squaredNorm();
        if (val < best_val) {
          best_val = val;
          best = j;
        }
      }
      std::vector<Index> expect{k, best};
      std::sort(expect.begin(), expect.end());
      EXPECT_EQ(up.pattern.rows[k], expect) << trial << " " << k;
    }
  }
}

TEST(AdaptPattern, FullBudgetConvergesToUnconstrained) {
  std::mt19937_64 rng(36);
  const Index n = 7;
  const Matrix q = random_spd(rng, n), h = random_matrix(rng, n, n);
  const auto pat = SparsityPattern::diagonal(n);
  const auto up = adapt_pattern(q, h, solve_sparse_rows(q, h, pat), pat, 1.0, int(n));
  EXPECT_LT(rel(up.w, solve_mode(q, h, ConstraintKind::None)), 1e-8);
}

TEST(AdaptPattern, RespectsBudget) {
  std::mt19937_64 rng(37);
  const Index n = 10;
  const Matrix q = random_spd(rng, n), h = random_matrix(rng, n, n);
  const auto pat = SparsityPattern::diagonal(n);
  const auto up = adapt_pattern(q, h, solve_sparse_rows(q, h, pat), pat, 0.3, 10);
  for (const auto& r : up.pattern.rows) {
    EXPECT_EQ(Index(r.size()), 3);
    EXPECT_TRUE(std::is_sorted(r.begin(), r.end()));
  }
  EXPECT_EQ(up.added, 20);
  EXPECT_LT(rel(up.w, solve_sparse_rows(q, h, up.pattern)), 1e-10);
}

// ---------------------------------------------------------------------------
// alternating minimization

TEST(CorrectRankOne, IdentityIsExact) {
  const Dims dims{3, 4, 2};
  const auto a = KronSumOperator::identity(dims);
  const auto star = StarInnerProduct::make(a, StarMode::SPD);
  const auto w = correct_rank_one(star, BasisOperator::zero(dims), PropertyConstraint::none(3), {});
  EXPECT_LE(error_estimate(w.as_operator(), a).epsilon, 1e-12);
}

TEST(CorrectRankOne, RankOneOperatorInvertedExactly) {
  std::mt19937_64 rng(41);
  std::vector<Matrix> af{random_spd(rng, 3), random_spd(rng, 4), random_spd(rng, 2)};
  const auto a = kron_sum_of(af);
  for (auto mode : {StarMode::SPD, StarMode::GENERAL}) {
    const auto star = StarInnerProduct::make(a, mode);
    CorrectionConfig cfg;
    cfg.stagnation_tol = 1e-14;
    const auto w = correct_rank_one(star, BasisOperator::zero(a.dims()), {}, cfg);
    const Matrix inv = kron_modes({af[0].inverse(), af[1].inverse(), af[2].inverse()});
    EXPECT_LT(rel(w.as_operator().to_dense(), inv), 1e-8);
  }
}

TEST(CorrectRankOne, MatchesDenseAlternatingFit) {
  std::mt19937_64 rng(42);
  const Dims dims{3, 3};
  const auto a = random_spd_op(rng, dims, 3);
  const auto star = StarInnerProduct::make(a.op, StarMode::SPD);
  CorrectionConfig cfg;
  cfg.max_sweeps = 500;
  cfg.stagnation_tol = 1e-15;
  const auto w = correct_rank_one(star, BasisOperator::zero(dims), {}, cfg);

  // oracle: alternate exact minimizations of ⟨WC,W⟩ − 2⟨I,W⟩ over each 3×3 factor
  const Matrix& c = a.dense;
  const Matrix b = Matrix::Identity(9, 9);
  std::vector<Matrix> f{Matrix::Identity(3, 3), Matrix::Identity(3, 3)};
  auto objective = [&](const Matrix& wd) { return (wd * c).cwiseProduct(wd).sum() - 2.0 * b.cwiseProduct(wd).sum(); };
  for (int sweep = 0; sweep < 500; ++sweep) {
    for (int lambda = 0; lambda < 2; ++lambda) {
      std::vector<Matrix> k(9);
      for (Index e = 0; e < 9; ++e) k[e] = kron_with(f, lambda, unit(3, e % 3, e / 3));
      Matrix m(9, 9);
      Vector g(9);
      for (Index i = 0; i < 9; ++i) {
        g[i] = b.cwiseProduct(k[i]).sum();
        for (Index j = 0; j < 9; ++j) m(i, j) = (k[i] * c).cwiseProduct(k[j]).sum();
      }
      const Vector x = m.ldlt().solve(g);
      f[lambda] = Eigen::Map<const Matrix>(x.data(), 3, 3);
    }
  }
  const double f_oracle = objective(kron_modes(f));
  const double f_lib = objective(w.as_operator().to_dense());
  EXPECT_NEAR(f_lib, f_oracle, 1e-8 * std::abs(f_oracle));
  EXPECT_NEAR(w.report.objective.back(), f_oracle, 1e-8 * std::abs(f_oracle));
}

TEST(CorrectRankOne, MonotoneAndStationary) {
  std::mt19937_64 rng(43);
  const Dims dims{4, 3, 5};
  for (auto mode : {StarMode::SPD, StarMode::GENERAL}) {
    const auto a = mode == StarMode::SPD ? random_spd_op(rng, dims, 3) : random_op(rng, dims, 2);
    const auto star = StarInnerProduct::make(a.op, mode);
    const auto p = BasisOperator::from_kron_sum(random_op(rng, dims, 2).op.scaled(1e-3));
    CorrectionConfig cfg;
    cfg.max_sweeps = 200;
    cfg.stagnation_tol = 1e-13;
    cfg.seed = 5;
    const auto w = correct_rank_one(star, p, PropertyConstraint::none(3), cfg);
    const auto& obj = w.report.objective;
    ASSERT_GE(obj.size(), 3u);
    for (std::size_t i = 1; i < obj.size(); ++i) EXPECT_LE(obj[i], obj[i - 1] + 1e-12 * std::abs(obj[i - 1])) << i;
    for (double s : w.report.stationarity) EXPECT_LE(s, 1e-8);
    for (const auto& f : w.factors) EXPECT_NEAR(f.norm(), 1.0, 1e-14);

    // objective reported equals the expanded dense form with P included
    const Matrix pd = p.to_kron_sum().to_dense();
    const Matrix wd = w.as_operator().to_dense();
    const Matrix cd = star.c.to_dense();
    const Matrix bd = star.b.to_dense();
    const double f_dense = (wd * cd).cwiseProduct(wd).sum() - 2.0 * (bd - pd * cd).cwiseProduct(wd).sum();
    EXPECT_NEAR(obj.back(), f_dense, 1e-10 * std::abs(f_dense));
  }
}

TEST(CorrectRankOne, ConstraintsAreExact) {
  std::mt19937_64 rng(44);
  const Dims dims{5, 4, 6};
  const auto a = random_spd_op(rng, dims, 3);
  const auto star = StarInnerProduct::make(a.op, StarMode::SPD);
  PropertyConstraint pc = PropertyConstraint::none(3);
  pc.modes[0].kind = ConstraintKind::Symmetric;
  pc.modes[1].kind = ConstraintKind::Symmetric;
  pc.modes[2].kind = ConstraintKind::Sparse;
  pc.modes[2].sparse.fill_gamma = 0.5;
  CorrectionConfig cfg;
  cfg.stagnation_tol = 1e-12;
  cfg.max_sweeps = 100;
  const auto w = correct_rank_one(star, BasisOperator::zero(dims), pc, cfg);
  EXPECT_TRUE(w.factors[0] == w.factors[0].transpose());
  EXPECT_TRUE(w.factors[1] == w.factors[1].transpose());
  ASSERT_TRUE(w.patterns[2].has_value());
  const auto f = w.factor_ptrs();
  ASSERT_TRUE(f[2]->is_sparse());
  EXPECT_LE(f[2]->nonzeros(), 6 * 3);
  for (Index k = 0; k < 6; ++k) {
    EXPECT_LE(Index(w.patterns[2]->rows[k].size()), 3);
    for (Index j = 0; j < 6; ++j)
      if (!std::binary_search(w.patterns[2]->rows[k].begin(), w.patterns[2]->rows[k].end(), j))
        EXPECT_EQ(w.factors[2](k, j), 0.0);
  }
  EXPECT_GT(w.report.pattern_growth[2], 0);
  for (double s : w.report.stationarity) EXPECT_LE(s, 1e-8);
}

TEST(CorrectRankOne, SkewConstraintOnNonsymmetricProblem) {
  std::mt19937_64 rng(45);
  const Dims dims{3, 4};
  const auto a = random_op(rng, dims, 2);
  const auto star = StarInnerProduct::make(a.op, StarMode::GENERAL);
  PropertyConstraint pc = PropertyConstraint::none(2);
  pc.modes[1].kind = ConstraintKind::Skew;
  CorrectionConfig cfg;
  cfg.stagnation_tol = 1e-13;
  cfg.max_sweeps = 300;
  const auto w = correct_rank_one(star, BasisOperator::zero(dims), pc, cfg);
  EXPECT_TRUE(w.factors[1] == -Matrix(w.factors[1].transpose()));
  for (double s : w.report.stationarity) EXPECT_LE(s, 1e-8);
}

TEST(CorrectRankOne, ZeroCorrectionAtExactInverse) {
  std::mt19937_64 rng(46);
  std::vector<Matrix> af{random_spd(rng, 3), random_spd(rng, 3)};
  const auto star = StarInnerProduct::make(kron_sum_of(af), StarMode::SPD);
  const auto p = BasisOperator::from_kron_sum(kron_sum_of({af[0].inverse(), af[1].inverse()}));
  try {
    correct_rank_one(star, p, {}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroCorrection);
  }
}

TEST(CorrectRankOne, SeedDeterminism) {
  std::mt19937_64 rng(47);
  const Dims dims{3, 3, 3};
  const auto a = random_spd_op(rng, dims, 2);
  const auto star = StarInnerProduct::make(a.op, StarMode::SPD);
  CorrectionConfig cfg;
  cfg.seed = 99;
  const auto w1 = correct_rank_one(star, BasisOperator::zero(dims), {}, cfg);
  const auto w2 = correct_rank_one(star, BasisOperator::zero(dims), {}, cfg);
  EXPECT_EQ(w1.report.seed, 99u);
  for (int m = 0; m < 3; ++m) EXPECT_TRUE(w1.factors[m] == w2.factors[m]);
  EXPECT_EQ(w1.scale, w2.scale);
}

TEST(CorrectRankOne, InvalidConfigRejected) {
  const Dims dims{2, 2};
  const auto star = StarInnerProduct::make(KronSumOperator::identity(dims), StarMode::SPD);
  CorrectionConfig cfg;
  cfg.max_sweeps = 0;
  EXPECT_THROW(correct_rank_one(star, BasisOperator::zero(dims), {}, cfg), Error);
  EXPECT_THROW(correct_rank_one(star, BasisOperator::zero(dims), PropertyConstraint::sparse_mode(2, 0, 1.5), {}), Error);
  EXPECT_THROW(correct_rank_one(star, BasisOperator::zero({2, 3}), {}, {}), Error);
}

// ---------------------------------------------------------------------------
// basis operators and the relative error estimate

TEST(ErrorEstimate, ZeroOperatorGivesOne) {
  std::mt19937_64 rng(51);
  const auto a = random_spd_op(rng, {3, 4}, 2);
  EXPECT_DOUBLE_EQ(error_estimate(BasisOperator::zero({3, 4}), a.op).epsilon, 1.0);
}

TEST(ErrorEstimate, ExactInverseIsTiny) {
  std::mt19937_64 rng(52);
  std::vector<Matrix> af{random_spd(rng, 4), random_spd(rng, 5)};
  const auto p = kron_sum_of({af[0].inverse(), af[1].inverse()});
  const auto e = error_estimate(p, kron_sum_of(af));
  EXPECT_LE(e.epsilon, 1e-7);
  EXPECT_TRUE(e.precision_limited);
}

TEST(ErrorEstimate, MatchesDenseForEveryCoefficientFormat) {
  std::mt19937_64 rng(53);
  const Dims dims{3, 2, 4};
  const auto a = random_op(rng, dims, 2);
  BasisOperator p;
  p.dims = dims;
  p.basis.resize(3);
  const Dims r{2, 3, 2};
  for (int m = 0; m < 3; ++m)
    for (Index i = 0; i < r[m]; ++i) p.basis[m].push_back(make_factor(random_matrix(rng, dims[m], dims[m])));
  const DenseTensor alpha = random_dense(rng, r);
  Matrix pd = Matrix::Zero(24, 24);
  for (Index l = 0; l < 12; ++l) {
    const Index i0 = l % 2, i1 = (l / 2) % 3, i2 = l / 6;
    pd += alpha.data()[l] *
          kron_modes({p.basis[0][i0]->to_dense(), p.basis[1][i1]->to_dense(), p.basis[2][i2]->to_dense()});
  }
  const double ref = dense_epsilon(pd, a.dense);
  const std::vector<AnyTensor> formats{alpha, to_tucker(alpha), HTTensor::from_dense(alpha, DimensionTree::balanced(3))};
  for (const auto& c : formats) {
    p.coeff = c;
    EXPECT_NEAR(error_estimate(p, a.op).epsilon, ref, 1e-10 * ref);
    EXPECT_LT(rel(p.to_kron_sum().to_dense(), pd), 1e-12);
  }
}

TEST(ErrorEstimate, KronSumOverloadMatchesDense) {
  std::mt19937_64 rng(54);
  const Dims dims{3, 3, 2};
  const auto a = random_spd_op(rng, dims, 2);
  const auto p = random_op(rng, dims, 3);
  const double ref = dense_epsilon(p.dense, a.dense);
  EXPECT_NEAR(error_estimate(p.op, a.op).epsilon, ref, 1e-10 * ref);
  EXPECT_LT(rel(BasisOperator::from_kron_sum(p.op).to_kron_sum().to_dense(), p.dense), 1e-14);
}
