#include "kroninv/rank_one_inverse.hpp"

#include "kroninv/error.hpp"
#include "kroninv/sylvester.hpp"
#include "kroninv/tensor_ops.hpp"
#include "detail/distinct_factors.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace kroninv {

// ---------------------------------------------------------------------------
// constraints and patterns

PropertyConstraint PropertyConstraint::none(int d) { return all(d, ConstraintKind::None); }

PropertyConstraint PropertyConstraint::all(int d, ConstraintKind kind) {
  PropertyConstraint c;
  c.modes.assign(d, ModeConstraint{kind, {}});
  return c;
}

PropertyConstraint PropertyConstraint::sparse_mode(int d, int mode, double fill_gamma) {
  PropertyConstraint c = none(d);
  c.modes[mode].kind = ConstraintKind::Sparse;
  c.modes[mode].sparse.fill_gamma = fill_gamma;
  return c;
}

ModeConstraint PropertyConstraint::at(int mode) const {
  if (modes.empty()) return {};
  return modes[mode];
}

void PropertyConstraint::validate(int d) const {
  if (modes.empty()) return;
  require(int(modes.size()) == d, ErrorCode::InvalidArgument, "one constraint per mode required");
  for (const auto& m : modes) {
    if (m.kind != ConstraintKind::Sparse) continue;
    require(m.sparse.fill_gamma > 0.0 && m.sparse.fill_gamma <= 1.0, ErrorCode::InvalidArgument,
            "fill_gamma must lie in (0,1]");
    if (m.sparse.pattern_iterations)
      require(*m.sparse.pattern_iterations >= 0, ErrorCode::InvalidArgument, "pattern_iterations must be nonnegative");
  }
}

SparsityPattern SparsityPattern::diagonal(Index n) {
  SparsityPattern p;
  p.rows.resize(n);
  for (Index k = 0; k < n; ++k) p.rows[k] = {k};
  return p;
}

SparsityPattern SparsityPattern::full(Index n) {
  SparsityPattern p;
  p.rows.resize(n);
  for (Index k = 0; k < n; ++k)
    for (Index j = 0; j < n; ++j) p.rows[k].push_back(j);
  return p;
}

Index SparsityPattern::nonzeros() const {
  Index s = 0;
  for (const auto& r : rows) s += Index(r.size());
  return s;
}

Index SparsityPattern::row_budget(double gamma, Index n) {
  return std::max<Index>(1, Index(std::ceil(gamma * double(n) - 1e-9)));
}

// ---------------------------------------------------------------------------
// Q^λ / H^λ assembly with per-mode caches

namespace {

using detail::DistinctFactors;
using detail::distinct_by_mode;

class ModeAssembler {
 public:
  ModeAssembler(const KronSumOperator& c, const KronSumOperator* b, const BasisOperator* p)
      : c_op_(c), b_op_(b), p_(p && !p->is_zero() ? p : nullptr), d_(c.order()) {
    c_ = distinct_by_mode(c);
    if (b_op_) b_ = distinct_by_mode(*b_op_);
    s_.resize(d_);
    v_.resize(d_);
    t_.resize(d_);
  }

  void set(int mu, const Matrix& w) {
    const auto& cf = c_[mu].f;
    s_[mu].assign(cf.size(), 0.0);
    v_[mu].assign(cf.size(), Vector());
    for (std::size_t j = 0; j < cf.size(); ++j) {
      const Matrix y = cf[j]->apply(w.transpose()).transpose();  // W C_jᵀ
      s_[mu][j] = w.cwiseProduct(y).sum();
      if (p_) {
        const auto& basis = p_->basis[mu];
        Vector v(Index(basis.size()));
        for (std::size_t i = 0; i < basis.size(); ++i) v[Index(i)] = basis[i]->frobenius_dot(y);
        v_[mu][j] = std::move(v);
      }
    }
    if (b_op_) {
      t_[mu].assign(b_[mu].f.size(), 0.0);
      for (std::size_t j = 0; j < b_[mu].f.size(); ++j) t_[mu][j] = b_[mu].f[j]->frobenius_dot(w);
    }
  }

  Matrix q(int lambda) const {
    std::vector<double> coef(c_[lambda].f.size(), 0.0);
    for (Index k = 0; k < c_op_.rank(); ++k) {
      double prod = c_op_.term(k).weight;
      for (int m = 0; m < d_; ++m)
        if (m != lambda) prod *= s_[m][c_[m].slot[k]];
      coef[c_[lambda].slot[k]] += prod;
    }
    const Index n = c_op_.dims()[lambda];
    Matrix q = Matrix::Zero(n, n);
    for (std::size_t j = 0; j < coef.size(); ++j) c_[lambda].f[j]->add_to(q, coef[j]);
    return q;
  }

  struct HParts {
    Matrix h;
    double scale = 0.0;  // ‖B-part‖ + ‖P-part‖
  };

  HParts h(int lambda) const {
    const Index n = c_op_.dims()[lambda];
    Matrix hb = Matrix::Zero(n, n);
    std::vector<double> coef(b_[lambda].f.size(), 0.0);
    for (Index k = 0; k < b_op_->rank(); ++k) {
      double prod = b_op_->term(k).weight;
      for (int m = 0; m < d_; ++m)
        if (m != lambda) prod *= t_[m][b_[m].slot[k]];
      coef[b_[lambda].slot[k]] += prod;
    }
    for (std::size_t j = 0; j < coef.size(); ++j) b_[lambda].f[j]->add_to(hb, coef[j]);
    HParts out;
    out.scale = hb.norm();
    if (!p_) {
      out.h = std::move(hb);
      return out;
    }
    const auto& basis = p_->basis[lambda];
    const Index r = Index(basis.size());
    std::vector<Vector> acc(c_[lambda].f.size(), Vector::Zero(r));
    std::vector<Vector> vecs(d_);
    for (Index k = 0; k < c_op_.rank(); ++k) {
      for (int m = 0; m < d_; ++m) vecs[m] = m == lambda ? Vector::Zero(r) : v_[m][c_[m].slot[k]];
      acc[c_[lambda].slot[k]] += c_op_.term(k).weight * contract_except(p_->coeff, vecs, lambda);
    }
    Matrix hp = Matrix::Zero(n, n);
    for (std::size_t j = 0; j < acc.size(); ++j) {
      Matrix comb = Matrix::Zero(n, n);
      for (Index i = 0; i < r; ++i)
        if (acc[j][i] != 0.0) basis[i]->add_to(comb, acc[j][i]);
      hp.noalias() += c_[lambda].f[j]->apply_right(comb);
    }
    out.scale += hp.norm();
    out.h = hb - hp;
    return out;
  }

 private:
  const KronSumOperator& c_op_;
  const KronSumOperator* b_op_;
  const BasisOperator* p_;
  int d_;
  std::vector<DistinctFactors> c_, b_;
  std::vector<std::vector<double>> s_;
  std::vector<std::vector<Vector>> v_;
  std::vector<std::vector<double>> t_;
};

void check_factors(std::span<const Matrix> w, const Dims& dims, int lambda) {
  require(w.size() == dims.size(), ErrorCode::DimensionMismatch, "one factor per mode required");
  for (std::size_t m = 0; m < dims.size(); ++m)
    if (int(m) != lambda)
      require(w[m].rows() == dims[m] && w[m].cols() == dims[m], ErrorCode::DimensionMismatch, "factor shape mismatch");
}

Matrix sym(const Matrix& m) { return 0.5 * (m + m.transpose()); }
Matrix skew(const Matrix& m) { return 0.5 * (m - m.transpose()); }

Matrix restrict_to(const Matrix& m, const SparsityPattern& p) {
  Matrix out = Matrix::Zero(m.rows(), m.cols());
  for (Index k = 0; k < Index(p.rows.size()); ++k)
    for (Index j : p.rows[k]) out(k, j) = m(k, j);
  return out;
}

Matrix project(const Matrix& m, ConstraintKind kind, const SparsityPattern* pattern) {
  switch (kind) {
    case ConstraintKind::Symmetric: return sym(m);
    case ConstraintKind::Skew: return skew(m);
    case ConstraintKind::Sparse: return pattern ? restrict_to(m, *pattern) : m;
    case ConstraintKind::None: break;
  }
  return m;
}

Matrix solve_linear(const Matrix& q, const Matrix& h) {
  const Matrix qt = q.transpose();
  Eigen::PartialPivLU<Matrix> lu(qt);
  if (q.allFinite() && lu.rcond() > 1e-14) {
    Matrix w = lu.solve(h.transpose()).transpose();
    if (w.allFinite()) return w;
  }
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(qt);
  cod.setThreshold(1e-14);
  const Matrix w = cod.solve(h.transpose()).transpose();
  const double res = (w * q - h).norm();
  if (!w.allFinite() || res > 1e-8 * std::max(h.norm(), 1e-300))
    throw Error(ErrorCode::SingularMode, "mode matrix numerically singular");
  return w;
}

// ŵ Q̂ = ĥ with Q̂ = Q[I,I]; Cholesky when the block is numerically SPD, else
// minimum-norm complete orthogonal decomposition.
Vector solve_row(const Matrix& qhat, const Vector& rhs) {
  if (qhat == qhat.transpose()) {
    Eigen::LLT<Matrix> llt(qhat);
    if (llt.info() == Eigen::Success) {
      const Vector diag = llt.matrixL().toDenseMatrix().diagonal();
      if (diag.minCoeff() > 1e-7 * diag.maxCoeff()) return llt.solve(rhs);
    }
  }
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(qhat.transpose());
  return cod.solve(rhs);
}

Matrix gather(const Matrix& q, const std::vector<Index>& rows, const std::vector<Index>& cols) {
  Matrix out(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = q(rows[i], cols[j]);
  return out;
}

}  // namespace

Matrix assemble_Q_lambda(std::span<const Matrix> w, const KronSumOperator& c, int lambda) {
  require(lambda >= 0 && lambda < c.order(), ErrorCode::InvalidArgument, "mode out of range");
  check_factors(w, c.dims(), lambda);
  ModeAssembler a(c, nullptr, nullptr);
  for (int m = 0; m < c.order(); ++m)
    if (m != lambda) a.set(m, w[m]);
  return a.q(lambda);
}

Matrix assemble_H_lambda(const BasisOperator& p, std::span<const Matrix> w, const StarInnerProduct& star, int lambda) {
  require(lambda >= 0 && lambda < star.c.order(), ErrorCode::InvalidArgument, "mode out of range");
  require(p.dims == star.c.dims(), ErrorCode::DimensionMismatch, "operator dimensions differ");
  check_factors(w, star.c.dims(), lambda);
  ModeAssembler a(star.c, &star.b, &p);
  for (int m = 0; m < star.c.order(); ++m)
    if (m != lambda) a.set(m, w[m]);
  return a.h(lambda).h;
}

Matrix solve_sparse_rows(const Matrix& q, const Matrix& h, const SparsityPattern& pattern) {
  const Index n = q.rows();
  require(q.cols() == n && h.rows() == n && h.cols() == n, ErrorCode::DimensionMismatch, "mode matrices must be square");
  require(Index(pattern.rows.size()) == n, ErrorCode::DimensionMismatch, "pattern row count differs");
  Matrix w = Matrix::Zero(n, n);
  for (Index k = 0; k < n; ++k) {
    const auto& idx = pattern.rows[k];
    require(!idx.empty(), ErrorCode::InvalidArgument, "pattern rows must be nonempty");
    Vector rhs(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) rhs[Index(j)] = h(k, idx[j]);
    const Vector x = solve_row(gather(q, idx, idx), rhs);
    for (std::size_t j = 0; j < idx.size(); ++j) w(k, idx[j]) = x[Index(j)];
  }
  return w;
}

Matrix solve_mode(const Matrix& q, const Matrix& h, ConstraintKind kind, const SparsityPattern* pattern) {
  require(q.rows() == q.cols() && h.rows() == q.rows() && h.cols() == q.cols(), ErrorCode::DimensionMismatch,
          "mode matrices must be square and equally sized");
  switch (kind) {
    case ConstraintKind::None: return solve_linear(q, h);
    case ConstraintKind::Symmetric: {
      const Matrix w = solve_sylvester(q.transpose(), q, h + h.transpose());
      return sym(w);
    }
    case ConstraintKind::Skew: {
      const Matrix w = solve_sylvester(q.transpose(), q, h - h.transpose());
      return skew(w);
    }
    case ConstraintKind::Sparse:
      require(pattern != nullptr, ErrorCode::InvalidArgument, "sparse mode solve needs a pattern");
      return solve_sparse_rows(q, h, *pattern);
  }
  return {};
}

PatternUpdate adapt_pattern(const Matrix& q, const Matrix& h, const Matrix& w_current, const SparsityPattern& pattern,
                            double gamma, int i_max) {
  const Index n = q.rows();
  require(q.cols() == n && h.rows() == n && h.cols() == n && w_current.rows() == n && w_current.cols() == n,
          ErrorCode::DimensionMismatch, "mode matrices must be square and equally sized");
  require(Index(pattern.rows.size()) == n, ErrorCode::DimensionMismatch, "pattern row count differs");
  require(gamma > 0.0 && gamma <= 1.0, ErrorCode::InvalidArgument, "gamma must lie in (0,1]");
  PatternUpdate out{pattern, w_current, 0};
  const Index cap = SparsityPattern::row_budget(gamma, n);
  bool any_room = false;
  for (const auto& r : pattern.rows) any_room |= Index(r.size()) < cap;
  if (i_max <= 0 || !any_room) return out;

  // with g = Q ρᵀ = (Q Qᵀ)[:, I] ŵ − Q h_kᵀ the scores cost O(n·#I) per row
  const Matrix qq = q * q.transpose();
  const Matrix qh = q * h.transpose();
  const Vector colnorm2 = qq.diagonal();

  for (Index k = 0; k < n; ++k) {
    std::vector<Index> idx = pattern.rows[k];
    if (Index(idx.size()) >= cap) continue;
    std::vector<char> in(n, 0);
    for (Index j : idx) in[j] = 1;
    Vector w(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) w[Index(j)] = w_current(k, idx[j]);
    const double hnorm = h.row(k).norm();

    // Cholesky factor of Q[I,I], grown by bordering
    Matrix l;
    bool chol = q == q.transpose();
    if (chol) {
      Eigen::LLT<Matrix> llt(gather(q, idx, idx));
      chol = llt.info() == Eigen::Success;
      if (chol) l = llt.matrixL();
    }
    for (int it = 0; it < i_max && Index(idx.size()) < cap; ++it) {
      const Index m = Index(idx.size());
      Vector rho = -h.row(k).transpose();
      Vector g = -qh.col(k);
      for (Index a = 0; a < m; ++a) {
        rho += w[a] * q.row(idx[a]).transpose();
        g += w[a] * qq.col(idx[a]);
      }
      if (rho.norm() <= 1e-14 * hnorm || hnorm == 0.0) break;
      Index best = -1;
      double best_score = 0.0;
      for (Index j = 0; j < n; ++j) {
        if (in[j] || colnorm2[j] <= 0.0) continue;
        const double score = g[j] * g[j] / colnorm2[j];
        if (score > best_score) {
          best_score = score;
          best = j;
        }
      }
      if (best < 0) break;
      if (chol) {
        Vector col(m);
        for (Index a = 0; a < m; ++a) col[a] = q(idx[a], best);
        const Vector lv = l.triangularView<Eigen::Lower>().solve(col);
        const double dd = q(best, best) - lv.squaredNorm();
        if (dd > 1e-12 * std::abs(q(best, best))) {
          Matrix nl = Matrix::Zero(m + 1, m + 1);
          nl.topLeftCorner(m, m) = l;
          nl.row(m).head(m) = lv.transpose();
          nl(m, m) = std::sqrt(dd);
          l = std::move(nl);
        } else {
          chol = false;
        }
      }
      idx.push_back(best);
      in[best] = 1;
      ++out.added;
      Vector rhs(m + 1);
      for (Index a = 0; a <= m; ++a) rhs[a] = h(k, idx[a]);
      if (chol) {
        const Vector y = l.triangularView<Eigen::Lower>().solve(rhs);
        w = l.transpose().triangularView<Eigen::Upper>().solve(y);
      } else {
        w = solve_row(gather(q, idx, idx), rhs);
      }
    }
    out.w.row(k).setZero();
    for (std::size_t j = 0; j < idx.size(); ++j) out.w(k, idx[j]) = w[Index(j)];
    std::sort(idx.begin(), idx.end());
    out.pattern.rows[k] = std::move(idx);
  }
  return out;
}

double mode_stationarity(const Matrix& w, const Matrix& q, const Matrix& h, ConstraintKind kind,
                         const SparsityPattern* pattern) {
  const double num = project(w * q - h, kind, pattern).norm();
  const double den = project(h, kind, pattern).norm();
  return den > 0.0 ? num / den : num;
}

// ---------------------------------------------------------------------------

KronSumOperator RankOneCorrection::as_operator() const {
  return KronSumOperator::rank_one(factor_ptrs(), scale);
}

std::vector<FactorPtr> RankOneCorrection::factor_ptrs() const {
  std::vector<FactorPtr> f;
  for (std::size_t m = 0; m < factors.size(); ++m) {
    if (m < patterns.size() && patterns[m]) {
      std::vector<Eigen::Triplet<double, int>> trip;
      const auto& rows = patterns[m]->rows;
      for (Index k = 0; k < Index(rows.size()); ++k)
        for (Index j : rows[k]) trip.emplace_back(int(k), int(j), factors[m](k, j));
      SparseMatrix s(factors[m].rows(), factors[m].cols());
      s.setFromTriplets(trip.begin(), trip.end());
      f.push_back(make_factor(std::move(s)));
    } else {
      f.push_back(make_factor(factors[m]));
    }
  }
  return f;
}

namespace {

ConstraintKind effective_kind(const ModeConstraint& c) {
  // a full fill budget is no constraint at all
  if (c.kind == ConstraintKind::Sparse && c.sparse.fill_gamma >= 1.0) return ConstraintKind::None;
  return c.kind;
}

// first attempt: the configured init; restarts: identity plus unit noise
Matrix initial_factor(Index n, ConstraintKind kind, const CorrectionConfig& cfg, bool restart, std::mt19937_64& rng,
                      const Matrix* given) {
  std::normal_distribution<double> dist;
  Matrix g(n, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i) g(i, j) = dist(rng);
  const double noise = restart ? 1.0 : cfg.init_noise;
  Matrix w;
  if (given) {
    w = *given;
  } else if (!restart && cfg.init == InitKind::Ones) {
    w = Matrix::Ones(n, n);
  } else if (kind == ConstraintKind::Skew) {
    w = g;
  } else if (kind == ConstraintKind::Sparse && !restart) {
    w = Matrix::Identity(n, n);
  } else {
    w = Matrix::Identity(n, n) + noise * g;
  }
  switch (kind) {
    case ConstraintKind::Symmetric: w = sym(w); break;
    case ConstraintKind::Skew: w = skew(w); break;
    case ConstraintKind::Sparse: w = Matrix(w.diagonal().asDiagonal()); break;
    case ConstraintKind::None: break;
  }
  const double nrm = w.norm();
  if (!(nrm > 0.0)) {
    w = kind == ConstraintKind::Skew ? skew(g) : Matrix(Matrix::Identity(n, n));
    return w / w.norm();
  }
  return w / nrm;
}

}  // namespace

RankOneCorrection correct_rank_one(const StarInnerProduct& star, const BasisOperator& p_prev,
                                   const PropertyConstraint& constraints, const CorrectionConfig& config) {
  const KronSumOperator& c = star.c;
  const int d = c.order();
  const Dims& dims = c.dims();
  constraints.validate(d);
  require(p_prev.dims == dims, ErrorCode::DimensionMismatch, "previous approximation has different dimensions");
  require(config.max_sweeps >= 1, ErrorCode::InvalidArgument, "max_sweeps must be positive");
  require(config.stagnation_tol > 0.0, ErrorCode::InvalidArgument, "stagnation_tol must be positive");
  if (config.init == InitKind::Given)
    require(int(config.given.size()) == d, ErrorCode::InvalidArgument, "given initialization needs d factors");

  std::vector<ConstraintKind> kind(d);
  for (int m = 0; m < d; ++m) kind[m] = effective_kind(constraints.at(m));

  std::mt19937_64 rng(config.seed);
  RankOneCorrection result;
  result.report.seed = config.seed;

  for (int attempt = 0; attempt <= config.max_restarts; ++attempt) {
    std::vector<Matrix> w(d);
    std::vector<std::optional<SparsityPattern>> patterns(d);
    std::vector<Index> growth(d, 0);
    for (int m = 0; m < d; ++m) {
      const Matrix* given = attempt == 0 && config.init == InitKind::Given ? &config.given[m] : nullptr;
      w[m] = initial_factor(dims[m], kind[m], config, attempt > 0, rng, given);
      if (kind[m] == ConstraintKind::Sparse) {
        const auto& sc = constraints.at(m).sparse;
        if (sc.initial == InitialPattern::Custom) {
          require(Index(sc.custom_rows.size()) == dims[m], ErrorCode::InvalidArgument, "custom pattern row count");
          SparsityPattern p;
          p.rows = sc.custom_rows;
          for (auto& r : p.rows) std::sort(r.begin(), r.end());
          patterns[m] = std::move(p);
          w[m] = restrict_to(w[m], *patterns[m]);
          if (w[m].norm() > 0.0) w[m] /= w[m].norm();
        } else {
          patterns[m] = SparsityPattern::diagonal(dims[m]);
        }
      }
    }

    ModeAssembler assembler(c, &star.b, &p_prev);
    for (int m = 0; m < d; ++m) assembler.set(m, w[m]);

    // σ sits on the mode being checked; every other factor is unit norm
    std::vector<double> per_mode(d, 0.0);
    auto stationarity = [&](const ModeAssembler& a, const std::vector<Matrix>& f, double s) {
      double worst = 0.0;
      for (int lambda = 0; lambda < d; ++lambda) {
        const SparsityPattern* pat = patterns[lambda] ? &*patterns[lambda] : nullptr;
        per_mode[lambda] = mode_stationarity(s * f[lambda], sym(a.q(lambda)), a.h(lambda).h, kind[lambda], pat);
        worst = std::max(worst, per_mode[lambda]);
      }
      return worst;
    };
    std::vector<double> objective;
    double sigma = 0.0, prev_norm = -1.0;
    bool degenerate = false;
    int sweeps = 0;
    for (int sweep = 0; sweep < config.max_sweeps && !degenerate; ++sweep) {
      double star_norm = 0.0;
      for (int lambda = 0; lambda < d; ++lambda) {
        const Matrix q = sym(assembler.q(lambda));  // C is symmetric; drop rounding asymmetry
        const auto hp = assembler.h(lambda);
        const Matrix& h = hp.h;
        if (!q.allFinite() || !h.allFinite() ||
            project(h, kind[lambda], nullptr).norm() <= config.zero_tol * hp.scale || hp.scale == 0.0) {
          degenerate = true;
          break;
        }
        Matrix wn;
        try {
          if (kind[lambda] == ConstraintKind::Sparse) {
            const auto& sc = constraints.at(lambda).sparse;
            auto& pat = *patterns[lambda];
            wn = solve_sparse_rows(q, h, pat);
            const Index budget = SparsityPattern::row_budget(sc.fill_gamma, dims[lambda]);
            const int i_max = sc.pattern_iterations.value_or(int(budget) - 1);
            if (i_max > 0) {
              PatternUpdate up = adapt_pattern(q, h, wn, pat, sc.fill_gamma, i_max);
              growth[lambda] += up.added;
              if (up.added > 0) {
                pat = std::move(up.pattern);
                wn = std::move(up.w);
              }
            }
          } else {
            wn = solve_mode(q, h, kind[lambda]);
          }
        } catch (const Error& e) {
          if (e.code() != ErrorCode::SingularMode && e.code() != ErrorCode::SylvesterDegenerate) throw;
          degenerate = true;
          break;
        }
        const double wqw = (wn * q).cwiseProduct(wn).sum();
        const double f = wqw - 2.0 * h.cwiseProduct(wn).sum();
        sigma = wn.norm();
        if (!std::isfinite(f) || !(sigma > 0.0)) {
          degenerate = true;
          break;
        }
        objective.push_back(f);
        w[lambda] = wn / sigma;
        assembler.set(lambda, w[lambda]);
        star_norm = std::sqrt(std::max(wqw, 0.0));
      }
      if (degenerate) break;
      ++sweeps;
      const bool stagnated = prev_norm >= 0.0 && std::abs(star_norm - prev_norm) <= config.stagnation_tol * star_norm;
      prev_norm = star_norm;
      if (stagnated && stationarity(assembler, w, sigma) <= config.stationarity_tol) break;
    }
    if (degenerate) {
      ++result.report.restarts;
      continue;
    }

    stationarity(assembler, w, sigma);
    result.factors = std::move(w);
    result.scale = sigma;
    result.patterns = std::move(patterns);
    result.report.objective = std::move(objective);
    result.report.sweeps = sweeps;
    result.report.pattern_growth = std::move(growth);
    result.report.stationarity = per_mode;
    return result;
  }
  throw Error(ErrorCode::ZeroCorrection, "no nonzero rank-one correction found");
}

}  // namespace kroninv
