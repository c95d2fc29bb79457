#include "kroninv/kron_operator.hpp"

#include "kroninv/error.hpp"
#include "kroninv/tensor_ops.hpp"
#include "detail/overloaded.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

namespace kroninv {

KronSumOperator::KronSumOperator(Dims dims) : dims_(std::move(dims)) {}

KronSumOperator KronSumOperator::identity(const Dims& dims) {
  KronSumOperator op(dims);
  std::vector<FactorPtr> f;
  for (Index n : dims) f.push_back(make_factor(Factor::identity(n)));
  op.add_term(std::move(f));
  return op;
}

KronSumOperator KronSumOperator::rank_one(std::vector<FactorPtr> factors, double weight) {
  Dims dims;
  for (const auto& f : factors) dims.push_back(f->rows());
  KronSumOperator op(dims);
  op.add_term(std::move(factors), weight);
  return op;
}

void KronSumOperator::add_term(std::vector<FactorPtr> factors, double weight) {
  require(int(factors.size()) == order(), ErrorCode::DimensionMismatch, "term needs one factor per mode");
  for (int m = 0; m < order(); ++m) {
    require(factors[m] != nullptr, ErrorCode::InvalidArgument, "null factor");
    require(factors[m]->rows() == dims_[m] && factors[m]->cols() == dims_[m], ErrorCode::DimensionMismatch,
            "factor shape differs from the operator dimensions");
  }
  terms_.push_back(KronTerm{std::move(factors), weight});
}

void KronSumOperator::append(const KronSumOperator& other, double scale) {
  require(other.dims_ == dims_, ErrorCode::DimensionMismatch, "operator dimensions differ");
  for (const auto& t : other.terms_) terms_.push_back(KronTerm{t.factors, scale * t.weight});
}

KronSumOperator KronSumOperator::scaled(double s) const {
  KronSumOperator out = *this;
  for (auto& t : out.terms_) t.weight *= s;
  return out;
}

Matrix KronSumOperator::to_dense(Index max_side) const {
  const Index n = product(dims_);
  require(n <= max_side, ErrorCode::SizeExceeded, "operator too large to assemble densely");
  Matrix out = Matrix::Zero(n, n);
  for (const auto& t : terms_) {
    Matrix k = t.factors[0]->to_dense();
    for (int m = 1; m < order(); ++m) {
      const Matrix f = t.factors[m]->to_dense();
      Matrix next(f.rows() * k.rows(), f.cols() * k.cols());
      for (Index i = 0; i < f.rows(); ++i)
        for (Index j = 0; j < f.cols(); ++j) next.block(i * k.rows(), j * k.cols(), k.rows(), k.cols()) = f(i, j) * k;
      k = std::move(next);
    }
    out += t.weight * k;
  }
  return out;
}

DenseTensor mode_apply(const DenseTensor& x, int mode, const Factor& f) {
  if (!f.is_sparse()) return x.mode_product(mode, f.dense());
  require(f.cols() == x.dims()[mode], ErrorCode::DimensionMismatch, "mode product: factor columns differ from mode size");
  Index left = 1, right = 1;
  for (int k = 0; k < mode; ++k) left *= x.dims()[k];
  for (int k = mode + 1; k < x.order(); ++k) right *= x.dims()[k];
  Dims out_dims = x.dims();
  out_dims[mode] = f.rows();
  DenseTensor out(out_dims);
  const Index n = f.cols(), p = f.rows();
  if (left == 1) {
    Eigen::Map<const Matrix> xm(x.data().data(), n, right);
    Eigen::Map<Matrix>(out.data().data(), p, right) = f.sparse() * xm;
    return out;
  }
  const SparseMatrix ft = f.sparse().transpose();
  for (Index r = 0; r < right; ++r) {
    Eigen::Map<const Matrix> xm(x.data().data() + r * left * n, left, n);
    Eigen::Map<Matrix>(out.data().data() + r * left * p, left, p) = xm * ft;
  }
  return out;
}

namespace {

void check_dims(const KronSumOperator& a, const Dims& dims) {
  require(a.dims() == dims, ErrorCode::DimensionMismatch, "operator and tensor dimensions differ");
}

AnyTensor apply_term(const KronTerm& t, const AnyTensor& x) {
  return std::visit(
      [&](const auto& v) -> AnyTensor {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, DenseTensor>) {
          DenseTensor y = v;
          for (int m = 0; m < v.order(); ++m)
            if (!t.factors[m]->is_identity()) y = mode_apply(y, m, *t.factors[m]);
          y.data() *= t.weight;
          return y;
        } else if constexpr (std::is_same_v<T, CanonicalTensor>) {
          CanonicalTensor y = v;
          for (int m = 0; m < v.order(); ++m) y.factors[m] = t.factors[m]->apply(v.factors[m]);
          y.weights *= t.weight;
          return y;
        } else if constexpr (std::is_same_v<T, TuckerTensor>) {
          TuckerTensor y = v;
          for (int m = 0; m < v.order(); ++m) y.factors[m] = t.factors[m]->apply(v.factors[m]);
          y.core.data() *= t.weight;
          return y;
        } else {
          HTTensor y = v;
          for (int m = 0; m < v.order(); ++m) {
            const int leaf = v.tree.leaf(m);
            y.frames[leaf] = t.factors[m]->apply(v.frames[leaf]);
          }
          y.transfer[v.tree.root()] *= t.weight;
          return y;
        }
      },
      x);
}

}  // namespace

std::vector<AnyTensor> apply_terms(const KronSumOperator& a, const AnyTensor& x) {
  check_dims(a, dims_of(x));
  std::vector<AnyTensor> out;
  out.reserve(a.rank());
  for (const auto& t : a.terms()) out.push_back(apply_term(t, x));
  return out;
}

AnyTensor apply(const KronSumOperator& a, const AnyTensor& x) {
  const Dims dims = dims_of(x);
  check_dims(a, dims);
  if (a.rank() == 0) {
    if (std::holds_alternative<HTTensor>(x)) return HTTensor::zero(dims, std::get<HTTensor>(x).tree);
    if (std::holds_alternative<DenseTensor>(x)) return DenseTensor(dims);
    if (std::holds_alternative<TuckerTensor>(x)) return to_tucker(CanonicalTensor::zero(dims));
    return CanonicalTensor::zero(dims);
  }
  auto parts = apply_terms(a, x);
  return std::visit(
      [&](const auto& first) -> AnyTensor {
        using T = std::decay_t<decltype(first)>;
        T sum = first;
        for (std::size_t i = 1; i < parts.size(); ++i) {
          const T& p = std::get<T>(parts[i]);
          if constexpr (std::is_same_v<T, DenseTensor>) {
            sum.data() += p.data();
          } else if constexpr (std::is_same_v<T, CanonicalTensor>) {
            for (int m = 0; m < sum.order(); ++m) {
              Matrix f(sum.factors[m].rows(), sum.factors[m].cols() + p.factors[m].cols());
              f << sum.factors[m], p.factors[m];
              sum.factors[m] = std::move(f);
            }
            Vector w(sum.weights.size() + p.weights.size());
            w << sum.weights, p.weights;
            sum.weights = std::move(w);
          } else if constexpr (std::is_same_v<T, TuckerTensor>) {
            sum = tucker_add(sum, p);
          } else {
            sum = ht_add(sum, p);
          }
        }
        return sum;
      },
      parts[0]);
}

KronSumOperator compose(const KronSumOperator& a, const KronSumOperator& b) {
  require(a.dims() == b.dims(), ErrorCode::DimensionMismatch, "operator dimensions differ");
  KronSumOperator out(a.dims());
  std::map<std::pair<const Factor*, const Factor*>, FactorPtr> memo;
  std::unordered_map<const Factor*, bool> ident;
  auto is_id = [&](const FactorPtr& f) {
    auto it = ident.find(f.get());
    if (it == ident.end()) it = ident.emplace(f.get(), f->is_identity()).first;
    return it->second;
  };
  for (const auto& ta : a.terms()) {
    for (const auto& tb : b.terms()) {
      std::vector<FactorPtr> f(a.order());
      for (int m = 0; m < a.order(); ++m) {
        const FactorPtr& x = ta.factors[m];
        const FactorPtr& y = tb.factors[m];
        if (is_id(x)) {
          f[m] = y;
        } else if (is_id(y)) {
          f[m] = x;
        } else {
          auto key = std::make_pair(x.get(), y.get());
          auto it = memo.find(key);
          if (it == memo.end()) it = memo.emplace(key, make_factor(Factor::product(*x, *y))).first;
          f[m] = it->second;
        }
      }
      out.add_term(std::move(f), ta.weight * tb.weight);
    }
  }
  return out;
}

KronSumOperator adjoint(const KronSumOperator& a) {
  KronSumOperator out(a.dims());
  std::unordered_map<const Factor*, FactorPtr> memo;
  for (const auto& t : a.terms()) {
    std::vector<FactorPtr> f(a.order());
    for (int m = 0; m < a.order(); ++m) {
      auto it = memo.find(t.factors[m].get());
      if (it == memo.end()) {
        FactorPtr tr = t.factors[m]->is_symmetric(0.0) ? t.factors[m] : make_factor(t.factors[m]->transposed());
        it = memo.emplace(t.factors[m].get(), std::move(tr)).first;
      }
      f[m] = it->second;
    }
    out.add_term(std::move(f), t.weight);
  }
  return out;
}

double frobenius_inner_ops(const KronSumOperator& x, const KronSumOperator& y) {
  require(x.dims() == y.dims(), ErrorCode::DimensionMismatch, "operator dimensions differ");
  std::map<std::pair<const Factor*, const Factor*>, double> memo;
  double s = 0.0;
  for (const auto& tx : x.terms()) {
    for (const auto& ty : y.terms()) {
      double p = tx.weight * ty.weight;
      for (int m = 0; m < x.order() && p != 0.0; ++m) {
        auto key = std::make_pair(tx.factors[m].get(), ty.factors[m].get());
        auto it = memo.find(key);
        if (it == memo.end()) it = memo.emplace(key, tx.factors[m]->frobenius_dot(*ty.factors[m])).first;
        p *= it->second;
      }
      s += p;
    }
  }
  return s;
}

StarInnerProduct StarInnerProduct::make(const KronSumOperator& a, StarMode mode) {
  StarInnerProduct s;
  s.mode = mode;
  s.a = a;
  s.b = mode == StarMode::SPD ? KronSumOperator::identity(a.dims()) : adjoint(a);
  s.c = mode == StarMode::SPD ? a : compose(a, s.b);
  return s;
}

double star_inner(const KronSumOperator& x, const KronSumOperator& y, const StarInnerProduct& star) {
  return frobenius_inner_ops(compose(x, star.c), y);
}

double star_inner_with_inverse(const KronSumOperator& q, const StarInnerProduct& star) {
  return frobenius_inner_ops(star.b, q);
}

KronSumOperator residual_operator(const KronSumOperator& p, const KronSumOperator& a, const StarInnerProduct& star) {
  require(p.dims() == a.dims(), ErrorCode::DimensionMismatch, "operator dimensions differ");
  KronSumOperator r = star.b;
  r.append(compose(p, star.c), -1.0);
  return r;
}

// ---------------------------------------------------------------------------
// BasisOperator

BasisOperator BasisOperator::zero(const Dims& dims) {
  BasisOperator p;
  p.dims = dims;
  p.basis.resize(dims.size());
  p.coeff = CanonicalTensor::zero(Dims(dims.size(), 0));
  return p;
}

BasisOperator BasisOperator::from_kron_sum(const KronSumOperator& op) {
  if (op.rank() == 0) return zero(op.dims());
  BasisOperator p;
  p.dims = op.dims();
  p.basis.resize(op.order());
  CanonicalTensor c;
  const Index r = op.rank();
  for (int m = 0; m < op.order(); ++m) {
    for (const auto& t : op.terms()) p.basis[m].push_back(t.factors[m]);
    c.factors.push_back(Matrix::Identity(r, r));
  }
  c.weights.resize(r);
  for (Index i = 0; i < r; ++i) c.weights[i] = op.term(i).weight;
  p.coeff = std::move(c);
  return p;
}

bool BasisOperator::is_zero() const {
  for (const auto& b : basis)
    if (b.empty()) return true;
  if (auto* c = std::get_if<CanonicalTensor>(&coeff)) return c->rank() == 0;
  return false;
}

Dims BasisOperator::basis_sizes() const {
  Dims r;
  for (const auto& b : basis) r.push_back(Index(b.size()));
  return r;
}

namespace {

FactorPtr combine(const std::vector<FactorPtr>& basis, const Eigen::Ref<const Vector>& coef) {
  Index nnz = 0, last = -1;
  for (Index i = 0; i < coef.size(); ++i)
    if (coef[i] != 0.0) ++nnz, last = i;
  if (nnz == 1 && coef[last] == 1.0) return basis[last];
  if (nnz == 1) return make_factor(basis[last]->scaled(coef[last]));
  const Index n = basis.front()->rows();
  Matrix acc = Matrix::Zero(n, n);
  for (Index i = 0; i < coef.size(); ++i)
    if (coef[i] != 0.0) basis[i]->add_to(acc, coef[i]);
  return make_factor(compress_factor(acc));
}

}  // namespace

KronSumOperator BasisOperator::to_kron_sum() const {
  KronSumOperator out(dims);
  if (is_zero()) return out;
  const int d = int(dims.size());
  if (auto* c = std::get_if<CanonicalTensor>(&coeff)) {
    for (Index s = 0; s < c->rank(); ++s) {
      std::vector<FactorPtr> f(d);
      for (int m = 0; m < d; ++m) f[m] = combine(basis[m], c->factors[m].col(s));
      out.add_term(std::move(f), c->weights[s]);
    }
    return out;
  }
  const DenseTensor a = to_dense(coeff);
  const Dims r = basis_sizes();
  std::vector<Index> idx(d, 0);
  for (Index lin = 0; lin < a.size(); ++lin) {
    if (a.data()[lin] != 0.0) {
      std::vector<FactorPtr> f(d);
      for (int m = 0; m < d; ++m) f[m] = basis[m][idx[m]];
      out.add_term(std::move(f), a.data()[lin]);
    }
    for (int m = 0; m < d; ++m) {
      if (++idx[m] < r[m]) break;
      idx[m] = 0;
    }
  }
  return out;
}

namespace {

// columns a + kα·c: (Σ_i Uα(i,a) Q_i) U_x(:,c)
Matrix product_frame(const std::vector<FactorPtr>& basis, const Matrix& ua, const Matrix& ux) {
  const Index ka = ua.cols(), kx = ux.cols();
  std::vector<Matrix> z;
  for (const auto& q : basis) z.push_back(q->apply(ux));
  Matrix f = Matrix::Zero(ux.rows(), ka * kx);
  for (Index c = 0; c < kx; ++c)
    for (Index a = 0; a < ka; ++a)
      for (std::size_t i = 0; i < z.size(); ++i)
        if (ua(i, a) != 0.0) f.col(a + ka * c) += ua(i, a) * z[i].col(c);
  return f;
}

// X[a + kα·c] = α[a]·x[c] per mode
DenseTensor kron_core(const DenseTensor& alpha, const DenseTensor& x) {
  const int d = alpha.order();
  Dims dims(d);
  for (int m = 0; m < d; ++m) dims[m] = alpha.dims()[m] * x.dims()[m];
  DenseTensor out(dims);
  std::vector<Index> stride(d);
  Index st = 1;
  for (int m = 0; m < d; ++m) stride[m] = st, st *= dims[m];
  // offsets of α and x entries inside the combined index
  auto offsets = [&](const Dims& sizes, const Dims& scale) {
    std::vector<Index> off(product(sizes));
    std::vector<Index> idx(d, 0);
    for (Index lin = 0; lin < Index(off.size()); ++lin) {
      Index o = 0;
      for (int m = 0; m < d; ++m) o += idx[m] * scale[m] * stride[m];
      off[lin] = o;
      for (int m = 0; m < d; ++m) {
        if (++idx[m] < sizes[m]) break;
        idx[m] = 0;
      }
    }
    return off;
  };
  const auto oa = offsets(alpha.dims(), Dims(d, 1));
  const auto ox = offsets(x.dims(), alpha.dims());
  for (Index j = 0; j < Index(ox.size()); ++j) {
    const double xv = x.data()[j];
    if (xv == 0.0) continue;
    for (Index i = 0; i < Index(oa.size()); ++i) out.data()[ox[j] + oa[i]] = alpha.data()[i] * xv;
  }
  return out;
}

TuckerTensor apply_tucker(const BasisOperator& p, const TuckerTensor& x) {
  const TuckerTensor a = to_tucker(p.coeff);
  TuckerTensor out;
  for (int m = 0; m < x.order(); ++m) out.factors.push_back(product_frame(p.basis[m], a.factors[m], x.factors[m]));
  out.core = kron_core(a.core, x.core);
  return out;
}

HTTensor apply_ht(const BasisOperator& p, const HTTensor& x) {
  const auto& tree = x.tree;
  const HTTensor a = to_ht(p.coeff, tree);
  HTTensor out;
  out.tree = tree;
  out.ranks.resize(tree.size());
  out.frames.resize(tree.size());
  out.transfer.resize(tree.size());
  for (int t = 0; t < tree.size(); ++t) out.ranks[t] = a.ranks[t] * x.ranks[t];
  for (int t = 0; t < tree.size(); ++t) {
    if (tree.is_leaf(t)) {
      out.frames[t] = product_frame(p.basis[tree.node(t).modes[0]], a.frames[t], x.frames[t]);
      continue;
    }
    const int l = tree.node(t).left, r = tree.node(t).right;
    const Index al = a.ranks[l], ar = a.ranks[r], xl = x.ranks[l], xr = x.ranks[r];
    const Index at = a.transfer[t].cols(), xt = x.transfer[t].cols();
    Matrix b = Matrix::Zero(al * xl * ar * xr, at * xt);
    for (Index ct = 0; ct < xt; ++ct)
      for (Index cr = 0; cr < xr; ++cr)
        for (Index cl = 0; cl < xl; ++cl) {
          const double xv = x.transfer[t](cl + xl * cr, ct);
          if (xv == 0.0) continue;
          for (Index a_t = 0; a_t < at; ++a_t)
            for (Index a_r = 0; a_r < ar; ++a_r)
              for (Index a_l = 0; a_l < al; ++a_l)
                b((a_l + al * cl) + al * xl * (a_r + ar * cr), a_t + at * ct) = a.transfer[t](a_l + al * a_r, a_t) * xv;
        }
    out.transfer[t] = std::move(b);
  }
  return out;
}

}  // namespace

AnyTensor apply(const BasisOperator& p, const AnyTensor& x) {
  const Dims dims = dims_of(x);
  require(dims == p.dims, ErrorCode::DimensionMismatch, "operator dimensions differ from tensor dimensions");
  const bool canonical = std::holds_alternative<CanonicalTensor>(p.coeff);
  if (p.is_zero() || (canonical && !std::holds_alternative<HTTensor>(x) && !std::holds_alternative<TuckerTensor>(x)))
    return kroninv::apply(p.to_kron_sum(), x);
  return std::visit(detail::overloaded{
                        [&](const DenseTensor& t) -> AnyTensor { return to_dense(AnyTensor(apply_tucker(p, to_tucker(t)))); },
                        [&](const CanonicalTensor& t) -> AnyTensor { return apply_tucker(p, to_tucker(t)); },
                        [&](const TuckerTensor& t) -> AnyTensor { return apply_tucker(p, t); },
                        [&](const HTTensor& t) -> AnyTensor { return apply_ht(p, t); },
                    },
                    x);
}

namespace {

// The estimate is a difference of sums that nearly cancel once P is close to
// A⁻¹, so everything past the stored factors runs in extended precision.
using LMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
using LVector = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

// Neumaier-compensated Σ a_i b_i
long double compensated_dot(const LMatrix& a, const LMatrix& b) {
  long double sum = 0.0L, comp = 0.0L;
  const long double* x = a.data();
  const long double* y = b.data();
  for (Index i = 0; i < a.size(); ++i) {
    const long double t = x[i] * y[i];
    const long double s2 = sum + t;
    comp += std::abs(sum) >= std::abs(t) ? (sum - s2) + t : (t - s2) + sum;
    sum = s2;
  }
  return sum + comp;
}

class ExtendedContraction {
 public:
  ExtendedContraction(const HTTensor& x, std::vector<std::vector<std::vector<LMatrix>>> g,
                      std::vector<std::vector<LVector>> v)
      : x_(x), g_(std::move(g)), v_(std::move(v)), quad_cache_(x.tree.size()), lin_cache_(x.tree.size()) {}

  // ⟨α, ⊗ G[μ][s_μ][s'_μ] α⟩ for the slot tuples of two terms
  long double quad(const std::vector<int>& s, const std::vector<int>& sp) { return quad_at(x_.tree.root(), s, sp)(0, 0); }
  long double lin(const std::vector<int>& s) { return lin_at(x_.tree.root(), s)(0); }

 private:
  const LMatrix& quad_at(int t, const std::vector<int>& s, const std::vector<int>& sp) {
    const auto& tree = x_.tree;
    std::vector<int> key;
    for (int m : tree.node(t).modes) {
      key.push_back(s[m]);
      key.push_back(sp[m]);
    }
    auto it = quad_cache_[t].find(key);
    if (it != quad_cache_[t].end()) return it->second;
    LMatrix out;
    if (tree.is_leaf(t)) {
      const int m = tree.node(t).modes[0];
      const LMatrix u = x_.frames[t].cast<long double>();
      out = u.transpose() * g_[m][s[m]][sp[m]] * u;
    } else {
      const LMatrix ml = quad_at(tree.node(t).left, s, sp);
      const LMatrix mr = quad_at(tree.node(t).right, s, sp);
      const LMatrix b = x_.transfer[t].cast<long double>();
      const Index kl = ml.rows(), kr = mr.rows();
      LMatrix y(kl * kr, b.cols());
      for (Index c = 0; c < b.cols(); ++c) {
        const LMatrix xc = Eigen::Map<const LMatrix>(b.col(c).data(), kl, kr);
        Eigen::Map<LMatrix>(y.col(c).data(), kl, kr) = ml * xc * mr.transpose();
      }
      out = b.transpose() * y;
    }
    return quad_cache_[t].emplace(std::move(key), std::move(out)).first->second;
  }

  const LVector& lin_at(int t, const std::vector<int>& s) {
    const auto& tree = x_.tree;
    std::vector<int> key;
    for (int m : tree.node(t).modes) key.push_back(s[m]);
    auto it = lin_cache_[t].find(key);
    if (it != lin_cache_[t].end()) return it->second;
    LVector out;
    if (tree.is_leaf(t)) {
      const int m = tree.node(t).modes[0];
      out = x_.frames[t].cast<long double>().transpose() * v_[m][s[m]];
    } else {
      const LVector ul = lin_at(tree.node(t).left, s);
      const LVector ur = lin_at(tree.node(t).right, s);
      LVector outer(ul.size() * ur.size());
      for (Index j = 0; j < ur.size(); ++j) outer.segment(j * ul.size(), ul.size()) = ur[j] * ul;
      out = x_.transfer[t].cast<long double>().transpose() * outer;
    }
    return lin_cache_[t].emplace(std::move(key), std::move(out)).first->second;
  }

  const HTTensor& x_;
  std::vector<std::vector<std::vector<LMatrix>>> g_;
  std::vector<std::vector<LVector>> v_;
  std::vector<std::map<std::vector<int>, LMatrix>> quad_cache_;
  std::vector<std::map<std::vector<int>, LVector>> lin_cache_;
};

}  // namespace

ErrorEstimate error_estimate(const BasisOperator& p, const KronSumOperator& a) {
  require(p.dims == a.dims(), ErrorCode::DimensionMismatch, "operator dimensions differ");
  const int d = a.order();
  ErrorEstimate e;
  if (p.is_zero()) return e;
  long double id2 = 1.0L;
  for (Index n : a.dims()) id2 *= (long double)n;
  // per-mode distinct factors of A
  std::vector<std::vector<const Factor*>> distinct(d);
  std::vector<std::vector<int>> slot(a.rank(), std::vector<int>(d));
  for (Index k = 0; k < a.rank(); ++k)
    for (int m = 0; m < d; ++m) {
      const Factor* f = a.term(k).factors[m].get();
      auto it = std::find(distinct[m].begin(), distinct[m].end(), f);
      slot[k][m] = int(it - distinct[m].begin());
      if (it == distinct[m].end()) distinct[m].push_back(f);
    }
  // v[m][j][i] = trace(M_i A_j), g[m][j][l](i,k) = ⟨M_i A_j, M_k A_l⟩
  std::vector<std::vector<LVector>> v(d);
  std::vector<std::vector<std::vector<LMatrix>>> g(d);
  for (int m = 0; m < d; ++m) {
    const auto& basis = p.basis[m];
    const Index r = Index(basis.size());
    const std::size_t na = distinct[m].size();
    std::vector<LMatrix> q(r);
    for (Index i = 0; i < r; ++i) q[i] = basis[i]->to_dense().cast<long double>();
    std::vector<std::vector<LMatrix>> prod(na);
    for (std::size_t j = 0; j < na; ++j) {
      const Factor& f = *distinct[m][j];
      LVector vj(r);
      for (Index i = 0; i < r; ++i) {
        LMatrix pij;
        if (f.is_sparse()) {
          pij = q[i] * Eigen::SparseMatrix<long double, Eigen::RowMajor, int>(f.sparse().cast<long double>());
        } else {
          pij = q[i] * f.dense().cast<long double>();
        }
        vj[i] = compensated_dot(pij.diagonal(), LVector::Ones(pij.rows()));
        prod[j].push_back(std::move(pij));
      }
      v[m].push_back(std::move(vj));
    }
    g[m].assign(na, std::vector<LMatrix>(na));
    for (std::size_t j = 0; j < na; ++j)
      for (std::size_t l = j; l < na; ++l) {
        LMatrix gm(r, r);
        for (Index i = 0; i < r; ++i)
          for (Index k = 0; k < r; ++k) gm(i, k) = compensated_dot(prod[j][i], prod[l][k]);
        g[m][j][l] = gm;
        if (l != j) g[m][l][j] = gm.transpose();
      }
  }
  const DimensionTree tree = std::holds_alternative<HTTensor>(p.coeff) ? std::get<HTTensor>(p.coeff).tree
                                                                        : DimensionTree::balanced(d);
  const HTTensor x = to_ht(p.coeff, tree);
  ExtendedContraction con(x, std::move(g), std::move(v));
  long double cross = 0.0L, quad = 0.0L;
  for (Index k = 0; k < a.rank(); ++k) {
    const long double wk = a.term(k).weight;
    cross += wk * con.lin(slot[k]);
    for (Index l = 0; l < a.rank(); ++l) quad += wk * (long double)a.term(l).weight * con.quad(slot[k], slot[l]);
  }
  const long double sq = (id2 - 2.0L * cross + quad) / id2;
  e.squared = double(sq);
  e.precision_limited = sq < 1e-17L;
  e.epsilon = double(sqrtl(std::max(sq, 0.0L)));
  return e;
}

ErrorEstimate error_estimate(const KronSumOperator& p, const KronSumOperator& a) {
  return error_estimate(BasisOperator::from_kron_sum(p), a);
}

}  // namespace kroninv
