#include "kroninv/greedy_inverse.hpp"

#include "kroninv/error.hpp"
#include "kroninv/tensor_ops.hpp"
#include "detail/distinct_factors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <chrono>
#include <map>

namespace kroninv {

// ---------------------------------------------------------------------------
// bases

OperatorBasis OperatorBasis::empty(int d) {
  OperatorBasis b;
  b.q.resize(d);
  b.provenance.resize(d);
  return b;
}

Dims OperatorBasis::sizes() const {
  Dims s;
  for (const auto& m : q) s.push_back(Index(m.size()));
  return s;
}

std::vector<bool> extend_basis(OperatorBasis& basis, std::span<const Matrix> w) {
  require(int(w.size()) == basis.order(), ErrorCode::DimensionMismatch, "one factor per mode required");
  std::vector<bool> grew(w.size(), false);
  for (std::size_t m = 0; m < w.size(); ++m) {
    auto& q = basis.q[m];
    if (!q.empty())
      require(w[m].rows() == q[0]->rows() && w[m].cols() == q[0]->cols(), ErrorCode::DimensionMismatch,
              "factor shape differs from basis");
    Matrix x = w[m];
    const double n0 = x.norm();
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& qi : q) qi->add_to(x, -qi->frobenius_dot(x));
    const double nr = x.norm();
    if (n0 > 0.0 && nr > 1e-10 * n0) {
      q.push_back(make_factor(compress_factor(x / nr)));
      basis.provenance[m].push_back(int(q.size()) - 1);
      grew[m] = true;
    } else {
      basis.provenance[m].push_back(-1);
    }
  }
  return grew;
}

// ---------------------------------------------------------------------------
// star Gram cache

StarGramCache::StarGramCache(const StarInnerProduct& star) : star_(&star) {
  const int d = star.c.order();
  const auto cd = detail::distinct_by_mode(star.c);
  const auto bd = detail::distinct_by_mode(star.b);
  c_f_.resize(d);
  b_f_.resize(d);
  c_slot_.resize(d);
  b_slot_.resize(d);
  q_.resize(d);
  g_.resize(d);
  v_.resize(d);
  for (int m = 0; m < d; ++m) {
    c_f_[m] = cd[m].f;
    c_slot_[m] = cd[m].slot;
    b_f_[m] = bd[m].f;
    b_slot_[m] = bd[m].slot;
    g_[m].assign(c_f_[m].size(), Matrix(0, 0));
    v_[m].assign(b_f_[m].size(), Vector(0));
  }
}

void StarGramCache::sync(const OperatorBasis& basis) {
  require(basis.order() == order(), ErrorCode::DimensionMismatch, "basis order differs from operator order");
  for (int m = 0; m < order(); ++m) {
    const auto& q = basis.q[m];
    const Index old = Index(q_[m].size());
    for (Index i = 0; i < std::min<Index>(old, Index(q.size())); ++i)
      require(q_[m][i] == q[i], ErrorCode::InvalidArgument, "basis entries changed since last sync");
    const Index r = Index(q.size());
    if (r == old) continue;
    std::vector<Matrix> qd(r);
    for (Index i = 0; i < r; ++i) qd[i] = q[i]->to_dense();
    for (std::size_t j = 0; j < c_f_[m].size(); ++j) {
      Matrix g = Matrix::Zero(r, r);
      g.topLeftCorner(old, old) = g_[m][j];
      const Factor& f = *c_f_[m][j];
      for (Index x = old; x < r; ++x) {
        const Matrix z1 = f.apply_right(qd[x]);                           // Q_x C
        const Matrix z2 = f.apply(qd[x].transpose()).transpose();         // Q_x Cᵀ
        for (Index b = 0; b < r; ++b) g(b, x) = q[b]->frobenius_dot(z1);  // ⟨Q_x C, Q_b⟩
        for (Index a = 0; a < old; ++a) g(x, a) = q[a]->frobenius_dot(z2);
      }
      g_[m][j] = std::move(g);
    }
    for (std::size_t j = 0; j < b_f_[m].size(); ++j) {
      Vector v = Vector::Zero(r);
      v.head(old) = v_[m][j];
      for (Index x = old; x < r; ++x) v[x] = b_f_[m][j]->frobenius_dot(qd[x]);
      v_[m][j] = std::move(v);
    }
    q_[m] = q;
  }
}

Dims StarGramCache::sizes() const {
  Dims s;
  for (const auto& q : q_) s.push_back(Index(q.size()));
  return s;
}

DenseTensor StarGramCache::apply(const DenseTensor& alpha) const {
  DenseTensor y(alpha.dims(), Vector::Zero(alpha.size()));
  const auto& c = star_->c;
  for (Index k = 0; k < c.rank(); ++k) {
    DenseTensor t = alpha;
    for (int m = 0; m < order(); ++m) t = t.mode_product(m, g_[m][c_slot_[m][k]]);
    y.data() += c.term(k).weight * t.data();
  }
  return y;
}

DenseTensor StarGramCache::rhs_dense() const {
  const auto& b = star_->b;
  CanonicalTensor x;
  x.factors.resize(order());
  for (int m = 0; m < order(); ++m) {
    x.factors[m].resize(Index(q_[m].size()), b.rank());
    for (Index l = 0; l < b.rank(); ++l) x.factors[m].col(l) = v_[m][b_slot_[m][l]];
  }
  x.weights.resize(b.rank());
  for (Index l = 0; l < b.rank(); ++l) x.weights[l] = b.term(l).weight;
  return to_dense(AnyTensor(std::move(x)));
}

double StarGramCache::objective(const AnyTensor& alpha) const {
  const auto& c = star_->c;
  const auto& b = star_->b;
  double quad = 0.0, lin = 0.0;
  std::vector<Matrix> gk(order());
  for (Index k = 0; k < c.rank(); ++k) {
    for (int m = 0; m < order(); ++m) gk[m] = g_[m][c_slot_[m][k]];
    quad += c.term(k).weight * gram_inner(alpha, alpha, gk);
  }
  std::vector<Vector> vl(order());
  for (Index l = 0; l < b.rank(); ++l) {
    for (int m = 0; m < order(); ++m) vl[m] = v_[m][b_slot_[m][l]];
    lin += b.term(l).weight * full_contract(alpha, vl);
  }
  return quad - 2.0 * lin;
}

// ---------------------------------------------------------------------------
// FULL projection

namespace {

Dims gram_sizes(const StarGramCache& g) { return g.sizes(); }

Matrix kron2(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index j = 0; j < a.cols(); ++j)
    for (Index i = 0; i < a.rows(); ++i) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

Matrix dense_gram(const StarGramCache& g) {
  const auto& c = g.star().c;
  const Index n = product(gram_sizes(g));
  Matrix out = Matrix::Zero(n, n);
  for (Index k = 0; k < c.rank(); ++k) {
    Matrix t = g.gram(0, g.c_slot(0, k));
    for (int m = 1; m < g.order(); ++m) t = kron2(g.gram(m, g.c_slot(m, k)), t);  // mode 0 fastest
    out += c.term(k).weight * t;
  }
  return 0.5 * (out + out.transpose());
}

Vector gram_diagonal(const StarGramCache& g) {
  const auto& c = g.star().c;
  const Dims dims = gram_sizes(g);
  Vector out = Vector::Zero(product(dims));
  for (Index k = 0; k < c.rank(); ++k) {
    Vector t = g.gram(0, g.c_slot(0, k)).diagonal();
    for (int m = 1; m < g.order(); ++m) {
      const Vector dm = g.gram(m, g.c_slot(m, k)).diagonal();
      Vector nt(t.size() * dm.size());
      for (Index i = 0; i < dm.size(); ++i) nt.segment(i * t.size(), t.size()) = dm[i] * t;
      t = std::move(nt);
    }
    out += c.term(k).weight * t;
  }
  return out;
}

}  // namespace

DenseTensor project_full(const StarGramCache& g, const ProjectionSpec& spec, ProjectionReport* report) {
  const Dims dims = gram_sizes(g);
  const Index n = product(dims);
  require(n > 0, ErrorCode::InvalidArgument, "empty basis");
  if (n > spec.full_cap)
    throw Error(ErrorCode::SizeExceeded, "FULL projection has " + std::to_string(n) + " unknowns, above the cap of " +
                                             std::to_string(spec.full_cap) + "; use HT projection");
  ProjectionReport rep;
  const DenseTensor rhs = g.rhs_dense();
  DenseTensor alpha(dims, Vector::Zero(n));
  if (n <= spec.dense_limit) {
    const Matrix gm = dense_gram(g);
    Eigen::LLT<Matrix> llt(gm);
    const double rc = llt.info() == Eigen::Success ? llt.rcond() : 0.0;
    rep.condition_estimate = rc > 0.0 ? 1.0 / rc : std::numeric_limits<double>::infinity();
    if (rep.condition_estimate > 1e14) {
      rep.gram_ill_conditioned = true;
      Eigen::CompleteOrthogonalDecomposition<Matrix> cod(gm);
      alpha.data() = cod.solve(rhs.data());
    } else {
      alpha.data() = llt.solve(rhs.data());
    }
  } else {
    // Jacobi-preconditioned CG on the Kronecker-sum Gram operator
    const Vector dinv = gram_diagonal(g).cwiseInverse();
    const double bnorm = rhs.data().norm();
    Vector x = Vector::Zero(n), r = rhs.data();
    Vector z = dinv.cwiseProduct(r), p = z;
    double rz = r.dot(z);
    int it = 0;
    const int max_it = int(std::min<Index>(10 * n, 20000));
    while (r.norm() > 1e-13 * bnorm && it < max_it) {
      const Vector ap = g.apply(DenseTensor(dims, p)).data();
      const double pap = p.dot(ap);
      if (!(pap > 0.0)) {
        rep.gram_ill_conditioned = true;
        break;
      }
      const double a = rz / pap;
      x += a * p;
      r -= a * ap;
      z = dinv.cwiseProduct(r);
      const double rz_new = r.dot(z);
      p = z + (rz_new / rz) * p;
      rz = rz_new;
      ++it;
    }
    if (r.norm() > 1e-8 * bnorm) rep.gram_ill_conditioned = true;
    alpha.data() = x;
  }
  const double bn = rhs.data().norm();
  rep.galerkin_residual = bn > 0.0 ? (g.apply(alpha).data() - rhs.data()).norm() / bn : 0.0;
  if (report) *report = std::move(rep);
  return alpha;
}

// ---------------------------------------------------------------------------
// HT projection

namespace {

// k_t ≤ k_l k_r, k_l ≤ k_r k_t, k_r ≤ k_l k_t, root 1
void make_consistent(const DimensionTree& tree, std::vector<Index>& k) {
  k[tree.root()] = 1;
  for (bool changed = true; changed;) {
    changed = false;
    for (int t : tree.interior_nodes()) {
      const int l = tree.node(t).left, r = tree.node(t).right;
      const Index kt = k[t], kl = k[l], kr = k[r];
      k[t] = std::min(k[t], kl * kr);
      k[l] = std::min(k[l], kr * k[t]);
      k[r] = std::min(k[r], kl * k[t]);
      changed |= k[t] != kt || k[l] != kl || k[r] != kr;
    }
  }
}

}  // namespace

std::vector<Index> ht_projection_ranks(const DimensionTree& tree, const Dims& sizes, Index rho) {
  require(int(sizes.size()) == tree.order(), ErrorCode::DimensionMismatch, "tree order differs from basis order");
  std::vector<Index> k(tree.size(), 1);
  for (int t = 0; t < tree.size(); ++t) {
    if (t == tree.root()) continue;
    const auto& in = tree.node(t).modes;
    std::vector<int> out;
    for (int m = 0; m < tree.order(); ++m)
      if (std::find(in.begin(), in.end(), m) == in.end()) out.push_back(m);
    k[t] = std::max<Index>(1, std::min({rho, product_of(sizes, in), product_of(sizes, out)}));
  }
  make_consistent(tree, k);
  return k;
}

namespace {

struct ThinQr {
  Matrix q, r;
};

ThinQr thin_qr(const Matrix& x) {
  const Index m = x.rows(), k = x.cols();
  Eigen::HouseholderQR<Matrix> qr(x);
  ThinQr out;
  out.q = qr.householderQ() * Matrix::Identity(m, k);
  out.r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  return out;
}

// B (k_l·k_r × k_t), left index fastest; column γ viewed as a k_l × k_r matrix
Eigen::Map<const Matrix> slice(const Matrix& b, Index kl, Index kr, Index g) {
  return Eigen::Map<const Matrix>(b.col(g).data(), kl, kr);
}

class HtAls {
 public:
  HtAls(const StarGramCache& g, const DimensionTree& tree) : g_(g), tree_(tree) {
    const auto& c = g.star().c;
    const auto& b = g.star().b;
    const int n = tree.size();
    cin_.resize(n);
    cout_.resize(n);
    bin_.resize(n);
    bout_.resize(n);
    ncin_.assign(n, 0);
    ncout_.assign(n, 0);
    nbin_.assign(n, 0);
    nbout_.assign(n, 0);
    for (int t = 0; t < n; ++t) {
      std::vector<char> in(tree.order(), 0);
      for (int m : tree.node(t).modes) in[m] = 1;
      auto keys = [&](Index terms, auto slot, bool inside, std::vector<int>& id, int& count) {
        std::map<std::vector<int>, int> seen;
        id.resize(terms);
        for (Index k = 0; k < terms; ++k) {
          std::vector<int> key;
          for (int m = 0; m < tree.order(); ++m)
            if (bool(in[m]) == inside) key.push_back(slot(m, k));
          auto [it, fresh] = seen.emplace(key, int(seen.size()));
          id[k] = it->second;
        }
        count = int(seen.size());
      };
      auto cs = [&](int m, Index k) { return g.c_slot(m, k); };
      auto bs = [&](int m, Index k) { return g.b_slot(m, k); };
      keys(c.rank(), cs, true, cin_[t], ncin_[t]);
      keys(c.rank(), cs, false, cout_[t], ncout_[t]);
      keys(b.rank(), bs, true, bin_[t], nbin_[t]);
      keys(b.rank(), bs, false, bout_[t], nbout_[t]);
    }
  }

  /// Moves all non-orthogonality into node t.
  void orthogonalize_towards(HTTensor& x, int t) const {
    for (int s : tree_.post_order()) {
      if (s == tree_.root()) continue;
      Matrix& own = tree_.is_leaf(s) ? x.frames[s] : x.transfer[s];
      ThinQr qr = thin_qr(own);
      own = std::move(qr.q);
      push_into_parent(x, s, qr.r);
    }
    std::vector<int> path;
    for (int s = t; s != tree_.root(); s = tree_.node(s).parent) path.push_back(s);
    for (auto it = path.rbegin(); it != path.rend(); ++it) {
      const int c = *it, p = tree_.node(c).parent;
      const int l = tree_.node(p).left, r = tree_.node(p).right;
      const Index kl = x.ranks[l], kr = x.ranks[r], kp = x.ranks[p];
      Matrix& bp = x.transfer[p];
      const bool left = c == l;
      const Index kc = left ? kl : kr, ko = left ? kr : kl;
      Matrix y(ko * kp, kc);
      for (Index g = 0; g < kp; ++g) {
        const auto s = slice(bp, kl, kr, g);
        if (left)
          y.middleRows(g * ko, ko) = s.transpose();
        else
          y.middleRows(g * ko, ko) = s;
      }
      ThinQr qr = thin_qr(y);
      for (Index g = 0; g < kp; ++g) {
        Eigen::Map<Matrix> s(bp.col(g).data(), kl, kr);
        if (left)
          s = qr.q.middleRows(g * ko, ko).transpose();
        else
          s = qr.q.middleRows(g * ko, ko);
      }
      Matrix& own = tree_.is_leaf(c) ? x.frames[c] : x.transfer[c];
      own = own * qr.r.transpose();
    }
  }

  /// One local update at node t; returns the objective after it.
  double update(HTTensor& x, int t, double ls_threshold, int& fallbacks) {
    orthogonalize_towards(x, t);
    subtree_caches(x);
    complement_caches(x, t);
    const auto& c = g_.star().c;
    const auto& b = g_.star().b;
    Matrix n;
    Vector s;
    if (tree_.is_leaf(t)) {
      const int mode = tree_.node(t).modes[0];
      const Index rm = x.frames[t].rows(), kt = x.ranks[t];
      std::map<std::pair<int, int>, double> groups;
      for (Index k = 0; k < c.rank(); ++k) groups[{cout_[t][k], g_.c_slot(mode, k)}] += c.term(k).weight;
      n = Matrix::Zero(rm * kt, rm * kt);
      for (const auto& [key, w] : groups) n += w * kron2(mc_[t][key.first], g_.gram(mode, key.second));
      s = Vector::Zero(rm * kt);
      for (Index l = 0; l < b.rank(); ++l) {
        const Vector& v = g_.rhs(mode, g_.b_slot(mode, l));
        const Vector& w = wb_[t][bout_[t][l]];
        for (Index a = 0; a < kt; ++a) s.segment(a * rm, rm) += b.term(l).weight * w[a] * v;
      }
    } else {
      const int l = tree_.node(t).left, r = tree_.node(t).right;
      const Index kl = x.ranks[l], kr = x.ranks[r], kt = x.ranks[t];
      std::map<std::array<int, 3>, double> groups;
      for (Index k = 0; k < c.rank(); ++k) groups[{cout_[t][k], cin_[r][k], cin_[l][k]}] += c.term(k).weight;
      n = Matrix::Zero(kl * kr * kt, kl * kr * kt);
      for (const auto& [key, w] : groups)
        n += w * kron2(mc_[t][key[0]], kron2(lc_[r][key[1]], lc_[l][key[2]]));
      s = Vector::Zero(kl * kr * kt);
      for (Index q = 0; q < b.rank(); ++q) {
        const Vector& ul = ub_[l][bin_[l][q]];
        const Vector& ur = ub_[r][bin_[r][q]];
        const Vector& w = wb_[t][bout_[t][q]];
        for (Index g = 0; g < kt; ++g)
          for (Index bb = 0; bb < kr; ++bb)
            s.segment(g * kl * kr + bb * kl, kl) += b.term(q).weight * w[g] * ur[bb] * ul;
      }
    }
    n = 0.5 * (n + n.transpose());
    Vector beta;
    Eigen::LLT<Matrix> llt(n);
    const double rc = llt.info() == Eigen::Success ? llt.rcond() : 0.0;
    if (rc > 0.0 && 1.0 / rc <= ls_threshold) {
      beta = llt.solve(s);
    } else {
      ++fallbacks;
      Eigen::CompleteOrthogonalDecomposition<Matrix> cod(n);
      beta = cod.solve(s);
    }
    Matrix& own = tree_.is_leaf(t) ? x.frames[t] : x.transfer[t];
    own = Eigen::Map<const Matrix>(beta.data(), own.rows(), own.cols());
    return beta.dot(n * beta) - 2.0 * beta.dot(s);
  }

 private:
  void push_into_parent(HTTensor& x, int s, const Matrix& r) const {
    const int p = tree_.node(s).parent;
    const int l = tree_.node(p).left, rr = tree_.node(p).right;
    const Index kl = x.ranks[l], kr = x.ranks[rr];
    Matrix& bp = x.transfer[p];
    for (Index g = 0; g < bp.cols(); ++g) {
      Eigen::Map<Matrix> sl(bp.col(g).data(), kl, kr);
      if (s == l)
        sl = r * sl;
      else
        sl = sl * r.transpose();
    }
  }

  void subtree_caches(const HTTensor& x) {
    const auto& c = g_.star().c;
    const auto& b = g_.star().b;
    lc_.assign(tree_.size(), {});
    ub_.assign(tree_.size(), {});
    for (int s : tree_.post_order()) {
      lc_[s].resize(ncin_[s]);
      ub_[s].resize(nbin_[s]);
      std::vector<char> done_c(ncin_[s], 0), done_b(nbin_[s], 0);
      if (tree_.is_leaf(s)) {
        const int mode = tree_.node(s).modes[0];
        const Matrix& u = x.frames[s];
        for (Index k = 0; k < c.rank(); ++k) {
          const int id = cin_[s][k];
          if (done_c[id]) continue;
          done_c[id] = 1;
          lc_[s][id] = u.transpose() * g_.gram(mode, g_.c_slot(mode, k)) * u;
        }
        for (Index q = 0; q < b.rank(); ++q) {
          const int id = bin_[s][q];
          if (done_b[id]) continue;
          done_b[id] = 1;
          ub_[s][id] = u.transpose() * g_.rhs(mode, g_.b_slot(mode, q));
        }
        continue;
      }
      const int l = tree_.node(s).left, r = tree_.node(s).right;
      const Index kl = x.ranks[l], kr = x.ranks[r], ks = x.ranks[s];
      const Matrix& bs = x.transfer[s];
      for (Index k = 0; k < c.rank(); ++k) {
        const int id = cin_[s][k];
        if (done_c[id]) continue;
        done_c[id] = 1;
        const Matrix& ll = lc_[l][cin_[l][k]];
        const Matrix& lr = lc_[r][cin_[r][k]];
        Matrix y(kl * kr, ks);
        for (Index g = 0; g < ks; ++g) {
          Eigen::Map<Matrix> yg(y.col(g).data(), kl, kr);
          yg.noalias() = ll * slice(bs, kl, kr, g) * lr.transpose();
        }
        lc_[s][id] = bs.transpose() * y;
      }
      for (Index q = 0; q < b.rank(); ++q) {
        const int id = bin_[s][q];
        if (done_b[id]) continue;
        done_b[id] = 1;
        const Vector& ul = ub_[l][bin_[l][q]];
        const Vector& ur = ub_[r][bin_[r][q]];
        Vector outer(kl * kr);
        for (Index bb = 0; bb < kr; ++bb) outer.segment(bb * kl, kl) = ur[bb] * ul;
        ub_[s][id] = bs.transpose() * outer;
      }
    }
  }

  // complement Grams and vectors along the root → t path
  void complement_caches(const HTTensor& x, int t) {
    const auto& c = g_.star().c;
    const auto& b = g_.star().b;
    mc_.assign(tree_.size(), {});
    wb_.assign(tree_.size(), {});
    std::vector<int> path;
    for (int s = t; s != tree_.root(); s = tree_.node(s).parent) path.push_back(s);
    const int root = tree_.root();
    mc_[root].assign(ncout_[root], Matrix::Ones(1, 1));
    wb_[root].assign(nbout_[root], Vector::Ones(1));
    for (auto it = path.rbegin(); it != path.rend(); ++it) {
      const int s = *it, p = tree_.node(s).parent;
      const int l = tree_.node(p).left, r = tree_.node(p).right;
      const bool left = s == l;
      const int o = left ? r : l;
      const Index kl = x.ranks[l], kr = x.ranks[r], kp = x.ranks[p];
      const Matrix& bp = x.transfer[p];
      mc_[s].resize(ncout_[s]);
      wb_[s].resize(nbout_[s]);
      std::vector<char> done_c(ncout_[s], 0), done_b(nbout_[s], 0);
      for (Index k = 0; k < c.rank(); ++k) {
        const int id = cout_[s][k];
        if (done_c[id]) continue;
        done_c[id] = 1;
        const Matrix& lo = lc_[o][cin_[o][k]];
        const Matrix& mp = mc_[p][cout_[p][k]];
        const Matrix z = bp * mp.transpose();
        Matrix m = Matrix::Zero(left ? kl : kr, left ? kl : kr);
        for (Index g = 0; g < kp; ++g) {
          const auto xg = slice(bp, kl, kr, g);
          const auto zg = slice(z, kl, kr, g);
          if (left)
            m.noalias() += xg * lo * zg.transpose();
          else
            m.noalias() += xg.transpose() * lo * zg;
        }
        mc_[s][id] = std::move(m);
      }
      for (Index q = 0; q < b.rank(); ++q) {
        const int id = bout_[s][q];
        if (done_b[id]) continue;
        done_b[id] = 1;
        const Vector& uo = ub_[o][bin_[o][q]];
        const Vector& wp = wb_[p][bout_[p][q]];
        Vector w = Vector::Zero(left ? kl : kr);
        for (Index g = 0; g < kp; ++g) {
          const auto xg = slice(bp, kl, kr, g);
          if (left)
            w += wp[g] * (xg * uo);
          else
            w += wp[g] * (xg.transpose() * uo);
        }
        wb_[s][id] = std::move(w);
      }
    }
  }

  const StarGramCache& g_;
  const DimensionTree& tree_;
  // per node, per term: id of the distinct factor combination inside / outside the node
  std::vector<std::vector<int>> cin_, cout_, bin_, bout_;
  std::vector<int> ncin_, ncout_, nbin_, nbout_;
  std::vector<std::vector<Matrix>> lc_, mc_;
  std::vector<std::vector<Vector>> ub_, wb_;
};

HTTensor padded_start(const DimensionTree& tree, const Dims& sizes, const std::vector<Index>& ranks,
                      const HTTensor* init) {
  HTTensor x;
  x.tree = tree;
  x.ranks = ranks;
  x.frames.resize(tree.size());
  x.transfer.resize(tree.size());
  const bool warm = init && init->tree == tree;
  for (int t = 0; t < tree.size(); ++t) {
    if (tree.is_leaf(t)) {
      const Index rm = sizes[tree.node(t).modes[0]];
      x.frames[t] = Matrix::Zero(rm, ranks[t]);
      if (warm) {
        const Matrix& old = init->frames[t];
        const Index rr = std::min(rm, old.rows()), cc = std::min(ranks[t], old.cols());
        x.frames[t].topLeftCorner(rr, cc) = old.topLeftCorner(rr, cc);
      } else {
        x.frames[t](0, 0) = 1.0;
      }
      continue;
    }
    const int l = tree.node(t).left, r = tree.node(t).right;
    const Index kl = ranks[l], kr = ranks[r], kt = ranks[t];
    x.transfer[t] = Matrix::Zero(kl * kr, kt);
    if (warm) {
      const Index okl = init->ranks[l], okr = init->ranks[r];
      const Matrix& old = init->transfer[t];
      for (Index g = 0; g < std::min(kt, Index(old.cols())); ++g)
        for (Index bb = 0; bb < std::min(kr, okr); ++bb)
          for (Index a = 0; a < std::min(kl, okl); ++a) x.transfer[t](a + kl * bb, g) = old(a + okl * bb, g);
    } else {
      x.transfer[t](0, 0) = 1.0;
    }
  }
  return x;
}

}  // namespace

HTTensor project_ht(const StarGramCache& g, const ProjectionSpec& spec, Index r, const HTTensor* init,
                    ProjectionReport* report) {
  const Dims sizes = gram_sizes(g);
  const int d = int(sizes.size());
  const DimensionTree tree = spec.tree ? *spec.tree : DimensionTree::balanced(d);
  require(tree.order() == d, ErrorCode::TreeMismatch, "projection tree order differs from operator order");
  require(spec.als_sweeps >= 1, ErrorCode::InvalidArgument, "als_sweeps must be positive");
  ProjectionReport rep;
  if (d == 1) {
    const DenseTensor a = project_full(g, spec, &rep);
    if (report) *report = rep;
    return HTTensor::from_dense(a, tree);
  }
  std::vector<Index> ranks = ht_projection_ranks(tree, sizes, std::max<Index>(1, std::min(r, spec.max_core_rank)));
  if (!spec.core_ranks.empty()) {
    require(int(spec.core_ranks.size()) == tree.size(), ErrorCode::InvalidArgument, "core_ranks needs one rank per node");
    ranks = ht_projection_ranks(tree, sizes, std::numeric_limits<Index>::max());
    for (int t = 0; t < tree.size(); ++t) ranks[t] = std::min(ranks[t], std::max<Index>(1, spec.core_ranks[t]));
    make_consistent(tree, ranks);
  }
  rep.node_ranks = ranks;

  HTTensor x = padded_start(tree, sizes, ranks, init);
  HtAls als(g, tree);
  // full-rank leaves span their whole space; updating them changes nothing
  std::vector<int> order;
  for (int t = 0; t < tree.size(); ++t)
    if (!tree.is_leaf(t) || ranks[t] < sizes[tree.node(t).modes[0]]) order.push_back(t);
  std::vector<int> pass = order;
  pass.insert(pass.end(), order.rbegin() + 1, order.rend());
  for (int sweep = 0; sweep < spec.als_sweeps; ++sweep)
    for (int t : pass) rep.objective.push_back(als.update(x, t, spec.ls_fallback_threshold, rep.ls_fallbacks));
  if (report) *report = std::move(rep);
  return x;
}

// ---------------------------------------------------------------------------
// outer loops

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void validate(const StarInnerProduct& star, const KronSumOperator& p0, const GreedyConfig& cfg) {
  require(cfg.steps >= 1, ErrorCode::InvalidArgument, "number of greedy steps must be at least 1");
  require(star.c.order() >= 1, ErrorCode::InvalidArgument, "operator has no modes");
  if (p0.order() > 0) require(p0.dims() == star.a.dims(), ErrorCode::DimensionMismatch, "P_0 dimensions differ from A");
  cfg.constraints.validate(star.a.order());
}

CorrectionConfig step_config(const GreedyConfig& cfg, int r) {
  CorrectionConfig c = cfg.correction;
  c.seed = cfg.correction.seed + std::uint64_t(r);
  return c;
}

GreedyStep make_step(int r, const BasisOperator& p, const KronSumOperator& a, Clock::time_point t0) {
  GreedyStep s;
  s.r = r;
  const ErrorEstimate e = error_estimate(p, a);
  s.epsilon = e.epsilon;
  s.precision_limited = e.precision_limited;
  s.basis_sizes = p.basis_sizes();
  s.wall_ms = ms_since(t0);
  return s;
}

}  // namespace

GreedyResult alg_g(const StarInnerProduct& star, const KronSumOperator& p0, const GreedyConfig& config,
                   const StepCallback& on_step) {
  validate(star, p0, config);
  const Dims& dims = star.a.dims();
  GreedyResult res;
  KronSumOperator sum = p0.order() > 0 ? p0 : KronSumOperator(dims);
  BasisOperator current = sum.rank() > 0 ? BasisOperator::from_kron_sum(sum) : BasisOperator::zero(dims);
  for (int r = 1; r <= config.steps; ++r) {
    const auto t0 = Clock::now();
    RankOneCorrection w;
    try {
      w = correct_rank_one(star, current, config.constraints, step_config(config, r));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ZeroCorrection) throw;
      res.zero_correction = true;
      break;
    }
    sum.append(w.as_operator());
    current = BasisOperator::from_kron_sum(sum);
    GreedyStep step = make_step(r, current, star.a, t0);
    step.correction = w.report;
    if (on_step) on_step(step, current);
    res.steps.push_back(std::move(step));
    if (config.keep_iterates) res.iterates.push_back(current);
  }
  res.p = current;
  return res;
}

GreedyResult alg_p(const StarInnerProduct& star, const KronSumOperator& p0, const GreedyConfig& config,
                   const StepCallback& on_step) {
  validate(star, p0, config);
  const Dims& dims = star.a.dims();
  const int d = int(dims.size());
  const auto& spec = config.projection;
  GreedyResult res;
  OperatorBasis basis = OperatorBasis::empty(d);
  StarGramCache cache(star);
  std::optional<HTTensor> core;
  BasisOperator current = BasisOperator::zero(dims);

  auto project = [&](Index r, ProjectionReport& rep) {
    cache.sync(basis);
    BasisOperator p;
    p.dims = dims;
    p.basis = basis.q;
    if (spec.mode == ProjectionMode::Full) {
      p.coeff = project_full(cache, spec, &rep);
    } else {
      core = project_ht(cache, spec, r, core ? &*core : nullptr, &rep);
      p.coeff = *core;
    }
    return p;
  };

  if (p0.order() > 0 && p0.rank() > 0) {
    for (const auto& term : p0.terms()) {
      std::vector<Matrix> f;
      for (const auto& m : term.factors) f.push_back(m->to_dense());
      extend_basis(basis, f);
    }
    ProjectionReport rep;
    current = project(p0.rank(), rep);
  }

  for (int r = 1; r <= config.steps; ++r) {
    const auto t0 = Clock::now();
    RankOneCorrection w;
    try {
      w = correct_rank_one(star, current, config.constraints, step_config(config, r));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ZeroCorrection) throw;
      res.zero_correction = true;
      break;
    }
    const auto grew = extend_basis(basis, w.factors);
    const bool any = std::find(grew.begin(), grew.end(), true) != grew.end();
    ProjectionReport rep;
    if (any || current.is_zero()) current = project(r, rep);
    GreedyStep step = make_step(r, current, star.a, t0);
    step.basis_grew = any;
    step.correction = w.report;
    step.projection = std::move(rep);
    if (on_step) on_step(step, current);
    res.steps.push_back(std::move(step));
    if (config.keep_iterates) res.iterates.push_back(current);
  }
  res.p = current;
  res.basis = std::move(basis);
  return res;
}

GreedyResult run_greedy(const StarInnerProduct& star, const KronSumOperator& p0, const GreedyConfig& config,
                        const StepCallback& on_step) {
  return config.algorithm == GreedyAlgorithm::G ? alg_g(star, p0, config, on_step)
                                                : alg_p(star, p0, config, on_step);
}

}  // namespace kroninv
