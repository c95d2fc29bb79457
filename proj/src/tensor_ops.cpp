#include "kroninv/tensor_ops.hpp"

#include "kroninv/error.hpp"
#include "detail/overloaded.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kroninv {

namespace {

using detail::overloaded;

using TensorRef = std::variant<const DenseTensor*, const CanonicalTensor*, const TuckerTensor*, const HTTensor*>;

TensorRef ref_of(const AnyTensor& x) {
  return std::visit([](const auto& v) -> TensorRef { return &v; }, x);
}

struct ThinQr {
  Matrix q;
  Matrix r;
};

ThinQr thin_qr(const Matrix& m) {
  const Index k = std::min(m.rows(), m.cols());
  ThinQr out;
  if (k == 0) {
    out.q = Matrix(m.rows(), 0);
    out.r = Matrix(0, m.cols());
    return out;
  }
  Eigen::HouseholderQR<Matrix> qr(m);
  out.q = qr.householderQ() * Matrix::Identity(m.rows(), k);
  out.r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  return out;
}

// a ⊗ b with b's index varying fastest
Vector kron_vec(const Vector& a, const Vector& b) {
  Vector out(a.size() * b.size());
  for (Index j = 0; j < a.size(); ++j) out.segment(j * b.size(), b.size()) = a[j] * b;
  return out;
}

Dims dims_of_ref(TensorRef x) {
  return std::visit([](const auto* v) { return Dims(v->dims()); }, x);
}

void check_vectors(const Dims& dims, std::span<const Vector> v, int skip) {
  require(v.size() == dims.size(), ErrorCode::DimensionMismatch, "contraction needs one vector per mode");
  for (std::size_t m = 0; m < dims.size(); ++m)
    if (int(m) != skip)
      require(v[m].size() == dims[m], ErrorCode::DimensionMismatch, "contraction vector length differs from mode size");
}

// ---------------------------------------------------------------------------
// contractions

Vector dense_contract_except(const DenseTensor& x, std::span<const Vector> v, int mode) {
  const Dims& dims = x.dims();
  const int d = int(dims.size());
  Vector cur = x.data();
  Index rest = cur.size();
  for (int m = 0; m < mode; ++m) {
    rest /= dims[m];
    Eigen::Map<const Matrix> mat(cur.data(), dims[m], rest);
    cur = mat.transpose() * v[m];
  }
  for (int m = d - 1; m > mode; --m) {
    rest /= dims[m];
    Eigen::Map<const Matrix> mat(cur.data(), rest, dims[m]);
    cur = mat * v[m];
  }
  return cur;
}

double dense_full_contract(const DenseTensor& x, std::span<const Vector> v) {
  if (x.order() == 0) return x.data().size() ? x.data()[0] : 0.0;
  const Vector last = dense_contract_except(x, v, x.order() - 1);
  return last.dot(v[x.order() - 1]);
}

Vector canonical_products(const CanonicalTensor& x, std::span<const Vector> v, int skip) {
  Vector p = x.weights;
  for (int m = 0; m < x.order(); ++m)
    if (m != skip) p = p.cwiseProduct(x.factors[m].transpose() * v[m]);
  return p;
}

// y_c = Σ_{a,b} B[a,b,c] y_l[a] y_r[b]
Vector contract_transfer(const Matrix& b, const Vector& yl, const Vector& yr) {
  const Index kl = yl.size(), kr = yr.size(), kt = b.cols();
  Vector out(kt);
  for (Index c = 0; c < kt; ++c) {
    Eigen::Map<const Matrix> bc(b.col(c).data(), kl, kr);
    out[c] = yl.dot(bc * yr);
  }
  return out;
}

std::vector<Vector> ht_messages(const HTTensor& x, std::span<const Vector> v, const std::vector<char>& skip) {
  const auto& tree = x.tree;
  std::vector<Vector> msg(tree.size());
  for (int t : tree.post_order()) {
    if (skip[t]) continue;
    const auto& node = tree.node(t);
    if (tree.is_leaf(t))
      msg[t] = x.frames[t].transpose() * v[node.modes[0]];
    else
      msg[t] = contract_transfer(x.transfer[t], msg[node.left], msg[node.right]);
  }
  return msg;
}

Vector ht_contract_except(const HTTensor& x, std::span<const Vector> v, int mode) {
  const auto& tree = x.tree;
  std::vector<char> on_path(tree.size(), 0);
  int leaf = tree.leaf(mode);
  for (int t = leaf; t >= 0; t = tree.node(t).parent) on_path[t] = 1;
  const auto msg = ht_messages(x, v, on_path);
  Matrix m = x.frames[leaf];
  int child = leaf;
  for (int t = tree.node(leaf).parent; t >= 0; child = t, t = tree.node(t).parent) {
    const auto& node = tree.node(t);
    const Matrix& b = x.transfer[t];
    const Index kl = x.ranks[node.left], kr = x.ranks[node.right];
    const bool left_on_path = node.left == child;
    const Vector& other = msg[left_on_path ? node.right : node.left];
    Matrix z(left_on_path ? kl : kr, b.cols());
    for (Index c = 0; c < b.cols(); ++c) {
      Eigen::Map<const Matrix> bc(b.col(c).data(), kl, kr);
      if (left_on_path)
        z.col(c) = bc * other;
      else
        z.col(c) = bc.transpose() * other;
    }
    m = m * z;
  }
  return m.col(0);
}

double ht_full_contract(const HTTensor& x, std::span<const Vector> v) {
  const auto msg = ht_messages(x, v, std::vector<char>(x.tree.size(), 0));
  return msg[x.tree.root()][0];
}

double full_contract_ref(TensorRef x, std::span<const Vector> v) {
  check_vectors(dims_of_ref(x), v, -1);
  return std::visit(overloaded{
                        [&](const DenseTensor* t) { return dense_full_contract(*t, v); },
                        [&](const CanonicalTensor* t) { return canonical_products(*t, v, -1).sum(); },
                        [&](const TuckerTensor* t) {
                          std::vector<Vector> w(t->order());
                          for (int m = 0; m < t->order(); ++m) w[m] = t->factors[m].transpose() * v[m];
                          return dense_full_contract(t->core, w);
                        },
                        [&](const HTTensor* t) { return ht_full_contract(*t, v); },
                    },
                    x);
}

// ---------------------------------------------------------------------------
// densification

Matrix ht_frame(const HTTensor& x, int t) {
  const auto& tree = x.tree;
  if (tree.is_leaf(t)) return x.frames[t];
  const auto& node = tree.node(t);
  const Matrix ul = ht_frame(x, node.left);
  const Matrix ur = ht_frame(x, node.right);
  const Matrix& b = x.transfer[t];
  Matrix out(ul.rows() * ur.rows(), b.cols());
  for (Index c = 0; c < b.cols(); ++c) {
    Eigen::Map<const Matrix> bc(b.col(c).data(), ul.cols(), ur.cols());
    Eigen::Map<Matrix>(out.col(c).data(), ul.rows(), ur.rows()) = ul * bc * ur.transpose();
  }
  return out;
}

DenseTensor tucker_to_dense(const TuckerTensor& x) {
  DenseTensor out = x.core;
  for (int m = 0; m < x.order(); ++m) out = out.mode_product(m, x.factors[m]);
  return out;
}

DenseTensor to_dense_ref(TensorRef x, Index cap) {
  const Dims dims = dims_of_ref(x);
  require(product(dims) <= cap, ErrorCode::SizeExceeded, "densification exceeds the size cap");
  return std::visit(overloaded{
                        [&](const DenseTensor* t) { return *t; },
                        [&](const CanonicalTensor* t) {
                          DenseTensor out(dims);
                          for (Index s = 0; s < t->rank(); ++s) {
                            Vector v = Vector::Constant(1, t->weights[s]);
                            for (int m = 0; m < t->order(); ++m) v = kron_vec(t->factors[m].col(s), v);
                            out.data() += v;
                          }
                          return out;
                        },
                        [&](const TuckerTensor* t) { return tucker_to_dense(*t); },
                        [&](const HTTensor* t) {
                          return DenseTensor(dims, Vector(ht_frame(*t, t->tree.root()).col(0)));
                        },
                    },
                    x);
}

// ---------------------------------------------------------------------------
// Gram-weighted inner products; empty `g` means identity weights

Matrix left_gram(std::span<const Matrix> g, int m, const Matrix& x) {
  return g.empty() ? x : Matrix(g[m].transpose() * x);
}
Matrix right_gram(std::span<const Matrix> g, int m, const Matrix& y) {
  return g.empty() ? y : Matrix(g[m] * y);
}

HTTensor ht_with_frames(const HTTensor& x, std::span<const Matrix> g, bool transpose) {
  HTTensor out = x;
  if (g.empty()) return out;
  for (int m = 0; m < x.order(); ++m) {
    const int t = x.tree.leaf(m);
    out.frames[t] = transpose ? Matrix(g[m].transpose() * x.frames[t]) : Matrix(g[m] * x.frames[t]);
  }
  return out;
}

double ht_gram_inner_impl(const HTTensor& x, const HTTensor& y, std::span<const Matrix> g) {
  require(x.tree == y.tree, ErrorCode::TreeMismatch, "HT inner product needs a common dimension tree");
  const auto& tree = x.tree;
  std::vector<Matrix> msg(tree.size());
  for (int t : tree.post_order()) {
    const auto& node = tree.node(t);
    if (tree.is_leaf(t)) {
      msg[t] = left_gram(g, node.modes[0], x.frames[t]).transpose() * y.frames[t];
      continue;
    }
    const Matrix& bx = x.transfer[t];
    const Matrix& by = y.transfer[t];
    const Matrix& ml = msg[node.left];
    const Matrix& mr = msg[node.right];
    const Index kxl = ml.rows(), kxr = mr.rows(), kyl = ml.cols(), kyr = mr.cols();
    Matrix z(kxl * kxr, by.cols());
    for (Index c = 0; c < by.cols(); ++c) {
      Eigen::Map<const Matrix> byc(by.col(c).data(), kyl, kyr);
      Eigen::Map<Matrix>(z.col(c).data(), kxl, kxr) = ml * byc * mr.transpose();
    }
    msg[t] = bx.transpose() * z;
  }
  return msg[tree.root()](0, 0);
}

double gram_inner_ref(TensorRef x, TensorRef y, std::span<const Matrix> g) {
  // canonical operands reduce to full contractions
  if (auto* cx = std::get_if<const CanonicalTensor*>(&x)) {
    const CanonicalTensor& a = **cx;
    if (auto* cy = std::get_if<const CanonicalTensor*>(&y)) {
      const CanonicalTensor& b = **cy;
      if (a.rank() == 0 || b.rank() == 0) return 0.0;
      Matrix h = Matrix::Ones(a.rank(), b.rank());
      for (int m = 0; m < a.order(); ++m) h = h.cwiseProduct(left_gram(g, m, a.factors[m]).transpose() * b.factors[m]);
      return a.weights.dot(h * b.weights);
    }
    double s = 0.0;
    std::vector<Vector> v(a.order());
    for (Index k = 0; k < a.rank(); ++k) {
      for (int m = 0; m < a.order(); ++m) v[m] = left_gram(g, m, a.factors[m].col(k));
      s += a.weights[k] * full_contract_ref(y, v);
    }
    return s;
  }
  if (auto* cy = std::get_if<const CanonicalTensor*>(&y)) {
    const CanonicalTensor& b = **cy;
    double s = 0.0;
    std::vector<Vector> v(b.order());
    for (Index k = 0; k < b.rank(); ++k) {
      for (int m = 0; m < b.order(); ++m) v[m] = right_gram(g, m, b.factors[m].col(k));
      s += b.weights[k] * full_contract_ref(x, v);
    }
    return s;
  }
  // Tucker operands fold their factors into the Gram matrices
  if (auto* tx = std::get_if<const TuckerTensor*>(&x)) {
    const TuckerTensor& a = **tx;
    std::vector<Matrix> g2(a.order());
    for (int m = 0; m < a.order(); ++m) g2[m] = left_gram(g, m, a.factors[m]).transpose();
    return gram_inner_ref(&a.core, y, g2);
  }
  if (auto* ty = std::get_if<const TuckerTensor*>(&y)) {
    const TuckerTensor& b = **ty;
    std::vector<Matrix> g2(b.order());
    for (int m = 0; m < b.order(); ++m) g2[m] = right_gram(g, m, b.factors[m]);
    return gram_inner_ref(x, &b.core, g2);
  }
  auto* hx = std::get_if<const HTTensor*>(&x);
  auto* hy = std::get_if<const HTTensor*>(&y);
  if (hx && hy) return ht_gram_inner_impl(**hx, **hy, g);
  // dense × HT: move the weights onto the HT leaves, then densify the small result
  const DenseTensor* dx = hx ? nullptr : std::get<const DenseTensor*>(x);
  const DenseTensor* dy = hy ? nullptr : std::get<const DenseTensor*>(y);
  if (hx) {
    const HTTensor moved = ht_with_frames(**hx, g, true);
    const DenseTensor xd = to_dense_ref(&moved, kDensifyCap);
    return xd.data().dot(dy->data());
  }
  if (hy) {
    const HTTensor moved = ht_with_frames(**hy, g, false);
    const DenseTensor yd = to_dense_ref(&moved, kDensifyCap);
    return dx->data().dot(yd.data());
  }
  if (g.empty()) return dx->data().dot(dy->data());
  DenseTensor z = *dy;
  for (int m = 0; m < dy->order(); ++m) z = z.mode_product(m, g[m]);
  return dx->data().dot(z.data());
}

// ---------------------------------------------------------------------------
// HOSVD / HOOI on dense tensors

std::vector<Matrix> hosvd_factors(const DenseTensor& x, const Dims& ranks, double tol) {
  std::vector<Matrix> u(x.order());
  for (int m = 0; m < x.order(); ++m) u[m] = leading_left_singular_vectors(x.unfold({m}), ranks[m], tol);
  return u;
}

DenseTensor project_core(const DenseTensor& x, const std::vector<Matrix>& u) {
  DenseTensor c = x;
  for (int m = 0; m < x.order(); ++m) c = c.mode_product(m, u[m].transpose());
  return c;
}

double projection_error(const DenseTensor& x, const std::vector<Matrix>& u, const DenseTensor& core) {
  DenseTensor r = core;
  for (int m = 0; m < x.order(); ++m) r = r.mode_product(m, u[m]);
  return (x.data() - r.data()).norm();
}

// Reduces x to (core, orthonormal basis); basis empty for dense input.
struct Reduced {
  DenseTensor core;
  std::vector<Matrix> basis;
};

Reduced reduce(const AnyTensor& x) {
  if (auto* d = std::get_if<DenseTensor>(&x)) return {*d, {}};
  TuckerTensor t = to_tucker(x);
  return {std::move(t.core), std::move(t.factors)};
}

TuckerTensor lift(const Reduced& r, DenseTensor core, const std::vector<Matrix>& u) {
  TuckerTensor out;
  out.core = std::move(core);
  out.factors.resize(u.size());
  for (std::size_t m = 0; m < u.size(); ++m) out.factors[m] = r.basis.empty() ? u[m] : Matrix(r.basis[m] * u[m]);
  return out;
}

Dims clamp_ranks(const Dims& ranks, const Dims& dims) {
  require(ranks.size() == dims.size(), ErrorCode::DimensionMismatch, "one Tucker rank per mode required");
  Dims out(ranks.size());
  for (std::size_t m = 0; m < ranks.size(); ++m) {
    require(ranks[m] >= 1, ErrorCode::InvalidArgument, "Tucker ranks must be positive");
    out[m] = std::min(ranks[m], dims[m]);
  }
  return out;
}

Index feasible_rank(const DimensionTree& tree, const Dims& dims, int t) {
  std::vector<int> in = tree.node(t).modes, out;
  for (int m = 0; m < int(dims.size()); ++m)
    if (std::find(in.begin(), in.end(), m) == in.end()) out.push_back(m);
  return std::min(product_of(dims, in), product_of(dims, out));
}

}  // namespace

// ---------------------------------------------------------------------------

Dims dims_of(const AnyTensor& x) { return dims_of_ref(ref_of(x)); }

int order_of(const AnyTensor& x) { return int(dims_of(x).size()); }

double gram_inner(const AnyTensor& x, const AnyTensor& y, std::span<const Matrix> grams) {
  const Dims dx = dims_of(x), dy = dims_of(y);
  require(dx.size() == dy.size(), ErrorCode::DimensionMismatch, "tensor orders differ");
  if (grams.empty()) {
    require(dx == dy, ErrorCode::DimensionMismatch, "tensor dimensions differ");
  } else {
    require(grams.size() == dx.size(), ErrorCode::DimensionMismatch, "one Gram matrix per mode required");
    for (std::size_t m = 0; m < dx.size(); ++m)
      require(grams[m].rows() == dx[m] && grams[m].cols() == dy[m], ErrorCode::DimensionMismatch,
              "Gram matrix shape differs from mode sizes");
  }
  return gram_inner_ref(ref_of(x), ref_of(y), grams);
}

double inner(const AnyTensor& x, const AnyTensor& y) { return gram_inner(x, y, {}); }

double norm(const AnyTensor& x) {
  if (auto* h = std::get_if<HTTensor>(&x)) return ht_orthogonalize(*h).transfer[h->tree.root()].norm();
  if (auto* t = std::get_if<TuckerTensor>(&x)) return tucker_orthonormalize(*t).core.norm();
  if (auto* d = std::get_if<DenseTensor>(&x)) return d->norm();
  return std::sqrt(std::max(inner(x, x), 0.0));
}

double full_contract(const AnyTensor& x, std::span<const Vector> vectors) {
  return full_contract_ref(ref_of(x), vectors);
}

Vector contract_except(const AnyTensor& x, std::span<const Vector> v, int mode) {
  const Dims dims = dims_of(x);
  require(mode >= 0 && mode < int(dims.size()), ErrorCode::InvalidArgument, "mode out of range");
  check_vectors(dims, v, mode);
  return std::visit(overloaded{
                        [&](const DenseTensor& t) { return dense_contract_except(t, v, mode); },
                        [&](const CanonicalTensor& t) {
                          return Vector(t.factors[mode] * canonical_products(t, v, mode));
                        },
                        [&](const TuckerTensor& t) {
                          std::vector<Vector> w(t.order());
                          for (int m = 0; m < t.order(); ++m)
                            if (m != mode) w[m] = t.factors[m].transpose() * v[m];
                          return Vector(t.factors[mode] * dense_contract_except(t.core, w, mode));
                        },
                        [&](const HTTensor& t) { return ht_contract_except(t, v, mode); },
                    },
                    x);
}

DenseTensor to_dense(const AnyTensor& x, Index cap) { return to_dense_ref(ref_of(x), cap); }

Matrix leading_left_singular_vectors(const Matrix& m, Index rank, double tol) {
  const Index k = std::min(m.rows(), m.cols());
  if (k == 0 || m.isZero(0.0)) {
    Matrix e = Matrix::Zero(m.rows(), 1);
    if (m.rows() > 0) e(0, 0) = 1.0;
    return e;
  }
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU);
  const Vector& s = svd.singularValues();
  const double floor = std::max(tol, kSingularFloor) * s[0];
  Index keep = 0;
  while (keep < std::min(rank, k) && s[keep] > floor) ++keep;
  return svd.matrixU().leftCols(std::max<Index>(keep, 1));
}

Index t_matricization_rank(const DenseTensor& x, const std::vector<int>& modes) {
  require(!modes.empty() && int(modes.size()) < x.order(), ErrorCode::InvalidArgument,
          "t must be a nonempty proper subset of the modes");
  std::vector<int> sorted = modes;
  std::sort(sorted.begin(), sorted.end());
  require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), ErrorCode::InvalidArgument,
          "duplicate mode in t");
  const Matrix m = x.unfold(sorted);
  const Vector s = Eigen::BDCSVD<Matrix>(m).singularValues();
  if (s.size() == 0 || s[0] == 0.0) return 0;
  return (s.array() > 1e-10 * s[0]).count();
}

TuckerTensor hosvd(const AnyTensor& x, const Dims& ranks) {
  const Reduced r = reduce(x);
  const Dims target = clamp_ranks(ranks, r.core.dims());
  for (std::size_t m = 0; m < ranks.size(); ++m)
    require(ranks[m] <= dims_of(x)[m], ErrorCode::InvalidArgument, "Tucker rank exceeds mode size");
  const auto u = hosvd_factors(r.core, target, 0.0);
  return lift(r, project_core(r.core, u), u);
}

HooiResult hooi_refine(const AnyTensor& x, const Dims& ranks, int sweeps, const std::optional<TuckerTensor>& init) {
  require(sweeps >= 0, ErrorCode::InvalidArgument, "sweeps must be nonnegative");
  const Reduced r = reduce(x);
  const Dims target = clamp_ranks(ranks, r.core.dims());
  std::vector<Matrix> u;
  if (init) {
    require(init->dims() == dims_of(x), ErrorCode::DimensionMismatch, "initial guess dimensions differ");
    u.resize(init->order());
    for (int m = 0; m < init->order(); ++m) {
      Matrix w = r.basis.empty() ? init->factors[m] : Matrix(r.basis[m].transpose() * init->factors[m]);
      u[m] = thin_qr(w).q;
    }
  } else {
    u = hosvd_factors(r.core, target, 0.0);
  }
  HooiResult out;
  DenseTensor core = project_core(r.core, u);
  double err = projection_error(r.core, u, core);
  out.errors.push_back(err);
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (int m = 0; m < r.core.order(); ++m) {
      DenseTensor y = r.core;
      for (int k = 0; k < r.core.order(); ++k)
        if (k != m) y = y.mode_product(k, u[k].transpose());
      u[m] = leading_left_singular_vectors(y.unfold({m}), target[m]);
    }
    core = project_core(r.core, u);
    const double next = projection_error(r.core, u, core);
    out.errors.push_back(next);
    const bool stalled = err - next < 1e-12 * err;
    err = next;
    if (stalled) break;
  }
  out.tucker = lift(r, std::move(core), u);
  return out;
}

TuckerTensor tucker_orthonormalize(const TuckerTensor& x) {
  TuckerTensor out;
  out.core = x.core;
  out.factors.resize(x.order());
  for (int m = 0; m < x.order(); ++m) {
    ThinQr qr = thin_qr(x.factors[m]);
    out.factors[m] = std::move(qr.q);
    out.core = out.core.mode_product(m, qr.r);
  }
  return out;
}

namespace {

// Adds s·x into out with x's entries shifted by `offset` along every mode.
void embed(const DenseTensor& x, const Dims& offset, double s, DenseTensor& out) {
  const Dims& dims = x.dims();
  const Dims& od = out.dims();
  const int d = int(dims.size());
  std::vector<Index> stride(d);
  Index st = 1;
  for (int m = 0; m < d; ++m) {
    stride[m] = st;
    st *= od[m];
  }
  Index base = 0;
  for (int m = 0; m < d; ++m) base += offset[m] * stride[m];
  std::vector<Index> idx(d, 0);
  Index pos = base;
  for (Index lin = 0; lin < x.size(); ++lin) {
    out.data()[pos] += s * x.data()[lin];
    for (int m = 0; m < d; ++m) {
      ++idx[m];
      pos += stride[m];
      if (idx[m] < dims[m]) break;
      pos -= stride[m] * dims[m];
      idx[m] = 0;
    }
  }
}

}  // namespace

TuckerTensor tucker_add(const TuckerTensor& x, const TuckerTensor& y, double alpha, double beta) {
  require(x.dims() == y.dims(), ErrorCode::DimensionMismatch, "Tucker sum: dimensions differ");
  const int d = x.order();
  TuckerTensor sum;
  Dims kx = x.ranks(), ky = y.ranks(), k(d);
  sum.factors.resize(d);
  for (int m = 0; m < d; ++m) {
    k[m] = kx[m] + ky[m];
    sum.factors[m].resize(x.factors[m].rows(), k[m]);
    sum.factors[m] << x.factors[m], y.factors[m];
  }
  sum.core = DenseTensor(k);
  embed(x.core, Dims(d, 0), alpha, sum.core);
  embed(y.core, kx, beta, sum.core);
  return tucker_orthonormalize(sum);
}

TuckerTensor tucker_scale(TuckerTensor x, double s) {
  x.core.data() *= s;
  return x;
}

TuckerTensor tucker_from_canonical(const CanonicalTensor& x) {
  const int d = x.order();
  const Index r = x.rank();
  TuckerTensor t;
  t.factors = x.factors;
  if (r == 0) {
    t.core = DenseTensor(Dims(d, 1));
    for (int m = 0; m < d; ++m) t.factors[m] = Matrix::Zero(x.factors[m].rows(), 1);
  } else {
    require(std::pow(double(r), d) <= double(kDensifyCap), ErrorCode::SizeExceeded, "canonical rank too large for a Tucker core");
    t.core = DenseTensor(Dims(d, r));
    Index diag_stride = 0, st = 1;
    for (int m = 0; m < d; ++m, st *= r) diag_stride += st;
    for (Index s = 0; s < r; ++s) t.core.data()[s * diag_stride] = x.weights[s];
  }
  return tucker_orthonormalize(t);
}

TuckerTensor truncate(const TuckerTensor& x, const TruncationSpec& spec) {
  spec.validate();
  const TuckerTensor orth = tucker_orthonormalize(x);
  const Dims kdims = orth.core.dims();
  Dims target(kdims.size());
  for (std::size_t m = 0; m < kdims.size(); ++m) target[m] = std::min(spec.rank_for(m), kdims[m]);
  const double tol = spec.tolerance.value_or(0.0);
  std::vector<Matrix> u = hosvd_factors(orth.core, target, tol);
  if (spec.refine_iterations > 0) {
    for (std::size_t m = 0; m < u.size(); ++m) target[m] = u[m].cols();
    TuckerTensor init;
    init.factors = u;
    init.core = project_core(orth.core, u);
    u = hooi_refine(orth.core, target, spec.refine_iterations, init).tucker.factors;
  }
  Reduced r{orth.core, orth.factors};
  return lift(r, project_core(orth.core, u), u);
}

// ---------------------------------------------------------------------------
// HT

HTTensor hsvd(const DenseTensor& x, const DimensionTree& tree, const std::vector<Index>& ranks) {
  require(tree.order() == x.order(), ErrorCode::DimensionMismatch, "tree order differs from tensor order");
  require(int(ranks.size()) == tree.size(), ErrorCode::InvalidArgument, "one rank per tree node required");
  const Dims& dims = x.dims();
  HTTensor out;
  out.tree = tree;
  out.ranks.assign(tree.size(), 1);
  out.frames.resize(tree.size());
  out.transfer.resize(tree.size());
  std::vector<Matrix> u(tree.size());
  for (int t = 1; t < tree.size(); ++t) {
    require(ranks[t] >= 1 && ranks[t] <= feasible_rank(tree, dims, t), ErrorCode::InfeasibleRanks,
            "HT rank exceeds the matricization size");
    u[t] = leading_left_singular_vectors(x.unfold(tree.node(t).modes), ranks[t]);
    out.ranks[t] = u[t].cols();
  }
  for (int t = 0; t < tree.size(); ++t) {
    if (tree.is_leaf(t)) {
      out.frames[t] = u[t];
      continue;
    }
    const auto& node = tree.node(t);
    const Matrix& ul = u[node.left];
    const Matrix& ur = u[node.right];
    const Index nl = ul.rows(), nr = ur.rows();
    if (t == tree.root()) {
      Eigen::Map<const Matrix> xm(x.data().data(), nl, nr);
      Matrix b = ul.transpose() * xm * ur;
      out.transfer[t] = Eigen::Map<Matrix>(b.data(), b.size(), 1);
      continue;
    }
    Matrix b(ul.cols() * ur.cols(), u[t].cols());
    for (Index c = 0; c < u[t].cols(); ++c) {
      Eigen::Map<const Matrix> xc(u[t].col(c).data(), nl, nr);
      Eigen::Map<Matrix>(b.col(c).data(), ul.cols(), ur.cols()) = ul.transpose() * xc * ur;
    }
    out.transfer[t] = std::move(b);
  }
  return out;
}

HTTensor HTTensor::from_dense(const DenseTensor& x, DimensionTree tree) {
  std::vector<Index> ranks(tree.size(), 1);
  for (int t = 1; t < tree.size(); ++t) ranks[t] = feasible_rank(tree, x.dims(), t);
  return hsvd(x, tree, ranks);
}

HTTensor ht_orthogonalize(const HTTensor& x) {
  const auto& tree = x.tree;
  HTTensor out = x;
  std::vector<Matrix> r(tree.size());
  for (int t : tree.post_order()) {
    if (tree.is_leaf(t)) {
      ThinQr qr = thin_qr(x.frames[t]);
      out.frames[t] = std::move(qr.q);
      r[t] = std::move(qr.r);
      out.ranks[t] = out.frames[t].cols();
      continue;
    }
    const auto& node = tree.node(t);
    const Matrix& rl = r[node.left];
    const Matrix& rr = r[node.right];
    const Matrix& b = x.transfer[t];
    Matrix nb(rl.rows() * rr.rows(), b.cols());
    for (Index c = 0; c < b.cols(); ++c) {
      Eigen::Map<const Matrix> bc(b.col(c).data(), rl.cols(), rr.cols());
      Eigen::Map<Matrix>(nb.col(c).data(), rl.rows(), rr.rows()) = rl * bc * rr.transpose();
    }
    if (t == tree.root()) {
      out.transfer[t] = std::move(nb);
    } else {
      ThinQr qr = thin_qr(nb);
      out.transfer[t] = std::move(qr.q);
      r[t] = std::move(qr.r);
      out.ranks[t] = out.transfer[t].cols();
    }
  }
  return out;
}

double ht_gram_inner(const HTTensor& x, const HTTensor& y, std::span<const Matrix> leaf_grams) {
  require(x.tree == y.tree, ErrorCode::TreeMismatch, "HT inner product needs a common dimension tree");
  if (!leaf_grams.empty()) {
    require(int(leaf_grams.size()) == x.order(), ErrorCode::DimensionMismatch, "one Gram matrix per mode required");
    const Dims dx = x.dims(), dy = y.dims();
    for (int m = 0; m < x.order(); ++m)
      require(leaf_grams[m].rows() == dx[m] && leaf_grams[m].cols() == dy[m], ErrorCode::DimensionMismatch,
              "Gram matrix shape differs from mode sizes");
  } else {
    require(x.dims() == y.dims(), ErrorCode::DimensionMismatch, "tensor dimensions differ");
  }
  return ht_gram_inner_impl(x, y, leaf_grams);
}

HTTensor truncate(const HTTensor& x, const TruncationSpec& spec) {
  spec.validate();
  const auto& tree = x.tree;
  const HTTensor o = ht_orthogonalize(x);
  // reduced Gramians, top-down
  std::vector<Matrix> g(tree.size());
  g[tree.root()] = Matrix::Ones(1, 1);
  for (int t = 0; t < tree.size(); ++t) {
    if (tree.is_leaf(t)) continue;
    const auto& node = tree.node(t);
    const Index kl = o.ranks[node.left], kr = o.ranks[node.right], kt = o.transfer[t].cols();
    const Matrix y = o.transfer[t] * g[t];
    Eigen::Map<const Matrix> bm(o.transfer[t].data(), kl, kr * kt);
    Eigen::Map<const Matrix> ym(y.data(), kl, kr * kt);
    g[node.left] = bm * ym.transpose();
    Matrix gr = Matrix::Zero(kr, kr);
    for (Index c = 0; c < kt; ++c) {
      Eigen::Map<const Matrix> bc(o.transfer[t].col(c).data(), kl, kr);
      Eigen::Map<const Matrix> yc(y.col(c).data(), kl, kr);
      gr.noalias() += bc.transpose() * yc;
    }
    g[node.right] = gr;
  }
  const double tol = std::max(spec.tolerance.value_or(0.0), kSingularFloor);
  std::vector<Matrix> s(tree.size());
  for (int t = 1; t < tree.size(); ++t) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (g[t] + g[t].transpose()));
    const Index k = g[t].rows();
    const Vector lam = eig.eigenvalues().reverse();
    const Matrix vec = eig.eigenvectors().rowwise().reverse();
    const double smax = std::sqrt(std::max(lam[0], 0.0));
    Index keep = 0;
    const Index cap = std::min(spec.rank_for(t), k);
    while (keep < cap && std::sqrt(std::max(lam[keep], 0.0)) > tol * smax) ++keep;
    s[t] = vec.leftCols(std::max<Index>(keep, 1));
  }
  HTTensor out = o;
  for (int t = 0; t < tree.size(); ++t) {
    if (tree.is_leaf(t)) {
      out.frames[t] = o.frames[t] * s[t];
      out.ranks[t] = s[t].cols();
      continue;
    }
    const auto& node = tree.node(t);
    const Matrix& sl = s[node.left];
    const Matrix& sr = s[node.right];
    const Matrix& b = o.transfer[t];
    Matrix nb(sl.cols() * sr.cols(), b.cols());
    for (Index c = 0; c < b.cols(); ++c) {
      Eigen::Map<const Matrix> bc(b.col(c).data(), sl.rows(), sr.rows());
      Eigen::Map<Matrix>(nb.col(c).data(), sl.cols(), sr.cols()) = sl.transpose() * bc * sr;
    }
    if (t != tree.root()) {
      nb = nb * s[t];
      out.ranks[t] = s[t].cols();
    }
    out.transfer[t] = std::move(nb);
  }
  return out;
}

HTTensor ht_add(const HTTensor& x, const HTTensor& y, double alpha, double beta) {
  require(x.tree == y.tree, ErrorCode::TreeMismatch, "HT sum needs a common dimension tree");
  require(x.dims() == y.dims(), ErrorCode::DimensionMismatch, "HT sum: dimensions differ");
  const auto& tree = x.tree;
  HTTensor out;
  out.tree = tree;
  out.ranks.assign(tree.size(), 1);
  out.frames.resize(tree.size());
  out.transfer.resize(tree.size());
  for (int t = 0; t < tree.size(); ++t) {
    if (tree.is_leaf(t)) {
      out.frames[t].resize(x.frames[t].rows(), x.ranks[t] + y.ranks[t]);
      out.frames[t] << x.frames[t], y.frames[t];
      out.ranks[t] = x.ranks[t] + y.ranks[t];
      continue;
    }
    const auto& node = tree.node(t);
    const Index xl = x.ranks[node.left], xr = x.ranks[node.right];
    const Index yl = y.ranks[node.left], yr = y.ranks[node.right];
    const Index kl = xl + yl, kr = xr + yr;
    const bool root = t == tree.root();
    const Index xt = x.transfer[t].cols(), yt = y.transfer[t].cols();
    const Index kt = root ? 1 : xt + yt;
    Matrix b = Matrix::Zero(kl * kr, kt);
    for (Index c = 0; c < xt; ++c) {
      Eigen::Map<const Matrix> bc(x.transfer[t].col(c).data(), xl, xr);
      Eigen::Map<Matrix>(b.col(c).data(), kl, kr).topLeftCorner(xl, xr) += (root ? alpha : 1.0) * bc;
    }
    for (Index c = 0; c < yt; ++c) {
      Eigen::Map<const Matrix> bc(y.transfer[t].col(c).data(), yl, yr);
      Eigen::Map<Matrix>(b.col(root ? 0 : xt + c).data(), kl, kr).bottomRightCorner(yl, yr) += (root ? beta : 1.0) * bc;
    }
    out.transfer[t] = std::move(b);
    out.ranks[t] = kt;
  }
  return out;
}

HTTensor ht_scale(HTTensor x, double s) {
  x.transfer[x.tree.root()] *= s;
  return x;
}

HTTensor to_ht(const AnyTensor& x, const DimensionTree& tree) {
  return std::visit(overloaded{
                        [&](const DenseTensor& t) { return HTTensor::from_dense(t, tree); },
                        [&](const CanonicalTensor& t) { return HTTensor::from_canonical(t, tree); },
                        [&](const TuckerTensor& t) {
                          HTTensor h = HTTensor::from_dense(t.core, tree);
                          for (int m = 0; m < t.order(); ++m) {
                            const int leaf = tree.leaf(m);
                            h.frames[leaf] = t.factors[m] * h.frames[leaf];
                          }
                          return h;
                        },
                        [&](const HTTensor& t) {
                          require(t.tree == tree, ErrorCode::TreeMismatch, "HT tensor lives on a different tree");
                          return t;
                        },
                    },
                    x);
}

TuckerTensor to_tucker(const AnyTensor& x) {
  return std::visit(overloaded{
                        [&](const DenseTensor& t) {
                          TuckerTensor out;
                          out.core = t;
                          for (Index n : t.dims()) out.factors.push_back(Matrix::Identity(n, n));
                          return out;
                        },
                        [&](const CanonicalTensor& t) { return tucker_from_canonical(t); },
                        [&](const TuckerTensor& t) { return tucker_orthonormalize(t); },
                        [&](const HTTensor& t) {
                          HTTensor inner_ht = t;
                          TuckerTensor out;
                          out.factors.resize(t.order());
                          for (int m = 0; m < t.order(); ++m) {
                            const int leaf = t.tree.leaf(m);
                            ThinQr qr = thin_qr(t.frames[leaf]);
                            out.factors[m] = std::move(qr.q);
                            inner_ht.frames[leaf] = std::move(qr.r);
                          }
                          out.core = to_dense(inner_ht);
                          return out;
                        },
                    },
                    x);
}

}  // namespace kroninv
