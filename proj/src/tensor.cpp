#include "kroninv/tensor.hpp"

#include "kroninv/error.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace kroninv {

Index product(const Dims& dims) {
  constexpr Index big = std::numeric_limits<Index>::max();
  Index p = 1;
  for (Index n : dims) {
    if (n == 0) return 0;
    p = p > big / n ? big : p * n;
  }
  return p;
}

Index product_of(const Dims& dims, const std::vector<int>& modes) {
  Dims sub;
  for (int m : modes) sub.push_back(dims[m]);
  return product(sub);
}

// ---------------------------------------------------------------------------
// DenseTensor

DenseTensor::DenseTensor(Dims dims) : dims_(std::move(dims)), data_(Vector::Zero(product(dims_))) {}

DenseTensor::DenseTensor(Dims dims, Vector data) : dims_(std::move(dims)), data_(std::move(data)) {
  require(data_.size() == product(dims_), ErrorCode::DimensionMismatch, "dense tensor data length differs from prod(dims)");
}

namespace {

struct SplitStrides {
  std::vector<Index> stride;  // stride of each mode within its side (rows or cols)
  std::vector<char> in_rows;
  Index rows = 1;
  Index cols = 1;
};

SplitStrides split_strides(const Dims& dims, const std::vector<int>& modes) {
  const int d = int(dims.size());
  SplitStrides s;
  s.stride.assign(d, 0);
  s.in_rows.assign(d, 0);
  for (int m : modes) {
    require(m >= 0 && m < d, ErrorCode::InvalidArgument, "mode index out of range");
    s.in_rows[m] = 1;
  }
  for (int m = 0; m < d; ++m) {
    if (s.in_rows[m]) {
      s.stride[m] = s.rows;
      s.rows *= dims[m];
    } else {
      s.stride[m] = s.cols;
      s.cols *= dims[m];
    }
  }
  return s;
}

template <class Fn>
void for_each_split_index(const Dims& dims, const SplitStrides& s, Fn&& fn) {
  const int d = int(dims.size());
  const Index total = product(dims);
  std::vector<Index> idx(d, 0);
  Index r = 0, c = 0;
  for (Index lin = 0; lin < total; ++lin) {
    fn(lin, r, c);
    for (int m = 0; m < d; ++m) {
      ++idx[m];
      (s.in_rows[m] ? r : c) += s.stride[m];
      if (idx[m] < dims[m]) break;
      (s.in_rows[m] ? r : c) -= s.stride[m] * dims[m];
      idx[m] = 0;
    }
  }
}

}  // namespace

Matrix DenseTensor::unfold(const std::vector<int>& modes) const {
  const SplitStrides s = split_strides(dims_, modes);
  Matrix m(s.rows, s.cols);
  for_each_split_index(dims_, s, [&](Index lin, Index r, Index c) { m(r, c) = data_[lin]; });
  return m;
}

DenseTensor DenseTensor::fold(const Matrix& m, const std::vector<int>& modes, Dims dims) {
  const SplitStrides s = split_strides(dims, modes);
  require(m.rows() == s.rows && m.cols() == s.cols, ErrorCode::DimensionMismatch, "fold: matrix shape mismatch");
  DenseTensor out(dims);
  for_each_split_index(dims, s, [&](Index lin, Index r, Index c) { out.data_[lin] = m(r, c); });
  return out;
}

DenseTensor DenseTensor::mode_product(int mode, const Matrix& m) const {
  require(mode >= 0 && mode < order(), ErrorCode::InvalidArgument, "mode out of range");
  require(m.cols() == dims_[mode], ErrorCode::DimensionMismatch, "mode product: matrix columns differ from mode size");
  Index left = 1, right = 1;
  for (int k = 0; k < mode; ++k) left *= dims_[k];
  for (int k = mode + 1; k < order(); ++k) right *= dims_[k];
  Dims out_dims = dims_;
  out_dims[mode] = m.rows();
  DenseTensor out(out_dims);
  const Index n = dims_[mode];
  const Index p = m.rows();
  if (left == 1) {
    Eigen::Map<const Matrix> x(data_.data(), n, right);
    Eigen::Map<Matrix> y(out.data_.data(), p, right);
    y.noalias() = m * x;
    return out;
  }
  for (Index r = 0; r < right; ++r) {
    Eigen::Map<const Matrix> x(data_.data() + r * left * n, left, n);
    Eigen::Map<Matrix> y(out.data_.data() + r * left * p, left, p);
    y.noalias() = x * m.transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// CanonicalTensor / TuckerTensor

CanonicalTensor CanonicalTensor::zero(const Dims& dims) {
  CanonicalTensor x;
  for (Index n : dims) x.factors.emplace_back(n, 0);
  x.weights = Vector(0);
  return x;
}

CanonicalTensor CanonicalTensor::rank_one(std::vector<Vector> vectors, double weight) {
  CanonicalTensor x;
  for (auto& v : vectors) x.factors.emplace_back(Matrix(v));
  x.weights = Vector::Constant(1, weight);
  return x;
}

Dims CanonicalTensor::dims() const {
  Dims d;
  for (const auto& f : factors) d.push_back(f.rows());
  return d;
}

Dims TuckerTensor::dims() const {
  Dims d;
  for (const auto& f : factors) d.push_back(f.rows());
  return d;
}

// ---------------------------------------------------------------------------
// DimensionTree

int DimensionTree::add_node(std::vector<int> modes, int parent, const std::vector<std::vector<int>>* sets) {
  const int t = int(nodes_.size());
  nodes_.push_back(Node{modes, parent, -1, -1});
  if (modes.size() == 1) {
    leaf_of_mode_[modes[0]] = t;
    return t;
  }
  std::vector<int> left_modes, right_modes;
  if (sets == nullptr) {
    const std::size_t mid = modes.size() / 2;
    left_modes.assign(modes.begin(), modes.begin() + mid);
    right_modes.assign(modes.begin() + mid, modes.end());
  } else {
    // the maximal proper subsets of `modes` present in the list
    std::vector<const std::vector<int>*> candidates;
    for (const auto& s : *sets) {
      if (s.size() >= modes.size() || s.empty()) continue;
      if (!std::includes(modes.begin(), modes.end(), s.begin(), s.end())) continue;
      candidates.push_back(&s);
    }
    std::vector<const std::vector<int>*> maximal;
    for (auto* c : candidates) {
      bool dominated = false;
      for (auto* o : candidates)
        if (o != c && o->size() > c->size() && std::includes(o->begin(), o->end(), c->begin(), c->end())) dominated = true;
      if (!dominated && std::find_if(maximal.begin(), maximal.end(), [&](auto* m) { return *m == *c; }) == maximal.end())
        maximal.push_back(c);
    }
    if (maximal.empty() && modes.size() == 2) {
      left_modes = {modes[0]};
      right_modes = {modes[1]};
    } else {
      require(maximal.size() == 2, ErrorCode::InvalidArgument, "tree node must have exactly two successors");
      left_modes = *maximal[0];
      right_modes = *maximal[1];
      if (left_modes.front() > right_modes.front()) std::swap(left_modes, right_modes);
      require(left_modes.size() + right_modes.size() == modes.size() && left_modes.back() < right_modes.front(),
              ErrorCode::InvalidArgument, "successors must partition their parent into contiguous ranges");
    }
  }
  const int l = add_node(left_modes, t, sets);
  const int r = add_node(right_modes, t, sets);
  nodes_[t].left = l;
  nodes_[t].right = r;
  return t;
}

DimensionTree DimensionTree::balanced(int d) {
  require(d >= 1, ErrorCode::InvalidArgument, "tree needs at least one mode");
  DimensionTree tree;
  tree.order_ = d;
  tree.leaf_of_mode_.assign(d, -1);
  std::vector<int> all(d);
  std::iota(all.begin(), all.end(), 0);
  tree.add_node(all, -1, nullptr);
  return tree;
}

DimensionTree DimensionTree::from_mode_sets(int d, const std::vector<std::vector<int>>& sets) {
  std::vector<std::vector<int>> sorted = sets;
  for (auto& s : sorted) {
    std::sort(s.begin(), s.end());
    for (std::size_t i = 1; i < s.size(); ++i)
      require(s[i] == s[i - 1] + 1, ErrorCode::InvalidArgument, "tree nodes must hold contiguous mode ranges");
    for (int m : s) require(m >= 0 && m < d, ErrorCode::InvalidArgument, "tree mode out of range");
  }
  DimensionTree tree;
  tree.order_ = d;
  tree.leaf_of_mode_.assign(d, -1);
  std::vector<int> all(d);
  std::iota(all.begin(), all.end(), 0);
  tree.add_node(all, -1, &sorted);
  return tree;
}

int DimensionTree::sibling(int t) const {
  const int p = nodes_[t].parent;
  if (p < 0) return -1;
  return nodes_[p].left == t ? nodes_[p].right : nodes_[p].left;
}

std::vector<int> DimensionTree::interior_nodes() const {
  std::vector<int> out;
  for (int t = 0; t < size(); ++t)
    if (!is_leaf(t)) out.push_back(t);
  return out;
}

std::vector<int> DimensionTree::post_order() const {
  // pre-order storage: reversing it visits children before parents
  std::vector<int> out(size());
  std::iota(out.rbegin(), out.rend(), 0);
  return out;
}

bool DimensionTree::operator==(const DimensionTree& other) const {
  if (order_ != other.order_ || nodes_.size() != other.nodes_.size()) return false;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].modes != other.nodes_[i].modes || nodes_[i].left != other.nodes_[i].left) return false;
  return true;
}

// ---------------------------------------------------------------------------
// HTTensor

Dims HTTensor::dims() const {
  Dims d(order());
  for (int m = 0; m < order(); ++m) d[m] = frames[tree.leaf(m)].rows();
  return d;
}

HTTensor HTTensor::zero(const Dims& dims, DimensionTree tree) {
  require(int(dims.size()) == tree.order(), ErrorCode::DimensionMismatch, "tree order differs from tensor order");
  HTTensor x;
  x.ranks.assign(tree.size(), 1);
  x.frames.resize(tree.size());
  x.transfer.resize(tree.size());
  for (int t = 0; t < tree.size(); ++t) {
    if (tree.is_leaf(t)) {
      x.frames[t] = Matrix::Zero(dims[tree.node(t).modes[0]], 1);
      if (x.frames[t].rows() > 0) x.frames[t](0, 0) = 1.0;
    } else {
      x.transfer[t] = Matrix::Constant(1, 1, t == tree.root() ? 0.0 : 1.0);
    }
  }
  x.tree = std::move(tree);
  return x;
}

HTTensor HTTensor::from_canonical(const CanonicalTensor& c, DimensionTree tree) {
  require(c.order() == tree.order(), ErrorCode::DimensionMismatch, "tree order differs from tensor order");
  const Index r = c.rank();
  if (r == 0) return zero(c.dims(), std::move(tree));
  HTTensor x;
  x.ranks.assign(tree.size(), r);
  x.ranks[tree.root()] = 1;
  x.frames.resize(tree.size());
  x.transfer.resize(tree.size());
  for (int t = 0; t < tree.size(); ++t) {
    if (tree.is_leaf(t)) {
      x.frames[t] = c.factors[tree.node(t).modes[0]];
    } else if (t == tree.root()) {
      x.transfer[t] = Matrix::Zero(r * r, 1);
      for (Index s = 0; s < r; ++s) x.transfer[t](s + r * s, 0) = c.weights[s];
    } else {
      x.transfer[t] = Matrix::Zero(r * r, r);
      for (Index s = 0; s < r; ++s) x.transfer[t](s + r * s, s) = 1.0;
    }
  }
  x.tree = std::move(tree);
  return x;
}

Index HTTensor::parameter_count() const {
  Index n = 0;
  for (int t = 0; t < tree.size(); ++t) n += tree.is_leaf(t) ? frames[t].size() : transfer[t].size();
  return n;
}

Index TruncationSpec::rank_for(std::size_t i) const {
  if (!ranks.empty()) {
    require(i < ranks.size(), ErrorCode::InvalidArgument, "truncation spec has too few ranks");
    return ranks[i];
  }
  return max_rank > 0 ? max_rank : std::numeric_limits<Index>::max();
}

void TruncationSpec::validate() const {
  for (Index r : ranks) require(r > 0, ErrorCode::InvalidArgument, "truncation ranks must be positive");
  require(max_rank >= 0, ErrorCode::InvalidArgument, "max_rank must be nonnegative");
  require(refine_iterations >= 0, ErrorCode::InvalidArgument, "refine_iterations must be nonnegative");
  if (tolerance) require(*tolerance > 0.0 && *tolerance < 1.0, ErrorCode::InvalidArgument, "tolerance must lie in (0,1)");
}

}  // namespace kroninv
