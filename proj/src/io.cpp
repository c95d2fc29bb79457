#include "kroninv/io.hpp"

#include "kroninv/error.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace kroninv::io {

namespace {

static_assert(sizeof(double) == 8);

void to_little_endian(unsigned char* bytes, std::size_t n) {
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < n; i += 8) std::reverse(bytes + i, bytes + i + 8);
}

[[noreturn]] void fail(const std::string& what) { throw Error(ErrorCode::Serialization, what); }

const Json& field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) fail(std::string("missing field '") + key + "'");
  return j.at(key);
}

template <class T>
T get(const Json& j, const char* key) {
  try {
    return field(j, key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("field '") + key + "': " + e.what());
  }
}

Json dims_json(const Dims& d) { return Json(std::vector<long long>(d.begin(), d.end())); }

Dims dims_from(const Json& j, const char* key) {
  const auto v = get<std::vector<long long>>(j, key);
  Dims d(v.begin(), v.end());
  for (Index n : d)
    if (n < 0) fail(std::string("negative entry in '") + key + "'");
  return d;
}

Vector vector_from(const Json& j, const char* key, Index expected) {
  const auto v = decode_doubles(get<std::string>(j, key));
  if (Index(v.size()) != expected)
    fail(std::string("field '") + key + "' holds " + std::to_string(v.size()) + " values, expected " +
         std::to_string(expected));
  return Eigen::Map<const Vector>(v.data(), Index(v.size()));
}

// Factors shared by pointer are written once.
struct FactorTable {
  Json list = Json::array();
  std::map<const Factor*, int> index;

  int add(const FactorPtr& f) {
    auto [it, fresh] = index.emplace(f.get(), int(list.size()));
    if (fresh) list.push_back(to_json(*f));
    return it->second;
  }
};

std::vector<FactorPtr> read_factors(const Json& j) {
  std::vector<FactorPtr> out;
  for (const auto& f : field(j, "factors")) out.push_back(factor_from_json(f));
  return out;
}

const FactorPtr& factor_at(const std::vector<FactorPtr>& table, const Json& ref) {
  if (!ref.is_number_integer()) fail("factor reference must be an integer");
  const long long i = ref.get<long long>();
  if (i < 0 || i >= (long long)table.size()) fail("factor reference " + std::to_string(i) + " out of range");
  return table[std::size_t(i)];
}

}  // namespace

std::string encode_doubles(const double* data, std::size_t n) {
  std::vector<unsigned char> bytes(n * 8);
  if (n) std::memcpy(bytes.data(), data, n * 8);
  to_little_endian(bytes.data(), bytes.size());
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int len = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), int(bytes.size()));
  out.resize(std::size_t(len));
  return out;
}

std::vector<double> decode_doubles(const std::string& text) {
  if (text.size() % 4 != 0) fail("base64 payload length is not a multiple of 4");
  std::vector<unsigned char> bytes(3 * text.size() / 4);
  const int len = EVP_DecodeBlock(bytes.data(), reinterpret_cast<const unsigned char*>(text.data()), int(text.size()));
  if (len < 0) fail("invalid base64 payload");
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding
  std::size_t n = std::size_t(len);
  if (!text.empty() && text.back() == '=') --n;
  if (text.size() > 1 && text[text.size() - 2] == '=') --n;
  if (n % 8 != 0) fail("base64 payload is not a whole number of doubles");
  to_little_endian(bytes.data(), n);
  std::vector<double> out(n / 8);
  if (n) std::memcpy(out.data(), bytes.data(), n);
  return out;
}

Json to_json(const Matrix& m) {
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", encode_doubles(m.data(), std::size_t(m.size()))}};
}

Matrix matrix_from_json(const Json& j) {
  const auto rows = get<long long>(j, "rows"), cols = get<long long>(j, "cols");
  if (rows < 0 || cols < 0) fail("negative matrix size");
  const Vector v = vector_from(j, "data", rows * cols);
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

Json to_json(const Factor& f) {
  if (!f.is_sparse()) {
    Json j = to_json(f.dense());
    j["format"] = "dense";
    return j;
  }
  SparseMatrix s = f.sparse();
  s.makeCompressed();
  std::vector<long long> ptr(s.outerIndexPtr(), s.outerIndexPtr() + s.outerSize() + 1);
  std::vector<long long> col(s.innerIndexPtr(), s.innerIndexPtr() + s.nonZeros());
  return Json{{"format", "csr"},
              {"rows", s.rows()},
              {"cols", s.cols()},
              {"row_ptr", ptr},
              {"col", col},
              {"values", encode_doubles(s.valuePtr(), std::size_t(s.nonZeros()))}};
}

FactorPtr factor_from_json(const Json& j) {
  const auto format = get<std::string>(j, "format");
  if (format == "dense") return make_factor(matrix_from_json(j));
  if (format != "csr") fail("unknown factor format '" + format + "'");
  const auto rows = get<long long>(j, "rows"), cols = get<long long>(j, "cols");
  const auto ptr = get<std::vector<long long>>(j, "row_ptr");
  const auto col = get<std::vector<long long>>(j, "col");
  if (rows < 0 || cols < 0 || (long long)ptr.size() != rows + 1 || ptr.front() != 0 ||
      ptr.back() != (long long)col.size())
    fail("inconsistent CSR structure");
  const Vector val = vector_from(j, "values", Index(col.size()));
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(col.size());
  for (long long r = 0; r < rows; ++r) {
    if (ptr[r + 1] < ptr[r]) fail("CSR row pointers must be nondecreasing");
    for (long long k = ptr[r]; k < ptr[r + 1]; ++k) {
      if (col[k] < 0 || col[k] >= cols) fail("CSR column index out of range");
      t.emplace_back(Index(r), Index(col[k]), val[k]);
    }
  }
  SparseMatrix s(rows, cols);
  s.setFromTriplets(t.begin(), t.end());
  return make_factor(std::move(s));
}

Json to_json(const DimensionTree& tree) {
  Json nodes = Json::array();
  for (int t = 0; t < tree.size(); ++t) nodes.push_back(tree.node(t).modes);
  return Json{{"order", tree.order()}, {"nodes", nodes}};
}

DimensionTree tree_from_json(const Json& j) {
  const int d = get<int>(j, "order");
  const auto sets = get<std::vector<std::vector<int>>>(j, "nodes");
  DimensionTree tree;
  try {
    tree = DimensionTree::from_mode_sets(d, sets);
  } catch (const Error& e) {
    fail(std::string("invalid tree: ") + e.what());
  }
  if (tree.size() != int(sets.size())) fail("tree node list is not a full binary tree over the modes");
  for (int t = 0; t < tree.size(); ++t)
    if (tree.node(t).modes != sets[std::size_t(t)]) fail("tree nodes must be listed in pre-order");
  return tree;
}

Json to_json(const AnyTensor& x) {
  return std::visit(
      [](const auto& v) -> Json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, DenseTensor>) {
          return Json{{"kind", "dense"}, {"dims", dims_json(v.dims())}, {"data", encode_doubles(v.data().data(), std::size_t(v.size()))}};
        } else if constexpr (std::is_same_v<T, CanonicalTensor>) {
          Json f = Json::array();
          for (const auto& m : v.factors) f.push_back(to_json(m));
          return Json{{"kind", "canonical"},
                      {"dims", dims_json(v.dims())},
                      {"weights", encode_doubles(v.weights.data(), std::size_t(v.weights.size()))},
                      {"factors", f}};
        } else if constexpr (std::is_same_v<T, TuckerTensor>) {
          Json f = Json::array();
          for (const auto& m : v.factors) f.push_back(to_json(m));
          return Json{{"kind", "tucker"},
                      {"dims", dims_json(v.dims())},
                      {"core", to_json(AnyTensor(v.core))},
                      {"factors", f}};
        } else {
          Json frames = Json::array(), transfer = Json::array();
          for (int t = 0; t < v.tree.size(); ++t) {
            frames.push_back(v.tree.is_leaf(t) ? to_json(v.frames[t]) : Json());
            transfer.push_back(v.tree.is_leaf(t) ? Json() : to_json(v.transfer[t]));
          }
          return Json{{"kind", "ht"},
                      {"dims", dims_json(v.dims())},
                      {"tree", to_json(v.tree)},
                      {"ranks", std::vector<long long>(v.ranks.begin(), v.ranks.end())},
                      {"frames", frames},
                      {"transfer", transfer}};
        }
      },
      x);
}

AnyTensor tensor_from_json(const Json& j) {
  const auto kind = get<std::string>(j, "kind");
  const Dims dims = dims_from(j, "dims");
  auto check_matrix = [](const Matrix& m, Index rows, Index cols, const std::string& what) {
    if (m.rows() != rows || m.cols() != cols)
      fail(what + " has shape " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ", expected " +
           std::to_string(rows) + "x" + std::to_string(cols));
  };
  if (kind == "dense") return DenseTensor(dims, vector_from(j, "data", product(dims)));
  if (kind == "canonical") {
    CanonicalTensor c;
    const auto& f = field(j, "factors");
    if (f.size() != dims.size()) fail("canonical tensor needs one factor per mode");
    for (const auto& m : f) c.factors.push_back(matrix_from_json(m));
    const auto w = decode_doubles(get<std::string>(j, "weights"));
    c.weights = Eigen::Map<const Vector>(w.data(), Index(w.size()));
    for (std::size_t m = 0; m < dims.size(); ++m)
      check_matrix(c.factors[m], dims[m], c.rank(), "canonical factor " + std::to_string(m));
    return c;
  }
  if (kind == "tucker") {
    TuckerTensor t;
    const AnyTensor core = tensor_from_json(field(j, "core"));
    if (!std::holds_alternative<DenseTensor>(core)) fail("Tucker core must be dense");
    t.core = std::get<DenseTensor>(core);
    const auto& f = field(j, "factors");
    if (f.size() != dims.size() || t.core.dims().size() != dims.size()) fail("Tucker tensor needs one factor per mode");
    for (const auto& m : f) t.factors.push_back(matrix_from_json(m));
    for (std::size_t m = 0; m < dims.size(); ++m)
      check_matrix(t.factors[m], dims[m], t.core.dims()[m], "Tucker factor " + std::to_string(m));
    return t;
  }
  if (kind == "ht") {
    HTTensor h;
    h.tree = tree_from_json(field(j, "tree"));
    if (h.tree.order() != int(dims.size())) fail("tree order differs from the tensor order");
    const auto ranks = get<std::vector<long long>>(j, "ranks");
    const auto& frames = field(j, "frames");
    const auto& transfer = field(j, "transfer");
    const auto nodes = std::size_t(h.tree.size());
    if (ranks.size() != nodes || frames.size() != nodes || transfer.size() != nodes)
      fail("HT arrays must have one entry per tree node");
    h.ranks.assign(ranks.begin(), ranks.end());
    if (h.ranks[0] != 1) fail("HT root rank must be 1");
    h.frames.resize(nodes);
    h.transfer.resize(nodes);
    for (int t = 0; t < h.tree.size(); ++t) {
      const auto& nd = h.tree.node(t);
      if (h.tree.is_leaf(t)) {
        h.frames[t] = matrix_from_json(frames[std::size_t(t)]);
        check_matrix(h.frames[t], dims[nd.modes[0]], h.ranks[t], "HT frame " + std::to_string(t));
      } else {
        h.transfer[t] = matrix_from_json(transfer[std::size_t(t)]);
        check_matrix(h.transfer[t], h.ranks[nd.left] * h.ranks[nd.right], h.ranks[t], "HT transfer " + std::to_string(t));
      }
    }
    return h;
  }
  fail("unknown tensor kind '" + kind + "'");
}

Json to_json(const KronSumOperator& op) {
  FactorTable table;
  Json terms = Json::array();
  for (const auto& t : op.terms()) {
    Json refs = Json::array();
    for (const auto& f : t.factors) refs.push_back(table.add(f));
    terms.push_back(Json{{"weight", t.weight}, {"factors", refs}});
  }
  return Json{{"kind", "kron_sum"}, {"dims", dims_json(op.dims())}, {"factors", table.list}, {"terms", terms}};
}

KronSumOperator kron_sum_from_json(const Json& j) {
  if (get<std::string>(j, "kind") != "kron_sum") fail("expected a kron_sum operator");
  const Dims dims = dims_from(j, "dims");
  const auto table = read_factors(j);
  KronSumOperator op(dims);
  for (const auto& t : field(j, "terms")) {
    std::vector<FactorPtr> f;
    for (const auto& ref : field(t, "factors")) f.push_back(factor_at(table, ref));
    try {
      op.add_term(std::move(f), get<double>(t, "weight"));
    } catch (const Error& e) {
      fail(std::string("invalid term: ") + e.what());
    }
  }
  return op;
}

Json to_json(const BasisOperator& p) {
  FactorTable table;
  Json basis = Json::array();
  for (const auto& mode : p.basis) {
    Json refs = Json::array();
    for (const auto& f : mode) refs.push_back(table.add(f));
    basis.push_back(refs);
  }
  return Json{{"kind", "basis_operator"},
              {"dims", dims_json(p.dims)},
              {"factors", table.list},
              {"basis", basis},
              {"coeff", to_json(p.coeff)}};
}

BasisOperator basis_operator_from_json(const Json& j) {
  if (get<std::string>(j, "kind") != "basis_operator") fail("expected a basis_operator");
  BasisOperator p;
  p.dims = dims_from(j, "dims");
  const auto table = read_factors(j);
  const auto& basis = field(j, "basis");
  if (basis.size() != p.dims.size()) fail("basis needs one list per mode");
  for (std::size_t m = 0; m < p.dims.size(); ++m) {
    p.basis.emplace_back();
    for (const auto& ref : basis[m]) {
      const auto& f = factor_at(table, ref);
      if (f->rows() != p.dims[m] || f->cols() != p.dims[m]) fail("basis factor size differs from its mode");
      p.basis.back().push_back(f);
    }
  }
  p.coeff = tensor_from_json(field(j, "coeff"));
  const Dims cd = std::visit([](const auto& t) { return t.dims(); }, p.coeff);
  if (cd != p.basis_sizes()) fail("coefficient tensor dimensions differ from the basis sizes");
  return p;
}

Json wrap(Json payload, Json metadata) {
  return Json{{"format", "kroninv"}, {"version", kContainerVersion}, {"payload", std::move(payload)}, {"metadata", std::move(metadata)}};
}

const Json& unwrap(const Json& doc) {
  if (get<std::string>(doc, "format") != "kroninv") fail("not a kroninv container");
  const int v = get<int>(doc, "version");
  if (v != kContainerVersion) fail("unsupported container version " + std::to_string(v));
  return field(doc, "payload");
}

void write_json(const std::filesystem::path& path, const Json& doc) {
  std::ofstream out(path);
  if (!out) fail("cannot open '" + path.string() + "' for writing");
  out << doc.dump(1) << '\n';
  if (!out) fail("write to '" + path.string() + "' failed");
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail("'" + path.string() + "': " + e.what());
  }
}

}  // namespace kroninv::io
