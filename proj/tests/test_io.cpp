#include "kroninv/error.hpp"
#include "kroninv/io.hpp"
#include "kroninv/tensor_ops.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

using namespace kroninv;
using namespace kroninv::testing;
namespace io = kroninv::io;

namespace {

bool same_bits(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * std::size_t(a.size())) == 0;
}

AnyTensor round_trip(const AnyTensor& x) { return io::tensor_from_json(io::Json::parse(io::to_json(x).dump())); }

}  // namespace

TEST(Base64, KnownEncoding) {
  // 1.0 is 00 00 00 00 00 00 f0 3f in little-endian bytes
  const double one = 1.0;
  EXPECT_EQ(io::encode_doubles(&one, 1), "AAAAAAAA8D8=");
  EXPECT_EQ(io::decode_doubles("AAAAAAAA8D8="), std::vector<double>{1.0});
  EXPECT_EQ(io::encode_doubles(nullptr, 0), "");
  EXPECT_TRUE(io::decode_doubles("").empty());
}

TEST(Base64, BitExactSpecialValues) {
  const std::vector<double> v{0.0, -0.0, 1e-310, std::numeric_limits<double>::infinity(), M_PI, -1.0 / 3.0};
  const auto back = io::decode_doubles(io::encode_doubles(v.data(), v.size()));
  ASSERT_EQ(back.size(), v.size());
  EXPECT_EQ(std::memcmp(back.data(), v.data(), v.size() * sizeof(double)), 0);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EXPECT_TRUE(std::isnan(io::decode_doubles(io::encode_doubles(&nan, 1))[0]));
}

TEST(Base64, RejectsMalformed) {
  EXPECT_THROW(io::decode_doubles("abc"), Error);
  EXPECT_THROW(io::decode_doubles("AAAA"), Error);  // 3 bytes, not a double
  EXPECT_THROW(io::decode_doubles("@@@@@@@@@@@@"), Error);
}

TEST(Container, TensorRoundTrips) {
  std::mt19937_64 rng(3);
  const Dims dims{3, 4, 2, 3};
  const auto c = random_canonical(rng, dims, 2);
  const DenseTensor d = to_dense(AnyTensor(c));
  const TuckerTensor t = to_tucker(AnyTensor(c));
  const HTTensor h = to_ht(AnyTensor(c), DimensionTree::balanced(4));
  for (const AnyTensor& x : {AnyTensor(d), AnyTensor(c), AnyTensor(t), AnyTensor(h)}) {
    const AnyTensor y = round_trip(x);
    ASSERT_EQ(x.index(), y.index());
    EXPECT_TRUE(same_bits(to_dense(x).data(), to_dense(y).data()));
  }
  const auto hb = std::get<HTTensor>(round_trip(AnyTensor(h)));
  EXPECT_TRUE(hb.tree == h.tree);
  EXPECT_EQ(hb.ranks, h.ranks);
  for (int n = 0; n < h.tree.size(); ++n) {
    if (h.tree.is_leaf(n))
      EXPECT_TRUE(same_bits(hb.frames[n], h.frames[n]));
    else
      EXPECT_TRUE(same_bits(hb.transfer[n], h.transfer[n]));
  }
}

TEST(Container, OperatorRoundTripKeepsSharingAndSparsity) {
  std::mt19937_64 rng(4);
  const auto a = random_op(rng, {4, 3, 3}, 3, true);
  KronSumOperator op = a.op;
  op.append(KronSumOperator::rank_one(op.term(0).factors), -0.5);  // shares factor pointers
  const io::Json j = io::to_json(op);
  EXPECT_EQ(j["factors"].size(), 9u);
  const auto back = io::kron_sum_from_json(io::Json::parse(j.dump()));
  ASSERT_EQ(back.rank(), op.rank());
  EXPECT_TRUE(back.term(0).factors[0]->is_sparse());
  EXPECT_EQ(back.term(0).factors[1], back.term(3).factors[1]);
  EXPECT_TRUE(same_bits(back.to_dense(), op.to_dense()));
}

TEST(Container, BasisOperatorRoundTrip) {
  std::mt19937_64 rng(5);
  const Dims dims{3, 3};
  BasisOperator p;
  p.dims = dims;
  p.basis = {{make_factor(random_matrix(rng, 3, 3)), make_factor(random_matrix(rng, 3, 3))},
             {make_factor(random_matrix(rng, 3, 3))}};
  p.coeff = random_dense(rng, {2, 1});
  const auto back = io::basis_operator_from_json(io::unwrap(io::wrap(io::to_json(p))));
  const auto x = random_canonical(rng, dims, 1);
  EXPECT_TRUE(same_bits(to_dense(kroninv::apply(p, AnyTensor(x))).data(), to_dense(kroninv::apply(back, AnyTensor(x))).data()));
}

TEST(Container, FileRoundTripAndHeaderChecks) {
  const auto path = std::filesystem::temp_directory_path() / "kroninv_io_test.json";
  const io::Json doc = io::wrap(io::to_json(AnyTensor(DenseTensor(Dims{2}, Vector::Ones(2)))), {{"seed", 7}});
  io::write_json(path, doc);
  EXPECT_EQ(io::read_json(path), doc);
  std::filesystem::remove(path);
  io::Json bad = doc;
  bad["version"] = 99;
  EXPECT_THROW(io::unwrap(bad), Error);
  bad = doc;
  bad.erase("format");
  EXPECT_THROW(io::unwrap(bad), Error);
  EXPECT_THROW(io::read_json("/nonexistent/x.json"), Error);
}

TEST(Container, RejectsInconsistentPayloads) {
  io::Json j = io::to_json(AnyTensor(DenseTensor(Dims{2, 2}, Vector::Ones(4))));
  j["dims"] = {2, 3};
  EXPECT_THROW(io::tensor_from_json(j), Error);
  io::Json f = io::to_json(*make_factor(SparseMatrix(Matrix::Identity(3, 3).sparseView())));
  f["col"][0] = 5;
  EXPECT_THROW(io::factor_from_json(f), Error);
  EXPECT_THROW(io::tensor_from_json(io::Json{{"kind", "tt"}, {"dims", {2}}}), Error);
  EXPECT_THROW(io::tensor_from_json(io::Json{{"kind", "dense"}}), Error);
}
