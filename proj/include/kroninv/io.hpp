#pragma once

// JSON container for tensors, operators and preconditioners. Layout in
// docs/container.md. Floating-point payloads are base64 of little-endian
// IEEE-754 doubles, so round trips are bit exact.

#include "kroninv/kron_operator.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace kroninv::io {

using Json = nlohmann::json;

inline constexpr int kContainerVersion = 1;

std::string encode_doubles(const double* data, std::size_t n);
std::vector<double> decode_doubles(const std::string& text);

Json to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);

Json to_json(const Factor& f);
FactorPtr factor_from_json(const Json& j);

Json to_json(const DimensionTree& tree);
DimensionTree tree_from_json(const Json& j);

/// {"kind": "dense" | "canonical" | "tucker" | "ht", ...}
Json to_json(const AnyTensor& x);
AnyTensor tensor_from_json(const Json& j);

/// Shared factors are written once and referenced by index.
Json to_json(const KronSumOperator& op);
KronSumOperator kron_sum_from_json(const Json& j);

Json to_json(const BasisOperator& p);
BasisOperator basis_operator_from_json(const Json& j);

/// Top-level document: {"format": "kroninv", "version": 1, "payload": ..., "metadata": ...}
Json wrap(Json payload, Json metadata = Json::object());
/// Checks the header and returns the payload.
const Json& unwrap(const Json& doc);

void write_json(const std::filesystem::path& path, const Json& doc);
Json read_json(const std::filesystem::path& path);

}  // namespace kroninv::io
