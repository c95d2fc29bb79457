#pragma once

#include "kroninv/factor.hpp"

namespace kroninv {

/// Bartels–Stewart solve of A X + X B = C. Both coefficients are reduced to
/// real Schur form (an eigendecomposition when symmetric). Throws
/// SylvesterDegenerate when an eigenvalue of A is within 1e-12·(‖A‖+‖B‖) of
/// the negative of an eigenvalue of B.
Matrix solve_sylvester(const Matrix& a, const Matrix& b, const Matrix& c);

}  // namespace kroninv
