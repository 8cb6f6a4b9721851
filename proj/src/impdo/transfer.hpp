#pragma once

#include <vector>

#include "opent/symtensor/charge_tensor.hpp"
#include "opent/symtensor/linalg.hpp"

namespace opent::impdo {

/// Charge-block-diagonal square matrix on a bond, one block per sector.
using BlockDiag = std::vector<symtensor::Matrix>;

BlockDiag block_identity(const symtensor::GradedIndex& bond);
symtensor::Complex block_trace(const BlockDiag& x);

/// Two-leg tensor (bond.dual(), bond) holding the blocks of `x`.
symtensor::ChargeTensor block_tensor(const symtensor::GradedIndex& bond, const BlockDiag& x);

/// sum_s A_s X A_s^dag for a tensor whose first leg is the left bond and last
/// leg the right bond; X lives on the right bond, the result on `left`.
BlockDiag right_map(const symtensor::ChargeTensor& a, const BlockDiag& x, const symtensor::GradedIndex& left);

/// sum_s A_s^dag Y A_s; Y lives on the left bond, the result on `right`.
BlockDiag left_map(const symtensor::ChargeTensor& a, const BlockDiag& y, const symtensor::GradedIndex& right);

}  // namespace opent::impdo
