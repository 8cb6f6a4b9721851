#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "opent/symtensor/charge_tensor.hpp"

namespace opent::symtensor {

using Matrix = Eigen::MatrixXcd;
using RealVector = Eigen::VectorXd;

struct DenseSvd {
  Matrix u;
  RealVector s;  // descending
  Matrix vh;
};

/// Thin SVD of a dense matrix (LAPACK divide and conquer, with a QR-iteration
/// fallback when it does not converge).
DenseSvd svd(const Matrix& m);

struct DenseEigh {
  RealVector values;  // ascending
  Matrix vectors;
};

/// Eigendecomposition of a Hermitian matrix; only the lower triangle is read.
DenseEigh eigh(const Matrix& m);

/// exp(m) for a small square matrix; throws on non-square input, dimension
/// above 64, or a non-finite result.
Matrix dense_expm(const Matrix& m);

struct SingularValue {
  Charge charge;
  double value = 0.0;
};

struct TruncationParams {
  int chi_max = 256;
  double eps_trunc = 1e-12;  // relative to the sum of squares
  bool normalize = true;     // rescale kept values to unit sum of squares
  double degeneracy_rtol = 1e-9;
  double degeneracy_atol = 1e-10;  // relative to the largest value
  bool mirror_sectors = false;     // keep equally many values in sectors c and c.swapped()
};

/// Schmidt values living on a bond, stored per sector of the bond index in
/// the same order as the sector list. Values inside a sector are descending.
struct SchmidtVector {
  GradedIndex bond;  // direction Out, as seen from the tensor on its left
  std::vector<std::vector<double>> values;

  int dim() const { return bond.dim(); }
  double sum_squares() const;
  /// All values with their charges, sorted descending (ties by charge order).
  std::vector<SingularValue> flatten() const;
  const std::vector<double>& sector_values(int sector) const { return values[sector]; }
};

struct SvdResult {
  ChargeTensor u;  // row indices..., bond (Out)
  SchmidtVector s;
  ChargeTensor v;  // bond (In), column indices...
  double trunc_weight = 0.0;  // discarded share of the sum of squares
  double norm = 0.0;          // sqrt of the kept sum of squares before normalization
  int split_groups_dropped = 0;
};

/// Block-wise SVD across the bipartition rows|columns, followed by a global
/// truncation: at most chi_max values, values with s^2 < eps_trunc * sum s^2
/// removed, and a degenerate group straddling the chi_max edge dropped whole.
/// Two values count as degenerate when they differ by at most
/// degeneracy_rtol * edge + degeneracy_atol * largest.
SvdResult svd_truncate(const ChargeTensor& t, std::span<const int> row_indices,
                       const TruncationParams& params);

/// Multiply leg `leg` of `t` by the diagonal `s` (or its inverse, with values
/// below `floor` treated as `floor`). The leg must carry the sectors of `s.bond`.
ChargeTensor scale_leg(const ChargeTensor& t, int leg, const SchmidtVector& s, bool inverse = false,
                       double floor = 0.0);

}  // namespace opent::symtensor
