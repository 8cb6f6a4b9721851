#include "transfer.hpp"

namespace opent::impdo {

using symtensor::Matrix;
using RowMajor = Eigen::Matrix<symtensor::Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

BlockDiag block_identity(const symtensor::GradedIndex& bond) {
  BlockDiag x;
  for (const auto& s : bond.sectors()) x.push_back(Matrix::Identity(s.dim, s.dim));
  return x;
}

symtensor::Complex block_trace(const BlockDiag& x) {
  symtensor::Complex t = 0.0;
  for (const auto& m : x) t += m.trace();
  return t;
}

symtensor::ChargeTensor block_tensor(const symtensor::GradedIndex& bond, const BlockDiag& x) {
  symtensor::ChargeTensor t({bond.dual(), bond});
  for (int k = 0; k < bond.num_sectors(); ++k) {
    symtensor::Block& b = t.block({k, k});
    Eigen::Map<RowMajor>(b.data.data(), x[k].rows(), x[k].cols()) = x[k];
  }
  return t;
}

namespace {

struct Shape {
  Eigen::Index left, mid, right;
};

Shape shape_of(const symtensor::Block& b) {
  Shape s{b.shape.front(), 1, b.shape.back()};
  for (std::size_t k = 1; k + 1 < b.shape.size(); ++k) s.mid *= b.shape[k];
  return s;
}

}  // namespace

BlockDiag right_map(const symtensor::ChargeTensor& a, const BlockDiag& x, const symtensor::GradedIndex& left) {
  BlockDiag y;
  for (const auto& s : left.sectors()) y.push_back(Matrix::Zero(s.dim, s.dim));
  for (const auto& [key, blk] : a.blocks()) {
    const Shape s = shape_of(blk);
    Eigen::Map<const RowMajor> a1(blk.data.data(), s.left * s.mid, s.right);
    const RowMajor t = a1 * x[key.back()];
    Eigen::Map<const RowMajor> t2(t.data(), s.left, s.mid * s.right);
    Eigen::Map<const RowMajor> a2(blk.data.data(), s.left, s.mid * s.right);
    y[key.front()].noalias() += t2 * a2.adjoint();
  }
  return y;
}

BlockDiag left_map(const symtensor::ChargeTensor& a, const BlockDiag& y, const symtensor::GradedIndex& right) {
  BlockDiag x;
  for (const auto& s : right.sectors()) x.push_back(Matrix::Zero(s.dim, s.dim));
  for (const auto& [key, blk] : a.blocks()) {
    const Shape s = shape_of(blk);
    Eigen::Map<const RowMajor> a2(blk.data.data(), s.left, s.mid * s.right);
    const RowMajor z = y[key.front()] * a2;
    Eigen::Map<const RowMajor> z1(z.data(), s.left * s.mid, s.right);
    Eigen::Map<const RowMajor> a1(blk.data.data(), s.left * s.mid, s.right);
    x[key.back()].noalias() += a1.adjoint() * z1;
  }
  return x;
}

}  // namespace opent::impdo
