#pragma once

#include <complex>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "opent/symtensor/graded_index.hpp"

namespace opent::symtensor {

using Complex = std::complex<double>;

/// Sector ordinal per index.
using BlockKey = std::vector<int>;

/// Dense row-major array with an explicit shape.
struct DenseArray {
  std::vector<int> shape;
  std::vector<Complex> data;

  DenseArray() = default;
  explicit DenseArray(std::vector<int> s);

  std::size_t size() const { return data.size(); }
  /// Row-major flat position of a multi-index.
  std::size_t flat(std::span<const int> idx) const;
};

using Block = DenseArray;

/// Block-sparse tensor with zero total charge. Only blocks whose charge
/// assignment satisfies the conservation rule may be stored; absent blocks
/// are zero.
class ChargeTensor {
 public:
  ChargeTensor() = default;
  explicit ChargeTensor(std::vector<GradedIndex> indices);

  int rank() const { return static_cast<int>(indices_.size()); }
  const GradedIndex& index(int i) const { return indices_[i]; }
  const std::vector<GradedIndex>& indices() const { return indices_; }

  bool conserves(const BlockKey& key) const;
  std::vector<int> block_shape(const BlockKey& key) const;

  /// Stored block, created zero-filled on first access.
  Block& block(const BlockKey& key);
  const Block* find(const BlockKey& key) const;
  void set_block(const BlockKey& key, Block b);
  void erase(const BlockKey& key) { blocks_.erase(key); }

  const std::map<BlockKey, Block>& blocks() const { return blocks_; }
  std::map<BlockKey, Block>& blocks() { return blocks_; }

  double norm() const;
  ChargeTensor& operator*=(Complex f);
  bool all_finite() const;

  /// Drop blocks whose max-abs entry is at most `tol`.
  void prune(double tol = 0.0);

  DenseArray to_dense() const;
  /// Picks charge-allowed entries out of a dense array; throws if any
  /// forbidden entry exceeds `tol` in magnitude.
  static ChargeTensor from_dense(std::vector<GradedIndex> indices, const DenseArray& dense,
                                 double tol = 1e-13);

 private:
  std::vector<GradedIndex> indices_;
  std::map<BlockKey, Block> blocks_;
};

/// Reorder indices: result index k is input index perm[k].
ChargeTensor permute(const ChargeTensor& t, std::span<const int> perm);
DenseArray permute(const DenseArray& a, std::span<const int> perm);

/// Sum over paired indices (a-index, b-index). Result indices are the free
/// indices of `a` followed by the free indices of `b`, in original order.
ChargeTensor contract(const ChargeTensor& a, const ChargeTensor& b,
                      std::span<const std::pair<int, int>> pairs);

/// Graded identity on `idx`: legs (idx.dual(), idx), so it contracts on the
/// left against an `idx`-shaped leg and on the right against its dual.
ChargeTensor identity(const GradedIndex& idx);

/// Everything needed to undo a fusion.
struct FusionRecord {
  struct Piece {
    BlockKey parts;  // sector ordinal in each fused part
    int offset = 0;  // offset inside the fused sector
    int extent = 0;
  };
  std::vector<int> permutation;  // applied before fusing
  int position = 0;              // location of the fused index
  std::vector<GradedIndex> parts;
  GradedIndex fused;
  std::vector<std::vector<Piece>> pieces;  // per fused sector
};

/// Build the fused index of `parts`, given the arrow of the result. A part
/// whose arrow differs from `dir` contributes its charge negated.
FusionRecord make_fusion(std::vector<GradedIndex> parts, Direction dir);

/// Permute `group` to be adjacent (in the given order, starting where the
/// smallest grouped index sat) and merge it into one index.
std::pair<ChargeTensor, FusionRecord> fuse(const ChargeTensor& t, std::span<const int> group);

ChargeTensor unfuse(const ChargeTensor& t, const FusionRecord& rec);

}  // namespace opent::symtensor
