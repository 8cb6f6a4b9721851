#pragma once

#include <optional>
#include <vector>

#include "opent/symtensor/charge.hpp"

namespace opent::symtensor {

struct Sector {
  Charge charge;
  int dim = 0;

  bool operator==(const Sector&) const = default;
};

/// A tensor leg split into charge sectors. Sectors are kept sorted by charge,
/// which fixes the dense layout used by `ChargeTensor::to_dense`.
class GradedIndex {
 public:
  GradedIndex() = default;
  GradedIndex(std::vector<Sector> sectors, Direction dir);

  int num_sectors() const { return static_cast<int>(sectors_.size()); }
  const Sector& sector(int i) const { return sectors_[i]; }
  const std::vector<Sector>& sectors() const { return sectors_; }
  Direction direction() const { return dir_; }
  int dim() const { return offsets_.empty() ? 0 : offsets_.back(); }
  /// Dense offset of sector `i` inside the full index.
  int offset(int i) const { return offsets_[i]; }

  std::optional<int> find(const Charge& c) const;

  /// Same sectors, reversed arrow.
  GradedIndex dual() const;

  /// True when `other` can be contracted against this index.
  bool contractible_with(const GradedIndex& other) const;

  bool operator==(const GradedIndex& o) const { return dir_ == o.dir_ && sectors_ == o.sectors_; }

 private:
  std::vector<Sector> sectors_;
  std::vector<int> offsets_;
  Direction dir_ = Direction::In;
};

}  // namespace opent::symtensor
