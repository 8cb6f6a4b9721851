#include "opent/symtensor/graded_index.hpp"

#include <algorithm>
#include <fmt/format.h>

#include "opent/errors.hpp"

namespace opent::symtensor {

std::string to_string(const Charge& c) { return fmt::format("({},{})", c.qk, c.qb); }

GradedIndex::GradedIndex(std::vector<Sector> sectors, Direction dir) : sectors_(std::move(sectors)), dir_(dir) {
  std::sort(sectors_.begin(), sectors_.end(),
            [](const Sector& a, const Sector& b) { return a.charge < b.charge; });
  offsets_.reserve(sectors_.size() + 1);
  offsets_.push_back(0);
  for (std::size_t i = 0; i < sectors_.size(); ++i) {
    if (sectors_[i].dim <= 0) {
      throw IndexError(fmt::format("sector {} has non-positive dimension {}", to_string(sectors_[i].charge),
                                   sectors_[i].dim));
    }
    if (i > 0 && sectors_[i].charge == sectors_[i - 1].charge) {
      throw IndexError("duplicate sector charge " + to_string(sectors_[i].charge));
    }
    offsets_.push_back(offsets_.back() + sectors_[i].dim);
  }
}

std::optional<int> GradedIndex::find(const Charge& c) const {
  auto it = std::lower_bound(sectors_.begin(), sectors_.end(), c,
                             [](const Sector& s, const Charge& q) { return s.charge < q; });
  if (it == sectors_.end() || it->charge != c) return std::nullopt;
  return static_cast<int>(it - sectors_.begin());
}

GradedIndex GradedIndex::dual() const {
  GradedIndex d = *this;
  d.dir_ = flip(dir_);
  return d;
}

bool GradedIndex::contractible_with(const GradedIndex& other) const {
  return dir_ != other.dir_ && sectors_ == other.sectors_;
}

}  // namespace opent::symtensor
