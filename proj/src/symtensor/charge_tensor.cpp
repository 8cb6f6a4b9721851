#include "opent/symtensor/charge_tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fmt/format.h>
#include <numeric>

#include "opent/errors.hpp"

namespace opent::symtensor {

namespace {

std::size_t product(std::span<const int> shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::vector<std::size_t> row_major_strides(std::span<const int> shape) {
  std::vector<std::size_t> st(shape.size(), 1);
  for (int k = static_cast<int>(shape.size()) - 2; k >= 0; --k) st[k] = st[k + 1] * shape[k + 1];
  return st;
}

void check_permutation(std::span<const int> perm, int rank) {
  if (static_cast<int>(perm.size()) != rank) throw IndexError("permutation length does not match rank");
  std::vector<bool> seen(rank, false);
  for (int p : perm) {
    if (p < 0 || p >= rank || seen[p]) throw IndexError("invalid permutation");
    seen[p] = true;
  }
}

using RowMajor = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

DenseArray::DenseArray(std::vector<int> s) : shape(std::move(s)), data(product(shape), Complex{0.0, 0.0}) {}

std::size_t DenseArray::flat(std::span<const int> idx) const {
  std::size_t f = 0;
  for (std::size_t k = 0; k < shape.size(); ++k) f = f * shape[k] + idx[k];
  return f;
}

DenseArray permute(const DenseArray& a, std::span<const int> perm) {
  const int r = static_cast<int>(a.shape.size());
  check_permutation(perm, r);
  std::vector<int> shape(r);
  for (int k = 0; k < r; ++k) shape[k] = a.shape[perm[k]];
  DenseArray out(shape);
  if (out.data.empty()) return out;
  if (std::is_sorted(perm.begin(), perm.end())) {
    out.data = a.data;
    return out;
  }
  const auto in_strides = row_major_strides(a.shape);
  std::vector<std::size_t> src_stride(r);
  for (int k = 0; k < r; ++k) src_stride[k] = in_strides[perm[k]];

  // Innermost output axis handled as a strided run.
  const int last = r - 1;
  const std::size_t run = shape[last];
  const std::size_t run_stride = src_stride[last];
  std::vector<int> idx(r, 0);
  std::size_t src = 0;
  Complex* dst = out.data.data();
  const Complex* in = a.data.data();
  const std::size_t outer = out.data.size() / run;
  for (std::size_t o = 0; o < outer; ++o) {
    const Complex* s = in + src;
    for (std::size_t j = 0; j < run; ++j) dst[j] = s[j * run_stride];
    dst += run;
    for (int k = last - 1; k >= 0; --k) {
      if (++idx[k] < shape[k]) {
        src += src_stride[k];
        break;
      }
      src -= src_stride[k] * (shape[k] - 1);
      idx[k] = 0;
    }
  }
  return out;
}

ChargeTensor::ChargeTensor(std::vector<GradedIndex> indices) : indices_(std::move(indices)) {}

bool ChargeTensor::conserves(const BlockKey& key) const {
  if (static_cast<int>(key.size()) != rank()) return false;
  Charge total;
  for (int k = 0; k < rank(); ++k) {
    if (key[k] < 0 || key[k] >= indices_[k].num_sectors()) return false;
    const Charge c = indices_[k].sector(key[k]).charge;
    total += sign(indices_[k].direction()) == 1 ? c : -c;
  }
  return total == Charge{};
}

std::vector<int> ChargeTensor::block_shape(const BlockKey& key) const {
  std::vector<int> s(key.size());
  for (std::size_t k = 0; k < key.size(); ++k) s[k] = indices_[k].sector(key[k]).dim;
  return s;
}

Block& ChargeTensor::block(const BlockKey& key) {
  auto it = blocks_.find(key);
  if (it != blocks_.end()) return it->second;
  if (!conserves(key)) throw IndexError("block key violates charge conservation");
  return blocks_.emplace(key, Block(block_shape(key))).first->second;
}

const Block* ChargeTensor::find(const BlockKey& key) const {
  auto it = blocks_.find(key);
  return it == blocks_.end() ? nullptr : &it->second;
}

void ChargeTensor::set_block(const BlockKey& key, Block b) {
  if (!conserves(key)) throw IndexError("block key violates charge conservation");
  if (b.shape != block_shape(key)) throw IndexError("block shape does not match sector dimensions");
  blocks_[key] = std::move(b);
}

double ChargeTensor::norm() const {
  double s = 0.0;
  for (const auto& [k, b] : blocks_)
    for (const auto& x : b.data) s += std::norm(x);
  return std::sqrt(s);
}

ChargeTensor& ChargeTensor::operator*=(Complex f) {
  for (auto& [k, b] : blocks_)
    for (auto& x : b.data) x *= f;
  return *this;
}

bool ChargeTensor::all_finite() const {
  for (const auto& [k, b] : blocks_)
    for (const auto& x : b.data)
      if (!std::isfinite(x.real()) || !std::isfinite(x.imag())) return false;
  return true;
}

void ChargeTensor::prune(double tol) {
  for (auto it = blocks_.begin(); it != blocks_.end();) {
    double m = 0.0;
    for (const auto& x : it->second.data) m = std::max(m, std::abs(x));
    if (m <= tol)
      it = blocks_.erase(it);
    else
      ++it;
  }
}

DenseArray ChargeTensor::to_dense() const {
  std::vector<int> shape(rank());
  for (int k = 0; k < rank(); ++k) shape[k] = indices_[k].dim();
  DenseArray out(shape);
  const auto strides = row_major_strides(shape);
  for (const auto& [key, b] : blocks_) {
    std::size_t base = 0;
    for (int k = 0; k < rank(); ++k) base += strides[k] * indices_[k].offset(key[k]);
    std::vector<int> idx(rank(), 0);
    for (std::size_t f = 0; f < b.data.size(); ++f) {
      std::size_t pos = base;
      for (int k = 0; k < rank(); ++k) pos += strides[k] * idx[k];
      out.data[pos] = b.data[f];
      for (int k = rank() - 1; k >= 0; --k) {
        if (++idx[k] < b.shape[k]) break;
        idx[k] = 0;
      }
    }
  }
  return out;
}

ChargeTensor ChargeTensor::from_dense(std::vector<GradedIndex> indices, const DenseArray& dense, double tol) {
  ChargeTensor t(std::move(indices));
  const int r = t.rank();
  if (static_cast<int>(dense.shape.size()) != r) throw IndexError("dense rank mismatch");
  for (int k = 0; k < r; ++k)
    if (dense.shape[k] != t.index(k).dim()) throw IndexError("dense shape mismatch");
  const auto strides = row_major_strides(dense.shape);

  BlockKey key(r, 0);
  if (r == 0) return t;
  bool done = false;
  while (!done) {
    const auto shape = t.block_shape(key);
    const bool allowed = t.conserves(key);
    std::size_t base = 0;
    for (int k = 0; k < r; ++k) base += strides[k] * t.index(k).offset(key[k]);
    Block b(shape);
    std::vector<int> idx(r, 0);
    double mx = 0.0;
    for (std::size_t f = 0; f < b.data.size(); ++f) {
      std::size_t pos = base;
      for (int k = 0; k < r; ++k) pos += strides[k] * idx[k];
      b.data[f] = dense.data[pos];
      mx = std::max(mx, std::abs(b.data[f]));
      for (int k = r - 1; k >= 0; --k) {
        if (++idx[k] < shape[k]) break;
        idx[k] = 0;
      }
    }
    if (allowed) {
      if (mx > 0.0) t.blocks_.emplace(key, std::move(b));
    } else if (mx > tol) {
      throw IndexError(fmt::format("dense entry of magnitude {:.3e} violates charge conservation", mx));
    }
    int k = r - 1;
    for (; k >= 0; --k) {
      if (++key[k] < t.index(k).num_sectors()) break;
      key[k] = 0;
    }
    done = k < 0;
  }
  return t;
}

ChargeTensor permute(const ChargeTensor& t, std::span<const int> perm) {
  check_permutation(perm, t.rank());
  std::vector<GradedIndex> idx(t.rank());
  for (int k = 0; k < t.rank(); ++k) idx[k] = t.index(perm[k]);
  ChargeTensor out(std::move(idx));
  for (const auto& [key, b] : t.blocks()) {
    BlockKey nk(key.size());
    for (std::size_t k = 0; k < key.size(); ++k) nk[k] = key[perm[k]];
    out.blocks().emplace(std::move(nk), permute(b, perm));
  }
  return out;
}

ChargeTensor contract(const ChargeTensor& a, const ChargeTensor& b, std::span<const std::pair<int, int>> pairs) {
  std::vector<bool> used_a(a.rank(), false), used_b(b.rank(), false);
  for (const auto& [ia, ib] : pairs) {
    if (ia < 0 || ia >= a.rank() || ib < 0 || ib >= b.rank())
      throw IndexError(fmt::format("contraction pair ({},{}) references a missing index", ia, ib));
    if (used_a[ia] || used_b[ib]) throw IndexError("index paired twice in contraction");
    used_a[ia] = used_b[ib] = true;
    if (!a.index(ia).contractible_with(b.index(ib)))
      throw IndexError(fmt::format("indices ({},{}) have incompatible sectors or directions", ia, ib));
  }
  std::vector<int> free_a, free_b, perm_a, perm_b;
  for (int k = 0; k < a.rank(); ++k)
    if (!used_a[k]) free_a.push_back(k);
  for (int k = 0; k < b.rank(); ++k)
    if (!used_b[k]) free_b.push_back(k);
  perm_a = free_a;
  for (const auto& p : pairs) perm_a.push_back(p.first);
  for (const auto& p : pairs) perm_b.push_back(p.second);
  perm_b.insert(perm_b.end(), free_b.begin(), free_b.end());

  std::vector<GradedIndex> out_idx;
  for (int k : free_a) out_idx.push_back(a.index(k));
  for (int k : free_b) out_idx.push_back(b.index(k));
  ChargeTensor out(std::move(out_idx));

  const std::size_t na = free_a.size(), nc = pairs.size(), nb = free_b.size();

  struct Mat {
    BlockKey free;
    RowMajor m;
  };
  // Group b blocks by their contracted key.
  std::map<BlockKey, std::vector<Mat>> b_by_key;
  for (const auto& [key, blk] : b.blocks()) {
    DenseArray p = permute(blk, perm_b);
    BlockKey ck(nc), fk(nb);
    std::size_t rows = 1, cols = 1;
    for (std::size_t k = 0; k < nc; ++k) {
      ck[k] = key[perm_b[k]];
      rows *= p.shape[k];
    }
    for (std::size_t k = 0; k < nb; ++k) {
      fk[k] = key[perm_b[nc + k]];
      cols *= p.shape[nc + k];
    }
    Mat m{fk, Eigen::Map<RowMajor>(p.data.data(), rows, cols)};
    b_by_key[ck].push_back(std::move(m));
  }

  for (const auto& [key, blk] : a.blocks()) {
    BlockKey ck(nc), fk(na);
    for (std::size_t k = 0; k < nc; ++k) ck[k] = key[perm_a[na + k]];
    auto it = b_by_key.find(ck);
    if (it == b_by_key.end()) continue;
    DenseArray p = permute(blk, perm_a);
    std::size_t rows = 1, inner = 1;
    for (std::size_t k = 0; k < na; ++k) {
      fk[k] = key[perm_a[k]];
      rows *= p.shape[k];
    }
    for (std::size_t k = 0; k < nc; ++k) inner *= p.shape[na + k];
    Eigen::Map<const RowMajor> am(p.data.data(), rows, inner);
    for (const auto& bm : it->second) {
      BlockKey rk = fk;
      rk.insert(rk.end(), bm.free.begin(), bm.free.end());
      Block& dst = out.block(rk);
      Eigen::Map<RowMajor> dm(dst.data.data(), rows, bm.m.cols());
      dm.noalias() += am * bm.m;
    }
  }
  return out;
}

ChargeTensor identity(const GradedIndex& idx) {
  ChargeTensor id({idx.dual(), idx});
  for (int s = 0; s < idx.num_sectors(); ++s) {
    Block& b = id.block({s, s});
    const int d = idx.sector(s).dim;
    for (int i = 0; i < d; ++i) b.data[static_cast<std::size_t>(i) * d + i] = 1.0;
  }
  return id;
}

FusionRecord make_fusion(std::vector<GradedIndex> parts, Direction dir) {
  if (parts.empty()) throw IndexError("cannot fuse an empty group");
  FusionRecord rec;
  rec.parts = std::move(parts);
  const int n = static_cast<int>(rec.parts.size());

  std::map<Charge, std::vector<FusionRecord::Piece>> by_charge;
  BlockKey key(n, 0);
  while (true) {
    Charge c;
    int extent = 1;
    for (int k = 0; k < n; ++k) {
      const auto& s = rec.parts[k].sector(key[k]);
      c += rec.parts[k].direction() == dir ? s.charge : -s.charge;
      extent *= s.dim;
    }
    auto& list = by_charge[c];
    const int offset = list.empty() ? 0 : list.back().offset + list.back().extent;
    list.push_back({key, offset, extent});
    int k = n - 1;
    for (; k >= 0; --k) {
      if (++key[k] < rec.parts[k].num_sectors()) break;
      key[k] = 0;
    }
    if (k < 0) break;
  }
  std::vector<Sector> sectors;
  for (auto& [c, list] : by_charge) {
    sectors.push_back({c, list.back().offset + list.back().extent});
    rec.pieces.push_back(std::move(list));
  }
  rec.fused = GradedIndex(std::move(sectors), dir);
  return rec;
}

namespace {

// Lookup from a part key to (fused sector, piece).
std::map<BlockKey, std::pair<int, const FusionRecord::Piece*>> piece_lookup(const FusionRecord& rec) {
  std::map<BlockKey, std::pair<int, const FusionRecord::Piece*>> m;
  for (int s = 0; s < static_cast<int>(rec.pieces.size()); ++s)
    for (const auto& p : rec.pieces[s]) m.emplace(p.parts, std::make_pair(s, &p));
  return m;
}

}  // namespace

std::pair<ChargeTensor, FusionRecord> fuse(const ChargeTensor& t, std::span<const int> group) {
  if (group.empty()) throw IndexError("cannot fuse an empty group");
  std::vector<bool> in_group(t.rank(), false);
  for (int g : group) {
    if (g < 0 || g >= t.rank()) throw IndexError("fusion group references a missing index");
    if (in_group[g]) throw IndexError("index repeated in fusion group");
    in_group[g] = true;
  }
  const int first = *std::min_element(group.begin(), group.end());
  std::vector<int> perm;
  for (int k = 0; k < first; ++k) perm.push_back(k);
  perm.insert(perm.end(), group.begin(), group.end());
  for (int k = first; k < t.rank(); ++k)
    if (!in_group[k]) perm.push_back(k);

  std::vector<GradedIndex> parts;
  for (int g : group) parts.push_back(t.index(g));
  FusionRecord rec = make_fusion(std::move(parts), t.index(group[0]).direction());
  rec.permutation = perm;
  rec.position = first;

  const int ng = static_cast<int>(group.size());
  std::vector<GradedIndex> out_idx;
  for (int k = 0; k < first; ++k) out_idx.push_back(t.index(perm[k]));
  out_idx.push_back(rec.fused);
  for (int k = first + ng; k < t.rank(); ++k) out_idx.push_back(t.index(perm[k]));
  ChargeTensor out(std::move(out_idx));

  const auto lookup = piece_lookup(rec);
  for (const auto& [key, blk] : t.blocks()) {
    DenseArray p = permute(blk, perm);
    BlockKey pk(ng), ok;
    std::size_t pre = 1, post = 1;
    for (int k = 0; k < first; ++k) {
      ok.push_back(key[perm[k]]);
      pre *= p.shape[k];
    }
    for (int k = 0; k < ng; ++k) pk[k] = key[perm[first + k]];
    const auto& [fs, piece] = lookup.at(pk);
    ok.push_back(fs);
    for (int k = first + ng; k < t.rank(); ++k) {
      ok.push_back(key[perm[k]]);
      post *= p.shape[k];
    }
    Block& dst = out.block(ok);
    const std::size_t fdim = rec.fused.sector(fs).dim;
    const std::size_t chunk = static_cast<std::size_t>(piece->extent) * post;
    for (std::size_t i = 0; i < pre; ++i)
      std::memcpy(dst.data.data() + i * fdim * post + piece->offset * post, p.data.data() + i * chunk,
                  chunk * sizeof(Complex));
  }
  return {std::move(out), std::move(rec)};
}

ChargeTensor unfuse(const ChargeTensor& t, const FusionRecord& rec) {
  const int pos = rec.position;
  if (pos < 0 || pos >= t.rank() || !(t.index(pos) == rec.fused))
    throw IndexError("tensor does not carry the fused index of this record");
  std::vector<GradedIndex> idx;
  for (int k = 0; k < pos; ++k) idx.push_back(t.index(k));
  idx.insert(idx.end(), rec.parts.begin(), rec.parts.end());
  for (int k = pos + 1; k < t.rank(); ++k) idx.push_back(t.index(k));
  ChargeTensor split(std::move(idx));

  for (const auto& [key, blk] : t.blocks()) {
    const int fs = key[pos];
    std::size_t pre = 1, post = 1;
    for (int k = 0; k < pos; ++k) pre *= blk.shape[k];
    for (int k = pos + 1; k < t.rank(); ++k) post *= blk.shape[k];
    const std::size_t fdim = blk.shape[pos];
    for (const auto& piece : rec.pieces[fs]) {
      BlockKey nk(key.begin(), key.begin() + pos);
      nk.insert(nk.end(), piece.parts.begin(), piece.parts.end());
      nk.insert(nk.end(), key.begin() + pos + 1, key.end());
      Block b(split.block_shape(nk));
      const std::size_t chunk = static_cast<std::size_t>(piece.extent) * post;
      bool nonzero = false;
      for (std::size_t i = 0; i < pre; ++i) {
        const Complex* src = blk.data.data() + i * fdim * post + piece.offset * post;
        std::memcpy(b.data.data() + i * chunk, src, chunk * sizeof(Complex));
      }
      for (const auto& x : b.data)
        if (x != Complex{}) {
          nonzero = true;
          break;
        }
      if (nonzero) split.blocks().emplace(std::move(nk), std::move(b));
    }
  }
  std::vector<int> inverse(rec.permutation.size());
  for (std::size_t k = 0; k < rec.permutation.size(); ++k) inverse[rec.permutation[k]] = static_cast<int>(k);
  return permute(split, inverse);
}

}  // namespace opent::symtensor
