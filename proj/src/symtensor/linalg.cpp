#include "opent/symtensor/linalg.hpp"

#include <complex>
#define lapack_complex_float std::complex<float>
#define lapack_complex_double std::complex<double>
#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>
#include <unsupported/Eigen/MatrixFunctions>

#include "opent/errors.hpp"

namespace opent::symtensor {

namespace {

bool finite(const Matrix& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      if (!std::isfinite(m(i, j).real()) || !std::isfinite(m(i, j).imag())) return false;
  return true;
}

using RowMajor = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

DenseSvd svd(const Matrix& m) {
  if (!finite(m)) throw NumericalError("svd: non-finite matrix entries");
  const lapack_int rows = static_cast<lapack_int>(m.rows());
  const lapack_int cols = static_cast<lapack_int>(m.cols());
  const lapack_int k = std::min(rows, cols);
  DenseSvd out;
  if (k == 0) return out;
  out.u.resize(rows, k);
  out.s.resize(k);
  out.vh.resize(k, cols);
  Matrix a = m;
  lapack_int info = LAPACKE_zgesdd(LAPACK_COL_MAJOR, 'S', rows, cols, a.data(), rows, out.s.data(), out.u.data(),
                                   rows, out.vh.data(), k);
  if (info != 0) {
    a = m;
    std::vector<double> superb(std::max<lapack_int>(1, k - 1));
    info = LAPACKE_zgesvd(LAPACK_COL_MAJOR, 'S', 'S', rows, cols, a.data(), rows, out.s.data(), out.u.data(), rows,
                          out.vh.data(), k, superb.data());
    if (info != 0) throw NumericalError(fmt::format("svd failed to converge (info={})", info));
  }
  return out;
}

DenseEigh eigh(const Matrix& m) {
  if (m.rows() != m.cols()) throw IndexError("eigh: matrix is not square");
  if (!finite(m)) throw NumericalError("eigh: non-finite matrix entries");
  DenseEigh out;
  const lapack_int n = static_cast<lapack_int>(m.rows());
  out.vectors = m;
  out.values.resize(n);
  if (n == 0) return out;
  const lapack_int info = LAPACKE_zheevd(LAPACK_COL_MAJOR, 'V', 'L', n, out.vectors.data(), n, out.values.data());
  if (info != 0) throw NumericalError(fmt::format("eigh failed (info={})", info));
  return out;
}

Matrix dense_expm(const Matrix& m) {
  if (m.rows() != m.cols()) throw IndexError("dense_expm: matrix is not square");
  if (m.rows() > 64) throw IndexError("dense_expm: dimension above 64");
  if (!finite(m)) throw NumericalError("dense_expm: non-finite input");
  Matrix e = m.exp();
  if (!finite(e)) throw NumericalError("dense_expm: overflow");
  return e;
}

double SchmidtVector::sum_squares() const {
  double s = 0.0;
  for (const auto& v : values)
    for (double x : v) s += x * x;
  return s;
}

std::vector<SingularValue> SchmidtVector::flatten() const {
  std::vector<SingularValue> out;
  for (int s = 0; s < bond.num_sectors(); ++s)
    for (double x : values[s]) out.push_back({bond.sector(s).charge, x});
  std::stable_sort(out.begin(), out.end(),
                   [](const SingularValue& a, const SingularValue& b) { return a.value > b.value; });
  return out;
}

SvdResult svd_truncate(const ChargeTensor& t, std::span<const int> row_indices, const TruncationParams& params) {
  if (params.chi_max < 1) throw IndexError("chi_max must be at least 1");
  if (!(params.eps_trunc >= 0.0)) throw IndexError("eps_trunc must be non-negative");
  const int r = t.rank();
  std::vector<bool> is_row(r, false);
  for (int k : row_indices) {
    if (k < 0 || k >= r || is_row[k]) throw IndexError("invalid row index set");
    is_row[k] = true;
  }
  std::vector<int> perm(row_indices.begin(), row_indices.end()), cols;
  for (int k = 0; k < r; ++k)
    if (!is_row[k]) cols.push_back(k);
  if (perm.empty() || cols.empty()) throw IndexError("svd bipartition must be non-trivial");
  perm.insert(perm.end(), cols.begin(), cols.end());
  const int nr = static_cast<int>(row_indices.size());
  const int nc = static_cast<int>(cols.size());

  std::vector<GradedIndex> row_parts, col_parts;
  for (int k : row_indices) row_parts.push_back(t.index(k));
  for (int k : cols) col_parts.push_back(t.index(k));
  const FusionRecord rows = make_fusion(row_parts, Direction::In);
  const FusionRecord colf = make_fusion(col_parts, Direction::Out);

  std::map<BlockKey, std::pair<int, const FusionRecord::Piece*>> row_lookup, col_lookup;
  for (int s = 0; s < static_cast<int>(rows.pieces.size()); ++s)
    for (const auto& p : rows.pieces[s]) row_lookup.emplace(p.parts, std::make_pair(s, &p));
  for (int s = 0; s < static_cast<int>(colf.pieces.size()); ++s)
    for (const auto& p : colf.pieces[s]) col_lookup.emplace(p.parts, std::make_pair(s, &p));

  // Assemble one matrix per charge.
  std::map<Charge, Matrix> mats;
  std::map<Charge, std::pair<int, int>> sector_of;  // charge -> (row sector, col sector)
  for (const auto& [key, blk] : t.blocks()) {
    for (const auto& x : blk.data)
      if (!std::isfinite(x.real()) || !std::isfinite(x.imag()))
        throw NumericalError("svd_truncate: non-finite tensor entries");
    BlockKey rk(nr), ck(nc);
    for (int k = 0; k < nr; ++k) rk[k] = key[perm[k]];
    for (int k = 0; k < nc; ++k) ck[k] = key[perm[nr + k]];
    const auto& [rs, rp] = row_lookup.at(rk);
    const auto& [cs, cp] = col_lookup.at(ck);
    const Charge c = rows.fused.sector(rs).charge;
    auto [it, fresh] = mats.try_emplace(c);
    if (fresh) {
      it->second = Matrix::Zero(rows.fused.sector(rs).dim, colf.fused.sector(cs).dim);
      sector_of[c] = {rs, cs};
    }
    DenseArray p = permute(blk, perm);
    Eigen::Map<const RowMajor> pm(p.data.data(), rp->extent, cp->extent);
    it->second.block(rp->offset, cp->offset, rp->extent, cp->extent) = pm;
  }

  struct Entry {
    double value;
    Charge charge;
    int pos;
  };
  std::map<Charge, DenseSvd> svds;
  std::vector<Entry> all;
  double total = 0.0;
  for (const auto& [c, m] : mats) {
    DenseSvd d = svd(m);
    for (Eigen::Index i = 0; i < d.s.size(); ++i) {
      all.push_back({d.s(i), c, static_cast<int>(i)});
      total += d.s(i) * d.s(i);
    }
    svds.emplace(c, std::move(d));
  }
  if (!(total > 0.0)) throw NumericalError("svd_truncate: all singular values vanish");
  std::stable_sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.value > b.value; });

  int keep = 0;
  const int limit = std::min<int>(params.chi_max, static_cast<int>(all.size()));
  while (keep < limit && all[keep].value > 0.0 && all[keep].value * all[keep].value >= params.eps_trunc * total)
    ++keep;
  SvdResult res;
  if (keep < static_cast<int>(all.size()) && keep > 0) {
    const double edge = all[keep - 1].value;
    const double tol = params.degeneracy_rtol * edge + params.degeneracy_atol * all.front().value;
    if (std::abs(edge - all[keep].value) <= tol) {
      int g = keep - 1;
      while (g > 0 && std::abs(all[g - 1].value - edge) <= tol) --g;
      keep = g;
      res.split_groups_dropped = 1;
    }
  }
  if (keep == 0) throw NumericalError("svd_truncate: every singular value was truncated");

  std::map<Charge, int> kept_count;
  for (int i = 0; i < keep; ++i) kept_count[all[i].charge] = std::max(kept_count[all[i].charge], all[i].pos + 1);
  if (params.mirror_sectors) {
    std::map<Charge, int> paired;
    for (const auto& [c, n] : kept_count) {
      auto m = kept_count.find(c.swapped());
      const int k = m == kept_count.end() ? 0 : std::min(n, m->second);
      if (k > 0) paired[c] = k;
    }
    if (paired.empty()) throw NumericalError("svd_truncate: no sector survives mirror pairing");
    kept_count = std::move(paired);
  }
  double kept = 0.0;
  for (const auto& [c, n] : kept_count)
    for (int i = 0; i < n; ++i) kept += svds.at(c).s(i) * svds.at(c).s(i);
  res.trunc_weight = std::max(0.0, (total - kept) / total);
  res.norm = std::sqrt(kept);
  const double scale = params.normalize ? 1.0 / res.norm : 1.0;

  std::vector<Sector> bond_sectors;
  for (const auto& [c, n] : kept_count) bond_sectors.push_back({c, n});
  GradedIndex bond(bond_sectors, Direction::Out);
  res.s.bond = bond;
  res.s.values.resize(bond.num_sectors());

  std::vector<GradedIndex> u_idx = row_parts, v_idx{bond.dual()};
  u_idx.push_back(bond);
  v_idx.insert(v_idx.end(), col_parts.begin(), col_parts.end());
  res.u = ChargeTensor(u_idx);
  res.v = ChargeTensor(v_idx);

  for (int b = 0; b < bond.num_sectors(); ++b) {
    const Charge c = bond.sector(b).charge;
    const int n = bond.sector(b).dim;
    const DenseSvd& d = svds.at(c);
    for (int i = 0; i < n; ++i) res.s.values[b].push_back(d.s(i) * scale);
    const auto [rs, cs] = sector_of.at(c);
    for (const auto& piece : rows.pieces[rs]) {
      BlockKey k = piece.parts;
      k.push_back(b);
      Block blk(res.u.block_shape(k));
      Eigen::Map<RowMajor>(blk.data.data(), piece.extent, n) = d.u.block(piece.offset, 0, piece.extent, n);
      res.u.blocks().emplace(std::move(k), std::move(blk));
    }
    for (const auto& piece : colf.pieces[cs]) {
      BlockKey k{b};
      k.insert(k.end(), piece.parts.begin(), piece.parts.end());
      Block blk(res.v.block_shape(k));
      Eigen::Map<RowMajor>(blk.data.data(), n, piece.extent) = d.vh.block(0, piece.offset, n, piece.extent);
      res.v.blocks().emplace(std::move(k), std::move(blk));
    }
  }
  return res;
}

ChargeTensor scale_leg(const ChargeTensor& t, int leg, const SchmidtVector& s, bool inverse, double floor) {
  if (leg < 0 || leg >= t.rank()) throw IndexError("scale_leg: leg out of range");
  if (t.index(leg).sectors() != s.bond.sectors()) throw IndexError("scale_leg: leg does not match Schmidt vector");
  ChargeTensor out = t;
  for (auto& [key, blk] : out.blocks()) {
    const auto& vals = s.values[key[leg]];
    std::size_t pre = 1, post = 1;
    for (int k = 0; k < leg; ++k) pre *= blk.shape[k];
    for (int k = leg + 1; k < t.rank(); ++k) post *= blk.shape[k];
    const std::size_t d = blk.shape[leg];
    for (std::size_t i = 0; i < pre; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double f = inverse ? 1.0 / std::max(vals[j], floor) : vals[j];
        Complex* p = blk.data.data() + (i * d + j) * post;
        for (std::size_t q = 0; q < post; ++q) p[q] *= f;
      }
  }
  return out;
}

}  // namespace opent::symtensor
