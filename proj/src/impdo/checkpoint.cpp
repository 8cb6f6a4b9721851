#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "opent/impdo/impdo.hpp"

namespace opent::impdo {

using symtensor::Block;
using symtensor::BlockKey;
using symtensor::Charge;
using symtensor::Direction;
using symtensor::GradedIndex;
using symtensor::Sector;

namespace {

constexpr char kMagic[8] = {'O', 'P', 'E', 'N', 'T', 'C', 'K', 'P'};

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

class Writer {
 public:
  template <class T>
  void put(T v) {
    const T le = to_little(v);
    const auto* p = reinterpret_cast<const char*>(&le);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void i64(std::int64_t v) { put(v); }
  void f64(double v) { put(v); }
  void raw(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  std::vector<char>& buffer() { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const char* p, std::size_t n) : p_(p), n_(n) {}
  template <class T>
  T get() {
    if (pos_ + sizeof(T) > n_) throw CheckpointError("checkpoint is truncated");
    T v;
    std::memcpy(&v, p_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_little(v);
  }
  std::int64_t i64() { return get<std::int64_t>(); }
  double f64() { return get<double>(); }
  std::int64_t count(std::int64_t max) {
    const std::int64_t v = i64();
    if (v < 0 || v > max) throw CheckpointError("checkpoint holds an implausible count");
    return v;
  }
  bool done() const { return pos_ == n_; }

 private:
  const char* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

void put_index(Writer& w, const GradedIndex& idx) {
  w.i64(static_cast<std::int64_t>(sign(idx.direction())));
  w.i64(idx.num_sectors());
  for (const auto& s : idx.sectors()) {
    w.i64(s.charge.qk);
    w.i64(s.charge.qb);
    w.i64(s.dim);
  }
}

GradedIndex get_index(Reader& r) {
  const std::int64_t d = r.i64();
  if (d != 1 && d != -1) throw CheckpointError("checkpoint has an invalid index direction");
  const std::int64_t n = r.count(1 << 20);
  std::vector<Sector> sectors;
  for (std::int64_t k = 0; k < n; ++k) {
    const std::int64_t qk = r.i64(), qb = r.i64(), dim = r.count(1 << 24);
    sectors.push_back({Charge{static_cast<int>(qk), static_cast<int>(qb)}, static_cast<int>(dim)});
  }
  try {
    return GradedIndex(std::move(sectors), d == 1 ? Direction::In : Direction::Out);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint index is invalid: ") + e.what());
  }
}

void put_tensor(Writer& w, const ChargeTensor& t) {
  w.i64(t.rank());
  for (const auto& idx : t.indices()) put_index(w, idx);
  w.i64(static_cast<std::int64_t>(t.blocks().size()));
  for (const auto& [key, blk] : t.blocks()) {
    for (int k : key) w.i64(k);
    for (const auto& z : blk.data) {
      w.f64(z.real());
      w.f64(z.imag());
    }
  }
}

ChargeTensor get_tensor(Reader& r) {
  const std::int64_t rank = r.count(16);
  std::vector<GradedIndex> idx;
  for (std::int64_t k = 0; k < rank; ++k) idx.push_back(get_index(r));
  ChargeTensor t(std::move(idx));
  const std::int64_t nb = r.count(1 << 24);
  for (std::int64_t b = 0; b < nb; ++b) {
    BlockKey key(rank);
    for (int k = 0; k < rank; ++k) {
      const std::int64_t v = r.i64();
      if (v < 0 || v >= t.index(k).num_sectors()) throw CheckpointError("checkpoint block key out of range");
      key[k] = static_cast<int>(v);
    }
    if (!t.conserves(key)) throw CheckpointError("checkpoint block violates charge conservation");
    Block blk(t.block_shape(key));
    for (auto& z : blk.data) {
      const double re = r.f64(), im = r.f64();
      z = {re, im};
    }
    t.set_block(key, std::move(blk));
  }
  return t;
}

void put_schmidt(Writer& w, const SchmidtVector& s) {
  put_index(w, s.bond);
  for (const auto& sec : s.values)
    for (double v : sec) w.f64(v);
}

SchmidtVector get_schmidt(Reader& r) {
  SchmidtVector s;
  s.bond = get_index(r);
  for (const auto& sec : s.bond.sectors()) {
    std::vector<double> v(sec.dim);
    for (auto& x : v) x = r.f64();
    s.values.push_back(std::move(v));
  }
  return s;
}

}  // namespace

void checkpoint_save(const UnitCellMPDO& st, const std::filesystem::path& path) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(st.grading == Grading::U1xU1 ? 0u : 1u);
  w.f64(st.params.J);
  w.f64(st.params.gamma);
  w.f64(st.params.dt);
  w.i64(st.steps);
  w.f64(st.time);
  w.f64(st.log_scale);
  w.f64(st.trunc_weight);
  w.i64(st.split_groups_dropped);
  w.i64(st.chi_saturated);
  w.i64(st.canon_warnings);
  for (const auto& g : st.gammas) put_tensor(w, g);
  for (const auto& l : st.lambdas) put_schmidt(w, l);
  auto& buf = w.buffer();
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
  w.put<std::uint32_t>(crc);

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw CheckpointError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move checkpoint into place: " + ec.message());
}

UnitCellMPDO checkpoint_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  const std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + 8) throw CheckpointError("checkpoint is truncated");
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) throw CheckpointError("not a checkpoint file");
  Reader head(buf.data() + sizeof(kMagic), 4);
  const auto version = head.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint format version " + std::to_string(version) + " is not supported");

  const std::size_t body = buf.size() - 4;
  Reader tail(buf.data() + body, 4);
  const auto stored = tail.get<std::uint32_t>();
  const auto crc =
      static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(body)));
  if (crc != stored) throw CheckpointError("checkpoint checksum mismatch");

  Reader r(buf.data() + sizeof(kMagic) + 4, body - sizeof(kMagic) - 4);
  UnitCellMPDO st;
  const auto grading = r.get<std::uint32_t>();
  if (grading > 1) throw CheckpointError("checkpoint has an unknown grading");
  st.grading = grading == 0 ? Grading::U1xU1 : Grading::None;
  st.params.J = r.f64();
  st.params.gamma = r.f64();
  st.params.dt = r.f64();
  st.steps = r.i64();
  st.time = r.f64();
  st.log_scale = r.f64();
  st.trunc_weight = r.f64();
  st.split_groups_dropped = r.i64();
  st.chi_saturated = r.i64();
  st.canon_warnings = r.i64();
  for (auto& g : st.gammas) g = get_tensor(r);
  for (auto& l : st.lambdas) l = get_schmidt(r);
  if (!r.done()) throw CheckpointError("checkpoint has trailing bytes");
  return st;
}

}  // namespace opent::impdo
