#include "cli/io.hpp"

#include <fmt/format.h>

#include <cmath>
#include <sstream>

namespace opent::cli {

namespace fs = std::filesystem;
namespace obs = opent::observables;

std::string num(double v) { return fmt::format("{}", v); }

SnapshotRows format_snapshot(const obs::SpectrumSnapshot& snap) {
  SnapshotRows r;
  const std::string key = fmt::format("{},{}", num(snap.time), snap.bond);
  for (const auto& e : snap.entries) r.spectra += fmt::format("{},{},{},{}\n", key, e.qk, e.qb, num(e.lambda));

  const auto p_sz = obs::sector_probabilities(snap, obs::SectorLabel::Ket);
  const auto s_sz = obs::resolved_entanglement(snap, obs::SectorLabel::Ket);
  const auto& d = snap.diag;
  r.observables = fmt::format("{},{},{},{},{},{},{}\n", key, num(obs::operator_entanglement(snap)),
                              num(obs::shannon(p_sz)), num(d.trace_dev), num(d.herm_dev), num(d.trunc_weight),
                              d.chi_used);

  for (const auto& [q, p] : p_sz) {
    const auto it = s_sz.find(q);
    const bool report = p > obs::kReportThreshold && it != s_sz.end();
    r.sectors += fmt::format("{},Sz,{},{},{}\n", key, q, num(p), report ? num(it->second) : "");
  }
  const auto table = obs::detect_multiplets(snap, obs::default_eps_mult(d.trunc_weight));
  if (table.unmatched.empty()) {
    for (const auto& [two_s, p] : table.p_s) {
      const auto it = table.s_op_s.find(two_s);
      const bool report = p > obs::kReportThreshold && it != table.s_op_s.end();
      r.sectors += fmt::format("{},S,{},{},{}\n", key, two_s, num(p), report ? num(it->second) : "");
    }
  }
  return r;
}

void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write {}", tmp.string()));
    out << text;
    out.flush();
    if (!out) throw IoError(fmt::format("write to {} failed", tmp.string()));
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError(fmt::format("cannot rename {} to {}: {}", tmp.string(), path.string(), ec.message()));
}

PartialFile::PartialFile(fs::path path, const std::string& header) : path_(std::move(path)) {
  out_.open(partial_path(), std::ios::binary | std::ios::trunc);
  if (!out_) throw IoError(fmt::format("cannot write {}", partial_path().string()));
  out_ << header << '\n';
}

fs::path PartialFile::partial_path() const { return path_.string() + ".partial"; }

void PartialFile::append(const std::string& rows) {
  out_ << rows;
  if (!out_) throw IoError(fmt::format("write to {} failed", partial_path().string()));
}

void PartialFile::flush() {
  out_.flush();
  if (!out_) throw IoError(fmt::format("flush of {} failed", partial_path().string()));
}

void PartialFile::commit() {
  flush();
  out_.close();
  std::error_code ec;
  fs::rename(partial_path(), path_, ec);
  if (ec) throw IoError(fmt::format("cannot rename {}: {}", partial_path().string(), ec.message()));
}

void PartialFile::discard() {
  if (out_.is_open()) out_.close();
}

namespace {

// Data rows of an earlier output with time <= t_cut, in file order.
std::string previous_rows(const fs::path& final_path, const std::string& header, double t_cut) {
  fs::path src = final_path;
  if (!fs::exists(src)) src = final_path.string() + ".partial";
  if (!fs::exists(src)) return {};
  std::ifstream in(src, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot read {}", src.string()));
  std::string line, out;
  if (!std::getline(in, line) || line != header)
    throw IoError(fmt::format("{} does not start with the expected header", src.string()));
  const double tol = 1e-9 * std::max(1.0, std::abs(t_cut));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    double t = 0.0;
    try {
      t = std::stod(line.substr(0, comma));
    } catch (const std::exception&) {
      break;  // torn final line of an interrupted write
    }
    if (comma == std::string::npos || t > t_cut + tol) continue;
    out += line;
    out += '\n';
  }
  return out;
}

}  // namespace

RunWriter::RunWriter(const fs::path& dir, std::optional<double> seed_cut) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
  struct Spec {
    std::optional<PartialFile>* file;
    const char* name;
    const char* header;
  };
  const Spec specs[] = {{&spectra_, kSpectraFile, kSpectraHeader},
                        {&observables_, kObservablesFile, kObservablesHeader},
                        {&sectors_, kSectorsFile, kSectorsHeader}};
  std::string seeded[3];
  if (seed_cut)
    for (int i = 0; i < 3; ++i) seeded[i] = previous_rows(dir / specs[i].name, specs[i].header, *seed_cut);
  for (int i = 0; i < 3; ++i) {
    // A stale final file must not survive a run that later fails.
    fs::remove(dir / specs[i].name, ec);
    specs[i].file->emplace(dir / specs[i].name, specs[i].header);
    (*specs[i].file)->append(seeded[i]);
  }
  thread_ = std::thread([this] { loop(); });
}

RunWriter::~RunWriter() {
  try {
    abort();
  } catch (...) {
  }
}

void RunWriter::loop() {
  std::unique_lock lock(mu_);
  for (;;) {
    cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
    if (queue_.empty()) return;
    auto batch = std::move(queue_.front());
    queue_.pop_front();
    busy_ = true;
    lock.unlock();
    std::exception_ptr err;
    try {
      for (const auto& snap : batch) {
        const auto rows = format_snapshot(snap);
        spectra_->append(rows.spectra);
        observables_->append(rows.observables);
        sectors_->append(rows.sectors);
      }
    } catch (...) {
      err = std::current_exception();
    }
    lock.lock();
    busy_ = false;
    if (err && !error_) error_ = err;
    rows_ += batch.size();
    cv_.notify_all();
  }
}

void RunWriter::push(std::vector<obs::SpectrumSnapshot> snaps) {
  std::lock_guard lock(mu_);
  if (error_) std::rethrow_exception(error_);
  queue_.push_back(std::move(snaps));
  cv_.notify_all();
}

void RunWriter::sync() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return queue_.empty() && !busy_; });
  if (error_) std::rethrow_exception(error_);
  spectra_->flush();
  observables_->flush();
  sectors_->flush();
}

void RunWriter::stop() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
    cv_.notify_all();
  }
  if (thread_.joinable()) thread_.join();
}

void RunWriter::commit() {
  sync();
  stop();
  spectra_->commit();
  observables_->commit();
  sectors_->commit();
}

void RunWriter::abort() {
  stop();
  for (auto* f : {&spectra_, &observables_, &sectors_})
    if (*f) (*f)->discard();
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw IoError(fmt::format("column '{}' is missing", name));
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot read {}", path.string()));
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw IoError(fmt::format("{} is empty", path.string()));
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split(line);
    if (row.size() != t.header.size())
      throw IoError(fmt::format("{}: row has {} fields, header has {}", path.string(), row.size(), t.header.size()));
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace opent::cli
