#pragma once

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "opent/observables/observables.hpp"

namespace opent::cli {

/// Filesystem failure; maps to exit code 4.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kSpectraHeader = "time,bond,qk,qb,lambda";
inline constexpr const char* kObservablesHeader =
    "time,bond,S_op,shannon_Sz,trace_dev,herm_dev,trunc_weight,chi_used";
inline constexpr const char* kSectorsHeader = "time,bond,sector_type,sector_value,p,S_resolved";
inline constexpr const char* kFitsHeader = "kind,bond,time,window_lo,window_hi,params,residual,status,note";

inline constexpr const char* kSpectraFile = "spectra.csv";
inline constexpr const char* kObservablesFile = "observables.csv";
inline constexpr const char* kSectorsFile = "sectors.csv";
inline constexpr const char* kFitsFile = "fits.csv";
inline constexpr const char* kRunFile = "run.json";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";

/// Shortest representation that parses back to the same double.
std::string num(double v);

/// CSV rows describing one snapshot, each ending in a newline.
struct SnapshotRows {
  std::string spectra;
  std::string observables;
  std::string sectors;
};
SnapshotRows format_snapshot(const observables::SpectrumSnapshot& snap);

/// Write `text` to `path` through a temporary file and a rename.
void write_atomic(const std::filesystem::path& path, const std::string& text);

/// A CSV under construction as `<path>.partial`; commit() renames it into place.
class PartialFile {
 public:
  PartialFile(std::filesystem::path path, const std::string& header);
  void append(const std::string& rows);
  void flush();
  void commit();
  void discard();
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path partial_path() const;

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

/// The three per-snapshot CSVs, fed from a queue drained by a writer thread
/// so formatting and disk I/O stay off the evolution loop. Rows are written
/// in push order.
class RunWriter {
 public:
  /// With `seed_cut`, rows with time <= seed_cut are first copied from an
  /// earlier run in `dir` (final files if present, partial files otherwise).
  explicit RunWriter(const std::filesystem::path& dir, std::optional<double> seed_cut = std::nullopt);
  ~RunWriter();
  RunWriter(const RunWriter&) = delete;
  RunWriter& operator=(const RunWriter&) = delete;

  void push(std::vector<observables::SpectrumSnapshot> snaps);
  /// Block until every pushed snapshot is on disk. Rethrows writer errors.
  void sync();
  /// Sync, then move the finished files to their final names.
  void commit();
  /// Stop the writer and leave the partial files for a later resume.
  void abort();
  std::size_t rows_written() const { return rows_; }

 private:
  void loop();
  void stop();

  std::optional<PartialFile> spectra_, observables_, sectors_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::vector<observables::SpectrumSnapshot>> queue_;
  bool busy_ = false;
  bool stopping_ = false;
  std::exception_ptr error_;
  std::size_t rows_ = 0;
  std::thread thread_;
};

/// Header plus rows of a comma-separated file without quoting.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  /// Column position; throws IoError when missing.
  std::size_t column(const std::string& name) const;
};
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace opent::cli
