#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "opent/impdo/impdo.hpp"

namespace opent::cli {

inline constexpr int kSchemaVersion = 1;

/// Invalid or unreadable configuration; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OracleSettings {
  int n_sites = 8;
  double tol = 1e-12;
  bool operator==(const OracleSettings&) const = default;
};

struct RunConfig {
  lindblad::ModelParams model;
  impdo::InitialState state = impdo::InitialState::SingletPairs;
  int chi_max = 256;
  double eps_trunc = 1e-12;
  double t_max = 10.0;
  int observe_every = 1;
  std::vector<int> bonds = {0, 1};
  std::string output_dir = "run";
  int checkpoint_every = 0;  // full steps between checkpoints; 0 disables
  std::optional<OracleSettings> oracle;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// Parse a JSON document. Unknown keys and a missing or different
/// schema_version are errors.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical JSON: fixed key order, two-space indent, shortest round-trip
/// number formatting, trailing newline.
std::string serialize_config(const RunConfig& cfg);

}  // namespace opent::cli
