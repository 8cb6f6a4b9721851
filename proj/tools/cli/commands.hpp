#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cli/config.hpp"

namespace opent::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,  // unexpected error, or compare outside tolerance
  kExitConfig = 2,
  kExitNumerical = 3,
  kExitIo = 4,
};

struct EvolveArgs {
  RunConfig config;
  std::optional<std::filesystem::path> resume;  // checkpoint to continue from
  bool quiet = false;
};

/// iTEBD run writing spectra/observables/sectors CSVs and run.json.
int cmd_evolve(const EvolveArgs& args, std::ostream& log);

/// The same outputs from exact evolution of a finite open chain.
int cmd_oracle(const RunConfig& config, bool quiet, std::ostream& log);

struct CompareArgs {
  std::filesystem::path run_a;
  std::filesystem::path run_b;
  double t_lo = 0.0;
  double t_hi = 1e300;
  double tol = 1e-3;    // on |dS_op|
  double p_tol = 1e-3;  // on |dp_Sz|
  std::optional<std::filesystem::path> report;  // stdout when unset
};

/// Exit 0 when every shared (bond, time) lies within tolerance, 1 otherwise.
int cmd_compare(const CompareArgs& args, std::ostream& out);

struct AnalyzeArgs {
  std::filesystem::path run_dir;
  std::optional<std::filesystem::path> out_dir;  // run_dir when unset
  int bond = 1;
  std::optional<double> tangent_dt;  // observation spacing when unset
  double alpha_lo = 20.0;
  double alpha_hi = 60.0;
  double decay_from = 0.0;
  int decay_sz = 2;  // doubled
};

/// Writes fits.csv. Fits that cannot be made are emitted as flagged rows.
int cmd_analyze(const AnalyzeArgs& args, std::ostream& log);

/// Parse the command line, dispatch, and map exceptions to exit codes.
int run_main(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace opent::cli
