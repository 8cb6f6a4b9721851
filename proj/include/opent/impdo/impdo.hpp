#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "opent/lindblad/liouvillian.hpp"
#include "opent/observables/observables.hpp"
#include "opent/symtensor/linalg.hpp"

namespace opent::impdo {

using lindblad::BondParity;
using lindblad::Grading;
using lindblad::ModelParams;
using observables::SpectrumSnapshot;
using symtensor::ChargeTensor;
using symtensor::SchmidtVector;
using symtensor::TruncationParams;

enum class InitialState { SingletPairs, TripletPairs, Neel, Identity };

/// Parses "singlet_pairs", "triplet_pairs", "neel" or "identity"; throws
/// std::invalid_argument otherwise.
InitialState parse_initial_state(std::string_view name);
std::string to_string(InitialState s);

/// Grading able to hold the state at finite bond dimension. The identity
/// carries every magnetization on every bond, so it needs Grading::None.
Grading natural_grading(InitialState s);

/// Two-site infinite MPDO in Vidal form:
///   ... gammas[0] lambdas[0] gammas[1] lambdas[1] gammas[0] ...
/// Bond 0 sits inside a pair, bond 1 between pairs. Gamma legs are
/// (left bond In, physical In, right bond Out); each lambda's index is the
/// right leg of the gamma to its left. The physical density matrix per unit
/// cell is exp(log_scale) times the normalized tensors.
struct UnitCellMPDO {
  std::array<ChargeTensor, 2> gammas;
  std::array<SchmidtVector, 2> lambdas;
  ModelParams params;
  Grading grading = Grading::U1xU1;

  std::int64_t steps = 0;  // completed full time steps
  double time = 0.0;
  double log_scale = 0.0;
  double trunc_weight = 0.0;             // accumulated over all truncations
  std::int64_t split_groups_dropped = 0;  // degenerate groups removed whole
  std::int64_t chi_saturated = 0;         // truncations that hit chi_max
  std::int64_t canon_warnings = 0;        // fixed-point searches that did not converge

  int chi_max_used() const;
};

/// Density matrix of one pair (sites 2i, 2i + 1) in the (a1 a2) basis.
symtensor::Matrix pair_density(InitialState kind);

/// Exact product-state MPDO of the given kind, graded as `natural_grading`.
UnitCellMPDO init_state(InitialState kind, const ModelParams& params);

/// Apply one two-site gate on every bond of the given parity (odd: inside
/// pairs, even: between pairs) and truncate. Returns the truncation weight.
double apply_gate(UnitCellMPDO& state, const ChargeTensor& gate, BondParity parity, const TruncationParams& trunc);

struct CanonicalizeOptions {
  double tol = 1e-12;
  int max_iter = 10000;
  double eig_floor = 1e-14;  // relative floor on fixed-point eigenvalues
};

struct CanonicalizeReport {
  int iterations_right = 0;
  int iterations_left = 0;
  bool converged = true;
  double eta = 1.0;  // dominant eigenvalue of the cell transfer map
};

/// Bring the state to canonical form by transfer-map fixed points. Schmidt
/// vectors are renormalized and the scale goes into log_scale.
CanonicalizeReport canonicalize(UnitCellMPDO& state, const TruncationParams& trunc,
                                const CanonicalizeOptions& opts = {});

/// Largest deviation of the left and right cell transfer maps, applied to
/// the identity, from the identity.
double isometry_residual(const UnitCellMPDO& state);

/// |mu exp(log_scale) - 1| with mu the dominant eigenvalue of the transfer
/// matrix built from the identity covector on both sites of the cell.
double trace_deviation(const UnitCellMPDO& state);

/// Charge-labelled spectrum of bond 0 or 1 with diagnostics filled in.
SpectrumSnapshot snapshot(const UnitCellMPDO& state, int bond);

struct Observation {
  std::int64_t step = 0;
  double time = 0.0;
  std::array<SpectrumSnapshot, 2> bonds;
  CanonicalizeReport canon;
};

using ObservationSink = std::function<void(const Observation&)>;

struct EvolveOptions {
  double t_max = 1.0;
  int observe_every = 1;
  bool observe_start = true;  // emit the state before the first step
  TruncationParams trunc;
  CanonicalizeOptions canon;
};

/// Run full Trotter steps until time >= t_max, canonicalizing after each.
/// Throws NumericalError on blow-up.
void evolve(UnitCellMPDO& state, const lindblad::LiouvillianGate& gates, const EvolveOptions& opts,
            const ObservationSink& sink);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void checkpoint_save(const UnitCellMPDO& state, const std::filesystem::path& path);
UnitCellMPDO checkpoint_load(const std::filesystem::path& path);

}  // namespace opent::impdo
