#pragma once

#include <limits>
#include <map>
#include <vector>

namespace opent::observables {

/// One Schmidt value with the (doubled) charges of its bond sector.
struct SpectrumEntry {
  int qk = 0;
  int qb = 0;
  double lambda = 0.0;

  bool operator==(const SpectrumEntry&) const = default;
};

struct Diagnostics {
  double trace_dev = 0.0;
  double herm_dev = 0.0;
  double trunc_weight = 0.0;
  int chi_used = 0;
};

/// Charge-labelled Schmidt spectrum at one bond and time.
struct SpectrumSnapshot {
  double time = 0.0;
  int bond = 0;
  std::vector<SpectrumEntry> entries;  // descending in lambda
  Diagnostics diag;

  /// Sort descending (stable; ties keep charge order) and fill chi_used.
  void canonicalize_order();
};

/// Which charge component labels a sector. Ket follows left multiplication,
/// Bra right multiplication, Adjoint the difference qk - qb (conjugation by a
/// rotation). All labels are doubled magnetizations.
enum class SectorLabel { Ket, Bra, Adjoint };

int label_of(const SpectrumEntry& e, SectorLabel label);

/// Probabilities with at most this weight are left out of resolved reports.
inline constexpr double kReportThreshold = 1e-4;

double sum_squares(const SpectrumSnapshot& snap);

/// -sum lambda^2 log2 lambda^2. Throws std::invalid_argument when the
/// squares do not sum to one within 1e-8.
double operator_entanglement(const SpectrumSnapshot& snap);

/// Sector label (doubled) -> probability.
std::map<int, double> sector_probabilities(const SpectrumSnapshot& snap, SectorLabel label = SectorLabel::Ket);

/// Sector label (doubled) -> entropy of the renormalized sector spectrum.
/// Sectors with zero probability are omitted.
std::map<int, double> resolved_entanglement(const SpectrumSnapshot& snap, SectorLabel label = SectorLabel::Ket);

/// -sum p log2 p, with 0 log 0 = 0.
double shannon(const std::map<int, double>& probs);

/// |S_op - (sum p S_q - sum p log2 p)|.
double check_decomposition(const SpectrumSnapshot& snap, SectorLabel label = SectorLabel::Ket);

/// Largest mismatch between the spectrum and its image under qk <-> qb,
/// comparing sorted sector spectra entry by entry.
double conjugation_asymmetry(const SpectrumSnapshot& snap);

struct Multiplet {
  int two_s = 0;
  double lambda_sq = 0.0;    // mean of the member lambda^2
  std::vector<int> members;  // entry positions, from label +2S down to -2S
};

struct MultipletTable {
  std::vector<Multiplet> multiplets;
  std::vector<int> unmatched;  // entry positions left without a multiplet
  double residual = 0.0;       // worst relative mismatch; infinity if unmatched
  std::map<int, double> p_s;     // doubled S -> probability
  std::map<int, double> s_op_s;  // doubled S -> spin-resolved entanglement
};

/// max(1e-6, 10 sqrt(trunc_weight)).
double default_eps_mult(double trunc_weight);

/// Group degenerate entries into spin multiplets, seeding from the largest
/// |label| down. Partners further than eps_mult (relative) are not accepted.
MultipletTable detect_multiplets(const SpectrumSnapshot& snap, double eps_mult,
                                 SectorLabel label = SectorLabel::Ket);

/// max over S of |p_S - (2S+1)(p_{Sz=S} - p_{Sz=S+1})|.
double spin_relation_residual(const MultipletTable& table, const SpectrumSnapshot& snap,
                              SectorLabel label = SectorLabel::Ket);

struct SpinSectorResiduals {
  double probability = 0.0;
  double entanglement = 0.0;
};

/// Rebuild p_Sz and S_op,Sz from the spin-sector data and compare with the
/// values computed directly from the spectrum.
SpinSectorResiduals check_spin_sector_relations(const std::map<int, double>& p_s,
                                                const std::map<int, double>& s_op_s,
                                                const SpectrumSnapshot& snap,
                                                SectorLabel label = SectorLabel::Ket);

/// Subtract the Sz = 0 value at every time. Throws std::invalid_argument when
/// a time slice has no Sz = 0 sector.
std::vector<std::map<int, double>> delta_resolved(const std::vector<std::map<int, double>>& series);

}  // namespace opent::observables
