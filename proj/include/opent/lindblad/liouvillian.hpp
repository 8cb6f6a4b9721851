#pragma once

#include <map>
#include <vector>

#include "opent/symtensor/charge_tensor.hpp"
#include "opent/symtensor/linalg.hpp"

namespace opent::lindblad {

using symtensor::ChargeTensor;
using symtensor::Complex;
using symtensor::Matrix;

/// Exchange coupling and dissipation, both in units where J sets 1/time.
struct ModelParams {
  double J = 1.0;
  double gamma = 0.25;
  double dt = 0.5;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  bool operator==(const ModelParams&) const = default;
};

/// How the physical operator-space leg is graded.
enum class Grading {
  U1xU1,  // four one-dimensional sectors, (qk, qb) = (2m_ket, 2m_bra)
  None,   // one four-dimensional sector of charge (0,0)
};

// Single-site operator basis: s = 2a + b is sqrt(2)|a><b|, a,b in {0 = up, 1 = down}.
// It is orthonormal under <x|y> = Tr(x^dag y)/2.
constexpr int kLocalDim = 4;
constexpr int ket_of(int s) { return s / 2; }
constexpr int bra_of(int s) { return s % 2; }
constexpr int doubled_m(int spin) { return spin == 0 ? 1 : -1; }

symtensor::Charge local_charge(int s);
symtensor::GradedIndex physical_index(Grading g, symtensor::Direction dir);
/// (sector ordinal, offset inside sector) of basis state s on the graded leg.
std::pair<int, int> locate(Grading g, int s);

/// 16x16 two-site generator acting on superkets indexed by s1*4 + s2:
/// -iJ(P x I - I x P^T) + gamma(P x conj(P) - I) after reordering the
/// vectorized (ket1 ket2, bra1 bra2) layout into site-local pairs.
Matrix exchange_superop(const ModelParams& params);

/// Two-site swap P in the (a1 a2) ket basis.
Matrix swap_operator();

enum class BondParity { Odd, Even };

struct TrotterStep {
  BondParity parity;
  double tau;
  bool operator==(const TrotterStep&) const = default;
};

/// Fourth-order splitting U(t1)U(t2)U(t3)U(t2)U(t1), each U(t) being
/// odd(t/2) even(t) odd(t/2), flattened with adjacent odd half-steps merged.
std::vector<TrotterStep> trotter_schedule(double dt);

/// exp(generator * tau) as a four-leg gate (out1, out2, in1, in2). The output
/// legs point In and the input legs Out, so the input legs contract directly
/// with the physical legs of an MPDO tensor.
ChargeTensor make_gate(const Matrix& generator, double tau, Grading g);

/// Generator, schedule, and the exponentials for each distinct tau.
class LiouvillianGate {
 public:
  LiouvillianGate(const ModelParams& params, Grading g);

  const Matrix& generator() const { return generator_; }
  const std::vector<TrotterStep>& schedule() const { return schedule_; }
  const ModelParams& params() const { return params_; }
  Grading grading() const { return grading_; }
  const ChargeTensor& gate(double tau) const;
  std::size_t cached() const { return cache_.size(); }

 private:
  ModelParams params_;
  Grading grading_;
  Matrix generator_;
  std::vector<TrotterStep> schedule_;
  std::map<double, ChargeTensor> cache_;
};

/// Superket (16 components, s1*4 + s2) of a two-site operator given as a 4x4
/// matrix in the (a1 a2) basis, with the Tr(x^dag y)/4 inner product.
std::vector<Complex> two_site_superket(const Matrix& op);
Matrix two_site_operator(const std::vector<Complex>& superket);

}  // namespace opent::lindblad
