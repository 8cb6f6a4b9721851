#pragma once

#include <Eigen/Dense>

#include "opent/impdo/impdo.hpp"
#include "opent/lindblad/liouvillian.hpp"
#include "opent/observables/observables.hpp"

namespace opent::edoracle {

using symtensor::Complex;
using symtensor::Matrix;

inline constexpr int kMinSites = 2;
inline constexpr int kMaxSites = 8;

/// Operator on N sites as a vector of 4^N components in the site-local basis
/// (site 0 most significant), orthonormal under Tr(x^dag y)/2^N.
struct DenseSuperket {
  int n_sites = 0;
  Eigen::VectorXcd data;
};

/// Throws std::invalid_argument unless kMinSites <= n <= kMaxSites.
void check_sites(int n);

/// Superket of a 2^N x 2^N operator and back.
DenseSuperket from_operator(const Matrix& op, int n_sites);
Matrix to_operator(const DenseSuperket& rho);

/// Product state on N sites; pair states need even N.
DenseSuperket initial_state(impdo::InitialState kind, int n_sites);

/// Tr(rho).
Complex trace(const DenseSuperket& rho);

/// (qk, qb) totals averaged with weights |c|^2 / |rho|^2.
std::pair<double, double> mean_charges(const DenseSuperket& rho);

/// Open-chain Liouvillian: the two-site generator summed over N - 1 bonds,
/// applied without storing the 4^N x 4^N matrix.
class Liouvillian {
 public:
  Liouvillian(int n_sites, const lindblad::ModelParams& params);

  int n_sites() const { return n_; }
  Eigen::Index dim() const { return dim_; }
  /// out = L in.
  void apply(const Eigen::VectorXcd& in, Eigen::VectorXcd& out) const;
  /// Upper bound on the operator norm.
  double norm_bound() const { return norm_bound_; }
  /// Full matrix; only for N <= 5.
  Matrix dense() const;

 private:
  int n_;
  Eigen::Index dim_;
  Matrix gen_;
  double norm_bound_;
};

Liouvillian build_liouvillian(int n_sites, const lindblad::ModelParams& params);

/// Apply a 16 x 16 two-site map on bond b (sites b, b + 1).
void apply_bond(Eigen::VectorXcd& v, int n_sites, int bond, const Matrix& op);

struct ExactOptions {
  double tol = 1e-12;     // local error bound per step
  int max_steps = 1000000;
  int max_terms = 60;
};

/// exp(L t) rho by Taylor steps of length at most 1 / norm_bound. Throws
/// NumericalError when a step does not reach the tolerance.
DenseSuperket evolve_exact(const DenseSuperket& rho, const Liouvillian& l, double t, const ExactOptions& opts = {});

/// The iTEBD splitting applied to the finite chain: odd-parity gates act on
/// bonds (0,1), (2,3), ...; even-parity gates on (1,2), (3,4), ....
DenseSuperket evolve_trotter(const DenseSuperket& rho, const lindblad::ModelParams& params, int n_steps);

/// Operator Schmidt spectrum at bond `cut` (between sites cut-1 and cut),
/// labelled by the charge of the left part. Values below 1e-13 of the
/// largest are dropped. When the total charge is not definite, all entries
/// are labelled (0,0).
observables::SpectrumSnapshot exact_operator_schmidt(const DenseSuperket& rho, int cut, double time = 0.0);

}  // namespace opent::edoracle
