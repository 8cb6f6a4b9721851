#include <Eigen/Eigenvalues>
#include <cmath>
#include <fmt/format.h>

#include "opent/errors.hpp"
#include "opent/impdo/impdo.hpp"
#include "transfer.hpp"

namespace opent::impdo {

using symtensor::Charge;
using symtensor::DenseArray;
using symtensor::Direction;
using symtensor::GradedIndex;
using symtensor::Matrix;

InitialState parse_initial_state(std::string_view name) {
  if (name == "singlet_pairs") return InitialState::SingletPairs;
  if (name == "triplet_pairs") return InitialState::TripletPairs;
  if (name == "neel") return InitialState::Neel;
  if (name == "identity") return InitialState::Identity;
  throw std::invalid_argument(fmt::format("unknown initial state '{}'", name));
}

std::string to_string(InitialState s) {
  switch (s) {
    case InitialState::SingletPairs:
      return "singlet_pairs";
    case InitialState::TripletPairs:
      return "triplet_pairs";
    case InitialState::Neel:
      return "neel";
    case InitialState::Identity:
      return "identity";
  }
  return "unknown";
}

Grading natural_grading(InitialState s) { return s == InitialState::Identity ? Grading::None : Grading::U1xU1; }

int UnitCellMPDO::chi_max_used() const { return std::max(lambdas[0].dim(), lambdas[1].dim()); }

namespace {

// Every state here is Hermitian, so sectors (qk,qb) and (qb,qk) carry equal
// spectra; truncate them to equal counts.
TruncationParams hermitian(TruncationParams t) {
  t.mirror_sectors = true;
  return t;
}

}  // namespace

Matrix pair_density(InitialState kind) {
  Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(4);
  const double r = 1.0 / std::sqrt(2.0);
  switch (kind) {
    case InitialState::SingletPairs:
      psi(1) = r;
      psi(2) = -r;
      break;
    case InitialState::TripletPairs:
      psi(1) = r;
      psi(2) = r;
      break;
    case InitialState::Neel:
      psi(1) = 1.0;
      break;
    case InitialState::Identity:
      return Matrix::Identity(4, 4) / 4.0;
  }
  return psi * psi.adjoint();
}

UnitCellMPDO init_state(InitialState kind, const ModelParams& params) {
  params.validate();
  UnitCellMPDO st;
  st.params = params;
  st.grading = natural_grading(kind);
  const Grading g = st.grading;

  const GradedIndex outer({{Charge{0, 0}, 1}}, Direction::Out);
  const GradedIndex phys = lindblad::physical_index(g, Direction::In);
  const auto v = lindblad::two_site_superket(pair_density(kind));
  DenseArray theta({1, lindblad::kLocalDim, lindblad::kLocalDim, 1});
  for (int s1 = 0; s1 < 4; ++s1)
    for (int s2 = 0; s2 < 4; ++s2) {
      const auto [c1, o1] = lindblad::locate(g, s1);
      const auto [c2, o2] = lindblad::locate(g, s2);
      const int idx[4] = {0, phys.offset(c1) + o1, phys.offset(c2) + o2, 0};
      theta.data[theta.flat(idx)] = v[s1 * 4 + s2];
    }
  const auto t = ChargeTensor::from_dense({outer.dual(), phys, phys, outer}, theta, 1e-14);
  const int rows[2] = {0, 1};
  TruncationParams tp;
  tp.chi_max = 16;
  tp.eps_trunc = 1e-24;
  auto res = symtensor::svd_truncate(t, rows, tp);
  st.gammas[0] = std::move(res.u);
  st.gammas[1] = std::move(res.v);
  st.lambdas[0] = std::move(res.s);
  st.lambdas[1] = SchmidtVector{outer, {{1.0}}};
  st.log_scale = std::log(res.norm);
  return st;
}

double apply_gate(UnitCellMPDO& st, const ChargeTensor& gate, BondParity parity, const TruncationParams& params) {
  const TruncationParams trunc = hermitian(params);
  const int l = parity == BondParity::Odd ? 0 : 1;
  const int r = 1 - l;
  const SchmidtVector& mid = st.lambdas[l];
  const SchmidtVector& out = st.lambdas[r];

  ChargeTensor a = symtensor::scale_leg(symtensor::scale_leg(st.gammas[l], 0, out), 2, mid);
  ChargeTensor b = symtensor::scale_leg(st.gammas[r], 2, out);
  const std::pair<int, int> bond[1] = {{2, 0}};
  ChargeTensor theta = symtensor::contract(a, b, bond);  // (l, s1, s2, r)
  const std::pair<int, int> phys[2] = {{1, 2}, {2, 3}};
  ChargeTensor applied = symtensor::contract(theta, gate, phys);  // (l, r, s1', s2')
  const int perm[4] = {0, 2, 3, 1};
  applied = symtensor::permute(applied, perm);

  const int rows[2] = {0, 1};
  auto res = symtensor::svd_truncate(applied, rows, trunc);
  if (!std::isfinite(res.norm) || !(res.norm > 0.0)) throw NumericalError("apply_gate: spectrum norm is not finite");
  if (res.s.dim() >= trunc.chi_max) ++st.chi_saturated;
  st.split_groups_dropped += res.split_groups_dropped;
  st.trunc_weight += res.trunc_weight;
  st.log_scale += std::log(res.norm);

  st.gammas[l] = symtensor::scale_leg(res.u, 0, out, true);
  st.gammas[r] = symtensor::scale_leg(res.v, 2, out, true);
  st.lambdas[l] = std::move(res.s);
  return res.trunc_weight;
}

namespace {

// Gamma_A lambda_A Gamma_B with legs (left, s1, s2, right).
ChargeTensor cell_tensor(const UnitCellMPDO& st) {
  const std::pair<int, int> bond[1] = {{2, 0}};
  return symtensor::contract(symtensor::scale_leg(st.gammas[0], 2, st.lambdas[0]), st.gammas[1], bond);
}

// Power iteration for the dominant fixed point of a completely positive map
// on block-diagonal matrices, normalized to unit trace.
template <class Map>
std::pair<BlockDiag, double> fixed_point(Map&& apply, const GradedIndex& bond, const CanonicalizeOptions& opts,
                                         int& iterations, bool& converged) {
  BlockDiag x = block_identity(bond);
  double eta = 0.0;
  const double tr0 = block_trace(x).real();
  for (auto& m : x) m /= tr0;
  converged = false;
  for (iterations = 1; iterations <= opts.max_iter; ++iterations) {
    BlockDiag y = apply(x);
    const symtensor::Complex tr = block_trace(y);
    if (!std::isfinite(std::abs(tr)) || std::abs(tr) == 0.0)
      throw NumericalError("canonicalize: transfer map lost its fixed point");
    eta = tr.real();
    double diff = 0.0, nrm = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
      y[k] /= tr;
      y[k] = 0.5 * (y[k] + y[k].adjoint()).eval();
      diff += (y[k] - x[k]).squaredNorm();
      nrm += y[k].squaredNorm();
    }
    x = std::move(y);
    if (std::sqrt(diff) <= opts.tol * std::sqrt(nrm)) {
      converged = true;
      break;
    }
  }
  iterations = std::min(iterations, opts.max_iter);
  return {std::move(x), eta};
}

struct Gauge {
  BlockDiag forward, inverse;
};

// Factor a positive block-diagonal matrix as F F^dag (right) or F^dag F
// (left); small eigenvalues are floored relative to the global maximum.
Gauge factorize(const BlockDiag& v, bool right, double floor_rel) {
  std::vector<symtensor::DenseEigh> eig;
  double top = 0.0;
  for (const auto& m : v) {
    eig.push_back(symtensor::eigh(m));
    if (eig.back().values.size() > 0) top = std::max(top, eig.back().values.maxCoeff());
  }
  if (!(top > 0.0)) throw NumericalError("canonicalize: fixed point is not positive");
  Gauge g;
  for (auto& e : eig) {
    Eigen::VectorXd d = e.values.cwiseMax(floor_rel * top).cwiseSqrt();
    const Matrix& w = e.vectors;
    if (right) {
      g.forward.push_back(w * d.asDiagonal());
      g.inverse.push_back(d.cwiseInverse().asDiagonal() * w.adjoint());
    } else {
      g.forward.push_back(d.asDiagonal() * w.adjoint());
      g.inverse.push_back(w * d.cwiseInverse().asDiagonal());
    }
  }
  return g;
}

}  // namespace

CanonicalizeReport canonicalize(UnitCellMPDO& st, const TruncationParams& params, const CanonicalizeOptions& opts) {
  const TruncationParams trunc = hermitian(params);
  CanonicalizeReport rep;
  const GradedIndex& bond = st.lambdas[1].bond;
  const ChargeTensor m = cell_tensor(st);
  const ChargeTensor a_right = symtensor::scale_leg(m, 3, st.lambdas[1]);
  const ChargeTensor a_left = symtensor::scale_leg(m, 0, st.lambdas[1]);

  // After the previous canonicalization both fixed points were the identity,
  // so the identity seed is the previous fixed point in the current gauge.
  bool conv_r = false, conv_l = false;
  auto [vr, eta] = fixed_point([&](const BlockDiag& x) { return right_map(a_right, x, bond); }, bond, opts,
                               rep.iterations_right, conv_r);
  auto [vl, eta_l] = fixed_point([&](const BlockDiag& y) { return left_map(a_left, y, bond); }, bond, opts,
                                 rep.iterations_left, conv_l);
  rep.converged = conv_r && conv_l;
  if (!rep.converged) ++st.canon_warnings;
  if (!(eta > 0.0) || !std::isfinite(eta)) throw NumericalError("canonicalize: non-positive transfer eigenvalue");
  rep.eta = eta;
  (void)eta_l;

  const Gauge gx = factorize(vr, true, opts.eig_floor);
  const Gauge gy = factorize(vl, false, opts.eig_floor);

  // C = Y lambda_B X, block by block, split as U sigma V^dag.
  BlockDiag c(bond.num_sectors());
  for (int k = 0; k < bond.num_sectors(); ++k) {
    Eigen::VectorXd lam = Eigen::Map<const Eigen::VectorXd>(st.lambdas[1].values[k].data(), bond.sector(k).dim);
    c[k] = gy.forward[k] * lam.asDiagonal() * gx.forward[k];
  }
  const int rows[1] = {0};
  auto split = symtensor::svd_truncate(block_tensor(bond, c), rows, trunc);
  st.trunc_weight += split.trunc_weight;
  st.split_groups_dropped += split.split_groups_dropped;

  // M' = V^dag X^-1 M Y^-1 U, rescaled so the transfer eigenvalue is one.
  const std::pair<int, int> first[1] = {{1, 0}};
  const ChargeTensor left = symtensor::contract(split.v, block_tensor(bond, gx.inverse), first);
  const ChargeTensor right = symtensor::contract(block_tensor(bond, gy.inverse), split.u, first);
  ChargeTensor mp = symtensor::contract(left, m, first);
  const std::pair<int, int> last[1] = {{3, 0}};
  mp = symtensor::contract(mp, right, last);
  mp *= split.norm / std::sqrt(eta);
  st.log_scale += 0.5 * std::log(eta);
  const SchmidtVector& lb = split.s;

  const ChargeTensor theta = symtensor::scale_leg(symtensor::scale_leg(mp, 0, lb), 3, lb);
  const int pair_rows[2] = {0, 1};
  auto res = symtensor::svd_truncate(theta, pair_rows, trunc);
  if (res.s.dim() >= trunc.chi_max) ++st.chi_saturated;
  st.trunc_weight += res.trunc_weight;
  st.split_groups_dropped += res.split_groups_dropped;
  st.log_scale += std::log(res.norm);
  st.gammas[0] = symtensor::scale_leg(res.u, 0, lb, true);
  st.gammas[1] = symtensor::scale_leg(res.v, 2, lb, true);
  st.lambdas[0] = std::move(res.s);
  st.lambdas[1] = lb;
  return rep;
}

double isometry_residual(const UnitCellMPDO& st) {
  const GradedIndex& b1 = st.lambdas[1].bond;
  const GradedIndex& b0 = st.lambdas[0].bond;
  double worst = 0.0;
  auto dev = [&](const BlockDiag& x) {
    for (const auto& m : x) {
      if (m.size() == 0) continue;
      worst = std::max(worst, (m - Matrix::Identity(m.rows(), m.cols())).cwiseAbs().maxCoeff());
    }
  };
  // Right conditions: Gamma_B lambda_B and Gamma_A lambda_A; left: lambda_B Gamma_A and lambda_A Gamma_B.
  dev(right_map(symtensor::scale_leg(st.gammas[1], 2, st.lambdas[1]), block_identity(b1), b0));
  dev(right_map(symtensor::scale_leg(st.gammas[0], 2, st.lambdas[0]), block_identity(b0), b1));
  dev(left_map(symtensor::scale_leg(st.gammas[0], 0, st.lambdas[1]), block_identity(b1), b0));
  dev(left_map(symtensor::scale_leg(st.gammas[1], 0, st.lambdas[0]), block_identity(b0), b1));
  return worst;
}

double trace_deviation(const UnitCellMPDO& st) {
  const GradedIndex& bond = st.lambdas[1].bond;
  const ChargeTensor m = symtensor::scale_leg(cell_tensor(st), 3, st.lambdas[1]);
  Matrix t = Matrix::Zero(bond.dim(), bond.dim());
  // Trace covector: sqrt(2) on the diagonal basis operators s = 0 and s = 3.
  const int diag[2] = {0, 3};
  for (int s1 : diag)
    for (int s2 : diag) {
      const auto [c1, o1] = lindblad::locate(st.grading, s1);
      const auto [c2, o2] = lindblad::locate(st.grading, s2);
      for (const auto& [key, blk] : m.blocks()) {
        if (key[1] != c1 || key[2] != c2) continue;
        const int dl = blk.shape[0], d1 = blk.shape[1], d2 = blk.shape[2], dr = blk.shape[3];
        for (int i = 0; i < dl; ++i)
          for (int j = 0; j < dr; ++j)
            t(bond.offset(key[0]) + i, bond.offset(key[3]) + j) +=
                2.0 * blk.data[((static_cast<std::size_t>(i) * d1 + o1) * d2 + o2) * dr + j];
      }
    }
  Eigen::ComplexEigenSolver<Matrix> es(t, false);
  symtensor::Complex mu = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
    if (std::abs(es.eigenvalues()(i)) > std::abs(mu)) mu = es.eigenvalues()(i);
  return std::abs(mu * std::exp(st.log_scale) - 1.0);
}

SpectrumSnapshot snapshot(const UnitCellMPDO& st, int bond) {
  if (bond != 0 && bond != 1) throw std::invalid_argument("bond must be 0 or 1");
  SpectrumSnapshot snap;
  snap.time = st.time;
  snap.bond = bond;
  for (const auto& sv : st.lambdas[bond].flatten()) snap.entries.push_back({sv.charge.qk, sv.charge.qb, sv.value});
  snap.canonicalize_order();
  snap.diag.herm_dev = observables::conjugation_asymmetry(snap);
  snap.diag.trunc_weight = st.trunc_weight;
  return snap;
}

void evolve(UnitCellMPDO& st, const lindblad::LiouvillianGate& gates, const EvolveOptions& opts,
            const ObservationSink& sink) {
  if (!(opts.t_max > 0.0)) throw std::invalid_argument("t_max must be positive");
  if (opts.observe_every < 1) throw std::invalid_argument("observe_every must be at least 1");
  if (gates.grading() != st.grading) throw std::invalid_argument("gate grading does not match the state");
  if (!(gates.params() == st.params)) throw std::invalid_argument("gate parameters do not match the state");
  const double dt = st.params.dt;

  auto emit = [&](const CanonicalizeReport& rep) {
    if (!sink) return;
    Observation obs;
    obs.step = st.steps;
    obs.time = st.time;
    obs.canon = rep;
    const double tdev = trace_deviation(st);
    for (int b = 0; b < 2; ++b) {
      obs.bonds[b] = snapshot(st, b);
      obs.bonds[b].diag.trace_dev = tdev;
    }
    sink(obs);
  };

  if (opts.observe_start) emit({});
  while (st.time < opts.t_max - 1e-9 * dt) {
    for (const auto& step : gates.schedule()) apply_gate(st, gates.gate(step.tau), step.parity, opts.trunc);
    const CanonicalizeReport rep = canonicalize(st, opts.trunc, opts.canon);
    ++st.steps;
    st.time = static_cast<double>(st.steps) * dt;
    for (const auto& lam : st.lambdas)
      for (const auto& sec : lam.values)
        for (double x : sec)
          if (!std::isfinite(x)) throw NumericalError(fmt::format("non-finite Schmidt value at t={}", st.time));
    if (st.steps % opts.observe_every == 0) emit(rep);
  }
}

}  // namespace opent::impdo
