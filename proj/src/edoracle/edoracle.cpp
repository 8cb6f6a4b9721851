#include "opent/edoracle/edoracle.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <map>
#include <set>
#include <stdexcept>

#include "opent/errors.hpp"

namespace opent::edoracle {

using symtensor::Charge;

namespace {

Eigen::Index pow4(int n) { return Eigen::Index{1} << (2 * n); }

using RowMajor = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Total charge of a basis index on n sites.
Charge charge_of(Eigen::Index idx, int n) {
  Charge c{0, 0};
  for (int k = 0; k < n; ++k) {
    c = c + lindblad::local_charge(static_cast<int>(idx & 3));
    idx >>= 2;
  }
  return c;
}

// Apply `op` to the pair of site indices at bond b for every surrounding configuration.
void apply_pair(const Eigen::VectorXcd& in, Eigen::VectorXcd& out, int n, int b, const Matrix& op, bool accumulate) {
  const Eigen::Index pre = pow4(b);
  const Eigen::Index post = pow4(n - b - 2);
  for (Eigen::Index p = 0; p < pre; ++p) {
    const Eigen::Index off = p * 16 * post;
    Eigen::Map<const RowMajor> src(in.data() + off, 16, post);
    Eigen::Map<RowMajor> dst(out.data() + off, 16, post);
    if (accumulate)
      dst.noalias() += op * src;
    else
      dst.noalias() = op * src;
  }
}

}  // namespace

void check_sites(int n) {
  if (n < kMinSites || n > kMaxSites)
    throw std::invalid_argument(fmt::format("n_sites must lie in [{}, {}], got {}", kMinSites, kMaxSites, n));
}

DenseSuperket from_operator(const Matrix& op, int n) {
  check_sites(n);
  const Eigen::Index d = Eigen::Index{1} << n;
  if (op.rows() != d || op.cols() != d)
    throw std::invalid_argument(fmt::format("operator must be {}x{} for {} sites", d, d, n));
  DenseSuperket out{n, Eigen::VectorXcd(pow4(n))};
  const double scale = std::pow(2.0, -0.5 * n);
  for (Eigen::Index idx = 0; idx < pow4(n); ++idx) {
    Eigen::Index a = 0, b = 0;
    for (int k = 0; k < n; ++k) {
      const int s = static_cast<int>((idx >> (2 * (n - 1 - k))) & 3);
      a = (a << 1) | lindblad::ket_of(s);
      b = (b << 1) | lindblad::bra_of(s);
    }
    out.data(idx) = op(a, b) * scale;
  }
  return out;
}

Matrix to_operator(const DenseSuperket& rho) {
  const int n = rho.n_sites;
  check_sites(n);
  const Eigen::Index d = Eigen::Index{1} << n;
  Matrix op(d, d);
  const double scale = std::pow(2.0, 0.5 * n);
  for (Eigen::Index idx = 0; idx < pow4(n); ++idx) {
    Eigen::Index a = 0, b = 0;
    for (int k = 0; k < n; ++k) {
      const int s = static_cast<int>((idx >> (2 * (n - 1 - k))) & 3);
      a = (a << 1) | lindblad::ket_of(s);
      b = (b << 1) | lindblad::bra_of(s);
    }
    op(a, b) = rho.data(idx) * scale;
  }
  return op;
}

DenseSuperket initial_state(impdo::InitialState kind, int n) {
  check_sites(n);
  if (n % 2 != 0) throw std::invalid_argument("pair initial states need an even number of sites");
  const Matrix pair = impdo::pair_density(kind);
  Matrix op = Matrix::Ones(1, 1);
  for (int p = 0; p < n / 2; ++p) {
    Matrix next(op.rows() * 4, op.cols() * 4);
    for (Eigen::Index i = 0; i < op.rows(); ++i)
      for (Eigen::Index j = 0; j < op.cols(); ++j) next.block(i * 4, j * 4, 4, 4) = op(i, j) * pair;
    op = std::move(next);
  }
  return from_operator(op, n);
}

Complex trace(const DenseSuperket& rho) { return to_operator(rho).trace(); }

std::pair<double, double> mean_charges(const DenseSuperket& rho) {
  double w = 0.0, qk = 0.0, qb = 0.0;
  for (Eigen::Index idx = 0; idx < rho.data.size(); ++idx) {
    const double p = std::norm(rho.data(idx));
    const Charge c = charge_of(idx, rho.n_sites);
    w += p;
    qk += p * c.qk;
    qb += p * c.qb;
  }
  return {qk / w, qb / w};
}

Liouvillian::Liouvillian(int n, const lindblad::ModelParams& params) : n_(n), dim_(0) {
  check_sites(n);
  params.validate();
  dim_ = pow4(n);
  gen_ = lindblad::exchange_superop(params);
  const double bond_norm = Eigen::JacobiSVD<Matrix>(gen_).singularValues()(0);
  norm_bound_ = (n - 1) * bond_norm;
}

void Liouvillian::apply(const Eigen::VectorXcd& in, Eigen::VectorXcd& out) const {
  out.setZero(dim_);
  for (int b = 0; b + 1 < n_; ++b) apply_pair(in, out, n_, b, gen_, true);
}

Matrix Liouvillian::dense() const {
  if (n_ > 5) throw std::invalid_argument("dense Liouvillian is limited to 5 sites");
  Matrix m(dim_, dim_);
  Eigen::VectorXcd e = Eigen::VectorXcd::Zero(dim_), col(dim_);
  for (Eigen::Index j = 0; j < dim_; ++j) {
    e(j) = 1.0;
    apply(e, col);
    m.col(j) = col;
    e(j) = 0.0;
  }
  return m;
}

Liouvillian build_liouvillian(int n, const lindblad::ModelParams& params) { return Liouvillian(n, params); }

void apply_bond(Eigen::VectorXcd& v, int n, int bond, const Matrix& op) {
  if (bond < 0 || bond + 1 >= n) throw std::out_of_range(fmt::format("bond {} outside a {}-site chain", bond, n));
  if (op.rows() != 16 || op.cols() != 16) throw std::invalid_argument("bond operator must be 16x16");
  Eigen::VectorXcd out(v.size());
  apply_pair(v, out, n, bond, op, false);
  v.swap(out);
}

DenseSuperket evolve_exact(const DenseSuperket& rho, const Liouvillian& l, double t, const ExactOptions& opts) {
  if (rho.n_sites != l.n_sites()) throw std::invalid_argument("state and Liouvillian differ in size");
  if (!(t >= 0.0) || !std::isfinite(t)) throw std::invalid_argument(fmt::format("t must be finite and >= 0, got {}", t));
  DenseSuperket out = rho;
  const double h_max = 1.0 / l.norm_bound();
  Eigen::VectorXcd term(l.dim()), next(l.dim());
  double done = 0.0;
  int steps = 0;
  while (done < t) {
    if (++steps > opts.max_steps) throw NumericalError("exact evolution exceeded its step budget");
    const double h = std::min(h_max, t - done);
    term = out.data;
    const double ref = out.data.norm();
    bool converged = false;
    for (int k = 1; k <= opts.max_terms; ++k) {
      l.apply(term, next);
      term = next * (h / k);
      out.data += term;
      if (term.norm() <= opts.tol * ref) {
        converged = true;
        break;
      }
    }
    if (!converged) throw NumericalError(fmt::format("Taylor step at t = {} did not reach tolerance {}", done, opts.tol));
    done += h;
  }
  return out;
}

DenseSuperket evolve_trotter(const DenseSuperket& rho, const lindblad::ModelParams& params, int n_steps) {
  params.validate();
  if (n_steps < 0) throw std::invalid_argument("n_steps must be >= 0");
  const Matrix gen = lindblad::exchange_superop(params);
  const auto schedule = lindblad::trotter_schedule(params.dt);
  std::map<double, Matrix> gates;
  for (const auto& step : schedule)
    if (!gates.contains(step.tau)) gates.emplace(step.tau, symtensor::dense_expm(gen * step.tau));
  DenseSuperket out = rho;
  for (int n = 0; n < n_steps; ++n)
    for (const auto& step : schedule) {
      const int first = step.parity == lindblad::BondParity::Odd ? 0 : 1;
      for (int b = first; b + 1 < rho.n_sites; b += 2) apply_bond(out.data, rho.n_sites, b, gates.at(step.tau));
    }
  return out;
}

observables::SpectrumSnapshot exact_operator_schmidt(const DenseSuperket& rho, int cut, double time) {
  const int n = rho.n_sites;
  check_sites(n);
  if (cut < 1 || cut >= n) throw std::out_of_range(fmt::format("cut {} outside a {}-site chain", cut, n));
  const Eigen::Index rows = pow4(cut), cols = pow4(n - cut);
  Eigen::Map<const RowMajor> m(rho.data.data(), rows, cols);

  std::vector<Charge> lc(rows), rc(cols);
  for (Eigen::Index i = 0; i < rows; ++i) lc[i] = charge_of(i, cut);
  for (Eigen::Index j = 0; j < cols; ++j) rc[j] = charge_of(j, n - cut);

  const double cutoff = 1e-14 * m.cwiseAbs().maxCoeff();
  std::set<std::pair<int, int>> totals;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      if (std::abs(m(i, j)) > cutoff) totals.insert({lc[i].qk + rc[j].qk, lc[i].qb + rc[j].qb});

  observables::SpectrumSnapshot snap;
  snap.time = time;
  snap.bond = cut;
  std::vector<observables::SpectrumEntry> raw;
  if (totals.size() == 1) {
    const Charge total{totals.begin()->first, totals.begin()->second};
    std::map<std::pair<int, int>, std::vector<Eigen::Index>> by_left;
    for (Eigen::Index i = 0; i < rows; ++i) by_left[{lc[i].qk, lc[i].qb}].push_back(i);
    for (const auto& [key, ri] : by_left) {
      const Charge want{total.qk - key.first, total.qb - key.second};
      std::vector<Eigen::Index> ci;
      for (Eigen::Index j = 0; j < cols; ++j)
        if (rc[j] == want) ci.push_back(j);
      if (ci.empty()) continue;
      Matrix blk(static_cast<Eigen::Index>(ri.size()), static_cast<Eigen::Index>(ci.size()));
      for (std::size_t a = 0; a < ri.size(); ++a)
        for (std::size_t b = 0; b < ci.size(); ++b) blk(a, b) = m(ri[a], ci[b]);
      const Eigen::VectorXd s = Eigen::BDCSVD<Matrix>(blk).singularValues();
      for (Eigen::Index k = 0; k < s.size(); ++k) raw.push_back({key.first, key.second, s(k)});
    }
  } else {
    const Eigen::VectorXd s = Eigen::BDCSVD<Matrix>(Matrix(m)).singularValues();
    for (Eigen::Index k = 0; k < s.size(); ++k) raw.push_back({0, 0, s(k)});
  }

  double top = 0.0, norm2 = 0.0;
  for (const auto& e : raw) {
    top = std::max(top, e.lambda);
    norm2 += e.lambda * e.lambda;
  }
  const double scale = 1.0 / std::sqrt(norm2);
  for (const auto& e : raw)
    if (e.lambda > 1e-13 * top) snap.entries.push_back({e.qk, e.qb, e.lambda * scale});
  snap.canonicalize_order();
  snap.diag.trace_dev = std::abs(trace(rho) - 1.0);
  snap.diag.herm_dev = observables::conjugation_asymmetry(snap);
  return snap;
}

}  // namespace opent::edoracle
