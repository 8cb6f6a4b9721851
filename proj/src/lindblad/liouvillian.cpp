#include "opent/lindblad/liouvillian.hpp"

#include <cmath>
#include <fmt/format.h>
#include <stdexcept>

#include "opent/errors.hpp"

namespace opent::lindblad {

using symtensor::Charge;
using symtensor::DenseArray;
using symtensor::Direction;
using symtensor::GradedIndex;

void ModelParams::validate() const {
  if (!(J > 0.0) || !std::isfinite(J)) throw std::invalid_argument(fmt::format("J must be positive (got {})", J));
  if (!(gamma >= 0.0) || !std::isfinite(gamma))
    throw std::invalid_argument(fmt::format("gamma must be non-negative (got {})", gamma));
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument(fmt::format("dt must be positive (got {})", dt));
}

Charge local_charge(int s) { return {doubled_m(ket_of(s)), doubled_m(bra_of(s))}; }

GradedIndex physical_index(Grading g, Direction dir) {
  if (g == Grading::None) return GradedIndex({{{0, 0}, kLocalDim}}, dir);
  std::vector<symtensor::Sector> s;
  for (int b = 0; b < kLocalDim; ++b) s.push_back({local_charge(b), 1});
  return GradedIndex(s, dir);
}

std::pair<int, int> locate(Grading g, int s) {
  if (g == Grading::None) return {0, s};
  static const GradedIndex idx = physical_index(Grading::U1xU1, Direction::In);
  return {*idx.find(local_charge(s)), 0};
}

Matrix swap_operator() {
  Matrix p = Matrix::Zero(4, 4);
  for (int a1 = 0; a1 < 2; ++a1)
    for (int a2 = 0; a2 < 2; ++a2) p(a2 * 2 + a1, a1 * 2 + a2) = 1.0;
  return p;
}

namespace {

// Position of superket component (s1, s2) in the row-major vectorization
// of the 4x4 two-site matrix: row (a1 a2), column (b1 b2).
int vec_position(int s1, int s2) {
  const int row = ket_of(s1) * 2 + ket_of(s2);
  const int col = bra_of(s1) * 2 + bra_of(s2);
  return row * 4 + col;
}

}  // namespace

Matrix exchange_superop(const ModelParams& params) {
  params.validate();
  const Matrix p = swap_operator();
  const Matrix id = Matrix::Identity(4, 4);
  auto kron = [](const Matrix& a, const Matrix& b) {
    Matrix k(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < a.cols(); ++j) k.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return k;
  };
  const Complex i{0.0, 1.0};
  // Row-major vectorization: vec(A X B) = (A kron B^T) vec(X).
  const Matrix vec_gen = -i * params.J * (kron(p, id) - kron(id, p.transpose())) +
                         params.gamma * (kron(p, p.conjugate()) - kron(id, id));
  Matrix g(16, 16);
  for (int x = 0; x < 16; ++x)
    for (int y = 0; y < 16; ++y) g(x, y) = vec_gen(vec_position(x / 4, x % 4), vec_position(y / 4, y % 4));
  return g;
}

std::vector<TrotterStep> trotter_schedule(double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  const double t1 = dt / (4.0 - std::cbrt(4.0));
  const double t3 = dt - 4.0 * t1;
  const double sub[5] = {t1, t1, t3, t1, t1};
  std::vector<TrotterStep> out;
  for (double t : sub) {
    for (const TrotterStep& s : {TrotterStep{BondParity::Odd, t / 2}, TrotterStep{BondParity::Even, t},
                                 TrotterStep{BondParity::Odd, t / 2}}) {
      if (!out.empty() && out.back().parity == s.parity)
        out.back().tau += s.tau;
      else
        out.push_back(s);
    }
  }
  return out;
}

ChargeTensor make_gate(const Matrix& generator, double tau, Grading g) {
  if (!std::isfinite(tau)) throw NumericalError("gate time step is not finite");
  const Matrix e = symtensor::dense_expm(generator * tau);
  const GradedIndex out_leg = physical_index(g, Direction::In);
  const GradedIndex in_leg = physical_index(g, Direction::Out);
  DenseArray d({kLocalDim, kLocalDim, kLocalDim, kLocalDim});
  auto pos = [&](int s) {
    const auto [sec, off] = locate(g, s);
    return out_leg.offset(sec) + off;
  };
  for (int o1 = 0; o1 < 4; ++o1)
    for (int o2 = 0; o2 < 4; ++o2)
      for (int i1 = 0; i1 < 4; ++i1)
        for (int i2 = 0; i2 < 4; ++i2) {
          const int idx[4] = {pos(o1), pos(o2), pos(i1), pos(i2)};
          d.data[d.flat(idx)] = e(o1 * 4 + o2, i1 * 4 + i2);
        }
  return ChargeTensor::from_dense({out_leg, out_leg, in_leg, in_leg}, d, 1e-12);
}

LiouvillianGate::LiouvillianGate(const ModelParams& params, Grading g)
    : params_(params), grading_(g), generator_(exchange_superop(params)), schedule_(trotter_schedule(params.dt)) {
  for (const auto& s : schedule_)
    if (!cache_.contains(s.tau)) cache_.emplace(s.tau, make_gate(generator_, s.tau, g));
}

const ChargeTensor& LiouvillianGate::gate(double tau) const {
  auto it = cache_.find(tau);
  if (it == cache_.end()) throw std::out_of_range(fmt::format("no cached gate for tau={}", tau));
  return it->second;
}

std::vector<Complex> two_site_superket(const Matrix& op) {
  std::vector<Complex> v(16);
  for (int s1 = 0; s1 < 4; ++s1)
    for (int s2 = 0; s2 < 4; ++s2)
      v[s1 * 4 + s2] = op(ket_of(s1) * 2 + ket_of(s2), bra_of(s1) * 2 + bra_of(s2)) / 2.0;
  return v;
}

Matrix two_site_operator(const std::vector<Complex>& superket) {
  Matrix op(4, 4);
  for (int s1 = 0; s1 < 4; ++s1)
    for (int s2 = 0; s2 < 4; ++s2)
      op(ket_of(s1) * 2 + ket_of(s2), bra_of(s1) * 2 + bra_of(s2)) = superket[s1 * 4 + s2] * 2.0;
  return op;
}

}  // namespace opent::lindblad
