#include "opent/observables/observables.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <stdexcept>

namespace opent::observables {

namespace {

double xlog2x(double x) { return x > 0.0 ? x * std::log2(x) : 0.0; }

std::map<int, std::vector<int>> entries_by_label(const SpectrumSnapshot& snap, SectorLabel label) {
  std::map<int, std::vector<int>> out;
  for (int i = 0; i < static_cast<int>(snap.entries.size()); ++i) out[label_of(snap.entries[i], label)].push_back(i);
  return out;
}

}  // namespace

void SpectrumSnapshot::canonicalize_order() {
  std::stable_sort(entries.begin(), entries.end(),
                   [](const SpectrumEntry& a, const SpectrumEntry& b) { return a.lambda > b.lambda; });
  diag.chi_used = static_cast<int>(entries.size());
}

int label_of(const SpectrumEntry& e, SectorLabel label) {
  switch (label) {
    case SectorLabel::Ket:
      return e.qk;
    case SectorLabel::Bra:
      return e.qb;
    case SectorLabel::Adjoint:
      return e.qk - e.qb;
  }
  return e.qk;
}

double sum_squares(const SpectrumSnapshot& snap) {
  double s = 0.0;
  for (const auto& e : snap.entries) s += e.lambda * e.lambda;
  return s;
}

double operator_entanglement(const SpectrumSnapshot& snap) {
  const double n = sum_squares(snap);
  if (std::abs(n - 1.0) > 1e-8)
    throw std::invalid_argument(fmt::format("spectrum is not normalized (sum of squares {})", n));
  double s = 0.0;
  for (const auto& e : snap.entries) s -= xlog2x(e.lambda * e.lambda);
  return s;
}

std::map<int, double> sector_probabilities(const SpectrumSnapshot& snap, SectorLabel label) {
  std::map<int, double> p;
  for (const auto& e : snap.entries) p[label_of(e, label)] += e.lambda * e.lambda;
  return p;
}

std::map<int, double> resolved_entanglement(const SpectrumSnapshot& snap, SectorLabel label) {
  const auto p = sector_probabilities(snap, label);
  std::map<int, double> out;
  for (const auto& e : snap.entries) {
    const int q = label_of(e, label);
    const double pq = p.at(q);
    if (!(pq > 0.0)) continue;
    out[q] -= xlog2x(e.lambda * e.lambda / pq);
  }
  return out;
}

double shannon(const std::map<int, double>& probs) {
  double s = 0.0;
  for (const auto& [q, p] : probs) s -= xlog2x(p);
  return s;
}

double check_decomposition(const SpectrumSnapshot& snap, SectorLabel label) {
  const auto p = sector_probabilities(snap, label);
  const auto r = resolved_entanglement(snap, label);
  double assembled = shannon(p);
  for (const auto& [q, s] : r) assembled += p.at(q) * s;
  return std::abs(operator_entanglement(snap) - assembled);
}

double conjugation_asymmetry(const SpectrumSnapshot& snap) {
  std::map<std::pair<int, int>, std::vector<double>> sectors;
  for (const auto& e : snap.entries) sectors[{e.qk, e.qb}].push_back(e.lambda);
  for (auto& [c, v] : sectors) std::sort(v.rbegin(), v.rend());
  double worst = 0.0;
  for (const auto& [c, v] : sectors) {
    auto it = sectors.find({c.second, c.first});
    const std::vector<double> empty;
    const auto& w = it == sectors.end() ? empty : it->second;
    for (std::size_t i = 0; i < std::max(v.size(), w.size()); ++i) {
      const double a = i < v.size() ? v[i] : 0.0;
      const double b = i < w.size() ? w[i] : 0.0;
      worst = std::max(worst, std::abs(a - b));
    }
  }
  return worst;
}

double default_eps_mult(double trunc_weight) { return std::max(1e-6, 10.0 * std::sqrt(std::max(trunc_weight, 0.0))); }

MultipletTable detect_multiplets(const SpectrumSnapshot& snap, double eps_mult, SectorLabel label) {
  auto groups = entries_by_label(snap, label);
  MultipletTable table;
  std::map<int, std::vector<bool>> used;
  for (const auto& [q, ids] : groups) used[q].assign(ids.size(), false);

  int top = 0;
  for (const auto& [q, ids] : groups) top = std::max(top, std::abs(q));

  for (int m = top; m >= 0; m -= 1) {
    auto seeds = groups.find(m);
    if (seeds == groups.end()) continue;
    for (std::size_t k = 0; k < seeds->second.size(); ++k) {
      if (used[m][k]) continue;
      used[m][k] = true;
      const int seed = seeds->second[k];
      const double ref = snap.entries[seed].lambda;
      Multiplet mult{m, 0.0, {seed}};
      double worst = 0.0;
      bool complete = true;
      std::vector<std::pair<int, std::size_t>> taken;
      for (int q = m - 2; q >= -m; q -= 2) {
        auto g = groups.find(q);
        int best = -1;
        double best_dev = std::numeric_limits<double>::infinity();
        if (g != groups.end()) {
          for (std::size_t j = 0; j < g->second.size(); ++j) {
            if (used[q][j]) continue;
            const double dev = std::abs(snap.entries[g->second[j]].lambda - ref) / ref;
            if (dev < best_dev) {
              best_dev = dev;
              best = static_cast<int>(j);
            }
          }
        }
        if (best < 0 || best_dev > eps_mult) {
          complete = false;
          break;
        }
        used[q][best] = true;
        taken.emplace_back(q, best);
        mult.members.push_back(g->second[best]);
        worst = std::max(worst, best_dev);
      }
      if (!complete) {
        // Release partners so they can seed or join other multiplets.
        for (const auto& [q, j] : taken) used[q][j] = false;
        table.unmatched.push_back(seed);
        continue;
      }
      double sum = 0.0;
      for (int id : mult.members) sum += snap.entries[id].lambda * snap.entries[id].lambda;
      mult.lambda_sq = sum / (m + 1);
      table.residual = std::max(table.residual, worst);
      table.p_s[m] += sum;
      table.multiplets.push_back(std::move(mult));
    }
  }
  // Negative labels never seed; anything left there is unmatched.
  for (const auto& [q, ids] : groups)
    for (std::size_t j = 0; j < ids.size(); ++j)
      if (q < 0 && !used[q][j]) table.unmatched.push_back(ids[j]);
  if (!table.unmatched.empty()) table.residual = std::numeric_limits<double>::infinity();

  for (const auto& mult : table.multiplets) {
    const double ps = table.p_s.at(mult.two_s);
    if (!(ps > 0.0)) continue;
    table.s_op_s[mult.two_s] -= (mult.two_s + 1) * xlog2x(mult.lambda_sq / ps);
  }
  return table;
}

double spin_relation_residual(const MultipletTable& table, const SpectrumSnapshot& snap, SectorLabel label) {
  const auto p = sector_probabilities(snap, label);
  auto get = [](const std::map<int, double>& m, int k) {
    auto it = m.find(k);
    return it == m.end() ? 0.0 : it->second;
  };
  int top = 0;
  for (const auto& [q, v] : p) top = std::max(top, std::abs(q));
  for (const auto& [s, v] : table.p_s) top = std::max(top, s);
  double worst = 0.0;
  for (int s = top; s >= 0; --s) {
    if (!p.contains(s) && !table.p_s.contains(s)) continue;
    const double rebuilt = (s + 1) * (get(p, s) - get(p, s + 2));
    worst = std::max(worst, std::abs(get(table.p_s, s) - rebuilt));
  }
  return worst;
}

SpinSectorResiduals check_spin_sector_relations(const std::map<int, double>& p_s, const std::map<int, double>& s_op_s,
                                                const SpectrumSnapshot& snap, SectorLabel label) {
  const auto p = sector_probabilities(snap, label);
  const auto r = resolved_entanglement(snap, label);
  SpinSectorResiduals res;
  for (const auto& [z, pz] : p) {
    double rebuilt_p = 0.0, acc = 0.0;
    for (const auto& [s, ps] : p_s) {
      if (s < std::abs(z) || (s - z) % 2 != 0 || !(ps > 0.0)) continue;
      rebuilt_p += ps / (s + 1);
      const auto it = s_op_s.find(s);
      const double sops = it == s_op_s.end() ? 0.0 : it->second;
      acc += ps * (sops - std::log2(ps)) / (s + 1);
    }
    res.probability = std::max(res.probability, std::abs(rebuilt_p - pz));
    if (pz > 0.0) {
      const double rebuilt_s = acc / pz + std::log2(pz);
      res.entanglement = std::max(res.entanglement, std::abs(rebuilt_s - r.at(z)));
    }
  }
  return res;
}

std::vector<std::map<int, double>> delta_resolved(const std::vector<std::map<int, double>>& series) {
  std::vector<std::map<int, double>> out;
  out.reserve(series.size());
  for (std::size_t t = 0; t < series.size(); ++t) {
    auto zero = series[t].find(0);
    if (zero == series[t].end())
      throw std::invalid_argument(fmt::format("time slice {} has no Sz = 0 sector", t));
    std::map<int, double> d;
    for (const auto& [q, s] : series[t]) d[q] = s - zero->second;
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace opent::observables
