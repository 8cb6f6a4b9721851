#include <fmt/format.h>

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <unistd.h>

#include "cli/commands.hpp"
#include "cli/config.hpp"
#include "cli/io.hpp"
#include "opent/analysis/fits.hpp"
#include "opent/edoracle/edoracle.hpp"
#include "opent/observables/observables.hpp"

namespace {

namespace fs = std::filesystem;
namespace ed = opent::edoracle;
namespace obs = opent::observables;
namespace an = opent::analysis;
using opent::impdo::InitialState;
using obs::SpectrumSnapshot;

// bond -> snapshots in time order
using Trajectory = std::map<int, std::vector<SpectrumSnapshot>>;

struct Outcome {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Trajectory load_trajectory(const fs::path& dir) {
  using opent::cli::read_csv;
  Trajectory out;
  std::map<std::pair<int, double>, std::size_t> index;
  const auto o = read_csv(dir / opent::cli::kObservablesFile);
  const auto ot = o.column("time"), ob = o.column("bond"), otd = o.column("trace_dev"), ohd = o.column("herm_dev"),
             otw = o.column("trunc_weight"), ochi = o.column("chi_used");
  for (const auto& r : o.rows) {
    SpectrumSnapshot s;
    s.time = std::stod(r[ot]);
    s.bond = std::stoi(r[ob]);
    s.diag = {std::stod(r[otd]), std::stod(r[ohd]), std::stod(r[otw]), std::stoi(r[ochi])};
    index[{s.bond, s.time}] = out[s.bond].size();
    out[s.bond].push_back(std::move(s));
  }
  const auto sp = read_csv(dir / opent::cli::kSpectraFile);
  const auto st = sp.column("time"), sb = sp.column("bond"), sk = sp.column("qk"), sq = sp.column("qb"),
             sl = sp.column("lambda");
  for (const auto& r : sp.rows) {
    const int bond = std::stoi(r[sb]);
    auto& snap = out[bond][index.at({bond, std::stod(r[st])})];
    snap.entries.push_back({std::stoi(r[sk]), std::stoi(r[sq]), std::stod(r[sl])});
  }
  return out;
}

class Runs {
 public:
  Runs(fs::path work, bool cached) : work_(std::move(work)), cached_(cached) {}

  const Trajectory& get(const std::string& name, opent::cli::RunConfig cfg) {
    if (auto it = runs_.find(name); it != runs_.end()) return it->second;
    const fs::path dir = work_ / name;
    cfg.output_dir = dir.string();
    bool reuse = false;
    if (cached_ && fs::exists(dir / opent::cli::kRunFile)) {
      std::ifstream in(dir / opent::cli::kRunFile);
      const auto meta = nlohmann::json::parse(in);
      reuse = meta["status"] == "ok" && opent::cli::parse_config(meta["config"].dump()) == cfg;
    }
    const auto t0 = std::chrono::steady_clock::now();
    if (!reuse) {
      fmt::print("  running {} ...\n", name);
      std::fflush(stdout);
      opent::cli::EvolveArgs args;
      args.config = cfg;
      args.quiet = true;
      std::ostringstream log;
      opent::cli::cmd_evolve(args, log);
    }
    auto& traj = runs_[name] = load_trajectory(dir);
    fmt::print("  {} {} in {:.1f} s\n", name, reuse ? "loaded from cache" : "finished", seconds_since(t0));
    std::fflush(stdout);
    return traj;
  }

  const std::map<std::string, Trajectory>& all() const { return runs_; }

 private:
  fs::path work_;
  bool cached_;
  std::map<std::string, Trajectory> runs_;
};

opent::cli::RunConfig itebd(InitialState state, double gamma, double dt, int chi, double t_max, int observe_every = 1) {
  opent::cli::RunConfig c;
  c.model = {1.0, gamma, dt};
  c.state = state;
  c.chi_max = chi;
  c.eps_trunc = 1e-12;
  c.t_max = t_max;
  c.observe_every = observe_every;
  c.bonds = {0, 1};
  return c;
}

const SpectrumSnapshot& at(const std::vector<SpectrumSnapshot>& snaps, double t) {
  for (const auto& s : snaps)
    if (std::abs(s.time - t) < 1e-9) return s;
  throw std::runtime_error(fmt::format("no snapshot at t={}", t));
}

std::vector<an::Point> s_op_series(const std::vector<SpectrumSnapshot>& snaps) {
  std::vector<an::Point> out;
  for (const auto& s : snaps) out.push_back({s.time, obs::operator_entanglement(s)});
  return out;
}

double max_dp(const SpectrumSnapshot& a, const SpectrumSnapshot& b) {
  const auto pa = obs::sector_probabilities(a), pb = obs::sector_probabilities(b);
  std::set<int> keys;
  for (const auto& [q, p] : pa) keys.insert(q);
  for (const auto& [q, p] : pb) keys.insert(q);
  double d = 0.0;
  for (int q : keys) d = std::max(d, std::abs((pa.contains(q) ? pa.at(q) : 0.0) - (pb.contains(q) ? pb.at(q) : 0.0)));
  return d;
}

// Resolved entanglement of one sector (doubled label), or NaN when empty.
double resolved(const SpectrumSnapshot& s, int q) {
  const auto r = obs::resolved_entanglement(s);
  return r.contains(q) ? r.at(q) : std::nan("");
}

struct Acceptance {
  Runs& runs;
  std::vector<SpectrumSnapshot> oracle_snaps;  // exact snapshots produced along the way

  const Trajectory& singlet512() {
    return runs.get("singlet_chi512", itebd(InitialState::SingletPairs, 0.25, 0.5, 512, 60.0));
  }

  Outcome c1() {
    // Short trajectories of every initial state, plus everything computed for the other criteria.
    runs.get("short_singlet", itebd(InitialState::SingletPairs, 0.25, 0.5, 128, 5.0));
    runs.get("short_neel", itebd(InitialState::Neel, 0.5, 0.25, 128, 5.0));
    runs.get("short_triplet", itebd(InitialState::TripletPairs, 0.5, 0.5, 128, 5.0));
    double decomp = 0.0, norm = 0.0;
    std::size_t count = 0;
    auto check = [&](const SpectrumSnapshot& s) {
      for (auto label : {obs::SectorLabel::Ket, obs::SectorLabel::Bra, obs::SectorLabel::Adjoint})
        decomp = std::max(decomp, obs::check_decomposition(s, label));
      norm = std::max(norm, std::abs(obs::sum_squares(s) - 1.0));
      ++count;
    };
    for (const auto& [name, traj] : runs.all())
      for (const auto& [bond, snaps] : traj)
        for (const auto& s : snaps) check(s);
    for (const auto& s : oracle_snaps) check(s);
    return {1, "exact identities", decomp < 1e-12 && norm < 1e-10,
            fmt::format("{} snapshots ({} trajectories + {} exact); max decomposition residual {:.2e} (< 1e-12), "
                        "max |sum lambda^2 - 1| {:.2e} (< 1e-10)",
                        count, runs.all().size(), oracle_snaps.size(), decomp, norm)};
  }

  Outcome c2() {
    const auto& id = runs.get("identity", itebd(InitialState::Identity, 0.25, 0.5, 256, 20.0));
    double s_max = 0.0;
    for (const auto& [bond, snaps] : id)
      for (const auto& s : snaps) s_max = std::max(s_max, std::abs(obs::operator_entanglement(s)));

    const ed::DenseSuperket v0 = ed::initial_state(InitialState::SingletPairs, 2);
    const ed::Liouvillian l(2, {1.0, 0.25, 0.5});
    const auto v = ed::evolve_exact(v0, l, 10.0);
    const double dev = (ed::to_operator(v) - ed::to_operator(v0)).cwiseAbs().rowwise().sum().maxCoeff();
    oracle_snaps.push_back(ed::exact_operator_schmidt(v, 1, 10.0));
    return {2, "stationary states", s_max < 1e-8 && dev < 1e-10,
            fmt::format("identity MPDO to tJ=20: max S_op {:.2e} (< 1e-8); N=2 singlet at tJ=10: "
                        "||rho(t)-rho(0)||_inf {:.2e} (< 1e-10)",
                        s_max, dev)};
  }

  Outcome c3() {
    const auto& tr = runs.get("oracle_dt0.05", itebd(InitialState::SingletPairs, 0.25, 0.05, 256, 1.5));
    const ed::Liouvillian l(8, {1.0, 0.25, 0.05});
    ed::DenseSuperket v = ed::initial_state(InitialState::SingletPairs, 8);
    double t_prev = 0.0, ds = 0.0, dp = 0.0, t_ds = 0.0, t_first = -1.0;
    for (const auto& s : tr.at(1)) {
      if (s.time > t_prev) v = ed::evolve_exact(v, l, s.time - t_prev);
      t_prev = s.time;
      auto e = ed::exact_operator_schmidt(v, 4, s.time);
      e.bond = 1;
      const double d = std::abs(obs::operator_entanglement(e) - obs::operator_entanglement(s));
      if (d > ds) ds = d, t_ds = s.time;
      if (d >= 1e-3 && t_first < 0) t_first = s.time;
      dp = std::max(dp, max_dp(e, s));
      oracle_snaps.push_back(std::move(e));
    }
    return {3, "oracle equivalence", ds < 1e-3 && dp < 1e-3,
            fmt::format("N=8 middle cut vs iTEBD bond 1, tJ <= 1.5: max |dS_op| {:.2e} at tJ={} (< 1e-3), "
                        "max |dp_Sz| {:.2e} (< 1e-3); |dS_op| first reaches 1e-3 at tJ={}",
                        ds, t_ds, dp, t_first < 0 ? std::string("never") : fmt::format("{}", t_first))};
  }

  Outcome c4() {
    const ed::Liouvillian l(8, {1.0, 0.25, 0.1});
    const ed::DenseSuperket v0 = ed::initial_state(InitialState::SingletPairs, 8);
    const auto exact = ed::exact_operator_schmidt(ed::evolve_exact(v0, l, 1.0), 4, 1.0);
    const double s_exact = obs::operator_entanglement(exact);
    oracle_snaps.push_back(exact);
    double err[2], trot[2];
    const double dts[2] = {0.2, 0.1};
    for (int i = 0; i < 2; ++i) {
      const int steps = static_cast<int>(std::lround(1.0 / dts[i]));
      const auto& tr = runs.get(fmt::format("trotter_dt{}", dts[i]),
                                itebd(InitialState::SingletPairs, 0.25, dts[i], 256, 1.0, steps));
      err[i] = std::abs(obs::operator_entanglement(at(tr.at(1), 1.0)) - s_exact);
      const auto vt = ed::evolve_trotter(v0, {1.0, 0.25, dts[i]}, steps);
      oracle_snaps.push_back(ed::exact_operator_schmidt(vt, 4, 1.0));
      trot[i] = std::abs(obs::operator_entanglement(oracle_snaps.back()) - s_exact);
    }
    const double ratio = err[0] / err[1];
    return {4, "Trotter order", ratio >= 8.0 && ratio <= 32.0,
            fmt::format("iTEBD vs N=8 ED at tJ=1: |dS_op| {:.3e} (dt=0.2), {:.3e} (dt=0.1), ratio {:.2f} (in [8, 32]); "
                        "same-geometry check, Trotterized vs exact N=8: {:.3e}, {:.3e}, ratio {:.2f}",
                        err[0], err[1], ratio, trot[0], trot[1], trot[0] / trot[1])};
  }

  Outcome c5() {
    const auto& a = runs.get("singlet_dt0.5_chi256", itebd(InitialState::SingletPairs, 0.25, 0.5, 256, 30.0));
    const auto& b = runs.get("singlet_dt0.25_chi256", itebd(InitialState::SingletPairs, 0.25, 0.25, 256, 30.0, 2));
    double ds = 0.0, t_ds = 0.0;
    int bond_ds = 0;
    for (const auto& [bond, snaps] : a)
      for (const auto& s : snaps) {
        const double d = std::abs(obs::operator_entanglement(s) - obs::operator_entanglement(at(b.at(bond), s.time)));
        if (d > ds) ds = d, t_ds = s.time, bond_ds = bond;
      }
    return {5, "time-step convergence", ds < 5e-3,
            fmt::format("singlet chi=256, dt=0.5 vs dt=0.25, tJ <= 30: max |dS_op| {:.2e} (bond {}, tJ={}) (< 5e-3)",
                        ds, bond_ds, t_ds)};
  }

  Outcome c6() {
    const auto s = s_op_series(singlet512().at(1));
    // First time after which S_op drops by more than the noise level.
    const double noise = 1e-3;
    std::optional<std::size_t> peak;
    for (std::size_t k = 1; k + 1 < s.size() && !peak; ++k)
      if (s[k].y >= s[k - 1].y && s[k + 1].y < s[k].y - noise) peak = k;
    std::size_t maxima = 0;
    for (std::size_t k = 1; k + 1 < s.size(); ++k)
      if (s[k].t >= 0.5 && s[k].t <= 3.0 && s[k].y > s[k - 1].y && s[k].y > s[k + 1].y) ++maxima;
    const double s3 = obs::operator_entanglement(at(singlet512().at(1), 3.0));
    const double s_max = std::max_element(s.begin(), s.end(), [](auto x, auto y) { return x.y < y.y; })->y;
    const bool pass = peak && s[*peak].t >= 0.5 && s[*peak].t <= 3.0 && maxima == 1;
    std::string where = peak ? fmt::format("first drop after tJ={} (S_op {:.4f})", s[*peak].t, s[*peak].y)
                             : std::string("S_op never drops by more than 1e-3");
    return {6, "rise and fall", pass,
            fmt::format("singlet gamma=0.25 chi=512 bond 1: {}; local maxima in [0.5, 3]: {}; S_op(3)={:.4f}, "
                        "S_op(60)={:.4f}, max {:.4f}",
                        where, maxima, s3, s.back().y, s_max)};
  }

  Outcome c7() {
    const auto s = s_op_series(singlet512().at(1));
    const auto fit = an::fit_log_tangent(s, 40.0, 0.5);
    double worst = 1e300;
    double t_worst = 0.0;
    for (std::size_t k = 0; k + 1 < s.size(); ++k)
      if (s[k].t >= 30.0 - 1e-9 && s[k + 1].t <= 60.0 + 1e-9 && s[k + 1].y - s[k].y < worst)
        worst = s[k + 1].y - s[k].y, t_worst = s[k].t;
    const bool pass = fit.param("eta") > 0.0 && worst >= -1e-3;
    return {7, "late-time regrowth", pass,
            fmt::format("eta(t0=40) {:.4f} (> 0), S0 {:.4f}; smallest step increment on [30, 60] {:.2e} at tJ={} "
                        "(>= -1e-3); S_op(30)={:.4f}, S_op(60)={:.4f}",
                        fit.param("eta"), fit.param("S0"), worst, t_worst,
                        obs::operator_entanglement(at(singlet512().at(1), 30.0)), s.back().y)};
  }

  Outcome c8() {
    const auto& snaps = singlet512().at(1);
    const auto p40 = obs::sector_probabilities(at(snaps, 40.0));
    double asym = 0.0;
    for (const auto& [q, p] : p40) asym = std::max(asym, std::abs(p - (p40.contains(-q) ? p40.at(-q) : 0.0)));
    const auto g40 = an::fit_gaussian(p40);
    std::vector<an::Point> delta;
    for (const auto& s : snaps)
      if (s.time >= 20.0 - 1e-9 && s.time <= 60.0 + 1e-9)
        delta.push_back({s.time, an::fit_gaussian(obs::sector_probabilities(s)).param("delta")});
    const auto pl = an::fit_power_law(delta, 20.0, 60.0);
    const double alpha = pl.param("alpha");
    const bool pass = asym < 1e-4 && g40.residual < 0.01 && alpha >= 0.1 && alpha <= 0.4;
    return {8, "sector statistics", pass,
            fmt::format("tJ=40: max |p_Sz - p_-Sz| {:.2e} (< 1e-4), Gaussian delta {:.4f} residual {:.2e} (< 0.01); "
                        "alpha on [20, 60] {:.4f} (in [0.1, 0.4])",
                        asym, g40.param("delta"), g40.residual, alpha)};
  }

  Outcome c9() {
    std::size_t count = 0;
    double mult = 0.0, relation = 0.0, app_p = 0.0, app_s = 0.0, t_last = 0.0;
    bool unmatched = false;
    for (const auto& [bond, snaps] : singlet512())
      for (const auto& s : snaps) {
        if (!(s.diag.trunc_weight < 1e-10)) continue;
        const auto table = obs::detect_multiplets(s, obs::default_eps_mult(s.diag.trunc_weight));
        unmatched = unmatched || !table.unmatched.empty();
        mult = std::max(mult, table.residual);
        relation = std::max(relation, obs::spin_relation_residual(table, s));
        const auto r = obs::check_spin_sector_relations(table.p_s, table.s_op_s, s);
        app_p = std::max(app_p, r.probability);
        app_s = std::max(app_s, r.entanglement);
        t_last = std::max(t_last, s.time);
        ++count;
      }
    const bool pass = count > 0 && !unmatched && mult < 1e-6 && relation < 1e-8 && app_p < 1e-8 && app_s < 1e-8;
    return {9, "multiplet structure", pass,
            fmt::format("{} snapshots with trunc_weight < 1e-10 (tJ <= {}): multiplet residual {:.2e} (< 1e-6), "
                        "p_S relation {:.2e}, spin-sector probability {:.2e}, spin-sector entanglement {:.2e} (< 1e-8)",
                        count, t_last, mult, relation, app_p, app_s)};
  }

  Outcome c10() {
    const auto& neel = runs.get("neel_chi512", itebd(InitialState::Neel, 0.5, 0.5, 512, 40.0));
    const auto& trip = runs.get("triplet_chi512", itebd(InitialState::TripletPairs, 0.5, 0.5, 512, 40.0));
    const double eta_n = an::fit_log_tangent(s_op_series(neel.at(1)), 30.0, 0.5).param("eta");
    const double eta_t = an::fit_log_tangent(s_op_series(trip.at(1)), 30.0, 0.5).param("eta");
    double peak = 0.0, t_peak = 0.0;
    for (const auto& s : neel.at(1)) {
      const double v = resolved(s, 0);
      if (v > peak) peak = v, t_peak = s.time;
    }
    const double late = resolved(neel.at(1).back(), 0);
    const double t10 = resolved(at(trip.at(1), 10.0), 0), t40 = resolved(at(trip.at(1), 40.0), 0);
    const bool pass = eta_n > 0.0 && eta_t > 0.0 && late <= 0.5 * peak && t40 > t10;
    return {10, "symmetry-broken runs", pass,
            fmt::format("eta(t0=30): Neel {:.4f}, triplet {:.4f} (> 0); Neel S_op,Sz=0 peak {:.4f} at tJ={}, "
                        "at tJ=40 {:.4f} (<= half the peak); triplet S_op,Sz=0 {:.4f} at tJ=10, {:.4f} at tJ=40 "
                        "(must grow)",
                        eta_n, eta_t, peak, t_peak, late, t10, t40)};
  }

  Outcome c11() {
    double worst = 0.0;
    std::vector<std::string> parts;
    auto record = [&](const std::string& what, double got, double want) {
      const double d = std::abs(got - want);
      worst = std::max(worst, d);
      parts.push_back(fmt::format("{} {:.1e}", what, d));
    };
    std::vector<an::Point> log_series, pow_series, decay_series;
    for (int k = 1; k <= 120; ++k) {
      const double t = 0.5 * k;
      log_series.push_back({t, 0.3 * std::log2(t) + 1.0});
      pow_series.push_back({t, 2.0 * std::pow(t, 0.25)});
    }
    for (int k = 0; k <= 120; ++k) {
      const double t = 0.5 * k;
      decay_series.push_back({t, std::pow(2.4964 + 0.2554 * t, -1.1228)});
    }
    const auto lt = an::fit_log_tangent(log_series, 20.0, 0.5);
    record("eta", lt.param("eta"), 0.3);
    record("S0", lt.param("S0"), 1.0);
    std::map<int, double> pz, ps;
    for (int sz = -8; sz <= 8; ++sz) pz[2 * sz] = std::exp(-sz * sz / 8.0) / std::sqrt(8.0 * std::numbers::pi);
    for (int s = 0; s <= 15; ++s)
      ps[2 * s] = (2 * s + 1) / std::sqrt(18.0 * std::numbers::pi) *
                  (std::exp(-s * s / 18.0) - std::exp(-(s + 1.0) * (s + 1.0) / 18.0));
    record("gaussian delta", an::fit_gaussian(pz).param("delta"), 2.0);
    record("trial delta", an::fit_trial_ps(ps).param("delta"), 3.0);
    const auto pl = an::fit_power_law(pow_series, 20.0, 60.0);
    record("alpha", pl.param("alpha"), 0.25);
    record("prefactor", pl.param("prefactor"), 2.0);
    const auto dc = an::fit_decay(decay_series);
    record("a", dc.param("a"), 2.4964);
    record("b", dc.param("b"), 0.2554);
    record("c", dc.param("c"), 1.1228);
    std::string joined;
    for (const auto& p : parts) joined += (joined.empty() ? "" : ", ") + p;
    return {11, "fitter self-consistency", worst < 1e-4 && dc.ok,
            fmt::format("max parameter error {:.2e} (< 1e-4): {}", worst, joined)};
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria for the operator-entanglement simulator"};
  std::vector<int> only;
  std::string cache;
  app.add_option("criteria", only, "Criteria to run (default: all)")->check(CLI::Range(1, 11));
  app.add_option("--cache", cache, "Reuse finished trajectories from this directory (and store new ones there)");
  CLI11_PARSE(app, argc, argv);

  const fs::path work =
      cache.empty() ? fs::temp_directory_path() / fmt::format("opent_acceptance_{}", ::getpid()) : fs::path(cache);
  fs::create_directories(work);
  Runs runs(work, !cache.empty());
  Acceptance acc{runs, {}};
  std::set<int> selected(only.begin(), only.end());
  if (selected.empty())
    for (int i = 1; i <= 11; ++i) selected.insert(i);

  using Fn = Outcome (Acceptance::*)();
  const std::map<int, Fn> table = {{2, &Acceptance::c2},   {3, &Acceptance::c3},  {4, &Acceptance::c4},
                                   {5, &Acceptance::c5},   {6, &Acceptance::c6},  {7, &Acceptance::c7},
                                   {8, &Acceptance::c8},   {9, &Acceptance::c9},  {10, &Acceptance::c10},
                                   {11, &Acceptance::c11}, {1, &Acceptance::c1}};
  std::vector<Outcome> outcomes;
  const auto t0 = std::chrono::steady_clock::now();
  // Criterion 1 runs last so that it sees every trajectory.
  std::vector<int> order;
  for (int i = 2; i <= 11; ++i) order.push_back(i);
  order.push_back(1);
  for (int id : order) {
    if (!selected.contains(id)) continue;
    const auto tc = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = (acc.*table.at(id))();
    } catch (const std::exception& e) {
      o = {id, "error", false, fmt::format("exception: {}", e.what())};
    }
    fmt::print("criterion {} ({}): {} [{:.1f} s]\n  {}\n", o.id, o.name, o.pass ? "PASS" : "FAIL", seconds_since(tc),
               o.detail);
    std::fflush(stdout);
    outcomes.push_back(o);
  }
  std::sort(outcomes.begin(), outcomes.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  fmt::print("\nsummary ({:.0f} s)\n", seconds_since(t0));
  bool all = true;
  for (const auto& o : outcomes) {
    fmt::print("{} criterion {}: {}\n", o.pass ? "PASS" : "FAIL", o.id, o.name);
    all = all && o.pass;
  }
  if (cache.empty()) fs::remove_all(work);
  return all ? 0 : 1;
}
